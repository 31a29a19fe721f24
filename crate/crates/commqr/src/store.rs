//! Slow memory made of fixed-size matrix blocks, with a transfer log.
//!
//! On-disk layout: a little-endian `u64` header (`magic, m, n, block_rows`,
//! plus `pc` for 2-D stores) followed by every block slot in order. A slot
//! holds `block_rows × block_cols` column-major `f64` values and, for spill
//! streams of Householder factors, a trailer of `block_cols` τ values.
//! 2-D slots are ordered block-column by block-column.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::sim::TransferCounters;

pub const MAGIC: u64 = 0x5153_5152_424C_4B31;
pub const MAGIC_2D: u64 = 0x5153_5152_424C_4B32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    Memory,
    File(PathBuf),
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "memory" {
            return Ok(Backend::Memory);
        }
        match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(Backend::File(PathBuf::from(p))),
            _ => Err(Error::InvalidArgument(format!(
                "backend must be `memory` or `file:<path>`, got `{s}`"
            ))),
        }
    }
}

impl Backend {
    /// Backend for a companion stream next to this one.
    pub fn sibling(&self, suffix: &str) -> Backend {
        match self {
            Backend::Memory => Backend::Memory,
            Backend::File(p) => {
                let mut s = p.clone().into_os_string();
                s.push(suffix);
                Backend::File(PathBuf::from(s))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Transfer {
    pub direction: Direction,
    pub words: u64,
}

/// Which entries of a block slot a transfer moves. Rows are counted from
/// `row0`; the triangular shapes start column `j` at row `row0 + j`
/// (diagonal included) or `row0 + j + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Full { row0: usize },
    LowerWithDiag { row0: usize },
    StrictlyLower { row0: usize },
}

impl Region {
    pub const ALL: Region = Region::Full { row0: 0 };

    fn row0(&self) -> usize {
        match *self {
            Region::Full { row0 }
            | Region::LowerWithDiag { row0 }
            | Region::StrictlyLower { row0 } => row0,
        }
    }

    fn first_row(&self, j: usize) -> usize {
        match *self {
            Region::Full { row0 } => row0,
            Region::LowerWithDiag { row0 } => row0 + j,
            Region::StrictlyLower { row0 } => row0 + j + 1,
        }
    }

    /// Words moved for an `rows × cols` slot.
    pub fn words(&self, rows: usize, cols: usize) -> usize {
        (0..cols)
            .map(|j| rows.saturating_sub(self.first_row(j)))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub magic: u64,
    pub m: u64,
    pub n: u64,
    pub block_rows: u64,
    /// Block columns, present only in 2-D stores.
    pub pc: Option<u64>,
}

impl Header {
    pub fn len(&self) -> usize {
        if self.pc.is_some() {
            40
        } else {
            32
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn decode(bytes: &[u8]) -> Result<Header> {
        let word = |k: usize| -> Result<u64> {
            bytes
                .get(8 * k..8 * k + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| Error::Parse("truncated header".into()))
        };
        let magic = word(0)?;
        let pc = match magic {
            MAGIC => None,
            MAGIC_2D => Some(word(4)?),
            other => return Err(Error::Parse(format!("bad magic {other:#018x}"))),
        };
        Ok(Header {
            magic,
            m: word(1)?,
            n: word(2)?,
            block_rows: word(3)?,
            pc,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        let mut words = vec![self.magic, self.m, self.n, self.block_rows];
        words.extend(self.pc);
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    m: usize,
    n: usize,
    block_rows: usize,
    block_cols: usize,
    nbr: usize,
    nbc: usize,
    trailer: usize,
}

impl Layout {
    fn new(m: usize, n: usize, block_rows: usize, nbc: usize, with_tau: bool) -> Result<Layout> {
        if m == 0 || n == 0 || block_rows == 0 || nbc == 0 {
            return Err(Error::InvalidArgument(format!(
                "store dimensions must be positive (m={m}, n={n}, block_rows={block_rows}, pc={nbc})"
            )));
        }
        if n % nbc != 0 {
            return Err(Error::InvalidArgument(format!(
                "{nbc} block columns do not divide n={n}"
            )));
        }
        let block_cols = n / nbc;
        let nbr = m.div_ceil(block_rows);
        let l = Layout {
            m,
            n,
            block_rows,
            block_cols,
            nbr,
            nbc,
            trailer: if with_tau { block_cols } else { 0 },
        };
        l.total_words()
            .ok_or_else(|| Error::InvalidArgument("store size overflows".into()))?;
        Ok(l)
    }

    fn slot_words(&self) -> Option<usize> {
        self.block_rows
            .checked_mul(self.block_cols)?
            .checked_add(self.trailer)
    }

    fn total_words(&self) -> Option<usize> {
        self.slot_words()?
            .checked_mul(self.nbr)?
            .checked_mul(self.nbc)?
            .checked_mul(8)
            .map(|b| b / 8)
    }

    fn from_header(h: &Header, body_bytes: u64) -> Result<Layout> {
        let conv = |v: u64, what: &str| {
            usize::try_from(v).map_err(|_| Error::Parse(format!("{what} too large")))
        };
        let pc = conv(h.pc.unwrap_or(1), "pc")?;
        let plain = Layout::new(
            conv(h.m, "m")?,
            conv(h.n, "n")?,
            conv(h.block_rows, "block_rows")?,
            pc,
            false,
        )
        .map_err(|e| Error::Parse(e.to_string()))?;
        let spill = Layout {
            trailer: plain.block_cols,
            ..plain
        };
        for l in [plain, spill] {
            if let Some(w) = l.total_words() {
                if (w as u64).checked_mul(8) == Some(body_bytes) {
                    return Ok(l);
                }
            }
        }
        Err(Error::Parse(format!(
            "body of {body_bytes} bytes does not match a {}x{} store with {}-row blocks",
            h.m, h.n, h.block_rows
        )))
    }
}

enum Storage {
    Memory(Vec<f64>),
    File { file: File, path: PathBuf },
}

pub struct BlockStore {
    layout: Layout,
    header_len: usize,
    storage: Storage,
    log: Vec<Transfer>,
}

impl std::fmt::Debug for BlockStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockStore")
            .field("m", &self.layout.m)
            .field("n", &self.layout.n)
            .field("block_rows", &self.layout.block_rows)
            .field("block_cols", &self.layout.block_cols)
            .field("transfers", &self.log.len())
            .finish()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

impl BlockStore {
    fn header(&self) -> Header {
        let l = &self.layout;
        let two_d = self.header_len == 40;
        Header {
            magic: if two_d { MAGIC_2D } else { MAGIC },
            m: l.m as u64,
            n: l.n as u64,
            block_rows: l.block_rows as u64,
            pc: two_d.then_some(l.nbc as u64),
        }
    }

    fn allocate(layout: Layout, two_d: bool, backend: &Backend) -> Result<BlockStore> {
        let header_len = if two_d { 40 } else { 32 };
        let words = layout.total_words().expect("checked at layout creation");
        let storage = match backend {
            Backend::Memory => Storage::Memory(vec![0.0; words]),
            Backend::File(path) => {
                let file = OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create(true)
                    .truncate(true)
                    .open(path)
                    .map_err(io_err(path))?;
                file.set_len((header_len + 8 * words) as u64)
                    .map_err(io_err(path))?;
                Storage::File {
                    file,
                    path: path.clone(),
                }
            }
        };
        let mut s = BlockStore {
            layout,
            header_len,
            storage,
            log: Vec::new(),
        };
        let header = s.header().encode();
        if let Storage::File { file, path } = &mut s.storage {
            file.seek(SeekFrom::Start(0)).map_err(io_err(path))?;
            file.write_all(&header).map_err(io_err(path))?;
        }
        Ok(s)
    }

    /// Zero-filled store; `with_tau` reserves a τ trailer per block.
    pub fn empty(
        m: usize,
        n: usize,
        block_rows: usize,
        with_tau: bool,
        backend: &Backend,
    ) -> Result<BlockStore> {
        let layout = Layout::new(m, n, block_rows, 1, with_tau)?;
        Self::allocate(layout, false, backend)
    }

    /// Zero-filled 2-D store with `pc` block columns.
    pub fn empty_2d(
        m: usize,
        n: usize,
        block_rows: usize,
        pc: usize,
        with_tau: bool,
        backend: &Backend,
    ) -> Result<BlockStore> {
        let layout = Layout::new(m, n, block_rows, pc, with_tau)?;
        Self::allocate(layout, true, backend)
    }

    /// Row-block store of `a`; the last block is zero-padded if needed.
    pub fn create(a: &DenseMatrix, block_rows: usize, backend: &Backend) -> Result<BlockStore> {
        let layout = Layout::new(a.rows(), a.cols(), block_rows, 1, false)?;
        let mut s = Self::allocate(layout, false, backend)?;
        s.fill_from(a)?;
        Ok(s)
    }

    /// Store of `block_rows × (n/pc)` blocks; `block_rows` must divide `m`.
    pub fn create_2d(
        a: &DenseMatrix,
        block_rows: usize,
        pc: usize,
        backend: &Backend,
    ) -> Result<BlockStore> {
        let layout = Layout::new(a.rows(), a.cols(), block_rows, pc, false)?;
        if a.rows() % block_rows != 0 {
            return Err(Error::InvalidArgument(format!(
                "block_rows={block_rows} does not divide m={}",
                a.rows()
            )));
        }
        let mut s = Self::allocate(layout, true, backend)?;
        s.fill_from(a)?;
        Ok(s)
    }

    fn fill_from(&mut self, a: &DenseMatrix) -> Result<()> {
        let l = self.layout;
        for bj in 0..l.nbc {
            for bi in 0..l.nbr {
                let b = DenseMatrix::from_fn(l.block_rows, l.block_cols, |i, j| {
                    let r = bi * l.block_rows + i;
                    if r < l.m {
                        a[(r, bj * l.block_cols + j)]
                    } else {
                        0.0
                    }
                });
                self.raw_write(bi, bj, Region::ALL, b.data(), None)?;
            }
        }
        Ok(())
    }

    /// Open a store file written by this module.
    pub fn open(path: &Path) -> Result<BlockStore> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        let len = file.metadata().map_err(io_err(path))?.len();
        let mut head = vec![0u8; 40.min(len as usize)];
        file.read_exact(&mut head).map_err(io_err(path))?;
        let header = Header::decode(&head)?;
        let layout = Layout::from_header(&header, len.saturating_sub(header.len() as u64))?;
        Ok(BlockStore {
            layout,
            header_len: header.len(),
            storage: Storage::File {
                file,
                path: path.to_path_buf(),
            },
            log: Vec::new(),
        })
    }

    /// Decode a complete store image held in memory.
    pub fn from_bytes(bytes: &[u8]) -> Result<BlockStore> {
        let header = Header::decode(bytes)?;
        let body = &bytes[header.len().min(bytes.len())..];
        let layout = Layout::from_header(&header, body.len() as u64)?;
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(BlockStore {
            layout,
            header_len: header.len(),
            storage: Storage::Memory(data),
            log: Vec::new(),
        })
    }

    /// Complete store image in the file format.
    pub fn to_bytes(&mut self) -> Result<Vec<u8>> {
        let mut out = self.header().encode();
        let words = self.layout.total_words().expect("checked");
        match &mut self.storage {
            Storage::Memory(v) => {
                for x in v.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Storage::File { file, path } => {
                let mut body = vec![0u8; 8 * words];
                file.seek(SeekFrom::Start(self.header_len as u64))
                    .map_err(io_err(path))?;
                file.read_exact(&mut body).map_err(io_err(path))?;
                out.extend_from_slice(&body);
            }
        }
        Ok(out)
    }

    pub fn m(&self) -> usize {
        self.layout.m
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn block_rows(&self) -> usize {
        self.layout.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.layout.block_cols
    }

    /// Number of block rows, `⌈m / block_rows⌉`.
    pub fn block_count(&self) -> usize {
        self.layout.nbr
    }

    pub fn block_col_count(&self) -> usize {
        self.layout.nbc
    }

    /// Zero rows appended to the last block row.
    pub fn padding(&self) -> usize {
        self.layout.nbr * self.layout.block_rows - self.layout.m
    }

    pub fn has_tau(&self) -> bool {
        self.layout.trailer > 0
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.storage {
            Storage::Memory(_) => None,
            Storage::File { path, .. } => Some(path),
        }
    }

    pub fn log(&self) -> &[Transfer] {
        &self.log
    }

    pub fn counters(&self) -> TransferCounters {
        let mut c = TransferCounters::default();
        for t in &self.log {
            c.add(t.words);
        }
        c
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    fn slot_offset(&self, bi: usize, bj: usize) -> Result<usize> {
        let l = &self.layout;
        if bi >= l.nbr || bj >= l.nbc {
            return Err(Error::InvalidArgument(format!(
                "block ({bi},{bj}) out of range for a {}x{} block grid",
                l.nbr, l.nbc
            )));
        }
        Ok((bj * l.nbr + bi) * l.slot_words().expect("checked"))
    }

    /// Move the region's entries of slot `(bi, bj)` into `buf` (full
    /// `block_rows × block_cols` column-major) and the trailer into `tau`.
    fn raw_read(
        &mut self,
        bi: usize,
        bj: usize,
        region: Region,
        buf: &mut [f64],
        tau: Option<&mut [f64]>,
    ) -> Result<()> {
        let base = self.slot_offset(bi, bj)?;
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let hl = self.header_len;
        let mut segs: Vec<(usize, usize, usize)> = (0..bc)
            .filter_map(|j| {
                let s = region.first_row(j).min(br);
                (s < br).then_some((base + j * br + s, j * br + s, br - s))
            })
            .collect();
        coalesce(&mut segs);
        match &mut self.storage {
            Storage::Memory(v) => {
                for (src, dst, len) in segs {
                    buf[dst..dst + len].copy_from_slice(&v[src..src + len]);
                }
                if let Some(t) = tau {
                    let o = base + br * bc;
                    t.copy_from_slice(&v[o..o + bc]);
                }
            }
            Storage::File { file, path } => {
                let mut bytes = Vec::new();
                for (src, dst, len) in segs {
                    bytes.resize(8 * len, 0);
                    file.seek(SeekFrom::Start((hl + 8 * src) as u64))
                        .map_err(io_err(path))?;
                    file.read_exact(&mut bytes).map_err(io_err(path))?;
                    decode_into(&bytes, &mut buf[dst..dst + len]);
                }
                if let Some(t) = tau {
                    bytes.resize(8 * bc, 0);
                    file.seek(SeekFrom::Start((hl + 8 * (base + br * bc)) as u64))
                        .map_err(io_err(path))?;
                    file.read_exact(&mut bytes).map_err(io_err(path))?;
                    decode_into(&bytes, t);
                }
            }
        }
        Ok(())
    }

    fn raw_write(
        &mut self,
        bi: usize,
        bj: usize,
        region: Region,
        buf: &[f64],
        tau: Option<&[f64]>,
    ) -> Result<()> {
        let base = self.slot_offset(bi, bj)?;
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let hl = self.header_len;
        let mut segs: Vec<(usize, usize, usize)> = (0..bc)
            .filter_map(|j| {
                let s = region.first_row(j).min(br);
                (s < br).then_some((base + j * br + s, j * br + s, br - s))
            })
            .collect();
        coalesce(&mut segs);
        match &mut self.storage {
            Storage::Memory(v) => {
                for (dst, src, len) in segs {
                    v[dst..dst + len].copy_from_slice(&buf[src..src + len]);
                }
                if let Some(t) = tau {
                    let o = base + br * bc;
                    v[o..o + bc].copy_from_slice(t);
                }
            }
            Storage::File { file, path } => {
                for (dst, src, len) in segs {
                    file.seek(SeekFrom::Start((hl + 8 * dst) as u64))
                        .map_err(io_err(path))?;
                    file.write_all(&encode(&buf[src..src + len]))
                        .map_err(io_err(path))?;
                }
                if let Some(t) = tau {
                    file.seek(SeekFrom::Start((hl + 8 * (base + br * bc)) as u64))
                        .map_err(io_err(path))?;
                    file.write_all(&encode(t)).map_err(io_err(path))?;
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, direction: Direction, words: usize) {
        self.log.push(Transfer {
            direction,
            words: words as u64,
        });
    }

    /// Region of block `(bi, bj)` as a `(block_rows − row0) × block_cols`
    /// matrix; entries outside the region read as zero. One logged transfer.
    pub fn read_region(&mut self, bi: usize, bj: usize, region: Region) -> Result<DenseMatrix> {
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let mut buf = vec![0.0; br * bc];
        self.raw_read(bi, bj, region, &mut buf, None)?;
        self.record(Direction::Read, region.words(br, bc));
        let full = DenseMatrix::from_col_major(br, bc, buf)?;
        let r0 = region.row0();
        Ok(full.submatrix(r0, 0, br - r0, bc))
    }

    pub fn write_region(
        &mut self,
        bi: usize,
        bj: usize,
        region: Region,
        b: &DenseMatrix,
    ) -> Result<()> {
        let full = self.expand(region, b)?;
        self.raw_write(bi, bj, region, full.data(), None)?;
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        self.record(Direction::Write, region.words(br, bc));
        Ok(())
    }

    fn expand(&self, region: Region, b: &DenseMatrix) -> Result<DenseMatrix> {
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let r0 = region.row0();
        if r0 >= br || b.shape() != (br - r0, bc) {
            return Err(Error::Shape(format!(
                "block region starting at row {r0} needs {}x{bc}, got {:?}",
                br.saturating_sub(r0),
                b.shape()
            )));
        }
        let mut full = DenseMatrix::zeros(br, bc);
        full.set_submatrix(r0, 0, b);
        Ok(full)
    }

    pub fn read_block(&mut self, i: usize) -> Result<DenseMatrix> {
        self.read_region(i, 0, Region::ALL)
    }

    pub fn write_block(&mut self, i: usize, b: &DenseMatrix) -> Result<()> {
        self.write_region(i, 0, Region::ALL, b)
    }

    /// Householder block and its τ trailer, as one logged transfer.
    pub fn read_factor(
        &mut self,
        bi: usize,
        bj: usize,
        region: Region,
    ) -> Result<(DenseMatrix, Vec<f64>)> {
        if !self.has_tau() {
            return Err(Error::InvalidArgument("store has no τ trailer".into()));
        }
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let mut buf = vec![0.0; br * bc];
        let mut tau = vec![0.0; bc];
        self.raw_read(bi, bj, region, &mut buf, Some(&mut tau))?;
        self.record(Direction::Read, region.words(br, bc) + bc);
        let full = DenseMatrix::from_col_major(br, bc, buf)?;
        let r0 = region.row0();
        Ok((full.submatrix(r0, 0, br - r0, bc), tau))
    }

    pub fn write_factor(
        &mut self,
        bi: usize,
        bj: usize,
        region: Region,
        y: &DenseMatrix,
        tau: &[f64],
    ) -> Result<()> {
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        if !self.has_tau() || tau.len() != bc {
            return Err(Error::Shape(format!(
                "τ trailer of {} values for {bc}-column blocks",
                tau.len()
            )));
        }
        let full = self.expand(region, y)?;
        self.raw_write(bi, bj, region, full.data(), Some(tau))?;
        self.record(Direction::Write, region.words(br, bc) + bc);
        Ok(())
    }

    /// Unlogged read of a whole slot (for verification and result assembly).
    pub fn peek(&mut self, bi: usize, bj: usize) -> Result<DenseMatrix> {
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let mut buf = vec![0.0; br * bc];
        self.raw_read(bi, bj, Region::ALL, &mut buf, None)?;
        DenseMatrix::from_col_major(br, bc, buf)
    }

    /// Unlogged read of a whole slot and its τ trailer.
    pub fn peek_factor(&mut self, bi: usize, bj: usize) -> Result<(DenseMatrix, Vec<f64>)> {
        if !self.has_tau() {
            return Err(Error::InvalidArgument("store has no τ trailer".into()));
        }
        let (br, bc) = (self.layout.block_rows, self.layout.block_cols);
        let mut buf = vec![0.0; br * bc];
        let mut tau = vec![0.0; bc];
        self.raw_read(bi, bj, Region::ALL, &mut buf, Some(&mut tau))?;
        Ok((DenseMatrix::from_col_major(br, bc, buf)?, tau))
    }

    /// Unlogged copy of the stored matrix without padding rows.
    pub fn to_matrix(&mut self) -> Result<DenseMatrix> {
        let l = self.layout;
        let mut out = DenseMatrix::zeros(l.m, l.n);
        for bj in 0..l.nbc {
            for bi in 0..l.nbr {
                let b = self.peek(bi, bj)?;
                let rows = l.block_rows.min(l.m - bi * l.block_rows);
                out.set_submatrix(
                    bi * l.block_rows,
                    bj * l.block_cols,
                    &b.submatrix(0, 0, rows, l.block_cols),
                );
            }
        }
        Ok(out)
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Storage::File { file, path } = &mut self.storage {
            file.flush().map_err(io_err(path))?;
        }
        Ok(())
    }
}

fn coalesce(segs: &mut Vec<(usize, usize, usize)>) {
    let mut out: Vec<(usize, usize, usize)> = Vec::with_capacity(segs.len());
    for &(a, b, len) in segs.iter() {
        match out.last_mut() {
            Some(last) if last.0 + last.2 == a && last.1 + last.2 == b => last.2 += len,
            _ => out.push((a, b, len)),
        }
    }
    *segs = out;
}

fn encode(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * v.len());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_into(bytes: &[u8], out: &mut [f64]) {
    for (o, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
        *o = f64::from_le_bytes(c.try_into().expect("8 bytes"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::gaussian;

    #[test]
    fn even_split_has_no_log() {
        let a = gaussian(8, 2, 1);
        let s = BlockStore::create(&a, 4, &Backend::Memory).unwrap();
        assert_eq!(s.block_count(), 2);
        assert_eq!(s.padding(), 0);
        assert!(s.log().is_empty());
    }

    #[test]
    fn ragged_split_is_padded() {
        let a = gaussian(6, 2, 1);
        let mut s = BlockStore::create(&a, 4, &Backend::Memory).unwrap();
        assert_eq!(s.block_count(), 2);
        assert_eq!(s.padding(), 2);
        let last = s.read_block(1).unwrap();
        assert_eq!(last[(2, 0)], 0.0);
        assert_eq!(last[(3, 1)], 0.0);
        assert_eq!(last[(0, 0)], a[(4, 0)]);
    }

    #[test]
    fn counting() {
        let a = gaussian(12, 3, 2);
        let mut s = BlockStore::create(&a, 4, &Backend::Memory).unwrap();
        let x = s.read_block(0).unwrap();
        let y = s.read_block(0).unwrap();
        assert_eq!(x, y);
        s.read_block(2).unwrap();
        let c = s.counters();
        assert_eq!((c.messages, c.words), (3, 36));
        assert!(s.read_block(3).is_err());
    }

    #[test]
    fn write_then_read() {
        let a = gaussian(8, 2, 3);
        let mut s = BlockStore::create(&a, 4, &Backend::Memory).unwrap();
        let b = gaussian(4, 2, 4);
        s.write_block(1, &b).unwrap();
        assert_eq!(s.read_block(1).unwrap(), b);
        assert!(s.write_block(1, &gaussian(3, 2, 4)).is_err());
    }

    #[test]
    fn region_words() {
        assert_eq!(Region::ALL.words(5, 3), 15);
        assert_eq!(Region::LowerWithDiag { row0: 0 }.words(5, 3), 5 + 4 + 3);
        assert_eq!(Region::StrictlyLower { row0: 0 }.words(5, 3), 4 + 3 + 2);
        assert_eq!(Region::Full { row0: 2 }.words(5, 3), 9);
    }

    #[test]
    fn bytes_roundtrip() {
        let a = gaussian(10, 4, 5);
        let mut s = BlockStore::create_2d(&a, 5, 2, &Backend::Memory).unwrap();
        let bytes = s.to_bytes().unwrap();
        let mut t = BlockStore::from_bytes(&bytes).unwrap();
        assert_eq!(t.to_matrix().unwrap(), a);
        assert!(BlockStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(BlockStore::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn backend_parse() {
        assert_eq!("memory".parse::<Backend>().unwrap(), Backend::Memory);
        assert_eq!(
            "file:/tmp/x".parse::<Backend>().unwrap(),
            Backend::File("/tmp/x".into())
        );
        assert!("file:".parse::<Backend>().is_err());
    }
}
