//! CAQR: simulated-parallel right-looking CAQR on a `Pr × Pc` block cyclic
//! grid, and sequential out-of-core CAQR over a 2-D [`BlockStore`].

use crate::error::{Error, Result};
use crate::householder::{
    apply_compact, apply_q_in_place, form_t, qr_stacked_triangles, qr_triangle_plus_dense,
    qr_unblocked, update_pair, FlopCounter, HouseholderFactor, Sparsity,
};
use crate::machine::MachineModel;
use crate::matrix::DenseMatrix;
use crate::sim::{CostReport, Simulator, TransferCounters};
use crate::store::{Backend, BlockStore, Region};
use crate::tree::{make_tree, CombineStep, TreeShape};
use crate::tsqr::unit_top;

fn log2_exact(x: usize) -> Option<u32> {
    x.is_power_of_two().then(|| x.trailing_zeros())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub m: usize,
    pub n: usize,
    pub b: usize,
    pub pr: usize,
    pub pc: usize,
}

impl GridLayout {
    pub fn new(m: usize, n: usize, b: usize, pr: usize, pc: usize) -> Result<Self> {
        if n == 0 || m < n {
            return Err(Error::InvalidArgument(format!(
                "need m >= n >= 1, got {m}x{n}"
            )));
        }
        if log2_exact(pr).is_none() || log2_exact(pc).is_none() {
            return Err(Error::InvalidArgument(format!(
                "Pr={pr} and Pc={pc} must be powers of two"
            )));
        }
        if b == 0 || b * pr > m || b * pc > n {
            return Err(Error::InvalidArgument(format!(
                "block size b={b} violates 1 <= b <= m/Pr={} and b <= n/Pc={}",
                m / pr,
                n / pc
            )));
        }
        Ok(GridLayout { m, n, b, pr, pc })
    }

    pub fn panels(&self) -> usize {
        self.n.div_ceil(self.b)
    }

    /// Rows after zero-padding `m` up to a multiple of `b`.
    pub fn padded_rows(&self) -> usize {
        self.m.div_ceil(self.b) * self.b
    }

    pub fn procs(&self) -> usize {
        self.pr * self.pc
    }

    fn proc(&self, row: usize, col: usize) -> usize {
        row * self.pc + col
    }

    /// Messages on the critical path: `(n/b)(3 log₂Pr + 2 log₂Pc)`.
    pub fn model_messages(&self) -> u64 {
        let lr = self.pr.trailing_zeros() as u64;
        let lc = self.pc.trailing_zeros() as u64;
        self.panels() as u64 * (3 * lr + 2 * lc)
    }
}

/// Householder data of one panel. Everything is indexed by position
/// relative to the process row owning the panel's diagonal block.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelFactors {
    pub col0: usize,
    pub width: usize,
    /// Active global rows (padded numbering) held by each relative process row.
    pub rows: Vec<Vec<usize>>,
    pub leaves: Vec<Option<HouseholderFactor>>,
    pub nodes: Vec<(CombineStep, HouseholderFactor)>,
}

/// Implicit Q of a parallel CAQR run, over the zero-padded row space.
#[derive(Clone, Debug, PartialEq)]
pub struct CaqrFactors {
    pub layout: GridLayout,
    pub panels: Vec<PanelFactors>,
}

fn gather(a: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

fn scatter(a: &mut DenseMatrix, rows: &[usize], cols: &[usize], b: &DenseMatrix) {
    for (j, &c) in cols.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            a[(r, c)] = b[(i, j)];
        }
    }
}

impl PanelFactors {
    fn top(&self, rel: usize) -> &[usize] {
        let r = &self.rows[rel];
        &r[..r.len().min(self.width)]
    }

    fn apply_leaves(&self, c: &mut DenseMatrix, cols: &[usize], transpose: bool) -> Result<()> {
        for (rel, leaf) in self.leaves.iter().enumerate() {
            if let Some(f) = leaf {
                let mut part = gather(c, &self.rows[rel], cols);
                apply_q_in_place(f, &mut part, transpose, &mut FlopCounter::default())?;
                scatter(c, &self.rows[rel], cols, &part);
            }
        }
        Ok(())
    }

    fn apply_node(
        &self,
        step: &CombineStep,
        f: &HouseholderFactor,
        c: &mut DenseMatrix,
        cols: &[usize],
        transpose: bool,
    ) -> Result<()> {
        let w = self.width;
        let mut stacked = DenseMatrix::zeros(w * step.participants.len(), cols.len());
        let order: Vec<usize> = std::iter::once(step.survivor)
            .chain(step.senders())
            .collect();
        for (k, &rel) in order.iter().enumerate() {
            stacked.set_submatrix(k * w, 0, &gather(c, self.top(rel), cols));
        }
        apply_q_in_place(f, &mut stacked, transpose, &mut FlopCounter::default())?;
        for (k, &rel) in order.iter().enumerate() {
            let top = self.top(rel);
            scatter(
                c,
                top,
                cols,
                &stacked.submatrix(k * w, 0, top.len(), cols.len()),
            );
        }
        Ok(())
    }
}

impl CaqrFactors {
    /// `Q·C` or `Qᵀ·C` for `C` with `m` rows (padding rows are handled internally).
    pub fn apply(&self, c: &DenseMatrix, transpose: bool) -> Result<DenseMatrix> {
        let l = &self.layout;
        if c.rows() != l.m {
            return Err(Error::Shape(format!(
                "C has {} rows, expected {}",
                c.rows(),
                l.m
            )));
        }
        let mut work = DenseMatrix::zeros(l.padded_rows(), c.cols());
        work.set_submatrix(0, 0, c);
        let cols: Vec<usize> = (0..c.cols()).collect();
        if transpose {
            for p in &self.panels {
                p.apply_leaves(&mut work, &cols, true)?;
                for (s, f) in &p.nodes {
                    p.apply_node(s, f, &mut work, &cols, true)?;
                }
            }
        } else {
            for p in self.panels.iter().rev() {
                for (s, f) in p.nodes.iter().rev() {
                    p.apply_node(s, f, &mut work, &cols, false)?;
                }
                p.apply_leaves(&mut work, &cols, false)?;
            }
        }
        Ok(work.submatrix(0, 0, l.m, c.cols()))
    }

    /// Thin `m × n` Q.
    pub fn explicit_q(&self) -> Result<DenseMatrix> {
        self.apply(&DenseMatrix::eye(self.layout.m, self.layout.n), false)
    }
}

/// Right-looking CAQR on a simulated `Pr × Pc` grid.
///
/// Panels are separated by a message-free synchronization, so the reported
/// critical path is the sum of per-panel critical paths. Every step of a
/// panel runs even when a local trailing piece is empty; such messages
/// carry no payload words.
pub fn caqr_parallel_sim(
    a: &DenseMatrix,
    layout: &GridLayout,
    machine: &MachineModel,
) -> Result<(DenseMatrix, CaqrFactors, CostReport)> {
    let l = *layout;
    if a.shape() != (l.m, l.n) {
        return Err(Error::Shape(format!(
            "matrix is {:?}, layout expects {}x{}",
            a.shape(),
            l.m,
            l.n
        )));
    }
    let (b, pr, pc) = (l.b, l.pr, l.pc);
    let mp = l.padded_rows();
    let nbr = mp / b;
    let mut work = DenseMatrix::zeros(mp, l.n);
    work.set_submatrix(0, 0, a);
    let tree = make_tree(&TreeShape::Binary, pr)?;
    let lc = l.pc.trailing_zeros() as u64;
    let mut sim = Simulator::new(machine, l.procs());
    let mut panels = Vec::with_capacity(l.panels());
    let mut empty_payload = false;

    for k in 0..l.panels() {
        sim.barrier();
        let c0 = k * b;
        let w = b.min(l.n - c0);
        let jc = k % pc;
        let owner = |rel: usize| (rel + k) % pr;
        let rows: Vec<Vec<usize>> = (0..pr)
            .map(|rel| {
                (k + rel..nbr)
                    .step_by(pr)
                    .flat_map(|blk| blk * b..blk * b + b)
                    .collect()
            })
            .collect();
        let panel_cols: Vec<usize> = (c0..c0 + w).collect();

        // TSQR down the panel's process column
        let mut leaves = Vec::with_capacity(pr);
        let mut rs = Vec::with_capacity(pr);
        for (rel, rr) in rows.iter().enumerate() {
            if rr.is_empty() {
                leaves.push(None);
                rs.push(DenseMatrix::zeros(w, w));
                continue;
            }
            let mut fc = FlopCounter::default();
            let f = qr_unblocked(&gather(&work, rr, &panel_cols), &mut fc)?;
            sim.compute(l.proc(owner(rel), jc), &fc);
            rs.push(f.r.clone());
            scatter(&mut work, rr, &panel_cols, &DenseMatrix::zeros(rr.len(), w));
            leaves.push(Some(f));
        }
        let tri_words = (w * (w + 1) / 2) as u64;
        let mut nodes = Vec::new();
        for (_, step) in tree.steps() {
            let s = step.survivor;
            let blocks: Vec<&DenseMatrix> = std::iter::once(&rs[s])
                .chain(step.senders().map(|f| &rs[f]))
                .collect();
            for f in step.senders() {
                sim.send(l.proc(owner(f), jc), l.proc(owner(s), jc), tri_words);
            }
            let mut fc = FlopCounter::default();
            let nf = qr_stacked_triangles(&blocks, &mut fc)?;
            sim.compute(l.proc(owner(s), jc), &fc);
            rs[s] = nf.r.clone();
            nodes.push((step.clone(), nf));
        }
        work.set_submatrix(c0, c0, &rs[0]);

        // row broadcasts: Householder vectors, then the τ arrays
        if pc > 1 {
            for (rel, rr) in rows.iter().enumerate() {
                let procs: Vec<usize> = (0..pc).map(|j| l.proc(owner(rel), j)).collect();
                let y_words = if rr.is_empty() {
                    tri_words
                } else {
                    (rr.len() * w) as u64
                };
                sim.collective(&procs, lc, y_words);
                sim.collective(&procs, lc, 2 * w as u64);
            }
        }

        // trailing update, per process column
        let trailing: Vec<Vec<usize>> = (0..pc)
            .map(|j| (c0 + w..l.n).filter(|&c| (c / b) % pc == j).collect())
            .collect();
        for (rel, leaf) in leaves.iter().enumerate() {
            let Some(f) = leaf else { continue };
            for (j, cols) in trailing.iter().enumerate() {
                if cols.is_empty() {
                    continue;
                }
                let mut fc = FlopCounter::default();
                let t = form_t(f, &mut fc);
                let mut part = gather(&work, &rows[rel], cols);
                apply_compact(f, &t, &mut part, true, &mut fc)?;
                scatter(&mut work, &rows[rel], cols, &part);
                sim.compute(l.proc(owner(rel), j), &fc);
            }
        }
        for (step, nf) in &nodes {
            let s = step.survivor;
            let f = step.senders().next().expect("binary step");
            let y1 = nf.lower_triangle_block();
            let top = |r: &[usize]| -> Vec<usize> { r.iter().copied().take(w).collect() };
            let (top_s, top_f) = (top(&rows[s]), top(&rows[f]));
            for (j, cols) in trailing.iter().enumerate() {
                let (ps, pf) = (l.proc(owner(s), j), l.proc(owner(f), j));
                let words = (w * cols.len()) as u64;
                empty_payload |= words == 0;
                sim.send(pf, ps, words);
                let load = |r: &[usize]| {
                    if r.is_empty() {
                        DenseMatrix::zeros(w, cols.len())
                    } else {
                        gather(&work, r, cols)
                    }
                };
                let (c0m, c1m) = (load(&top_s), load(&top_f));
                let mut fc = FlopCounter::default();
                let (u0, u1) = update_pair(&y1, &nf.tau, &c0m, &c1m, &mut fc)?;
                sim.compute(ps, &fc);
                sim.send(ps, pf, words);
                if !top_s.is_empty() {
                    scatter(&mut work, &top_s, cols, &u0);
                }
                if !top_f.is_empty() {
                    scatter(&mut work, &top_f, cols, &u1);
                }
            }
        }
        panels.push(PanelFactors {
            col0: c0,
            width: w,
            rows,
            leaves,
            nodes,
        });
    }

    let r = work.submatrix(0, 0, l.n, l.n).upper_triangle(l.n);
    let mut report = sim.report();
    report
        .notes
        .push("panels are separated by a message-free synchronization".into());
    if empty_payload {
        report
            .notes
            .push("some trailing-update exchanges carried an empty local block".into());
    }
    if l.padded_rows() != l.m {
        report.notes.push(format!(
            "rows zero-padded from {} to {}",
            l.m,
            l.padded_rows()
        ));
    }
    Ok((r, CaqrFactors { layout: l, panels }, report))
}

/// Block layout of the sequential variant: `block_rows × block_cols`
/// blocks, `block_cols` dividing `n`, `block_rows` dividing `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub m: usize,
    pub n: usize,
    pub block_rows: usize,
    pub block_cols: usize,
}

impl SeqLayout {
    pub fn new(m: usize, n: usize, block_rows: usize, block_cols: usize) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if n == 0 || m < n {
            return bad(format!("need m >= n >= 1, got {m}x{n}"));
        }
        if block_cols == 0 || n % block_cols != 0 {
            return bad(format!("block width {block_cols} must divide n={n}"));
        }
        if block_rows < block_cols || m % block_rows != 0 {
            return bad(format!(
                "block height {block_rows} must divide m={m} and be at least {block_cols}"
            ));
        }
        if block_cols != n && block_rows % block_cols != 0 {
            return bad(format!(
                "block width {block_cols} must divide block height {block_rows}"
            ));
        }
        Ok(SeqLayout {
            m,
            n,
            block_rows,
            block_cols,
        })
    }

    /// Square blocks of edge `N`, the largest divisor of `gcd(m, n)` with
    /// `4N² <= W`.
    pub fn plan(m: usize, n: usize, w: usize) -> Result<Self> {
        let g = gcd(m, n);
        let edge = (1..=g)
            .rev()
            .find(|&e| g % e == 0 && 4 * e * e <= w)
            .ok_or_else(|| {
                Error::Infeasible(format!("fast memory of {w} words holds no 2x2 block group"))
            })?;
        Self::new(m, n, edge, edge)
    }

    pub fn pr(&self) -> usize {
        self.m / self.block_rows
    }

    pub fn pc(&self) -> usize {
        self.n / self.block_cols
    }

    /// Peak resident words of the trailing two-block update.
    pub fn peak_words(&self) -> usize {
        3 * self.block_rows * self.block_cols + self.block_cols
    }

    /// Exact slow-memory transfers of either loop order.
    pub fn transfers(&self) -> TransferCounters {
        let (mb, nb) = (self.block_rows as u64, self.block_cols as u64);
        let (pr, pc) = (self.pr() as u64, self.pc() as u64);
        let mut t = TransferCounters::default();
        for j in 0..pc {
            let top = j * nb / mb;
            let r0 = j * nb % mb;
            let below = pr - top - 1;
            let last = j + 1 == pc;
            // panel factorization
            let top_words = (mb - r0) * nb;
            t.messages += 2 * (below + 1);
            t.words += top_words + below * (2 * mb * nb + nb);
            t.words += if last {
                top_words - nb * (nb - 1) / 2
            } else {
                top_words
            } + nb;
            // trailing updates
            let k = pc - j - 1;
            t.messages += k * (3 + 3 * below);
            let leaf = (top_words - nb * (nb + 1) / 2) + nb;
            t.words += k * (leaf + 2 * top_words + below * (3 * mb * nb + nb));
        }
        t
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LoopOrder {
    #[default]
    Right,
    Left,
}

/// Resident-word accounting for fast memory.
#[derive(Debug)]
struct Fast {
    cur: usize,
    peak: usize,
    cap: usize,
}

impl Fast {
    fn hold(&mut self, words: usize) -> Result<()> {
        self.cur += words;
        self.peak = self.peak.max(self.cur);
        if self.cur > self.cap {
            return Err(Error::Infeasible(format!(
                "resident set of {} words exceeds fast memory of {}",
                self.cur, self.cap
            )));
        }
        Ok(())
    }

    fn release(&mut self, words: usize) {
        self.cur -= words;
    }
}

/// Spilled Householder factors of a sequential CAQR run.
#[derive(Debug)]
pub struct SeqCaqr {
    pub layout: SeqLayout,
    pub factors: BlockStore,
    pub order: LoopOrder,
    /// Largest resident set seen, in words.
    pub peak_words: usize,
}

struct Seq<'a> {
    l: SeqLayout,
    a: &'a mut BlockStore,
    f: BlockStore,
    fast: Fast,
    fc: FlopCounter,
    last_r: Option<DenseMatrix>,
}

impl Seq<'_> {
    fn top(&self, j: usize) -> (usize, usize) {
        let nb = self.l.block_cols;
        (j * nb / self.l.block_rows, j * nb % self.l.block_rows)
    }

    fn factor_panel(&mut self, j: usize) -> Result<()> {
        let (mb, nb) = (self.l.block_rows, self.l.block_cols);
        let (tb, r0) = self.top(j);
        let top_words = (mb - r0) * nb;
        let last = j + 1 == self.l.pc();
        let top = self.a.read_region(tb, j, Region::Full { row0: r0 })?;
        self.fast.hold(top_words + nb)?;
        let ftop = qr_unblocked(&top, &mut self.fc)?;
        let mut r = ftop.r.clone();
        for bl in tb + 1..self.l.pr() {
            let blk = self.a.read_region(bl, j, Region::ALL)?;
            self.fast.hold(mb * nb + nb)?;
            let f = qr_triangle_plus_dense(&r, &blk, &mut self.fc)?;
            self.f
                .write_factor(bl, j, Region::ALL, &f.y.submatrix(nb, 0, mb, nb), &f.tau)?;
            self.fast.release(mb * nb + nb);
            r = f.r;
        }
        let mut y = ftop.y.clone();
        let region = if last {
            for i in 0..nb {
                y[(i, i)] = r[(i, i)];
            }
            self.last_r = Some(r);
            Region::LowerWithDiag { row0: r0 }
        } else {
            for c in 0..nb {
                for i in 0..=c {
                    y[(i, c)] = r[(i, c)];
                }
            }
            Region::Full { row0: r0 }
        };
        self.f.write_factor(tb, j, region, &y, &ftop.tau)?;
        self.fast.release(top_words + nb);
        Ok(())
    }

    /// Apply panel `j`'s Qᵀ to block column `kc`.
    fn update(&mut self, j: usize, kc: usize) -> Result<()> {
        let (mb, nb) = (self.l.block_rows, self.l.block_cols);
        let (tb, r0) = self.top(j);
        let top_words = (mb - r0) * nb;
        let (ytop, tau) = self
            .f
            .read_factor(tb, j, Region::StrictlyLower { row0: r0 })?;
        self.fast.hold(top_words + nb)?;
        let mut c_top = self.a.read_region(tb, kc, Region::Full { row0: r0 })?;
        self.fast.hold(top_words)?;
        let mut yl = ytop;
        for i in 0..nb {
            yl[(i, i)] = 1.0;
        }
        let leaf = HouseholderFactor {
            y: yl,
            tau,
            r: DenseMatrix::zeros(nb, nb),
            sparsity: Sparsity::Dense,
        };
        apply_q_in_place(&leaf, &mut c_top, true, &mut self.fc)?;
        self.fast.release(top_words + nb);
        for bl in tb + 1..self.l.pr() {
            let (yd, tau) = self.f.read_factor(bl, j, Region::ALL)?;
            self.fast.hold(mb * nb + nb)?;
            let c = self.a.read_region(bl, kc, Region::ALL)?;
            self.fast.hold(mb * nb)?;
            let pair = HouseholderFactor {
                y: unit_top(nb, &yd),
                tau,
                r: DenseMatrix::zeros(nb, nb),
                sparsity: Sparsity::TrianglePlusDense,
            };
            let mut stacked = DenseMatrix::vstack(&[&c_top.submatrix(0, 0, nb, nb), &c])?;
            apply_q_in_place(&pair, &mut stacked, true, &mut self.fc)?;
            c_top.set_submatrix(0, 0, &stacked.submatrix(0, 0, nb, nb));
            self.a
                .write_region(bl, kc, Region::ALL, &stacked.submatrix(nb, 0, mb, nb))?;
            self.fast.release(2 * mb * nb + nb);
        }
        self.a
            .write_region(tb, kc, Region::Full { row0: r0 }, &c_top)?;
        self.fast.release(top_words);
        Ok(())
    }
}

/// Sequential CAQR over a 2-D block store with `w` words of fast memory.
pub fn caqr_sequential(
    store: &mut BlockStore,
    w: usize,
    machine: &MachineModel,
) -> Result<(DenseMatrix, SeqCaqr, CostReport)> {
    let backend = match store.path() {
        Some(p) => Backend::File(p.to_path_buf()).sibling(".q"),
        None => Backend::Memory,
    };
    caqr_sequential_with(store, w, machine, LoopOrder::Right, &backend)
}

pub fn caqr_sequential_with(
    store: &mut BlockStore,
    w: usize,
    machine: &MachineModel,
    order: LoopOrder,
    factor_backend: &Backend,
) -> Result<(DenseMatrix, SeqCaqr, CostReport)> {
    if store.padding() != 0 {
        return Err(Error::InvalidArgument(
            "sequential CAQR needs an unpadded store".into(),
        ));
    }
    let l = SeqLayout::new(store.m(), store.n(), store.block_rows(), store.block_cols())?;
    if l.peak_words() > w {
        return Err(Error::Infeasible(format!(
            "blocks of {}x{} need {} words of fast memory, have {w}",
            l.block_rows,
            l.block_cols,
            l.peak_words()
        )));
    }
    let f = BlockStore::empty_2d(l.m, l.n, l.block_rows, l.pc(), true, factor_backend)?;
    let mark = store.log().len();
    let mut s = Seq {
        l,
        a: store,
        f,
        fast: Fast {
            cur: 0,
            peak: 0,
            cap: w,
        },
        fc: FlopCounter::default(),
        last_r: None,
    };
    match order {
        LoopOrder::Right => {
            for j in 0..l.pc() {
                s.factor_panel(j)?;
                for kc in j + 1..l.pc() {
                    s.update(j, kc)?;
                }
            }
        }
        LoopOrder::Left => {
            for j in 0..l.pc() {
                for i in 0..j {
                    s.update(i, j)?;
                }
                s.factor_panel(j)?;
            }
        }
    }
    s.a.flush()?;
    s.f.flush()?;

    // R from the diagonal factor slots and the rows left in the A store
    let nb = l.block_cols;
    let mut r = DenseMatrix::zeros(l.n, l.n);
    for j in 0..l.pc() {
        let (tb, r0) = s.top(j);
        let diag = if j + 1 == l.pc() {
            s.last_r.clone().expect("last panel factored")
        } else {
            s.f.peek(tb, j)?.submatrix(r0, 0, nb, nb).upper_triangle(nb)
        };
        r.set_submatrix(j * nb, j * nb, &diag);
        for kc in j + 1..l.pc() {
            r.set_submatrix(j * nb, kc * nb, &s.a.peek(tb, kc)?.submatrix(r0, 0, nb, nb));
        }
    }

    let mut comm = TransferCounters::default();
    for t in &s.a.log()[mark..] {
        comm.add(t.words);
    }
    let fcnt = s.f.counters();
    comm.messages += fcnt.messages;
    comm.words += fcnt.words;
    let mut report = CostReport::sequential(s.fc, comm, machine);
    report.notes.push(format!(
        "{}x{} blocks, peak resident {} of {w} words",
        l.block_rows, l.block_cols, s.fast.peak
    ));
    let peak = s.fast.peak;
    Ok((
        r,
        SeqCaqr {
            layout: l,
            factors: s.f,
            order,
            peak_words: peak,
        },
        report,
    ))
}

impl SeqCaqr {
    /// `Q·C` (or `Qᵀ·C`) for an `m`-row `C`, reading the spilled factors
    /// without logging.
    pub fn apply(&mut self, c: &DenseMatrix, transpose: bool) -> Result<DenseMatrix> {
        let l = self.layout;
        if c.rows() != l.m {
            return Err(Error::Shape(format!(
                "C has {} rows, expected {}",
                c.rows(),
                l.m
            )));
        }
        let (mb, nb) = (l.block_rows, l.block_cols);
        let nc = c.cols();
        let mut out = c.clone();
        let mut fc = FlopCounter::default();
        let panels: Vec<usize> = if transpose {
            (0..l.pc()).collect()
        } else {
            (0..l.pc()).rev().collect()
        };
        for j in panels {
            let (tb, r0) = (j * nb / mb, j * nb % mb);
            let g0 = tb * mb + r0;
            let (ytop, tau) = self.factors.peek_factor(tb, j)?;
            let mut y = ytop.submatrix(r0, 0, mb - r0, nb);
            for c in 0..nb {
                for i in 0..c {
                    y[(i, c)] = 0.0;
                }
                y[(c, c)] = 1.0;
            }
            let leaf = HouseholderFactor {
                y,
                tau,
                r: DenseMatrix::zeros(nb, nb),
                sparsity: Sparsity::Dense,
            };
            let mut pairs = Vec::new();
            for bl in tb + 1..l.pr() {
                let (yd, tau) = self.factors.peek_factor(bl, j)?;
                pairs.push((
                    bl,
                    HouseholderFactor {
                        y: unit_top(nb, &yd),
                        tau,
                        r: DenseMatrix::zeros(nb, nb),
                        sparsity: Sparsity::TrianglePlusDense,
                    },
                ));
            }
            let pair_apply = |out: &mut DenseMatrix,
                              bl: usize,
                              f: &HouseholderFactor,
                              fc: &mut FlopCounter|
             -> Result<()> {
                let mut st = DenseMatrix::vstack(&[
                    &out.submatrix(g0, 0, nb, nc),
                    &out.submatrix(bl * mb, 0, mb, nc),
                ])?;
                apply_q_in_place(f, &mut st, transpose, fc)?;
                out.set_submatrix(g0, 0, &st.submatrix(0, 0, nb, nc));
                out.set_submatrix(bl * mb, 0, &st.submatrix(nb, 0, mb, nc));
                Ok(())
            };
            let leaf_apply = |out: &mut DenseMatrix, fc: &mut FlopCounter| -> Result<()> {
                let mut part = out.submatrix(g0, 0, mb - r0, nc);
                apply_q_in_place(&leaf, &mut part, transpose, fc)?;
                out.set_submatrix(g0, 0, &part);
                Ok(())
            };
            if transpose {
                leaf_apply(&mut out, &mut fc)?;
                for (bl, f) in &pairs {
                    pair_apply(&mut out, *bl, f, &mut fc)?;
                }
            } else {
                for (bl, f) in pairs.iter().rev() {
                    pair_apply(&mut out, *bl, f, &mut fc)?;
                }
                leaf_apply(&mut out, &mut fc)?;
            }
        }
        Ok(out)
    }

    pub fn explicit_q(&mut self) -> Result<DenseMatrix> {
        let l = self.layout;
        self.apply(&DenseMatrix::eye(l.m, l.n), false)
    }
}

/// Lower bound on words moved by any sequential QR of an `m × n` matrix
/// with `w` words of fast memory.
pub fn seq_words_lower_bound(m: usize, n: usize, w: usize) -> f64 {
    let (m, n, w) = (m as f64, n as f64, w as f64);
    (m * n * n / 4.0 - (n * n / 8.0) * (n / 2.0 + 1.0)) / (8.0 * w).sqrt() - w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::gaussian;

    fn norm_r(mut r: DenseMatrix) -> DenseMatrix {
        r.sign_normalize_rows();
        r
    }

    fn oracle(a: &DenseMatrix) -> DenseMatrix {
        norm_r(qr_unblocked(a, &mut FlopCounter::default()).unwrap().r)
    }

    #[test]
    fn layout_validation() {
        assert!(GridLayout::new(64, 64, 8, 3, 2).is_err());
        assert!(GridLayout::new(64, 64, 40, 2, 2).is_err());
        assert!(GridLayout::new(32, 64, 8, 2, 2).is_err());
        assert_eq!(
            GridLayout::new(64, 64, 8, 2, 2).unwrap().model_messages(),
            40
        );
    }

    #[test]
    fn one_by_one_grid_is_reference() {
        let a = gaussian(50, 6, 3);
        let l = GridLayout::new(50, 6, 6, 1, 1).unwrap();
        let (r, _, rep) = caqr_parallel_sim(&a, &l, &MachineModel::unit()).unwrap();
        assert_eq!(rep.comm.messages, 0);
        let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
        assert!(r.max_abs_diff(&f.r) < 1e-13 * a.frobenius_norm());
    }

    #[test]
    fn parallel_messages_and_r() {
        let a = gaussian(64, 64, 5);
        let l = GridLayout::new(64, 64, 8, 2, 2).unwrap();
        let (r, q, rep) = caqr_parallel_sim(&a, &l, &MachineModel::unit()).unwrap();
        let r_raw = r.clone();
        assert_eq!(rep.comm.messages, 40);
        assert!(norm_r(r).max_abs_diff(&oracle(&a)) < 1e-11 * a.frobenius_norm());
        let qa = q.apply(&a, true).unwrap();
        assert!(qa.max_abs_diff(&r_raw) < 1e-11 * a.frobenius_norm());
    }

    #[test]
    fn ragged_rows_and_narrow_panel() {
        let a = gaussian(70, 20, 6);
        let l = GridLayout::new(70, 20, 8, 4, 2).unwrap();
        let (r, q, _) = caqr_parallel_sim(&a, &l, &MachineModel::unit()).unwrap();
        assert!(norm_r(r.clone()).max_abs_diff(&oracle(&a)) < 1e-11 * a.frobenius_norm());
        let qe = q.explicit_q().unwrap();
        assert!(crate::matrix::reconstruction_error(&a, &qe, &r).unwrap() < 1e-12);
    }

    #[test]
    fn seq_plan() {
        let l = SeqLayout::plan(512, 512, 16384).unwrap();
        assert_eq!((l.block_rows, l.pr(), l.pc()), (64, 8, 8));
        let l = SeqLayout::plan(256, 128, 8192).unwrap();
        assert_eq!((l.block_rows, l.pr(), l.pc()), (32, 8, 4));
        assert_eq!(
            SeqLayout::plan(512, 512, 16384)
                .unwrap()
                .transfers()
                .messages,
            576
        );
    }

    #[test]
    fn sequential_matches_oracle_and_count() {
        let a = gaussian(96, 48, 8);
        let mut s = BlockStore::create_2d(&a, 16, 3, &Backend::Memory).unwrap();
        let (r, mut f, rep) =
            caqr_sequential(&mut s, 3 * 16 * 16 + 16, &MachineModel::unit()).unwrap();
        assert!(norm_r(r.clone()).max_abs_diff(&oracle(&a)) < 1e-11 * a.frobenius_norm());
        assert_eq!(rep.comm, f.layout.transfers());
        let q = f.explicit_q().unwrap();
        assert!(crate::matrix::reconstruction_error(&a, &q, &r).unwrap() < 1e-12);
        assert!(f.peak_words <= 3 * 16 * 16 + 16);
    }

    #[test]
    fn tall_blocks() {
        let a = gaussian(96, 24, 9);
        let mut s = BlockStore::create_2d(&a, 24, 3, &Backend::Memory).unwrap();
        let (r, f, rep) = caqr_sequential(&mut s, 10_000, &MachineModel::unit()).unwrap();
        assert!(norm_r(r).max_abs_diff(&oracle(&a)) < 1e-11 * a.frobenius_norm());
        assert_eq!(rep.comm, f.layout.transfers());
    }

    #[test]
    fn left_looking_same_words() {
        let a = gaussian(64, 64, 10);
        let mut s1 = BlockStore::create_2d(&a, 16, 4, &Backend::Memory).unwrap();
        let mut s2 = BlockStore::create_2d(&a, 16, 4, &Backend::Memory).unwrap();
        let m = MachineModel::unit();
        let (r1, _, p1) =
            caqr_sequential_with(&mut s1, 2000, &m, LoopOrder::Right, &Backend::Memory).unwrap();
        let (r2, _, p2) =
            caqr_sequential_with(&mut s2, 2000, &m, LoopOrder::Left, &Backend::Memory).unwrap();
        assert_eq!(p1.comm, p2.comm);
        assert!(r1.max_abs_diff(&r2) < 1e-12 * a.frobenius_norm());
    }

    #[test]
    fn too_little_memory() {
        let a = gaussian(64, 64, 10);
        let mut s = BlockStore::create_2d(&a, 16, 4, &Backend::Memory).unwrap();
        assert!(matches!(
            caqr_sequential(&mut s, 500, &MachineModel::unit()),
            Err(Error::Infeasible(_))
        ));
    }
}
