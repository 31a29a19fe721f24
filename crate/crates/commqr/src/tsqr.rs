//! TSQR: simulated-parallel over any reduction tree, and out-of-core over a
//! flat tree on a [`BlockStore`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::householder::{
    apply_q_in_place, qr_stacked_triangles, qr_triangle_plus_dense, qr_unblocked, FlopCounter,
    HouseholderFactor, Sparsity,
};
use crate::machine::MachineModel;
use crate::matrix::DenseMatrix;
use crate::sim::{CostReport, Simulator, TransferCounters};
use crate::store::{Backend, BlockStore, Region};
use crate::tree::ReductionTree;

const PASS_THROUGH_NOTE: &str = "pass-through nodes move no data and are charged zero messages";

/// Stacked-triangle factor of one combine step. `order[k]` owns block `k`
/// of the stack; the survivor comes first.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFactor {
    pub order: Vec<usize>,
    pub factor: HouseholderFactor,
}

/// Implicit Q of a parallel TSQR run.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeQ {
    pub leaf_factors: Vec<HouseholderFactor>,
    /// Keyed by `(level, survivor)`.
    pub node_factors: BTreeMap<(usize, usize), NodeFactor>,
    pub tree: ReductionTree,
    pub m: usize,
    pub n: usize,
    /// First row of each leaf block, plus `m` at the end.
    pub row_starts: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TsqrOptions {
    /// Charge the butterfly all-reduction: every combine message is matched
    /// by one in the opposite direction.
    pub all_reduction: bool,
}

/// Balanced 1-D block row partition: the first `m mod P` blocks get one
/// extra row.
pub fn block_row_starts(m: usize, p: usize) -> Vec<usize> {
    let (base, rem) = (m / p, m % p);
    let mut starts = Vec::with_capacity(p + 1);
    let mut r = 0;
    for i in 0..p {
        starts.push(r);
        r += base + usize::from(i < rem);
    }
    starts.push(m);
    starts
}

/// Whether some node idles through a level of `tree`.
fn has_pass_through(tree: &ReductionTree) -> bool {
    let mut active: Vec<usize> = (0..tree.leaf_count()).collect();
    for level in tree.levels() {
        let mut covered: Vec<usize> = level
            .iter()
            .flat_map(|s| s.participants.iter().copied())
            .collect();
        covered.sort_unstable();
        if covered != active || level.iter().any(|s| s.participants.len() < 2) {
            return true;
        }
        active = level.iter().map(|s| s.survivor).collect();
        active.sort_unstable();
    }
    false
}

fn top_rows(b: &DenseMatrix, n: usize) -> DenseMatrix {
    b.submatrix(0, 0, n, b.cols())
}

pub fn tsqr_factor(
    a: &DenseMatrix,
    p: usize,
    tree: &ReductionTree,
    machine: &MachineModel,
) -> Result<(TreeQ, DenseMatrix, CostReport)> {
    tsqr_factor_with(a, p, tree, machine, TsqrOptions::default())
}

pub fn tsqr_factor_with(
    a: &DenseMatrix,
    p: usize,
    tree: &ReductionTree,
    machine: &MachineModel,
    opts: TsqrOptions,
) -> Result<(TreeQ, DenseMatrix, CostReport)> {
    let (m, n) = a.shape();
    if p == 0 || m / p < n {
        return Err(Error::InvalidArgument(format!(
            "TSQR needs m/P >= n (m={m}, n={n}, P={p})"
        )));
    }
    if tree.leaf_count() != p {
        return Err(Error::InvalidArgument(format!(
            "tree has {} leaves but P={p}",
            tree.leaf_count()
        )));
    }
    tree.validate()?;
    let starts = block_row_starts(m, p);
    let mut sim = Simulator::new(machine, p);
    let mut leaf_factors = Vec::with_capacity(p);
    let mut rs = Vec::with_capacity(p);
    for i in 0..p {
        let block = a.submatrix(starts[i], 0, starts[i + 1] - starts[i], n);
        let mut fc = FlopCounter::default();
        let f = qr_unblocked(&block, &mut fc)?;
        sim.compute(i, &fc);
        rs.push(f.r.clone());
        leaf_factors.push(f);
    }
    let words = (n * (n + 1) / 2) as u64;
    let mut node_factors = BTreeMap::new();
    for (level, step) in tree.steps() {
        let s = step.survivor;
        let mut order = vec![s];
        for f in step.senders() {
            sim.send(f, s, words);
            if opts.all_reduction {
                sim.send(s, f, words);
            }
            order.push(f);
        }
        let blocks: Vec<&DenseMatrix> = order.iter().map(|&i| &rs[i]).collect();
        let mut fc = FlopCounter::default();
        let factor = qr_stacked_triangles(&blocks, &mut fc)?;
        sim.compute(s, &fc);
        rs[s] = factor.r.clone();
        node_factors.insert((level, s), NodeFactor { order, factor });
    }
    let r = rs[tree.root()].clone();
    let mut report = sim.report();
    if has_pass_through(tree) {
        report.notes.push(PASS_THROUGH_NOTE.into());
    }
    if opts.all_reduction {
        report.notes.push("all-reduction message accounting".into());
    }
    Ok((
        TreeQ {
            leaf_factors,
            node_factors,
            tree: tree.clone(),
            m,
            n,
            row_starts: starts,
        },
        r,
        report,
    ))
}

/// Apply `Q` (`transpose = false`) or `Qᵀ` to `C`. For `Q`, an `n`-row `C`
/// is zero-extended into the root block's leading rows.
pub fn tsqr_apply(
    q: &TreeQ,
    c: &DenseMatrix,
    transpose: bool,
    machine: &MachineModel,
) -> Result<(DenseMatrix, CostReport)> {
    let (m, n) = (q.m, q.n);
    let nc = c.cols();
    let p = q.leaf_factors.len();
    let full = if c.rows() == m {
        c.clone()
    } else if c.rows() == n && !transpose {
        let mut z = DenseMatrix::zeros(m, nc);
        z.set_submatrix(q.row_starts[q.tree.root()], 0, c);
        z
    } else {
        return Err(Error::Shape(format!(
            "C has {} rows; expected {m}{}",
            c.rows(),
            if transpose {
                String::new()
            } else {
                format!(" or {n}")
            }
        )));
    };
    let mut pieces: Vec<DenseMatrix> = (0..p)
        .map(|i| {
            full.submatrix(
                q.row_starts[i],
                0,
                q.row_starts[i + 1] - q.row_starts[i],
                nc,
            )
        })
        .collect();
    let mut sim = Simulator::new(machine, p);
    let words = (n * nc) as u64;

    let leaves = |pieces: &mut Vec<DenseMatrix>, sim: &mut Simulator| -> Result<()> {
        for (i, piece) in pieces.iter_mut().enumerate() {
            let mut fc = FlopCounter::default();
            apply_q_in_place(&q.leaf_factors[i], piece, transpose, &mut fc)?;
            sim.compute(i, &fc);
        }
        Ok(())
    };
    let node =
        |key: (usize, usize), pieces: &mut Vec<DenseMatrix>, sim: &mut Simulator| -> Result<()> {
            let nf = &q.node_factors[&key];
            let s = key.1;
            for &f in &nf.order[1..] {
                sim.send(f, s, words);
            }
            let tops: Vec<DenseMatrix> =
                nf.order.iter().map(|&i| top_rows(&pieces[i], n)).collect();
            let refs: Vec<&DenseMatrix> = tops.iter().collect();
            let mut stacked = DenseMatrix::vstack(&refs)?;
            let mut fc = FlopCounter::default();
            apply_q_in_place(&nf.factor, &mut stacked, transpose, &mut fc)?;
            sim.compute(s, &fc);
            for (k, &i) in nf.order.iter().enumerate() {
                pieces[i].set_submatrix(0, 0, &stacked.submatrix(k * n, 0, n, nc));
            }
            for &f in &nf.order[1..] {
                sim.send(s, f, words);
            }
            Ok(())
        };

    let keys: Vec<(usize, usize)> = q.tree.steps().map(|(l, s)| (l, s.survivor)).collect();
    if transpose {
        leaves(&mut pieces, &mut sim)?;
        for &k in &keys {
            node(k, &mut pieces, &mut sim)?;
        }
    } else {
        for &k in keys.iter().rev() {
            node(k, &mut pieces, &mut sim)?;
        }
        leaves(&mut pieces, &mut sim)?;
    }
    let mut out = DenseMatrix::zeros(m, nc);
    for (i, piece) in pieces.iter().enumerate() {
        out.set_submatrix(q.row_starts[i], 0, piece);
    }
    let mut report = sim.report();
    if has_pass_through(&q.tree) {
        report.notes.push(PASS_THROUGH_NOTE.into());
    }
    Ok((out, report))
}

/// Thin `m × n` Q of a parallel TSQR run.
pub fn tsqr_explicit_q(q: &TreeQ) -> Result<DenseMatrix> {
    let (out, _) = tsqr_apply(q, &DenseMatrix::identity(q.n), false, &MachineModel::unit())?;
    Ok(out)
}

/// Smallest fast memory for which out-of-core TSQR is feasible:
/// `⌈(3/2)n² + n/2⌉ = n(3n+1)/2`.
pub fn ooc_min_fast_words(n: usize) -> usize {
    n * (3 * n + 1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OocPlan {
    /// Number of row blocks.
    pub p: usize,
    pub block_rows: usize,
}

/// Block count and block height for out-of-core TSQR. Starts from
/// `P = ⌈mn / (W − n(n+1)/2)⌉` and raises `P` until a block plus the
/// resident R fits in `W`.
pub fn plan_ooc(m: usize, n: usize, w: usize) -> Result<OocPlan> {
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!(
            "need m >= n >= 1, got {m}x{n}"
        )));
    }
    let need = ooc_min_fast_words(n);
    if w < need {
        return Err(Error::Infeasible(format!(
            "fast memory of {w} words is below the required minimum {need} for n={n}"
        )));
    }
    let tri = n * (n + 1) / 2;
    let mut p = (m * n).div_ceil(w - tri).max(1);
    loop {
        let block_rows = m.div_ceil(p).max(n);
        if block_rows * n + tri <= w {
            let p = m.div_ceil(block_rows);
            return Ok(OocPlan { p, block_rows });
        }
        p += 1;
    }
}

/// Spilled implicit Q of an out-of-core TSQR run: one Householder block
/// plus τ per row block.
#[derive(Debug)]
pub struct SpilledQ {
    pub store: BlockStore,
    pub n: usize,
    pub block_rows: usize,
    pub blocks: usize,
}

fn log_delta(store: &BlockStore, from: usize) -> TransferCounters {
    let mut c = TransferCounters::default();
    for t in &store.log()[from..] {
        c.add(t.words);
    }
    c
}

/// Flat-tree TSQR over the row blocks of `store` with `w` words of fast
/// memory. Block 0 is factored dense; each later block is combined with the
/// resident R. Spill streams go next to the input file (suffix `.q`) or to
/// memory.
pub fn tsqr_factor_ooc(
    store: &mut BlockStore,
    w: usize,
    machine: &MachineModel,
) -> Result<(SpilledQ, DenseMatrix, CostReport)> {
    let spill_backend = match store.path() {
        Some(p) => Backend::File(p.to_path_buf()).sibling(".q"),
        None => Backend::Memory,
    };
    tsqr_factor_ooc_to(store, w, machine, &spill_backend)
}

pub fn tsqr_factor_ooc_to(
    store: &mut BlockStore,
    w: usize,
    machine: &MachineModel,
    spill_backend: &Backend,
) -> Result<(SpilledQ, DenseMatrix, CostReport)> {
    let n = store.n();
    let br = store.block_rows();
    let need = ooc_min_fast_words(n);
    if w < need {
        return Err(Error::Infeasible(format!(
            "fast memory of {w} words is below the required minimum {need} for n={n}"
        )));
    }
    if store.block_col_count() != 1 {
        return Err(Error::InvalidArgument(
            "out-of-core TSQR needs a row-block store".into(),
        ));
    }
    if br < n {
        return Err(Error::InvalidArgument(format!(
            "blocks of {br} rows are shorter than n={n}"
        )));
    }
    let resident = br * n + n * (n + 1) / 2;
    if resident > w {
        return Err(Error::Infeasible(format!(
            "a {br}x{n} block plus R needs {resident} words, fast memory holds {w}"
        )));
    }
    let p = store.block_count();
    let mut spill = BlockStore::empty(store.m(), n, br, true, spill_backend)?;
    let mark = store.log().len();
    let mut fc = FlopCounter::default();

    let b0 = store.read_block(0)?;
    let f0 = qr_unblocked(&b0, &mut fc)?;
    let mut y0 = f0.y.clone();
    for j in 0..n {
        y0[(j, j)] = f0.r[(j, j)];
    }
    spill.write_factor(0, 0, Region::LowerWithDiag { row0: 0 }, &y0, &f0.tau)?;
    let mut r = f0.r;
    for k in 1..p {
        let b = store.read_block(k)?;
        let f = qr_triangle_plus_dense(&r, &b, &mut fc)?;
        let yk = f.y.submatrix(n, 0, br, n);
        spill.write_factor(k, 0, Region::ALL, &yk, &f.tau)?;
        r = f.r;
    }
    spill.flush()?;
    let mut comm = log_delta(store, mark);
    let sc = spill.counters();
    comm.messages += sc.messages;
    comm.words += sc.words;
    let mut report = CostReport::sequential(fc, comm, machine);
    report.notes.push(format!(
        "P={p} blocks of {br} rows; padded rows={}",
        store.padding()
    ));
    Ok((
        SpilledQ {
            store: spill,
            n,
            block_rows: br,
            blocks: p,
        },
        r,
        report,
    ))
}

pub(crate) fn unit_top(n: usize, dense: &DenseMatrix) -> DenseMatrix {
    let mut y = DenseMatrix::zeros(n + dense.rows(), n);
    for j in 0..n {
        y[(j, j)] = 1.0;
    }
    y.set_submatrix(n, 0, dense);
    y
}

/// Apply the spilled Q (or Qᵀ) to the `m × c` matrix held in `c`, in place.
/// Transfers: one factor read plus one read and one write of `C` per block.
pub fn tsqr_apply_ooc(
    q: &mut SpilledQ,
    c: &mut BlockStore,
    transpose: bool,
    w: usize,
    machine: &MachineModel,
) -> Result<CostReport> {
    let (n, br) = (q.n, q.block_rows);
    if c.block_rows() != br || c.block_count() != q.blocks || c.block_col_count() != 1 {
        return Err(Error::Shape(format!(
            "C store has {} blocks of {} rows; Q has {} of {br}",
            c.block_count(),
            c.block_rows(),
            q.blocks
        )));
    }
    let nc = c.n();
    let resident = 2 * br * nc + br * n + n;
    if resident > w {
        return Err(Error::Infeasible(format!(
            "applying to {nc} columns needs {resident} resident words, fast memory holds {w}"
        )));
    }
    let qmark = q.store.log().len();
    let cmark = c.log().len();
    let mut fc = FlopCounter::default();

    let leaf = |q: &mut SpilledQ| -> Result<HouseholderFactor> {
        let (mut y, tau) = q
            .store
            .read_factor(0, 0, Region::StrictlyLower { row0: 0 })?;
        for j in 0..n {
            y[(j, j)] = 1.0;
        }
        Ok(HouseholderFactor {
            y,
            tau,
            r: DenseMatrix::zeros(n, n),
            sparsity: Sparsity::Dense,
        })
    };
    let pair = |q: &mut SpilledQ, k: usize| -> Result<HouseholderFactor> {
        let (yk, tau) = q.store.read_factor(k, 0, Region::ALL)?;
        Ok(HouseholderFactor {
            y: unit_top(n, &yk),
            tau,
            r: DenseMatrix::zeros(n, n),
            sparsity: Sparsity::TrianglePlusDense,
        })
    };
    let combine = |c0: &mut DenseMatrix,
                   ck: DenseMatrix,
                   f: &HouseholderFactor,
                   fc: &mut FlopCounter|
     -> Result<DenseMatrix> {
        let mut stacked = DenseMatrix::vstack(&[&top_rows(c0, n), &ck])?;
        apply_q_in_place(f, &mut stacked, transpose, fc)?;
        c0.set_submatrix(0, 0, &stacked.submatrix(0, 0, n, nc));
        Ok(stacked.submatrix(n, 0, br, nc))
    };

    if transpose {
        let f0 = leaf(q)?;
        let mut c0 = c.read_block(0)?;
        apply_q_in_place(&f0, &mut c0, true, &mut fc)?;
        for k in 1..q.blocks {
            let f = pair(q, k)?;
            let ck = c.read_block(k)?;
            let ck = combine(&mut c0, ck, &f, &mut fc)?;
            c.write_block(k, &ck)?;
        }
        c.write_block(0, &c0)?;
    } else {
        let mut c0 = c.read_block(0)?;
        for k in (1..q.blocks).rev() {
            let f = pair(q, k)?;
            let ck = c.read_block(k)?;
            let ck = combine(&mut c0, ck, &f, &mut fc)?;
            c.write_block(k, &ck)?;
        }
        let f0 = leaf(q)?;
        apply_q_in_place(&f0, &mut c0, false, &mut fc)?;
        c.write_block(0, &c0)?;
    }
    c.flush()?;
    let mut comm = log_delta(&q.store, qmark);
    let cc = log_delta(c, cmark);
    comm.messages += cc.messages;
    comm.words += cc.words;
    Ok(CostReport::sequential(fc, comm, machine))
}
