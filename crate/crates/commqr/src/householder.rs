//! Householder kernels with operation counting.
//!
//! Every kernel stores the reflector for column `j` with its unit entry in
//! row `j` and walks only the rows that the declared [`Sparsity`] allows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopCounter {
    pub multiplies: u64,
    pub adds: u64,
    pub divides: u64,
}

impl FlopCounter {
    /// `k` fused multiply-adds: one multiply and one add each.
    #[inline]
    pub fn fma(&mut self, k: usize) {
        self.multiplies += k as u64;
        self.adds += k as u64;
    }

    #[inline]
    pub fn mul(&mut self, k: usize) {
        self.multiplies += k as u64;
    }

    #[inline]
    pub fn add(&mut self, k: usize) {
        self.adds += k as u64;
    }

    #[inline]
    pub fn div(&mut self, k: usize) {
        self.divides += k as u64;
    }

    /// Multiplies plus adds.
    pub fn flops(&self) -> u64 {
        self.multiplies + self.adds
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        self.multiplies += other.multiplies;
        self.adds += other.adds;
        self.divides += other.divides;
    }

    pub fn since(&self, earlier: &FlopCounter) -> FlopCounter {
        FlopCounter {
            multiplies: self.multiplies - earlier.multiplies,
            adds: self.adds - earlier.adds,
            divides: self.divides - earlier.divides,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    Dense,
    /// `q` stacked `n × n` upper triangles.
    StackedTriangles(usize),
    /// An `n × n` upper triangle on top of a dense block.
    TrianglePlusDense,
}

impl Sparsity {
    /// Row ranges holding the structural nonzeros of reflector `j`.
    pub fn rows(&self, m: usize, n: usize, j: usize) -> Vec<(usize, usize)> {
        match *self {
            Sparsity::Dense => vec![(j, m)],
            Sparsity::StackedTriangles(q) => {
                let mut v = Vec::with_capacity(q);
                v.push((j, j + 1));
                for b in 1..q {
                    v.push((b * n, b * n + j + 1));
                }
                v
            }
            Sparsity::TrianglePlusDense => vec![(j, j + 1), (n, m)],
        }
    }

    /// Whether entry `(i, c)` of the input may be nonzero.
    pub fn allows(&self, n: usize, i: usize, c: usize) -> bool {
        match *self {
            Sparsity::Dense => true,
            Sparsity::StackedTriangles(_) => i % n <= c,
            Sparsity::TrianglePlusDense => i >= n || i <= c,
        }
    }
}

fn count(ranges: &[(usize, usize)]) -> usize {
    ranges.iter().map(|(a, b)| b - a).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HouseholderFactor {
    /// Householder vectors, unit entry of column `j` in row `j`.
    pub y: DenseMatrix,
    pub tau: Vec<f64>,
    pub r: DenseMatrix,
    pub sparsity: Sparsity,
}

impl HouseholderFactor {
    pub fn rows(&self) -> usize {
        self.y.rows()
    }

    pub fn cols(&self) -> usize {
        self.y.cols()
    }

    fn ranges(&self, j: usize) -> Vec<(usize, usize)> {
        self.sparsity.rows(self.rows(), self.cols(), j)
    }

    /// Lower `n × n` block of a two-triangle stacked factor.
    pub fn lower_triangle_block(&self) -> DenseMatrix {
        let n = self.cols();
        self.y.submatrix(n, 0, n, n)
    }

    /// Words needed to ship the reflectors and τ (structural nonzeros only).
    pub fn payload_words(&self) -> usize {
        let n = self.cols();
        (0..n).map(|j| count(&self.ranges(j)) - 1).sum::<usize>() + n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactT {
    pub t: DenseMatrix,
}

/// Reflector `(I − τvvᵀ)` that maps `w` to `(ρ, 0, …, 0)`, with `v[0] = 1`.
pub fn house(w: &[f64]) -> (Vec<f64>, f64) {
    let mut v = w.to_vec();
    let (tau, _) = house_in_place(&mut v, &mut FlopCounter::default());
    if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    (v, tau)
}

/// Overwrites `x` with `(ρ, v[1..])` and returns `(τ, ρ)`.
fn house_in_place(x: &mut [f64], fc: &mut FlopCounter) -> (f64, f64) {
    let alpha = x[0];
    let k = x.len();
    let sigma: f64 = x[1..].iter().map(|t| t * t).sum();
    fc.fma(k - 1);
    if sigma == 0.0 && alpha >= 0.0 {
        return (0.0, alpha);
    }
    let norm = (alpha * alpha + sigma).sqrt();
    fc.fma(1);
    fc.div(1);
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let tau = (beta - alpha) / beta;
    let scale = alpha - beta;
    fc.add(2);
    fc.div(1);
    for t in &mut x[1..] {
        *t /= scale;
    }
    fc.div(k - 1);
    x[0] = beta;
    (tau, beta)
}

struct Touch<'a> {
    map: Option<&'a mut Vec<bool>>,
    rows: usize,
}

impl Touch<'_> {
    #[inline]
    fn mark(&mut self, ranges: &[(usize, usize)], c: usize) {
        if let Some(map) = self.map.as_deref_mut() {
            for &(a, b) in ranges {
                for i in a..b {
                    map[c * self.rows + i] = true;
                }
            }
        }
    }
}

/// Column sweep over the structural nonzeros. Leaves R in the top `n` rows
/// and the vector tails in place below.
fn factor_in_place(
    a: &mut DenseMatrix,
    sparsity: Sparsity,
    fc: &mut FlopCounter,
    mut touch: Touch<'_>,
) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut tau = vec![0.0; n];
    let mut w = Vec::with_capacity(m);
    for j in 0..n {
        let ranges = sparsity.rows(m, n, j);
        touch.mark(&ranges, j);
        w.clear();
        for &(s, e) in &ranges {
            w.extend_from_slice(&a.col(j)[s..e]);
        }
        let (t, _) = house_in_place(&mut w, fc);
        tau[j] = t;
        let mut k = 0;
        for &(s, e) in &ranges {
            a.col_mut(j)[s..e].copy_from_slice(&w[k..k + e - s]);
            k += e - s;
        }
        if t == 0.0 {
            continue;
        }
        w[0] = 1.0;
        let kj = w.len();
        for c in (j + 1)..n {
            touch.mark(&ranges, c);
            let col = a.col_mut(c);
            let mut s = 0.0;
            let mut k = 0;
            for &(rs, re) in &ranges {
                for i in rs..re {
                    s += w[k] * col[i];
                    k += 1;
                }
            }
            s *= t;
            let mut k = 0;
            for &(rs, re) in &ranges {
                for i in rs..re {
                    col[i] -= w[k] * s;
                    k += 1;
                }
            }
            fc.fma(2 * kj);
            fc.mul(1);
        }
    }
    tau
}

fn split_factor(a: DenseMatrix, tau: Vec<f64>, sparsity: Sparsity) -> HouseholderFactor {
    let (m, n) = a.shape();
    let r = a.upper_triangle(n);
    let mut y = DenseMatrix::zeros(m, n);
    for j in 0..n {
        for (s, e) in sparsity.rows(m, n, j) {
            for i in s..e {
                y[(i, j)] = a[(i, j)];
            }
        }
        y[(j, j)] = 1.0;
    }
    HouseholderFactor {
        y,
        tau,
        r,
        sparsity,
    }
}

/// Column-by-column Householder QR.
pub fn qr_unblocked(a: &DenseMatrix, fc: &mut FlopCounter) -> Result<HouseholderFactor> {
    if a.rows() < a.cols() {
        return Err(Error::Shape(format!(
            "qr needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut work = a.clone();
    let rows = work.rows();
    let tau = factor_in_place(&mut work, Sparsity::Dense, fc, Touch { map: None, rows });
    Ok(split_factor(work, tau, Sparsity::Dense))
}

/// QR of `q` stacked upper triangles, touching only structural nonzeros.
pub fn qr_stacked_triangles(
    blocks: &[&DenseMatrix],
    fc: &mut FlopCounter,
) -> Result<HouseholderFactor> {
    if cfg!(debug_assertions) {
        let (f, touched) = qr_stacked_triangles_traced(blocks, fc)?;
        let (m, n) = f.y.shape();
        for c in 0..n {
            for i in 0..m {
                debug_assert!(
                    !touched[c * m + i] || f.sparsity.allows(n, i, c),
                    "structural zero ({i},{c}) touched"
                );
            }
        }
        Ok(f)
    } else {
        stacked_impl(blocks, fc, None)
    }
}

/// Same as [`qr_stacked_triangles`], also returning the touched-entry map
/// (column-major, `qn × n`).
pub fn qr_stacked_triangles_traced(
    blocks: &[&DenseMatrix],
    fc: &mut FlopCounter,
) -> Result<(HouseholderFactor, Vec<bool>)> {
    let mut map = Vec::new();
    let f = stacked_impl(blocks, fc, Some(&mut map))?;
    Ok((f, map))
}

fn stacked_impl(
    blocks: &[&DenseMatrix],
    fc: &mut FlopCounter,
    map: Option<&mut Vec<bool>>,
) -> Result<HouseholderFactor> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Shape("no blocks to stack".into()))?;
    let n = first.cols();
    for (b, blk) in blocks.iter().enumerate() {
        if blk.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "block {b} is {:?}, expected {n}x{n}",
                blk.shape()
            )));
        }
        if !blk.is_upper_triangular() {
            return Err(Error::InvalidArgument(format!(
                "block {b} is not upper triangular"
            )));
        }
    }
    let q = blocks.len();
    let mut work = DenseMatrix::vstack(blocks)?;
    let rows = work.rows();
    let map = map.map(|m| {
        m.clear();
        m.resize(rows * n, false);
        m
    });
    let sp = Sparsity::StackedTriangles(q);
    let tau = factor_in_place(&mut work, sp, fc, Touch { map, rows });
    Ok(split_factor(work, tau, sp))
}

/// QR of an upper triangle stacked on a dense `p × n` block.
pub fn qr_triangle_plus_dense(
    r_top: &DenseMatrix,
    b: &DenseMatrix,
    fc: &mut FlopCounter,
) -> Result<HouseholderFactor> {
    let n = r_top.cols();
    if r_top.rows() != n || b.cols() != n {
        return Err(Error::Shape(format!(
            "top {:?} and bottom {:?} do not conform",
            r_top.shape(),
            b.shape()
        )));
    }
    if !r_top.is_upper_triangular() {
        return Err(Error::InvalidArgument(
            "top block is not upper triangular".into(),
        ));
    }
    let mut work = DenseMatrix::vstack(&[r_top, b])?;
    let rows = work.rows();
    let sp = Sparsity::TrianglePlusDense;
    let tau = factor_in_place(&mut work, sp, fc, Touch { map: None, rows });
    Ok(split_factor(work, tau, sp))
}

/// Apply `Q` or `Qᵀ` one reflector at a time.
pub fn apply_q(
    f: &HouseholderFactor,
    c: &DenseMatrix,
    transpose: bool,
    fc: &mut FlopCounter,
) -> Result<DenseMatrix> {
    let mut out = c.clone();
    apply_q_in_place(f, &mut out, transpose, fc)?;
    Ok(out)
}

pub fn apply_q_in_place(
    f: &HouseholderFactor,
    c: &mut DenseMatrix,
    transpose: bool,
    fc: &mut FlopCounter,
) -> Result<()> {
    if c.rows() != f.rows() {
        return Err(Error::Shape(format!(
            "factor has {} rows, operand has {}",
            f.rows(),
            c.rows()
        )));
    }
    let n = f.cols();
    let order: Box<dyn Iterator<Item = usize>> = if transpose {
        Box::new(0..n)
    } else {
        Box::new((0..n).rev())
    };
    for j in order {
        let t = f.tau[j];
        if t == 0.0 {
            continue;
        }
        let ranges = f.ranges(j);
        let kj = count(&ranges);
        let v = f.y.col(j);
        for cc in 0..c.cols() {
            let col = c.col_mut(cc);
            let mut s = 0.0;
            for &(a, b) in &ranges {
                for i in a..b {
                    s += v[i] * col[i];
                }
            }
            s *= t;
            for &(a, b) in &ranges {
                for i in a..b {
                    col[i] -= v[i] * s;
                }
            }
            fc.fma(2 * kj);
            fc.mul(1);
        }
    }
    Ok(())
}

/// Thin `m × n` Q.
pub fn explicit_q(f: &HouseholderFactor) -> DenseMatrix {
    let e = DenseMatrix::eye(f.rows(), f.cols());
    apply_q(f, &e, false, &mut FlopCounter::default()).expect("conforming identity")
}

/// Upper triangular T with `ρ₁⋯ρ_n = I + Y·T·Yᵀ`, given `gram(i, j) = y_iᵀ y_j`.
fn t_from_gram(
    tau: &[f64],
    mut gram: impl FnMut(usize, usize, &mut FlopCounter) -> f64,
    fc: &mut FlopCounter,
) -> DenseMatrix {
    let n = tau.len();
    let mut t = DenseMatrix::zeros(n, n);
    let mut g = vec![0.0; n];
    for j in 0..n {
        t[(j, j)] = -tau[j];
        if j == 0 || tau[j] == 0.0 {
            continue;
        }
        for (i, gi) in g.iter_mut().enumerate().take(j) {
            *gi = gram(i, j, fc);
        }
        for i in 0..j {
            let mut z = 0.0;
            for k in i..j {
                z += t[(i, k)] * g[k];
            }
            fc.fma(j - i);
            t[(i, j)] = -tau[j] * z;
        }
        fc.mul(j);
    }
    t
}

pub fn form_t(f: &HouseholderFactor, fc: &mut FlopCounter) -> CompactT {
    let t = t_from_gram(
        &f.tau,
        |i, j, fc| {
            let (yi, yj) = (f.y.col(i), f.y.col(j));
            let mut s = 0.0;
            let ranges = f.ranges(j);
            for &(a, b) in &ranges {
                for r in a..b {
                    s += yi[r] * yj[r];
                }
            }
            fc.fma(count(&ranges));
            s
        },
        fc,
    );
    CompactT { t }
}

/// `C ← (I + Y·T·Yᵀ)·C` or its transpose, using the compact form.
pub fn apply_compact(
    f: &HouseholderFactor,
    t: &CompactT,
    c: &mut DenseMatrix,
    transpose: bool,
    fc: &mut FlopCounter,
) -> Result<()> {
    if c.rows() != f.rows() {
        return Err(Error::Shape(format!(
            "factor has {} rows, operand has {}",
            f.rows(),
            c.rows()
        )));
    }
    let n = f.cols();
    let nc = c.cols();
    let ranges: Vec<_> = (0..n).map(|j| f.ranges(j)).collect();
    // W = Yᵀ C
    let mut w = DenseMatrix::zeros(n, nc);
    for cc in 0..nc {
        let col = c.col(cc);
        for j in 0..n {
            let y = f.y.col(j);
            let mut s = 0.0;
            for &(a, b) in &ranges[j] {
                for i in a..b {
                    s += y[i] * col[i];
                }
            }
            fc.fma(count(&ranges[j]));
            w[(j, cc)] = s;
        }
    }
    // W ← Tᵀ W or T W
    let w = tri_mul(&t.t, &w, transpose, fc);
    // C += Y W
    for cc in 0..nc {
        for j in 0..n {
            let s = w[(j, cc)];
            let y = f.y.col(j);
            let col = c.col_mut(cc);
            for &(a, b) in &ranges[j] {
                for i in a..b {
                    col[i] += y[i] * s;
                }
            }
            fc.fma(count(&ranges[j]));
        }
    }
    Ok(())
}

/// `T·W` or `Tᵀ·W` for upper triangular `T`.
fn tri_mul(t: &DenseMatrix, w: &DenseMatrix, transpose: bool, fc: &mut FlopCounter) -> DenseMatrix {
    let n = t.rows();
    DenseMatrix::from_fn(n, w.cols(), |i, c| {
        let mut s = 0.0;
        if transpose {
            for k in 0..=i {
                s += t[(k, i)] * w[(k, c)];
            }
            fc.fma(i + 1);
        } else {
            for k in i..n {
                s += t[(i, k)] * w[(k, c)];
            }
            fc.fma(n - i);
        }
        s
    })
}

/// Apply `Qᵀ` of a two-triangle stacked factor to `[C0; C1]`, given the
/// lower triangle `y1` of its Householder vectors.
///
/// With `Q = I + Y·T·Yᵀ` and `Y = [I; Y1]`: `D = C0 + Y1ᵀC1`, `W = TᵀD`,
/// `C0' = C0 + W`, `C1' = C1 + Y1·W`.
pub fn update_pair(
    y1: &DenseMatrix,
    tau: &[f64],
    c0: &DenseMatrix,
    c1: &DenseMatrix,
    fc: &mut FlopCounter,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = y1.cols();
    if y1.rows() != n
        || tau.len() != n
        || c0.rows() != n
        || c1.rows() != n
        || c0.cols() != c1.cols()
    {
        return Err(Error::Shape(format!(
            "update_pair: Y1 {:?}, tau {}, C0 {:?}, C1 {:?}",
            y1.shape(),
            tau.len(),
            c0.shape(),
            c1.shape()
        )));
    }
    let t = t_from_gram(
        tau,
        |i, j, fc| {
            // columns i < j of an upper triangle overlap in rows 0..=i
            let s = (0..=i).map(|r| y1[(r, i)] * y1[(r, j)]).sum();
            fc.fma(i + 1);
            s
        },
        fc,
    );
    let nc = c0.cols();
    let mut d = c0.clone();
    for cc in 0..nc {
        for i in 0..n {
            let mut s = 0.0;
            for r in 0..=i {
                s += y1[(r, i)] * c1[(r, cc)];
            }
            fc.fma(i + 1);
            d[(i, cc)] += s;
        }
    }
    let w = tri_mul(&t, &d, true, fc);
    let mut out0 = c0.clone();
    let mut out1 = c1.clone();
    for cc in 0..nc {
        for i in 0..n {
            out0[(i, cc)] += w[(i, cc)];
            let mut s = 0.0;
            for k in i..n {
                s += y1[(i, k)] * w[(k, cc)];
            }
            out1[(i, cc)] += s;
            fc.fma(n - i);
        }
        fc.add(n);
    }
    Ok((out0, out1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::gaussian;

    fn apply_reflector(v: &[f64], tau: f64, w: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
        w.iter().zip(v).map(|(x, vi)| x - tau * vi * s).collect()
    }

    #[test]
    fn house_three_four() {
        let (v, tau) = house(&[3.0, 4.0]);
        let out = apply_reflector(&v, tau, &[3.0, 4.0]);
        assert!((out[0] + 5.0).abs() < 1e-14);
        assert!(out[1].abs() < 1e-14);
    }

    #[test]
    fn house_noop_cases() {
        assert_eq!(house(&[1.0, 0.0, 0.0]), (vec![1.0, 0.0, 0.0], 0.0));
        assert_eq!(house(&[0.0, 0.0]), (vec![1.0, 0.0], 0.0));
    }

    #[test]
    fn house_negative_pivot_without_tail_flips() {
        let (v, tau) = house(&[-3.0, 0.0]);
        let out = apply_reflector(&v, tau, &[-3.0, 0.0]);
        assert_eq!(out, vec![3.0, 0.0]);
    }

    #[test]
    fn identity_factor_is_trivial() {
        let f = qr_unblocked(&DenseMatrix::identity(4), &mut FlopCounter::default()).unwrap();
        assert_eq!(f.r, DenseMatrix::identity(4));
        assert!(f.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn upper_triangular_input_is_kept() {
        let a = DenseMatrix::from_fn(3, 3, |i, j| if i <= j { 1.0 + (i + j) as f64 } else { 0.0 });
        let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
        assert_eq!(f.r, a);
        assert!(f.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn wide_input_rejected() {
        assert!(qr_unblocked(&DenseMatrix::zeros(2, 3), &mut FlopCounter::default()).is_err());
    }

    #[test]
    fn stacked_rejects_non_triangular_block() {
        let mut b = DenseMatrix::identity(2);
        b[(1, 0)] = 1.0;
        let i = DenseMatrix::identity(2);
        assert!(qr_stacked_triangles(&[&i, &b], &mut FlopCounter::default()).is_err());
    }

    #[test]
    fn two_identities_give_sqrt_two() {
        let i = DenseMatrix::identity(2);
        let mut f = qr_stacked_triangles(&[&i, &i], &mut FlopCounter::default()).unwrap();
        f.r.sign_normalize_rows();
        let expect = DenseMatrix::from_fn(2, 2, |i, j| if i == j { 2f64.sqrt() } else { 0.0 });
        assert!(f.r.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn single_block_costs_nothing() {
        let a = DenseMatrix::from_fn(4, 4, |i, j| if i <= j { 1.0 } else { 0.0 });
        let mut fc = FlopCounter::default();
        let f = qr_stacked_triangles(&[&a], &mut fc).unwrap();
        assert_eq!(f.r, a);
        assert_eq!(fc.flops(), 0);
    }

    #[test]
    fn form_t_single_column() {
        let a = gaussian(5, 1, 3);
        let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
        let t = form_t(&f, &mut FlopCounter::default());
        assert_eq!(t.t[(0, 0)], -f.tau[0]);
    }

    #[test]
    fn compact_apply_matches_reflectors() {
        let a = gaussian(12, 4, 5);
        let c = gaussian(12, 3, 6);
        let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
        let t = form_t(&f, &mut FlopCounter::default());
        for tr in [false, true] {
            let want = apply_q(&f, &c, tr, &mut FlopCounter::default()).unwrap();
            let mut got = c.clone();
            apply_compact(&f, &t, &mut got, tr, &mut FlopCounter::default()).unwrap();
            assert!(want.max_abs_diff(&got) < 1e-13);
        }
    }

    #[test]
    fn update_pair_identity_when_tau_zero() {
        let y1 = DenseMatrix::zeros(3, 3);
        let c0 = gaussian(3, 2, 1);
        let c1 = gaussian(3, 2, 2);
        let (a, b) = update_pair(&y1, &[0.0; 3], &c0, &c1, &mut FlopCounter::default()).unwrap();
        assert_eq!(a, c0);
        assert_eq!(b, c1);
    }
}
