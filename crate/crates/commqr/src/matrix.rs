//! Column-major dense matrices, conditioned generators and accuracy measures.

use std::fmt::Write as _;
use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::householder::{self, FlopCounter};

/// Name of the generator behind every seeded matrix in this crate.
pub const RNG_NAME: &str = "rand_chacha::ChaCha8Rng (seed_from_u64) + rand_distr::StandardNormal";

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// `rows × cols` identity-like matrix: ones on the leading diagonal.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = values[i * cols + j];
            }
        }
        Self::from_col_major(rows, cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.data[j * rows + i] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Copy of rows `r0..r0+nr`, columns `c0..c0+nc`.
    pub fn submatrix(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_submatrix(&mut self, r0: usize, c0: usize, b: &DenseMatrix) {
        for j in 0..b.cols {
            for i in 0..b.rows {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Gather the listed rows (in order) and columns `c0..c0+nc`.
    pub fn gather_rows(&self, rows: &[usize], c0: usize, nc: usize) -> Self {
        Self::from_fn(rows.len(), nc, |i, j| self[(rows[i], c0 + j)])
    }

    pub fn scatter_rows(&mut self, rows: &[usize], c0: usize, b: &DenseMatrix) {
        for j in 0..b.cols {
            for (i, &r) in rows.iter().enumerate() {
                self[(r, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&DenseMatrix]) -> Result<Self> {
        let cols = blocks
            .first()
            .map(|b| b.cols)
            .ok_or_else(|| Error::Shape("nothing to stack".into()))?;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Shape("stacked blocks differ in column count".into()));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for b in blocks {
            out.set_submatrix(r0, 0, b);
            r0 += b.rows;
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                let a = self.col(k);
                let o = out.col_mut(j);
                for i in 0..a.len() {
                    o[i] += a[i] * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn tmatmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot form AᵀB with A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.cols).all(|j| ((j + 1)..self.rows).all(|i| self[(i, j)] == 0.0))
    }

    /// Flip rows so the diagonal is non-negative. Returns the applied signs.
    pub fn sign_normalize_rows(&mut self) -> Vec<f64> {
        let k = self.rows.min(self.cols);
        let mut signs = vec![1.0; self.rows];
        for (i, s) in signs.iter_mut().enumerate().take(k) {
            if self[(i, i)] < 0.0 {
                *s = -1.0;
                for j in 0..self.cols {
                    self[(i, j)] = -self[(i, j)];
                }
            }
        }
        signs
    }

    /// Flip columns by the given signs (pairs with [`sign_normalize_rows`] on R).
    pub fn scale_columns(&mut self, signs: &[f64]) {
        for (j, &s) in signs.iter().enumerate().take(self.cols) {
            if s < 0.0 {
                for x in self.col_mut(j) {
                    *x = -*x;
                }
            }
        }
    }

    /// Upper triangle of the leading `k × cols` part.
    pub fn upper_triangle(&self, k: usize) -> Self {
        Self::from_fn(k, self.cols, |i, j| if i <= j { self[(i, j)] } else { 0.0 })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{},{}", self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{:?}", self[(i, j)]);
            }
            s.push('\n');
        }
        s
    }

    /// Parse the `m,n` header followed by `m` rows of `n` values.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing `m,n` header".into()))?;
        let dims: Vec<&str> = header.split(',').map(str::trim).collect();
        if dims.len() != 2 {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad dimension `{s}`: {e}")))
        };
        let (m, n) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
        if m == 0 || n == 0 {
            return Err(Error::Parse(format!("empty matrix {m}x{n}")));
        }
        let total = m
            .checked_mul(n)
            .filter(|&t| t <= text.len())
            .ok_or_else(|| Error::Parse(format!("{m}x{n} exceeds the input size")))?;
        let mut values = Vec::with_capacity(total);
        for (row, line) in lines.enumerate() {
            if row >= m {
                return Err(Error::Parse(format!("more than {m} rows")));
            }
            let before = values.len();
            for field in line.split(',') {
                let field = field.trim();
                let v: f64 = field
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {row}: bad value `{field}`: {e}")))?;
                values.push(v);
            }
            if values.len() - before != n {
                return Err(Error::Parse(format!(
                    "row {row} has {} values, expected {n}",
                    values.len() - before
                )));
            }
        }
        if values.len() != total {
            return Err(Error::Parse(format!(
                "expected {m} rows, found {}",
                values.len() / n
            )));
        }
        Self::from_row_major(m, n, &values)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_from(&mut rng, rows, cols)
}

fn gaussian_from(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DenseMatrix { rows, cols, data }
}

fn orthonormal_basis(g: &DenseMatrix) -> DenseMatrix {
    let f = householder::qr_unblocked(g, &mut FlopCounter::default()).expect("tall gaussian block");
    let mut q = householder::explicit_q(&f);
    let mut r = f.r.clone();
    let signs = r.sign_normalize_rows();
    q.scale_columns(&signs);
    q
}

/// `U·diag(σ)·Vᵀ` with σ log-spaced from 1 down to `1/kappa`.
pub fn generate_conditioned(m: usize, n: usize, kappa: f64, seed: u64) -> Result<DenseMatrix> {
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!(
            "need m >= n >= 1, got {m}x{n}"
        )));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kappa must be >= 1, got {kappa}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = orthonormal_basis(&gaussian_from(&mut rng, m, n));
    let v = orthonormal_basis(&gaussian_from(&mut rng, n, n));
    let sigma: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                1.0
            } else {
                kappa.powf(-(k as f64) / (n - 1) as f64)
            }
        })
        .collect();
    let mut us = u;
    for (k, s) in sigma.iter().enumerate() {
        for x in us.col_mut(k) {
            *x *= s;
        }
    }
    us.matmul(&v.transpose())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows;
    let mut a = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = a.data.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Spectral norm of `I − QᵀQ`.
pub fn orthogonality_deviation(q: &DenseMatrix) -> Result<f64> {
    if q.rows < q.cols {
        return Err(Error::Shape(format!(
            "Q must be tall, got {}x{}",
            q.rows, q.cols
        )));
    }
    let mut d = q.tmatmul(q)?;
    for i in 0..d.rows {
        for j in 0..d.cols {
            let id = if i == j { 1.0 } else { 0.0 };
            d[(i, j)] = id - d[(i, j)];
        }
    }
    let ev = symmetric_eigenvalues(&d);
    Ok(ev.iter().fold(0.0, |m: f64, x| m.max(x.abs())))
}

/// Frobenius norm of `I − QᵀQ`, the cheap companion bound.
pub fn orthogonality_deviation_fro(q: &DenseMatrix) -> Result<f64> {
    let mut d = q.tmatmul(q)?;
    for i in 0..d.rows {
        d[(i, i)] -= 1.0;
    }
    Ok(d.frobenius_norm())
}

/// `‖A − QR‖_F / ‖A‖_F`, or the absolute norm when `A = 0`.
pub fn reconstruction_error(a: &DenseMatrix, q: &DenseMatrix, r: &DenseMatrix) -> Result<f64> {
    if q.shape() != a.shape() || r.shape() != (a.cols, a.cols) {
        return Err(Error::Shape(format!(
            "A {:?}, Q {:?}, R {:?} do not conform",
            a.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let mut qr = q.matmul(r)?;
    for (x, y) in qr.data.iter_mut().zip(&a.data) {
        *x -= y;
    }
    let err = qr.frobenius_norm();
    let na = a.frobenius_norm();
    Ok(if na == 0.0 { err } else { err / na })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OrthogonalityReport {
    pub deviation: f64,
    pub reconstruction_error: f64,
}

impl OrthogonalityReport {
    pub fn measure(a: &DenseMatrix, q: &DenseMatrix, r: &DenseMatrix) -> Result<Self> {
        Ok(OrthogonalityReport {
            deviation: orthogonality_deviation(q)?,
            reconstruction_error: reconstruction_error(a, q, r)?,
        })
    }
}
