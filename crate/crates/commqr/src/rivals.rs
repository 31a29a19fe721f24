//! CholeskyQR and the Gram-Schmidt family.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::householder::FlopCounter;
use crate::matrix::{dot, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    CholeskyQr,
    CgsL,
    CgsR,
    MgsL,
    MgsR,
    Cgs2,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::CholeskyQr,
        Method::CgsL,
        Method::CgsR,
        Method::MgsL,
        Method::MgsR,
        Method::Cgs2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::CholeskyQr => "choleskyqr",
            Method::CgsL => "cgs_l",
            Method::CgsR => "cgs_r",
            Method::MgsL => "mgs_l",
            Method::MgsR => "mgs_r",
            Method::Cgs2 => "cgs2",
        }
    }

    pub fn run(&self, a: &DenseMatrix) -> Result<RivalResult> {
        match self {
            Method::CholeskyQr => cholesky_qr(a),
            Method::CgsL => cgs(a, Looking::Left),
            Method::CgsR => cgs(a, Looking::Right),
            Method::MgsL => mgs(a, Looking::Left),
            Method::MgsR => mgs(a, Looking::Right),
            Method::Cgs2 => cgs2(a),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Looking {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RivalResult {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
    pub method: Method,
    pub flops: FlopCounter,
}

fn check_shape(a: &DenseMatrix) -> Result<()> {
    if a.rows() < a.cols() {
        return Err(Error::Shape(format!(
            "need rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

fn norm(v: &[f64], fc: &mut FlopCounter) -> f64 {
    fc.fma(v.len());
    dot(v, v).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64], fc: &mut FlopCounter) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= alpha * xi;
    }
    fc.fma(x.len());
}

/// `Q(:,k) = v / ‖v‖`, or a breakdown if `v` vanished.
fn normalize_into(
    q: &mut DenseMatrix,
    r: &mut DenseMatrix,
    k: usize,
    v: &[f64],
    fc: &mut FlopCounter,
) -> Result<()> {
    let nv = norm(v, fc);
    if !(nv > 0.0) || !nv.is_finite() {
        return Err(Error::Breakdown {
            column: k,
            reason: format!("column norm is {nv}"),
        });
    }
    r[(k, k)] = nv;
    for (qi, vi) in q.col_mut(k).iter_mut().zip(v) {
        *qi = vi / nv;
    }
    fc.div(v.len() + 1);
    Ok(())
}

/// `R = Lᵀ` from the Cholesky factor of `AᵀA`, `Q = A·L⁻ᵀ`.
pub fn cholesky_qr(a: &DenseMatrix) -> Result<RivalResult> {
    check_shape(a)?;
    let (m, n) = a.shape();
    let mut fc = FlopCounter::default();
    // upper triangle of the Gram matrix
    let mut g = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            g[(i, j)] = dot(a.col(i), a.col(j));
        }
        fc.fma(m * (j + 1));
    }
    // right-looking column Cholesky, G = RᵀR
    let mut r = DenseMatrix::zeros(n, n);
    for k in 0..n {
        let d = g[(k, k)];
        if !(d > 0.0) {
            return Err(Error::Breakdown {
                column: k,
                reason: format!("non-positive pivot {d:e} in the Gram matrix"),
            });
        }
        let rkk = d.sqrt();
        r[(k, k)] = rkk;
        fc.div(1);
        for j in k + 1..n {
            r[(k, j)] = g[(k, j)] / rkk;
        }
        fc.div(n - k - 1);
        for j in k + 1..n {
            for i in k + 1..=j {
                g[(i, j)] -= r[(k, i)] * r[(k, j)];
            }
            fc.fma(j - k);
        }
    }
    // Q = A R⁻¹, one row at a time
    let mut q = DenseMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= q[(i, k)] * r[(k, j)];
            }
            q[(i, j)] = s / r[(j, j)];
            fc.fma(j);
        }
        fc.div(n);
    }
    Ok(RivalResult {
        q,
        r,
        method: Method::CholeskyQr,
        flops: fc,
    })
}

pub fn mgs(a: &DenseMatrix, looking: Looking) -> Result<RivalResult> {
    check_shape(a)?;
    let (m, n) = a.shape();
    let mut fc = FlopCounter::default();
    let mut q = DenseMatrix::zeros(m, n);
    let mut r = DenseMatrix::zeros(n, n);
    match looking {
        Looking::Right => {
            let mut w = a.clone();
            for k in 0..n {
                let v = w.col(k).to_vec();
                normalize_into(&mut q, &mut r, k, &v, &mut fc)?;
                for j in k + 1..n {
                    let rkj = dot(q.col(k), w.col(j));
                    fc.fma(m);
                    r[(k, j)] = rkj;
                    axpy(w.col_mut(j), rkj, q.col(k), &mut fc);
                }
            }
        }
        Looking::Left => {
            for k in 0..n {
                let mut v = a.col(k).to_vec();
                for j in 0..k {
                    let rjk = dot(q.col(j), &v);
                    fc.fma(m);
                    r[(j, k)] = rjk;
                    axpy(&mut v, rjk, q.col(j), &mut fc);
                }
                normalize_into(&mut q, &mut r, k, &v, &mut fc)?;
            }
        }
    }
    Ok(RivalResult {
        q,
        r,
        method: if looking == Looking::Left {
            Method::MgsL
        } else {
            Method::MgsR
        },
        flops: fc,
    })
}

pub fn cgs(a: &DenseMatrix, looking: Looking) -> Result<RivalResult> {
    check_shape(a)?;
    let (m, n) = a.shape();
    let mut fc = FlopCounter::default();
    let mut q = DenseMatrix::zeros(m, n);
    let mut r = DenseMatrix::zeros(n, n);
    match looking {
        Looking::Right => {
            let mut v = a.clone();
            for k in 0..n {
                let vk = v.col(k).to_vec();
                normalize_into(&mut q, &mut r, k, &vk, &mut fc)?;
                for j in k + 1..n {
                    r[(k, j)] = dot(q.col(k), a.col(j));
                    fc.fma(m);
                }
                for j in k + 1..n {
                    let rkj = r[(k, j)];
                    axpy(v.col_mut(j), rkj, q.col(k), &mut fc);
                }
            }
        }
        Looking::Left => {
            for k in 0..n {
                let ak = a.col(k);
                for j in 0..k {
                    r[(j, k)] = dot(q.col(j), ak);
                    fc.fma(m);
                }
                let mut v = ak.to_vec();
                for j in 0..k {
                    let rjk = r[(j, k)];
                    axpy(&mut v, rjk, q.col(j), &mut fc);
                }
                normalize_into(&mut q, &mut r, k, &v, &mut fc)?;
            }
        }
    }
    Ok(RivalResult {
        q,
        r,
        method: if looking == Looking::Left {
            Method::CgsL
        } else {
            Method::CgsR
        },
        flops: fc,
    })
}

/// Left-looking CGS with one unconditional second pass per column.
pub fn cgs2(a: &DenseMatrix) -> Result<RivalResult> {
    check_shape(a)?;
    let (m, n) = a.shape();
    let mut fc = FlopCounter::default();
    let mut q = DenseMatrix::zeros(m, n);
    let mut r = DenseMatrix::zeros(n, n);
    for k in 0..n {
        let mut v = a.col(k).to_vec();
        for _pass in 0..2 {
            let c: Vec<f64> = (0..k).map(|j| dot(q.col(j), &v)).collect();
            fc.fma(m * k);
            for (j, &cj) in c.iter().enumerate() {
                axpy(&mut v, cj, q.col(j), &mut fc);
                r[(j, k)] += cj;
            }
            fc.add(k);
        }
        normalize_into(&mut q, &mut r, k, &v, &mut fc)?;
    }
    Ok(RivalResult {
        q,
        r,
        method: Method::Cgs2,
        flops: fc,
    })
}
