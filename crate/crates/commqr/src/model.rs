//! Closed-form α-β-γ runtime models, the block-size/grid optimizer and the
//! speedup sweeps built on them.
//!
//! All logarithms are base 2. Counts are real numbers: the models are
//! evaluated at non-integer `n` such as `10^3.5`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::machine::MachineModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    TsqrPar,
    TsqrSeq,
    TsqrSeqApply,
    CaqrPar,
    CaqrParSquare,
    CaqrSeq,
    Pdgeqrf,
    PdgeqrfSquare,
    Pfdgeqrf,
    CholeskyQrPar,
    CholeskyQrSeq,
    MgsPar,
    MgsSeqLeft,
    CgsSeqLeft,
}

impl Algorithm {
    pub const ALL: [Algorithm; 14] = [
        Algorithm::TsqrPar,
        Algorithm::TsqrSeq,
        Algorithm::TsqrSeqApply,
        Algorithm::CaqrPar,
        Algorithm::CaqrParSquare,
        Algorithm::CaqrSeq,
        Algorithm::Pdgeqrf,
        Algorithm::PdgeqrfSquare,
        Algorithm::Pfdgeqrf,
        Algorithm::CholeskyQrPar,
        Algorithm::CholeskyQrSeq,
        Algorithm::MgsPar,
        Algorithm::MgsSeqLeft,
        Algorithm::CgsSeqLeft,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::TsqrPar => "tsqr_par",
            Algorithm::TsqrSeq => "tsqr_seq",
            Algorithm::TsqrSeqApply => "tsqr_seq_apply",
            Algorithm::CaqrPar => "caqr_par",
            Algorithm::CaqrParSquare => "caqr_par_square",
            Algorithm::CaqrSeq => "caqr_seq",
            Algorithm::Pdgeqrf => "pdgeqrf",
            Algorithm::PdgeqrfSquare => "pdgeqrf_square",
            Algorithm::Pfdgeqrf => "pfdgeqrf",
            Algorithm::CholeskyQrPar => "cholesky_qr_par",
            Algorithm::CholeskyQrSeq => "cholesky_qr_seq",
            Algorithm::MgsPar => "mgs_par",
            Algorithm::MgsSeqLeft => "mgs_seq_left",
            Algorithm::CgsSeqLeft => "cgs_seq_left",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

/// Problem and tuning parameters. Unused fields stay `None`.
///
/// `c` is the number of columns of `C` for `tsqr_seq_apply` and the
/// current-panel width for the general `pfdgeqrf` form.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModelParams {
    pub m: f64,
    pub n: f64,
    pub p: Option<f64>,
    pub w: Option<f64>,
    pub b: Option<f64>,
    pub pr: Option<f64>,
    pub pc: Option<f64>,
    pub c: Option<f64>,
}

impl ModelParams {
    pub fn new(m: f64, n: f64) -> Self {
        ModelParams {
            m,
            n,
            ..Default::default()
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_w(mut self, w: f64) -> Self {
        self.w = Some(w);
        self
    }

    pub fn with_b(mut self, b: f64) -> Self {
        self.b = Some(b);
        self
    }

    pub fn with_grid(mut self, pr: f64, pc: f64) -> Self {
        self.pr = Some(pr);
        self.pc = Some(pc);
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = Some(c);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fractions {
    pub latency: f64,
    pub bandwidth: f64,
    pub compute: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelPrediction {
    pub algorithm: Algorithm,
    pub params: ModelParams,
    /// modeled message count
    pub messages: f64,
    pub words: f64,
    pub flops: f64,
    pub divides: f64,
    pub latency_time: f64,
    pub bandwidth_time: f64,
    pub compute_time: f64,
    pub time: f64,
}

impl ModelPrediction {
    fn new(
        algorithm: Algorithm,
        params: ModelParams,
        counts: Counts,
        machine: &MachineModel,
    ) -> Self {
        let latency_time = machine.alpha * counts.messages;
        let bandwidth_time = machine.beta * counts.words;
        let compute_time = machine.gamma * counts.flops + machine.gamma_d * counts.divides;
        ModelPrediction {
            algorithm,
            params,
            messages: counts.messages,
            words: counts.words,
            flops: counts.flops,
            divides: counts.divides,
            latency_time,
            bandwidth_time,
            compute_time,
            time: latency_time + bandwidth_time + compute_time,
        }
    }

    pub fn fractions(&self) -> Fractions {
        if self.time == 0.0 {
            return Fractions {
                latency: 0.0,
                bandwidth: 0.0,
                compute: 1.0,
            };
        }
        let latency = self.latency_time / self.time;
        let bandwidth = self.bandwidth_time / self.time;
        Fractions {
            latency,
            bandwidth,
            compute: 1.0 - latency - bandwidth,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Counts {
    messages: f64,
    words: f64,
    flops: f64,
    divides: f64,
}

fn lg(x: f64) -> f64 {
    x.log2()
}

fn violated(alg: Algorithm, what: String) -> Error {
    Error::InvalidArgument(format!("{alg}: constraint violated: {what}"))
}

fn need(alg: Algorithm, v: Option<f64>, name: &str) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() && x > 0.0 => Ok(x),
        Some(x) => Err(violated(alg, format!("{name} = {x} must be positive"))),
        None => Err(Error::InvalidArgument(format!(
            "{alg}: missing parameter {name}"
        ))),
    }
}

fn check(alg: Algorithm, ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(violated(alg, what()))
    }
}

/// Grid checks shared by the 2-D parallel models.
fn grid(alg: Algorithm, p: &ModelParams) -> Result<(f64, f64, f64)> {
    let b = need(alg, p.b, "b")?;
    let pr = need(alg, p.pr, "Pr")?;
    let pc = need(alg, p.pc, "Pc")?;
    if let Some(pp) = p.p {
        check(alg, (pr * pc - pp).abs() < 0.5, || {
            format!("Pr*Pc = {} != P = {pp}", pr * pc)
        })?;
    }
    check(alg, b <= p.m / pr, || {
        format!("b = {b} > m/Pr = {}", p.m / pr)
    })?;
    check(alg, b <= p.n / pc, || {
        format!("b = {b} > n/Pc = {}", p.n / pc)
    })?;
    Ok((b, pr, pc))
}

fn tsqr_seq_counts(m: f64, n: f64, p: f64) -> Counts {
    Counts {
        messages: 2.0 * p,
        words: 2.0 * m * n + n * p - n * (n - 1.0) / 2.0,
        flops: 2.0 * m * n * n - 2.0 * n * n * n / 3.0,
        divides: 0.0,
    }
}

fn tsqr_seq_apply_counts(m: f64, n: f64, c: f64, p: f64) -> Counts {
    Counts {
        messages: 3.0 * p,
        words: (2.0 * c + n) * m + n * p - n * (n + 1.0) / 2.0,
        flops: 4.0 * c * m * n - 2.0 * c * n * n,
        divides: 0.0,
    }
}

/// Sequential CAQR as a sum of per-panel sequential TSQR factorizations
/// and applies, over the blocks actually left in each panel.
fn caqr_seq_sum(m: f64, n: f64, pr: f64, pc: f64) -> Counts {
    let (mb, nb) = (m / pr, n / pc);
    let mut t = Counts::default();
    let panels = pc.round() as u64;
    for j in 0..panels {
        let jf = j as f64;
        let top = (jf * nb / mb).floor();
        let blocks = pr - top;
        let rows = m - jf * nb;
        let f = tsqr_seq_counts(rows, nb, blocks);
        let k = pc - jf - 1.0;
        let a = tsqr_seq_apply_counts(rows, nb, nb, blocks);
        t.messages += f.messages + k * a.messages;
        t.words += f.words + k * a.words;
        t.flops += f.flops + k * a.flops;
    }
    t
}

/// Evaluate one closed-form model.
pub fn evaluate(
    alg: Algorithm,
    p: &ModelParams,
    machine: &MachineModel,
) -> Result<ModelPrediction> {
    let (m, n) = (p.m, p.n);
    check(alg, m.is_finite() && n.is_finite() && n >= 1.0, || {
        format!("n = {n} must be at least 1")
    })?;
    check(alg, m >= n, || format!("m = {m} < n = {n}"))?;
    let nn = n * n;
    let counts = match alg {
        Algorithm::TsqrPar => {
            let pp = need(alg, p.p, "P")?;
            check(alg, m / pp >= n, || format!("m/P = {} < n = {n}", m / pp))?;
            Counts {
                messages: lg(pp),
                words: lg(pp) * n * (n + 1.0) / 2.0,
                flops: 2.0 * m * nn / pp - nn * n / 3.0 + 2.0 / 3.0 * nn * n * lg(pp),
                divides: 0.0,
            }
        }
        Algorithm::TsqrSeq => match (p.p, p.w) {
            (Some(_), _) => {
                let pp = need(alg, p.p, "P")?;
                check(alg, m / pp >= n, || format!("m/P = {} < n = {n}", m / pp))?;
                tsqr_seq_counts(m, n, pp)
            }
            (None, Some(_)) => {
                let w = need(alg, p.w, "W")?;
                let tri = n * (n + 1.0) / 2.0;
                check(alg, w > tri, || format!("W = {w} <= n(n+1)/2 = {tri}"))?;
                let d = w - tri;
                Counts {
                    messages: 2.0 * m * n / d,
                    words: 2.0 * m * n - tri + m * nn / d,
                    flops: 2.0 * m * nn - 2.0 * nn * n / 3.0,
                    divides: 0.0,
                }
            }
            (None, None) => return Err(Error::InvalidArgument(format!("{alg}: need P or W"))),
        },
        Algorithm::TsqrSeqApply => {
            let pp = need(alg, p.p, "P")?;
            let c = need(alg, p.c, "c")?;
            check(alg, m / pp >= n, || format!("m/P = {} < n = {n}", m / pp))?;
            tsqr_seq_apply_counts(m, n, c, pp)
        }
        Algorithm::CaqrPar => {
            let (b, pr, pc) = grid(alg, p)?;
            let pp = pr * pc;
            let (lr, lc) = (lg(pr), lg(pc));
            Counts {
                messages: 3.0 * n / b * lr + 2.0 * n / b * lc,
                words: (nn / pc + b * n / 2.0) * lr + ((m * n - nn / 2.0) / pr + 2.0 * n) * lc,
                flops: 2.0 * nn * (3.0 * m - n) / (3.0 * pp)
                    + b * nn / (2.0 * pc)
                    + 3.0 * b * n * (2.0 * m - n) / (2.0 * pr)
                    + (4.0 * b * b * n / 3.0 + nn * (3.0 * b + 5.0) / (2.0 * pc)) * lr
                    - b * b * n,
                divides: (m * n - nn / 2.0) / pr + b * n / 2.0 * (lr - 1.0),
            }
        }
        Algorithm::CaqrParSquare => {
            let (pp, b) = square(alg, p)?;
            let sq = pp.sqrt();
            Counts {
                messages: 5.0 * n / (2.0 * b) * lg(pp),
                words: 3.0 * nn / (4.0 * sq) * lg(pp),
                flops: 4.0 * nn * n / (3.0 * pp) + 3.0 * nn * b / (4.0 * sq) * lg(pp),
                divides: 0.0,
            }
        }
        Algorithm::CaqrSeq => match (p.pr, p.pc, p.w) {
            (Some(_), Some(_), _) => {
                let pr = need(alg, p.pr, "Pr")?;
                let pc = need(alg, p.pc, "Pc")?;
                check(alg, m / pr >= n / pc, || {
                    format!("m/Pr = {} < n/Pc = {}", m / pr, n / pc)
                })?;
                caqr_seq_sum(m, n, pr, pc)
            }
            (_, _, Some(_)) => {
                let w = need(alg, p.w, "W")?;
                Counts {
                    messages: 12.0 * m * nn / w.powf(1.5),
                    words: 3.0 * m * nn / w.sqrt(),
                    flops: 2.0 * m * nn - 2.0 * nn * n / 3.0,
                    divides: 0.0,
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{alg}: need Pr and Pc, or W"
                )))
            }
        },
        Algorithm::Pdgeqrf => {
            let (b, pr, pc) = grid(alg, p)?;
            let pp = pr * pc;
            let (lr, lc) = (lg(pr), lg(pc));
            Counts {
                messages: 3.0 * n * (1.0 + 1.0 / b) * lr + 2.0 * n / b * lc,
                words: (nn / pc + n * (b + 2.0)) * lr
                    + ((m * n - nn / 2.0) / pr + n * b / 2.0) * lc,
                flops: 2.0 * nn * (3.0 * m - n) / (3.0 * pp)
                    + 3.0 * (b + 1.0) * n * (m - n / 2.0) / pr
                    + b * nn / (2.0 * pc)
                    - b * n * (b / 3.0 + 1.5),
                divides: (m * n - nn / 2.0) / pr,
            }
        }
        Algorithm::PdgeqrfSquare => {
            let (pp, b) = square(alg, p)?;
            Counts {
                messages: (1.5 + 5.0 / (2.0 * b)) * n * lg(pp),
                words: 0.75 * lg(pp) * nn / pp.sqrt(),
                flops: 4.0 / 3.0 * nn * n / pp,
                divides: 0.0,
            }
        }
        Algorithm::Pfdgeqrf => match (p.b, p.c, p.w) {
            (Some(_), Some(_), _) => {
                let b = need(alg, p.b, "b")?;
                let c = need(alg, p.c, "c")?;
                if let Some(w) = p.w {
                    check(alg, (b + c) * m <= w, || {
                        format!("(b+c)m = {} > W = {w}", (b + c) * m)
                    })?;
                }
                Counts {
                    messages: nn / (2.0 * b * c) + 2.0 * n / c - n / (2.0 * b),
                    words: (1.5 * m * n - 0.75 * nn + 1.5 * n) + b * n / 4.0 - 13.0 * c * n / 12.0
                        + (m * nn / 2.0 - nn * n / 6.0 + nn / 2.0 - b * nn / 4.0) / c,
                    flops: 2.0 * m * nn - 2.0 * nn * n / 3.0,
                    divides: 0.0,
                }
            }
            (_, _, Some(_)) => {
                let w = need(alg, p.w, "W")?;
                check(alg, w >= 2.0 * m, || format!("W = {w} < 2m = {}", 2.0 * m))?;
                Counts {
                    messages: 2.0 * m * n / w + m * nn / (2.0 * w) - n / 2.0,
                    words: 1.5 * m * n - 0.75 * nn + m * n / w * (m * n / 2.0 - nn / 6.0),
                    flops: 2.0 * m * nn - 2.0 * nn * n / 3.0,
                    divides: 0.0,
                }
            }
            _ => return Err(Error::InvalidArgument(format!("{alg}: need b and c, or W"))),
        },
        Algorithm::CholeskyQrPar => {
            let pp = need(alg, p.p, "P")?;
            check(alg, m / pp >= n, || format!("m/P = {} < n = {n}", m / pp))?;
            Counts {
                messages: lg(pp),
                words: nn / 2.0 * lg(pp),
                flops: 2.0 * m * nn / pp + nn * n / 3.0,
                divides: 0.0,
            }
        }
        Algorithm::CholeskyQrSeq => {
            let w = need(alg, p.w, "W")?;
            Counts {
                messages: 6.0 * m * n / w,
                words: 3.0 * m * n,
                flops: 2.0 * m * nn + nn * n / 3.0,
                divides: 0.0,
            }
        }
        Algorithm::MgsPar => {
            let pp = need(alg, p.p, "P")?;
            check(alg, m / pp >= n, || format!("m/P = {} < n = {n}", m / pp))?;
            Counts {
                messages: 2.0 * n * lg(pp),
                words: nn / 2.0 * lg(pp),
                flops: 2.0 * m * nn / pp,
                divides: 0.0,
            }
        }
        Algorithm::MgsSeqLeft | Algorithm::CgsSeqLeft => {
            let w = need(alg, p.w, "W")?;
            let d = 2.0 * w - n * (n + 1.0);
            check(alg, d > 0.0, || {
                format!("2W = {} <= n(n+1) = {}", 2.0 * w, n * (n + 1.0))
            })?;
            Counts {
                messages: m * nn / d,
                words: 1.5 * m * n + m * m * nn / d,
                flops: 2.0 * m * nn,
                divides: 0.0,
            }
        }
    };
    Ok(ModelPrediction::new(alg, *p, counts, machine))
}

fn square(alg: Algorithm, p: &ModelParams) -> Result<(f64, f64)> {
    check(alg, p.m == p.n, || {
        format!("square form needs m = n, got {} x {}", p.m, p.n)
    })?;
    let pp = need(alg, p.p, "P")?;
    let b = need(alg, p.b, "b")?;
    Ok((pp, b))
}

/// Closed form of the sequential CAQR model, which bounds every panel by
/// `Pr` blocks. [`evaluate`] sums the panels with their true block counts.
pub fn caqr_seq_closed_form(
    m: f64,
    n: f64,
    pr: f64,
    pc: f64,
    machine: &MachineModel,
) -> ModelPrediction {
    let pp = pr * pc;
    let counts = Counts {
        messages: 1.5 * pp * (pc - 1.0),
        words: 1.5 * m * n * (pc + 4.0 / 3.0) - n * n * pc / 2.0,
        flops: 2.0 * m * n * n - 2.0 * n * n * n / 3.0,
        divides: 0.0,
    };
    let params = ModelParams::new(m, n).with_p(pp).with_grid(pr, pc);
    ModelPrediction::new(Algorithm::CaqrSeq, params, counts, machine)
}

/// Block sizes searched by [`optimize`].
pub fn block_size_grid() -> Vec<u32> {
    let mut v = vec![1];
    v.extend((5..=50).step_by(5));
    v.extend((60..=200).step_by(10));
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optimum {
    pub b: u32,
    pub pr: u64,
    pub pc: u64,
    pub prediction: ModelPrediction,
}

/// Exhaustive search over `b` and power-of-two `Pr × Pc = P` for the
/// fastest modeled run. Ties go to the smaller `b`, then the smaller `Pr`.
pub fn optimize(alg: Algorithm, m: f64, n: f64, p: u64, machine: &MachineModel) -> Result<Optimum> {
    if !matches!(alg, Algorithm::CaqrPar | Algorithm::Pdgeqrf) {
        return Err(Error::InvalidArgument(format!("{alg} has no tunable grid")));
    }
    if !p.is_power_of_two() || p > machine.p_max {
        return Err(Error::InvalidArgument(format!(
            "P = {p} must be a power of two no larger than {}",
            machine.p_max
        )));
    }
    let pf = p as f64;
    if m * n / pf >= machine.mem_words {
        return Err(Error::Infeasible(format!(
            "{m} x {n} does not fit in the memory of {p} processors"
        )));
    }
    let bs: Vec<u32> = if p == 1 { vec![1] } else { block_size_grid() };
    let mut best: Option<Optimum> = None;
    let mut pr = 1u64;
    while pr <= p {
        let pc = p / pr;
        for &b in &bs {
            let bf = b as f64;
            if bf > m / pr as f64 || bf > n / pc as f64 {
                continue;
            }
            let params = ModelParams::new(m, n)
                .with_p(pf)
                .with_b(bf)
                .with_grid(pr as f64, pc as f64);
            let pred = evaluate(alg, &params, machine)?;
            if best.is_none_or(|o| pred.time < o.prediction.time) {
                best = Some(Optimum {
                    b,
                    pr,
                    pc,
                    prediction: pred,
                });
            }
        }
        pr *= 2;
    }
    best.ok_or_else(|| Error::Infeasible(format!("no block size fits {m} x {n} on {p} processors")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedupCell {
    pub n: f64,
    pub p: u64,
    pub pdgeqrf: Option<Optimum>,
    pub caqr: Option<Optimum>,
}

impl SpeedupCell {
    /// `t_pdgeqrf / t_caqr`, when both fit.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.pdgeqrf?.prediction.time / self.caqr?.prediction.time)
    }
}

fn cell(machine: &MachineModel, n: f64, p: u64) -> Result<SpeedupCell> {
    let opt = |alg| match optimize(alg, n, n, p, machine) {
        Ok(o) => Ok(Some(o)),
        Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(SpeedupCell {
        n,
        p,
        pdgeqrf: opt(Algorithm::Pdgeqrf)?,
        caqr: opt(Algorithm::CaqrPar)?,
    })
}

/// Both algorithms optimized independently on every square `n × n`, `P`
/// cell, sorted by `(n, P)`.
pub fn speedup_table(
    machine: &MachineModel,
    n_grid: &[f64],
    p_grid: &[u64],
) -> Result<Vec<SpeedupCell>> {
    let mut out = Vec::with_capacity(n_grid.len() * p_grid.len());
    for &n in n_grid {
        for &p in p_grid {
            out.push(cell(machine, n, p)?);
        }
    }
    out.sort_by(|a, b| a.n.total_cmp(&b.n).then(a.p.cmp(&b.p)));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestPRow {
    pub n: f64,
    /// `P` minimizing the pdgeqrf time
    pub p: u64,
    pub pdgeqrf_time: f64,
    pub caqr_time: f64,
    pub speedup: f64,
}

/// For each `n`, the `P` at which pdgeqrf runs fastest and the speedup
/// there. `n` values where nothing fits are skipped.
pub fn best_p_rows(table: &[SpeedupCell]) -> Vec<BestPRow> {
    let mut rows: Vec<BestPRow> = Vec::new();
    for c in table {
        let (Some(s), Some(q)) = (c.pdgeqrf, c.caqr) else {
            continue;
        };
        let row = BestPRow {
            n: c.n,
            p: c.p,
            pdgeqrf_time: s.prediction.time,
            caqr_time: q.prediction.time,
            speedup: s.prediction.time / q.prediction.time,
        };
        match rows.last_mut() {
            Some(last) if last.n == c.n => {
                if row.pdgeqrf_time < last.pdgeqrf_time {
                    *last = row;
                }
            }
            _ => rows.push(row),
        }
    }
    rows
}

/// Powers of two from 1 up to the machine's processor count.
pub fn default_p_grid(machine: &MachineModel) -> Vec<u64> {
    let mut v = Vec::new();
    let mut p = 1;
    while p <= machine.p_max {
        v.push(p);
        p *= 2;
    }
    v
}

/// `log₁₀ n` values swept for each named machine.
pub fn default_log10_n_grid(machine: &MachineModel) -> Vec<f64> {
    let (lo, hi): (f64, f64) = match machine.name.as_str() {
        "peta" => (3.0, 6.0),
        "grid" => (6.0, 7.5),
        _ => (3.0, 5.5),
    };
    let steps = ((hi - lo) / 0.5).round() as usize;
    (0..=steps).map(|i| lo + 0.5 * i as f64).collect()
}

pub const PREDICTION_CSV_HEADER: &str =
    "machine,algorithm,n,P,b,Pr,Pc,time,frac_latency,frac_bandwidth,frac_compute";

pub const BEST_P_CSV_HEADER: &str = "machine,log10_n,n,log2_P,P,pdgeqrf_time,caqr_time,speedup";

fn num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

/// One prediction row per optimized algorithm per cell.
pub fn prediction_csv(machine: &MachineModel, table: &[SpeedupCell]) -> String {
    let mut s = String::from(PREDICTION_CSV_HEADER);
    s.push('\n');
    for c in table {
        for (alg, o) in [
            (Algorithm::Pdgeqrf, c.pdgeqrf),
            (Algorithm::CaqrPar, c.caqr),
        ] {
            match o {
                Some(o) => {
                    let f = o.prediction.fractions();
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{:.6e},{:.6},{:.6},{:.6}\n",
                        machine.name,
                        alg,
                        num(c.n),
                        c.p,
                        o.b,
                        o.pr,
                        o.pc,
                        o.prediction.time,
                        f.latency,
                        f.bandwidth,
                        f.compute
                    ));
                }
                None => s.push_str(&format!(
                    "{},{},{},{},,,,infeasible,,,\n",
                    machine.name,
                    alg,
                    num(c.n),
                    c.p
                )),
            }
        }
    }
    s
}

pub fn best_p_csv(machine: &MachineModel, rows: &[BestPRow]) -> String {
    let mut s = String::from(BEST_P_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:.1},{},{},{},{:.6e},{:.6e},{:.3}\n",
            machine.name,
            r.n.log10(),
            num(r.n),
            r.p.trailing_zeros(),
            r.p,
            r.pdgeqrf_time,
            r.caqr_time,
            r.speedup
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn tsqr_seq_single_block() {
        let m = MachineModel::power5();
        let (mm, n) = (1000.0, 10.0);
        let p = evaluate(Algorithm::TsqrSeq, &ModelParams::new(mm, n).with_p(1.0), &m).unwrap();
        let want = m.alpha * 2.0
            + m.beta * (2.0 * mm * n + n - n * (n - 1.0) / 2.0)
            + m.gamma * (2.0 * mm * n * n - 2.0 * n * n * n / 3.0);
        assert!(close(p.time, want, 1e-12), "{} vs {want}", p.time);
    }

    #[test]
    fn pdgeqrf_square_compute_term() {
        let m = MachineModel::power5();
        let n = 1e4;
        let params = ModelParams::new(n, n).with_p(64.0).with_b(50.0);
        let p = evaluate(Algorithm::PdgeqrfSquare, &params, &m).unwrap();
        assert!(close(
            p.compute_time,
            m.gamma * 4.0 / 3.0 * n * n * n / 64.0,
            1e-14
        ));
    }

    #[test]
    fn caqr_square_form_agrees() {
        let m = MachineModel::peta();
        for (n, p, b) in [
            (1e4, 16.0_f64, 50.0),
            (1e5, 256.0, 100.0),
            (1e5, 1024.0, 50.0),
        ] {
            let sq = p.sqrt();
            let full = ModelParams::new(n, n).with_p(p).with_b(b).with_grid(sq, sq);
            let a = evaluate(Algorithm::CaqrPar, &full, &m).unwrap();
            let s = evaluate(
                Algorithm::CaqrParSquare,
                &ModelParams::new(n, n).with_p(p).with_b(b),
                &m,
            )
            .unwrap();
            assert!(
                close(a.time, s.time, 0.05),
                "{n} {p}: {} vs {}",
                a.time,
                s.time
            );
        }
    }

    #[test]
    fn fractions_sum_to_one() {
        let m = MachineModel::grid();
        for alg in Algorithm::ALL {
            let params = ModelParams {
                m: 4096.0,
                n: 64.0,
                p: Some(16.0),
                w: Some(1e5),
                b: Some(8.0),
                pr: Some(4.0),
                pc: Some(4.0),
                c: Some(16.0),
            };
            let params = match alg {
                Algorithm::CaqrParSquare | Algorithm::PdgeqrfSquare => {
                    ModelParams { m: 64.0, ..params }
                }
                _ => params,
            };
            let p = evaluate(alg, &params, &m).unwrap();
            let f = p.fractions();
            assert!(
                (f.latency + f.bandwidth + f.compute - 1.0).abs() <= 1e-12,
                "{alg}"
            );
            for x in [f.latency, f.bandwidth, f.compute] {
                assert!((0.0..=1.0).contains(&x), "{alg}: {x}");
            }
        }
    }

    #[test]
    fn time_grows_with_each_rate() {
        let base = MachineModel::power5();
        let params = ModelParams::new(1e4, 1e4)
            .with_p(64.0)
            .with_b(20.0)
            .with_grid(8.0, 8.0);
        let t0 = evaluate(Algorithm::CaqrPar, &params, &base).unwrap().time;
        for k in 0..3 {
            let mut m = base.clone();
            match k {
                0 => m.alpha *= 2.0,
                1 => m.beta *= 2.0,
                _ => m.gamma *= 2.0,
            }
            assert!(evaluate(Algorithm::CaqrPar, &params, &m).unwrap().time >= t0);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let m = MachineModel::power5();
        let params = ModelParams::new(100.0, 100.0)
            .with_p(4.0)
            .with_b(80.0)
            .with_grid(2.0, 2.0);
        let err = evaluate(Algorithm::CaqrPar, &params, &m).unwrap_err();
        assert!(err.to_string().contains("b = 80"), "{err}");
        let params = ModelParams::new(100.0, 10.0).with_p(16.0);
        assert!(evaluate(Algorithm::TsqrPar, &params, &m).is_err());
        assert!(evaluate(Algorithm::TsqrSeq, &ModelParams::new(100.0, 10.0), &m).is_err());
    }

    #[test]
    fn optimizer_rules() {
        let m = MachineModel::power5();
        let o = optimize(Algorithm::CaqrPar, 1e4, 1e4, 1, &m).unwrap();
        assert_eq!((o.b, o.pr, o.pc), (1, 1, 1));
        assert!(optimize(Algorithm::CaqrPar, 1e4, 1e4, 3, &m).is_err());
        assert!(matches!(
            optimize(Algorithm::Pdgeqrf, 1e6, 1e6, 1, &m),
            Err(Error::Infeasible(_))
        ));
        let o = optimize(Algorithm::CaqrPar, 1e5, 1e5, 8192, &MachineModel::peta()).unwrap();
        assert!(o.pr.max(o.pc) / o.pr.min(o.pc) <= 2, "{o:?}");
    }

    #[test]
    fn pdgeqrf_prefers_columns_on_grid() {
        let m = MachineModel::grid();
        let o = optimize(Algorithm::Pdgeqrf, 1e6, 1e6, 128, &m).unwrap();
        assert_eq!(o.pr, 1);
    }

    #[test]
    fn seq_caqr_sum_vs_closed_form() {
        let m = MachineModel::unit();
        let params = ModelParams::new(512.0, 512.0).with_grid(8.0, 8.0);
        let s = evaluate(Algorithm::CaqrSeq, &params, &m).unwrap();
        assert_eq!(s.messages, 576.0);
        let c = caqr_seq_closed_form(512.0, 512.0, 8.0, 8.0, &m);
        assert!(c.messages >= s.messages);
    }

    #[test]
    fn best_p_picks_fastest_pdgeqrf() {
        let m = MachineModel::power5();
        let t = speedup_table(&m, &[1e3], &default_p_grid(&m)).unwrap();
        let rows = best_p_rows(&t);
        assert_eq!(rows.len(), 1);
        let fastest = t
            .iter()
            .filter_map(|c| c.pdgeqrf)
            .map(|o| o.prediction.time)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(rows[0].pdgeqrf_time, fastest);
    }

    #[test]
    fn csv_headers() {
        let m = MachineModel::grid();
        let t = speedup_table(&m, &[1e6], &[64, 128]).unwrap();
        let csv = prediction_csv(&m, &t);
        assert!(csv.starts_with(PREDICTION_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
        let b = best_p_csv(&m, &best_p_rows(&t));
        assert_eq!(b.lines().count(), 2);
    }
}
