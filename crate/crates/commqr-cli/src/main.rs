use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};

use commqr::caqr::{caqr_parallel_sim, GridLayout};
use commqr::householder::{explicit_q, qr_unblocked};
use commqr::matrix::{gaussian, generate_conditioned, OrthogonalityReport};
use commqr::model::{self, Algorithm, ModelParams};
use commqr::rivals::Method;
use commqr::tsqr::{plan_ooc, tsqr_explicit_q, tsqr_factor, tsqr_factor_ooc_to};
use commqr::{
    make_tree, Backend, BlockStore, CostReport, DenseMatrix, Error, FlopCounter, MachineModel,
    ReductionTree, TransferCounters, TreeShape,
};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "commqr", version, about = "Communication-avoiding QR toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factor a seeded random matrix and report R, accuracy and costs.
    Factor(FactorArgs),
    /// Loss of orthogonality against condition number.
    Stability(StabilityArgs),
    /// Evaluate one closed-form cost model.
    Costs(CostsArgs),
    /// Speedup tables of CAQR over PDGEQRF on a modeled machine.
    Predict(PredictArgs),
    /// Out-of-core TSQR over a block-store file.
    Ooc(OocArgs),
}

#[derive(Args)]
struct FactorArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// tsqr, caqr, householder, choleskyqr, mgs, cgs or cgs2
    #[arg(long, default_value = "tsqr")]
    method: String,
    /// flat, binary or qary:Q
    #[arg(long, default_value = "binary")]
    tree: String,
    /// Custom tree description, one level per line.
    #[arg(long)]
    tree_file: Option<PathBuf>,
    #[arg(long = "P", default_value_t = 1)]
    p: usize,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long = "Pr", default_value_t = 1)]
    pr: usize,
    #[arg(long = "Pc", default_value_t = 1)]
    pc: usize,
    /// Condition number of the generated matrix (Gaussian if omitted).
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// power5, peta, grid or file:<path>
    #[arg(long, default_value = "power5")]
    machine: String,
    /// Directory for r.csv, accuracy.json and cost.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long, default_value_t = 500)]
    m: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Comma-separated condition numbers.
    #[arg(long, default_value = "1e2,1e4,1e6,1e8")]
    kappas: String,
    /// Comma-separated methods.
    #[arg(long, default_value = "householder,tsqr,mgs,cgs,choleskyqr,cgs2")]
    methods: String,
    /// Processor count for tsqr.
    #[arg(long = "P", default_value_t = 8)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostsArgs {
    #[arg(long)]
    algorithm: String,
    #[arg(long)]
    m: f64,
    #[arg(long)]
    n: f64,
    #[arg(long = "P")]
    p: Option<f64>,
    #[arg(long = "W")]
    w: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long = "Pr")]
    pr: Option<f64>,
    #[arg(long = "Pc")]
    pc: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value = "power5")]
    machine: String,
}

#[derive(Args)]
struct PredictArgs {
    /// power5, peta, grid or file:<path>
    #[arg(long, default_value = "power5")]
    machine: String,
    /// Comma-separated n values; `10^x` is accepted.
    #[arg(long)]
    n_grid: Option<String>,
    /// Comma-separated processor counts (powers of two).
    #[arg(long = "P-grid")]
    p_grid: Option<String>,
    /// Directory for predictions.csv and best_p.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OocArgs {
    /// Block-store file. Created when --gen is given.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Generate a Gaussian matrix with this many rows.
    #[arg(long)]
    gen: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    fast_words: usize,
    /// memory or file:<path>; overrides --file.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Compare R with an in-memory factorization.
    #[arg(long)]
    verify: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Breakdown { .. } => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Factor(a) => cmd_factor(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Costs(a) => cmd_costs(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ooc(a) => cmd_ooc(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_file(path: &Path, text: &str) -> commqr::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> commqr::Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn machine(spec: &str) -> commqr::Result<MachineModel> {
    if let Some(path) = spec.strip_prefix("file:") {
        return MachineModel::from_config(&read_file(Path::new(path))?);
    }
    MachineModel::by_name(spec)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown machine `{spec}`")))
}

fn input_matrix(m: usize, n: usize, kappa: Option<f64>, seed: u64) -> commqr::Result<DenseMatrix> {
    if m < n || n == 0 {
        return Err(Error::Shape(format!("need m >= n >= 1, got {m}x{n}")));
    }
    match kappa {
        Some(k) => generate_conditioned(m, n, k, seed),
        None => Ok(gaussian(m, n, seed)),
    }
}

fn tree_for(shape: &str, file: Option<&Path>, p: usize) -> commqr::Result<ReductionTree> {
    match file {
        Some(path) => ReductionTree::parse(&read_file(path)?, p),
        None => make_tree(&shape.parse::<TreeShape>()?, p),
    }
}

/// Rival method names as accepted on the command line.
fn rival(name: &str) -> Option<Method> {
    match name {
        "mgs" => Some(Method::MgsR),
        "cgs" => Some(Method::CgsL),
        _ => name.parse().ok(),
    }
}

struct Factored {
    q: DenseMatrix,
    r: DenseMatrix,
    report: CostReport,
}

fn factor_with(
    method: &str,
    a: &DenseMatrix,
    args: &FactorArgs,
    m: &MachineModel,
) -> commqr::Result<Factored> {
    match method {
        "tsqr" => {
            let tree = tree_for(&args.tree, args.tree_file.as_deref(), args.p)?;
            let (tq, r, report) = tsqr_factor(a, args.p, &tree, m)?;
            Ok(Factored {
                q: tsqr_explicit_q(&tq)?,
                r,
                report,
            })
        }
        "caqr" => {
            let b = args.b.unwrap_or_else(|| (a.cols() / args.pc).clamp(1, 8));
            let layout = GridLayout::new(a.rows(), a.cols(), b, args.pr, args.pc)?;
            let (r, f, report) = caqr_parallel_sim(a, &layout, m)?;
            Ok(Factored {
                q: f.explicit_q()?,
                r,
                report,
            })
        }
        "householder" => {
            let mut fc = FlopCounter::default();
            let f = qr_unblocked(a, &mut fc)?;
            Ok(Factored {
                q: explicit_q(&f),
                r: f.r.clone(),
                report: CostReport::sequential(fc, TransferCounters::default(), m),
            })
        }
        other => {
            let meth = rival(other)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{other}`")))?;
            let res = meth.run(a)?;
            Ok(Factored {
                q: res.q,
                r: res.r,
                report: CostReport::sequential(res.flops, TransferCounters::default(), m),
            })
        }
    }
}

fn cmd_factor(args: FactorArgs) -> commqr::Result<u8> {
    let mach = machine(&args.machine)?;
    let a = input_matrix(args.m, args.n, args.kappa, args.seed)?;
    let f = factor_with(&args.method, &a, &args, &mach)?;
    let acc = OrthogonalityReport::measure(&a, &f.q, &f.r)?;
    let mut r = f.r.clone();
    r.sign_normalize_rows();
    let acc_json = serde_json::json!({
        "schema_version": commqr::sim::REPORT_SCHEMA_VERSION,
        "method": args.method,
        "deviation": acc.deviation,
        "reconstruction": acc.reconstruction_error,
    });
    let acc_text = serde_json::to_string_pretty(&acc_json).expect("json");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        write_file(&dir.join("r.csv"), &r.to_csv())?;
        write_file(&dir.join("accuracy.json"), &acc_text)?;
        write_file(&dir.join("cost.json"), &f.report.to_json())?;
    }
    println!("{}", f.report.to_json());
    eprintln!("{acc_text}");
    Ok(0)
}

fn parse_list<T>(s: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> commqr::Result<Vec<T>> {
    let items: Vec<&str> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} list is empty")));
    }
    items
        .into_iter()
        .map(|x| f(x).ok_or_else(|| Error::InvalidArgument(format!("bad {what} `{x}`"))))
        .collect()
}

const STABILITY_HEADER: &str = "method,kappa,deviation,reconstruction";

fn cmd_stability(args: StabilityArgs) -> commqr::Result<u8> {
    let kappas = parse_list(&args.kappas, "kappa", |x| {
        x.parse::<f64>().ok().filter(|k| *k >= 1.0)
    })?;
    let methods = parse_list(&args.methods, "method", |x| {
        matches!(x, "householder" | "tsqr")
            .then(|| x.to_string())
            .or_else(|| rival(x).map(|_| x.to_string()))
    })?;
    if args.m < args.n || args.n == 0 {
        return Err(Error::Shape(format!(
            "need m >= n >= 1, got {}x{}",
            args.m, args.n
        )));
    }
    let fargs = FactorArgs {
        m: args.m,
        n: args.n,
        method: String::new(),
        tree: "binary".into(),
        tree_file: None,
        p: args.p,
        b: None,
        pr: 1,
        pc: 1,
        kappa: None,
        seed: args.seed,
        machine: "power5".into(),
        out: None,
    };
    let mach = MachineModel::unit();
    let inputs: Vec<DenseMatrix> = kappas
        .iter()
        .map(|&k| generate_conditioned(args.m, args.n, k, args.seed))
        .collect::<commqr::Result<_>>()?;
    // one thread per (method, κ) cell, joined in input order
    let cells: Vec<commqr::Result<Option<OrthogonalityReport>>> = thread::scope(|s| {
        let handles: Vec<_> = methods
            .iter()
            .flat_map(|meth| inputs.iter().map(move |a| (meth, a)))
            .map(|(meth, a)| {
                let (fargs, mach) = (&fargs, &mach);
                s.spawn(move || match factor_with(meth, a, fargs, mach) {
                    Ok(f) => OrthogonalityReport::measure(a, &f.q, &f.r).map(Some),
                    Err(Error::Breakdown { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut csv = String::from(STABILITY_HEADER);
    csv.push('\n');
    let mut broke = false;
    let mut it = cells.into_iter();
    for meth in &methods {
        for k in &kappas {
            match it.next().expect("one cell per row")? {
                Some(r) => csv.push_str(&format!(
                    "{meth},{k:e},{:.6e},{:.6e}\n",
                    r.deviation, r.reconstruction_error
                )),
                None => {
                    broke = true;
                    csv.push_str(&format!("{meth},{k:e},nan,nan\n"));
                }
            }
        }
    }
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    if broke {
        eprintln!("error: at least one factorization broke down");
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

fn cmd_costs(args: CostsArgs) -> commqr::Result<u8> {
    let mach = machine(&args.machine)?;
    let alg: Algorithm = args.algorithm.parse()?;
    let params = ModelParams {
        m: args.m,
        n: args.n,
        p: args.p,
        w: args.w,
        b: args.b,
        pr: args.pr,
        pc: args.pc,
        c: args.c,
    };
    let pred = model::evaluate(alg, &params, &mach)?;
    let f = pred.fractions();
    let out = serde_json::json!({
        "schema_version": commqr::sim::REPORT_SCHEMA_VERSION,
        "machine": mach.name,
        "algorithm": alg.name(),
        "messages": pred.messages,
        "words": pred.words,
        "flops": pred.flops,
        "divides": pred.divides,
        "latency_time": pred.latency_time,
        "bandwidth_time": pred.bandwidth_time,
        "compute_time": pred.compute_time,
        "time": pred.time,
        "frac_latency": f.latency,
        "frac_bandwidth": f.bandwidth,
        "frac_compute": f.compute,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(0)
}

fn parse_n(x: &str) -> Option<f64> {
    let v = match x.strip_prefix("10^") {
        Some(e) => 10f64.powf(e.parse().ok()?),
        None => x.parse().ok()?,
    };
    (v >= 1.0 && v.is_finite()).then_some(v)
}

fn cmd_predict(args: PredictArgs) -> commqr::Result<u8> {
    let mach = machine(&args.machine)?;
    let n_grid = match &args.n_grid {
        Some(s) => parse_list(s, "n", parse_n)?,
        None => model::default_log10_n_grid(&mach)
            .into_iter()
            .map(|l| 10f64.powf(l))
            .collect(),
    };
    let p_grid = match &args.p_grid {
        Some(s) => parse_list(s, "P", |x| {
            x.parse::<u64>().ok().filter(|p| p.is_power_of_two())
        })?,
        None => model::default_p_grid(&mach),
    };
    let table = model::speedup_table(&mach, &n_grid, &p_grid)?;
    let best = model::best_p_rows(&table);
    let pred_csv = model::prediction_csv(&mach, &table);
    let best_csv = model::best_p_csv(&mach, &best);
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            write_file(&dir.join("predictions.csv"), &pred_csv)?;
            write_file(&dir.join("best_p.csv"), &best_csv)?;
        }
        None => print!("{pred_csv}"),
    }
    eprint!("{best_csv}");
    Ok(0)
}

fn cmd_ooc(args: OocArgs) -> commqr::Result<u8> {
    let backend = match (&args.backend, &args.file) {
        (Some(b), _) => b.parse::<Backend>()?,
        (None, Some(f)) => Backend::File(f.clone()),
        (None, None) => {
            return Err(Error::InvalidArgument("need --file or --backend".into()));
        }
    };
    let w = args.fast_words;
    let (mut store, a) = match args.gen {
        Some(m) => {
            let n = args
                .n
                .ok_or_else(|| Error::InvalidArgument("--gen needs --n".into()))?;
            let plan = plan_ooc(m, n, w)?;
            let a = input_matrix(m, n, None, args.seed)?;
            (BlockStore::create(&a, plan.block_rows, &backend)?, Some(a))
        }
        None => {
            let Backend::File(path) = &backend else {
                return Err(Error::InvalidArgument("memory backend needs --gen".into()));
            };
            let s = BlockStore::open(path)?;
            if args.n.is_some_and(|n| n != s.n()) {
                return Err(Error::InvalidArgument(format!(
                    "--n does not match the file, which has {} columns",
                    s.n()
                )));
            }
            (s, None)
        }
    };
    store.clear_log();
    let (m, n) = (store.m(), store.n());
    let blocks = store.block_count();
    let spill = backend.sibling(".q");
    let (_, r, report) = tsqr_factor_ooc_to(&mut store, w, &MachineModel::unit(), &spill)?;

    let rows = (blocks * store.block_rows()) as f64;
    let params = ModelParams::new(rows, n as f64).with_p(blocks as f64);
    let pred = model::evaluate(Algorithm::TsqrSeq, &params, &MachineModel::unit())?;
    println!(
        "m={m} n={n} W={w} blocks={blocks} block_rows={}",
        store.block_rows()
    );
    println!(
        "measured messages={} words={}",
        report.comm.messages, report.comm.words
    );
    println!("modeled  messages={} words={}", pred.messages, pred.words);
    let matches =
        report.comm.messages as f64 == pred.messages && report.comm.words as f64 == pred.words;

    if args.verify {
        let a = match a {
            Some(a) => a,
            None => store.to_matrix()?,
        };
        let mut want = qr_unblocked(&a, &mut FlopCounter::default())?.r;
        want.sign_normalize_rows();
        let mut got = r;
        got.sign_normalize_rows();
        let diff = got.max_abs_diff(&want);
        let tol = 1e-12 * a.frobenius_norm();
        println!("verify max|dR|={diff:.3e} tol={tol:.3e}");
        if !(diff <= tol) {
            eprintln!("error: R differs from the in-memory factorization");
            return Ok(EXIT_NUMERIC);
        }
    }
    if !matches {
        eprintln!("error: measured counters differ from the model");
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}
