//! `robmem` command line: construct, verify, bounds and sweep.
//!
//! Exit codes: 0 success, 1 input/output or construction failure, 2 invalid
//! request (flags, regime or precondition), 3 verification failed.

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use robmem::bounds::lower_bounds;
use robmem::dataset::{gen_random, sample_ball, separation, Dataset, Norm, RobustSpec};
use robmem::exec::{split_seed, Exec};
use robmem::memorizers::{construct, quantize_network, with_cleanup_head, QuantMode, Regime};
use robmem::net_ir::Network;
use robmem::verify::{verify_robust, SamplePlan, Tolerance};
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use tracing::info;

#[derive(Debug, Parser)]
#[command(name = "robmem", version, about = "Synthesize and check robust-memorization ReLU networks")]
pub struct Cli {
    /// More log output on stderr (-v, -vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a robust memorizer for a CSV dataset.
    Construct(ConstructArgs),
    /// Monte-Carlo check of a network on every robustness ball.
    Verify(VerifyArgs),
    /// Closed-form lower bounds on width and parameters.
    Bounds(BoundsArgs),
    /// Construct over a list of ratios and tabulate the resources.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Auto,
    Small,
    Moderate,
    Large,
}

impl RegimeArg {
    fn forced(self) -> Option<Regime> {
        match self {
            RegimeArg::Auto => None,
            RegimeArg::Small => Some(Regime::Small),
            RegimeArg::Moderate => Some(Regime::Moderate),
            RegimeArg::Large => Some(Regime::Large),
        }
    }
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub rho: f64,
    /// Norm index: a real p >= 1 or `inf`.
    #[arg(long, default_value = "2")]
    pub p: String,
    #[arg(long, value_enum, default_value = "auto")]
    pub regime: RegimeArg,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Network JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Report JSON output (default: `<out stem>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Quantize to accuracy `nu` and append the rounding head.
    #[arg(long)]
    pub quantize: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value = "2")]
    pub p: String,
    /// Samples per ball.
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accept when every ball's Wilson 95% error bound is at most this.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Absolute output tolerance (0 = bit-exact).
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Include per-ball statistics in the output.
    #[arg(long)]
    pub per_ball: bool,
    /// Sample on the current thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value = "2")]
    pub p: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    /// Comma-separated ratios.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub rhos: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset to sweep (default: random Gaussian points, 4 classes).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Error target used in the moderate regime.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Error carrying the process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{source:#}")]
pub struct Failure {
    pub code: i32,
    #[source]
    pub source: anyhow::Error,
}

impl Failure {
    fn new(code: i32, e: impl Into<anyhow::Error>) -> Self {
        Failure { code, source: e.into() }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &robmem::error::Error) -> i32 {
    use robmem::error::Error as E;
    match e {
        E::Invalid(_) | E::Precondition(_) | E::Regime(_) | E::Dim { .. } => 2,
        _ => 1,
    }
}

fn lib(e: robmem::error::Error) -> Failure {
    Failure::new(exit_code(&e), e)
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::new(2, anyhow::anyhow!(msg.into()))
}

fn parse_norm(s: &str) -> Result<Norm, Failure> {
    s.parse::<Norm>().map_err(lib)
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load_csv(path).map_err(|e| Failure::new(1, anyhow::Error::new(e).context(format!("reading {}", path.display()))))
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).expect("json values serialize");
    std::fs::write(path, s + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(|e| Failure::new(1, e))
}

fn print_json(out: &mut dyn Write, v: &Value) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).expect("json values serialize");
    writeln!(out, "{s}").map_err(|e| Failure::new(1, e))
}

fn tagged<T: Serialize>(v: &T) -> Value {
    let mut v = serde_json::to_value(v).expect("serializable");
    if let Value::Object(m) = &mut v {
        m.insert("schema".into(), "v1".into());
    }
    v
}

/// Runs one command, writing its primary output to `out`; returns the exit code.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match &cli.cmd {
        Command::Construct(a) => cmd_construct(a),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Bounds(a) => cmd_bounds(a, out),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Parses `args` and runs; errors are rendered to `err`.
pub fn main_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {f}");
            f.code
        }
    }
}

fn build(
    d: &Dataset,
    p: Norm,
    rho: f64,
    regime: Option<Regime>,
    eta: Option<f64>,
    seed: u64,
) -> Result<(Network, robmem::memorizers::RegimeReport), Failure> {
    let spec = RobustSpec::new(d, p, rho).map_err(lib)?;
    construct(d, &spec, regime, eta, seed).map_err(lib)
}

pub fn cmd_construct(a: &ConstructArgs) -> Result<i32, Failure> {
    let p = parse_norm(&a.p)?;
    let d = load(&a.dataset)?;
    info!(n = d.n(), d = d.d(), rho = a.rho, "constructing");
    let (mut net, rep) = build(&d, p, a.rho, a.regime.forced(), a.eta, a.seed)?;
    let mut rv = rep.to_json();
    if let Some(nu) = a.quantize {
        let mu = a.rho * separation(&d, p);
        // ν-accuracy is enforced on samples from the balls themselves
        let mut pts = Vec::new();
        for i in 0..d.n() {
            pts.extend(sample_ball(d.point(i), mu, p, split_seed(a.seed ^ 0x51, i as u64), 64).map_err(lib)?);
        }
        let radius = (d.max_norm() + mu).max(1.0);
        let mode = QuantMode::Empirical { points: Some(pts), samples: 0, seed: a.seed };
        let (q, bits) = quantize_network(&net, nu, radius, &mode).map_err(lib)?;
        net = with_cleanup_head(&q, d.classes()).map_err(lib)?;
        rv["quantization"] = json!({ "nu": nu, "bit_complexity": bits, "cleanup_head": true, "achieved": net.resources() });
        info!(bits, "quantized");
    }
    let report = a.report.clone().unwrap_or_else(|| a.out.with_extension("report.json"));
    write_json(&a.out, &net.to_json_value())?;
    write_json(&report, &rv)?;
    info!(net = %a.out.display(), report = %report.display(), "written");
    Ok(0)
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if a.samples == 0 {
        return Err(usage("need K >= 1 samples per ball (--samples)"));
    }
    if !(a.rho > 0.0 && a.rho < 1.0) {
        return Err(usage(format!("rho must lie in (0,1), got {}", a.rho)));
    }
    let p = parse_norm(&a.p)?;
    let d = load(&a.dataset)?;
    let text = std::fs::read_to_string(&a.net)
        .with_context(|| format!("reading {}", a.net.display()))
        .map_err(|e| Failure::new(1, e))?;
    let net = Network::from_json(&text).map_err(|e| Failure::new(1, e))?;
    let plan = SamplePlan {
        p,
        mu: a.rho * separation(&d, p),
        samples: a.samples,
        seed: a.seed,
        tolerance: if a.tol == 0.0 { Tolerance::Exact } else { Tolerance::Abs(a.tol) },
        balls: None,
    };
    let exec = if a.sequential { Exec::Sequential } else { Exec::Parallel };
    let stats = verify_robust(&net, &d, &plan, exec).map_err(lib)?;
    let pass = stats.exact() || a.eta.is_some_and(|e| stats.wilson_upper <= e);
    let mut v = tagged(&stats);
    if !a.per_ball {
        v.as_object_mut().unwrap().remove("per_ball");
    }
    v["pass"] = pass.into();
    print_json(out, &v)?;
    Ok(if pass { 0 } else { 3 })
}

pub fn cmd_bounds(a: &BoundsArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = parse_norm(&a.p)?;
    let r = lower_bounds(a.n, a.d, a.rho, p).map_err(lib)?;
    print_json(out, &tagged(&r))?;
    Ok(0)
}

/// One row of the sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub regime: String,
    pub status: String,
    pub params_all: Option<u64>,
    pub params_nonzero: Option<u64>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub theoretical_bound: Option<f64>,
    pub bound_formula: String,
    pub width_lb: Option<f64>,
    pub vc_param_lb: Option<f64>,
    pub message: String,
}

/// Builds one network per ratio; failures become rows with status `error`.
pub fn sweep_rows(d: &Dataset, rhos: &[f64], eta: f64, seed: u64) -> Vec<SweepRow> {
    rhos.iter()
        .map(|&rho| {
            let regime = robmem::memorizers::regime_for(d.n(), d.d(), rho);
            let lb = lower_bounds(d.n(), d.d(), rho, Norm::L2).ok();
            let eta = (regime == Regime::Moderate).then_some(eta);
            let mut row = SweepRow {
                rho,
                regime: regime.to_string(),
                status: "ok".into(),
                params_all: None,
                params_nonzero: None,
                width: None,
                depth: None,
                theoretical_bound: None,
                bound_formula: String::new(),
                width_lb: lb.as_ref().map(|l| l.width_lb),
                vc_param_lb: lb.as_ref().map(|l| l.vc_param_lb),
                message: String::new(),
            };
            match build(d, Norm::L2, rho, None, eta, seed) {
                Ok((_, rep)) => {
                    let r = rep.achieved;
                    row.params_all = Some(r.params_all);
                    row.params_nonzero = Some(r.params_nonzero);
                    row.width = Some(r.width);
                    row.depth = Some(r.depth);
                    row.theoretical_bound = Some(rep.theoretical_param_bound);
                    row.bound_formula = rep.bound_formula;
                }
                Err(f) => {
                    row.status = "error".into();
                    row.message = f.to_string();
                }
            }
            info!(rho, status = %row.status, params = ?row.params_all, "sweep point");
            row
        })
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32, Failure> {
    if a.rhos.is_empty() {
        return Err(usage("--rhos needs at least one value"));
    }
    let d = match &a.dataset {
        Some(path) => load(path)?,
        None => gen_random(a.n, a.d, 4.min(a.n as u32), a.seed).map_err(lib)?,
    };
    if d.n() != a.n || d.d() != a.d {
        return Err(usage(format!("dataset is {}x{}, flags say {}x{}", d.n(), d.d(), a.n, a.d)));
    }
    let rows = sweep_rows(&d, &a.rhos, a.eta, a.seed);
    let mut w = csv::Writer::from_path(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .map_err(|e| Failure::new(1, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::new(1, e))?;
    }
    w.flush().map_err(|e| Failure::new(1, e))?;
    Ok(if rows.iter().any(|r| r.status == "ok") { 0 } else { 1 })
}
