//! Command-line front end for the `lossbound` toolkit.
//!
//! Structured input comes from a JSON [`RunConfig`]; flags only cover paths,
//! seed, output format and verbosity. Primary outputs are byte-reproducible
//! for a fixed config and seed; the wall-clock timestamp goes to a
//! `<out>.meta.json` sidecar.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use lossbound::branching::{
    compound_bound_pmf_with_grid, BoundPmf, BoundSpec, Condition, Pmf, Side, TruncationPolicy,
};
use lossbound::dominance::{theorem_harness, HarnessSim, SideReport, TheoremReport, Verdict};
use lossbound::metrics::{
    c_lambda_integrals, c_lambda_leq, check_aging_class, envelope_report, AgingClass, EpsReport,
    GridPolicy, OrderVerdict, DEFAULT_I_MAX, DEFAULT_ORDER_TOL,
};
use lossbound::sim::{run_busy_periods, BusyPeriodSample, ServiceLaw, SimConfig};
use lossbound::{DistSpec, MixtureService};
use serde::{Deserialize, Serialize};

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const ENVELOPE_FAILED: i32 = 2;
    pub const VACUOUS: i32 = 3;
    pub const VIOLATED: i32 = 4;
    pub const INCONCLUSIVE: i32 = 5;
}

pub const THREADS_ENV: &str = "LOSSBOUND_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lossbound",
    version,
    about = "Loss-count bounds for M/GI/1/n busy periods"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// More diagnostics on stderr; repeatable.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Memorylessness deviations, Kolmogorov distances and envelope checks.
    Eps,
    /// Lower (and, under condition C, upper) bounding laws.
    Bounds,
    /// Simulate busy periods and write per-period loss counts.
    Simulate,
    /// Full pipeline: envelopes, bounds, simulation, dominance tests.
    Verify,
    /// C_λ order and aging classes for two laws.
    Order,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
    /// Line-delimited JSON trace stream for `simulate` with tracing on.
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderConfig {
    pub x1: DistSpec,
    pub x2: DistSpec,
    pub lambda: f64,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    #[serde(default = "default_order_tol")]
    pub tol: f64,
}

fn default_i_max() -> usize {
    DEFAULT_I_MAX
}

fn default_order_tol() -> f64 {
    DEFAULT_ORDER_TOL
}

/// Everything a command may need. Each command reads only its sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Service law for `eps`.
    #[serde(default)]
    pub service: Option<ServiceLaw>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub bound: Option<BoundSpec>,
    #[serde(default)]
    pub harness: Option<HarnessSim>,
    #[serde(default)]
    pub order: Option<OrderConfig>,
    #[serde(default)]
    pub grid: GridPolicy,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: exit::CONFIG,
            message: message.into(),
        }
    }
}

impl From<lossbound::Error> for CliError {
    fn from(e: lossbound::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::config(format!("i/o error: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
    cfg.grid.validate()?;
    if cfg.truncation.tail_tol <= 0.0 || cfg.truncation.max_support == 0 {
        return Err(CliError::config(
            "truncation needs tail_tol > 0 and max_support ≥ 1",
        ));
    }
    if let Some(s) = &cfg.service {
        s.validate()?;
    }
    if let Some(s) = &cfg.sim {
        s.validate()?;
    }
    if let Some(b) = &cfg.bound {
        b.validate()?;
    }
    if let Some(o) = &cfg.order {
        o.x1.validate()?;
        o.x2.validate()?;
        if o.lambda.is_nan() || o.lambda <= 0.0 {
            return Err(CliError::config("order.lambda must be positive"));
        }
    }
    if let Some(h) = &cfg.harness {
        if h.num_busy_periods == 0 || !(h.alpha > 0.0 && h.alpha < 1.0) {
            return Err(CliError::config(
                "harness needs num_busy_periods ≥ 1 and alpha in (0, 1)",
            ));
        }
    }
    Ok(cfg)
}

/// Reads `LOSSBOUND_THREADS` (0 or unset = rayon default).
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("{THREADS_ENV} must be an integer, got {raw:?}")))?;
    if n > 0 {
        // A second initialization in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Format,
    verbosity: i8,
}

impl Ctx {
    fn info(&self, msg: impl AsRef<str>) {
        if self.verbosity >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        if self.verbosity >= 0 {
            eprintln!("warning: {}", msg.as_ref());
        }
    }

    fn emit(&self, body: &str) -> CliResult<()> {
        match &self.out {
            Some(p) => fs::write(p, body)?,
            None => io::stdout().lock().write_all(body.as_bytes())?,
        }
        Ok(())
    }

    fn sidecar(&self, command: &str, extra: serde_json::Value) -> CliResult<()> {
        let Some(out) = &self.out else {
            return Ok(());
        };
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let meta = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "created_unix": now,
            "threads": rayon::current_num_threads(),
            "format": self.format,
            "details": extra,
        });
        fs::write(meta_path(out), to_json(&meta)?)?;
        Ok(())
    }
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Fixed-width float rendering used in CSV: 17 significant digits.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn samples_csv(samples: &[BusyPeriodSample]) -> String {
    let mut s = String::from("busy_period_index,losses\n");
    for (i, b) in samples.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", b.losses);
    }
    s
}

pub fn trace_ndjson(samples: &[BusyPeriodSample]) -> CliResult<String> {
    #[derive(Serialize)]
    struct Line<'a> {
        busy_period_index: usize,
        #[serde(flatten)]
        event: &'a lossbound::sim::TraceEvent,
    }
    let mut s = String::new();
    for (i, b) in samples.iter().enumerate() {
        for event in b.trace.iter().flatten() {
            let line = serde_json::to_string(&Line {
                busy_period_index: i,
                event,
            })
            .map_err(|e| CliError::config(e.to_string()))?;
            s.push_str(&line);
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn pmf_csv_rows(out: &mut String, side: &str, pmf: &Pmf) {
    for (i, m) in pmf.mass().iter().enumerate() {
        let _ = writeln!(out, "{side},{i},{}", csv_float(*m));
    }
}

fn required<'a, T>(section: &'a Option<T>, name: &str, command: &str) -> CliResult<&'a T> {
    section.as_ref().ok_or_else(|| {
        CliError::config(format!(
            "`{command}` needs a `{name}` section in the config"
        ))
    })
}

fn eps_service(law: &ServiceLaw) -> CliResult<MixtureService> {
    Ok(match law {
        ServiceLaw::Mixture(m) => m.clone(),
        ServiceLaw::Plain(d) => MixtureService::pure(d.clone())?,
    })
}

fn cmd_eps(ctx: &Ctx) -> CliResult<i32> {
    let ms = eps_service(required(&ctx.cfg.service, "service", "eps")?)?;
    let report = envelope_report(&ms, &ctx.cfg.grid)?;
    let body = match ctx.format {
        Format::Json => to_json(&report)?,
        Format::Csv => eps_csv(&report),
    };
    ctx.emit(&body)?;
    ctx.sidecar("eps", serde_json::json!({}))?;
    if report.all_satisfied() {
        Ok(exit::OK)
    } else {
        for e in report.envelopes.iter().filter(|e| !e.satisfied) {
            ctx.warn(format!(
                "envelope {} failed: {} ≥ {}",
                e.id, e.value, e.bound
            ));
        }
        Ok(exit::ENVELOPE_FAILED)
    }
}

fn eps_csv(r: &EpsReport) -> String {
    let mut s = String::from("id,bound,value,satisfied\n");
    for e in &r.envelopes {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.id,
            csv_float(e.bound),
            csv_float(e.value),
            e.satisfied
        );
    }
    s
}

#[derive(Serialize)]
struct BoundsOutput<'a> {
    condition: Condition,
    epsilon: f64,
    c_epsilon: f64,
    b_hat: f64,
    vacuous: bool,
    lower: Option<&'a BoundPmf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower_unavailable: Option<&'a str>,
    upper: Option<&'a BoundPmf>,
}

fn cmd_bounds(ctx: &Ctx) -> CliResult<i32> {
    let spec = required(&ctx.cfg.bound, "bound", "bounds")?;
    let eps = spec.resolved_epsilon(&ctx.cfg.grid)?;
    let spec = BoundSpec {
        epsilon: Some(eps),
        ..spec.clone()
    };
    let build =
        |side| compound_bound_pmf_with_grid(&spec, side, &ctx.cfg.truncation, &ctx.cfg.grid);
    let (lower, lower_unavailable) = match build(Side::Lower) {
        Ok(b) => (Some(b), None),
        Err(lossbound::Error::Precondition(reason)) if spec.condition == Condition::C => {
            ctx.warn(format!("lower bound unavailable: {reason}"));
            (None, Some(reason))
        }
        Err(e) => return Err(e.into()),
    };
    let upper = if spec.condition == Condition::C {
        Some(build(Side::Upper)?)
    } else {
        None
    };
    let vacuous = lower.as_ref().is_some_and(|b| b.vacuous);
    let output = BoundsOutput {
        condition: spec.condition,
        epsilon: eps,
        c_epsilon: spec.c_epsilon(),
        b_hat: spec.b_hat()?,
        vacuous,
        lower: lower.as_ref(),
        lower_unavailable: lower_unavailable.as_deref(),
        upper: upper.as_ref(),
    };
    let body = match ctx.format {
        Format::Json => to_json(&output)?,
        Format::Csv => {
            let mut s = String::from("side,index,mass\n");
            if let Some(b) = &lower {
                pmf_csv_rows(&mut s, "lower", &b.pmf);
            }
            if let Some(b) = &upper {
                pmf_csv_rows(&mut s, "upper", &b.pmf);
            }
            s
        }
    };
    ctx.emit(&body)?;
    ctx.sidecar(
        "bounds",
        serde_json::json!({
            "epsilon": output.epsilon,
            "c_epsilon": output.c_epsilon,
            "b_hat": output.b_hat,
            "vacuous": vacuous,
            "lower_tail_mass": lower.as_ref().map(|b| b.pmf.tail_mass()),
            "upper_tail_mass": upper.as_ref().map(|b| b.pmf.tail_mass()),
        }),
    )?;
    if vacuous {
        ctx.warn(format!(
            "lower bound is vacuous: B̂(λ) + c·ε = {} ≥ 1",
            output.b_hat + output.c_epsilon * eps
        ));
        return Ok(exit::VACUOUS);
    }
    Ok(exit::OK)
}

fn cmd_simulate(ctx: &Ctx) -> CliResult<i32> {
    let mut cfg = required(&ctx.cfg.sim, "sim", "simulate")?.clone();
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    ctx.info(format!(
        "simulating {} busy periods, seed {}",
        cfg.num_busy_periods, cfg.seed
    ));
    let samples = run_busy_periods(&cfg)?;
    let body = match ctx.format {
        Format::Csv => samples_csv(&samples),
        Format::Json => {
            let losses: Vec<u64> = samples.iter().map(|s| s.losses).collect();
            to_json(&serde_json::json!({ "losses": losses }))?
        }
    };
    ctx.emit(&body)?;
    if cfg.trace {
        match &ctx.cfg.output.trace_path {
            Some(p) => fs::write(p, trace_ndjson(&samples)?)?,
            None => ctx.warn("tracing is on but output.trace_path is not set; trace discarded"),
        }
    }
    ctx.sidecar("simulate", serde_json::json!({ "seed": cfg.seed }))?;
    Ok(exit::OK)
}

fn cmd_verify(ctx: &Ctx) -> CliResult<i32> {
    let spec = required(&ctx.cfg.bound, "bound", "verify")?;
    let mut sim = ctx.cfg.harness.unwrap_or_default();
    if let Some(seed) = ctx.seed {
        sim.seed = seed;
    }
    let report = theorem_harness(spec, &sim, &ctx.cfg.grid, &ctx.cfg.truncation)?;
    if ctx.verbosity >= 0 {
        eprint!("{}", verify_table(&report));
    }
    ctx.emit(&to_json(&report)?)?;
    ctx.sidecar("verify", serde_json::json!({ "seed": sim.seed }))?;
    Ok(verdict_exit_code(report.verdict))
}

pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Consistent => exit::OK,
        Verdict::Violated => exit::VIOLATED,
        Verdict::Inconclusive => exit::INCONCLUSIVE,
    }
}

/// Compact human-readable summary of a harness report.
pub fn verify_table(r: &TheoremReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "condition {:?}  n={}  λ={}  ε={:.6}  c={}  B̂={:.6}  N={}  α={}",
        r.condition, r.n, r.lambda, r.epsilon, r.c_epsilon, r.b_hat, r.busy_periods, r.alpha
    );
    let _ = writeln!(
        s,
        "{:<6} {:<13} {:>10} {:>10} {:>8}",
        "side", "verdict", "band", "worst", "at"
    );
    let sides = [("lower", Some(&r.lower)), ("upper", r.upper.as_ref())];
    for (name, side) in sides {
        match side {
            Some(SideReport::Tested { dominance: d, .. }) => {
                let _ = writeln!(
                    s,
                    "{:<6} {:<13} {:>10.6} {:>10.6} {:>8}",
                    name,
                    format!("{:?}", d.verdict).to_lowercase(),
                    d.band_halfwidth,
                    d.worst.margin,
                    d.worst.support
                );
            }
            Some(SideReport::Unavailable { reason }) => {
                let _ = writeln!(s, "{name:<6} unavailable   {reason}");
            }
            None => {}
        }
    }
    let _ = writeln!(s, "overall: {:?}", r.verdict);
    s
}

#[derive(Serialize)]
struct OrderOutput {
    lambda: f64,
    i_max: usize,
    tol: f64,
    x1_leq_x2: OrderVerdict,
    x2_leq_x1: OrderVerdict,
    integrals_x1: Vec<f64>,
    integrals_x2: Vec<f64>,
    class_x1: AgingClass,
    class_x2: AgingClass,
}

fn cmd_order(ctx: &Ctx) -> CliResult<i32> {
    let o = required(&ctx.cfg.order, "order", "order")?;
    let out = OrderOutput {
        lambda: o.lambda,
        i_max: o.i_max,
        tol: o.tol,
        x1_leq_x2: c_lambda_leq(&o.x1, &o.x2, o.lambda, o.i_max, o.tol)?,
        x2_leq_x1: c_lambda_leq(&o.x2, &o.x1, o.lambda, o.i_max, o.tol)?,
        integrals_x1: c_lambda_integrals(&o.x1, o.lambda, o.i_max)?,
        integrals_x2: c_lambda_integrals(&o.x2, o.lambda, o.i_max)?,
        class_x1: check_aging_class(&o.x1, &ctx.cfg.grid)?,
        class_x2: check_aging_class(&o.x2, &ctx.cfg.grid)?,
    };
    let body = match ctx.format {
        Format::Json => to_json(&out)?,
        Format::Csv => {
            let mut s = String::from("index,integral_x1,integral_x2\n");
            for (i, (a, b)) in out.integrals_x1.iter().zip(&out.integrals_x2).enumerate() {
                let _ = writeln!(s, "{i},{},{}", csv_float(*a), csv_float(*b));
            }
            s
        }
    };
    ctx.emit(&body)?;
    ctx.sidecar("order", serde_json::json!({}))?;
    Ok(exit::OK)
}

fn execute(cli: &Cli) -> CliResult<i32> {
    configure_threads()?;
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config <path> is required"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    let ctx = Ctx {
        out: cli.out.clone().or_else(|| cfg.output.path.clone()),
        format: cli.format.or(cfg.output.format).unwrap_or_default(),
        seed: cli.seed,
        verbosity: if cli.quiet { -1 } else { cli.verbose as i8 },
        cfg,
    };
    match cli.command {
        Command::Eps => cmd_eps(&ctx),
        Command::Bounds => cmd_bounds(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Verify => cmd_verify(&ctx),
        Command::Order => cmd_order(&ctx),
    }
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
