//! Command-line front end.
//!
//! Exit codes: 0 pass, 1 usage or configuration error, 2 contract violation
//! (failed check, degenerate or escaping state), 3 internal error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::concentration::{concentration_experiment, ConcentrationConfig, ConcentrationReport};
use crate::analysis::horizon::{harmonic_sweep, horizon_sweep};
use crate::analysis::rates::{displacement_check, rate_bound_sweep, worst_case_fixture};
use crate::analysis::suites::{default_instances, gradient_suite, surrogate_suite, trajectory_invariants, InvariantReport};
use crate::analysis::verdict::{convergence_verdict, Verdict};
use crate::config::{OracleSpec, RunConfig};
use crate::distribution::Distribution;
use crate::engine::{run, EngineCounters, RunOutcome};
use crate::error::{Error, Result};
use crate::moments::MomentOracle;
use crate::plot::{trace_charts, PlotMeta, TraceTable};
use crate::rng::SimRng;
use crate::schedule::Policy;

#[derive(Parser, Debug)]
#[command(name = "streamkmeans", version, about = "Online k-means runs and diagnostics")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Output {
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Seed override; takes precedence over STREAMKMEANS_SEED and the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute one run and write trace.csv and summary.json.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
        /// Trace thinning stride.
        #[arg(long, value_name = "N")]
        stride: Option<u64>,
    },
    /// Compare the analytic gradient with finite differences and check the surrogate bounds.
    CheckGradient {
        /// Take the distribution from this run config instead of the built-in instances.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Horizon, harmonic, displacement and accumulated-rate bounds.
    CheckBounds {
        /// Run whose trace feeds the displacement and rate checks.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
        /// Random row pairs for the displacement check.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
    /// Repeated runs measuring how often the mass estimator strays.
    Concentration {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        /// Checkpoint iterations (repeatable).
        #[arg(long = "checkpoint", value_name = "N", default_values_t = [100_000u64])]
        checkpoints: Vec<u64>,
        /// Lipschitz constant for `c`; probed when omitted.
        #[arg(long)]
        lipschitz: Option<f64>,
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
    },
    /// Run several configs and seeds concurrently.
    Sweep {
        #[arg(long, value_name = "PATH", required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
        /// Seeds per config, counting up from the resolved seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        #[arg(long, value_name = "N")]
        stride: Option<u64>,
    },
    /// Render SVG charts from a trace.
    Plot {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
        /// Config used for provenance and estimator bands; defaults to summary.json beside the trace.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Parse `args`, run the subcommand and return the process exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run { config, output, stride } => cmd_run(&config, &output, stride),
        Command::CheckGradient { config, output, probes, pairs } => cmd_check_gradient(config.as_deref(), &output, probes, pairs),
        Command::CheckBounds { config, output, pairs } => cmd_check_bounds(config.as_deref(), &output, pairs),
        Command::Concentration { config, output, runs, checkpoints, lipschitz, jobs } => {
            cmd_concentration(&config, &output, runs, checkpoints, lipschitz, jobs)
        }
        Command::Sweep { config, output, seeds, jobs, stride } => cmd_sweep(&config, &output, seeds, jobs, stride),
        Command::Plot { trace, config, out, force } => cmd_plot(&trace, config.as_deref(), &out, force),
    }
}

/// Create `dir` and refuse to clobber any of `files` without `force`.
fn prepare_out(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if !force {
        if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return Err(Error::Config(format!("{} already exists; pass --force to overwrite", f.display())));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.resolve_seed(seed)?;
    Ok(cfg)
}

fn resolve_seed_only(seed: Option<u64>) -> Result<u64> {
    let mut cfg = RunConfig::uniform_generalized(1, 0, 0);
    cfg.resolve_seed(seed)?;
    Ok(cfg.seed)
}

#[derive(Serialize)]
struct ErrorRecord {
    message: String,
    exit_code: i32,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a RunConfig,
    seed: u64,
    config_sha256: String,
    iterations_completed: u64,
    rows: usize,
    counters: EngineCounters,
    invariants: InvariantReport,
    verdict: Option<Verdict>,
    final_centers: Vec<Vec<f64>>,
    error: Option<ErrorRecord>,
}

/// Oracle for the verdict: the configured one, else exact when available.
fn verdict_oracle(cfg: &RunConfig, dist: &dyn Distribution) -> Option<MomentOracle> {
    match cfg.oracle {
        OracleSpec::None => dist.exact().map(|_| MomentOracle::exact()),
        other => other.build(cfg.seed),
    }
}

fn summarize<'a>(cfg: &'a RunConfig, outcome: &RunOutcome) -> Result<RunSummary<'a>> {
    let trace = &outcome.trace;
    let dist = cfg.distribution.build()?;
    let verdict = match verdict_oracle(cfg, dist.as_ref()) {
        Some(o) => match convergence_verdict(trace, dist.as_ref(), &o, &cfg.verdict) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("no verdict: {e}");
                None
            }
        },
        None => None,
    };
    Ok(RunSummary {
        config: cfg,
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        iterations_completed: trace.iterations,
        rows: trace.rows.len(),
        counters: trace.counters,
        invariants: trajectory_invariants(trace),
        verdict,
        final_centers: trace.final_row().centers.points().map(<[f64]>::to_vec).collect(),
        error: outcome.error.as_ref().map(|e| ErrorRecord { message: e.to_string(), exit_code: e.exit_code() }),
    })
}

fn outcome_code(summary: &RunSummary<'_>) -> i32 {
    match &summary.error {
        Some(e) => e.exit_code,
        None if !summary.invariants.pass() => 2,
        None => 0,
    }
}

fn cmd_run(config: &Path, output: &Output, stride: Option<u64>) -> Result<i32> {
    let mut cfg = load_config(config, output.seed)?;
    if let Some(s) = stride {
        cfg.stride = s;
    }
    cfg.validate()?;
    prepare_out(&output.out, &["trace.csv", "summary.json"], output.force)?;
    let outcome = run(&cfg)?;
    outcome.trace.write_csv_file(&output.out.join("trace.csv"))?;
    let summary = summarize(&cfg, &outcome)?;
    write_json(&output.out.join("summary.json"), &summary)?;
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    Ok(outcome_code(&summary))
}

#[derive(Serialize)]
struct GradientReport {
    seed: u64,
    gradient: crate::analysis::suites::GradientSuite,
    surrogate: crate::analysis::suites::SurrogateSuite,
    pass: bool,
}

fn cmd_check_gradient(config: Option<&Path>, output: &Output, probes: usize, pairs: usize) -> Result<i32> {
    let (instances, seed) = match config {
        Some(p) => {
            let cfg = load_config(p, output.seed)?;
            let dist = cfg.distribution.build()?;
            if dist.exact().is_none() {
                return Err(Error::Capability("check-gradient needs a distribution with exact cell moments".into()));
            }
            (vec![dist], cfg.seed)
        }
        None => (default_instances(), resolve_seed_only(output.seed)?),
    };
    prepare_out(&output.out, &["report.json"], output.force)?;
    let gradient = gradient_suite(&instances, probes, 1e-5, 1e-5, seed)?;
    let surrogate = surrogate_suite(&instances, pairs, 1e-12, seed)?;
    let pass = gradient.pass() && surrogate.pass();
    println!(
        "gradient: {} probes, max error {:.3e}, {} failures; surrogate: {} pairs, {} violations",
        gradient.probes, gradient.max_error, gradient.failures, surrogate.pairs, surrogate.violations
    );
    write_json(&output.out.join("report.json"), &GradientReport { seed, gradient, surrogate, pass })?;
    Ok(if pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct BoundsReport {
    seed: u64,
    horizon_cases: u64,
    horizon_lower_violations: usize,
    horizon_upper_violations: usize,
    horizon_corrected_lower_violations: usize,
    harmonic_cases: u64,
    harmonic_violations: usize,
    displacement: crate::analysis::rates::DisplacementReport,
    rate_bound: Option<crate::analysis::rates::RateBoundSweep>,
    worst_case: Option<crate::analysis::rates::WorstCase>,
    pass: bool,
}

fn cmd_check_bounds(config: Option<&Path>, output: &Output, pairs: usize) -> Result<i32> {
    let cfg = match config {
        Some(p) => load_config(p, output.seed)?,
        None => {
            let mut c = RunConfig { oracle: OracleSpec::None, ..RunConfig::uniform_generalized(2, 100_000, 0) };
            c.resolve_seed(output.seed)?;
            c
        }
    };
    prepare_out(&output.out, &["report.json", "violations.csv"], output.force)?;

    let horizon = horizon_sweep(&[0.1, std::f64::consts::LN_2], 2..=10_000)?;
    let harmonic = harmonic_sweep(2..=1000);
    let outcome = run(&cfg)?;
    if let Some(e) = &outcome.error {
        return Err(Error::Contract(format!("run for the trajectory checks failed: {e}")));
    }
    let trace = outcome.trace;
    let displacement = displacement_check(&trace, pairs, 1e-12, &mut SimRng::new(cfg.seed, 3));
    let schedule = cfg.schedule.build()?;
    let (rate_bound, worst_case) = match (schedule.policy, schedule.power_law) {
        (Policy::GeneralizedLloyd, Some(p)) => {
            let sweep = rate_bound_sweep(&trace, &p, 1e-12);
            let n = trace.iterations.max(64);
            (Some(sweep), worst_case_fixture(&p, cfg.k.max(2), n).ok())
        }
        _ => (None, None),
    };

    let mut wtr = csv::Writer::from_path(output.out.join("violations.csv"))?;
    wtr.write_record(["check", "r", "m", "n", "detail"])?;
    for c in &horizon.lower_violations {
        wtr.write_record(["horizon_lower", &c.r.to_string(), &c.m.to_string(), &c.t.to_string(), "alpha(m-1) > T-m"])?;
    }
    for c in &horizon.upper_violations {
        wtr.write_record(["horizon_upper", &c.r.to_string(), &c.m.to_string(), &c.t.to_string(), "T-m > alpha m"])?;
    }
    for (m, mp, b) in &harmonic.violations {
        let detail = format!("{} <= {} <= {}", b.lower, b.sum, b.upper);
        wtr.write_record(["harmonic", "", &m.to_string(), &mp.to_string(), &detail])?;
    }
    if displacement.violations > 0 {
        let detail = format!("{} pairs, max excess {}", displacement.violations, displacement.max_excess);
        wtr.write_record(["displacement", "", "", "", &detail])?;
    }
    for v in rate_bound.iter().flat_map(|s| &s.violations) {
        let detail = format!("observed {} > bound {}", v.observed, v.bound);
        wtr.write_record(["accumulated_rate", "", "", &v.n.to_string(), &detail])?;
    }
    if let Some(w) = &worst_case {
        if w.observed > w.construction + 1e-12 || w.construction > w.bound {
            let detail = format!("observed {} construction {} bound {}", w.observed, w.construction, w.bound);
            wtr.write_record(["worst_case", "", "", &w.n.to_string(), &detail])?;
        }
    }
    wtr.flush()?;

    let worst_ok = worst_case.as_ref().is_none_or(|w| w.observed <= w.construction + 1e-12 && w.construction <= w.bound);
    let pass = horizon.lower_violations.is_empty()
        && horizon.upper_violations.is_empty()
        && harmonic.violations.is_empty()
        && displacement.violations == 0
        && rate_bound.as_ref().is_none_or(|s| s.violations.is_empty())
        && worst_ok;
    let report = BoundsReport {
        seed: cfg.seed,
        horizon_cases: horizon.cases,
        horizon_lower_violations: horizon.lower_violations.len(),
        horizon_upper_violations: horizon.upper_violations.len(),
        horizon_corrected_lower_violations: horizon.corrected_lower_violations.len(),
        harmonic_cases: harmonic.cases,
        harmonic_violations: harmonic.violations.len(),
        displacement,
        rate_bound,
        worst_case,
        pass,
    };
    println!(
        "horizon: {} cases, {} lower / {} upper violations ({} against the corrected lower bound); harmonic: {} cases, {} violations; displacement: {} violations; accumulated rate: {} violations",
        report.horizon_cases,
        report.horizon_lower_violations,
        report.horizon_upper_violations,
        report.horizon_corrected_lower_violations,
        report.harmonic_cases,
        report.harmonic_violations,
        report.displacement.violations,
        report.rate_bound.as_ref().map_or(0, |s| s.violations.len()),
    );
    write_json(&output.out.join("report.json"), &report)?;
    Ok(if pass { 0 } else { 2 })
}

fn cmd_concentration(
    config: &Path,
    output: &Output,
    runs: usize,
    checkpoints: Vec<u64>,
    lipschitz: Option<f64>,
    jobs: Option<usize>,
) -> Result<i32> {
    let base = load_config(config, output.seed)?;
    prepare_out(&output.out, &["report.json", "concentration.csv"], output.force)?;
    let report: ConcentrationReport =
        concentration_experiment(&ConcentrationConfig { base, runs, checkpoints, lipschitz, jobs })?;
    let mut wtr = csv::Writer::from_path(output.out.join("concentration.csv"))?;
    wtr.write_record([
        "n", "s_n", "t_n_circ", "a_n", "threshold", "qualifies", "trials", "failures", "frequency", "allowed", "max_deviation",
        "pass",
    ])?;
    for c in &report.checkpoints {
        wtr.write_record([
            c.n.to_string(),
            c.s_n.to_string(),
            c.t_n_circ.to_string(),
            c.a_n.to_string(),
            c.threshold.to_string(),
            c.qualifies.to_string(),
            c.trials.to_string(),
            c.failures.to_string(),
            c.frequency.to_string(),
            c.allowed.to_string(),
            c.max_deviation.to_string(),
            c.pass.to_string(),
        ])?;
    }
    wtr.flush()?;
    println!("{}", report.note);
    write_json(&output.out.join("report.json"), &report)?;
    Ok(if report.pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct SweepRow {
    job: usize,
    config: String,
    seed: u64,
    iterations: u64,
    final_cost: Option<f64>,
    max_final_gradnorm: Option<f64>,
    verdict_pass: Option<bool>,
    exit_code: i32,
}

fn cmd_sweep(configs: &[PathBuf], output: &Output, seeds: u64, jobs: Option<usize>, stride: Option<u64>) -> Result<i32> {
    let mut plan = Vec::new();
    for path in configs {
        let mut cfg = load_config(path, output.seed)?;
        if let Some(s) = stride {
            cfg.stride = s;
        }
        cfg.validate()?;
        for i in 0..seeds.max(1) {
            plan.push((path.display().to_string(), RunConfig { seed: cfg.seed.wrapping_add(i), ..cfg.clone() }));
        }
    }
    prepare_out(&output.out, &["sweep.csv", "report.json"], output.force)?;
    let work = || -> Vec<Result<(RunOutcome, RunConfig, String)>> {
        plan.par_iter().map(|(name, cfg)| run(cfg).map(|o| (o, cfg.clone(), name.clone()))).collect()
    };
    let results = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {j} worker threads: {e}")))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::with_capacity(results.len());
    for (job, res) in results.into_iter().enumerate() {
        let (outcome, cfg, name) = res?;
        let dir = output.out.join(format!("job_{job:03}"));
        std::fs::create_dir_all(&dir)?;
        outcome.trace.write_csv_file(&dir.join("trace.csv"))?;
        let summary = summarize(&cfg, &outcome)?;
        write_json(&dir.join("summary.json"), &summary)?;
        rows.push(SweepRow {
            job,
            config: name,
            seed: cfg.seed,
            iterations: outcome.trace.iterations,
            final_cost: summary.verdict.as_ref().map(|v| v.final_cost),
            max_final_gradnorm: summary.verdict.as_ref().map(|v| v.final_grad_norms.iter().copied().fold(0.0, f64::max)),
            verdict_pass: summary.verdict.as_ref().map(|v| v.pass),
            exit_code: outcome_code(&summary),
        });
    }
    let mut wtr = csv::Writer::from_path(output.out.join("sweep.csv"))?;
    for r in &rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    write_json(&output.out.join("report.json"), &rows)?;
    println!("{} jobs, {} with a passing verdict", rows.len(), rows.iter().filter(|r| r.verdict_pass == Some(true)).count());
    Ok(rows.iter().map(|r| r.exit_code).max().unwrap_or(0))
}

fn cmd_plot(trace: &Path, config: Option<&Path>, out: &Path, force: bool) -> Result<i32> {
    if !trace.exists() {
        return Err(Error::Input(format!("trace {} does not exist", trace.display())));
    }
    let table = TraceTable::read(trace)?;
    let cfg = match config {
        Some(p) => Some(RunConfig::load(p)?),
        None => {
            let summary = trace.with_file_name("summary.json");
            match std::fs::read_to_string(&summary) {
                Ok(text) => {
                    let v: serde_json::Value = serde_json::from_str(&text)?;
                    v.get("config").cloned().map(serde_json::from_value).transpose()?
                }
                Err(_) => None,
            }
        }
    };
    let meta = PlotMeta {
        config_sha256: cfg.as_ref().map(RunConfig::hash),
        seed: cfg.as_ref().map(|c| c.seed),
        source: trace.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let schedule = cfg.as_ref().map(|c| c.schedule.build()).transpose()?;
    let window = schedule.map(|s| move |n: u64| s.window(n));
    let charts = trace_charts(&table, &meta, window.as_ref().map(|w| w as &dyn Fn(u64) -> u64))?;
    let names: Vec<&str> = charts.iter().map(|(n, _)| n.as_str()).collect();
    prepare_out(out, &names, force)?;
    for (name, svg) in &charts {
        std::fs::write(out.join(name), svg)?;
    }
    println!("wrote {}", names.join(", "));
    Ok(0)
}
