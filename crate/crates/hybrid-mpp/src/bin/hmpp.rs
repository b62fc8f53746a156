//! Command-line front end: simulate, check, validate, couple,
//! intensity-path.
//!
//! Exit codes are stable so CI harnesses can branch on them:
//!
//! * 0 success / all checks pass
//! * 1 runtime error
//! * 2 config error
//! * 3 explosion suspected
//! * 4 validation or assumption check failed
//! * 5 inconclusive (insufficient events for a reliable verdict)
//! * 6 trace/model hash mismatch
//! * 7 domination breach

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybrid_mpp::assumptions::{check_model, AssumptionReport, CheckStatus};
use hybrid_mpp::config::{
    build_model, load_config, model_hash, parse_seed_range, ConfigDocument, ConfigError,
    ValidateTest,
};
use hybrid_mpp::functionals::ModelSpec;
use hybrid_mpp::simulator::{
    detect_explosion, simulate, simulate_coupled, ExplosionClassification, SimConfig, SimError,
    SimResult, SimStatus,
};
use hybrid_mpp::trace::{trace_from_str, trace_to_string, TraceError, TraceHeader};
use hybrid_mpp::validation::{rescaled_residuals, transition_frequency_test, ValidationError};

const EXIT_OK: u8 = 0;
const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_EXPLOSION: u8 = 3;
const EXIT_FAILED: u8 = 4;
const EXIT_INCONCLUSIVE: u8 = 5;
const EXIT_HASH_MISMATCH: u8 = 6;
const EXIT_DOMINATION_BREACH: u8 = 7;

#[derive(Parser)]
#[command(
    name = "hmpp",
    about = "Simulate and validate marked point processes with factorized intensities",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trace per seed and write trace files.
    Simulate(SimulateArgs),
    /// Check the stability/existence hypotheses of a model.
    Check(CheckArgs),
    /// Validate trace files against the model that produced them.
    Validate(ValidateArgs),
    /// Run a model coupled under a dominating model and report containment.
    Couple(CoupleArgs),
    /// Evaluate the per-type intensity over a trace on a time grid.
    IntensityPath(IntensityPathArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model configuration (TOML).
    config: PathBuf,
    /// Single seed; overrides the run section.
    #[arg(long)]
    seed: Option<u64>,
    /// Inclusive seed range A..B; overrides the run section.
    #[arg(long)]
    seeds: Option<String>,
    /// Horizon; overrides the run section.
    #[arg(long)]
    horizon: Option<f64>,
    /// Directory for trace files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    config: PathBuf,
    /// Horizon used by the initial-condition grid check.
    #[arg(long)]
    horizon: Option<f64>,
    /// Emit the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Model configuration (TOML).
    config: PathBuf,
    /// Trace files produced by `simulate` with the same model.
    traces: Vec<PathBuf>,
    /// Emit reports as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CoupleArgs {
    /// Model to couple (the dominated process).
    config: PathBuf,
    /// Dominating model.
    dominating: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct IntensityPathArgs {
    config: PathBuf,
    trace: PathBuf,
    /// Number of grid points over [0, horizon].
    #[arg(long, default_value_t = 200)]
    points: usize,
}

/// Failures carrying their process exit code.
enum CmdError {
    Config(ConfigError),
    Sim(SimError),
    Trace(TraceError),
    Validation(ValidationError),
    Io(std::io::Error),
    Other(String),
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Config(_) => EXIT_CONFIG,
            CmdError::Sim(SimError::DominationBreach { .. }) => EXIT_DOMINATION_BREACH,
            CmdError::Sim(_) => EXIT_RUNTIME,
            CmdError::Trace(TraceError::HashMismatch { .. }) => EXIT_HASH_MISMATCH,
            CmdError::Trace(_) => EXIT_RUNTIME,
            CmdError::Validation(_) => EXIT_RUNTIME,
            CmdError::Io(_) => EXIT_RUNTIME,
            CmdError::Other(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> String {
        match self {
            CmdError::Config(e) => format!("config error: {e}"),
            CmdError::Sim(e) => format!("simulation error: {e}"),
            CmdError::Trace(e) => format!("trace error: {e}"),
            CmdError::Validation(e) => format!("validation error: {e}"),
            CmdError::Io(e) => format!("io error: {e}"),
            CmdError::Other(m) => m.clone(),
        }
    }
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e)
    }
}
impl From<SimError> for CmdError {
    fn from(e: SimError) -> Self {
        CmdError::Sim(e)
    }
}
impl From<TraceError> for CmdError {
    fn from(e: TraceError) -> Self {
        CmdError::Trace(e)
    }
}
impl From<ValidationError> for CmdError {
    fn from(e: ValidationError) -> Self {
        CmdError::Validation(e)
    }
}
impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Check(args) => cmd_check(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Couple(args) => cmd_couple(args),
        Command::IntensityPath(args) => cmd_intensity_path(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("hmpp: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// Worker pool sized from HMPP_WORKERS (defaults to the rayon default).
fn build_pool() -> Result<rayon::ThreadPool, CmdError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("HMPP_WORKERS") {
        let workers: usize = value
            .parse()
            .map_err(|_| CmdError::Other(format!("bad HMPP_WORKERS value {value:?}")))?;
        builder = builder.num_threads(workers.max(1));
    }
    builder
        .build()
        .map_err(|e| CmdError::Other(format!("failed to build worker pool: {e}")))
}

struct Loaded {
    doc: ConfigDocument,
    model: ModelSpec,
    hash: String,
}

fn load(path: &Path) -> Result<Loaded, CmdError> {
    let doc = load_config(path)?;
    let model = build_model(&doc)?;
    let hash = model_hash(&doc);
    Ok(Loaded { doc, model, hash })
}

fn seeds_for(
    doc: &ConfigDocument,
    seed: Option<u64>,
    seeds: Option<&str>,
) -> Result<Vec<u64>, CmdError> {
    if let Some(s) = seed {
        return Ok(vec![s]);
    }
    if let Some(range) = seeds {
        return Ok(parse_seed_range(range)?);
    }
    Ok(doc.seeds()?)
}

fn sim_config(
    doc: &ConfigDocument,
    horizon_flag: Option<f64>,
    seed: u64,
) -> Result<SimConfig, CmdError> {
    let horizon = horizon_flag
        .or(doc.run.horizon)
        .ok_or_else(|| CmdError::Other("no horizon given (run.horizon or --horizon)".into()))?;
    let mut cfg = SimConfig::new(horizon, seed);
    if let Some(cap) = doc.run.max_events {
        cfg.max_events = cap;
    }
    if let Some(cap) = doc.run.max_candidates {
        cfg.max_candidates = cap;
    }
    Ok(cfg)
}

fn status_code(status: SimStatus) -> u8 {
    match status {
        SimStatus::Completed => EXIT_OK,
        SimStatus::ExplosionSuspected => EXIT_EXPLOSION,
        SimStatus::CandidateBudgetExhausted => EXIT_RUNTIME,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, CmdError> {
    let loaded = load(&args.config)?;
    let seeds = seeds_for(&loaded.doc, args.seed, args.seeds.as_deref())?;
    std::fs::create_dir_all(&args.out)?;
    let pool = build_pool()?;
    let runs: Vec<Result<(u64, SimResult, PathBuf), CmdError>> = pool.install(|| {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = sim_config(&loaded.doc, args.horizon, seed)?;
                let result = simulate(&loaded.model, &cfg)?;
                let header = TraceHeader::for_result(&result, loaded.hash.clone());
                let path = args.out.join(format!("trace-seed{seed}.txt"));
                std::fs::write(&path, trace_to_string(&header, &result.trajectory))?;
                Ok((seed, result, path))
            })
            .collect()
    });
    let mut exit = EXIT_OK;
    for run in runs {
        let (seed, result, path) = run?;
        let events = result.trajectory.events().len();
        let rate = events as f64 / result.horizon;
        println!(
            "seed {seed}: {events} events (rate {rate:.4}), status {}, accepted {:.1}% of {} candidates -> {}",
            result.status.as_str(),
            100.0 * result.diagnostics.acceptance_rate,
            result.diagnostics.candidates_drawn,
            path.display()
        );
        if let ExplosionClassification::SuspectedExplosive { estimated_t_inf } =
            detect_explosion(&result)
        {
            println!(
                "seed {seed}: suspected explosive, estimated explosion time {estimated_t_inf}"
            );
        }
        exit = exit.max(status_code(result.status));
    }
    Ok(exit)
}

fn render_status(status: &CheckStatus) -> String {
    match status {
        CheckStatus::Verified => "verified".into(),
        CheckStatus::VerifiedNumerically { tolerance } => {
            format!("verified numerically (grid/tolerance {tolerance})")
        }
        CheckStatus::DeclaredByUser => "declared by user".into(),
        CheckStatus::Violated { witness } => format!("VIOLATED: {witness}"),
    }
}

fn render_report(report: &AssumptionReport) {
    println!("assumption report");
    println!(
        "  event-space mass: {} [{}]",
        report.total_event_mass,
        render_status(&report.mass_finite)
    );
    println!(
        "  initial condition finite: [{}]",
        render_status(&report.initial_finite)
    );
    if let Some(b) = &report.branching {
        println!(
            "  branching ratio: rho = {} (argmax target {}) [{}]",
            b.rho,
            b.argmax_target,
            render_status(&b.status)
        );
    }
    if let Some(c) = &report.corollary {
        println!(
            "  existence constraint: rho * sup(phi) = {} * {} [{}]",
            c.rho,
            c.phi_sup,
            render_status(&c.status)
        );
    }
    if let Some(k) = &report.initial_kernel_bound {
        println!("  initial-condition kernel bound: [{}]", render_status(k));
    }
    if let Some(s) = &report.count_domination {
        println!(
            "  count domination: sum of 1/a(n) for n <= {} is {:.6}; monotone [{}]; declared divergent: {} [{}]",
            s.n_max,
            s.partial_sum,
            render_status(&s.monotone),
            s.declared_divergent,
            render_status(&s.status)
        );
    }
    for note in &report.notes {
        println!("  note: {note}");
    }
}

fn cmd_check(args: CheckArgs) -> Result<u8, CmdError> {
    let loaded = load(&args.config)?;
    let horizon = args.horizon.or(loaded.doc.run.horizon).unwrap_or(100.0);
    let report = check_model(&loaded.model, horizon).map_err(ValidationError::from)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serialization")
        );
    } else {
        render_report(&report);
    }
    Ok(if report.has_violations() {
        EXIT_FAILED
    } else {
        EXIT_OK
    })
}

fn cmd_validate(args: ValidateArgs) -> Result<u8, CmdError> {
    if args.traces.is_empty() {
        return Err(CmdError::Other("no trace files given".into()));
    }
    let loaded = load(&args.config)?;
    let level = loaded.doc.validate.level;
    let tests = &loaded.doc.validate.tests;
    let mut any_fail = false;
    let mut any_inconclusive = false;
    for path in &args.traces {
        let text = std::fs::read_to_string(path)?;
        let (header, traj) = trace_from_str(&text)?;
        header.verify_hash(&loaded.hash)?;
        println!("trace {} (seed {}):", path.display(), header.seed);
        if tests.contains(&ValidateTest::Residuals) {
            let set = rescaled_residuals(&traj, &loaded.model, level)?;
            if args.json {
                println!("{}", serde_json::to_string(&set).expect("serialization"));
            } else {
                for t in &set.per_type {
                    match (&t.ks, t.reliable) {
                        (Some(ks), true) => println!(
                            "  residuals type {}: KS {:.5} {} {:.5} (n={}) [{}]",
                            t.event,
                            ks.statistic,
                            if ks.pass { "<" } else { ">=" },
                            ks.threshold,
                            ks.n,
                            if ks.pass { "pass" } else { "FAIL" }
                        ),
                        (Some(ks), false) => println!(
                            "  residuals type {}: n={} below reliability floor, verdict withheld",
                            t.event, ks.n
                        ),
                        (None, _) => println!(
                            "  residuals type {}: no residuals (fewer than two events)",
                            t.event
                        ),
                    }
                }
            }
            match set.verdict() {
                Some(true) => {}
                Some(false) => any_fail = true,
                None => any_inconclusive = true,
            }
        }
        if tests.contains(&ValidateTest::Transitions) {
            let report = transition_frequency_test(&traj, &loaded.model, level)?;
            if args.json {
                println!("{}", serde_json::to_string(&report).expect("serialization"));
            } else {
                println!(
                    "  transitions: chi2 {:.4} vs threshold {:.4} (df {}) [{}]",
                    report.statistic,
                    report.threshold,
                    report.dof,
                    if report.pass { "pass" } else { "FAIL" }
                );
            }
            if !report.pass {
                any_fail = true;
            }
        }
    }
    Ok(if any_fail {
        EXIT_FAILED
    } else if any_inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    })
}

fn cmd_couple(args: CoupleArgs) -> Result<u8, CmdError> {
    let lower = load(&args.config)?;
    let upper = load(&args.dominating)?;
    let seeds = seeds_for(&lower.doc, args.seed, args.seeds.as_deref())?;
    let mut exit = EXIT_OK;
    for seed in seeds {
        let cfg = sim_config(&lower.doc, args.horizon, seed)?;
        let (low, high) = simulate_coupled(&lower.model, &upper.model, &cfg)?;
        // simulate_coupled aborts on a breach; re-derive the containment
        // verdict for the report anyway.
        let upper_set: std::collections::HashSet<(u64, usize)> = high
            .trajectory
            .events()
            .iter()
            .map(|r| (r.time.to_bits(), r.mark.event))
            .collect();
        let contained = low
            .trajectory
            .events()
            .iter()
            .all(|r| upper_set.contains(&(r.time.to_bits(), r.mark.event)));
        println!(
            "seed {seed}: {} dominated events inside {} dominating events [{}]",
            low.trajectory.events().len(),
            high.trajectory.events().len(),
            if contained { "contained" } else { "BREACH" }
        );
        if !contained {
            exit = exit.max(EXIT_DOMINATION_BREACH);
        }
        exit = exit.max(status_code(low.status)).max(status_code(high.status));
    }
    Ok(exit)
}

fn cmd_intensity_path(args: IntensityPathArgs) -> Result<u8, CmdError> {
    let loaded = load(&args.config)?;
    let text = std::fs::read_to_string(&args.trace)?;
    let (header, traj) = trace_from_str(&text)?;
    header.verify_hash(&loaded.hash)?;
    if args.points < 2 {
        return Err(CmdError::Other("--points must be at least 2".into()));
    }
    let grid: Vec<f64> = (0..args.points)
        .map(|i| header.horizon * i as f64 / (args.points - 1) as f64)
        .collect();
    let path = hybrid_mpp::simulator::intensity_path(&loaded.model, &traj, &grid)
        .map_err(|e| CmdError::Validation(e.into()))?;
    let d = loaded.model.events.len();
    let mut head = String::from("time");
    for e in 0..d {
        head.push_str(&format!(",lambda_{e}"));
    }
    println!("{head}");
    for (t, row) in grid.iter().zip(path) {
        let mut line = format!("{t}");
        for v in row {
            line.push_str(&format!(",{v}"));
        }
        println!("{line}");
    }
    Ok(EXIT_OK)
}
