//! Subcommand implementations.
//!
//! Every command resolves the config, runs one experiment, and writes its
//! data files plus a `manifest.json` capturing the resolved config, seed,
//! and artifact version. Files are written atomically (temp file + rename)
//! and all numeric formatting is deterministic, so rerunning a manifest'd
//! config reproduces the outputs byte for byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 check failure
//! (classification refusal or equivalence violations), 4 numerical
//! divergence.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use linphase::dynamics::{estimate_diffusion_const, train};
use linphase::landscape::{effective_loss_extended, second_derivative_left_paper};
use linphase::oracle::verify_equivalence;
use linphase::sweep::{
    classify_transition, depth_scan, evaluate_point, run_sweep, write_depth_scan_csv,
    SweepError, SweepOptions, Thresholds, TransitionReport,
};
use serde::Serialize;

use crate::config::{EngineSpec, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "linphase",
    version,
    about = "Landscape, sweep, and training-dynamics experiments for weight-decay-regularized deep linear nets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimization engine; overrides the config's `engine`.
    #[arg(long, value_enum)]
    pub engine: Option<EngineSpec>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the effective loss over a (gamma, b) grid.
    Landscape(CommonArgs),
    /// Sweep the free energy over the gamma grid.
    Sweep(CommonArgs),
    /// Sweep, then classify the transition by Ehrenfest order.
    Classify(CommonArgs),
    /// Run one (noisy) gradient-descent training trajectory.
    Train(CommonArgs),
    /// Minimum loss per depth at fixed gamma.
    Depthscan(CommonArgs),
    /// Certify the order-parameter reduction against the full minimizer.
    Verify(CommonArgs),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Check(String),
    Divergence(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Check(m) => write!(f, "{m}"),
            CliError::Divergence(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Check(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn sweep_error(e: SweepError) -> CliError {
    match e {
        SweepError::NonMonotone { .. } | SweepError::LossOutOfRange { .. } => {
            CliError::Check(e.to_string())
        }
        other => CliError::Config(other.to_string()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Landscape(args) => cmd_landscape(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Train(args) => cmd_train(args),
        Command::Depthscan(args) => cmd_depthscan(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

struct Prepared {
    config: RunConfig,
    out_dir: PathBuf,
}

fn prepare(args: &CommonArgs) -> Result<Prepared, CliError> {
    let raw = RunConfig::load(&args.config).map_err(CliError::Config)?;
    let mut config = raw.resolve(args.seed, args.engine);
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    let out_dir = config.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    Ok(Prepared { config, out_dir })
}

/// Writes via a sibling temp file and an atomic rename.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    outputs: Vec<String>,
}

fn write_manifest(
    prepared: &Prepared,
    command: &str,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: prepared.config.seed,
        config: &prepared.config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    atomic_write(&prepared.out_dir.join("manifest.json"), text.as_bytes())
}

fn sweep_options(config: &RunConfig) -> SweepOptions {
    SweepOptions {
        engine: config.engine().into(),
        n_starts: config.n_starts,
        seed: config.seed,
    }
}

fn cmd_landscape(args: CommonArgs) -> Result<(), CliError> {
    let prepared = prepare(&args)?;
    let config = &prepared.config;
    if config.depth == 0 {
        return Err(CliError::Config(
            "the landscape table needs depth >= 1; depth 0 is ridge regression".into(),
        ));
    }
    let cfg = config.net_config();
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = config.moment_data().map_err(CliError::Config)?;
    let gammas = config.grid.values().map_err(CliError::Config)?;
    let bs = config.bgrid.values().map_err(CliError::Config)?;

    let mut out = String::from("gamma,b,loss\n");
    for &gamma in &gammas {
        for &b in &bs {
            let loss = effective_loss_extended(b, gamma, &cfg, &data)
                .map_err(|e| CliError::Config(e.to_string()))?;
            out.push_str(&format!("{gamma},{b},{loss}\n"));
        }
    }
    atomic_write(&prepared.out_dir.join("landscape.csv"), out.as_bytes())?;
    write_manifest(&prepared, "landscape", &["landscape.csv"])?;
    Ok(())
}

fn run_configured_sweep(prepared: &Prepared) -> Result<linphase::sweep::SweepResult, CliError> {
    let config = &prepared.config;
    let cfg = config.net_config();
    let data = config.moment_data().map_err(CliError::Config)?;
    let gammas = config.grid.values().map_err(CliError::Config)?;
    if gammas.len() < 9 {
        return Err(CliError::Config(format!(
            "sweep commands need a grid of at least 9 points, got {}",
            gammas.len()
        )));
    }
    run_sweep(&gammas, &cfg, &data, &sweep_options(config)).map_err(sweep_error)
}

fn cmd_sweep(args: CommonArgs) -> Result<(), CliError> {
    let prepared = prepare(&args)?;
    let result = run_configured_sweep(&prepared)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    atomic_write(&prepared.out_dir.join("sweep.csv"), &buf)?;
    write_manifest(&prepared, "sweep", &["sweep.csv"])?;
    Ok(())
}

/// Attaches the closed-form left second derivative claimed for depth 1 and
/// a flag marking its disagreement with the numerical estimate. The two are
/// reported side by side, never reconciled.
fn attach_paper_comparison(report: &mut TransitionReport, prepared: &Prepared) {
    let config = &prepared.config;
    if config.depth != 1 || report.gamma_star.is_none() {
        return;
    }
    let cfg = config.net_config();
    let Ok(data) = config.moment_data() else {
        return;
    };
    if let Ok(claimed) = second_derivative_left_paper(&cfg, &data) {
        let numeric = report.d2_left;
        report.paper_d2_left = Some(claimed);
        report.paper_d2_discrepancy =
            Some((numeric - claimed).abs() > 0.2 * numeric.abs().max(1e-12));
    }
}

fn cmd_classify(args: CommonArgs) -> Result<(), CliError> {
    let prepared = prepare(&args)?;
    let config = &prepared.config;
    let result = run_configured_sweep(&prepared)?;
    let cfg = config.net_config();
    let data = config.moment_data().map_err(CliError::Config)?;
    let opts = sweep_options(config);
    let mut report = classify_transition(&result, &Thresholds::default(), |gamma| {
        evaluate_point(gamma, &cfg, &data, &opts)
    })
    .map_err(sweep_error)?;
    attach_paper_comparison(&mut report, &prepared);

    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    atomic_write(&prepared.out_dir.join("sweep.csv"), &buf)?;
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    atomic_write(&prepared.out_dir.join("transition.json"), json.as_bytes())?;
    write_manifest(&prepared, "classify", &["sweep.csv", "transition.json"])?;
    Ok(())
}

fn cmd_train(args: CommonArgs) -> Result<(), CliError> {
    let prepared = prepare(&args)?;
    let config = &prepared.config;
    let cfg = config.net_config();
    let data = config.moment_data().map_err(CliError::Config)?;
    let tcfg = config.trainer_config();
    let mut traj =
        train(&tcfg, &cfg, config.gamma, &data).map_err(|e| CliError::Config(e.to_string()))?;
    let diff_const = estimate_diffusion_const(&tcfg, &cfg);
    traj.apply_diffusion_const(diff_const);

    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    atomic_write(&prepared.out_dir.join("trajectory.csv"), &buf)?;
    write_manifest(&prepared, "train", &["trajectory.csv"])?;
    if traj.diverged {
        return Err(CliError::Divergence(format!(
            "training diverged at step {}; trajectory written to {}",
            traj.rows.last().map_or(0, |r| r.step),
            prepared.out_dir.join("trajectory.csv").display()
        )));
    }
    Ok(())
}

fn cmd_depthscan(args: CommonArgs) -> Result<(), CliError> {
    let prepared = prepare(&args)?;
    let config = &prepared.config;
    let cfg = config.net_config();
    let data = config.moment_data().map_err(CliError::Config)?;
    if config.depths.is_empty() {
        return Err(CliError::Config("depthscan needs a nonempty depth list".into()));
    }
    let rows =
        depth_scan(config.gamma, &config.depths, &cfg, &data).map_err(sweep_error)?;
    let mut buf = Vec::new();
    write_depth_scan_csv(&rows, &mut buf)?;
    atomic_write(&prepared.out_dir.join("depthscan.csv"), &buf)?;
    write_manifest(&prepared, "depthscan", &["depthscan.csv"])?;
    Ok(())
}

fn cmd_verify(args: CommonArgs) -> Result<(), CliError> {
    let prepared = prepare(&args)?;
    let config = &prepared.config;
    let cfg = config.net_config();
    let data = config.moment_data().map_err(CliError::Config)?;
    let gammas = config.grid.values().map_err(CliError::Config)?;
    let report = verify_equivalence(&gammas, &cfg, &data, config.n_starts, config.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    atomic_write(&prepared.out_dir.join("equivalence.json"), json.as_bytes())?;
    write_manifest(&prepared, "verify", &["equivalence.json"])?;
    if !report.passed() {
        return Err(CliError::Check(format!(
            "order-parameter reduction violated at {} of {} grid points (tolerance {:.1e})",
            report.violations,
            report.rows.len(),
            report.tolerance
        )));
    }
    Ok(())
}
