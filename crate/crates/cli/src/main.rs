//! `adaptive-mpc`: synthesis, single runs, Monte Carlo campaigns, campaign
//! comparison, and oracle checks of the terminal ingredients.

mod artifact;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_mpc::config::{load_config, ConfigError, ExperimentConfig};
use adaptive_mpc::error::{GeometryError, SimError, SynthesisError};
use adaptive_mpc::sim::{
    compare_campaigns, metrics, monte_carlo, run_closed_loop, write_campaign, Campaign, CampaignMetrics,
};
use adaptive_mpc::synthesis::{synthesize, TerminalIngredients};
use adaptive_mpc::verification::verify_terminal;
use clap::{Args, Parser, Subcommand};

use artifact::Artifact;

#[derive(Parser)]
#[command(name = "adaptive-mpc", version, about = "Adaptive robust and stochastic MPC campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the terminal ingredients and write them as an artifact.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Artifact path; defaults to `artifact.json` in the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate trajectory 0 and write its records.
    Run(RunArgs),
    /// Simulate a campaign of trajectories and write metrics and records.
    Montecarlo(RunArgs),
    /// Compare a robust and a stochastic campaign run on identical noise.
    Compare {
        /// `metrics.json` of the robust campaign.
        robust: PathBuf,
        /// `metrics.json` of the stochastic campaign.
        stochastic: PathBuf,
        /// Also write the comparison to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check invariance and admissibility of the terminal set by vertex
    /// stepping and sampling; prints the oracle reports as JSON.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Random interior points checked on top of the vertices.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Precomputed synthesis; required for campaigns, optional for single runs.
    #[arg(long)]
    artifact: Option<PathBuf>,
    /// Overrides the base seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("artifact {0} was synthesized for a different system; rerun `synth`")]
    ArtifactMismatch(String),
    #[error("a campaign needs --artifact; run `synth` first")]
    MissingArtifact,
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("terminal-set certificate failed")]
    CertificateFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::ArtifactMismatch(_) | CliError::MissingArtifact => 2,
            CliError::Sim(e) => e.exit_code() as u8,
            CliError::CertificateFailed => 5,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&PathBuf>) -> PathBuf {
    out.cloned().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

/// Terminal ingredients from `artifact` after checking its digest, or freshly
/// synthesized when no artifact is given.
fn terminal_for(cfg: &ExperimentConfig, artifact: Option<&PathBuf>) -> Result<TerminalIngredients, CliError> {
    match artifact {
        Some(path) => {
            let a: Artifact = read_json(path)?;
            if !a.matches(&cfg.system) {
                return Err(CliError::ArtifactMismatch(path.display().to_string()));
            }
            Ok(a.terminal)
        }
        None => Ok(synthesize(&cfg.system)?),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(n) = args.trajectories {
        cfg.trajectories = n;
    }
}

fn summary(m: &CampaignMetrics, dir: &Path) {
    println!(
        "{} campaign: {} trajectories x {} steps, mean cost {:.4}, violation rate {:.4}, input violations {}; wrote {}",
        m.mode,
        m.n_traj,
        m.steps,
        m.mean_cost,
        m.violation_rate,
        m.input_violations,
        dir.display()
    );
}

fn cmd_synth(config: &Path, out: Option<&PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let terminal = synthesize(&cfg.system)?;
    let path = out.cloned().unwrap_or_else(|| output_dir(&cfg, None).join("artifact.json"));
    write_json(&Artifact::new(&cfg.system, terminal.clone()), &path)?;
    println!(
        "{} terminal set with {} rows after {} iterations; wrote {}",
        cfg.mode(),
        terminal.set.rows(),
        terminal.iterations,
        path.display()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs, campaign: bool) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, args);
    if campaign && args.artifact.is_none() {
        return Err(CliError::MissingArtifact);
    }
    let terminal = terminal_for(&cfg, args.artifact.as_ref())?;
    let exp = cfg.experiment(&terminal)?;
    let result = if campaign {
        monte_carlo(&exp, cfg.trajectories)?
    } else {
        let rec = run_closed_loop(&exp, 0)?;
        let metrics = metrics(&exp, std::slice::from_ref(&rec))?;
        Campaign { records: vec![rec], metrics }
    };
    let dir = output_dir(&cfg, args.out.as_ref());
    write_campaign(&result, &dir)?;
    summary(&result.metrics, &dir);
    Ok(())
}

fn cmd_compare(robust: &Path, stochastic: &Path, out: Option<&PathBuf>) -> Result<(), CliError> {
    let r: CampaignMetrics = read_json(robust)?;
    let s: CampaignMetrics = read_json(stochastic)?;
    let cmp = compare_campaigns(&r, &s)?;
    if let Some(path) = out {
        write_json(&cmp, path)?;
    }
    println!("{}", serde_json::to_string_pretty(&cmp).map_err(|e| io_err(robust, e))?);
    Ok(())
}

fn cmd_verify(
    config: &Path,
    artifact: Option<&PathBuf>,
    seed: Option<u64>,
    samples: usize,
    out: Option<&PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let terminal = terminal_for(&cfg, artifact)?;
    let report = verify_terminal(&cfg.system, &terminal, samples, seed.unwrap_or(cfg.base_seed))?;
    if let Some(path) = out {
        write_json(&report, path)?;
    }
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| io_err(config, e))?);
    if !report.passes(1e-7) {
        return Err(CliError::CertificateFailed);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { config, out } => cmd_synth(config, out.as_ref()),
        Command::Run(args) => cmd_run(args, false),
        Command::Montecarlo(args) => cmd_run(args, true),
        Command::Compare { robust, stochastic, out } => cmd_compare(robust, stochastic, out.as_ref()),
        Command::Verify { config, artifact, seed, samples, out } => {
            cmd_verify(config, artifact.as_ref(), *seed, *samples, out.as_ref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
