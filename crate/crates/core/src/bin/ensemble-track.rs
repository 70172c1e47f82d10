use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ensemble_track::cli::{cmd_counterexample, cmd_simulate, cmd_synthesize, cmd_validate, RunConfig};

#[derive(Parser)]
#[command(name = "ensemble-track", version, about = "Simultaneous tracking for ensembles of bilinear quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check skew-adjointness, simple spectra and the tracking hypotheses.
    Validate(Flags),
    /// Synthesize a control tracking a target curve.
    Synthesize(Flags),
    /// Replay a control file against a target.
    Simulate(Flags),
    /// Sweep random nonnegative controls on a counterexample instance.
    Counterexample(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    control: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Tracked columns (validate, counterexample: Galerkin order).
    #[arg(long = "levels")]
    levels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a tolerance or budget, e.g. `--tol structure=1e-10`.
    #[arg(long = "tol", value_name = "KEY=VALUE")]
    tol: Vec<String>,
}

fn apply_override(cfg: &mut RunConfig, kv: &str) -> Result<(), String> {
    let (key, value) = kv.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{kv}`"))?;
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{key}: {e}"));
    let int = |v: &str| v.parse::<usize>().map_err(|e| format!("{key}: {e}"));
    match key {
        "structure" => cfg.tol.structure = num(value)?,
        "relation" => cfg.tol.hypotheses.relation_tol = num(value)?,
        "max_coeff" => cfg.tol.hypotheses.max_coeff = int(value)? as i64,
        "edge" => cfg.tol.hypotheses.edge_tol = num(value)?,
        "separation" => cfg.tol.hypotheses.separation_tol = num(value)?,
        "target_fraction" => cfg.tol.target_fraction = num(value)?,
        "endpoint_fraction" => cfg.tol.endpoint_fraction = num(value)?,
        "phase_horizon" => cfg.tol.phase_horizon = num(value)?,
        "tau0" => cfg.tracking.tau0 = Some(num(value)?),
        "max_switchings" => cfg.tracking.max_switchings = int(value)?,
        "max_halvings" => cfg.tracking.max_halvings = int(value)?,
        "rank" => cfg.tracking.rank_tol = num(value)?,
        "residual" => cfg.tracking.residual_tol = num(value)?,
        "controls" => cfg.sweep.controls = int(value)?,
        "horizon" => cfg.sweep.horizon = num(value)?,
        _ => return Err(format!("unknown tolerance `{key}`")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (run, flags): (fn(&RunConfig) -> _, Flags) = match cli.command {
        Command::Validate(f) => (cmd_validate, f),
        Command::Synthesize(f) => (cmd_synthesize, f),
        Command::Simulate(f) => (cmd_simulate, f),
        Command::Counterexample(f) => (cmd_counterexample, f),
    };
    let mut cfg = RunConfig {
        spec: flags.spec,
        target: flags.target,
        control: flags.control,
        out: flags.out,
        eps: flags.eps,
        levels: flags.levels,
        seed: flags.seed,
        ..RunConfig::default()
    };
    for kv in &flags.tol {
        if let Err(msg) = apply_override(&mut cfg, kv) {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    }
    match run(&cfg) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
