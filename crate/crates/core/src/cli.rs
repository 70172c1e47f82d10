//! Pipeline orchestration behind the `ensemble-track` binary.
//!
//! Each `cmd_*` reads its inputs from the paths in a [`RunConfig`], writes its
//! artifacts under `out`, and returns an [`Outcome`] whose exit code the
//! binary hands back to the shell.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{build_su_target, tail_truncation_order, truncate_operators, GalerkinModel, SUTarget, TargetCurve};
use crate::io;
use crate::liealg::GeneratorSet;
use crate::model::{check_hypotheses, validate_spec, EnsembleSpec, HypothesisOptions, HypothesisReport, ValidationReport};
use crate::sim::{
    endpoint_error, modulus_error, propagate, verify_counterexample, CounterexampleReport, SampleGrid, TrackingReport,
};
use crate::synthesis::{bch_tracking_control, final_phase_adjust, l1_bound, ControlDomain, PiecewiseConstantControl};
use crate::synthesis::{SynthesisPlan, TrackingOptions};

/// Numeric thresholds a run may override.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    /// Skew-adjointness and spectral simplicity.
    pub structure: f64,
    pub hypotheses: HypothesisOptions,
    /// Share of `eps` spent on the special-unitary approximation of the target.
    pub target_fraction: f64,
    /// Share of `eps` the final drift segment may leave at the endpoint.
    pub endpoint_fraction: f64,
    /// Longest final drift segment.
    pub phase_horizon: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            structure: 1e-12,
            hypotheses: HypothesisOptions::default(),
            target_fraction: 0.1,
            endpoint_fraction: 0.5,
            phase_horizon: 1e4,
        }
    }
}

/// Random nonnegative controls for the counterexample sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub controls: usize,
    pub switchings: usize,
    pub max_value: f64,
    pub max_duration: f64,
    pub horizon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            controls: 100,
            switchings: 20,
            max_value: 5.0,
            max_duration: 1.0,
            horizon: 1e3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub control: Option<PathBuf>,
    pub out: PathBuf,
    pub eps: f64,
    /// Tracked columns `N`; defaults to every column of the target file.
    pub levels: Option<usize>,
    pub seed: u64,
    pub tol: Tolerances,
    pub tracking: TrackingOptions,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            spec: None,
            target: None,
            control: None,
            out: PathBuf::from("out"),
            eps: 0.1,
            levels: None,
            seed: 0,
            tol: Tolerances::default(),
            tracking: TrackingOptions::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Usage(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        Ok(())
    }

    fn required<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Usage(format!("missing --{flag}")))
    }
}

/// Result of a subcommand: exit code plus a one-line summary.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Outcome { code: 0, summary }
    }
}

/// Structural and hypothesis verdicts of one spec at one order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub validation: ValidationReport,
    pub hypotheses: Option<HypothesisReport>,
}

impl CheckReport {
    pub fn exit_code(&self) -> i32 {
        if !self.validation.passed() {
            2
        } else if !self.hypotheses.as_ref().is_some_and(|h| h.passed()) {
            3
        } else {
            0
        }
    }
}

/// Validation at `order`; hypotheses are only examined on a structurally valid spec.
pub fn check_spec(spec: &EnsembleSpec, order: usize, tol: &Tolerances) -> Result<CheckReport> {
    let validation = validate_spec(spec, tol.structure)?;
    let hypotheses = if validation.passed() {
        Some(check_hypotheses(spec, order, &tol.hypotheses)?)
    } else {
        None
    };
    Ok(CheckReport { validation, hypotheses })
}

fn check_error(r: &CheckReport) -> Option<Error> {
    match r.exit_code() {
        0 => None,
        2 => Some(Error::Structural(format!(
            "validation failed: {}",
            serde_json::to_string(&r.validation).unwrap_or_default()
        ))),
        _ => Some(Error::Hypothesis(
            serde_json::to_string(&r.hypotheses).unwrap_or_default(),
        )),
    }
}

pub fn cmd_validate(config: &RunConfig) -> Result<Outcome> {
    config.check()?;
    let spec = EnsembleSpec::from_file(config.required(&config.spec, "spec")?)?;
    let order = config.levels.unwrap_or(spec.min_depth());
    let report = check_spec(&spec, order, &config.tol)?;
    io::write_json(&config.out.join("validation.json"), &report)?;
    Ok(Outcome {
        code: report.exit_code(),
        summary: match report.exit_code() {
            0 => format!("spec valid, hypotheses hold at order {order}"),
            2 => "structural validation failed".into(),
            _ => format!("hypotheses fail at order {order}"),
        },
    })
}

/// Everything a synthesized run produces.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub model: GalerkinModel,
    pub target: SUTarget,
    pub checks: CheckReport,
    /// Original-time control, tracking part followed by the final drift.
    pub control: PiecewiseConstantControl,
    pub plan: SynthesisPlan,
    pub phase_time: f64,
    pub phase_residual: f64,
    pub report: TrackingReport,
}

/// Full pipeline on in-memory inputs.
pub fn synthesize(spec: &EnsembleSpec, curve: &TargetCurve, config: &RunConfig) -> Result<Synthesis> {
    config.check()?;
    let started = Instant::now();
    let n = config.levels.unwrap_or(curve.columns());
    let target = build_su_target(curve, n, config.tol.target_fraction * config.eps)?;
    if curve.blocks != spec.blocks() {
        return Err(Error::structural("target blocks do not match the spec"));
    }
    let m = target.order;
    let checks = check_spec(spec, m, &config.tol)?;
    if let Some(e) = check_error(&checks) {
        return Err(e);
    }
    let model = truncate_operators(spec, m)?;
    let gens = GeneratorSet::new(&model, config.tol.hypotheses.edge_tol);
    let opts = TrackingOptions {
        eps: config.eps,
        ..config.tracking.clone()
    };
    let (v, plan) = bch_tracking_control(&target, &model, &gens, &opts)?;

    let init = target.at(0);
    let last = target.len() - 1;
    let reached = propagate(&model, &v, &init, &SampleGrid::endpoints_only())?.final_frames();
    let adjust = final_phase_adjust(
        &model,
        &reached,
        &target.at(last),
        n,
        config.tol.phase_horizon,
        config.tol.endpoint_fraction * config.eps,
    )?;
    let control = v.concat(&adjust.segment)?.reparametrize()?;
    let mut report = evaluate(&model, &target, &control, n, config.eps)?;
    let chain: Vec<(usize, usize, usize)> = checks
        .hypotheses
        .iter()
        .flat_map(|h| h.chains.iter())
        .flat_map(|c| {
            let b = model.blocks.iter().position(|&x| x == (c.system, c.control)).unwrap();
            c.pairs.iter().map(move |&(k, l)| (b, k, l))
        })
        .collect();
    let t_v = control.reparametrized_horizon();
    let n1 = if t_v > 0.0 {
        tail_truncation_order(spec, config.eps, n, t_v, m)?
    } else {
        m
    };
    report.l1_bound = Some(l1_bound(&model, &target, n1, &chain)?);
    report.switchings = plan.switchings;
    report.seed = config.seed;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(Synthesis {
        model,
        target,
        checks,
        control,
        plan,
        phase_time: adjust.t_star,
        phase_residual: adjust.residual,
        report,
    })
}

/// Simulates `control` from the target's initial frames and measures both
/// tracking metrics on the first `n` columns.
pub fn evaluate(
    model: &GalerkinModel,
    target: &SUTarget,
    control: &PiecewiseConstantControl,
    n: usize,
    eps: f64,
) -> Result<TrackingReport> {
    let init = target.at(0);
    let horizon = control.total_duration();
    let traj = propagate(model, control, &init, &SampleGrid::standard(horizon))?;
    Ok(TrackingReport {
        eps,
        order: model.order,
        columns: n,
        modulus_error: modulus_error(&traj, target, n)?,
        endpoint_error: endpoint_error(&traj, target, n)?,
        measured_l1: control.u_l1_norm(),
        l1_bound: None,
        switchings: control.len(),
        control_duration: horizon,
        unitarity_defect: traj.unitarity_defect(),
        seed: 0,
        wall_clock_seconds: 0.0,
    })
}

pub fn cmd_synthesize(config: &RunConfig) -> Result<Outcome> {
    config.check()?;
    let spec = EnsembleSpec::from_file(config.required(&config.spec, "spec")?)?;
    let curve = TargetCurve::from_file(config.required(&config.target, "target")?)?;
    let run = synthesize(&spec, &curve, config)?;
    run.control.to_file(&config.out.join("control.json"))?;
    io::write_json(&config.out.join("plan.json"), &run.plan)?;
    run.target.to_file(&config.out.join("su_target.json"))?;
    io::write_json(&config.out.join("report.json"), &run.report)?;
    let r = &run.report;
    Ok(Outcome::ok(format!(
        "order {}, {} pieces, modulus error {:.3e}, endpoint error {:.3e}, L1 {:.4} (bound {:.4})",
        r.order,
        run.control.len(),
        r.modulus_error,
        r.endpoint_error,
        r.measured_l1,
        r.l1_bound.as_ref().map_or(f64::NAN, |b| b.bound),
    )))
}

/// Replays a control file against a target and writes the trajectory table.
pub fn cmd_simulate(config: &RunConfig) -> Result<Outcome> {
    config.check()?;
    let spec = EnsembleSpec::from_file(config.required(&config.spec, "spec")?)?;
    let control = PiecewiseConstantControl::from_file(config.required(&config.control, "control")?)?;
    let curve = TargetCurve::from_file(config.required(&config.target, "target")?)?;
    let n = config.levels.unwrap_or(curve.columns());
    let target = build_su_target(&curve, n, config.tol.target_fraction * config.eps)?;
    let model = truncate_operators(&spec, target.order)?;
    let horizon = control.total_duration();
    let traj = propagate(&model, &control, &target.at(0), &SampleGrid::standard(horizon))?;
    traj.write_csv(&config.out.join("trajectory.csv"))?;
    let mut report = evaluate(&model, &target, &control, n, config.eps)?;
    report.seed = config.seed;
    io::write_json(&config.out.join("report.json"), &report)?;
    Ok(Outcome::ok(format!(
        "modulus error {:.3e}, endpoint error {:.3e}, unitarity defect {:.1e}",
        report.modulus_error, report.endpoint_error, report.unitarity_defect
    )))
}

/// Verdicts of the counterexample sweep, in control order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub eps: f64,
    pub horizon: f64,
    pub exits: usize,
    pub chain_holds: usize,
    pub runs: Vec<CounterexampleReport>,
}

/// Random nonnegative controls, one independent stream per index.
pub fn random_nonnegative_controls(seed: u64, sweep: &SweepConfig, delta: f64) -> Result<Vec<PiecewiseConstantControl>> {
    (0..sweep.controls)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let pieces: Vec<(f64, f64)> = (0..=sweep.switchings)
                .map(|_| {
                    let d = sweep.max_duration * (1.0 - rng.random::<f64>());
                    (d, sweep.max_value * rng.random::<f64>())
                })
                .collect();
            PiecewiseConstantControl::new(ControlDomain::Nonnegative, delta, &pieces)
        })
        .collect()
}

pub fn counterexample_sweep(model: &GalerkinModel, config: &RunConfig) -> Result<SweepReport> {
    let controls = random_nonnegative_controls(config.seed, &config.sweep, model.delta)?;
    let runs = controls
        .par_iter()
        .map(|u| verify_counterexample(model, u, config.eps, config.sweep.horizon))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        seed: config.seed,
        eps: config.eps,
        horizon: config.sweep.horizon,
        exits: runs.iter().filter(|r| r.exit_time.is_some()).count(),
        chain_holds: runs.iter().filter(|r| r.chain_holds()).count(),
        runs,
    })
}

pub fn cmd_counterexample(config: &RunConfig) -> Result<Outcome> {
    config.check()?;
    let spec = EnsembleSpec::from_file(config.required(&config.spec, "spec")?)?;
    let model = truncate_operators(&spec, config.levels.unwrap_or(spec.min_depth()))?;
    let report = counterexample_sweep(&model, config)?;
    io::write_json(&config.out.join("counterexample.json"), &report)?;
    let mut summary = format!(
        "{}/{} controls left the eps-ball, bound chain held on {}",
        report.exits,
        report.runs.len(),
        report.chain_holds
    );
    if let Some(w) = report.runs.first().and_then(|r| r.warnings.first()) {
        summary.push_str(&format!("\nwarning: {w}"));
    }
    Ok(Outcome::ok(summary))
}
