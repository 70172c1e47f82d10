//! Exact piecewise-constant propagation and tracking metrics.

pub mod counterexample;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{GalerkinModel, SUTarget};
use crate::linalg::{diag_phase, SkewExp};
use crate::synthesis::control::{ControlDomain, PiecewiseConstantControl};
use crate::{CMat, C64};

pub use counterexample::{verify_counterexample, CounterexampleReport};

/// Which instants a trajectory records.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleGrid {
    pub breakpoints: bool,
    /// Uniform step; `None` disables the uniform grid.
    pub step: Option<f64>,
}

impl SampleGrid {
    /// Breakpoints plus `horizon / 1000`.
    pub fn standard(horizon: f64) -> Self {
        SampleGrid {
            breakpoints: true,
            step: (horizon > 0.0).then_some(horizon / 1000.0),
        }
    }

    pub fn breakpoints_only() -> Self {
        SampleGrid {
            breakpoints: true,
            step: None,
        }
    }

    pub fn endpoints_only() -> Self {
        SampleGrid {
            breakpoints: false,
            step: None,
        }
    }

    fn times(&self, control: &PiecewiseConstantControl) -> Vec<f64> {
        let bps = control.breakpoints();
        let horizon = *bps.last().unwrap();
        let mut t = vec![0.0, horizon];
        if self.breakpoints {
            t.extend_from_slice(&bps);
        }
        if let Some(h) = self.step.filter(|h| *h > 0.0) {
            let n = (horizon / h).floor() as usize;
            t.extend((0..=n).map(|k| k as f64 * h).filter(|&x| x <= horizon));
        }
        t.sort_by(|a, b| a.total_cmp(b));
        t.dedup();
        t
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub blocks: Vec<(usize, usize)>,
    /// `frames[b][g]`: state of block `b` at `times[g]`.
    pub frames: Vec<Vec<CMat>>,
    pub control: PiecewiseConstantControl,
}

impl Trajectory {
    pub fn final_frames(&self) -> Vec<CMat> {
        self.frames.iter().map(|s| s.last().unwrap().clone()).collect()
    }

    /// Largest `‖X†X - I‖_F` over all recorded frames.
    pub fn unitarity_defect(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|s| s.iter())
            .map(crate::linalg::unitarity_defect)
            .fold(0.0, f64::max)
    }

    /// Rows `time, block, column, level, modulus, phase`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["time", "block", "column", "level", "modulus", "phase"])
            .map_err(csv_err)?;
        for (b, seq) in self.frames.iter().enumerate() {
            for (g, x) in seq.iter().enumerate() {
                for c in 0..x.ncols() {
                    for k in 0..x.nrows() {
                        let z = x[(k, c)];
                        w.serialize((self.times[g], b, c, k, z.norm(), z.arg()))
                            .map_err(csv_err)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Spectral factorizations of `A + xB` (u-form) or `xA + B` (v-form),
/// memoized per value.
pub(crate) struct GeneratorCache<'a> {
    drift: CMat,
    coupling: &'a CMat,
    u_form: bool,
    map: HashMap<u64, SkewExp>,
}

impl<'a> GeneratorCache<'a> {
    const CAP: usize = 4096;

    pub(crate) fn new(model: &'a GalerkinModel, b: usize, u_form: bool) -> Self {
        GeneratorCache {
            drift: model.drift(model.blocks[b].0),
            coupling: &model.couplings[b],
            u_form,
            map: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, x: f64) -> &SkewExp {
        if self.map.len() >= Self::CAP && !self.map.contains_key(&x.to_bits()) {
            self.map.clear();
        }
        let (drift, coupling, u_form) = (&self.drift, self.coupling, self.u_form);
        self.map.entry(x.to_bits()).or_insert_with(|| {
            let k = if u_form {
                drift + coupling * C64::new(x, 0.0)
            } else {
                drift * C64::new(x, 0.0) + coupling
            };
            SkewExp::new(&k)
        })
    }
}

fn check_init(model: &GalerkinModel, init: &[CMat]) -> Result<()> {
    if init.len() != model.block_count() {
        return Err(Error::structural(format!(
            "{} initial states for {} blocks",
            init.len(),
            model.block_count()
        )));
    }
    if let Some(b) = init.iter().position(|x| x.nrows() != model.order) {
        return Err(Error::structural(format!(
            "initial state of block {b} has {} rows, model order is {}",
            init[b].nrows(),
            model.order
        )));
    }
    Ok(())
}

/// Identity frames (`order × columns`) for every block.
pub fn identity_frames(model: &GalerkinModel, columns: usize) -> Vec<CMat> {
    vec![CMat::identity(model.order, columns); model.block_count()]
}

/// Exact propagation: u-form controls drive `A + uB`, reparametrized ones `vA + B`.
pub fn propagate(
    model: &GalerkinModel,
    control: &PiecewiseConstantControl,
    init: &[CMat],
    grid: &SampleGrid,
) -> Result<Trajectory> {
    check_init(model, init)?;
    let times = grid.times(control);
    let u_form = control.domain().is_u_form();
    let frames: Vec<Vec<CMat>> = (0..model.block_count())
        .into_par_iter()
        .map(|b| {
            let mut cache = GeneratorCache::new(model, b, u_form);
            march(control, &times, init[b].clone(), |x, dt, state| {
                cache.get(x).apply(dt, state)
            })
        })
        .collect();
    Ok(Trajectory {
        times,
        blocks: model.blocks.clone(),
        frames,
        control: control.clone(),
    })
}

/// Walks the pieces, recording the state at each requested time.
fn march(
    control: &PiecewiseConstantControl,
    times: &[f64],
    mut state: CMat,
    mut step: impl FnMut(f64, f64, &CMat) -> CMat,
) -> Vec<CMat> {
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut start = 0.0;
    while next < times.len() && times[next] <= start {
        out.push(state.clone());
        next += 1;
    }
    for p in control.pieces() {
        let end = start + p.duration;
        // offsets are kept local to the piece: `end - start` can differ from
        // the duration by an ulp of `start`, which fast pieces turn into phase
        let mut done = 0.0;
        while next < times.len() && times[next] < end {
            let off = (times[next] - start).clamp(done, p.duration);
            state = step(p.value, off - done, &state);
            done = off;
            out.push(state.clone());
            next += 1;
        }
        state = step(p.value, p.duration - done, &state);
        start = end;
        while next < times.len() && times[next] <= end {
            out.push(state.clone());
            next += 1;
        }
    }
    while out.len() < times.len() {
        out.push(state.clone());
    }
    out
}

/// Phase-system trajectory `y = e^{-θA} x`, `θ = ∫v`, propagated piece by
/// piece through `y(τ₀+s) = e^{-(θ₀+vs)A} e^{s(vA+B)} e^{θ₀A} y(τ₀)`.
pub fn phase_propagate(
    model: &GalerkinModel,
    v: &PiecewiseConstantControl,
    init: &[CMat],
    grid: &SampleGrid,
) -> Result<Trajectory> {
    check_init(model, init)?;
    if v.domain() != ControlDomain::Reparametrized {
        return Err(Error::Domain("phase propagation needs a reparametrized control".into()));
    }
    let times = grid.times(v);
    let frames: Vec<Vec<CMat>> = (0..model.block_count())
        .into_par_iter()
        .map(|b| {
            let lam = model.block_spectrum(b).to_vec();
            let mut cache = GeneratorCache::new(model, b, false);
            let mut theta = 0.0;
            march(v, &times, init[b].clone(), |x, ds, y| {
                let before: Vec<f64> = lam.iter().map(|l| l * theta).collect();
                theta += x * ds;
                let after: Vec<f64> = lam.iter().map(|l| -l * theta).collect();
                diag_phase(&after) * cache.get(x).apply(ds, &(diag_phase(&before) * y))
            })
        })
        .collect();
    Ok(Trajectory {
        times,
        blocks: model.blocks.clone(),
        frames,
        control: v.clone(),
    })
}

fn entry_or_zero(m: &CMat, k: usize, l: usize) -> C64 {
    if k < m.nrows() && l < m.ncols() {
        m[(k, l)]
    } else {
        C64::new(0.0, 0.0)
    }
}

/// Largest modulus discrepancy over blocks, the first `n` columns and all
/// levels, between trajectory sample `g` and target sample `s`.
fn modulus_gap(traj: &Trajectory, g: usize, target: &SUTarget, s: usize, n: usize) -> f64 {
    let mut worst = 0.0f64;
    for b in 0..traj.frames.len() {
        let x = &traj.frames[b][g];
        let m = &target.matrices[b][s];
        let rows = x.nrows().max(m.nrows());
        for l in 0..n {
            for k in 0..rows {
                let d = (entry_or_zero(x, k, l).norm() - entry_or_zero(m, k, l).norm()).abs();
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// Tracking error up to a nondecreasing time warp: the minimum over monotone
/// matchings of trajectory samples to target samples of the largest modulus
/// discrepancy.
pub fn modulus_error(traj: &Trajectory, target: &SUTarget, n: usize) -> Result<f64> {
    check_pairing(traj, target, n)?;
    let s_len = target.times.len();
    let mut best = vec![0.0; s_len];
    for g in 0..traj.times.len() {
        let mut prefix = f64::INFINITY;
        for s in 0..s_len {
            let d = modulus_gap(traj, g, target, s, n);
            let prev = if g == 0 {
                0.0
            } else {
                prefix = prefix.min(best[s]);
                prefix
            };
            best[s] = d.max(prev);
        }
    }
    Ok(best.into_iter().fold(f64::INFINITY, f64::min))
}

fn check_pairing(traj: &Trajectory, target: &SUTarget, n: usize) -> Result<()> {
    if traj.blocks != target.blocks {
        return Err(Error::structural("trajectory and target cover different blocks"));
    }
    if traj.times.is_empty() || target.times.is_empty() {
        return Err(Error::structural("empty sample grid"));
    }
    let cols = traj.frames[0][0].ncols().min(target.matrices[0][0].ncols());
    if n > cols {
        return Err(Error::structural(format!("{n} columns requested, {cols} available")));
    }
    Ok(())
}

/// Largest column distance at the final time, phases included.
pub fn endpoint_error(traj: &Trajectory, target: &SUTarget, n: usize) -> Result<f64> {
    check_pairing(traj, target, n)?;
    let last = target.times.len() - 1;
    let refs: Vec<CMat> = target.matrices.iter().map(|s| s[last].clone()).collect();
    Ok(frame_distance(&traj.final_frames(), &refs, n))
}

/// `max_b max_{l<n} ‖x_b e_l - r_b e_l‖`, missing rows read as zero.
pub fn frame_distance(x: &[CMat], reference: &[CMat], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for (a, r) in x.iter().zip(reference) {
        let rows = a.nrows().max(r.nrows());
        for l in 0..n {
            let d2: f64 = (0..rows)
                .map(|k| (entry_or_zero(a, k, l) - entry_or_zero(r, k, l)).norm_sqr())
                .sum();
            worst = worst.max(d2.sqrt());
        }
    }
    worst
}

/// Phases of the diagonal factor `R⁻¹ = e^{-θA - τD}`, `D = diag B`, that
/// strips the drift and the coupling diagonal from block `b`.
pub fn interaction_phases(model: &GalerkinModel, b: usize, theta: f64, tau: f64) -> Vec<f64> {
    let lam = model.block_spectrum(b);
    let c = &model.couplings[b];
    (0..model.order).map(|k| -(lam[k] * theta + c[(k, k)].im * tau)).collect()
}

/// Interaction-frame states `Z = R⁻¹ X` along a reparametrized trajectory,
/// `[block][sample]`.
pub fn interaction_frames(model: &GalerkinModel, traj: &Trajectory) -> Result<Vec<Vec<CMat>>> {
    if traj.control.domain() != ControlDomain::Reparametrized {
        return Err(Error::Domain("interaction frame needs a reparametrized control".into()));
    }
    let thetas: Vec<f64> = traj.times.iter().map(|&t| traj.control.integral_to(t)).collect();
    Ok(traj
        .frames
        .iter()
        .enumerate()
        .map(|(b, seq)| {
            seq.iter()
                .zip(thetas.iter().zip(&traj.times))
                .map(|(x, (&th, &tau))| diag_phase(&interaction_phases(model, b, th, tau)) * x)
                .collect()
        })
        .collect())
}

/// Conclusion metrics of one synthesized run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackingReport {
    pub eps: f64,
    pub order: usize,
    pub columns: usize,
    pub modulus_error: f64,
    pub endpoint_error: f64,
    pub measured_l1: f64,
    pub l1_bound: Option<crate::synthesis::l1::L1Bound>,
    pub switchings: usize,
    pub control_duration: f64,
    pub unitarity_defect: f64,
    pub seed: u64,
    /// Not written to report files, so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}
