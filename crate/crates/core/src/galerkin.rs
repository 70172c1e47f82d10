//! Truncation orders, special-unitary target curves and the truncated
//! systems.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{self, gram_condition, gram_schmidt, polar_unitary};
use crate::model::EnsembleSpec;
use crate::synthesis::control::{ControlDomain, PiecewiseConstantControl};
use crate::{CMat, CVec, C64};

/// Sampled curve of unitary frames, one sequence per `(system, control)`.
///
/// `frames[b][g]` holds the first columns of `c_b(times[g])` in the stored
/// basis (shape `depth × columns`).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TargetCurve {
    pub times: Vec<f64>,
    pub blocks: Vec<(usize, usize)>,
    #[serde(with = "io::cmat_vec_vec")]
    pub frames: Vec<Vec<CMat>>,
}

impl TargetCurve {
    pub fn from_file(path: &Path) -> Result<Self> {
        let c: TargetCurve = io::read_json(path)?;
        c.validate(1e-8)?;
        Ok(c)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn columns(&self) -> usize {
        self.frames.first().and_then(|f| f.first()).map_or(0, |m| m.ncols())
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::structural("target curve has no samples"));
        }
        if self.times[0] != 0.0 {
            return Err(Error::structural("target curve must start at t = 0"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::structural("target times must be strictly increasing"));
        }
        if self.frames.len() != self.blocks.len() {
            return Err(Error::structural(format!(
                "{} frame sequences for {} blocks",
                self.frames.len(),
                self.blocks.len()
            )));
        }
        let cols = self.columns();
        for (b, seq) in self.frames.iter().enumerate() {
            if seq.len() != self.times.len() {
                return Err(Error::structural(format!(
                    "block {b}: {} samples for {} times",
                    seq.len(),
                    self.times.len()
                )));
            }
            let d = seq[0].nrows();
            if d < cols {
                return Err(Error::structural(format!("block {b}: depth {d} below {cols} columns")));
            }
            for (g, f) in seq.iter().enumerate() {
                if f.nrows() != d || f.ncols() != cols {
                    return Err(Error::structural(format!("block {b}, sample {g}: shape mismatch")));
                }
                for k in 0..cols {
                    let n = f.column(k).norm();
                    if (n - 1.0).abs() > tol {
                        return Err(Error::structural(format!(
                            "block {b}, sample {g}, column {k}: norm {n}"
                        )));
                    }
                }
            }
            let id = CMat::identity(d, cols);
            if (&seq[0] - id).norm() > tol {
                return Err(Error::structural(format!(
                    "block {b}: the curve must start at the identity"
                )));
            }
        }
        Ok(())
    }

    /// Largest essential truncation over blocks and the first `n` columns.
    pub fn essential_order(&self, n: usize, eps: f64) -> Result<usize> {
        let mut order = 1;
        for seq in &self.frames {
            for k in 0..n.min(self.columns()) {
                let samples: Vec<CVec> = seq.iter().map(|f| f.column(k).into_owned()).collect();
                order = order.max(essential_truncation(&samples, eps)?);
            }
        }
        Ok(order)
    }
}

/// Smallest `N` such that every sample keeps more than `1 - eps` of its
/// squared norm on the first `N` coordinates.
pub fn essential_truncation(samples: &[CVec], eps: f64) -> Result<usize> {
    let depth = samples.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut need = 1;
    let mut worst_mass = 1.0f64;
    for s in samples {
        let mut acc = 0.0;
        let mut found = None;
        for (k, z) in s.iter().enumerate() {
            acc += z.norm_sqr();
            if acc > 1.0 - eps {
                found = Some(k + 1);
                break;
            }
        }
        match found {
            Some(k) => need = need.max(k),
            None => {
                worst_mass = worst_mass.min(acc);
                return Err(Error::DepthExhausted {
                    what: format!("essential truncation at eps {eps}"),
                    depth,
                    achieved: 1.0 - worst_mass,
                });
            }
        }
    }
    Ok(need)
}

/// Special-unitary frames approximating the target columns.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SUTarget {
    pub order: usize,
    pub columns: usize,
    pub times: Vec<f64>,
    pub blocks: Vec<(usize, usize)>,
    #[serde(with = "io::cmat_vec_vec")]
    pub matrices: Vec<Vec<CMat>>,
}

impl SUTarget {
    pub fn to_file(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    /// Matrices of all blocks at grid index `g`.
    pub fn at(&self, g: usize) -> Vec<CMat> {
        self.matrices.iter().map(|seq| seq[g].clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuTargetOptions {
    /// Largest admitted Frobenius jump between consecutive frames.
    pub continuity_bound: f64,
    /// Largest admitted condition number of the projected columns' Gram matrix.
    pub max_gram_condition: f64,
}

impl Default for SuTargetOptions {
    fn default() -> Self {
        SuTargetOptions {
            continuity_bound: 0.5,
            max_gram_condition: 1e12,
        }
    }
}

/// Builds `SU(m)` frames whose first `n` columns are within `eps` of the
/// truncated target columns, with the smallest adequate `m`.
pub fn build_su_target(curve: &TargetCurve, n: usize, eps: f64) -> Result<SUTarget> {
    build_su_target_with(curve, n, eps, &SuTargetOptions::default())
}

pub fn build_su_target_with(
    curve: &TargetCurve,
    n: usize,
    eps: f64,
    opts: &SuTargetOptions,
) -> Result<SUTarget> {
    curve.validate(1e-8)?;
    if n == 0 || n > curve.columns() {
        return Err(Error::structural(format!(
            "{n} tracked columns requested, curve stores {}",
            curve.columns()
        )));
    }
    let depth = curve.frames.iter().map(|s| s[0].nrows()).min().unwrap();
    let m_min = n.max(curve.essential_order(n, eps)?);
    let mut best = f64::INFINITY;
    for m in m_min..=depth {
        let mut matrices = Vec::with_capacity(curve.frames.len());
        let mut err = 0.0f64;
        for seq in &curve.frames {
            let (mats, e) = frame_sequence(seq, &curve.times, n, m, opts)?;
            err = err.max(e);
            matrices.push(mats);
        }
        best = best.min(err);
        if err < eps {
            let target = SUTarget {
                order: m,
                columns: n,
                times: curve.times.clone(),
                blocks: curve.blocks.clone(),
                matrices,
            };
            check_continuity(&target, opts.continuity_bound)?;
            return Ok(target);
        }
    }
    Err(Error::DepthExhausted {
        what: format!("special-unitary approximation within {eps}"),
        depth,
        achieved: best,
    })
}

fn check_continuity(target: &SUTarget, bound: f64) -> Result<()> {
    for (b, seq) in target.matrices.iter().enumerate() {
        for g in 1..seq.len() {
            let jump = (&seq[g] - &seq[g - 1]).norm();
            if jump > bound {
                return Err(Error::IllConditioned {
                    what: "target continuity".into(),
                    detail: format!(
                        "block {b}: frame jump {jump:.3e} between t = {} and t = {} exceeds {bound}; refine the grid",
                        target.times[g - 1], target.times[g]
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Frames for one block at order `m` and the worst column error.
fn frame_sequence(
    seq: &[CMat],
    times: &[f64],
    n: usize,
    m: usize,
    opts: &SuTargetOptions,
) -> Result<(Vec<CMat>, f64)> {
    let mut out: Vec<CMat> = Vec::with_capacity(seq.len());
    let mut err = 0.0f64;
    let mut prev_phase = 0.0;
    for (g, f) in seq.iter().enumerate() {
        let proj = f.view((0, 0), (m, n)).into_owned();
        let cond = gram_condition(&proj);
        if cond > opts.max_gram_condition {
            return Err(Error::IllConditioned {
                what: "projected target columns".into(),
                detail: format!("Gram condition {cond:.3e} at grid point {g} (t = {})", times[g]),
            });
        }
        let q = gram_schmidt(&proj, 1e-12).ok_or_else(|| Error::IllConditioned {
            what: "projected target columns".into(),
            detail: format!("dependent columns at grid point {g} (t = {})", times[g]),
        })?;
        let frame = if m > n {
            let completion = complete(&q, out.last().map(|p| p.columns(n, m - n).into_owned()));
            let mut full = CMat::zeros(m, m);
            full.columns_mut(0, n).copy_from(&q);
            full.columns_mut(n, m - n).copy_from(&completion);
            let det = full.determinant();
            let fix = det.conj() / det.norm();
            full.column_mut(m - 1).iter_mut().for_each(|z| *z *= fix);
            full
        } else {
            // no free columns: spread the determinant phase over all columns,
            // unwrapped along the grid so the frames move continuously
            let det = q.determinant();
            let mut phase = det.arg();
            if g > 0 {
                let k = ((prev_phase - phase) / (2.0 * std::f64::consts::PI)).round();
                phase += k * 2.0 * std::f64::consts::PI;
            }
            prev_phase = phase;
            &q * C64::from_polar(1.0, -phase / m as f64)
        };
        for k in 0..n {
            let mut full_col = f.column(k).into_owned();
            let approx = frame.column(k);
            let mut d2 = 0.0;
            for r in 0..full_col.len() {
                let a = if r < m { approx[r] } else { C64::new(0.0, 0.0) };
                full_col[r] -= a;
                if r < m {
                    d2 += full_col[r].norm_sqr();
                }
            }
            // the bound compares projected columns
            err = err.max(d2.sqrt());
        }
        out.push(frame);
    }
    Ok((out, err))
}

/// Orthonormal completion of the columns `q`, aligned with `prev` when given.
fn complete(q: &CMat, prev: Option<CMat>) -> CMat {
    let m = q.nrows();
    let n = q.ncols();
    let extra = m - n;
    let mut basis = q.clone();
    let mut chosen: Vec<crate::CVec> = Vec::with_capacity(extra);
    let mut available: Vec<usize> = (0..m).collect();
    for _ in 0..extra {
        // canonical vector with the largest residual against the current span
        let mut best: Option<(usize, f64, crate::CVec)> = None;
        for (pos, &e) in available.iter().enumerate() {
            let mut v = crate::CVec::zeros(m);
            v[e] = C64::new(1.0, 0.0);
            for _ in 0..2 {
                for c in 0..basis.ncols() {
                    let proj = basis.column(c).dotc(&v);
                    v -= basis.column(c) * proj;
                }
            }
            let r = v.norm();
            if best.as_ref().is_none_or(|b| r > b.1 + 1e-12) {
                best = Some((pos, r, v));
            }
        }
        let (pos, r, v) = best.unwrap();
        available.remove(pos);
        let v = v / C64::new(r, 0.0);
        let cols = basis.ncols();
        basis = basis.insert_column(cols, C64::new(0.0, 0.0));
        let last = basis.ncols() - 1;
        basis.column_mut(last).copy_from(&v);
        chosen.push(v);
    }
    let c0 = CMat::from_columns(&chosen);
    match prev {
        Some(p) => {
            let r = polar_unitary(&(c0.adjoint() * p));
            c0 * r
        }
        None => c0,
    }
}

/// Adds midpoint samples from `sampler` until consecutive frames of the
/// `SU(m)` target move by at most the continuity bound.
pub fn build_su_target_refined(
    curve: &TargetCurve,
    sampler: &dyn Fn(f64) -> Vec<CMat>,
    n: usize,
    eps: f64,
    opts: &SuTargetOptions,
    max_insertions: usize,
) -> Result<SUTarget> {
    let mut curve = curve.clone();
    for _ in 0..=max_insertions {
        match build_su_target_with(&curve, n, eps, opts) {
            Ok(t) => return Ok(t),
            Err(Error::IllConditioned { what, .. }) if what == "target continuity" => {
                let t = build_unchecked(&curve, n, eps, opts)?;
                let g = worst_jump(&t);
                let mid = 0.5 * (curve.times[g - 1] + curve.times[g]);
                let samples = sampler(mid);
                curve.times.insert(g, mid);
                for (seq, s) in curve.frames.iter_mut().zip(samples) {
                    seq.insert(g, s);
                }
            }
            Err(e) => return Err(e),
        }
    }
    build_su_target_with(&curve, n, eps, opts)
}

fn build_unchecked(curve: &TargetCurve, n: usize, eps: f64, opts: &SuTargetOptions) -> Result<SUTarget> {
    let loose = SuTargetOptions {
        continuity_bound: f64::INFINITY,
        ..opts.clone()
    };
    build_su_target_with(curve, n, eps, &loose)
}

fn worst_jump(t: &SUTarget) -> usize {
    let mut best = (1, 0.0);
    for seq in &t.matrices {
        for g in 1..seq.len() {
            let j = (&seq[g] - &seq[g - 1]).norm();
            if j > best.1 {
                best = (g, j);
            }
        }
    }
    best.0
}

/// Leading `m × m` blocks of the ensemble.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GalerkinModel {
    pub order: usize,
    pub delta: f64,
    /// `λ` of each system, cut to `order`.
    pub spectra: Vec<Vec<f64>>,
    pub blocks: Vec<(usize, usize)>,
    #[serde(with = "io::cmat_vec")]
    pub couplings: Vec<CMat>,
}

impl GalerkinModel {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn system_count(&self) -> usize {
        self.spectra.len()
    }

    /// Block indices belonging to system `i`.
    pub fn blocks_of(&self, i: usize) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&b| self.blocks[b].0 == i).collect()
    }

    pub fn drift(&self, i: usize) -> CMat {
        CMat::from_diagonal(&CVec::from_iterator(
            self.order,
            self.spectra[i].iter().map(|&l| C64::new(0.0, l)),
        ))
    }

    pub fn block_spectrum(&self, b: usize) -> &[f64] {
        &self.spectra[self.blocks[b].0]
    }

    pub fn max_frequency(&self) -> f64 {
        self.spectra
            .iter()
            .flat_map(|s| s.iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }
}

/// Leading `m × m` blocks of drift and couplings.
pub fn truncate_operators(spec: &EnsembleSpec, m: usize) -> Result<GalerkinModel> {
    spec.check_structure()?;
    let d = spec.min_depth();
    if m == 0 || m > d {
        return Err(Error::DepthExhausted {
            what: format!("Galerkin order {m}"),
            depth: d,
            achieved: 0.0,
        });
    }
    Ok(GalerkinModel {
        order: m,
        delta: spec.delta,
        spectra: spec.systems.iter().map(|s| s.spectrum[..m].to_vec()).collect(),
        blocks: spec.blocks(),
        couplings: spec
            .blocks()
            .iter()
            .map(|&(i, j)| spec.systems[i].couplings[j].view((0, 0), (m, m)).into_owned())
            .collect(),
    })
}

/// Smallest `N1 ≥ m` whose row tails `Σ_{l ≥ N1} |b(k,l)|²`, `k < m`, all stay
/// below `eps / (n·T_v)`.
///
/// For a spec flagged `truncated` the entries past the stored depth are
/// unknown, so `N1` must stay strictly inside it.
pub fn tail_truncation_order(spec: &EnsembleSpec, eps: f64, n: usize, t_v: f64, m: usize) -> Result<usize> {
    if !(t_v > 0.0) || n == 0 {
        return Err(Error::structural("tail order needs T_v > 0 and n ≥ 1"));
    }
    let d = spec.min_depth();
    if m > d {
        return Err(Error::DepthExhausted {
            what: format!("tail order above m = {m}"),
            depth: d,
            achieved: f64::INFINITY,
        });
    }
    let bound = eps / (n as f64 * t_v);
    let last = if spec.truncated { d.saturating_sub(1) } else { d };
    let mut smallest = f64::INFINITY;
    for n1 in m..=last {
        let tail = spec
            .systems
            .iter()
            .flat_map(|s| s.couplings.iter())
            .flat_map(|b| {
                (0..m).map(move |k| (n1..b.ncols()).map(|l| b[(k, l)].norm_sqr()).sum::<f64>())
            })
            .fold(0.0, f64::max);
        smallest = smallest.min(tail);
        if tail < bound {
            return Ok(n1);
        }
    }
    Err(Error::DepthExhausted {
        what: format!("coupling tail below {bound:.3e}"),
        depth: d,
        achieved: smallest,
    })
}

/// Generator of the phase system at accumulated drift phase `theta`:
/// `e^{-θA} B e^{θA}`, entries `b(k,l)·e^{-iθ(λ_k - λ_l)}`.
///
/// This sign makes `y = e^{-θA} x` solve `y' = (e^{-θA} B e^{θA}) y`.
pub fn phase_velocity_at(model: &GalerkinModel, theta: f64) -> Vec<CMat> {
    model
        .couplings
        .iter()
        .enumerate()
        .map(|(b, coupling)| {
            let lam = model.block_spectrum(b);
            CMat::from_fn(model.order, model.order, |k, l| {
                coupling[(k, l)] * C64::from_polar(1.0, -theta * (lam[k] - lam[l]))
            })
        })
        .collect()
}

/// [`phase_velocity_at`] with `θ = ∫_0^t v`.
pub fn phase_frame_velocity(model: &GalerkinModel, v: &PiecewiseConstantControl, t: f64) -> Result<Vec<CMat>> {
    if v.domain() != ControlDomain::Reparametrized {
        return Err(Error::Domain("phase velocity needs a reparametrized control".into()));
    }
    Ok(phase_velocity_at(model, v.integral_to(t)))
}

/// Skew-adjointness defect of every truncated block, for diagnostics.
pub fn max_skew_defect(model: &GalerkinModel) -> f64 {
    model
        .couplings
        .iter()
        .map(|b| (b - linalg::skew_part(b)).norm())
        .fold(0.0, f64::max)
}
