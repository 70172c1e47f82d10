//! Numerical companion to the no-tracking example: a two-sided drift with a
//! nonnegative control cannot hold the state near the first eigenvector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::GalerkinModel;
use crate::linalg::{op_norm, SkewExp};
use crate::synthesis::control::{ControlDomain, PiecewiseConstantControl};
use crate::{CMat, CVec, C64};

/// Slack allowed on the bound chain along confined prefixes.
pub const INEQUALITY_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub eps: f64,
    pub horizon: f64,
    pub levels: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub b21: f64,
    /// Truncated `‖Bφ₁‖`, `‖Bφ₂‖` at `levels`.
    pub norm_b_phi1: f64,
    pub norm_b_phi2: f64,
    pub threshold: f64,
    /// `b₂₁(1-ε) - ε‖Bφ₂‖`.
    pub k: f64,
    pub warnings: Vec<String>,
    /// First time with `‖x - φ₁‖ > ε`.
    pub exit_time: Option<f64>,
    /// First time some `|x_i|`, `i > 1`, exceeds `ε`.
    pub modulus_exit_time: Option<f64>,
    pub samples_checked: usize,
    /// Smallest `ε‖Bφ₁‖∫u - λ₁(1-ε)t + ε` over the confined prefix.
    pub integral_margin: f64,
    /// Smallest `a₂ + |λ₂|εt - K∫u` over the confined prefix.
    pub growth_margin: f64,
    /// Smallest `∫u - λ₁(1-ε)t/(ε‖Bφ₁‖)` over confined samples with `t > 0`.
    pub literal_integral_margin: f64,
    /// Smallest `a₂ - Kt` over confined samples with `t > 0`.
    pub literal_growth_margin: f64,
    pub literal_integral_violations: usize,
    pub literal_growth_violations: usize,
}

impl CounterexampleReport {
    /// Both rigorous inequalities held within [`INEQUALITY_SLACK`].
    pub fn chain_holds(&self) -> bool {
        self.integral_margin >= -INEQUALITY_SLACK && self.growth_margin >= -INEQUALITY_SLACK
    }
}

struct Shape {
    lambda: Vec<f64>,
    b: CMat,
    b21: f64,
}

fn check_shape(model: &GalerkinModel, u: &PiecewiseConstantControl, eps: f64, horizon: f64) -> Result<Shape> {
    let mut bad = Vec::new();
    if model.block_count() != 1 {
        bad.push(format!("expected one system with one coupling, got {} blocks", model.block_count()));
    }
    if model.order < 2 {
        bad.push("need at least two levels".into());
    }
    if !(eps > 0.0 && eps < 1.0) {
        bad.push(format!("eps = {eps} outside (0, 1)"));
    }
    if !(horizon > 0.0) {
        bad.push(format!("horizon = {horizon} must be positive"));
    }
    if u.domain() == ControlDomain::Reparametrized {
        bad.push("control must be given in the original time variable".into());
    }
    if u.pieces().any(|p| p.value < 0.0) {
        bad.push("control takes negative values".into());
    }
    if !bad.is_empty() && (model.block_count() != 1 || model.order < 2) {
        return Err(Error::Precondition(bad));
    }
    let lambda = model.block_spectrum(0).to_vec();
    let b = model.couplings[0].clone();
    if lambda[0] <= 0.0 {
        bad.push(format!("lambda_1 = {} must be positive", lambda[0]));
    }
    let scale = b.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if b.iter().any(|z| z.im.abs() > 1e-12 * scale) {
        bad.push("couplings must be real".into());
    }
    let b21 = b[(1, 0)].re;
    if b21 <= 0.0 {
        bad.push(format!("b_21 = {b21} must be positive"));
    }
    if bad.is_empty() {
        Ok(Shape { lambda, b, b21 })
    } else {
        Err(Error::Precondition(bad))
    }
}

/// Simulates from `φ₁` under `u` (held at its last value past its end,
/// zero if empty) up to `horizon` and checks the bound chain while the
/// state stays in the `ε`-ball around `φ₁`.
pub fn verify_counterexample(
    model: &GalerkinModel,
    u: &PiecewiseConstantControl,
    eps: f64,
    horizon: f64,
) -> Result<CounterexampleReport> {
    let Shape { lambda, b, b21 } = check_shape(model, u, eps, horizon)?;
    let m = model.order;
    let nb1 = b.column(0).norm();
    let nb2 = b.column(1).norm();
    let threshold = b21 / (b21 + nb2);
    let k = b21 * (1.0 - eps) - eps * nb2;
    let mut warnings = Vec::new();
    if eps >= threshold {
        warnings.push(format!(
            "eps = {eps} is not below b21/(b21 + |B phi2|) = {threshold:.6}; exit is not guaranteed"
        ));
    }

    let mut rep = CounterexampleReport {
        eps,
        horizon,
        levels: m,
        lambda1: lambda[0],
        lambda2: lambda[1],
        b21,
        norm_b_phi1: nb1,
        norm_b_phi2: nb2,
        threshold,
        k,
        warnings,
        exit_time: None,
        modulus_exit_time: None,
        samples_checked: 0,
        integral_margin: f64::INFINITY,
        growth_margin: f64::INFINITY,
        literal_integral_margin: f64::INFINITY,
        literal_growth_margin: f64::INFINITY,
        literal_integral_violations: 0,
        literal_growth_violations: 0,
    };

    let mut segments: Vec<(f64, f64)> = u.pieces().map(|p| (p.duration, p.value)).collect();
    let used: f64 = segments.iter().map(|s| s.0).sum();
    if used < horizon {
        segments.push((horizon - used, segments.last().map_or(0.0, |s| s.1)));
    }

    let drift = model.drift(0);
    let lam_max = lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let b_norm = op_norm(&b);
    let mut x = CVec::zeros(m);
    x[0] = C64::new(1.0, 0.0);
    let mut t = 0.0;
    let mut int_u = 0.0;
    rep.check(&x, 0.0, 0.0, &lambda);

    'outer: for (dur, val) in segments {
        let dur = dur.min(horizon - t);
        if dur <= 0.0 {
            break;
        }
        let gen = SkewExp::new(&(&drift + &b * C64::new(val, 0.0)));
        // each substep moves the state by at most ε/50
        let h_max = 0.02 * eps / (lam_max + val * b_norm).max(1e-300);
        let steps = (dur / h_max).ceil().max(1.0) as usize;
        let h = dur / steps as f64;
        let start = x.clone();
        let as_mat = |v: &CVec| CMat::from_column_slice(m, 1, v.as_slice());
        let at = |s: f64| -> CVec {
            let y = gen.apply(s, &as_mat(&start));
            CVec::from_column_slice(y.as_slice())
        };
        for step in 1..=steps {
            let s = step as f64 * h;
            let y = at(s);
            let tt = t + s;
            let iu = int_u + val * s;
            if rep.modulus_exit_time.is_none() && modulus_outside(&y, eps) {
                let (lo, hi) = ((step - 1) as f64 * h, s);
                rep.modulus_exit_time = Some(t + bisect(lo, hi, |r| modulus_outside(&at(r), eps)));
            }
            if ball_outside(&y, eps) {
                let lo = (step - 1) as f64 * h;
                let r = bisect(lo, s, |r| ball_outside(&at(r), eps));
                rep.exit_time = Some(t + r);
                break 'outer;
            }
            rep.check(&y, tt, iu, &lambda);
            x = y;
        }
        t += dur;
        int_u += val * dur;
    }
    Ok(rep)
}

impl CounterexampleReport {
    fn check(&mut self, x: &CVec, t: f64, int_u: f64, lambda: &[f64]) {
        let eps = self.eps;
        let a2 = x[1].re;
        self.samples_checked += 1;
        let i17 = eps * self.norm_b_phi1 * int_u - self.lambda1 * (1.0 - eps) * t + eps;
        self.integral_margin = self.integral_margin.min(i17);
        let g = a2 + lambda[1].abs() * eps * t - self.k * int_u;
        self.growth_margin = self.growth_margin.min(g);
        if t > 0.0 {
            let lit = int_u - self.lambda1 * (1.0 - eps) * t / (eps * self.norm_b_phi1);
            self.literal_integral_margin = self.literal_integral_margin.min(lit);
            if lit < -INEQUALITY_SLACK {
                self.literal_integral_violations += 1;
            }
            let kt = a2 - self.k * t;
            self.literal_growth_margin = self.literal_growth_margin.min(kt);
            if kt < -INEQUALITY_SLACK {
                self.literal_growth_violations += 1;
            }
        }
    }
}

fn ball_outside(x: &CVec, eps: f64) -> bool {
    let d2: f64 = x
        .iter()
        .enumerate()
        .map(|(k, z)| if k == 0 { (z - C64::new(1.0, 0.0)).norm_sqr() } else { z.norm_sqr() })
        .sum();
    d2.sqrt() > eps
}

fn modulus_outside(x: &CVec, eps: f64) -> bool {
    x.iter().skip(1).any(|z| z.norm() > eps)
}

/// First crossing in `(lo, hi]` given `!pred(lo)` and `pred(hi)`.
fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
