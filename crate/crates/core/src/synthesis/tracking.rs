//! Commutator-switching tracking on the product of special unitary groups.
//!
//! Planning runs in the interaction frame `Z_b = e^{-θA - τD_b} X_b`, where
//! the leaves are realized by dwelling at slow speed `v_floor = 1/δ` on the
//! averaging lattices and the lattice points are reached by fast jumps. The
//! state is propagated exactly alongside the plan, so every grid interval is
//! planned from where the previous one actually ended.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{GalerkinModel, SUTarget};
use crate::liealg::{
    lie_closure, verify_full_rank, AveragingBudget, BlockSkew, GeneratorSet, LieClosure, PairTarget,
    PhaseSchedule, ScheduleTable, Word, RANK_TOL,
};
use crate::linalg::{diag_phase, expm_skew, group_distance, project_su, unitary_log};
use crate::sim::{interaction_phases, GeneratorCache};
use crate::synthesis::control::{ControlDomain, PiecewiseConstantControl};
use crate::synthesis::decompose::{decompose_velocity, Decomposition};
use crate::CMat;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackingOptions {
    /// Admitted group distance to the target, at the grid and in between.
    pub eps: f64,
    /// Share of `eps` a grid interval may end away from its target.
    pub step_fraction: f64,
    /// Leg length cap, as a share of `eps / max leaf norm`, when `tau0` is unset.
    pub leg_fraction: f64,
    /// Initial switching period (longest leg).
    pub tau0: Option<f64>,
    /// Plan each interval from the propagated state instead of the ideal one.
    pub feedback: bool,
    pub max_switchings: usize,
    /// Period halvings tried per interval before accepting the result.
    pub max_halvings: usize,
    /// Extra planning passes per interval when the defect stays above half the budget.
    pub corrections: usize,
    /// Largest phase sweep `ω·v_floor·d` of a single dwell.
    pub max_sweep: f64,
    /// Jump speed is `1 / (drift_fraction · δ)`.
    pub drift_fraction: f64,
    pub closure_cap: usize,
    pub rank_tol: f64,
    pub residual_tol: f64,
    pub averaging: AveragingBudget,
}

impl Default for TrackingOptions {
    fn default() -> Self {
        TrackingOptions {
            eps: 0.1,
            step_fraction: 0.25,
            leg_fraction: 0.5,
            tau0: None,
            feedback: true,
            max_switchings: 2_000_000,
            max_halvings: 8,
            corrections: 3,
            max_sweep: 0.05,
            drift_fraction: 1e-12,
            closure_cap: 4096,
            rank_tol: RANK_TOL,
            residual_tol: 1e-8,
            averaging: AveragingBudget::default(),
        }
    }
}

/// What was emitted for one planning pass over one grid interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub interval: usize,
    /// 0 for the first pass, then one per corrective pass.
    pub pass: usize,
    /// Closure word indices and their labels.
    pub words: Vec<usize>,
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Convex weights over the signed words.
    pub weights: Vec<f64>,
    pub scale: f64,
    pub periods: usize,
    pub tau0: f64,
    /// Group distance to the interval's target after the pass.
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub closure: Vec<String>,
    pub steps: Vec<StepPlan>,
    /// Averaging lattices, sorted by pair.
    pub schedules: Vec<(PairTarget, PhaseSchedule)>,
    pub v_floor: f64,
    pub v_jump: f64,
    pub tau0_initial: f64,
    pub switchings: usize,
    /// Largest interval-end distance over the run.
    pub max_defect: f64,
    pub final_distance: f64,
    /// Total drift phase `θ = ∫v`, the horizon in the original time.
    pub theta: f64,
}

/// Exact state carried along the emitted pieces.
#[derive(Clone)]
struct State {
    x: Vec<CMat>,
    theta: f64,
    tau: f64,
    pieces: usize,
}

struct Realizer<'a> {
    model: &'a GalerkinModel,
    gens: &'a GeneratorSet,
    leaves: Vec<usize>,
    negatives: Vec<usize>,
    schedules: HashMap<PairTarget, PhaseSchedule>,
    caches: Vec<GeneratorCache<'a>>,
    v_floor: f64,
    v_jump: f64,
    omega_max: f64,
    max_sweep: f64,
    state: State,
    out: Vec<(f64, f64)>,
}

impl<'a> Realizer<'a> {
    fn interaction(&self, b: usize) -> CMat {
        let p = interaction_phases(self.model, b, self.state.theta, self.state.tau);
        diag_phase(&p) * &self.state.x[b]
    }

    fn frames(&self) -> Vec<CMat> {
        (0..self.state.x.len()).map(|b| self.interaction(b)).collect()
    }

    fn piece(&mut self, duration: f64, v: f64) {
        if !(duration > 0.0) {
            return;
        }
        for (b, x) in self.state.x.iter_mut().enumerate() {
            *x = self.caches[b].get(v).apply(duration, x);
        }
        self.state.theta += v * duration;
        self.state.tau += duration;
        match self.out.last_mut() {
            Some(last) if last.1 == v => last.0 += duration,
            _ => {
                self.out.push((duration, v));
                self.state.pieces += 1;
            }
        }
    }

    fn jump_to(&mut self, theta: f64) {
        let gap = theta - self.state.theta;
        if gap > 0.0 {
            self.piece(gap / self.v_jump, self.v_jump);
        }
    }

    /// Moves along leaf `leaf` for signed time `t` by dwelling on its lattice.
    fn leaf(&mut self, leaf: usize, t: f64) {
        if t == 0.0 {
            return;
        }
        let g = &self.gens.gens[if t > 0.0 { self.leaves[leaf] } else { self.negatives[leaf] }];
        let key = PairTarget {
            system: g.system,
            k: g.k,
            l: g.l,
        };
        let sched = &self.schedules[&key];
        let spacing = sched.spacing;
        // the lattice may start anywhere; a common shift by whole spacings is free
        let mut phases = sched.phases(g.angle());
        let base = (phases[0].0 / spacing).floor() * spacing;
        for p in phases.iter_mut() {
            p.0 -= base;
        }
        let t = t.abs();
        let wmax = phases.iter().map(|p| p.1).fold(0.0, f64::max);
        let sweep = self.omega_max * self.v_floor * wmax * t;
        let reps = ((sweep / self.max_sweep).ceil() as usize).max(1);
        let d = t / reps as f64;
        for _ in 0..reps {
            let (first, w0) = phases[0];
            let start = first - 0.5 * self.v_floor * w0 * d;
            let shift = ((self.state.theta - start) / spacing).ceil().max(0.0) * spacing;
            for &(theta, w) in &phases {
                let arc = self.v_floor * w * d;
                self.jump_to(theta + shift - 0.5 * arc);
                self.piece(w * d, self.v_floor);
            }
        }
    }

    fn run(&mut self, seq: &[(usize, f64)]) {
        for &(leaf, t) in seq {
            self.leaf(leaf, t);
        }
    }
}

/// Leaf sequence whose ordered product approximates `exp(c · word)`.
///
/// A bracket `[g, w]` is the group commutator of `e^{s g}` and the
/// realization of `e^{r w}` with `s = ±ℓ`, `r = ℓ^d`, `ℓ = |c|^{1/(d+1)}`.
pub fn realize_word(word: &Word, c: f64, out: &mut Vec<(usize, f64)>) {
    match word {
        Word::Leaf(i) => out.push((*i, c)),
        Word::Bracket(i, inner) => {
            let d = word.depth() as i32;
            let l = c.abs().powf(1.0 / (d + 1) as f64);
            let s = if c > 0.0 { l } else { -l };
            let start = out.len();
            realize_word(inner, l.powi(d), out);
            let forward: Vec<(usize, f64)> = out[start..].to_vec();
            out.push((*i, s));
            out.extend(forward.iter().rev().map(|&(j, t)| (j, -t)));
            out.push((*i, -s));
        }
    }
}

/// Smallest period count bringing every leg of the decomposition under `tau0`.
fn periods_for(dec: &Decomposition, closure: &LieClosure, tau0: f64) -> usize {
    dec.terms
        .iter()
        .map(|t| {
            let d = closure.words[t.word].depth() as i32;
            // saturating cast; absurd counts are caught by the switching budget
            (t.coefficient.abs() / tau0.powi(d + 1)).ceil().min(1e18) as usize
        })
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Leaf moves in one period; each becomes at least one dwell.
fn legs_per_period(dec: &Decomposition, closure: &LieClosure) -> usize {
    fn legs(w: &Word) -> usize {
        match w {
            Word::Leaf(_) => 1,
            Word::Bracket(_, inner) => 2 * legs(inner) + 2,
        }
    }
    dec.terms.iter().map(|t| legs(&closure.words[t.word])).sum()
}

fn sequence(dec: &Decomposition, closure: &LieClosure, periods: usize) -> Vec<(usize, f64)> {
    let mut seq = Vec::new();
    for _ in 0..periods {
        for t in &dec.terms {
            realize_word(&closure.words[t.word], t.coefficient / periods as f64, &mut seq);
        }
    }
    seq
}

fn log_gap(target: &[CMat], z: &[CMat]) -> BlockSkew {
    BlockSkew {
        blocks: target
            .iter()
            .zip(z)
            .map(|(m, z)| project_su(&unitary_log(&(m * z.adjoint()))))
            .collect(),
    }
}

fn distance(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| group_distance(x, y)).fold(0.0, f64::max)
}

/// Closure of the leaves, failing unless it spans the whole product algebra.
pub fn certified_closure(gens: &GeneratorSet, model: &GalerkinModel, cap: usize, rank_tol: f64) -> Result<LieClosure> {
    let closure = lie_closure(gens, cap, rank_tol)?;
    let verdict = verify_full_rank(model.order, model.block_count(), closure.dim());
    if !verdict.passed() {
        return Err(Error::Precondition(vec![format!(
            "generated algebra has dimension {}, full rank needs {}",
            closure.dim(),
            crate::liealg::full_rank_dimension(model.order, model.block_count())
        )]));
    }
    Ok(closure)
}

/// Synthesizes a reparametrized control steering the interaction-frame
/// states along `target`, starting from `target.at(0)`.
pub fn bch_tracking_control(
    target: &SUTarget,
    model: &GalerkinModel,
    gens: &GeneratorSet,
    opts: &TrackingOptions,
) -> Result<(PiecewiseConstantControl, SynthesisPlan)> {
    if target.blocks != model.blocks || target.order != model.order {
        return Err(Error::structural("target and model cover different blocks or orders"));
    }
    if target.is_empty() {
        return Err(Error::structural("empty target"));
    }
    if !(opts.eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {}", opts.eps)));
    }
    let closure = certified_closure(gens, model, opts.closure_cap, opts.rank_tol)?;
    let table = ScheduleTable::build(model, &opts.averaging)?;
    let omega_max = table.schedules.values().map(|s| s.frequency.abs()).fold(0.0, f64::max);
    let leaves: Vec<usize> = (0..gens.gens.len()).filter(|&i| gens.gens[i].sign > 0).collect();
    let negatives: Vec<usize> = leaves
        .iter()
        .map(|&i| {
            let g = &gens.gens[i];
            gens.gens
                .iter()
                .position(|h| h.system == g.system && h.k == g.k && h.l == g.l && h.quadrature == g.quadrature && h.sign < 0)
                .expect("generator set is symmetric")
        })
        .collect();
    let leaf_norm = gens.max_norm().max(f64::MIN_POSITIVE);
    let tau0_initial = opts.tau0.unwrap_or(opts.leg_fraction * opts.eps / leaf_norm);
    if !(tau0_initial > 0.0) {
        return Err(Error::Domain(format!("tau0 must be positive, got {tau0_initial}")));
    }
    let v_floor = 1.0 / model.delta;
    let v_jump = 1.0 / (opts.drift_fraction * model.delta);
    let mut r = Realizer {
        model,
        gens,
        leaves,
        negatives,
        schedules: table.schedules.clone(),
        caches: (0..model.block_count()).map(|b| GeneratorCache::new(model, b, false)).collect(),
        v_floor,
        v_jump,
        omega_max,
        max_sweep: opts.max_sweep,
        state: State {
            x: target.at(0),
            theta: 0.0,
            tau: 0.0,
            pieces: 0,
        },
        out: Vec::new(),
    };
    let budget = opts.step_fraction * opts.eps;
    let mut steps = Vec::new();
    let mut max_defect = 0.0f64;
    for g in 0..target.len() - 1 {
        let goal = target.at(g + 1);
        for pass in 0..=opts.corrections {
            let gap = if opts.feedback {
                log_gap(&goal, &r.frames())
            } else if pass == 0 {
                log_gap(&goal, &target.at(g))
            } else {
                break;
            };
            let size = gap.norm();
            if size < 1e-14 || (pass > 0 && distance(&goal, &r.frames()) <= 0.5 * budget) {
                break;
            }
            let dec = decompose_velocity(&gap, gens, &closure, opts.residual_tol)?;
            let mut tau0 = tau0_initial;
            let mut halvings = 0;
            let (periods, defect) = loop {
                let saved = (r.state.clone(), r.out.len(), r.out.last().copied());
                let periods = periods_for(&dec, &closure, tau0);
                let legs = periods.saturating_mul(legs_per_period(&dec, &closure));
                if r.state.pieces.saturating_add(legs) > opts.max_switchings {
                    return Err(Error::Budget {
                        switchings: r.state.pieces.saturating_add(legs),
                        achieved: distance(&goal, &r.frames()),
                        eps: opts.eps,
                    });
                }
                r.run(&sequence(&dec, &closure, periods));
                let defect = distance(&goal, &r.frames());
                if r.state.pieces > opts.max_switchings {
                    return Err(Error::Budget {
                        switchings: r.state.pieces,
                        achieved: defect,
                        eps: opts.eps,
                    });
                }
                if defect <= budget || halvings >= opts.max_halvings {
                    break (periods, defect);
                }
                r.state = saved.0;
                r.out.truncate(saved.1);
                if let (Some(last), Some(prev)) = (r.out.last_mut(), saved.2) {
                    *last = prev;
                }
                tau0 *= 0.5;
                halvings += 1;
            };
            steps.push(StepPlan {
                interval: g,
                pass,
                words: dec.terms.iter().map(|t| t.word).collect(),
                labels: dec.terms.iter().map(|t| closure.words[t.word].to_string()).collect(),
                coefficients: dec.terms.iter().map(|t| t.coefficient).collect(),
                weights: dec.weights(),
                scale: dec.scale,
                periods,
                tau0,
                defect,
            });
            if !opts.feedback {
                break;
            }
        }
        max_defect = max_defect.max(distance(&goal, &r.frames()));
    }
    let final_distance = distance(&target.at(target.len() - 1), &r.frames());
    if max_defect > opts.eps {
        return Err(Error::Budget {
            switchings: r.state.pieces,
            achieved: max_defect,
            eps: opts.eps,
        });
    }
    let control = PiecewiseConstantControl::new(ControlDomain::Reparametrized, model.delta, &r.out)?;
    let mut schedules: Vec<(PairTarget, PhaseSchedule)> = table.schedules.into_iter().collect();
    schedules.sort_by_key(|(p, _)| (p.system, p.k, p.l));
    let plan = SynthesisPlan {
        closure: closure.words.iter().map(|w| w.to_string()).collect(),
        steps,
        schedules,
        v_floor,
        v_jump,
        tau0_initial,
        switchings: control.len().saturating_sub(1),
        max_defect,
        final_distance,
        theta: r.state.theta,
    };
    Ok((control, plan))
}

/// One-period group-commutator defect `d(e^{-τu}e^{-τv}e^{τu}e^{τv}, e^{τ²[u,v]})`.
pub fn bch_defect(u: &CMat, v: &CMat, tau: f64) -> f64 {
    let p = expm_skew(u, -tau) * expm_skew(v, -tau) * expm_skew(u, tau) * expm_skew(v, tau);
    let c = u * v - v * u;
    group_distance(&p, &expm_skew(&c, tau * tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::bracket;
    use crate::sim::{interaction_frames, propagate, SampleGrid};
    use crate::C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_level(delta: f64) -> GalerkinModel {
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        GalerkinModel {
            order: 2,
            delta,
            spectra: vec![vec![1.0, 2.0]],
            blocks: vec![(0, 0)],
            couplings: vec![CMat::from_row_slice(2, 2, &[z, one, -one, z])],
        }
    }

    fn curve(model: &GalerkinModel, h: &BlockSkew, s: impl Fn(f64) -> f64, k: usize) -> SUTarget {
        let times: Vec<f64> = (0..=k).map(|g| g as f64 / k as f64).collect();
        SUTarget {
            order: model.order,
            columns: model.order,
            blocks: model.blocks.clone(),
            matrices: vec![times.iter().map(|&t| expm_skew(&h.blocks[0], s(t))).collect()],
            times,
        }
    }

    /// Largest distance from the interaction-frame samples to the subgroup `exp(s h)`.
    fn distance_to_subgroup(model: &GalerkinModel, control: &PiecewiseConstantControl, init: &[CMat], h: &CMat) -> f64 {
        let grid = SampleGrid::breakpoints_only();
        let traj = propagate(model, control, init, &grid).unwrap();
        let z = interaction_frames(model, &traj).unwrap();
        let hh = crate::linalg::inner(h, h);
        z[0].iter()
            .map(|z| {
                let s0 = crate::linalg::inner(h, &unitary_log(z)) / hh;
                let f = |s: f64| group_distance(&expm_skew(h, s), z);
                let mut best = f(s0);
                let (mut a, mut b) = (s0 - 0.05, s0 + 0.05);
                for _ in 0..80 {
                    let (c, d) = (a + 0.382 * (b - a), a + 0.618 * (b - a));
                    if f(c) < f(d) {
                        b = d;
                    } else {
                        a = c;
                    }
                }
                best = best.min(f(0.5 * (a + b)));
                best
            })
            .fold(0.0, f64::max)
    }

    fn word_product(seq: &[(usize, f64)], leaves: &[BlockSkew]) -> CMat {
        let mut p = CMat::identity(leaves[0].order(), leaves[0].order());
        for &(i, t) in seq {
            p = expm_skew(&leaves[i].blocks[0], t) * p;
        }
        p
    }

    #[test]
    fn bch_defect_is_third_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut su = || {
            let x = CMat::from_fn(3, 3, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let x = project_su(&x);
            let n = x.norm();
            x / C64::new(n, 0.0)
        };
        let (u, v) = (su(), su());
        let r: Vec<f64> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&t| bch_defect(&u, &v, t) / (t * t)).collect();
        for w in r.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(r[3] < 0.25 * r[0]);
    }

    #[test]
    fn realized_words_approach_their_exponentials() {
        let model = two_level(1.0);
        let gens = GeneratorSet::new(&model, 1e-12);
        let leaves = gens.leaf_elements();
        let w1 = Word::Bracket(0, Box::new(Word::Leaf(1)));
        let w2 = Word::Bracket(1, Box::new(w1.clone()));
        for (w, order) in [(&w1, 1.5), (&w2, 4.0 / 3.0)] {
            let e = w.eval(&leaves);
            let err = |c: f64| {
                let mut seq = Vec::new();
                realize_word(w, c, &mut seq);
                group_distance(&word_product(&seq, &leaves), &expm_skew(&e.blocks[0], c))
            };
            for sign in [1.0, -1.0] {
                let (a, b) = (err(sign * 1e-2), err(sign * 1e-4));
                // error shrinks like c^order over two decades
                assert!(a / b > 0.5 * 100f64.powf(order), "{w}: {a} {b}");
            }
        }
    }

    #[test]
    fn identity_target_is_an_empty_plan() {
        let model = two_level(10.0);
        let gens = GeneratorSet::new(&model, 1e-12);
        let zero = BlockSkew::zeros(1, 2);
        let target = curve(&model, &zero, |t| t, 8);
        let (control, plan) = bch_tracking_control(&target, &model, &gens, &TrackingOptions::default()).unwrap();
        assert!(control.is_empty());
        assert!(plan.steps.is_empty());
        assert_eq!(plan.final_distance, 0.0);
    }

    #[test]
    fn holding_a_leaf_tracks_its_subgroup() {
        let model = two_level(1e6);
        let gens = GeneratorSet::new(&model, 1e-12);
        let g = gens.leaf_elements()[0].clone();
        let target = curve(&model, &g, |t| t, 10);
        let opts = TrackingOptions {
            feedback: false,
            ..TrackingOptions::default()
        };
        let (control, plan) = bch_tracking_control(&target, &model, &gens, &opts).unwrap();
        assert!(plan.steps.iter().all(|s| s.labels == ["g0"]));
        let d = distance_to_subgroup(&model, &control, &target.at(0), &g.blocks[0]);
        assert!(d < 1e-6, "{d}");
        assert!(plan.final_distance < 1e-6);
    }

    #[test]
    fn halving_the_period_halves_the_excursion() {
        let model = two_level(1e6);
        let gens = GeneratorSet::new(&model, 1e-12);
        let l = gens.leaf_elements();
        let h = bracket(&l[0], &l[1]).unwrap().scale(0.1);
        let target = curve(&model, &h, |t| t * t, 4);
        let run = |tau0: f64| {
            let opts = TrackingOptions {
                eps: 1.0,
                tau0: Some(tau0),
                feedback: false,
                max_halvings: 0,
                corrections: 0,
                ..TrackingOptions::default()
            };
            let (control, _) = bch_tracking_control(&target, &model, &gens, &opts).unwrap();
            distance_to_subgroup(&model, &control, &target.at(0), &h.blocks[0])
        };
        let (a, b) = (run(0.1), run(0.05));
        assert!(a / b >= 1.8, "{a} {b}");
    }

    #[test]
    fn feedback_tracking_meets_the_step_budget() {
        let model = two_level(10.0);
        let gens = GeneratorSet::new(&model, 1e-12);
        let l = gens.leaf_elements();
        let h = &l[0].scale(0.8) + &bracket(&l[0], &l[1]).unwrap().scale(0.2);
        let target = curve(&model, &h, |t| t, 8);
        let opts = TrackingOptions {
            eps: 0.1,
            ..TrackingOptions::default()
        };
        let (control, plan) = bch_tracking_control(&target, &model, &gens, &opts).unwrap();
        assert!(plan.max_defect <= opts.eps);
        assert!(plan.steps.iter().all(|s| s.tau0 > 0.0));
        for s in &plan.steps {
            let total: f64 = s.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // the emitted control reproduces the planned end state
        let traj = propagate(&model, &control, &target.at(0), &SampleGrid::endpoints_only()).unwrap();
        let z = interaction_frames(&model, &traj).unwrap();
        let end = z[0].last().unwrap();
        let goal = target.at(target.len() - 1);
        let replay = group_distance(end, &goal[0]);
        assert!((replay - plan.final_distance).abs() < 1e-8, "{replay} {}", plan.final_distance);
    }

    #[test]
    fn unreachable_eps_exhausts_the_budget() {
        let model = two_level(10.0);
        let gens = GeneratorSet::new(&model, 1e-12);
        let l = gens.leaf_elements();
        let h = bracket(&l[0], &l[1]).unwrap();
        let target = curve(&model, &h, |t| t, 4);
        let opts = TrackingOptions {
            eps: 1e-12,
            max_switchings: 200,
            ..TrackingOptions::default()
        };
        match bch_tracking_control(&target, &model, &gens, &opts) {
            Err(Error::Budget { achieved, .. }) => assert!(achieved > 1e-12),
            other => panic!("expected a budget error, got {:?}", other.map(|p| p.1.max_defect)),
        }
    }
}
