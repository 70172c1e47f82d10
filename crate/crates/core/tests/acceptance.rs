//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::{c, chain_model, data, random_element, random_skew, random_spec, spec};
use ensemble_track::cli::{counterexample_sweep, synthesize, RunConfig, Synthesis};
use ensemble_track::galerkin::{build_su_target, truncate_operators, SUTarget, TargetCurve};
use ensemble_track::liealg::{
    ad_power, bracket, lie_closure, phase_average_extract, vandermonde_isolate, AveragingBudget, BlockSkew,
    GeneratorSet, PairStack, PairTarget, RANK_TOL,
};
use ensemble_track::linalg::{diag_phase, expm_skew, op_norm, unitarity_defect};
use ensemble_track::sim::{identity_frames, modulus_error, phase_propagate, propagate, SampleGrid};
use ensemble_track::synthesis::{bch_defect, ControlDomain, PiecewiseConstantControl};
use ensemble_track::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_control(rng: &mut impl Rng, pieces: usize, delta: f64) -> PiecewiseConstantControl {
    let p: Vec<(f64, f64)> = (0..pieces)
        .map(|_| (rng.random_range(0.01..1.0), rng.random_range(0.05..=delta)))
        .collect();
    PiecewiseConstantControl::new(ControlDomain::Original, delta, &p).unwrap()
}

fn reparametrization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut exact, mut worst) = (true, 0.0f64);
    for _ in 0..50 {
        let spec = random_spec(1, 1, 3, 2.0, &mut rng);
        let model = truncate_operators(&spec, 3).unwrap();
        let pieces = rng.random_range(1..=20);
        let u = random_control(&mut rng, pieces, 2.0);
        let v = u.reparametrize().unwrap();
        exact &= u.u_l1_norm() == v.total_duration();
        let init = identity_frames(&model, 3);
        let xu = propagate(&model, &u, &init, &SampleGrid::endpoints_only()).unwrap().final_frames();
        let xv = propagate(&model, &v, &init, &SampleGrid::endpoints_only()).unwrap().final_frames();
        worst = worst.max(op_norm(&(&xu[0] - &xv[0])));
    }
    verdict(exact && worst < 1e-10, format!("L1 = T_v exact: {exact}, propagator gap {worst:.2e}"))
}

fn bch_order() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let taus = [0.1, 0.05, 0.025, 0.0125];
    let mut worst_ratio = 0.0f64;
    let mut monotone = true;
    for _ in 0..20 {
        let mut draw = || {
            let x = common::random_su(3, &mut rng);
            let s = rng.random_range(0.2..1.0) / op_norm(&x);
            x * C64::new(s, 0.0)
        };
        let (u, v) = (draw(), draw());
        let r: Vec<f64> = taus.iter().map(|&t| bch_defect(&u, &v, t) / (t * t)).collect();
        monotone &= r.windows(2).all(|w| w[1] < w[0]);
        worst_ratio = worst_ratio.max(r[3] / r[0]);
    }
    verdict(
        monotone && worst_ratio < 0.25,
        format!("monotone: {monotone}, worst final/initial ratio {worst_ratio:.3}"),
    )
}

fn member_part(x: &BlockSkew, block: usize) -> BlockSkew {
    let mut y = BlockSkew::zeros(x.len(), x.order());
    y.blocks[block] = x.blocks[block].clone();
    y
}

fn separated_moduli(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
        let ok = (0..n).all(|i| (0..i).all(|j| (v[i] - v[j]).abs() >= 0.05));
        if ok {
            return v;
        }
    }
}

fn random_stack(rng: &mut impl Rng) -> (ensemble_track::galerkin::GalerkinModel, PairStack) {
    let m = rng.random_range(2..=3);
    let n = rng.random_range(2..=3);
    let spectrum: Vec<f64> = (0..m).map(|k| k as f64 + rng.random_range(0.1..0.9)).collect();
    let (k, l) = if m == 2 { (0, 1) } else { [(0, 1), (0, 2), (1, 2)][rng.random_range(0..3)] };
    let z = C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    let model = chain_model(spectrum, &[(k, l, z)], &separated_moduli(rng, n));
    let st = PairStack::new(&model, 0, k, l);
    (model, st)
}

fn bracket_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut first, mut literal, mut corrected) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (_, st) = random_stack(&mut rng);
        let ab = bracket(&st.a, &st.b).unwrap();
        let sum = |r: usize, q: &BlockSkew, f: f64| {
            let mut x = BlockSkew::zeros(st.a.len(), st.a.order());
            for (j, &b) in st.members.iter().enumerate() {
                x.axpy(f * st.nodes[j].powi(r as i32), &member_part(q, b));
            }
            x
        };
        let rel = |x: &BlockSkew, y: &BlockSkew| (x - y).norm() / y.norm();
        first = first.max(rel(&bracket(&ab, &st.b).unwrap(), &sum(1, &st.a, -4.0)));
        for k in 1..=4usize {
            let lhs = ad_power(&ab, &st.b, k);
            let lit = sum(k, &st.a, (-1f64).powi(k as i32) * 2f64.powi(k as i32 + 1));
            literal = literal.max(rel(&lhs, &lit));
            // the iterates alternate between the two quadratures and scale by 4^k
            let cor = if k % 2 == 1 {
                sum(k, &st.a, (-1f64).powi((k as i32 + 1) / 2) * 4f64.powi(k as i32))
            } else {
                sum(k, &st.b, (-1f64).powi(k as i32 / 2) * 4f64.powi(k as i32))
            };
            corrected = corrected.max(rel(&lhs, &cor));
        }
    }
    verdict(
        first < 1e-9 && literal < 1e-9,
        format!(
            "[[a,b],b] rel err {first:.1e}; stated ad^k formula rel err {literal:.2e}; \
             alternating-quadrature 4^k form rel err {corrected:.1e}"
        ),
    )
}

fn isolation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases = vec![
        chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(1.0, 0.0))], &[1.0, 0.5]),
        chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(0.6, -0.8))], &[1.0, 0.9, 0.8]),
    ];
    for _ in 0..10 {
        cases.push(random_stack(&mut rng).0);
    }
    let mut worst = 0.0f64;
    for model in &cases {
        let (k, l) = first_pair(model);
        let st = PairStack::new(model, 0, k, l);
        for j0 in 0..st.members.len() {
            worst = worst.max(vandermonde_isolate(&st, j0, 1e12).unwrap().residual);
        }
    }
    verdict(worst < 1e-8, format!("{} stacks with 2 or 3 members, worst residual {worst:.2e}", cases.len()))
}

fn first_pair(model: &ensemble_track::galerkin::GalerkinModel) -> (usize, usize) {
    let b = &model.couplings[0];
    for k in 0..model.order {
        for l in k + 1..model.order {
            if b[(k, l)].norm() > 0.0 {
                return (k, l);
            }
        }
    }
    unreachable!()
}

fn closure_dimensions() -> Verdict {
    let (r2, r3, r5) = (2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt());
    let dim = |m: &ensemble_track::galerkin::GalerkinModel| lie_closure(&GeneratorSet::new(m, 1e-12), 1000, RANK_TOL).unwrap().dim();
    let single = dim(&chain_model(vec![1.0, r2, r3], &[(0, 1, c(1.0, 0.0)), (1, 2, c(0.8, 0.0))], &[1.0]));
    let ens = dim(&chain_model(vec![1.0, r2], &[(0, 1, c(1.0, 0.0))], &[1.0, 0.5]));
    let four = dim(&chain_model(
        vec![1.0, r2, r3, r5],
        &[(0, 1, c(1.0, 0.0)), (1, 2, c(0.7, 0.0)), (2, 3, c(0.5, 0.0))],
        &[1.0],
    ));
    verdict(
        (single, ens, four) == (8, 6, 15),
        format!("dims {single}, {ens}, {four} (expected 8, 6, 15)"),
    )
}

fn phase_averaging() -> Verdict {
    let model = chain_model(
        vec![1.0, 2f64.sqrt(), 3f64.sqrt()],
        &[(0, 1, c(1.0, 0.0)), (1, 2, c(0.7, 0.2)), (0, 2, c(0.3, -0.4))],
        &[1.0],
    );
    let mut worst = 0.0f64;
    let mut decreasing = true;
    let mut pairs = Vec::new();
    for (k, l) in [(0, 1), (0, 2), (1, 2)] {
        let t = PairTarget { system: 0, k, l };
        let base = AveragingBudget::default();
        let more = AveragingBudget { samples: 4 * base.samples, ..base.clone() };
        let r0 = phase_average_extract(&model, 1.0, t, 0.0, &base).unwrap().residual;
        let r1 = phase_average_extract(&model, 1.0, t, 0.0, &more).unwrap().residual;
        worst = worst.max(r0);
        decreasing &= r1 < r0;
        pairs.push(format!("({k},{l}) {r0:.1e} -> {r1:.1e}"));
    }
    // below the default budget the residual is still above round-off
    let t = PairTarget { system: 0, k: 0, l: 1 };
    let small: Vec<String> = [1, 4, 16, 64]
        .iter()
        .map(|&n| {
            let b = AveragingBudget { samples: n, tol: f64::INFINITY, ..AveragingBudget::default() };
            format!("{:.1e}", phase_average_extract(&model, 1.0, t, 0.0, &b).unwrap().residual)
        })
        .collect();
    verdict(
        worst < 1e-3 && decreasing,
        format!(
            "residual at 256 -> 1024 samples: {}; (0,1) at 1, 4, 16, 64 samples: {}",
            pairs.join(", "),
            small.join(", ")
        ),
    )
}

fn bundled_run(name: &str) -> Synthesis {
    let s = spec(&format!("{name}.json"));
    let curve = TargetCurve::from_file(&data(&format!("{name}_swap.json"))).unwrap();
    synthesize(&s, &curve, &RunConfig::default()).unwrap()
}

fn tracking(runs: &[(&str, Synthesis)]) -> Verdict {
    let two = &runs[0].1.report;
    let ens = &runs[1].1.report;
    verdict(
        two.modulus_error < 0.1 && two.endpoint_error < 0.1 && ens.modulus_error < 0.15,
        format!(
            "2-level modulus {:.2e} endpoint {:.2e}; ensemble modulus {:.2e} endpoint {:.2e}",
            two.modulus_error, two.endpoint_error, ens.modulus_error, ens.endpoint_error
        ),
    )
}

fn l1(runs: &[(&str, Synthesis)]) -> Verdict {
    // one quarter turn per block: ‖μ‖_L1 = (π/2)·‖[[0,-1],[1,0]]‖_F
    let mu = PI / 2f64.sqrt();
    let hand = [1f64.powf(1.5) * 4.0 * mu / 1.0, 2f64.powf(1.5) * 4.0 * (2.0 * mu) / 0.5];
    let mut pass = true;
    let mut parts = Vec::new();
    for ((name, run), h) in runs.iter().zip(hand) {
        let b = run.report.l1_bound.as_ref().unwrap();
        let formula_ok = ((b.bound - h) / h).abs() < 1e-12;
        let within = b.min_chain_coupling <= 0.0 || run.report.measured_l1 <= b.bound;
        pass &= formula_ok && within;
        parts.push(format!(
            "{name}: L1 {:.4} vs bound {:.4} (hand {h:.12}, formula match {formula_ok})",
            run.report.measured_l1, b.bound
        ));
    }
    verdict(pass, parts.join("; "))
}

fn counterexample() -> Verdict {
    let s = spec("counterexample.json");
    let model = truncate_operators(&s, 3).unwrap();
    let cfg = RunConfig { eps: 0.2, ..RunConfig::default() };
    let rep = counterexample_sweep(&model, &cfg).unwrap();
    let exits = rep.runs.iter().filter(|r| r.exit_time.is_some_and(|t| t < 1e3)).count();
    let latest = rep.runs.iter().filter_map(|r| r.exit_time).fold(0.0, f64::max);
    verdict(
        exits == 100 && rep.chain_holds == 100,
        format!(
            "{exits}/100 exits before t = 1000 (latest {latest:.3}), bound chain held on {}/100",
            rep.chain_holds
        ),
    )
}

fn invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = random_spec(1, 2, 3, 2.0, &mut rng);
    let model = truncate_operators(&spec, 3).unwrap();
    let init = identity_frames(&model, 3);

    let u = random_control(&mut rng, 10_000, 2.0);
    let traj = propagate(&model, &u, &init, &SampleGrid::breakpoints_only()).unwrap();
    let unitarity = traj.unitarity_defect();

    // modulus metric against a phase-scrambled copy of an unrelated curve
    let short = random_control(&mut rng, 20, 2.0);
    let traj = propagate(&model, &short, &init, &SampleGrid::standard(short.total_duration())).unwrap();
    let h = random_element(2, 3, &mut rng);
    let times: Vec<f64> = (0..=40).map(|g| g as f64 / 40.0).collect();
    let reference = SUTarget {
        order: 3,
        columns: 3,
        blocks: model.blocks.clone(),
        matrices: h.blocks.iter().map(|x| times.iter().map(|&t| expm_skew(x, t)).collect()).collect(),
        times: times.clone(),
    };
    let mut scrambled = reference.clone();
    for seq in scrambled.matrices.iter_mut() {
        for x in seq.iter_mut() {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            *x = diag_phase(&p) * &*x;
        }
    }
    let invariance = (modulus_error(&traj, &reference, 3).unwrap() - modulus_error(&traj, &scrambled, 3).unwrap()).abs();

    let v = short.reparametrize().unwrap();
    let grid = SampleGrid::standard(v.total_duration());
    let x = propagate(&model, &v, &init, &grid).unwrap();
    let y = phase_propagate(&model, &v, &init, &grid).unwrap();
    let mut cov = 0.0f64;
    for b in 0..model.block_count() {
        for (g, &t) in x.times.iter().enumerate() {
            let theta = v.integral_to(t);
            let p: Vec<f64> = model.block_spectrum(b).iter().map(|l| -l * theta).collect();
            cov = cov.max((diag_phase(&p) * &x.frames[b][g] - &y.frames[b][g]).norm());
        }
    }

    let k = random_skew(3, &mut rng);
    let curve = TargetCurve {
        times: times.clone(),
        blocks: vec![(0, 0)],
        frames: vec![times.iter().map(|&t| expm_skew(&k, t).columns(0, 2).into_owned()).collect()],
    };
    let target = build_su_target(&curve, 2, 1e-3).unwrap();
    let (mut gs_unit, mut gs_det) = (0.0f64, 0.0f64);
    for m in target.matrices.iter().flatten() {
        gs_unit = gs_unit.max(unitarity_defect(m));
        gs_det = gs_det.max((m.determinant() - C64::new(1.0, 0.0)).norm());
    }
    verdict(
        unitarity < 1e-9 && invariance < 1e-12 && cov < 1e-10 && gs_unit < 1e-10 && gs_det < 1e-10,
        format!(
            "unitarity {unitarity:.1e} over 10^4 switches, phase invariance {invariance:.1e}, \
             change of variables {cov:.1e}, frames {gs_unit:.1e} / |det-1| {gs_det:.1e}"
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, limit: f64, (v, d): (Verdict, Duration)| {
        let fast = d.as_secs_f64() < limit;
        let pass = v.pass && fast;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2}: {}  {} [{:.2} s, limit {limit} s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            d.as_secs_f64()
        );
    };
    report(1, 10.0, timed(reparametrization));
    report(2, 5.0, timed(bch_order));
    report(3, 5.0, timed(bracket_identity));
    report(4, 5.0, timed(isolation));
    report(5, 30.0, timed(closure_dimensions));
    report(6, 30.0, timed(phase_averaging));
    let (runs, d7) = timed(|| vec![("2-level", bundled_run("two_level")), ("ensemble", bundled_run("ensemble"))]);
    report(7, 300.0, (tracking(&runs), d7));
    report(8, 1.0, timed(|| l1(&runs)));
    report(9, 120.0, timed(counterexample));
    report(10, 60.0, timed(invariants));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
