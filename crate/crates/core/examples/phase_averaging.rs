//! Pair generators recovered from convex combinations of drifted couplings.
use ensemble_track::galerkin::truncate_operators;
use ensemble_track::liealg::{phase_average_extract, AveragingBudget, PairTarget};
use ensemble_track::model::{EnsembleSpec, SystemSpec};
use ensemble_track::{CMat, C64};

fn main() -> ensemble_track::Result<()> {
    let c = |re: f64, im: f64| C64::new(re, im);
    let mut b = CMat::zeros(3, 3);
    for (k, l, z) in [(0, 1, c(1.0, 0.0)), (1, 2, c(0.7, 0.2)), (0, 2, c(0.3, -0.4))] {
        b[(k, l)] = z;
        b[(l, k)] = -z.conj();
    }
    let spec = EnsembleSpec {
        systems: vec![SystemSpec { spectrum: vec![1.0, 2f64.sqrt(), 3f64.sqrt()], couplings: vec![b] }],
        delta: 1.0,
        truncated: false,
    };
    let model = truncate_operators(&spec, 3)?;
    for (k, l) in [(0, 1), (0, 2), (1, 2)] {
        for samples in [4, 256] {
            let budget = AveragingBudget { samples, ..AveragingBudget::default() };
            let e = phase_average_extract(&model, 1.0, PairTarget { system: 0, k, l }, 0.0, &budget)?;
            println!(
                "pair ({k},{l}), {samples:>3} lattice points: {} used, residual {:.1e}",
                e.phases.len(),
                e.residual
            );
        }
    }
    Ok(())
}
