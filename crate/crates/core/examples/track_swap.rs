//! Population swap on the bundled single system and two-member ensemble.
use std::path::Path;

use ensemble_track::cli::{synthesize, RunConfig};
use ensemble_track::galerkin::TargetCurve;
use ensemble_track::model::EnsembleSpec;

fn main() -> ensemble_track::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for name in ["two_level", "ensemble"] {
        let spec = EnsembleSpec::from_file(&data.join(format!("{name}.json")))?;
        let curve = TargetCurve::from_file(&data.join(format!("{name}_swap.json")))?;
        let run = synthesize(&spec, &curve, &RunConfig::default())?;
        let r = &run.report;
        let bound = r.l1_bound.as_ref().map_or(f64::NAN, |b| b.bound);
        println!("{name}:");
        println!("  closure {:?}", run.plan.closure);
        println!("  {} switchings, final drift {:.3}", run.plan.switchings, run.phase_time);
        println!("  modulus error {:.3e}, endpoint error {:.3e}", r.modulus_error, r.endpoint_error);
        println!("  L1 {:.4}, bound {bound:.4}", r.measured_l1);
    }
    Ok(())
}
