//! Nonnegative controls cannot hold the bundled three-level system near its ground state.
use std::path::Path;

use ensemble_track::cli::{counterexample_sweep, RunConfig};
use ensemble_track::galerkin::truncate_operators;
use ensemble_track::model::EnsembleSpec;
use ensemble_track::sim::verify_counterexample;
use ensemble_track::synthesis::{ControlDomain, PiecewiseConstantControl};

fn main() -> ensemble_track::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = EnsembleSpec::from_file(&data.join("counterexample.json"))?;
    let model = truncate_operators(&spec, 3)?;
    let eps = 0.2;

    let zero = PiecewiseConstantControl::constant(ControlDomain::Nonnegative, spec.delta, 0.0, 1.0)?;
    let free = verify_counterexample(&model, &zero, eps, 10.0)?;
    println!(
        "u = 0 leaves at t = {:.6} (phase geometry: {:.6})",
        free.exit_time.unwrap(),
        2.0 * (eps / 2.0).asin() / free.lambda1
    );

    let rep = counterexample_sweep(&model, &RunConfig { eps, ..RunConfig::default() })?;
    let latest = rep.runs.iter().filter_map(|r| r.exit_time).fold(0.0, f64::max);
    println!(
        "{}/{} random controls leave the ball, latest at t = {latest:.3}; bound chain held on {}",
        rep.exits,
        rep.runs.len(),
        rep.chain_holds
    );
    Ok(())
}
