//! Leaf generators, their Lie closure and single-member isolation.
use std::path::Path;

use ensemble_track::galerkin::truncate_operators;
use ensemble_track::liealg::{full_rank_dimension, lie_closure, vandermonde_isolate, GeneratorSet, PairStack, RANK_TOL};
use ensemble_track::model::EnsembleSpec;

fn main() -> ensemble_track::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = EnsembleSpec::from_file(&data.join("ensemble.json"))?;
    let model = truncate_operators(&spec, 2)?;
    let gens = GeneratorSet::new(&model, 1e-12);
    let closure = lie_closure(&gens, 1000, RANK_TOL)?;
    println!(
        "{} leaves, closure dimension {} (full rank {})",
        gens.gens.len(),
        closure.dim(),
        full_rank_dimension(model.order, model.block_count())
    );
    for w in &closure.words {
        println!("  {w}");
    }
    let stack = PairStack::new(&model, 0, 0, 1);
    for j0 in 0..stack.members.len() {
        let iso = vandermonde_isolate(&stack, j0, 1e12)?;
        println!("member {j0}: moment weights {:?}, residual {:.1e}", iso.coefficients, iso.residual);
    }
    Ok(())
}
