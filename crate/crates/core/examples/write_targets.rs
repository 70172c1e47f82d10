//! Regenerates the bundled population-swap targets under `data/`.
use std::path::Path;

use ensemble_track::model::EnsembleSpec;
use ensemble_track::targets::population_swap;

fn main() -> ensemble_track::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for name in ["two_level", "ensemble"] {
        let spec = EnsembleSpec::from_file(&data.join(format!("{name}.json")))?;
        let curve = population_swap(&spec.blocks(), spec.min_depth(), 2, 1.0, 50);
        let path = data.join(format!("{name}_swap.json"));
        curve.to_file(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
