//! Structural checks and tracking hypotheses for the bundled specs.
use std::path::Path;

use ensemble_track::cli::{check_spec, Tolerances};
use ensemble_track::model::EnsembleSpec;

fn main() -> ensemble_track::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for name in ["two_level", "ensemble", "counterexample"] {
        let spec = EnsembleSpec::from_file(&data.join(format!("{name}.json")))?;
        let report = check_spec(&spec, spec.min_depth(), &Tolerances::default())?;
        println!("{name}: exit code {}", report.exit_code());
        if let Some(h) = &report.hypotheses {
            for chain in &h.chains {
                println!("  chain of system {} control {}: {:?}", chain.system, chain.control, chain.pairs);
            }
            println!("  nonresonance {:?}", h.nonresonance);
        }
    }
    Ok(())
}
