//! Special-unitary frames for a three-level rotation tracked on two columns.
use ensemble_track::galerkin::{build_su_target, TargetCurve};
use ensemble_track::linalg::{expm_skew, unitarity_defect};
use ensemble_track::{CMat, C64};

fn main() -> ensemble_track::Result<()> {
    let z = C64::new(0.0, 0.0);
    let r = |x: f64| C64::new(x, 0.0);
    // mostly a rotation of levels 0 and 1, with a weak leak into level 2
    let k = CMat::from_row_slice(3, 3, &[z, r(-1.5), r(-0.05), r(1.5), z, z, r(0.05), z, z]);
    let times: Vec<f64> = (0..=40).map(|g| g as f64 / 40.0).collect();
    let curve = TargetCurve {
        frames: vec![times.iter().map(|&t| expm_skew(&k, t).columns(0, 2).into_owned()).collect()],
        blocks: vec![(0, 0)],
        times,
    };
    for eps in [1e-1, 1e-3] {
        let target = build_su_target(&curve, 2, eps)?;
        let worst = target.matrices[0].iter().map(unitarity_defect).fold(0.0, f64::max);
        let det = target.matrices[0].iter().map(|m| (m.determinant() - r(1.0)).norm()).fold(0.0, f64::max);
        println!("eps {eps:.0e}: order {}, unitarity {worst:.1e}, |det - 1| {det:.1e}", target.order);
    }
    Ok(())
}
