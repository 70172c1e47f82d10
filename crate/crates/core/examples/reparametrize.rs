//! The same motion in original and reparametrized time.
use ensemble_track::galerkin::truncate_operators;
use ensemble_track::linalg::op_norm;
use ensemble_track::model::{EnsembleSpec, SystemSpec};
use ensemble_track::sim::{identity_frames, propagate, SampleGrid};
use ensemble_track::synthesis::{ControlDomain, PiecewiseConstantControl};
use ensemble_track::{CMat, C64};

fn main() -> ensemble_track::Result<()> {
    let one = C64::new(1.0, 0.0);
    let z = C64::new(0.0, 0.0);
    let spec = EnsembleSpec {
        systems: vec![SystemSpec {
            spectrum: vec![1.0, 2f64.sqrt()],
            couplings: vec![CMat::from_row_slice(2, 2, &[z, one, -one, z])],
        }],
        delta: 2.0,
        truncated: false,
    };
    let model = truncate_operators(&spec, 2)?;
    let u = PiecewiseConstantControl::new(ControlDomain::Original, 2.0, &[(1.0, 0.5), (1.0, 2.0)])?;
    let v = u.reparametrize()?;
    let pieces: Vec<_> = v.pieces().map(|p| (p.duration, p.value)).collect();
    println!("v pieces {pieces:?}");
    println!("|u|_L1 = {}, T_v = {}", u.u_l1_norm(), v.total_duration());
    let init = identity_frames(&model, 2);
    let a = propagate(&model, &u, &init, &SampleGrid::endpoints_only())?.final_frames();
    let b = propagate(&model, &v, &init, &SampleGrid::endpoints_only())?.final_frames();
    println!("propagator gap {:.1e}", op_norm(&(&a[0] - &b[0])));
    Ok(())
}
