//! Control synthesis on the truncated ensemble.

pub mod control;
pub mod decompose;
pub mod l1;
pub mod phase_adjust;
pub mod tracking;

pub use control::{ControlDomain, Piece, PiecewiseConstantControl};
pub use decompose::{decompose_velocity, Decomposition, Term};
pub use l1::{l1_bound, L1Bound};
pub use phase_adjust::{final_phase_adjust, PhaseAdjustment};
pub use tracking::{bch_defect, bch_tracking_control, SynthesisPlan, TrackingOptions};
