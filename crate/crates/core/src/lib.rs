//! Simultaneous approximate tracking for finite ensembles of bilinear
//! quantum systems sharing one scalar control.
//!
//! The pipeline runs from an [`model::EnsembleSpec`] through Galerkin
//! truncation ([`galerkin`]), the Lie-algebraic generator machinery
//! ([`liealg`]) and control synthesis ([`synthesis`]) to exact simulation and
//! error metrics ([`sim`]).

pub mod error;
pub mod io;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;
pub mod galerkin;
pub mod synthesis;
pub mod nnls;
pub mod liealg;
pub mod sim;
pub mod targets;
pub mod cli;
