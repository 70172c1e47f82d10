#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ensemble_track::galerkin::{truncate_operators, GalerkinModel};
use ensemble_track::linalg::project_su;
use ensemble_track::liealg::BlockSkew;
use ensemble_track::model::{EnsembleSpec, SystemSpec};
use ensemble_track::{CMat, C64};
use rand::Rng;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn spec(name: &str) -> EnsembleSpec {
    EnsembleSpec::from_file(&data(name)).unwrap()
}

/// One system, one coupling per entry of `controls`, each a multiple of the
/// same chain pattern.
pub fn chain_spec(spectrum: Vec<f64>, pairs: &[(usize, usize, C64)], controls: &[f64]) -> EnsembleSpec {
    let m = spectrum.len();
    let couplings = controls
        .iter()
        .map(|&s| {
            let mut b = CMat::zeros(m, m);
            for &(k, l, z) in pairs {
                b[(k, l)] = z * s;
                b[(l, k)] = -(z * s).conj();
            }
            b
        })
        .collect();
    EnsembleSpec {
        systems: vec![SystemSpec { spectrum, couplings }],
        delta: 1.0,
        truncated: false,
    }
}

pub fn chain_model(spectrum: Vec<f64>, pairs: &[(usize, usize, C64)], controls: &[f64]) -> GalerkinModel {
    let m = spectrum.len();
    truncate_operators(&chain_spec(spectrum, pairs, controls), m).unwrap()
}

pub fn random_skew(m: usize, rng: &mut impl Rng) -> CMat {
    let x = CMat::from_fn(m, m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&x - x.adjoint()) * c(0.5, 0.0)
}

pub fn random_su(m: usize, rng: &mut impl Rng) -> CMat {
    project_su(&random_skew(m, rng))
}

/// Random ensemble with dense skew-adjoint couplings and spectra in `[0, 3)`.
pub fn random_spec(systems: usize, controls: usize, m: usize, delta: f64, rng: &mut impl Rng) -> EnsembleSpec {
    EnsembleSpec {
        systems: (0..systems)
            .map(|_| SystemSpec {
                spectrum: (0..m).map(|_| rng.random_range(0.0..3.0)).collect(),
                couplings: (0..controls).map(|_| random_skew(m, rng)).collect(),
            })
            .collect(),
        delta,
        truncated: false,
    }
}

pub fn random_element(nb: usize, m: usize, rng: &mut impl Rng) -> BlockSkew {
    BlockSkew {
        blocks: (0..nb).map(|_| random_su(m, rng)).collect(),
    }
}
