use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{GalerkinModel, SUTarget};
use crate::linalg::unitary_log;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Bound {
    pub total_blocks: usize,
    pub n1: usize,
    /// `‖μ‖_L1` per block.
    pub mu_l1: Vec<f64>,
    /// Smallest `|b(k,l)|` over the chain pairs.
    pub min_chain_coupling: f64,
    /// Smallest `|b(k,l)|` over all `k, l < min(N1, order)`.
    pub literal_min_coupling: f64,
    pub literal_degenerate: bool,
    /// Bound with the chain minimum.
    pub bound: f64,
    /// Bound with the literal minimum; `None` when that minimum vanishes.
    pub literal_bound: Option<f64>,
}

impl L1Bound {
    pub fn mu_total(&self) -> f64 {
        self.mu_l1.iter().sum()
    }
}

/// `‖μ‖_L1` of each block curve: the summed geodesic lengths
/// `‖log(M_g⁻¹ M_{g+1})‖_F` between consecutive samples.
pub fn target_speed_l1(target: &SUTarget) -> Vec<f64> {
    target
        .matrices
        .iter()
        .map(|seq| {
            seq.windows(2)
                .map(|w| unitary_log(&(w[0].adjoint() * &w[1])).norm())
                .sum()
        })
        .collect()
}

/// `(Σn)^{3/2} N1² Σ‖μ‖ / min|b|`.
///
/// `chain` lists `(block, k, l)` entries carrying the connectedness chains.
pub fn l1_bound(model: &GalerkinModel, target: &SUTarget, n1: usize, chain: &[(usize, usize, usize)]) -> Result<L1Bound> {
    if target.blocks != model.blocks {
        return Err(Error::structural("target and model cover different blocks"));
    }
    if chain.is_empty() {
        return Err(Error::structural("empty chain"));
    }
    let min_chain = chain
        .iter()
        .map(|&(b, k, l)| model.couplings[b][(k, l)].norm())
        .fold(f64::INFINITY, f64::min);
    if !(min_chain > 0.0) {
        return Err(Error::Hypothesis("a chain entry has zero coupling".into()));
    }
    let cut = n1.min(model.order);
    let literal = model
        .couplings
        .iter()
        .flat_map(|c| (0..cut).flat_map(move |k| (0..cut).map(move |l| c[(k, l)].norm())))
        .fold(f64::INFINITY, f64::min);
    let mu_l1 = target_speed_l1(target);
    let nb = model.block_count() as f64;
    let numerator = nb.powf(1.5) * (n1 as f64).powi(2) * mu_l1.iter().sum::<f64>();
    Ok(L1Bound {
        total_blocks: model.block_count(),
        n1,
        mu_l1,
        min_chain_coupling: min_chain,
        literal_min_coupling: literal,
        literal_degenerate: literal == 0.0,
        bound: numerator / min_chain,
        literal_bound: (literal > 0.0).then(|| numerator / literal),
    })
}
