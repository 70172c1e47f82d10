use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liealg::{BlockSkew, GeneratorSet, LieClosure, Word};

/// One closure word used with a signed coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    /// Index into the closure basis.
    pub word: usize,
    pub coefficient: f64,
}

/// `target = scale · Σ weight_r · sign_r · element(word_r)`, with the
/// weights convex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub terms: Vec<Term>,
    /// `Σ |coefficient|`; the target lies in `scale · conv(±elements)`.
    pub scale: f64,
    /// Trace-form norm of the part the closure basis cannot express.
    pub residual: f64,
}

impl Decomposition {
    pub fn weights(&self) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.coefficient.abs() / self.scale)
            .collect()
    }

    /// True when only leaves are used, so no bracket has to be realized.
    pub fn leaves_only(&self, closure: &LieClosure) -> bool {
        self.terms
            .iter()
            .all(|t| matches!(closure.words[t.word], Word::Leaf(_)))
    }
}

/// Coefficients of `target` over the closure basis.
///
/// The basis is linearly independent, so the coordinates are unique; a
/// target that already lies in the span of the leaves is expressed through
/// them alone because leaves come first in the basis and are never
/// displaced. Coefficients below `drop_tol · |target|` are discarded.
pub fn decompose_velocity(
    target: &BlockSkew,
    gens: &GeneratorSet,
    closure: &LieClosure,
    residual_tol: f64,
) -> Result<Decomposition> {
    if target.len() != gens.nblocks || target.order() != gens.order {
        return Err(Error::structural("velocity shape does not match the generator set"));
    }
    let norm = target.norm();
    if norm == 0.0 || closure.dim() == 0 {
        return Ok(Decomposition {
            terms: Vec::new(),
            scale: 0.0,
            residual: norm,
        });
    }
    let rhs = target.to_real();
    let cols: Vec<_> = closure.elements.iter().map(|e| e.to_real()).collect();
    let a = DMatrix::from_columns(&cols);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let c = svd
        .solve(&rhs, smax * 1e-12)
        .map_err(|e| Error::IllConditioned {
            what: "velocity decomposition".into(),
            detail: e.to_string(),
        })?;
    let resid_vec = &a * &c - &rhs;
    let residual = resid_vec.norm();
    if residual > residual_tol * norm.max(1.0) {
        let mut worst = (0, 0.0);
        let per_block = resid_vec.len() / target.len();
        for b in 0..target.len() {
            let r = resid_vec.rows(b * per_block, per_block).norm();
            if r > worst.1 {
                worst = (b, r);
            }
        }
        return Err(Error::IllConditioned {
            what: "velocity decomposition".into(),
            detail: format!(
                "component of norm {:.3e} in block {} lies outside the generated algebra",
                worst.1, worst.0
            ),
        });
    }
    let drop = 1e-13 * norm;
    let terms: Vec<Term> = c
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > drop)
        .map(|(word, &coefficient)| Term { word, coefficient })
        .collect();
    let scale = terms.iter().map(|t| t.coefficient.abs()).sum();
    Ok(Decomposition {
        terms,
        scale,
        residual,
    })
}
