//! Reference target curves used by the bundled runs and tests.

use crate::galerkin::TargetCurve;
use crate::{CMat, C64};

fn uniform(horizon: f64, samples: usize) -> Vec<f64> {
    let k = samples.max(1);
    (0..=k).map(|g| horizon * g as f64 / k as f64).collect()
}

/// Every block held at the identity (first `columns` columns).
pub fn identity_curve(blocks: &[(usize, usize)], depth: usize, columns: usize, horizon: f64, samples: usize) -> TargetCurve {
    let times = uniform(horizon, samples);
    let frame = CMat::identity(depth, columns);
    TargetCurve {
        frames: vec![vec![frame; times.len()]; blocks.len()],
        blocks: blocks.to_vec(),
        times,
    }
}

/// Rotation moving the population of level 0 onto level 1 over `[0, horizon]`,
/// identical for every block: column 0 is `cos(πs/2) e₀ + sin(πs/2) e₁`,
/// `s = t / horizon`.
pub fn population_swap(blocks: &[(usize, usize)], depth: usize, columns: usize, horizon: f64, samples: usize) -> TargetCurve {
    assert!(depth >= 2, "a swap needs two levels");
    let times = uniform(horizon, samples);
    let seq: Vec<CMat> = times
        .iter()
        .map(|&t| {
            let a = 0.5 * std::f64::consts::PI * t / horizon;
            let mut r = CMat::identity(depth, depth);
            r[(0, 0)] = C64::new(a.cos(), 0.0);
            r[(1, 0)] = C64::new(a.sin(), 0.0);
            r[(0, 1)] = C64::new(-a.sin(), 0.0);
            r[(1, 1)] = C64::new(a.cos(), 0.0);
            r.columns(0, columns).into_owned()
        })
        .collect();
    TargetCurve {
        frames: vec![seq; blocks.len()],
        blocks: blocks.to_vec(),
        times,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_ends_on_the_second_level() {
        let c = population_swap(&[(0, 0)], 3, 2, 2.0, 10);
        c.validate(1e-12).unwrap();
        let last = c.frames[0].last().unwrap();
        assert!((last[(1, 0)].norm() - 1.0).abs() < 1e-15);
        assert!((last[(0, 1)].re + 1.0).abs() < 1e-15);
        assert_eq!(c.frames[0][0], CMat::identity(3, 2));
    }
}
