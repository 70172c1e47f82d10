//! Ensemble description and the structural hypotheses on it.
//!
//! Levels, systems and controls are indexed from 0. A system `i` has drift
//! `A_i = i·diag(λ_i)` and couplings `B_{i,j}` whose entry `(k, l)` is the
//! coefficient of level `l` in `dx_k/dt`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::{CMat, C64};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SystemSpec {
    pub spectrum: Vec<f64>,
    #[serde(with = "io::cmat_vec")]
    pub couplings: Vec<CMat>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnsembleSpec {
    pub systems: Vec<SystemSpec>,
    /// Upper end of the admissible control interval `(0, delta]`.
    pub delta: f64,
    /// Set when the stored matrices are a cut of a larger operator, so that
    /// couplings beyond the stored depth are unknown rather than zero.
    #[serde(default)]
    pub truncated: bool,
}

/// Edge threshold for coupling graphs.
pub const COUPLING_TOL: f64 = 1e-12;

impl SystemSpec {
    pub fn depth(&self) -> usize {
        self.spectrum.len()
    }

    /// Drift matrix `i·diag(λ)`.
    pub fn drift(&self) -> CMat {
        let d = self.depth();
        CMat::from_fn(d, d, |r, c| {
            if r == c {
                C64::new(0.0, self.spectrum[r])
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }
}

impl EnsembleSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let spec: EnsembleSpec = io::read_json(path)?;
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// `(system, control)` pairs in storage order.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        self.systems
            .iter()
            .enumerate()
            .flat_map(|(i, s)| (0..s.couplings.len()).map(move |j| (i, j)))
            .collect()
    }

    pub fn block_count(&self) -> usize {
        self.systems.iter().map(|s| s.couplings.len()).sum()
    }

    /// Smallest stored depth over systems.
    pub fn min_depth(&self) -> usize {
        self.systems.iter().map(|s| s.depth()).min().unwrap_or(0)
    }

    pub fn check_structure(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::structural("ensemble has no systems"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::structural(format!(
                "delta must be positive and finite, got {}",
                self.delta
            )));
        }
        for (i, s) in self.systems.iter().enumerate() {
            let d = s.depth();
            if d == 0 {
                return Err(Error::structural(format!("system {i}: empty spectrum")));
            }
            if s.couplings.is_empty() {
                return Err(Error::structural(format!("system {i}: no coupling matrices")));
            }
            if s.spectrum.iter().any(|x| !x.is_finite()) {
                return Err(Error::structural(format!("system {i}: non-finite eigenvalue")));
            }
            for (j, b) in s.couplings.iter().enumerate() {
                if b.nrows() != d || b.ncols() != d {
                    return Err(Error::structural(format!(
                        "system {i}, coupling {j}: expected {d}x{d} to match the spectrum, found {}x{}",
                        b.nrows(),
                        b.ncols()
                    )));
                }
                if b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::structural(format!(
                        "system {i}, coupling {j}: non-finite entry"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    NotSkewAdjoint {
        system: usize,
        coupling: usize,
        k: usize,
        l: usize,
        deviation: f64,
    },
    RepeatedEigenvalue {
        system: usize,
        k: usize,
        l: usize,
        value: f64,
    },
    IntegerRelation {
        coefficients: Vec<i64>,
        residual: f64,
    },
    EqualModuli {
        system: usize,
        pair: (usize, usize),
        j0: usize,
        j: usize,
        moduli: (f64, f64),
    },
    NoChain {
        system: usize,
        coupling: usize,
        depth: usize,
    },
    RankDeficit {
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { witness: Witness },
    Undecided { reason: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Fail { witness } => Some(witness),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ValidationReport {
    pub tol: f64,
    pub skew_adjoint: Verdict,
    pub simple_spectrum: Verdict,
    pub dimensions: Verdict,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.skew_adjoint.passed() && self.simple_spectrum.passed() && self.dimensions.passed()
    }
}

/// Skew-adjointness of every coupling and simplicity of every spectrum.
///
/// The witness is the worst offending entry (resp. the closest pair of
/// eigenvalues).
pub fn validate_spec(spec: &EnsembleSpec, tol: f64) -> Result<ValidationReport> {
    spec.check_structure()?;

    let mut worst: Option<Witness> = None;
    let mut worst_dev = tol;
    for (i, s) in spec.systems.iter().enumerate() {
        for (j, b) in s.couplings.iter().enumerate() {
            let d = s.depth();
            for k in 0..d {
                for l in k..d {
                    let dev = (b[(l, k)] + b[(k, l)].conj()).norm();
                    if dev > worst_dev {
                        worst_dev = dev;
                        worst = Some(Witness::NotSkewAdjoint {
                            system: i,
                            coupling: j,
                            k,
                            l,
                            deviation: dev,
                        });
                    }
                }
            }
        }
    }
    let skew_adjoint = match worst {
        Some(witness) => Verdict::Fail { witness },
        None => Verdict::Pass,
    };

    let mut closest: Option<Witness> = None;
    let mut closest_gap = f64::INFINITY;
    for (i, s) in spec.systems.iter().enumerate() {
        for k in 0..s.depth() {
            for l in k + 1..s.depth() {
                let gap = (s.spectrum[k] - s.spectrum[l]).abs();
                if gap <= tol && gap < closest_gap {
                    closest_gap = gap;
                    closest = Some(Witness::RepeatedEigenvalue {
                        system: i,
                        k,
                        l,
                        value: s.spectrum[k],
                    });
                }
            }
        }
    }
    let simple_spectrum = match closest {
        Some(witness) => Verdict::Fail { witness },
        None => Verdict::Pass,
    };

    Ok(ValidationReport {
        tol,
        skew_adjoint,
        simple_spectrum,
        // shape consistency is enforced by check_structure above
        dimensions: Verdict::Pass,
    })
}

/// Default number of candidate vectors the relation search may visit.
pub const RELATION_BUDGET: u64 = 50_000_000;

/// Concatenated spectra, each system cut to its first `levels` entries.
pub fn concatenated_spectrum(spec: &EnsembleSpec, levels: Option<usize>) -> Vec<f64> {
    spec.systems
        .iter()
        .flat_map(|s| {
            let n = levels.unwrap_or(s.depth()).min(s.depth());
            s.spectrum[..n].iter().cloned()
        })
        .collect()
}

/// Bounded search for an integer relation over the full concatenated spectrum.
pub fn check_nonresonance(spec: &EnsembleSpec, max_coeff: i64, tol: f64) -> Verdict {
    integer_relation(
        &concatenated_spectrum(spec, None),
        max_coeff,
        tol,
        RELATION_BUDGET,
    )
}

/// Searches for `q ≠ 0` with `|q_k| ≤ max_coeff` and `|Σ q_k x_k| ≤ tol`.
///
/// All coordinates but the largest one are enumerated; the remaining one is
/// fixed by rounding. The reported relation is primitive, has the smallest
/// sup-norm among those found, and its first nonzero entry is positive.
pub fn integer_relation(values: &[f64], max_coeff: i64, tol: f64, budget: u64) -> Verdict {
    let n = values.len();
    if n == 0 {
        return Verdict::Pass;
    }
    if let Some(k) = values.iter().position(|x| x.abs() <= tol) {
        let mut q = vec![0; n];
        q[k] = 1;
        return Verdict::Fail {
            witness: Witness::IntegerRelation {
                coefficients: q,
                residual: values[k].abs(),
            },
        };
    }
    if n == 1 {
        return Verdict::Pass;
    }
    let max_coeff = max_coeff.max(1);
    let side = (2 * max_coeff + 1) as f64;
    let count = side.powi(n as i32 - 1) / 2.0;
    if count > budget as f64 {
        return Verdict::Undecided {
            reason: format!(
                "{n} values at max_coeff {max_coeff} need ~{count:.2e} candidates, budget {budget}"
            ),
        };
    }

    let pivot = (0..n)
        .max_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()))
        .unwrap();
    let others: Vec<usize> = (0..n).filter(|&k| k != pivot).collect();
    let mut q = vec![-max_coeff; others.len()];
    let mut best: Option<(i64, Vec<i64>, f64)> = None;
    loop {
        // only half of the sign classes: first nonzero coordinate positive
        let lead = q.iter().find(|&&x| x != 0).copied();
        if lead.is_some_and(|x| x > 0) {
            let s: f64 = others.iter().zip(&q).map(|(&k, &c)| c as f64 * values[k]).sum();
            let qp = (-s / values[pivot]).round();
            if qp.abs() <= max_coeff as f64 {
                let r = (s + qp * values[pivot]).abs();
                if r <= tol {
                    let mut full = vec![0i64; n];
                    for (&k, &c) in others.iter().zip(&q) {
                        full[k] = c;
                    }
                    full[pivot] = qp as i64;
                    let full = normalize_relation(full);
                    let norm = full.iter().map(|x| x.abs()).max().unwrap();
                    if best.as_ref().is_none_or(|b| norm < b.0) {
                        let res: f64 = full
                            .iter()
                            .zip(values)
                            .map(|(&c, &x)| c as f64 * x)
                            .sum::<f64>()
                            .abs();
                        best = Some((norm, full, res));
                    }
                }
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == q.len() {
                return match best {
                    Some((_, coefficients, residual)) => Verdict::Fail {
                        witness: Witness::IntegerRelation {
                            coefficients,
                            residual,
                        },
                    },
                    None => Verdict::Pass,
                };
            }
            if q[pos] < max_coeff {
                q[pos] += 1;
                break;
            }
            q[pos] = -max_coeff;
            pos += 1;
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn normalize_relation(mut q: Vec<i64>) -> Vec<i64> {
    let g = q.iter().fold(0, |g, &x| gcd(g, x));
    if g > 1 {
        q.iter_mut().for_each(|x| *x /= g);
    }
    if q.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0) {
        q.iter_mut().for_each(|x| *x = -*x);
    }
    q
}

/// Spanning tree of the coupling graph of one `(system, control)` block.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConnectednessChain {
    pub system: usize,
    pub control: usize,
    /// Edges `(k, l)` with `k < l`.
    pub pairs: Vec<(usize, usize)>,
}

/// Breadth-first spanning tree over the levels `0..depth`, restricted to
/// edges accepted by `keep`.
fn spanning_chain(
    depth: usize,
    system: usize,
    control: usize,
    mut keep: impl FnMut(usize, usize) -> bool,
) -> Option<ConnectednessChain> {
    let mut seen = vec![false; depth];
    let mut pairs = Vec::new();
    let mut queue = VecDeque::new();
    if depth > 0 {
        seen[0] = true;
        queue.push_back(0);
    }
    while let Some(k) = queue.pop_front() {
        for l in 0..depth {
            if !seen[l] && keep(k.min(l), k.max(l)) {
                seen[l] = true;
                pairs.push((k.min(l), k.max(l)));
                queue.push_back(l);
            }
        }
    }
    seen.iter().all(|&s| s).then_some(ConnectednessChain {
        system,
        control,
        pairs,
    })
}

fn check_block(spec: &EnsembleSpec, i0: usize, j0: usize, depth: usize) -> Result<()> {
    let s = spec
        .systems
        .get(i0)
        .ok_or_else(|| Error::structural(format!("no system {i0}")))?;
    if j0 >= s.couplings.len() {
        return Err(Error::structural(format!("system {i0} has no coupling {j0}")));
    }
    if depth > s.depth() {
        return Err(Error::DepthExhausted {
            what: format!("chain depth {depth} for system {i0}"),
            depth: s.depth(),
            achieved: 0.0,
        });
    }
    Ok(())
}

/// A chain connecting levels `0..depth` through nonzero entries of
/// `B_{i0,j0}`, or `None` when the coupling graph is disconnected.
pub fn find_connectedness_chain(
    spec: &EnsembleSpec,
    i0: usize,
    j0: usize,
    depth: usize,
    tol: f64,
) -> Result<Option<ConnectednessChain>> {
    check_block(spec, i0, j0, depth)?;
    let b = &spec.systems[i0].couplings[j0];
    Ok(spanning_chain(depth, i0, j0, |k, l| b[(k, l)].norm() > tol))
}

/// Every chain pair has a coupling modulus in control `control` that differs
/// by more than `tol` from the same entry in every other control of the system.
pub fn check_modulus_separation(spec: &EnsembleSpec, chain: &ConnectednessChain, tol: f64) -> Verdict {
    let sys = &spec.systems[chain.system];
    let j0 = chain.control;
    for &(k, l) in &chain.pairs {
        let m0 = sys.couplings[j0][(k, l)].norm();
        for (j, b) in sys.couplings.iter().enumerate() {
            if j == j0 {
                continue;
            }
            let mj = b[(k, l)].norm();
            if (m0 - mj).abs() <= tol {
                return Verdict::Fail {
                    witness: Witness::EqualModuli {
                        system: chain.system,
                        pair: (k, l),
                        j0,
                        j,
                        moduli: (m0, mj),
                    },
                };
            }
        }
    }
    Verdict::Pass
}

/// A chain whose every edge also satisfies modulus separation.
///
/// Separation is a per-edge property, so such a chain exists exactly when the
/// graph of separated nonzero edges is connected; no enumeration is needed.
pub fn find_separated_chain(
    spec: &EnsembleSpec,
    i0: usize,
    j0: usize,
    depth: usize,
    edge_tol: f64,
    sep_tol: f64,
) -> Result<Option<ConnectednessChain>> {
    check_block(spec, i0, j0, depth)?;
    let sys = &spec.systems[i0];
    Ok(spanning_chain(depth, i0, j0, |k, l| {
        let m0 = sys.couplings[j0][(k, l)].norm();
        m0 > edge_tol
            && sys
                .couplings
                .iter()
                .enumerate()
                .all(|(j, b)| j == j0 || (m0 - b[(k, l)].norm()).abs() > sep_tol)
    }))
}

/// Thresholds used when checking all hypotheses at a Galerkin order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisOptions {
    pub max_coeff: i64,
    pub relation_tol: f64,
    pub relation_budget: u64,
    pub edge_tol: f64,
    pub separation_tol: f64,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            max_coeff: 100,
            relation_tol: 1e-9,
            relation_budget: RELATION_BUDGET,
            edge_tol: COUPLING_TOL,
            separation_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub order: usize,
    pub nonresonance: Verdict,
    pub chains: Vec<ConnectednessChain>,
    pub separation: Verdict,
    pub control_set: Verdict,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.nonresonance.passed() && self.separation.passed() && self.control_set.passed()
    }
}

/// The three structural hypotheses of the tracking theorem, at order `m`.
pub fn check_hypotheses(
    spec: &EnsembleSpec,
    m: usize,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    spec.check_structure()?;
    let nonresonance = integer_relation(
        &concatenated_spectrum(spec, Some(m)),
        opts.max_coeff,
        opts.relation_tol,
        opts.relation_budget,
    );
    let mut chains = Vec::new();
    let mut separation = Verdict::Pass;
    for (i, j) in spec.blocks() {
        match find_separated_chain(spec, i, j, m, opts.edge_tol, opts.separation_tol)? {
            Some(c) => chains.push(c),
            None if separation.passed() => {
                // report the reason: plain disconnection or a modulus clash
                separation = match find_connectedness_chain(spec, i, j, m, opts.edge_tol)? {
                    Some(plain) => match check_modulus_separation(spec, &plain, opts.separation_tol) {
                        Verdict::Pass => Verdict::Fail {
                            witness: Witness::NoChain {
                                system: i,
                                coupling: j,
                                depth: m,
                            },
                        },
                        fail => fail,
                    },
                    None => Verdict::Fail {
                        witness: Witness::NoChain {
                            system: i,
                            coupling: j,
                            depth: m,
                        },
                    },
                };
            }
            None => {}
        }
    }
    let control_set = Verdict::Pass; // (0, delta] with delta > 0 contains (0, delta)
    Ok(HypothesisReport {
        order: m,
        nonresonance,
        chains,
        separation,
        control_set,
    })
}
