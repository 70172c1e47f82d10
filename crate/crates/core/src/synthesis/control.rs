use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Which variable the piece values represent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlDomain {
    /// `u` in `(0, δ]`, driving `A + uB` in original time.
    Original,
    /// `v = 1/u` in `[1/δ, ∞)`, driving `vA + B` in reparametrized time.
    Reparametrized,
    /// `u ≥ 0` without upper bound, driving `A + uB`.
    Nonnegative,
}

impl ControlDomain {
    pub fn is_u_form(self) -> bool {
        !matches!(self, ControlDomain::Reparametrized)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub duration: f64,
    pub value: f64,
}

/// Piecewise-constant control starting at time 0.
///
/// Pieces are kept in the domain they were built in; [`reparametrize`]
/// only flips the viewing domain, which makes it an exact involution and keeps
/// `‖u‖_L1` and the reparametrized horizon bit-identical.
///
/// [`reparametrize`]: PiecewiseConstantControl::reparametrize
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstantControl {
    delta: f64,
    stored: ControlDomain,
    view: ControlDomain,
    pieces: Vec<Piece>,
}

const EDGE_SLACK: f64 = 1e-12;

fn check_value(domain: ControlDomain, delta: f64, x: f64) -> Result<()> {
    let ok = x.is_finite()
        && match domain {
            ControlDomain::Original => x > 0.0 && x <= delta * (1.0 + EDGE_SLACK),
            ControlDomain::Reparametrized => x * delta >= 1.0 - EDGE_SLACK,
            ControlDomain::Nonnegative => x >= 0.0,
        };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "value {x} outside the {domain:?} domain for delta = {delta}"
        )))
    }
}

impl PiecewiseConstantControl {
    /// `pieces` are `(duration, value)` pairs.
    ///
    /// An empty list is the control of length zero.
    pub fn new(domain: ControlDomain, delta: f64, pieces: &[(f64, f64)]) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("delta must be positive, got {delta}")));
        }
        let mut out = Vec::with_capacity(pieces.len());
        for (k, &(duration, value)) in pieces.iter().enumerate() {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(Error::Domain(format!(
                    "piece {k}: duration {duration} must be positive"
                )));
            }
            check_value(domain, delta, value)
                .map_err(|e| Error::Domain(format!("piece {k}: {e}")))?;
            out.push(Piece { duration, value });
        }
        Ok(PiecewiseConstantControl {
            delta,
            stored: domain,
            view: domain,
            pieces: out,
        })
    }

    pub fn constant(domain: ControlDomain, delta: f64, value: f64, duration: f64) -> Result<Self> {
        Self::new(domain, delta, &[(duration, value)])
    }

    pub fn empty(domain: ControlDomain, delta: f64) -> Result<Self> {
        Self::new(domain, delta, &[])
    }

    pub fn domain(&self) -> ControlDomain {
        self.view
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    fn convert(&self, p: Piece) -> Piece {
        if self.stored == self.view {
            p
        } else {
            Piece {
                duration: p.value * p.duration,
                value: 1.0 / p.value,
            }
        }
    }

    /// Piece `k` as seen in the current domain.
    pub fn piece(&self, k: usize) -> Piece {
        self.convert(self.pieces[k])
    }

    pub fn pieces(&self) -> impl ExactSizeIterator<Item = Piece> + '_ {
        self.pieces.iter().map(|&p| self.convert(p))
    }

    pub fn total_duration(&self) -> f64 {
        self.pieces().map(|p| p.duration).sum()
    }

    /// Interval end points, starting with 0.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = vec![0.0];
        for p in self.pieces() {
            t += p.duration;
            out.push(t);
        }
        out
    }

    /// `∫|u|` in original time, whichever domain is viewed.
    ///
    /// Each piece contributes `u·Δt`, which equals its reparametrized length,
    /// so this and [`reparametrized_horizon`](Self::reparametrized_horizon)
    /// agree exactly.
    pub fn u_l1_norm(&self) -> f64 {
        self.pieces.iter().map(|p| self.u_mass(p)).sum()
    }

    /// Total reparametrized time `T_v`.
    pub fn reparametrized_horizon(&self) -> f64 {
        self.pieces.iter().map(|p| self.u_mass(p)).sum()
    }

    fn u_mass(&self, p: &Piece) -> f64 {
        match self.stored {
            ControlDomain::Reparametrized => p.duration,
            _ => p.value * p.duration,
        }
    }

    /// Value at `t` in the viewed domain; the last value is held past the end.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let mut start = 0.0;
        let mut last = None;
        for p in self.pieces() {
            if t < start + p.duration {
                return Some(p.value);
            }
            start += p.duration;
            last = Some(p.value);
        }
        last
    }

    /// `∫_0^t` of the viewed value, clamped to the horizon.
    pub fn integral_to(&self, t: f64) -> f64 {
        let mut start = 0.0;
        let mut acc = 0.0;
        for p in self.pieces() {
            if t <= start {
                break;
            }
            let d = (t - start).min(p.duration);
            acc += p.value * d;
            start += p.duration;
        }
        acc
    }

    /// `u ↦ v = 1/u` on intervals of length `u·Δt`, or back.
    pub fn reparametrize(&self) -> Result<Self> {
        let view = match self.view {
            ControlDomain::Original => ControlDomain::Reparametrized,
            ControlDomain::Reparametrized => ControlDomain::Original,
            ControlDomain::Nonnegative => {
                if let Some(k) = self.pieces.iter().position(|p| p.value == 0.0) {
                    return Err(Error::Domain(format!("piece {k} has u = 0; 1/u undefined")));
                }
                return Err(Error::Domain(
                    "reparametrization needs an (0, delta]-valued control".into(),
                ));
            }
        };
        Ok(PiecewiseConstantControl {
            view,
            ..self.clone()
        })
    }

    /// Concatenation in the viewed domain.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.view != other.view || self.delta != other.delta {
            return Err(Error::Domain("concatenating controls of different domains".into()));
        }
        let pieces: Vec<(f64, f64)> = self
            .pieces()
            .chain(other.pieces())
            .map(|p| (p.duration, p.value))
            .collect();
        Self::new(self.view, self.delta, &pieces)
    }

    pub fn to_file_format(&self) -> ControlFile {
        ControlFile {
            domain: self.view,
            delta: self.delta,
            pieces: self.pieces().map(|p| [p.duration, p.value]).collect(),
        }
    }

    pub fn from_file_format(f: &ControlFile) -> Result<Self> {
        let pieces: Vec<(f64, f64)> = f.pieces.iter().map(|p| (p[0], p[1])).collect();
        Self::new(f.domain, f.delta, &pieces)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.to_file_format())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_file_format(&io::read_json(path)?)
    }
}

/// On-disk form: `[duration, value]` pairs in the tagged domain.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ControlFile {
    pub domain: ControlDomain,
    pub delta: f64,
    pub pieces: Vec<[f64; 2]>,
}
