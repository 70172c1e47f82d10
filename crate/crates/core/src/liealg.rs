//! Block-diagonal skew-adjoint algebra: brackets, pair generators,
//! phase-averaged extraction, Vandermonde isolation and Lie closure.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::GalerkinModel;
use crate::linalg::{self, commutator, op_norm, SkewExp};
use crate::model::{Verdict, Witness};
use crate::nnls::nnls;
use crate::{io, CMat, C64};

/// One skew-adjoint `m × m` block per `(system, control)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSkew {
    #[serde(with = "io::cmat_vec")]
    pub blocks: Vec<CMat>,
}

impl BlockSkew {
    pub fn zeros(nblocks: usize, m: usize) -> Self {
        BlockSkew {
            blocks: vec![CMat::zeros(m, m); nblocks],
        }
    }

    pub fn order(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len() && self.order() == other.order()
    }

    /// Real trace form `Σ_b Re tr(X_b† Y_b)`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(x, y)| linalg::inner(x, y))
            .sum()
    }

    /// Norm induced by the trace form.
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Operator norm of the block-diagonal matrix.
    pub fn op_norm(&self) -> f64 {
        self.blocks.iter().map(op_norm).fold(0.0, f64::max)
    }

    pub fn to_real(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.blocks.iter().map(|b| b.len()).sum::<usize>(),
            self.blocks
                .iter()
                .flat_map(|b| b.iter().flat_map(|z| [z.re, z.im])),
        )
    }

    /// Largest deviation from skew-adjointness or zero trace over blocks.
    pub fn algebra_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (b + b.adjoint()).norm().max(b.trace().norm()))
            .fold(0.0, f64::max)
    }

    /// `exp(t X)` blockwise.
    pub fn exp(&self, t: f64) -> Vec<CMat> {
        self.blocks.iter().map(|b| SkewExp::new(b).exp(t)).collect()
    }

    /// `U X U†` blockwise.
    pub fn conjugate(&self, u: &[CMat]) -> Self {
        BlockSkew {
            blocks: self
                .blocks
                .iter()
                .zip(u)
                .map(|(x, u)| u * x * u.adjoint())
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        BlockSkew {
            blocks: self.blocks.iter().map(|b| b * C64::new(s, 0.0)).collect(),
        }
    }

    pub fn axpy(&mut self, s: f64, x: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&x.blocks) {
            *a += b * C64::new(s, 0.0);
        }
    }
}

impl Add for &BlockSkew {
    type Output = BlockSkew;
    fn add(self, o: &BlockSkew) -> BlockSkew {
        BlockSkew {
            blocks: self.blocks.iter().zip(&o.blocks).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &BlockSkew {
    type Output = BlockSkew;
    fn sub(self, o: &BlockSkew) -> BlockSkew {
        BlockSkew {
            blocks: self.blocks.iter().zip(&o.blocks).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &BlockSkew {
    type Output = BlockSkew;
    fn mul(self, s: f64) -> BlockSkew {
        self.scale(s)
    }
}

impl Neg for &BlockSkew {
    type Output = BlockSkew;
    fn neg(self) -> BlockSkew {
        self.scale(-1.0)
    }
}

/// Blockwise commutator `[a, b]`.
pub fn bracket(a: &BlockSkew, b: &BlockSkew) -> Result<BlockSkew> {
    if !a.same_shape(b) {
        return Err(Error::structural(format!(
            "bracket of {} blocks of order {} with {} blocks of order {}",
            a.len(),
            a.order(),
            b.len(),
            b.order()
        )));
    }
    Ok(bracket_unchecked(a, b))
}

fn bracket_unchecked(a: &BlockSkew, b: &BlockSkew) -> BlockSkew {
    BlockSkew {
        blocks: a
            .blocks
            .iter()
            .zip(&b.blocks)
            .map(|(x, y)| commutator(x, y))
            .collect(),
    }
}

/// `ad_c^k x`.
pub fn ad_power(c: &BlockSkew, x: &BlockSkew, k: usize) -> BlockSkew {
    (0..k).fold(x.clone(), |acc, _| bracket_unchecked(c, &acc))
}

/// `z E_{k,l} - conj(z) E_{l,k}` placed in block `block`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix {
    pub block: usize,
    pub k: usize,
    pub l: usize,
    pub coefficient: C64,
}

impl PairMatrix {
    pub fn embed(&self, nblocks: usize, m: usize) -> BlockSkew {
        let mut x = BlockSkew::zeros(nblocks, m);
        let b = &mut x.blocks[self.block];
        b[(self.k, self.l)] += self.coefficient;
        b[(self.l, self.k)] -= self.coefficient.conj();
        x
    }
}

/// Sum over the blocks of `system` of the `(k, l)` pairs of the coupling
/// entries rotated by `e^{iα}`.
pub fn stacked_pair(
    blocks: &[(usize, usize)],
    couplings: &[CMat],
    system: usize,
    k: usize,
    l: usize,
    alpha: f64,
) -> BlockSkew {
    let m = couplings.first().map_or(0, |c| c.nrows());
    let mut x = BlockSkew::zeros(couplings.len(), m);
    let rot = C64::from_polar(1.0, alpha);
    for (b, &(i, _)) in blocks.iter().enumerate() {
        if i == system {
            let z = couplings[b][(k, l)] * rot;
            x.blocks[b][(k, l)] += z;
            x.blocks[b][(l, k)] -= z.conj();
        }
    }
    x
}

/// Leaf generator: the `(k, l)` pairs of one system at quadrature `α = 0`
/// or `α = π/2`, with a sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub system: usize,
    pub k: usize,
    pub l: usize,
    pub quadrature: u8,
    pub sign: i8,
    pub element: BlockSkew,
}

impl Generator {
    pub fn angle(&self) -> f64 {
        self.quadrature as f64 * PI / 2.0 + if self.sign < 0 { PI } else { 0.0 }
    }
}

/// Symmetric list of leaf generators built from the off-diagonal coupling
/// entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSet {
    pub order: usize,
    pub nblocks: usize,
    pub gens: Vec<Generator>,
}

impl GeneratorSet {
    pub fn new(model: &GalerkinModel, tol: f64) -> Self {
        Self::from_couplings(&model.blocks, &model.couplings, model.order, tol)
    }

    /// Pairs whose coupling vanishes (below `tol`) in every block of the
    /// system are skipped.
    pub fn from_couplings(blocks: &[(usize, usize)], couplings: &[CMat], order: usize, tol: f64) -> Self {
        let systems = blocks.iter().map(|b| b.0 + 1).max().unwrap_or(0);
        let mut gens = Vec::new();
        for i in 0..systems {
            for k in 0..order {
                for l in k + 1..order {
                    let live = blocks
                        .iter()
                        .enumerate()
                        .any(|(b, &(s, _))| s == i && couplings[b][(k, l)].norm() > tol);
                    if !live {
                        continue;
                    }
                    for quadrature in 0..2u8 {
                        let e = stacked_pair(blocks, couplings, i, k, l, quadrature as f64 * PI / 2.0);
                        for sign in [1i8, -1] {
                            gens.push(Generator {
                                system: i,
                                k,
                                l,
                                quadrature,
                                sign,
                                element: e.scale(sign as f64),
                            });
                        }
                    }
                }
            }
        }
        GeneratorSet {
            order,
            nblocks: couplings.len(),
            gens,
        }
    }

    /// Positive-sign generators; words index into this list.
    pub fn leaves(&self) -> Vec<&Generator> {
        self.gens.iter().filter(|g| g.sign > 0).collect()
    }

    pub fn leaf_elements(&self) -> Vec<BlockSkew> {
        self.leaves().into_iter().map(|g| g.element.clone()).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.gens.iter().map(|g| g.element.op_norm()).fold(0.0, f64::max)
    }
}

/// Right-nested bracket of leaves: `Bracket(i, w) = [leaf_i, w]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Word {
    Leaf(usize),
    Bracket(usize, Box<Word>),
}

impl Word {
    pub fn depth(&self) -> usize {
        match self {
            Word::Leaf(_) => 0,
            Word::Bracket(_, w) => 1 + w.depth(),
        }
    }

    pub fn eval(&self, leaves: &[BlockSkew]) -> BlockSkew {
        match self {
            Word::Leaf(i) => leaves[*i].clone(),
            Word::Bracket(i, w) => bracket_unchecked(&leaves[*i], &w.eval(leaves)),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Leaf(i) => write!(f, "g{i}"),
            Word::Bracket(i, w) => write!(f, "[g{i},{w}]"),
        }
    }
}

/// Basis of the Lie algebra generated by the leaves, built layer by layer.
#[derive(Clone, Debug)]
pub struct LieClosure {
    pub words: Vec<Word>,
    pub elements: Vec<BlockSkew>,
    /// Orthonormal real coordinates of the same span (trace form).
    pub orthonormal: Vec<DVector<f64>>,
    pub rank_tol: f64,
}

impl LieClosure {
    pub fn dim(&self) -> usize {
        self.words.len()
    }

    /// Orthonormal basis as block matrices.
    pub fn orthonormal_elements(&self, nblocks: usize, m: usize) -> Vec<BlockSkew> {
        self.orthonormal
            .iter()
            .map(|v| {
                let mut x = BlockSkew::zeros(nblocks, m);
                let mut it = v.iter();
                for b in x.blocks.iter_mut() {
                    for z in b.iter_mut() {
                        let re = *it.next().unwrap();
                        let im = *it.next().unwrap();
                        *z = C64::new(re, im);
                    }
                }
                x
            })
            .collect()
    }
}

pub const RANK_TOL: f64 = 1e-9;

/// Iterates `S⁽ⁱ⁺¹⁾ = span S + [S, S⁽ⁱ⁾]` until no new direction appears.
///
/// Within a layer, candidates are admitted greedily by largest component
/// orthogonal to the current span; components below `rank_tol` times the
/// largest norm seen count as zero.
pub fn lie_closure(gens: &GeneratorSet, cap: usize, rank_tol: f64) -> Result<LieClosure> {
    let leaves = gens.leaf_elements();
    if leaves.is_empty() {
        return Err(Error::structural("empty generator set"));
    }
    let scale = leaves.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mut closure = LieClosure {
        words: Vec::new(),
        elements: Vec::new(),
        orthonormal: Vec::new(),
        rank_tol,
    };
    let mut layer: Vec<(Word, BlockSkew)> = leaves
        .iter()
        .enumerate()
        .map(|(i, x)| (Word::Leaf(i), x.clone()))
        .collect();
    let mut largest = scale;
    loop {
        let added = admit_layer(&mut closure, layer, rank_tol, &mut largest);
        if closure.dim() > cap {
            return Err(Error::ClosureCap { cap });
        }
        if added.is_empty() {
            break;
        }
        layer = Vec::new();
        for (i, leaf) in leaves.iter().enumerate() {
            for &a in &added {
                let w = Word::Bracket(i, Box::new(closure.words[a].clone()));
                let x = bracket_unchecked(leaf, &closure.elements[a]);
                layer.push((w, x));
            }
        }
    }
    Ok(closure)
}

fn admit_layer(
    closure: &mut LieClosure,
    layer: Vec<(Word, BlockSkew)>,
    rank_tol: f64,
    largest: &mut f64,
) -> Vec<usize> {
    let mut cands: Vec<(Word, BlockSkew, DVector<f64>, f64)> = layer
        .into_iter()
        .map(|(w, x)| {
            let v = x.to_real();
            let n = v.norm();
            (w, x, v, n)
        })
        .collect();
    for c in &cands {
        *largest = largest.max(c.3);
    }
    // numerically vanishing brackets carry no direction
    let floor = rank_tol * *largest;
    cands.retain(|c| c.3 > floor);
    for c in cands.iter_mut() {
        for q in &closure.orthonormal {
            let p = q.dot(&c.2);
            c.2.axpy(-p, q, 1.0);
        }
    }
    let mut added = Vec::new();
    loop {
        let best = cands
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.2.norm() / c.3, c.2.norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, rel, abs)) = best else { break };
        if rel <= rank_tol || abs <= rank_tol * *largest {
            break;
        }
        let (w, x, mut v, _) = cands.swap_remove(i);
        // second pass against the current span for stability
        for q in &closure.orthonormal {
            let p = q.dot(&v);
            v.axpy(-p, q, 1.0);
        }
        let q = &v / v.norm();
        for c in cands.iter_mut() {
            let p = q.dot(&c.2);
            c.2.axpy(-p, &q, 1.0);
        }
        closure.orthonormal.push(q);
        closure.words.push(w);
        closure.elements.push(x);
        added.push(closure.words.len() - 1);
    }
    added
}

/// `dim p = (m² - 1)·Σ n_i`.
pub fn full_rank_dimension(m: usize, total_blocks: usize) -> usize {
    (m * m - 1) * total_blocks
}

pub fn verify_full_rank(m: usize, total_blocks: usize, closure_dim: usize) -> Verdict {
    let expected = full_rank_dimension(m, total_blocks);
    if closure_dim == expected {
        Verdict::Pass
    } else {
        Verdict::Fail {
            witness: Witness::RankDeficit {
                expected,
                found: closure_dim,
            },
        }
    }
}

/// Sampling parameters for phase averaging.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AveragingBudget {
    /// Lattice points available to the weight fit.
    pub samples: usize,
    /// Admitted operator-norm residual.
    pub tol: f64,
    /// Weight of the sum-to-one row in the fit.
    pub penalty: f64,
}

impl Default for AveragingBudget {
    fn default() -> Self {
        AveragingBudget {
            samples: 256,
            tol: 1e-3,
            penalty: 1e3,
        }
    }
}

/// `(k, l)` pair of one system, `k < l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairTarget {
    pub system: usize,
    pub k: usize,
    pub l: usize,
}

/// Convex weights on the lattice `θ_n = θ_0 + n·2π/|ω|`, `ω = λ_k - λ_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub frequency: f64,
    pub spacing: f64,
    /// `(n, w_n)` with `w_n > 0`, `Σ w_n = 1`.
    pub support: Vec<(usize, f64)>,
    /// Residual of the frequency cancellation, relative to the coupling scale.
    pub nulling_residual: f64,
}

impl PhaseSchedule {
    /// Lattice origin in `[0, spacing)` putting the target entry at angle `alpha`.
    pub fn origin(&self, alpha: f64) -> f64 {
        // e^{-iθω} = e^{iα}
        (-alpha / self.frequency).rem_euclid(self.spacing)
    }

    /// Concrete phases for rotation angle `alpha`.
    pub fn phases(&self, alpha: f64) -> Vec<(f64, f64)> {
        let o = self.origin(alpha);
        self.support
            .iter()
            .map(|&(n, w)| (o + n as f64 * self.spacing, w))
            .collect()
    }
}

/// Frequencies `λ_k - λ_l` of all live pairs, with their largest coupling modulus.
fn live_frequencies(model: &GalerkinModel, tol: f64) -> Vec<(PairTarget, f64, f64)> {
    let mut out = Vec::new();
    for i in 0..model.system_count() {
        let lam = &model.spectra[i];
        for k in 0..model.order {
            for l in k + 1..model.order {
                let s = model
                    .blocks_of(i)
                    .iter()
                    .map(|&b| model.couplings[b][(k, l)].norm())
                    .fold(0.0, f64::max);
                if s > tol {
                    out.push((PairTarget { system: i, k, l }, lam[k] - lam[l], s));
                }
            }
        }
    }
    out
}

/// Fits lattice weights that cancel every live frequency except the target's.
pub fn averaging_schedule(model: &GalerkinModel, target: PairTarget, budget: &AveragingBudget) -> Result<PhaseSchedule> {
    let lam = &model.spectra[target.system];
    let omega = lam[target.k] - lam[target.l];
    if omega.abs() < 1e-14 {
        return Err(Error::IllConditioned {
            what: "phase averaging".into(),
            detail: format!("pair {:?} has zero frequency", target),
        });
    }
    let spacing = 2.0 * PI / omega.abs();
    let others: Vec<(f64, f64)> = live_frequencies(model, crate::model::COUPLING_TOL)
        .into_iter()
        .filter(|(p, _, _)| *p != target)
        .map(|(_, w, s)| (w, s))
        .collect();
    let n = budget.samples.max(1);
    let rows = 2 * others.len() + 1;
    let mut a = DMatrix::zeros(rows, n);
    let mut rhs = DVector::zeros(rows);
    for c in 0..n {
        let theta = c as f64 * spacing;
        for (q, &(w, s)) in others.iter().enumerate() {
            a[(2 * q, c)] = s * (theta * w).cos();
            a[(2 * q + 1, c)] = s * (theta * w).sin();
        }
        a[(rows - 1, c)] = budget.penalty;
    }
    rhs[rows - 1] = budget.penalty;
    let (w, _) = nnls(&a, &rhs);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Residual {
            stage: "phase averaging",
            achieved: f64::INFINITY,
            tol: budget.tol,
        });
    }
    let support: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(n, &x)| (n, x / total))
        .collect();
    let coupling = model
        .blocks_of(target.system)
        .iter()
        .map(|&b| model.couplings[b][(target.k, target.l)].norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut nulling = 0.0f64;
    for &(wq, s) in &others {
        let z: C64 = support
            .iter()
            .map(|&(n, x)| C64::from_polar(x, -(n as f64) * spacing * wq))
            .sum();
        nulling = nulling.max(s * z.norm() / coupling);
    }
    Ok(PhaseSchedule {
        frequency: omega,
        spacing,
        support,
        nulling_residual: nulling,
    })
}

/// Off-diagonal part of the phase-system generator at phase `theta`.
fn off_diagonal_velocity(model: &GalerkinModel, theta: f64) -> BlockSkew {
    let mut blocks = crate::galerkin::phase_velocity_at(model, theta);
    for b in blocks.iter_mut() {
        for k in 0..model.order {
            b[(k, k)] = C64::new(0.0, 0.0);
        }
    }
    BlockSkew { blocks }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extraction {
    pub element: BlockSkew,
    pub target: BlockSkew,
    pub residual: f64,
    pub schedule: PhaseSchedule,
    /// `(θ_r, w_r)` actually used.
    pub phases: Vec<(f64, f64)>,
}

/// Convex combination of phase-system generators approximating the stacked
/// pair of `target` rotated by `alpha`.
///
/// The invariant diagonal of the couplings is removed first; with `order == 1`
/// nothing else remains and the diagonal itself is returned exactly.
pub fn phase_average_extract(
    model: &GalerkinModel,
    v_floor: f64,
    target: PairTarget,
    alpha: f64,
    budget: &AveragingBudget,
) -> Result<Extraction> {
    if !(v_floor > 0.0) {
        return Err(Error::Domain(format!("v_floor must be positive, got {v_floor}")));
    }
    if model.order == 1 {
        let element = BlockSkew {
            blocks: model.couplings.clone(),
        };
        return Ok(Extraction {
            target: element.clone(),
            element,
            residual: 0.0,
            schedule: PhaseSchedule {
                frequency: 0.0,
                spacing: 0.0,
                support: vec![(0, 1.0)],
                nulling_residual: 0.0,
            },
            phases: vec![(0.0, 1.0)],
        });
    }
    let schedule = averaging_schedule(model, target, budget)?;
    let phases = schedule.phases(alpha);
    let mut element = BlockSkew::zeros(model.block_count(), model.order);
    for &(theta, w) in &phases {
        element.axpy(w, &off_diagonal_velocity(model, theta));
    }
    let t = stacked_pair(&model.blocks, &model.couplings, target.system, target.k, target.l, alpha);
    let residual = (&element - &t).op_norm();
    if residual > budget.tol {
        return Err(Error::Residual {
            stage: "phase averaging",
            achieved: residual,
            tol: budget.tol,
        });
    }
    Ok(Extraction {
        element,
        target: t,
        residual,
        schedule,
        phases,
    })
}

/// Both quadratures of one pair, stacked over the blocks of its system.
#[derive(Clone, Debug)]
pub struct PairStack {
    pub system: usize,
    pub k: usize,
    pub l: usize,
    /// Block indices of the system, in order.
    pub members: Vec<usize>,
    /// `|b_j(k,l)|²` per member.
    pub nodes: Vec<f64>,
    pub a: BlockSkew,
    pub b: BlockSkew,
}

impl PairStack {
    pub fn new(model: &GalerkinModel, system: usize, k: usize, l: usize) -> Self {
        let members = model.blocks_of(system);
        PairStack {
            system,
            k,
            l,
            nodes: members.iter().map(|&b| model.couplings[b][(k, l)].norm_sqr()).collect(),
            members,
            a: stacked_pair(&model.blocks, &model.couplings, system, k, l, 0.0),
            b: stacked_pair(&model.blocks, &model.couplings, system, k, l, PI / 2.0),
        }
    }

    /// Pair of member `j` alone.
    pub fn single(&self, j: usize) -> BlockSkew {
        let mut x = BlockSkew::zeros(self.a.len(), self.a.order());
        x.blocks[self.members[j]] = self.a.blocks[self.members[j]].clone();
        x
    }

    /// `Σ_j s_j^r pair_j`, built from brackets of `a` and `b` alone:
    /// `ad^r_{[a,b]} b = (-1)^{(r+1)/2} 4^r Σ s^r pair` for odd `r`,
    /// `ad^r_{[a,b]} a = (-1)^{r/2} 4^r Σ s^r pair` for even `r`.
    pub fn moment(&self, r: usize) -> BlockSkew {
        let c = bracket_unchecked(&self.a, &self.b);
        let (x, sign) = if r % 2 == 1 {
            (ad_power(&c, &self.b, r), if (r + 1) / 2 % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (ad_power(&c, &self.a, r), if (r / 2) % 2 == 1 { -1.0 } else { 1.0 })
        };
        x.scale(sign / 4f64.powi(r as i32))
    }
}

#[derive(Clone, Debug)]
pub struct Isolation {
    pub element: BlockSkew,
    /// Weights of the moments `Σ_j s_j^r pair_j`, `r = 0..n`.
    pub coefficients: Vec<f64>,
    pub residual: f64,
    pub condition: f64,
}

/// Single-member pair of `stack.members[j0]` as a combination of bracket
/// moments of the stacked quadratures.
pub fn vandermonde_isolate(stack: &PairStack, j0: usize, max_condition: f64) -> Result<Isolation> {
    let n = stack.members.len();
    if j0 >= n {
        return Err(Error::structural(format!("member {j0} of {n}")));
    }
    if n == 1 {
        return Ok(Isolation {
            element: stack.a.clone(),
            coefficients: vec![1.0],
            residual: 0.0,
            condition: 1.0,
        });
    }
    let v = DMatrix::from_fn(n, n, |j, r| stack.nodes[j].powi(r as i32));
    let sv = v.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= max_condition) {
        let mut worst = (0, 1, f64::INFINITY);
        for p in 0..n {
            for q in p + 1..n {
                let gap = (stack.nodes[p].sqrt() - stack.nodes[q].sqrt()).abs();
                if gap < worst.2 {
                    worst = (p, q, gap);
                }
            }
        }
        return Err(Error::IllConditioned {
            what: "Vandermonde isolation".into(),
            detail: format!(
                "condition {condition:.3e}; moduli {} and {} (members {} and {})",
                stack.nodes[worst.0].sqrt(),
                stack.nodes[worst.1].sqrt(),
                worst.0,
                worst.1
            ),
        });
    }
    let mut e = DVector::zeros(n);
    e[j0] = 1.0;
    let c = v
        .lu()
        .solve(&e)
        .ok_or_else(|| Error::IllConditioned {
            what: "Vandermonde isolation".into(),
            detail: "singular node matrix".into(),
        })?;
    let mut element = BlockSkew::zeros(stack.a.len(), stack.a.order());
    for (r, &cr) in c.iter().enumerate() {
        element.axpy(cr, &stack.moment(r));
    }
    let residual = (&element - &stack.single(j0)).op_norm();
    Ok(Isolation {
        element,
        coefficients: c.iter().cloned().collect(),
        residual,
        condition,
    })
}

/// Cache of averaging schedules per pair, shared by synthesis runs.
#[derive(Clone, Debug, Default)]
pub struct ScheduleTable {
    pub schedules: HashMap<PairTarget, PhaseSchedule>,
}

impl ScheduleTable {
    pub fn build(model: &GalerkinModel, budget: &AveragingBudget) -> Result<Self> {
        let mut schedules = HashMap::new();
        for (p, _, _) in live_frequencies(model, crate::model::COUPLING_TOL) {
            let s = averaging_schedule(model, p, budget)?;
            if s.nulling_residual > budget.tol {
                return Err(Error::Residual {
                    stage: "phase averaging",
                    achieved: s.nulling_residual,
                    tol: budget.tol,
                });
            }
            schedules.insert(p, s);
        }
        Ok(ScheduleTable { schedules })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::truncate_operators;
    use crate::model::{EnsembleSpec, SystemSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_element(nb: usize, m: usize, rng: &mut impl Rng) -> BlockSkew {
        BlockSkew {
            blocks: (0..nb)
                .map(|_| {
                    linalg::project_su(&CMat::from_fn(m, m, |_, _| {
                        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    }))
                })
                .collect(),
        }
    }

    fn chain_model(spectrum: Vec<f64>, pairs: &[(usize, usize, C64)], controls: &[f64]) -> GalerkinModel {
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
        let spec = EnsembleSpec {
            systems: vec![SystemSpec { spectrum, couplings }],
            delta: 1.0,
            truncated: false,
        };
        truncate_operators(&spec, m).unwrap()
    }

    #[test]
    fn bracket_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_element(2, 3, &mut rng);
        let b = random_element(2, 3, &mut rng);
        let d = random_element(2, 3, &mut rng);
        assert!(bracket(&a, &a).unwrap().norm() < 1e-15);
        let j = &(&bracket(&a, &bracket(&b, &d).unwrap()).unwrap()
            + &bracket(&b, &bracket(&d, &a).unwrap()).unwrap())
            + &bracket(&d, &bracket(&a, &b).unwrap()).unwrap();
        assert!(j.norm() < 1e-12);
        assert!(bracket(&a, &b).unwrap().algebra_defect() < 1e-14);
        assert!(bracket(&a, &BlockSkew::zeros(1, 3)).is_err());
    }

    #[test]
    fn adjacent_pairs_bracket_to_corner() {
        let p12 = PairMatrix { block: 0, k: 0, l: 1, coefficient: c(0.7, 0.2) }.embed(1, 3);
        let p23 = PairMatrix { block: 0, k: 1, l: 2, coefficient: c(-0.3, 0.9) }.embed(1, 3);
        let x = bracket(&p12, &p23).unwrap();
        let direct = commutator(&p12.blocks[0], &p23.blocks[0]);
        assert!((&x.blocks[0] - &direct).norm() < 1e-15);
        for r in 0..3 {
            for k in 0..3 {
                let allowed = r == k || (r, k) == (0, 2) || (r, k) == (2, 0);
                if !allowed {
                    assert_eq!(x.blocks[0][(r, k)], c(0.0, 0.0));
                }
            }
        }
        assert!(x.blocks[0][(0, 2)].norm() > 0.1);
    }

    #[test]
    fn closure_dimensions() {
        let r2 = 2f64.sqrt();
        let r3 = 3f64.sqrt();
        let m3 = chain_model(vec![1.0, r2, r3], &[(0, 1, c(1.0, 0.0)), (1, 2, c(0.5, 0.3))], &[1.0]);
        let g = GeneratorSet::new(&m3, 1e-12);
        assert_eq!(lie_closure(&g, 100, RANK_TOL).unwrap().dim(), 8);

        let ens = chain_model(vec![1.0, r2], &[(0, 1, c(1.0, 0.0))], &[1.0, 0.5]);
        let g = GeneratorSet::new(&ens, 1e-12);
        assert_eq!(lie_closure(&g, 100, RANK_TOL).unwrap().dim(), 6);

        let same = chain_model(vec![1.0, r2], &[(0, 1, c(1.0, 0.0))], &[1.0, -1.0]);
        let g = GeneratorSet::new(&same, 1e-12);
        assert_eq!(lie_closure(&g, 100, RANK_TOL).unwrap().dim(), 3);

        assert!(matches!(
            lie_closure(&GeneratorSet::new(&m3, 1e-12), 4, RANK_TOL),
            Err(Error::ClosureCap { cap: 4 })
        ));
    }

    #[test]
    fn single_generator_spans_line() {
        let one = PairMatrix { block: 0, k: 0, l: 1, coefficient: c(2.5, 0.0) }.embed(1, 2);
        let gens = GeneratorSet {
            order: 2,
            nblocks: 1,
            gens: vec![
                Generator { system: 0, k: 0, l: 1, quadrature: 0, sign: 1, element: one.clone() },
                Generator { system: 0, k: 0, l: 1, quadrature: 0, sign: -1, element: -&one },
            ],
        };
        assert_eq!(lie_closure(&gens, 10, RANK_TOL).unwrap().dim(), 1);
    }

    #[test]
    fn closure_dimension_conjugation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ens = chain_model(vec![1.0, 2f64.sqrt(), 3f64.sqrt()], &[(0, 1, c(1.0, 0.0)), (1, 2, c(0.4, 0.0))], &[1.0, 0.7]);
        let g = GeneratorSet::new(&ens, 1e-12);
        let u = random_element(2, 3, &mut rng).exp(1.0);
        let conj = GeneratorSet {
            gens: g
                .gens
                .iter()
                .map(|x| Generator { element: x.element.conjugate(&u), ..x.clone() })
                .collect(),
            ..g.clone()
        };
        let d0 = lie_closure(&g, 100, RANK_TOL).unwrap().dim();
        assert_eq!(d0, 16);
        assert_eq!(lie_closure(&conj, 100, RANK_TOL).unwrap().dim(), d0);
    }

    #[test]
    fn rank_verdicts() {
        assert!(verify_full_rank(2, 2, 6).passed());
        assert!(!verify_full_rank(3, 1, 7).passed());
        assert!(verify_full_rank(2, 3, 9).passed());
    }

    #[test]
    fn double_bracket_coefficient() {
        // [[a,b],b] = -4 Σ |b_j|² pair_j
        let ens = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(0.6, 0.8))], &[1.0, 0.5]);
        let st = PairStack::new(&ens, 0, 0, 1);
        let ab = bracket(&st.a, &st.b).unwrap();
        let lhs = bracket(&ab, &st.b).unwrap();
        let mut rhs = BlockSkew::zeros(2, 2);
        for j in 0..2 {
            rhs.axpy(-4.0 * st.nodes[j], &st.single(j));
        }
        assert!((&lhs - &rhs).norm() < 1e-14);
    }

    #[test]
    fn higher_ad_powers_alternate_quadrature() {
        // ad^2_{[a,b]} b lies along b, not along a, with factor -16 s²
        let ens = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(1.0, 0.0))], &[1.0]);
        let st = PairStack::new(&ens, 0, 0, 1);
        let ab = bracket(&st.a, &st.b).unwrap();
        let x2 = ad_power(&ab, &st.b, 2);
        assert!((&x2 - &st.b.scale(-16.0)).norm() < 1e-14);
        let literal = st.a.scale(8.0);
        assert!((&x2 - &literal).norm() > 1.0);
        for r in 0..6 {
            let mut expect = BlockSkew::zeros(1, 2);
            expect.axpy(st.nodes[0].powi(r as i32), &st.single(0));
            assert!((&st.moment(r) - &expect).norm() < 1e-12, "r = {r}");
        }
    }

    #[test]
    fn isolation() {
        let ens = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(1.0, 0.0))], &[1.0, 0.5]);
        let st = PairStack::new(&ens, 0, 0, 1);
        for j0 in 0..2 {
            assert!(vandermonde_isolate(&st, j0, 1e10).unwrap().residual < 1e-10);
        }
        let three = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(0.6, -0.8))], &[1.0, 0.9, 0.8]);
        let st = PairStack::new(&three, 0, 0, 1);
        for j0 in 0..3 {
            assert!(vandermonde_isolate(&st, j0, 1e10).unwrap().residual < 1e-8);
        }
        let single = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(1.0, 0.0))], &[0.7]);
        let st = PairStack::new(&single, 0, 0, 1);
        assert_eq!(vandermonde_isolate(&st, 0, 1e10).unwrap().element, st.a);
        let close = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(1.0, 0.0))], &[1.0, 1.0 + 1e-9]);
        let st = PairStack::new(&close, 0, 0, 1);
        assert!(matches!(vandermonde_isolate(&st, 0, 1e6), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn averaging_two_level() {
        let m = chain_model(vec![1.0, 2f64.sqrt()], &[(0, 1, c(0.8, 0.1))], &[1.0]);
        let budget = AveragingBudget { samples: 200, ..Default::default() };
        let t = PairTarget { system: 0, k: 0, l: 1 };
        let e0 = phase_average_extract(&m, 1.0, t, 0.0, &budget).unwrap();
        assert!(e0.residual < 1e-3);
        let e1 = phase_average_extract(&m, 1.0, t, PI, &budget).unwrap();
        assert!((&e0.element + &e1.element).op_norm() < 1e-10);
        let w: f64 = e0.phases.iter().map(|p| p.1).sum();
        assert!((w - 1.0).abs() < 1e-12 && e0.phases.iter().all(|p| p.1 >= 0.0));
    }

    #[test]
    fn averaging_single_level() {
        let spec = EnsembleSpec {
            systems: vec![SystemSpec {
                spectrum: vec![1.0, 2.0],
                couplings: vec![CMat::from_fn(2, 2, |r, k| if r == k { c(0.0, 0.3) } else { c(0.0, 0.0) })],
            }],
            delta: 1.0,
            truncated: false,
        };
        let m = truncate_operators(&spec, 1).unwrap();
        let e = phase_average_extract(&m, 1.0, PairTarget { system: 0, k: 0, l: 0 }, 0.0, &Default::default()).unwrap();
        assert_eq!(e.element.blocks[0][(0, 0)], c(0.0, 0.3));
        assert_eq!(e.residual, 0.0);
    }

    #[test]
    fn averaging_three_level_all_pairs() {
        let m = chain_model(
            vec![1.0, 2f64.sqrt(), 3f64.sqrt()],
            &[(0, 1, c(1.0, 0.0)), (1, 2, c(0.7, 0.2)), (0, 2, c(0.3, -0.4))],
            &[1.0],
        );
        for (k, l) in [(0, 1), (0, 2), (1, 2)] {
            for alpha in [0.0, 0.4, PI / 2.0] {
                let e = phase_average_extract(&m, 1.0, PairTarget { system: 0, k, l }, alpha, &Default::default())
                    .unwrap();
                assert!(e.residual < 1e-9, "({k},{l}) α={alpha}: {}", e.residual);
            }
        }
    }

    #[test]
    fn resonant_spectrum_fails_extraction() {
        // λ1 - λ0 = λ2 - λ1: the two chain frequencies coincide
        let m = chain_model(vec![1.0, 2.0, 3.0], &[(0, 1, c(1.0, 0.0)), (1, 2, c(1.0, 0.0))], &[1.0]);
        let r = phase_average_extract(&m, 1.0, PairTarget { system: 0, k: 0, l: 1 }, 0.0, &Default::default());
        assert!(matches!(r, Err(Error::Residual { .. })));
    }
}
