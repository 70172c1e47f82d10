//! Dense complex helpers: exponentials and logarithms on the unitary group,
//! commutators, orthonormalization.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::{CMat, C64};

pub const I: C64 = C64::new(0.0, 1.0);

/// Spectral factorization of a skew-adjoint matrix `K = V diag(i w) V†`.
///
/// Exponentials built from it are unitary to rounding, independent of `t`.
#[derive(Clone, Debug)]
pub struct SkewExp {
    vectors: CMat,
    freqs: DVector<f64>,
}

impl SkewExp {
    pub fn new(k: &CMat) -> Self {
        // H = -iK is Hermitian; symmetrize to kill rounding asymmetry.
        let h = k.map(|z| z * -I);
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        SkewExp {
            vectors: eig.eigenvectors,
            freqs: eig.eigenvalues,
        }
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    /// `exp(t K)`.
    pub fn exp(&self, t: f64) -> CMat {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for c in 0..n {
            let ph = C64::from_polar(1.0, t * self.freqs[c]);
            scaled.column_mut(c).scale_mut_c(ph);
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(t K) x` without forming the full exponential.
    pub fn apply(&self, t: f64, x: &CMat) -> CMat {
        let mut coords = self.vectors.adjoint() * x;
        for r in 0..self.dim() {
            let ph = C64::from_polar(1.0, t * self.freqs[r]);
            coords.row_mut(r).scale_mut_c(ph);
        }
        &self.vectors * coords
    }
}

trait ScaleC {
    fn scale_mut_c(&mut self, z: C64);
}

impl<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::StorageMut<C64, R, C>> ScaleC
    for nalgebra::Matrix<C64, R, C, S>
{
    fn scale_mut_c(&mut self, z: C64) {
        for v in self.iter_mut() {
            *v *= z;
        }
    }
}

/// `exp(t K)` for skew-adjoint `K`.
pub fn expm_skew(k: &CMat, t: f64) -> CMat {
    SkewExp::new(k).exp(t)
}

/// Principal logarithm of a unitary matrix, returned skew-adjoint.
///
/// Unitary matrices are normal, so the Schur form is diagonal up to rounding
/// and the logarithm is read off its eigenphases.
pub fn unitary_log(u: &CMat) -> CMat {
    let n = u.nrows();
    let (q, t) = Schur::new(u.clone()).unpack();
    let mut d = CMat::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = C64::new(0.0, t[(k, k)].arg());
    }
    let l = &q * d * q.adjoint();
    skew_part(&l)
}

/// `(X - X†)/2`.
pub fn skew_part(x: &CMat) -> CMat {
    (x - x.adjoint()) * C64::new(0.5, 0.0)
}

/// Skew part with the trace removed, i.e. the projection onto `su(m)`.
pub fn project_su(x: &CMat) -> CMat {
    let mut s = skew_part(x);
    let n = s.nrows();
    if n > 0 {
        let tr = s.trace() / n as f64;
        for k in 0..n {
            s[(k, k)] -= tr;
        }
    }
    s
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Real trace form `Re tr(A† B)`.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Largest singular value.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Frobenius norm of `U†U - Id`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.ncols();
    (u.adjoint() * u - CMat::identity(n, n)).norm()
}

/// Bi-invariant distance `‖log(U⁻¹V)‖_F` on the unitary group.
pub fn group_distance(u: &CMat, v: &CMat) -> f64 {
    unitary_log(&(u.adjoint() * v)).norm()
}

/// Unitary factor `U V†` of the polar decomposition.
pub fn polar_unitary(a: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Modified Gram–Schmidt with one reorthogonalization pass.
///
/// Returns `None` when a column loses more than `1 - rel_tol` of its norm.
pub fn gram_schmidt(cols: &CMat, rel_tol: f64) -> Option<CMat> {
    let mut q = cols.clone();
    for c in 0..q.ncols() {
        let original = q.column(c).norm();
        for _ in 0..2 {
            for p in 0..c {
                let proj = q.column(p).dotc(&q.column(c));
                let qp = q.column(p).clone_owned();
                q.column_mut(c).axpy(-proj, &qp, C64::new(1.0, 0.0));
            }
        }
        let nrm = q.column(c).norm();
        if original == 0.0 || nrm <= rel_tol * original {
            return None;
        }
        q.column_mut(c).unscale_mut(nrm);
    }
    Some(q)
}

/// Condition number of the Gram matrix `F†F`.
pub fn gram_condition(f: &CMat) -> f64 {
    let g = f.adjoint() * f;
    let g = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    let ev = SymmetricEigen::new(g).eigenvalues;
    let max = ev.iter().cloned().fold(f64::MIN, f64::max);
    let min = ev.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn diag_phase(phases: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(
        phases.len(),
        phases.iter().map(|&p| C64::from_polar(1.0, p)),
    ))
}

pub fn real_to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}
