//! Small dense Hermitian eigendecomposition by cyclic complex Jacobi rotations.
//!
//! Sizes here are at most a few tens, so the O(M³)-per-sweep cost is
//! irrelevant and Jacobi buys accurate eigenvectors and bitwise determinism.

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{norm_sqr, Real};

pub const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
///
/// Column `k` of `eigenvectors` pairs with `eigenvalues[k]`. Each column has
/// its largest-magnitude entry (first such index on ties) real and
/// nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis<T> {
    pub eigenvalues: Array1<T>,
    pub eigenvectors: Array2<Complex<T>>,
}

impl<T: Real> EigenBasis<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn frobenius_norm<T: Real>(a: &Array2<Complex<T>>) -> T {
    a.iter()
        .map(|&z| norm_sqr(z))
        .fold(T::zero(), |s, x| s + x)
        .sqrt()
}

fn max_abs<T: Real>(a: &Array2<Complex<T>>) -> T {
    a.iter().map(|z| z.norm()).fold(T::zero(), T::max)
}

fn off_diagonal_norm<T: Real>(a: &Array2<Complex<T>>) -> T {
    let n = a.nrows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += norm_sqr(a[[i, j]]);
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a Hermitian matrix.
///
/// The input is checked against `‖A − Aᴴ‖_max ≤ 1e-8·‖A‖_max` and then
/// symmetrized. Sweeps stop once the off-diagonal Frobenius norm drops to
/// [`Real::convergence_tol`] times `‖A‖_F`.
pub fn eig_hermitian<T: Real>(a: &Array2<Complex<T>>) -> Result<EigenBasis<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {:?}, not square",
            a.dim()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let scale = max_abs(a);
    let mut asym = T::zero();
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    if asym > T::lit(1e-8) * scale {
        return Err(Error::NotHermitian {
            asym: asym.to_f64_lossy(),
            scale: scale.to_f64_lossy(),
        });
    }

    let half = T::lit(0.5);
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| (a[[i, j]] + a[[j, i]].conj()) * half);
    for i in 0..n {
        m[[i, i]].im = T::zero();
    }
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex::new(T::one(), T::zero())
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });

    let threshold = T::convergence_tol() * frobenius_norm(&m);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&m) > threshold {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].re.partial_cmp(&m[[j, j]].re).unwrap());
    let eigenvalues = order.iter().map(|&i| m[[i, i]].re).collect();
    let mut eigenvectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    for mut col in eigenvectors.columns_mut() {
        fix_phase(col.view_mut());
    }
    Ok(EigenBasis {
        eigenvalues,
        eigenvectors,
    })
}

/// One Jacobi rotation zeroing `m[p, q]`: `m ← Uᴴ m U`, `v ← v U`.
fn rotate<T: Real>(m: &mut Array2<Complex<T>>, v: &mut Array2<Complex<T>>, p: usize, q: usize) {
    let apq = m[[p, q]];
    let mag = apq.norm();
    if mag == T::zero() {
        return;
    }
    // Unit phase e^{-iφ} that makes the (p, q) entry real and positive.
    let phase = apq.conj() / mag;
    let app = m[[p, p]].re;
    let aqq = m[[q, q]].re;
    let theta = (aqq - app) / (mag + mag);
    let t = {
        let denom = theta.abs() + (theta * theta + T::one()).sqrt();
        let t = T::one() / denom;
        if theta < T::zero() {
            -t
        } else {
            t
        }
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;
    let n = m.nrows();

    // Columns: (mU)_{kp} = c m_kp − s e^{-iφ} m_kq, (mU)_{kq} = s m_kp + c e^{-iφ} m_kq.
    for k in 0..n {
        let mkp = m[[k, p]];
        let mkq = m[[k, q]] * phase;
        m[[k, p]] = mkp * c - mkq * s;
        m[[k, q]] = mkp * s + mkq * c;
    }
    // Rows: (Uᴴ m)_{pk} = c m_pk − s e^{iφ} m_qk, (Uᴴ m)_{qk} = s m_pk + c e^{iφ} m_qk.
    let phase_c = phase.conj();
    for k in 0..n {
        let mpk = m[[p, k]];
        let mqk = m[[q, k]] * phase_c;
        m[[p, k]] = mpk * c - mqk * s;
        m[[q, k]] = mpk * s + mqk * c;
    }
    m[[p, q]] = Complex::new(T::zero(), T::zero());
    m[[q, p]] = Complex::new(T::zero(), T::zero());
    m[[p, p]].im = T::zero();
    m[[q, q]].im = T::zero();

    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]] * phase;
        v[[k, p]] = vkp * c - vkq * s;
        v[[k, q]] = vkp * s + vkq * c;
    }
}

fn fix_phase<T: Real>(mut col: ndarray::ArrayViewMut1<Complex<T>>) {
    let mut best = 0;
    let mut best_mag = T::neg_infinity();
    for (i, z) in col.iter().enumerate() {
        let mag = norm_sqr(*z);
        if mag > best_mag {
            best_mag = mag;
            best = i;
        }
    }
    let pivot = col[best];
    let mag = pivot.norm();
    if mag > T::zero() {
        let rot = pivot.conj() / mag;
        col.mapv_inplace(|z| z * rot);
        col[best] = Complex::new(col[best].re, T::zero());
    }
}

/// Eigenvectors of the `M − 1` smallest eigenvalues (one source assumed).
pub fn noise_subspace<T: Real>(basis: &EigenBasis<T>) -> Result<Array2<Complex<T>>> {
    let m = basis.dim();
    if m < 2 {
        return Err(Error::invalid(
            "noise subspace needs at least two microphones",
        ));
    }
    Ok(basis
        .eigenvectors
        .slice(ndarray::s![.., ..m - 1])
        .to_owned())
}

/// Unit eigenvector of the largest eigenvalue.
///
/// On ties the last column in ascending order wins, which the stable sort
/// makes deterministic.
pub fn principal_eigvec<T: Real>(basis: &EigenBasis<T>) -> Array1<Complex<T>> {
    let m = basis.dim();
    basis.eigenvectors.column(m - 1).to_owned()
}

/// Moore–Penrose pseudoinverse of a column vector: `vᴴ / ‖v‖²`.
pub fn vec_pseudoinverse<T: Real>(v: &Array1<Complex<T>>) -> Result<Array1<Complex<T>>> {
    let n2 = v.iter().map(|&z| norm_sqr(z)).fold(T::zero(), |a, b| a + b);
    if !(n2 > T::zero()) {
        return Err(Error::invalid("pseudoinverse of a zero vector"));
    }
    Ok(v.mapv(|z| z.conj() / n2))
}
