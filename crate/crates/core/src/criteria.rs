//! Weighted spatial covariance matrices and the four wideband DoA criteria.
//!
//! * MUSIC: `Σ_f 1 / (vᴴ N Nᴴ v)` with `N` the noise subspace of the WSCM.
//! * Principal vector: `Σ_f |vᴴ p|²` with `p` the principal eigenvector.
//! * SRP: `Σ_f vᴴ Φ v`.
//! * Normalized T-F weighted: `Σ_f vᴴ R v`, where
//!   `R(f) = Σ_t ỹỹᴴ / ‖y‖²` and `ỹ = w ⊙ y`. Its grid maximizer is the
//!   grid minimizer of the snapshot-matching residual [`eq5_residual`].

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::array::{AngleGrid, SteeringField};
use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, frobenius_norm, noise_subspace, principal_eigvec};
use crate::mask::{check_companion, MaskTensor};
use crate::scalar::{norm_sqr, Real};
use crate::signal::SnapshotTensor;

/// Guard below which `‖y(t, f)‖²` is treated as silence.
pub const NORM_GUARD: f64 = 1e-30;
/// MUSIC denominator floor, relative to the mean WSCM trace.
pub const MUSIC_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Music,
    Principal,
    Srp,
    Proposed,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Music,
        Method::Principal,
        Method::Srp,
        Method::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Music => "music",
            Method::Principal => "principal",
            Method::Srp => "srp",
            Method::Proposed => "proposed",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Per-frequency weighted spatial covariance matrices `Φ(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Wscm<T> {
    pub matrices: Vec<Array2<Complex<T>>>,
}

/// Per-frequency snapshot-normalized weighted covariances `R(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormScm<T> {
    pub matrices: Vec<Array2<Complex<T>>>,
}

impl<T: Real> Wscm<T> {
    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            matrices: self
                .matrices
                .iter()
                .map(|m| m.mapv(|z| z * alpha))
                .collect(),
        }
    }

    fn mean_trace(&self) -> T {
        let total = self
            .matrices
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|i| m[[i, i]].re)
                    .fold(T::zero(), |a, b| a + b)
            })
            .fold(T::zero(), |a, b| a + b);
        total / T::from_usize(self.matrices.len().max(1)).unwrap()
    }
}

/// Pseudo-spectrum over an azimuth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum<T> {
    pub values: Vec<T>,
    pub method: Method,
}

/// Accumulates `Σ_t x xᴴ` for every frequency, where `x = scale(t, f) · (w ⊙ y)`.
fn weighted_outer_sums<T: Real>(
    y: &SnapshotTensor<T>,
    w: &MaskTensor<T>,
    scale: impl Fn(ArrayView1<Complex<T>>) -> Option<T>,
) -> Vec<Array2<Complex<T>>> {
    let (m, frames, bins) = y.shape();
    let weights = w.weights();
    let mut out = Vec::with_capacity(bins);
    let mut filtered = vec![Complex::new(T::zero(), T::zero()); m];
    for f in 0..bins {
        let mut acc = Array2::zeros((m, m));
        for t in 0..frames {
            let snap = y.data.slice(ndarray::s![.., t, f]);
            let Some(gain) = scale(snap) else { continue };
            for i in 0..m {
                filtered[i] = snap[i] * (weights[[i, t, f]] * gain);
            }
            for i in 0..m {
                for j in 0..m {
                    acc[[i, j]] += filtered[i] * filtered[j].conj();
                }
            }
        }
        out.push(acc);
    }
    out
}

/// `Φ(f) = Σ_t (w ⊙ y)(w ⊙ y)ᴴ`.
pub fn compute_wscm<T: Real>(y: &SnapshotTensor<T>, w: &MaskTensor<T>) -> Result<Wscm<T>> {
    check_companion(y, w)?;
    Ok(Wscm {
        matrices: weighted_outer_sums(y, w, |_| Some(T::one())),
    })
}

fn snapshot_energy<T: Real>(snap: ArrayView1<Complex<T>>) -> T {
    snap.iter()
        .map(|&z| norm_sqr(z))
        .fold(T::zero(), |a, b| a + b)
}

/// `R(f) = Σ_t ỹỹᴴ / ‖y‖²`, skipping snapshots with `‖y‖² ≤ guard`.
pub fn compute_norm_scm<T: Real>(
    y: &SnapshotTensor<T>,
    w: &MaskTensor<T>,
    guard: T,
) -> Result<NormScm<T>> {
    check_companion(y, w)?;
    Ok(NormScm {
        matrices: weighted_outer_sums(y, w, |snap| {
            let e = snapshot_energy(snap);
            (e > guard).then(|| e.sqrt().recip())
        }),
    })
}

fn check_field<T: Real>(field: &SteeringField<T>, matrices: &[Array2<Complex<T>>]) -> Result<()> {
    let (_, bins, m) = field.shape();
    if bins != matrices.len() || matrices.iter().any(|a| a.dim() != (m, m)) {
        return Err(Error::ShapeMismatch(format!(
            "steering field has {bins} bins × {m} mics, covariances have {} bins",
            matrices.len()
        )));
    }
    Ok(())
}

/// `vᴴ A v` for Hermitian `A` (real part; the imaginary part is rounding).
fn quad_form<T: Real>(a: &Array2<Complex<T>>, v: ArrayView1<Complex<T>>) -> T {
    let m = v.len();
    let mut acc = T::zero();
    for i in 0..m {
        let mut row = Complex::new(T::zero(), T::zero());
        for j in 0..m {
            row += a[[i, j]] * v[j];
        }
        acc += (v[i].conj() * row).re;
    }
    acc
}

fn accumulate<T: Real>(
    field: &SteeringField<T>,
    per_bin: impl Fn(usize, ArrayView1<Complex<T>>) -> T,
) -> Vec<T> {
    let (angles, bins, _) = field.shape();
    (0..angles)
        .map(|i| {
            (0..bins)
                .map(|f| per_bin(f, field.vectors.slice(ndarray::s![i, f, ..])))
                .fold(T::zero(), |a, b| a + b)
        })
        .collect()
}

/// Wideband MUSIC with a floored denominator.
pub fn spectrum_music<T: Real>(
    phi: &Wscm<T>,
    field: &SteeringField<T>,
    floor: T,
) -> Result<SpatialSpectrum<T>> {
    check_field(field, &phi.matrices)?;
    if field.mics() < 2 {
        return Err(Error::invalid("MUSIC needs at least two microphones"));
    }
    let floor = floor.max(T::min_positive_value());
    let projectors = phi
        .matrices
        .iter()
        .map(|a| {
            let n = noise_subspace(&eig_hermitian(a)?)?;
            Ok(n.dot(&n.t().mapv(|z| z.conj())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatialSpectrum {
        values: accumulate(field, |f, v| {
            quad_form(&projectors[f], v).max(floor).recip()
        }),
        method: Method::Music,
    })
}

/// Default MUSIC floor: `1e-12 · Σ_f tr Φ(f) / F`.
pub fn music_floor<T: Real>(phi: &Wscm<T>) -> T {
    T::lit(MUSIC_FLOOR_REL) * phi.mean_trace()
}

/// Principal-vector criterion `Σ_f |vᴴ p(f)|²`.
pub fn spectrum_principal<T: Real>(
    phi: &Wscm<T>,
    field: &SteeringField<T>,
) -> Result<SpatialSpectrum<T>> {
    check_field(field, &phi.matrices)?;
    let principals = phi
        .matrices
        .iter()
        .map(|a| Ok(principal_eigvec(&eig_hermitian(a)?)))
        .collect::<Result<Vec<Array1<Complex<T>>>>>()?;
    Ok(SpatialSpectrum {
        values: accumulate(field, |f, v| {
            let ip = v
                .iter()
                .zip(principals[f].iter())
                .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                    acc + a.conj() * b
                });
            norm_sqr(ip)
        }),
        method: Method::Principal,
    })
}

/// Steered response power `Σ_f vᴴ Φ(f) v`.
pub fn spectrum_srp<T: Real>(
    phi: &Wscm<T>,
    field: &SteeringField<T>,
) -> Result<SpatialSpectrum<T>> {
    check_field(field, &phi.matrices)?;
    Ok(SpatialSpectrum {
        values: accumulate(field, |f, v| quad_form(&phi.matrices[f], v)),
        method: Method::Srp,
    })
}

/// Normalized T-F weighted criterion `Σ_f vᴴ R(f) v`.
pub fn spectrum_proposed<T: Real>(
    r: &NormScm<T>,
    field: &SteeringField<T>,
) -> Result<SpatialSpectrum<T>> {
    check_field(field, &r.matrices)?;
    Ok(SpatialSpectrum {
        values: accumulate(field, |f, v| quad_form(&r.matrices[f], v).max(T::zero())),
        method: Method::Proposed,
    })
}

/// Computes the spectrum of `method` from snapshots and (post-processed) weights.
pub fn spatial_spectrum<T: Real>(
    method: Method,
    y: &SnapshotTensor<T>,
    w: &MaskTensor<T>,
    field: &SteeringField<T>,
) -> Result<SpatialSpectrum<T>> {
    match method {
        Method::Proposed => spectrum_proposed(&compute_norm_scm(y, w, T::lit(NORM_GUARD))?, field),
        _ => {
            let phi = compute_wscm(y, w)?;
            match method {
                Method::Music => spectrum_music(&phi, field, music_floor(&phi)),
                Method::Principal => spectrum_principal(&phi, field),
                Method::Srp => spectrum_srp(&phi, field),
                Method::Proposed => unreachable!(),
            }
        }
    }
}

/// Snapshot-matching residual with the source spectrum eliminated in closed
/// form: `Σ_{t,f} ‖z − (v† z) v‖²` where `z = ỹ / ‖y‖`.
///
/// Snapshots with `‖y‖² ≤` [`NORM_GUARD`] are skipped, as in [`compute_norm_scm`].
pub fn eq5_residual<T: Real>(
    theta_index: usize,
    y: &SnapshotTensor<T>,
    w: &MaskTensor<T>,
    field: &SteeringField<T>,
) -> Result<T> {
    check_companion(y, w)?;
    let (angles, bins, m) = field.shape();
    if theta_index >= angles || bins != y.bins() || m != y.mics() {
        return Err(Error::ShapeMismatch(
            "steering field does not match snapshots".into(),
        ));
    }
    let guard = T::lit(NORM_GUARD);
    let weights = w.weights();
    let mut total = T::zero();
    let mut z = vec![Complex::new(T::zero(), T::zero()); m];
    for f in 0..bins {
        let v = field.vectors.slice(ndarray::s![theta_index, f, ..]);
        let v_norm2 = v.iter().map(|&c| norm_sqr(c)).fold(T::zero(), |a, b| a + b);
        if !(v_norm2 > T::zero()) {
            return Err(Error::invalid("zero steering vector"));
        }
        for t in 0..y.frames() {
            let snap = y.data.slice(ndarray::s![.., t, f]);
            let e = snapshot_energy(snap);
            if !(e > guard) {
                continue;
            }
            let inv = e.sqrt().recip();
            for i in 0..m {
                z[i] = snap[i] * (weights[[i, t, f]] * inv);
            }
            // s* = v† z = vᴴ z / ‖v‖²
            let s = v
                .iter()
                .zip(&z)
                .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                    acc + a.conj() * b
                })
                / v_norm2;
            for i in 0..m {
                total += norm_sqr(z[i] - v[i] * s);
            }
        }
    }
    Ok(total)
}

/// Grid angle of the global maximum; ties go to the smallest angle.
pub fn estimate_doa<T: Real>(spectrum: &SpatialSpectrum<T>, grid: &AngleGrid) -> Result<f64> {
    if spectrum.values.is_empty() || spectrum.values.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum has {} values, grid has {}",
            spectrum.values.len(),
            grid.len()
        )));
    }
    let mut best = 0;
    for (i, &v) in spectrum.values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("spectrum value at index {i}")));
        }
        if v > spectrum.values[best] {
            best = i;
        }
    }
    Ok(grid.angles()[best])
}

/// Writes `theta_deg,value,normalized_value` with values divided by the maximum.
pub fn write_spectrum_csv<T: Real>(
    out: &mut impl Write,
    spectrum: &SpatialSpectrum<T>,
    grid: &AngleGrid,
) -> Result<()> {
    if spectrum.values.len() != grid.len() {
        return Err(Error::ShapeMismatch(
            "spectrum and grid lengths differ".into(),
        ));
    }
    let max = spectrum
        .values
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    writeln!(out, "theta_deg,value,normalized_value")?;
    for (theta, &v) in grid.angles().iter().zip(&spectrum.values) {
        let norm = if max > T::zero() { v / max } else { T::zero() };
        writeln!(
            out,
            "{theta:.6},{:.9e},{:.9}",
            v.to_f64_lossy(),
            norm.to_f64_lossy()
        )?;
    }
    Ok(())
}

pub fn save_spectrum_csv<T: Real>(
    path: impl AsRef<Path>,
    spectrum: &SpatialSpectrum<T>,
    grid: &AngleGrid,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_spectrum_csv(&mut out, spectrum, grid)?;
    out.flush()?;
    Ok(())
}

/// Relative Frobenius difference used by tests and diagnostics.
pub fn relative_difference<T: Real>(a: &Array2<Complex<T>>, b: &Array2<Complex<T>>) -> T {
    let scale = frobenius_norm(a).max(frobenius_norm(b));
    if scale == T::zero() {
        T::zero()
    } else {
        frobenius_norm(&(a - b)) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_steering_field, rect_array, steering_vector};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    fn freqs(n: usize) -> Vec<f64> {
        (0..n).map(|k| 500.0 + 400.0 * k as f64).collect()
    }

    fn field(grid: &AngleGrid, f: &[f64]) -> SteeringField<f64> {
        build_steering_field(&rect_array(3, 3, 0.02, [0.0; 3]).unwrap(), grid, f).unwrap()
    }

    /// Noise-free plane wave `y(t, f) = v(θ₀, f) s(t, f)`.
    fn plane_wave(theta: f64, frames: usize, f: &[f64], seed: u64) -> SnapshotTensor<f64> {
        let geom = rect_array(3, 3, 0.02, [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Array3::zeros((9, frames, f.len()));
        for (j, &freq) in f.iter().enumerate() {
            let v = steering_vector(&geom, theta, freq);
            for t in 0..frames {
                let s = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                for m in 0..9 {
                    data[[m, t, j]] = v[m] * s;
                }
            }
        }
        SnapshotTensor::new(data, f.to_vec()).unwrap()
    }

    fn random_inputs(
        seed: u64,
        m: usize,
        frames: usize,
        bins: usize,
    ) -> (SnapshotTensor<f64>, MaskTensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((m, frames, bins), |_| {
            C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let w = Array3::from_shape_fn((m, frames, bins), |_| rng.random_range(0.0..=1.0));
        (
            SnapshotTensor::new(data, freqs(bins)).unwrap(),
            MaskTensor::new(w).unwrap(),
        )
    }

    #[test]
    fn wscm_trivial_cases() {
        let f = freqs(3);
        let y = plane_wave(30.0, 1, &f, 1);
        let phi = compute_wscm(&y, &MaskTensor::ones(y.shape())).unwrap();
        for (k, a) in phi.matrices.iter().enumerate() {
            let col = y.data.slice(ndarray::s![.., 0, k]);
            for i in 0..9 {
                for j in 0..9 {
                    assert_eq!(a[[i, j]], col[i] * col[j].conj());
                }
            }
        }
        let zero = compute_wscm(&y, &MaskTensor::zeros(y.shape())).unwrap();
        assert!(zero
            .matrices
            .iter()
            .all(|a| a.iter().all(|z| z.norm() == 0.0)));
        assert!(matches!(
            compute_wscm(&y, &MaskTensor::ones((9, 2, 3))),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn wscm_is_hermitian_psd() {
        let (y, w) = random_inputs(4, 5, 12, 6);
        let phi = compute_wscm(&y, &w).unwrap();
        for a in &phi.matrices {
            let ah = a.t().mapv(|z| z.conj());
            assert!(relative_difference(a, &ah) <= 1e-10);
            let b = eig_hermitian(a).unwrap();
            assert!(b.eigenvalues[0] >= -1e-10 * frobenius_norm(a));
        }
    }

    #[test]
    fn norm_scm_traces() {
        let f = freqs(4);
        let y = plane_wave(10.0, 1, &f, 2);
        let r = compute_norm_scm(&y, &MaskTensor::ones(y.shape()), NORM_GUARD).unwrap();
        for a in &r.matrices {
            let tr: f64 = (0..9).map(|i| a[[i, i]].re).sum();
            assert_abs_diff_eq!(tr, 1.0, epsilon = 1e-14);
        }

        let (y, w) = random_inputs(9, 4, 10, 5);
        let r = compute_norm_scm(&y, &w, NORM_GUARD).unwrap();
        for a in &r.matrices {
            let tr: f64 = (0..4).map(|i| a[[i, i]].re).sum();
            assert!(tr <= 10.0 + 1e-12);
        }

        let silent = SnapshotTensor::new(Array3::zeros((3, 2, 2)), vec![100.0, 200.0]).unwrap();
        let r = compute_norm_scm(&silent, &MaskTensor::ones((3, 2, 2)), NORM_GUARD).unwrap();
        assert!(r
            .matrices
            .iter()
            .all(|a| a.iter().all(|z| *z == C::new(0.0, 0.0))));
    }

    #[test]
    fn all_criteria_find_plane_wave() {
        let grid = AngleGrid::new(1.0).unwrap();
        let f = freqs(12);
        let fld = field(&grid, &f);
        for (seed, theta) in [(1u64, 37.0), (2, 200.0), (3, 359.0)] {
            let y = plane_wave(theta, 6, &f, seed);
            let w = MaskTensor::ones(y.shape());
            for method in Method::ALL {
                let spec = spatial_spectrum(method, &y, &w, &fld).unwrap();
                assert_eq!(estimate_doa(&spec, &grid).unwrap(), theta, "{method}");
            }
        }
    }

    fn identity_wscm(bins: usize) -> Wscm<f64> {
        Wscm {
            matrices: vec![
                Array2::from_shape_fn((9, 9), |(i, j)| C::new(
                    (i == j) as u8 as f64,
                    0.0
                ));
                bins
            ],
        }
    }

    #[test]
    fn isotropic_covariance() {
        let grid = AngleGrid::new(5.0).unwrap();
        let f = freqs(4);
        let fld = field(&grid, &f);
        let phi = identity_wscm(4);

        let music = spectrum_music(&phi, &fld, music_floor(&phi)).unwrap();
        let first = music.values[0];
        assert!(music
            .values
            .iter()
            .all(|v| ((v - first) / first).abs() < 1e-12));

        let srp = spectrum_srp(&phi, &fld).unwrap();
        assert!(srp.values.iter().all(|v| (v - 36.0).abs() < 1e-12));
    }

    #[test]
    fn music_floor_prevents_infinity() {
        let grid = AngleGrid::new(1.0).unwrap();
        let f = freqs(3);
        let fld = field(&grid, &f);
        let y = plane_wave(45.0, 1, &f, 3);
        let phi = compute_wscm(&y, &MaskTensor::ones(y.shape())).unwrap();
        let spec = spectrum_music(&phi, &fld, music_floor(&phi)).unwrap();
        assert!(spec.values.iter().all(|v| v.is_finite()));

        let zero = Wscm {
            matrices: vec![Array2::<C>::zeros((9, 9)); 3],
        };
        let spec = spectrum_music(&zero, &fld, music_floor(&zero)).unwrap();
        assert!(spec.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn music_needs_two_mics() {
        let grid = AngleGrid::new(90.0).unwrap();
        let g = rect_array(1, 1, 0.02, [0.0; 3]).unwrap();
        let fld = build_steering_field(&g, &grid, &[1000.0]).unwrap();
        let phi = Wscm {
            matrices: vec![Array2::from_elem((1, 1), C::new(1.0, 0.0))],
        };
        assert!(spectrum_music(&phi, &fld, 1e-12).is_err());
    }

    #[test]
    fn principal_closed_form() {
        let grid = AngleGrid::new(0.5).unwrap();
        let f = freqs(5);
        let geom = rect_array(3, 3, 0.02, [0.0; 3]).unwrap();
        let fld = field(&grid, &f);
        let theta0 = 123.5;
        let phi = Wscm {
            matrices: f
                .iter()
                .map(|&freq| {
                    let v = steering_vector(&geom, theta0, freq);
                    Array2::from_shape_fn((9, 9), |(i, j)| v[i] * v[j].conj())
                })
                .collect(),
        };
        let spec = spectrum_principal(&phi, &fld).unwrap();
        let i0 = grid.nearest_index(theta0);
        assert_abs_diff_eq!(spec.values[i0], 9.0 * 5.0, epsilon = 1e-9);

        let scaled = spectrum_principal(&phi.scaled(3.7), &fld).unwrap();
        for (a, b) in spec.values.iter().zip(&scaled.values) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
        }

        let zero = Wscm {
            matrices: vec![Array2::<C>::zeros((9, 9)); 5],
        };
        assert!(spectrum_principal(&zero, &fld)
            .unwrap()
            .values
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn srp_is_linear() {
        let grid = AngleGrid::new(2.0).unwrap();
        let (y, w) = random_inputs(12, 9, 5, 4);
        let fld = field(&grid, &y.bin_freqs);
        let phi = compute_wscm(&y, &w).unwrap();
        let a = spectrum_srp(&phi, &fld).unwrap();
        let b = spectrum_srp(&phi.scaled(2.5), &fld).unwrap();
        for (x, z) in a.values.iter().zip(&b.values) {
            assert!((z - 2.5 * x).abs() <= 1e-12 * z.abs());
        }
    }

    #[test]
    fn proposed_closed_form() {
        let grid = AngleGrid::new(0.5).unwrap();
        let f = freqs(7);
        let fld = field(&grid, &f);
        let theta0 = 271.0;
        let frames = 8;
        let y = plane_wave(theta0, frames, &f, 5);
        let spec =
            spatial_spectrum(Method::Proposed, &y, &MaskTensor::ones(y.shape()), &fld).unwrap();
        let i0 = grid.nearest_index(theta0);
        assert_abs_diff_eq!(spec.values[i0], (7 * frames * 9) as f64, epsilon = 1e-9);
        assert!(spec.values.iter().all(|&v| v >= 0.0));

        let zero =
            spatial_spectrum(Method::Proposed, &y, &MaskTensor::zeros(y.shape()), &fld).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_cases() {
        let grid = AngleGrid::new(0.5).unwrap();
        let f = freqs(6);
        let fld = field(&grid, &f);
        let theta0 = 64.5;
        let y = plane_wave(theta0, 5, &f, 6);
        let ones = MaskTensor::ones(y.shape());
        let r = eq5_residual(grid.nearest_index(theta0), &y, &ones, &fld).unwrap();
        assert!(r.abs() <= 1e-9);

        let zeros = MaskTensor::zeros(y.shape());
        for i in (0..grid.len()).step_by(45) {
            assert_eq!(eq5_residual(i, &y, &zeros, &fld).unwrap(), 0.0);
        }
    }

    #[test]
    fn residual_plus_spectrum_is_constant() {
        let grid = AngleGrid::new(3.0).unwrap();
        let (y, w) = random_inputs(21, 9, 7, 5);
        let fld = field(&grid, &y.bin_freqs);
        let spec = spatial_spectrum(Method::Proposed, &y, &w, &fld).unwrap();
        let mut total_z = 0.0;
        for f in 0..y.bins() {
            for t in 0..y.frames() {
                let snap = y.data.slice(ndarray::s![.., t, f]);
                let e: f64 = snap.iter().map(|z| z.norm_sqr()).sum();
                for m in 0..9 {
                    total_z += (snap[m] * w.weights()[[m, t, f]]).norm_sqr() / e;
                }
            }
        }
        for i in 0..grid.len() {
            let r = eq5_residual(i, &y, &w, &fld).unwrap();
            assert!(((r + spec.values[i] / 9.0) - total_z).abs() <= 1e-9 * total_z);
        }
    }

    #[test]
    fn global_phase_invariance() {
        let grid = AngleGrid::new(4.0).unwrap();
        let (y, w) = random_inputs(31, 9, 6, 4);
        let fld = field(&grid, &y.bin_freqs);
        let rot = C::from_polar(1.0, 1.234);
        let y2 = SnapshotTensor::new(y.data.mapv(|z| z * rot), y.bin_freqs.clone()).unwrap();
        for method in Method::ALL {
            let a = spatial_spectrum(method, &y, &w, &fld).unwrap();
            let b = spatial_spectrum(method, &y2, &w, &fld).unwrap();
            let scale = a.values.iter().cloned().fold(0.0, f64::max);
            for (x, z) in a.values.iter().zip(&b.values) {
                assert!((x - z).abs() <= 1e-9 * scale, "{method}");
            }
        }
    }

    #[test]
    fn doa_tie_rules() {
        let grid = AngleGrid::new(0.5).unwrap();
        let mut values = vec![0.0; 720];
        values[37] = 1.0;
        let s = SpatialSpectrum {
            values: values.clone(),
            method: Method::Srp,
        };
        assert_eq!(estimate_doa(&s, &grid).unwrap(), 18.5);

        let flat = SpatialSpectrum {
            values: vec![2.0; 720],
            method: Method::Srp,
        };
        assert_eq!(estimate_doa(&flat, &grid).unwrap(), 0.0);

        let mut two = vec![0.0; 720];
        two[20] = 5.0;
        two[400] = 5.0;
        let s = SpatialSpectrum {
            values: two,
            method: Method::Srp,
        };
        assert_eq!(estimate_doa(&s, &grid).unwrap(), 10.0);

        values[3] = f64::NAN;
        let s = SpatialSpectrum {
            values,
            method: Method::Srp,
        };
        assert!(matches!(estimate_doa(&s, &grid), Err(Error::NonFinite(_))));
    }

    #[test]
    fn spectrum_csv_format() {
        let grid = AngleGrid::new(90.0).unwrap();
        let s = SpatialSpectrum {
            values: vec![1.0, 4.0, 2.0, 0.0],
            method: Method::Proposed,
        };
        let mut out = Vec::new();
        write_spectrum_csv(&mut out, &s, &grid).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "theta_deg,value,normalized_value");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("90.000000,"));
        assert!(lines[2].ends_with(",1.000000000"));
        assert!(lines[1].ends_with(",0.250000000"));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("beamformer".parse::<Method>().is_err());
    }

    #[test]
    fn single_precision_plane_wave() {
        let grid = AngleGrid::new(1.0).unwrap();
        let f: Vec<f32> = freqs(8).iter().map(|&x| x as f32).collect();
        let geom = rect_array(3, 3, 0.02f32, [0.0; 3]).unwrap();
        let fld = build_steering_field(&geom, &grid, &f).unwrap();
        let theta0 = 150.0f32;
        let mut data = Array3::zeros((9, 4, f.len()));
        for (j, &freq) in f.iter().enumerate() {
            let v = steering_vector(&geom, theta0, freq);
            for t in 0..4 {
                let s = Complex::new(1.0f32 + t as f32, -0.5);
                for m in 0..9 {
                    data[[m, t, j]] = v[m] * s;
                }
            }
        }
        let y = SnapshotTensor::new(data, f).unwrap();
        let w = MaskTensor::ones(y.shape());
        for method in Method::ALL {
            let spec = spatial_spectrum(method, &y, &w, &fld).unwrap();
            assert_eq!(estimate_doa(&spec, &grid).unwrap(), 150.0, "{method}");
        }
    }
}
