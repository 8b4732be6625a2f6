//! Microphone array geometry, far-field steering vectors and the azimuth grid.
//!
//! Azimuth is measured counterclockwise from the +x axis in the xy-plane.
//! Phases are referenced to the array centroid, so translating the whole
//! array leaves every steering vector unchanged.

use std::path::Path;

use ndarray::{Array1, Array3};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

fn default_speed<T: Real>() -> T {
    T::lit(DEFAULT_SPEED_OF_SOUND)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ArrayGeometry<T> {
    #[serde(rename = "positions_m")]
    positions: Vec<[T; 3]>,
    #[serde(default = "default_speed")]
    speed_of_sound: T,
}

impl<T: Real> ArrayGeometry<T> {
    pub fn new(positions: Vec<[T; 3]>, speed_of_sound: T) -> Result<Self> {
        let geom = Self {
            positions,
            speed_of_sound,
        };
        geom.validate()?;
        Ok(geom)
    }

    fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::invalid("array needs at least one microphone"));
        }
        if !(self.speed_of_sound > T::zero() && self.speed_of_sound.is_finite()) {
            return Err(Error::invalid("speed of sound must be positive"));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("microphone {i} position")));
            }
            for (j, q) in self.positions[..i].iter().enumerate() {
                if p == q {
                    return Err(Error::invalid(format!("microphones {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Parses `{"positions_m": [[x,y,z],...], "speed_of_sound": 343}`.
    pub fn from_json(text: &str) -> Result<Self>
    where
        T: for<'a> Deserialize<'a>,
    {
        let geom: Self = serde_json::from_str(text)?;
        geom.validate()?;
        Ok(geom)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self>
    where
        T: for<'a> Deserialize<'a>,
    {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn positions(&self) -> &[[T; 3]] {
        &self.positions
    }

    pub fn speed_of_sound(&self) -> T {
        self.speed_of_sound
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn centroid(&self) -> [T; 3] {
        let n = T::from_usize(self.positions.len()).unwrap();
        let mut c = [T::zero(); 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Same array shifted by `offset`.
    pub fn translated(&self, offset: [T; 3]) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
            speed_of_sound: self.speed_of_sound,
        }
    }
}

/// Planar `rows × cols` grid parallel to the xy-plane, centred on `center`.
pub fn rect_array<T: Real>(
    rows: usize,
    cols: usize,
    spacing_m: T,
    center: [T; 3],
) -> Result<ArrayGeometry<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("rows and cols must be at least 1"));
    }
    if !(spacing_m > T::zero()) {
        return Err(Error::invalid("spacing must be positive"));
    }
    let half = |n: usize| T::from_usize(n - 1).unwrap() / T::lit(2.0);
    let mut positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let dx = (T::from_usize(c).unwrap() - half(cols)) * spacing_m;
            let dy = (T::from_usize(r).unwrap() - half(rows)) * spacing_m;
            positions.push([center[0] + dx, center[1] + dy, center[2]]);
        }
    }
    ArrayGeometry::new(positions, default_speed())
}

/// Far-field steering vector `v_m = exp(-j 2π f τ_m)` with
/// `τ_m = -(p_m - centroid)·u(θ) / c`.
pub fn steering_vector<T: Real>(
    geom: &ArrayGeometry<T>,
    theta_deg: T,
    freq_hz: T,
) -> Array1<Complex<T>> {
    let centroid = geom.centroid();
    let theta = theta_deg.to_radians();
    let (uy, ux) = theta.sin_cos();
    let k = T::TAU() * freq_hz / geom.speed_of_sound();
    geom.positions()
        .iter()
        .map(|p| {
            let proj = (p[0] - centroid[0]) * ux + (p[1] - centroid[1]) * uy;
            // exp(-j2πfτ) with τ = -proj/c
            Complex::from_polar(T::one(), k * proj)
        })
        .collect()
}

/// Uniform azimuth grid over `[0°, 360°)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    resolution: f64,
    angles: Vec<f64>,
}

impl AngleGrid {
    pub fn new(resolution_deg: f64) -> Result<Self> {
        if !(resolution_deg > 0.0 && resolution_deg <= 360.0) {
            return Err(Error::invalid(format!("grid resolution {resolution_deg}°")));
        }
        let count = (360.0 / resolution_deg).round();
        if (count * resolution_deg - 360.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "grid resolution {resolution_deg}° does not divide 360°"
            )));
        }
        let angles = (0..count as usize)
            .map(|k| k as f64 * resolution_deg)
            .collect();
        Ok(Self {
            resolution: resolution_deg,
            angles,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Index of the grid angle nearest to `deg` on the circle.
    pub fn nearest_index(&self, deg: f64) -> usize {
        let k = (deg.rem_euclid(360.0) / self.resolution).round() as usize;
        k % self.angles.len()
    }
}

/// Steering vectors `v(θ, f)` precomputed over a grid, laid out `(θ, f, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringField<T> {
    pub vectors: Array3<Complex<T>>,
    pub bin_freqs: Vec<T>,
}

impl<T: Real> SteeringField<T> {
    /// `(angles, bins, mics)`
    pub fn shape(&self) -> (usize, usize, usize) {
        self.vectors.dim()
    }

    pub fn mics(&self) -> usize {
        self.vectors.dim().2
    }
}

pub fn build_steering_field<T: Real>(
    geom: &ArrayGeometry<T>,
    grid: &AngleGrid,
    bin_freqs: &[T],
) -> Result<SteeringField<T>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty angle grid"));
    }
    let mut vectors = Array3::zeros((grid.len(), bin_freqs.len(), geom.len()));
    for (i, &theta) in grid.angles().iter().enumerate() {
        for (f, &freq) in bin_freqs.iter().enumerate() {
            let v = steering_vector(geom, T::lit(theta), freq);
            vectors.slice_mut(ndarray::s![i, f, ..]).assign(&v);
        }
    }
    Ok(SteeringField {
        vectors,
        bin_freqs: bin_freqs.to_vec(),
    })
}

/// Great-circle distance between two azimuths, in `[0, 180]` degrees.
pub fn angular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}
