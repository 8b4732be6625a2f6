//! Time-frequency weights: oracle ratio masks, post-processing across
//! microphones, and the `TFW1` binary container for externally computed masks.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm_sqr, Real};
use crate::signal::SnapshotTensor;

/// Per-microphone weights in `[0, 1]`, laid out `(m, t, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor<T> {
    weights: Array3<T>,
}

impl<T: Real> MaskTensor<T> {
    pub fn new(weights: Array3<T>) -> Result<Self> {
        for ((m, t, f), &w) in weights.indexed_iter() {
            if !(w >= T::zero() && w <= T::one()) {
                return Err(Error::MaskValue {
                    value: w.to_f64().unwrap_or(f64::NAN),
                    index: (m, t, f),
                });
            }
        }
        Ok(Self { weights })
    }

    pub fn ones(shape: (usize, usize, usize)) -> Self {
        Self {
            weights: Array3::from_elem(shape, T::one()),
        }
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self {
            weights: Array3::zeros(shape),
        }
    }

    pub fn weights(&self) -> &Array3<T> {
        &self.weights
    }

    pub fn into_weights(self) -> Array3<T> {
        self.weights
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.weights.dim()
    }
}

/// Cross-microphone post-processing applied to the raw weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostProcKind {
    Identity,
    Minimum,
    Maximum,
    ArithMean,
    ArithMedian,
    Hadamard,
    GeoMean,
    /// 1 where the microphone's own weight is strictly above β, else 0.
    BinaryThreshold(f64),
    /// All ones; reduces the weighted covariance to the plain sample one.
    Constant,
}

impl PostProcKind {
    pub fn validate(&self) -> Result<()> {
        if let PostProcKind::BinaryThreshold(beta) = *self {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::invalid(format!(
                    "threshold β = {beta} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PostProcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PostProcKind::Identity => f.write_str("identity"),
            PostProcKind::Minimum => f.write_str("minimum"),
            PostProcKind::Maximum => f.write_str("maximum"),
            PostProcKind::ArithMean => f.write_str("arith_mean"),
            PostProcKind::ArithMedian => f.write_str("arith_median"),
            PostProcKind::Hadamard => f.write_str("hadamard"),
            PostProcKind::GeoMean => f.write_str("geo_mean"),
            PostProcKind::BinaryThreshold(b) => write!(f, "binary_threshold:{b}"),
            PostProcKind::Constant => f.write_str("constant"),
        }
    }
}

impl FromStr for PostProcKind {
    type Err = Error;

    /// Accepts the snake-case names; thresholding as `binary_threshold:0.9`
    /// or `bt:0.9`.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "identity" => PostProcKind::Identity,
            "minimum" | "min" => PostProcKind::Minimum,
            "maximum" | "max" => PostProcKind::Maximum,
            "arith_mean" | "mean" => PostProcKind::ArithMean,
            "arith_median" | "median" => PostProcKind::ArithMedian,
            "hadamard" => PostProcKind::Hadamard,
            "geo_mean" => PostProcKind::GeoMean,
            "constant" => PostProcKind::Constant,
            other => {
                let beta = other
                    .strip_prefix("binary_threshold:")
                    .or_else(|| other.strip_prefix("bt:"))
                    .ok_or_else(|| Error::invalid(format!("unknown post-processing '{other}'")))?;
                let beta: f64 = beta
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad threshold '{beta}'")))?;
                PostProcKind::BinaryThreshold(beta)
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Ideal ratio mask `sqrt(|s|² / (|s|² + |n|²))`, with `0/0` taken as 0.
pub fn oracle_irm<T: Real>(
    speech: &SnapshotTensor<T>,
    nonspeech: &SnapshotTensor<T>,
) -> Result<MaskTensor<T>> {
    if speech.shape() != nonspeech.shape() {
        return Err(Error::ShapeMismatch(format!(
            "speech {:?} vs nonspeech {:?}",
            speech.shape(),
            nonspeech.shape()
        )));
    }
    let mut weights = Array3::zeros(speech.shape());
    Zip::from(&mut weights)
        .and(&speech.data)
        .and(&nonspeech.data)
        .for_each(|w, &s, &n| {
            let ps = norm_sqr(s);
            let total = ps + norm_sqr(n);
            *w = if total > T::zero() {
                (ps / total).sqrt().min(T::one())
            } else {
                T::zero()
            };
        });
    Ok(MaskTensor { weights })
}

fn median<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    }
}

/// Applies `kind` elementwise over `(t, f)` across the microphone axis.
pub fn post_process<T: Real>(kind: PostProcKind, g: &MaskTensor<T>) -> Result<MaskTensor<T>> {
    kind.validate()?;
    let (m, frames, bins) = g.shape();
    let w = g.weights();
    let shared = |reduce: &dyn Fn(&mut Vec<T>) -> T| {
        let mut out = Array3::zeros((m, frames, bins));
        let mut column = Vec::with_capacity(m);
        for t in 0..frames {
            for f in 0..bins {
                column.clear();
                column.extend((0..m).map(|i| w[[i, t, f]]));
                let v = reduce(&mut column).max(T::zero()).min(T::one());
                out.slice_mut(ndarray::s![.., t, f]).fill(v);
            }
        }
        out
    };
    let mf = T::from_usize(m.max(1)).unwrap();
    let weights = match kind {
        PostProcKind::Identity => w.clone(),
        PostProcKind::Constant => Array3::from_elem(g.shape(), T::one()),
        PostProcKind::BinaryThreshold(beta) => {
            let beta = T::lit(beta);
            w.mapv(|x| if x > beta { T::one() } else { T::zero() })
        }
        PostProcKind::Minimum => shared(&|c| c.iter().copied().fold(T::infinity(), T::min)),
        PostProcKind::Maximum => shared(&|c| c.iter().copied().fold(T::neg_infinity(), T::max)),
        PostProcKind::ArithMean => {
            shared(&|c| c.iter().copied().fold(T::zero(), |a, b| a + b) / mf)
        }
        PostProcKind::ArithMedian => shared(&|c| median(c)),
        PostProcKind::Hadamard => shared(&|c| c.iter().copied().fold(T::one(), |a, b| a * b)),
        PostProcKind::GeoMean => shared(&|c| {
            if c.iter().any(|&x| x == T::zero()) {
                T::zero()
            } else {
                // exp(mean(ln)) avoids underflow of the raw product for large M.
                (c.iter().map(|x| x.ln()).fold(T::zero(), |a, b| a + b) / mf).exp()
            }
        }),
    };
    Ok(MaskTensor { weights })
}

const MAGIC: &[u8; 4] = b"TFW1";

/// Writes a mask as `TFW1`: magic, `u32` LE dims `(M, T, F)`, then `f32` LE
/// values in `(m, t, f)` row-major order.
pub fn save_mask<T: Real>(path: impl AsRef<Path>, mask: &MaskTensor<T>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_mask(&mut out, mask)?;
    out.flush()?;
    Ok(())
}

pub fn write_mask<T: Real>(out: &mut impl Write, mask: &MaskTensor<T>) -> Result<()> {
    out.write_all(MAGIC)?;
    let (m, t, f) = mask.shape();
    for d in [m, t, f] {
        let d =
            u32::try_from(d).map_err(|_| Error::MaskFormat(format!("dimension {d} too large")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for &w in mask.weights().iter() {
        out.write_all(&(w.to_f32().unwrap()).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a `TFW1` mask, checking its dimensions against `expected`.
pub fn load_mask<T: Real>(
    path: impl AsRef<Path>,
    expected: (usize, usize, usize),
) -> Result<MaskTensor<T>> {
    let file = std::fs::File::open(path)?;
    read_mask(&mut std::io::BufReader::new(file), expected)
}

pub fn read_mask<T: Real>(
    input: &mut impl Read,
    expected: (usize, usize, usize),
) -> Result<MaskTensor<T>> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::MaskFormat("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::MaskFormat("bad magic".into()));
    }
    let dim =
        |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let found = (dim(0), dim(1), dim(2));
    if found != expected {
        return Err(Error::MaskDims { found, expected });
    }
    let count = found.0 * found.1 * found.2;
    let mut raw = vec![0u8; count * 4];
    input
        .read_exact(&mut raw)
        .map_err(|_| Error::MaskFormat("truncated data".into()))?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let arr = Array3::from_shape_vec(found, values).expect("length matches dims");
    for ((m, t, f), &v) in arr.indexed_iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::MaskValue {
                value: v as f64,
                index: (m, t, f),
            });
        }
    }
    Ok(MaskTensor {
        weights: arr.mapv(|v| T::from_f32(v).unwrap()),
    })
}

/// Checks that a mask and a snapshot tensor describe the same `(M, T, F)`.
pub(crate) fn check_companion<T: Real>(y: &SnapshotTensor<T>, w: &MaskTensor<T>) -> Result<()> {
    if y.shape() != w.shape() {
        return Err(Error::ShapeMismatch(format!(
            "snapshots {:?} vs weights {:?}",
            y.shape(),
            w.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use num_complex::Complex;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> MaskTensor<f64> {
        MaskTensor::new(Array3::from_shape_vec((values.len(), 1, 1), values.to_vec()).unwrap())
            .unwrap()
    }

    fn at(mask: &MaskTensor<f64>, m: usize) -> f64 {
        mask.weights()[[m, 0, 0]]
    }

    fn snaps(values: &[Complex<f64>]) -> SnapshotTensor<f64> {
        SnapshotTensor::new(
            Array3::from_shape_vec((1, 1, values.len()), values.to_vec()).unwrap(),
            vec![1000.0; values.len()],
        )
        .unwrap()
    }

    #[test]
    fn irm_cases() {
        let c = Complex::new;
        let s = snaps(&[c(1.0, 2.0), c(0.0, 0.0), c(3.0, 0.0), c(0.0, 0.0)]);
        let n = snaps(&[c(0.0, 0.0), c(1.0, 1.0), c(0.0, 3.0), c(0.0, 0.0)]);
        let g = oracle_irm(&s, &n).unwrap();
        let w = g.weights();
        assert_eq!(w[[0, 0, 0]], 1.0);
        assert_eq!(w[[0, 0, 1]], 0.0);
        assert_abs_diff_eq!(
            w[[0, 0, 2]],
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_eq!(w[[0, 0, 3]], 0.0);

        let short = snaps(&[c(1.0, 0.0)]);
        assert!(matches!(
            oracle_irm(&s, &short),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn hadamard_pair() {
        let out = post_process(PostProcKind::Hadamard, &column(&[0.5, 0.5])).unwrap();
        assert_eq!(at(&out, 0), 0.25);
        assert_eq!(at(&out, 1), 0.25);
    }

    #[test]
    fn threshold_is_strict() {
        let g = column(&[0.95, 0.9, 0.3]);
        let out = post_process(PostProcKind::BinaryThreshold(0.9), &g).unwrap();
        assert_eq!(at(&out, 0), 1.0);
        assert_eq!(at(&out, 1), 0.0);
        assert_eq!(at(&out, 2), 0.0);
        assert!(post_process(PostProcKind::BinaryThreshold(1.0), &g).is_err());
        assert!(post_process(PostProcKind::BinaryThreshold(0.0), &g).is_err());
    }

    #[test]
    fn median_of_even_count_averages_middle_pair() {
        let out = post_process(PostProcKind::ArithMedian, &column(&[0.1, 0.9, 0.3, 0.5])).unwrap();
        assert_abs_diff_eq!(at(&out, 0), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn parse_and_display() {
        for k in [
            PostProcKind::Identity,
            PostProcKind::Minimum,
            PostProcKind::Maximum,
            PostProcKind::ArithMean,
            PostProcKind::ArithMedian,
            PostProcKind::Hadamard,
            PostProcKind::GeoMean,
            PostProcKind::BinaryThreshold(0.9),
            PostProcKind::Constant,
        ] {
            assert_eq!(k.to_string().parse::<PostProcKind>().unwrap(), k);
        }
        assert_eq!(
            "bt:0.5".parse::<PostProcKind>().unwrap(),
            PostProcKind::BinaryThreshold(0.5)
        );
        assert!("bt:1.5".parse::<PostProcKind>().is_err());
        assert!("nope".parse::<PostProcKind>().is_err());
        let json = serde_json::to_string(&PostProcKind::BinaryThreshold(0.9)).unwrap();
        assert_eq!(json, r#"{"binary_threshold":0.9}"#);
        assert_eq!(
            serde_json::to_string(&PostProcKind::GeoMean).unwrap(),
            r#""geo_mean""#
        );
    }

    #[test]
    fn mask_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tfw");
        let mask = MaskTensor::<f32>::ones((9, 50, 448));
        save_mask(&p, &mask).unwrap();
        assert!(matches!(
            load_mask::<f32>(&p, (9, 50, 400)),
            Err(Error::MaskDims { .. })
        ));

        let mut bytes = Vec::new();
        write_mask(&mut bytes, &MaskTensor::<f64>::zeros((1, 2, 2))).unwrap();
        bytes[16..20].copy_from_slice(&1.25f32.to_le_bytes());
        match read_mask::<f64>(&mut bytes.as_slice(), (1, 2, 2)) {
            Err(Error::MaskValue { index, value }) => {
                assert_eq!(index, (0, 0, 0));
                assert_eq!(value, 1.25);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_mask::<f64>(&mut bad.as_slice(), (1, 2, 2)),
            Err(Error::MaskFormat(_))
        ));
        assert!(matches!(
            read_mask::<f64>(&mut &bytes[..20], (1, 2, 2)),
            Err(Error::MaskFormat(_))
        ));
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_mask::<f64>(&mut bytes.as_slice(), (1, 2, 2)),
            Err(Error::MaskValue { .. })
        ));
    }

    #[test]
    fn mask_constructor_validates() {
        let mut w = Array3::<f64>::zeros((1, 1, 2));
        w[[0, 0, 1]] = -0.1;
        assert!(matches!(
            MaskTensor::new(w),
            Err(Error::MaskValue {
                index: (0, 0, 1),
                ..
            })
        ));
    }

    fn mask_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (1usize..6, 1usize..5)
            .prop_flat_map(|(m, n)| (Just(m), prop::collection::vec(0.0f64..=1.0, m * n)))
    }

    fn to_mask(m: usize, v: &[f64]) -> MaskTensor<f64> {
        MaskTensor::new(Array3::from_shape_vec((m, 1, v.len() / m), v.to_vec()).unwrap()).unwrap()
    }

    const ALL_KINDS: [PostProcKind; 9] = [
        PostProcKind::Identity,
        PostProcKind::Minimum,
        PostProcKind::Maximum,
        PostProcKind::ArithMean,
        PostProcKind::ArithMedian,
        PostProcKind::Hadamard,
        PostProcKind::GeoMean,
        PostProcKind::BinaryThreshold(0.5),
        PostProcKind::Constant,
    ];

    proptest! {
        #[test]
        fn outputs_stay_in_unit_interval((m, v) in mask_strategy()) {
            let g = to_mask(m, &v);
            for kind in ALL_KINDS {
                let out = post_process(kind, &g).unwrap();
                prop_assert!(out.weights().iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }

        #[test]
        fn mean_chain((m, v) in mask_strategy()) {
            let g = to_mask(m, &v);
            let get = |k| post_process(k, &g).unwrap().into_weights();
            let had = get(PostProcKind::Hadamard);
            let geo = get(PostProcKind::GeoMean);
            let mean = get(PostProcKind::ArithMean);
            let max = get(PostProcKind::Maximum);
            let min = get(PostProcKind::Minimum);
            let tol = 1e-12;
            for i in 0..had.len() {
                let idx = had.as_slice().unwrap();
                let (h, gm, am, mx, mn) = (idx[i], geo.as_slice().unwrap()[i], mean.as_slice().unwrap()[i],
                    max.as_slice().unwrap()[i], min.as_slice().unwrap()[i]);
                prop_assert!(h <= gm + tol);
                prop_assert!(gm <= am + tol);
                prop_assert!(am <= mx + tol);
                prop_assert!(mn <= gm + tol);
            }
        }

        #[test]
        fn monotone_kinds((m, v) in mask_strategy(), bump in 0.0f64..0.5) {
            let g = to_mask(m, &v);
            let raised: Vec<f64> = v.iter().map(|x| (x + bump).min(1.0)).collect();
            let g2 = to_mask(m, &raised);
            for kind in [PostProcKind::Minimum, PostProcKind::Maximum, PostProcKind::ArithMean,
                         PostProcKind::ArithMedian, PostProcKind::Hadamard, PostProcKind::GeoMean] {
                let a = post_process(kind, &g).unwrap();
                let b = post_process(kind, &g2).unwrap();
                for (x, y) in a.weights().iter().zip(b.weights().iter()) {
                    prop_assert!(*y >= *x - 1e-12);
                }
            }
        }

        #[test]
        fn identity_and_constant((m, v) in mask_strategy()) {
            let g = to_mask(m, &v);
            let once = post_process(PostProcKind::Identity, &g).unwrap();
            prop_assert_eq!(&post_process(PostProcKind::Identity, &once).unwrap(), &g);
            let c = post_process(PostProcKind::Constant, &g).unwrap();
            prop_assert_eq!(c, MaskTensor::ones(g.shape()));
        }

        #[test]
        fn irm_scale_invariant(re in -10.0f64..10.0, im in -10.0f64..10.0,
                               nre in -10.0f64..10.0, nim in -10.0f64..10.0,
                               scale in 0.01f64..100.0, phase in 0.0f64..std::f64::consts::TAU) {
            let k = Complex::from_polar(scale, phase);
            let s = snaps(&[Complex::new(re, im)]);
            let n = snaps(&[Complex::new(nre, nim)]);
            let s2 = snaps(&[Complex::new(re, im) * k]);
            let n2 = snaps(&[Complex::new(nre, nim) * k]);
            let a = oracle_irm(&s, &n).unwrap().weights()[[0, 0, 0]];
            let b = oracle_irm(&s2, &n2).unwrap().weights()[[0, 0, 0]];
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn file_roundtrip(m in 1usize..4, t in 1usize..4, f in 1usize..4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = Array3::from_shape_fn((m, t, f), |_| rng.random_range(0.0f32..=1.0));
            let mask = MaskTensor::new(w).unwrap();
            let mut bytes = Vec::new();
            write_mask(&mut bytes, &mask).unwrap();
            let back: MaskTensor<f32> = read_mask(&mut bytes.as_slice(), (m, t, f)).unwrap();
            prop_assert!(back.weights().iter().zip(mask.weights().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
