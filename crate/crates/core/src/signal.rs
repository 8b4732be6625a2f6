//! Time-domain signals, synthetic sources and STFT analysis.
//!
//! Everything in the time domain is `f64` at a fixed 16 kHz rate. The STFT
//! converts into the generic scalar used by the estimation code.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// The only sample rate the toolkit works at.
pub const SAMPLE_RATE: u32 = 16_000;

/// Real-valued mono signal sampled at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<f64>,
}

impl TimeSignal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self { samples })
    }

    /// Builds a signal, failing unless `sample_rate` is exactly 16 kHz.
    pub fn with_rate(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        Self::new(samples)
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of the squared samples (0 for an empty signal).
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
        }
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    /// Retained band `(f_lo, f_hi)` in Hz, both ends inclusive.
    pub band: (f64, f64),
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            hop: 512,
            window: Window::Hann,
            band: (50.0, 7000.0),
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.hop == 0 {
            return Err(Error::invalid("fft_size and hop must be positive"));
        }
        if self.hop > self.fft_size {
            return Err(Error::invalid(format!(
                "hop {} exceeds fft_size {}",
                self.hop, self.fft_size
            )));
        }
        let (lo, hi) = self.band;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(0.0 <= lo && lo < hi && hi <= nyquist) {
            return Err(Error::invalid(format!("band ({lo}, {hi}) Hz")));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    /// Signal length that yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        self.fft_size + frames.saturating_sub(1) * self.hop
    }

    /// Indices of the one-sided DFT bins whose centre frequency lies in the band.
    pub fn retained_bins(&self) -> Vec<usize> {
        let (lo, hi) = self.band;
        (0..=self.fft_size / 2)
            .filter(|&k| {
                let f = self.bin_frequency(k);
                lo <= f && f <= hi
            })
            .collect()
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * SAMPLE_RATE as f64 / self.fft_size as f64
    }
}

/// Single-channel STFT restricted to the analysis band, laid out `(t, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub data: Array2<Complex<T>>,
    pub bin_freqs: Vec<T>,
}

impl<T: Real> Spectrogram<T> {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }
}

/// Multichannel STFT cube `y(t, f)` laid out `(m, t, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTensor<T> {
    pub data: Array3<Complex<T>>,
    pub bin_freqs: Vec<T>,
}

impl<T: Real> SnapshotTensor<T> {
    pub fn new(data: Array3<Complex<T>>, bin_freqs: Vec<T>) -> Result<Self> {
        if data.dim().2 != bin_freqs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} bins in data, {} frequencies",
                data.dim().2,
                bin_freqs.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("snapshot tensor".into()));
        }
        Ok(Self { data, bin_freqs })
    }

    /// `(M, T, F)`
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn mics(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }
}

/// Short-time Fourier transform keeping only the in-band bins.
pub fn compute_stft<T: Real>(signal: &TimeSignal, cfg: &StftConfig) -> Result<Spectrogram<T>> {
    cfg.validate()?;
    let n = cfg.fft_size;
    if signal.len() < n {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            needed: n,
        });
    }
    let bins = cfg.retained_bins();
    if bins.is_empty() {
        return Err(Error::EmptyBand {
            lo: cfg.band.0,
            hi: cfg.band.1,
        });
    }
    let frames = cfg.frame_count(signal.len());
    let window = cfg.window.coefficients(n);
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);

    let mut data = Array2::zeros((frames, bins.len()));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let x = signal.samples();
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(T::lit(x[start + i] * window[i]), T::zero());
        }
        fft.process(&mut buf);
        for (j, &k) in bins.iter().enumerate() {
            data[[t, j]] = buf[k];
        }
    }
    let bin_freqs = bins.iter().map(|&k| T::lit(cfg.bin_frequency(k))).collect();
    Ok(Spectrogram { data, bin_freqs })
}

/// Stacks per-microphone spectrograms into an `(m, t, f)` tensor.
pub fn stack_snapshots<T: Real>(channels: &[Spectrogram<T>]) -> Result<SnapshotTensor<T>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no channels".into()))?;
    let (frames, bins) = first.data.dim();
    for (m, ch) in channels.iter().enumerate() {
        if ch.data.dim() != (frames, bins) || ch.bin_freqs != first.bin_freqs {
            return Err(Error::ShapeMismatch(format!(
                "channel {m} has shape {:?}, channel 0 has {:?}",
                ch.data.dim(),
                (frames, bins)
            )));
        }
    }
    let data = Array3::from_shape_fn((channels.len(), frames, bins), |(m, t, f)| {
        channels[m].data[[t, f]]
    });
    SnapshotTensor::new(data, first.bin_freqs.clone())
}

/// Kind of synthetic non-speech interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceKind {
    /// Steady harmonic hum.
    Machine,
    /// High-pass noise with fast amplitude flutter.
    WaterLike,
    /// Low-pass noise with slow gusts.
    WindLike,
}

impl InterferenceKind {
    pub const ALL: [InterferenceKind; 3] = [
        InterferenceKind::Machine,
        InterferenceKind::WaterLike,
        InterferenceKind::WindLike,
    ];
}

const SPEECH_F0_RANGE: (f64, f64) = (100.0, 300.0);
const HARMONIC_CEILING_HZ: f64 = 7000.0;
const SPEECH_NOISE_BAND: (f64, f64) = (1500.0, 5000.0);
const SPEECH_NOISE_RATIO: f64 = 0.1;

/// Fundamental frequency drawn by [`synth_speech_like`] for `seed`.
pub fn speech_fundamental(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.random_range(SPEECH_F0_RANGE.0..SPEECH_F0_RANGE.1)
}

fn sample_count(duration: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid(format!("duration {duration} s")));
    }
    Ok(((duration * SAMPLE_RATE as f64).round() as usize).max(1))
}

/// Voiced harmonic stack under a syllabic on/off envelope, plus band noise
/// filling the gaps. Unit mean power, deterministic in `seed`.
pub fn synth_speech_like(seed: u64, duration: f64) -> Result<TimeSignal> {
    let n = sample_count(duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(SPEECH_F0_RANGE.0..SPEECH_F0_RANGE.1);
    let syllable_rate = rng.random_range(3.0..6.0);
    let syllable_phase = rng.random_range(0.0..2.0 * PI);
    let harmonics = harmonic_table(&mut rng, f0, |k| 1.0 / k as f64);

    let fs = SAMPLE_RATE as f64;
    let mut voiced: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let env = (2.0 * PI * syllable_rate * t + syllable_phase)
                .sin()
                .max(0.0);
            env * harmonic_sample(&harmonics, t)
        })
        .collect();

    let mut noise = band_noise(&mut rng, n, SPEECH_NOISE_BAND);
    for (i, v) in noise.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v *= (2.0 * PI * syllable_rate * t + syllable_phase + PI)
            .sin()
            .max(0.0);
    }
    let pv = mean_power(&voiced);
    let pn = mean_power(&noise);
    let gain = if pn > 0.0 {
        (SPEECH_NOISE_RATIO * pv / pn).sqrt()
    } else {
        0.0
    };
    for (v, e) in voiced.iter_mut().zip(&noise) {
        *v += gain * e;
    }
    TimeSignal::new(normalize_power(voiced))
}

/// Synthetic interference of the given kind; unit mean power.
pub fn synth_interference(kind: InterferenceKind, seed: u64, duration: f64) -> Result<TimeSignal> {
    let n = sample_count(duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE as f64;
    let samples = match kind {
        InterferenceKind::Machine => {
            let f0 = rng.random_range(50.0..250.0);
            let harmonics = harmonic_table(&mut rng, f0, |k| 1.0 / (k as f64).sqrt());
            (0..n)
                .map(|i| harmonic_sample(&harmonics, i as f64 / fs))
                .collect()
        }
        InterferenceKind::WaterLike => {
            let rate = rng.random_range(5.0..15.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let mut x = band_noise(&mut rng, n, (1000.0, 7500.0));
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *v *= 0.6 + 0.4 * (2.0 * PI * rate * t + phase).sin();
            }
            x
        }
        InterferenceKind::WindLike => {
            let rate = rng.random_range(0.2..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let mut x = band_noise(&mut rng, n, (0.0, 400.0));
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *v *= 0.5 + 0.5 * (2.0 * PI * rate * t + phase).sin();
            }
            x
        }
    };
    TimeSignal::new(normalize_power(samples))
}

fn harmonic_table(rng: &mut impl Rng, f0: f64, amp: impl Fn(usize) -> f64) -> Vec<(f64, f64, f64)> {
    (1..)
        .take_while(|&k| k as f64 * f0 < HARMONIC_CEILING_HZ)
        .map(|k| (k as f64 * f0, amp(k), rng.random_range(0.0..2.0 * PI)))
        .collect()
}

fn harmonic_sample(table: &[(f64, f64, f64)], t: f64) -> f64 {
    table
        .iter()
        .map(|&(f, a, phi)| a * (2.0 * PI * f * t + phi).sin())
        .sum()
}

/// White Gaussian noise, brick-wall band-limited in the DFT domain.
fn band_noise(rng: &mut impl Rng, n: usize, band: (f64, f64)) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let fs = SAMPLE_RATE as f64;
    for (k, z) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < band.0 || f > band.1 {
            *z = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|z| z.re / n as f64).collect()
}

fn normalize_power(mut x: Vec<f64>) -> Vec<f64> {
    let p = mean_power(&x);
    if p > 0.0 {
        let g = p.sqrt().recip();
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Linear convolution truncated to `out_len` samples, via FFT.
pub(crate) fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |v: &[f64]| {
        let mut b = vec![Complex::new(0.0, 0.0); n];
        for (slot, &s) in b.iter_mut().zip(v) {
            slot.re = s;
        }
        b
    };
    let mut a = lift(x);
    let mut b = lift(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { a[i].re * scale } else { 0.0 })
        .collect()
}

/// Reads a 16-bit PCM mono 16 kHz WAV file, scaling samples by 2^-15.
pub fn load_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Wav {
            path: path.to_owned(),
            reason: io.to_string(),
        },
        hound::Error::Unsupported => Error::Encoding("unsupported WAV variant".into()),
        other => Error::Wav {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(spec.sample_rate));
    }
    if spec.channels != 1 {
        return Err(Error::ChannelCount(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Encoding(format!(
            "{:?} with {} bits per sample",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let expected = reader.len() as usize;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    if samples.len() != expected {
        return Err(Error::Wav {
            path: path.to_owned(),
            reason: format!("truncated: {} of {expected} samples", samples.len()),
        });
    }
    TimeSignal::new(samples)
}

/// Outcome of a 16-bit export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavExport {
    /// Largest absolute input sample; values above 1 were clipped.
    pub peak: f64,
    pub clipped: usize,
}

/// Writes samples as 16-bit PCM mono 16 kHz, clipping to the integer range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64]) -> Result<WavExport> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Encoding(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(to_io)?;
    let mut peak = 0.0f64;
    let mut clipped = 0;
    for &s in samples {
        peak = peak.max(s.abs());
        let scaled = (s * 32768.0).round();
        if !(-32768.0..=32767.0).contains(&scaled) {
            clipped += 1;
        }
        writer
            .write_sample(scaled.clamp(-32768.0, 32767.0) as i16)
            .map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)?;
    Ok(WavExport { peak, clipped })
}
