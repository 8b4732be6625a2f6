//! Shoebox image-source room simulation, scenario sampling and multichannel
//! rendering with separate speech and non-speech images per microphone.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{angular_distance, rect_array, ArrayGeometry};
use crate::error::{Error, Result};
use crate::signal::{fft_convolve, mean_power, TimeSignal, SAMPLE_RATE};

pub const SABINE_CONSTANT: f64 = 0.161;
pub const DEFAULT_MAX_IMAGE_ORDER: usize = 20;
/// Length of the windowed-sinc fractional delay filter.
pub const FRAC_DELAY_TAPS: usize = 81;
pub const MIN_SOURCE_SEPARATION_DEG: f64 = 10.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

pub const ROOM_DIMS: [f64; 3] = [9.0, 7.0, 3.5];
pub const ARRAY_CENTER: [f64; 3] = [4.5, 3.5, 1.75];
pub const ARRAY_SPACING_M: f64 = 0.02;
pub const SOURCE_DISTANCE_RANGE: (f64, f64) = (1.0, 3.0);
pub const SOURCE_HEIGHT_RANGE: (f64, f64) = (1.0, 1.8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub dims: [f64; 3],
    pub rt60: f64,
    pub fs: f64,
    pub max_image_order: usize,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
}

fn default_speed() -> f64 {
    crate::array::DEFAULT_SPEED_OF_SOUND
}

impl RoomConfig {
    pub fn new(dims: [f64; 3], rt60: f64) -> Result<Self> {
        let room = Self {
            dims,
            rt60,
            fs: SAMPLE_RATE as f64,
            max_image_order: DEFAULT_MAX_IMAGE_ORDER,
            speed_of_sound: default_speed(),
        };
        room.validate()?;
        Ok(room)
    }

    pub fn with_max_order(mut self, order: usize) -> Self {
        self.max_image_order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid(format!("room dimensions {:?}", self.dims)));
        }
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            return Err(Error::invalid(format!("rt60 {}", self.rt60)));
        }
        if !(self.fs > 0.0) || !(self.speed_of_sound > 0.0) {
            return Err(Error::invalid(
                "sample rate and speed of sound must be positive",
            ));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(&c, &d)| c > 0.0 && c < d)
    }
}

/// Image order covering the mean number of wall reflections within one
/// reverberation time (`c·T60 / (4V/S)`), and at least the default of 20.
pub fn default_image_order(room: &RoomConfig) -> usize {
    let mean_free_path = 4.0 * room.volume() / room.surface();
    let reflections = (room.speed_of_sound * room.rt60 / mean_free_path).ceil() as usize;
    reflections.max(DEFAULT_MAX_IMAGE_ORDER)
}

/// Uniform wall energy absorption from Sabine's formula.
pub fn sabine_absorption(room: &RoomConfig) -> Result<f64> {
    room.validate()?;
    let alpha = SABINE_CONSTANT * room.volume() / (room.surface() * room.rt60);
    if alpha > 1.0 {
        return Err(Error::Absorption(alpha));
    }
    Ok(alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPlacement {
    /// Each image lands on its rounded sample index.
    NearestSample,
    /// Each image is spread by an 81-tap Hann-windowed sinc.
    FracDelay,
}

/// One image source: distance to the receiver and total wall reflections.
#[derive(Debug, Clone, Copy)]
struct Image {
    distance: f64,
    reflections: u32,
}

/// Per-axis image offsets `(signed displacement, reflections)` for image
/// indices within the order bound.
fn axis_images(length: f64, src: f64, mic: f64, order: i64) -> Vec<(f64, u32)> {
    let mut out = Vec::new();
    let span = order / 2 + 1;
    for n in -span..=span {
        for q in 0..=1i64 {
            let refl = (n - q).unsigned_abs() + n.unsigned_abs();
            if refl as i64 > order {
                continue;
            }
            let pos = 2.0 * n as f64 * length + (1 - 2 * q) as f64 * src;
            out.push((pos - mic, refl as u32));
        }
    }
    out
}

fn enumerate_images(room: &RoomConfig, src: [f64; 3], mic: [f64; 3]) -> Vec<Image> {
    let order = room.max_image_order as i64;
    let axes: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|k| axis_images(room.dims[k], src[k], mic[k], order))
        .collect();
    let mut images = Vec::new();
    for &(dx, rx) in &axes[0] {
        for &(dy, ry) in &axes[1] {
            if (rx + ry) as i64 > order {
                continue;
            }
            for &(dz, rz) in &axes[2] {
                let reflections = rx + ry + rz;
                if reflections as i64 > order {
                    continue;
                }
                images.push(Image {
                    distance: (dx * dx + dy * dy + dz * dz).sqrt(),
                    reflections,
                });
            }
        }
    }
    images
}

/// Adds `amp · hann_sinc(n − delay)` for the `2·half + 1` taps around
/// `delay`, stepping the sine and the window cosine by recurrence.
fn add_frac_delay(taps: &mut [f64], delay: f64, amp: f64, half: i64) {
    let half_width = half as f64 + 1.0;
    let base = delay.floor();
    let start = base as i64 - half;
    let x0 = start as f64 - delay;
    // sin(π(−half − frac)) = (−1)^half · sin(−π frac)
    let sign = if half % 2 == 0 { 1.0 } else { -1.0 };
    let mut sin_pi_x = sign * (-PI * (delay - base)).sin();
    let (mut ws, mut wc) = (PI * x0 / half_width).sin_cos();
    let (ds, dc) = (PI / half_width).sin_cos();
    for k in 0..=2 * half {
        let n = start + k;
        let x = x0 + k as f64;
        if n >= 0 && (n as usize) < taps.len() {
            let sinc = if x == 0.0 { 1.0 } else { sin_pi_x / (PI * x) };
            taps[n as usize] += amp * sinc * 0.5 * (1.0 + wc);
        }
        sin_pi_x = -sin_pi_x;
        (ws, wc) = (ws * dc + wc * ds, wc * dc - ws * ds);
    }
}

/// Allen–Berkley image-source RIR between `src` and `mic`.
///
/// Image amplitude is `β^reflections / (4π d)` with `β = sqrt(1 − α)`, and
/// delay `d / c`. Taps that would fall before sample 0 are dropped.
pub fn simulate_rir(
    room: &RoomConfig,
    src: [f64; 3],
    mic: [f64; 3],
    alpha: f64,
    mode: TapPlacement,
) -> Result<TimeSignal> {
    room.validate()?;
    for p in [src, mic] {
        if !room.contains(p) {
            return Err(Error::OutsideRoom(p));
        }
    }
    if src == mic {
        return Err(Error::invalid("source and microphone coincide"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("absorption {alpha} outside [0, 1]")));
    }
    let beta = (1.0 - alpha).sqrt();
    let mut images = enumerate_images(room, src, mic);
    // Fixed accumulation order independent of the enumeration.
    images.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.reflections.cmp(&b.reflections))
    });

    let samples_per_meter = room.fs / room.speed_of_sound;
    let half = (FRAC_DELAY_TAPS / 2) as i64;
    let max_delay = images
        .iter()
        .filter(|im| beta > 0.0 || im.reflections == 0)
        .map(|im| im.distance * samples_per_meter)
        .fold(0.0, f64::max);
    let len = max_delay.ceil() as usize + half as usize + 2;
    let mut taps = vec![0.0; len];

    for im in &images {
        let gain = beta.powi(im.reflections as i32);
        if gain == 0.0 {
            continue;
        }
        let amp = gain / (4.0 * PI * im.distance);
        let delay = im.distance * samples_per_meter;
        match mode {
            TapPlacement::NearestSample => taps[delay.round() as usize] += amp,
            TapPlacement::FracDelay => add_frac_delay(&mut taps, delay, amp, half),
        }
    }
    while taps.len() > 1 && *taps.last().unwrap() == 0.0 {
        taps.pop();
    }
    TimeSignal::new(taps)
}

/// Schroeder energy decay curve in dB relative to the total energy.
pub fn schroeder_decay_db(rir: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for i in (0..rir.len()).rev() {
        acc += rir[i] * rir[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| {
            if total > 0.0 && e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Time in seconds at which the Schroeder curve first reaches `level_db`
/// (a negative number), measured from the direct-path arrival.
pub fn schroeder_crossing(rir: &[f64], fs: f64, level_db: f64) -> Option<f64> {
    let onset = rir.iter().position(|&x| x != 0.0)?;
    let decay = schroeder_decay_db(rir);
    decay
        .iter()
        .position(|&d| d <= level_db)
        .map(|i| i.saturating_sub(onset) as f64 / fs)
}

/// Source placement relative to the array centre in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Horizontal distance to the array centre (m).
    pub r: f64,
    /// Azimuth in degrees.
    pub theta_deg: f64,
    /// Absolute height (m).
    pub z: f64,
}

impl Placement {
    pub fn position(&self, center: [f64; 3]) -> [f64; 3] {
        let th = self.theta_deg.to_radians();
        [
            center[0] + self.r * th.cos(),
            center[1] + self.r * th.sin(),
            self.z,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub rt60: f64,
    pub snr_db: f64,
    pub sir_db: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Overrides [`default_image_order`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_image_order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: RoomConfig,
    pub array: ArrayGeometry<f64>,
    pub speaker: Placement,
    pub interferers: Vec<Placement>,
    /// `+∞` (serialized as `null`) disables additive noise.
    #[serde(with = "crate::serde_db")]
    pub snr_db: f64,
    #[serde(with = "crate::serde_db")]
    pub sir_db: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn theta_gt(&self) -> f64 {
        self.speaker.theta_deg
    }

    pub fn array_center(&self) -> [f64; 3] {
        self.array.centroid()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// The evaluation room with the 3×3 array at its centre.
pub fn default_room_and_array(rt60: f64) -> Result<(RoomConfig, ArrayGeometry<f64>)> {
    Ok((
        RoomConfig::new(ROOM_DIMS, rt60)?,
        rect_array(3, 3, ARRAY_SPACING_M, ARRAY_CENTER)?,
    ))
}

/// Random speaker and `K` interferer placements with pairwise separation of
/// at least 10°; all angles are redrawn on rejection.
pub fn sample_scenario(params: &ScenarioParams, seed: u64) -> Result<Scenario> {
    let (room, array) = default_room_and_array(params.rt60)?;
    let room = room.with_max_order(
        params
            .max_image_order
            .unwrap_or_else(|| default_image_order(&room)),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = params.k + 1;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let placements: Vec<Placement> = (0..count)
            .map(|_| Placement {
                r: rng.random_range(SOURCE_DISTANCE_RANGE.0..=SOURCE_DISTANCE_RANGE.1),
                theta_deg: rng.random_range(0.0..360.0),
                z: rng.random_range(SOURCE_HEIGHT_RANGE.0..=SOURCE_HEIGHT_RANGE.1),
            })
            .collect();
        let separated = placements.iter().enumerate().all(|(i, a)| {
            placements[..i]
                .iter()
                .all(|b| angular_distance(a.theta_deg, b.theta_deg) >= MIN_SOURCE_SEPARATION_DEG)
        });
        if separated {
            return Ok(Scenario {
                room,
                array,
                speaker: placements[0],
                interferers: placements[1..].to_vec(),
                snr_db: params.snr_db,
                sir_db: params.sir_db,
                seed,
            });
        }
    }
    Err(Error::Placement(MAX_PLACEMENT_ATTEMPTS))
}

/// Rendered microphone signals with their speech and non-speech parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSignals {
    pub mixture: Vec<TimeSignal>,
    pub speech_images: Vec<TimeSignal>,
    pub nonspeech_images: Vec<TimeSignal>,
}

/// Per-source RIRs to every microphone.
pub fn scenario_rirs(
    sc: &Scenario,
    placement: &Placement,
    mode: TapPlacement,
) -> Result<Vec<TimeSignal>> {
    let alpha = sabine_absorption(&sc.room)?;
    let src = placement.position(sc.array_center());
    sc.array
        .positions()
        .iter()
        .map(|&mic| simulate_rir(&sc.room, src, mic, alpha, mode))
        .collect()
}

fn convolve_all(x: &TimeSignal, rirs: &[TimeSignal]) -> Vec<Vec<f64>> {
    rirs.iter()
        .map(|h| fft_convolve(x.samples(), h.samples(), x.len()))
        .collect()
}

/// Convolves each source with its RIRs, scales the interference to the
/// target SIR and adds white noise for the target SNR, both measured on the
/// images at microphone 0. `noise_seed` drives the noise generator.
pub fn render_scenario(
    sc: &Scenario,
    speech: &TimeSignal,
    interference: &[TimeSignal],
    noise_seed: u64,
) -> Result<RenderedSignals> {
    if interference.len() != sc.interferers.len() {
        return Err(Error::invalid(format!(
            "{} interference signals for {} interferers",
            interference.len(),
            sc.interferers.len()
        )));
    }
    let n = speech.len();
    if interference.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("source signals differ in length"));
    }
    let mics = sc.array.len();
    let mode = TapPlacement::FracDelay;

    let speech_img = convolve_all(speech, &scenario_rirs(sc, &sc.speaker, mode)?);
    let p_speech = mean_power(&speech_img[0]);
    if !(p_speech > 0.0) {
        return Err(Error::SilentSpeech);
    }

    let mut nonspeech = vec![vec![0.0; n]; mics];
    if !interference.is_empty() {
        let mut interf = vec![vec![0.0; n]; mics];
        for (sig, place) in interference.iter().zip(&sc.interferers) {
            let img = convolve_all(sig, &scenario_rirs(sc, place, mode)?);
            let p = mean_power(&img[0]);
            if p > 0.0 {
                let g = p.sqrt().recip();
                for (acc, ch) in interf.iter_mut().zip(&img) {
                    for (a, v) in acc.iter_mut().zip(ch) {
                        *a += g * v;
                    }
                }
            }
        }
        let p_interf = mean_power(&interf[0]);
        if p_interf > 0.0 {
            let g = (p_speech / (p_interf * db_to_power(sc.sir_db))).sqrt();
            for (acc, ch) in nonspeech.iter_mut().zip(&interf) {
                for (a, v) in acc.iter_mut().zip(ch) {
                    *a += g * v;
                }
            }
        }
    }

    if sc.snr_db.is_finite() {
        let sigma = (p_speech / db_to_power(sc.snr_db)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for ch in nonspeech.iter_mut() {
            for a in ch.iter_mut() {
                *a += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    } else if sc.snr_db < 0.0 {
        return Err(Error::invalid("SNR of -inf"));
    }

    let mixture = speech_img
        .iter()
        .zip(&nonspeech)
        .map(|(s, v)| TimeSignal::new(s.iter().zip(v).map(|(a, b)| a + b).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedSignals {
        mixture,
        speech_images: speech_img
            .into_iter()
            .map(TimeSignal::new)
            .collect::<Result<_>>()?,
        nonspeech_images: nonspeech
            .into_iter()
            .map(TimeSignal::new)
            .collect::<Result<_>>()?,
    })
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
