//! Monte-Carlo trial runner, parameter sweeps and CSV reports.
//!
//! A trial samples a scenario, synthesizes the speaker and interferers,
//! renders the room, takes the first `T_frames` STFT frames, builds the
//! weights, scores the grid with one criterion and compares the peak with
//! the ground-truth azimuth.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{angular_distance, build_steering_field, AngleGrid, SteeringField};
use crate::criteria::{estimate_doa, spatial_spectrum, Method, SpatialSpectrum};
use crate::error::{Error, Result};
use crate::mask::{load_mask, oracle_irm, post_process, MaskTensor, PostProcKind};
use crate::room::{render_scenario, sample_scenario, RenderedSignals, Scenario, ScenarioParams};
use crate::signal::{
    compute_stft, load_wav, mean_power, stack_snapshots, synth_interference, synth_speech_like,
    InterferenceKind, SnapshotTensor, StftConfig, TimeSignal, SAMPLE_RATE,
};

/// A trial succeeds when the absolute error is strictly below this.
pub const SUCCESS_THRESHOLD_DEG: f64 = 3.0;

/// Where the raw per-microphone weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Ratio mask from the simulator's separate speech/non-speech images.
    Oracle,
    /// `TFW1` files; `{trial}` in the path is replaced by the trial index.
    File(PathBuf),
    /// All-ones weights.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub postproc: PostProcKind,
    pub mask_source: MaskSource,
    pub rt60: f64,
    #[serde(with = "crate::serde_db")]
    pub snr_db: f64,
    #[serde(with = "crate::serde_db")]
    pub sir_db: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T_frames")]
    pub t_frames: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub grid_resolution: f64,
    /// Image-source order; chosen from the reverberation time when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_image_order: Option<usize>,
    /// Mono 16 kHz WAV files replacing the synthetic speaker; one is drawn
    /// per trial.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub speech_files: Vec<PathBuf>,
    /// WAV files replacing the synthetic interferers; one is drawn per
    /// interferer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interference_files: Vec<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Proposed,
            postproc: PostProcKind::Hadamard,
            mask_source: MaskSource::Oracle,
            rt60: 0.3,
            snr_db: 20.0,
            sir_db: 0.0,
            k: 2,
            t_frames: 50,
            trials: 200,
            base_seed: 0,
            grid_resolution: 0.5,
            max_image_order: None,
            speech_files: Vec::new(),
            interference_files: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.t_frames == 0 {
            return Err(Error::invalid("T_frames must be at least 1"));
        }
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            return Err(Error::invalid(format!("rt60 {}", self.rt60)));
        }
        if self.snr_db.is_nan() || self.sir_db.is_nan() || self.sir_db.is_infinite() {
            return Err(Error::invalid("SNR/SIR must be numbers (SNR may be +inf)"));
        }
        if self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("SNR of -inf"));
        }
        self.postproc.validate()?;
        AngleGrid::new(self.grid_resolution)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams {
            rt60: self.rt60,
            snr_db: self.snr_db,
            sir_db: self.sir_db,
            k: self.k,
            max_image_order: self.max_image_order,
        }
    }
}

/// The post-processing each criterion performs best with: thresholding at
/// 0.9 for the subspace methods, the Hadamard product otherwise.
pub fn best_postproc(method: Method) -> PostProcKind {
    match method {
        Method::Music | Method::Principal => PostProcKind::BinaryThreshold(0.9),
        Method::Srp | Method::Proposed => PostProcKind::Hadamard,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: u64,
    pub theta_hat: f64,
    pub theta_gt: f64,
    pub abs_error_deg: f64,
    pub success: bool,
}

pub fn is_success(abs_error_deg: f64) -> bool {
    abs_error_deg < SUCCESS_THRESHOLD_DEG
}

impl TrialResult {
    pub fn new(trial_index: u64, theta_hat: f64, theta_gt: f64) -> Self {
        let abs_error_deg = angular_distance(theta_hat, theta_gt);
        Self {
            trial_index,
            theta_hat,
            theta_gt,
            abs_error_deg,
            success: is_success(abs_error_deg),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub accuracy: f64,
    pub mae_deg: f64,
    pub trials: Vec<TrialResult>,
    /// Excluded from equality.
    pub wall_time_s: f64,
}

impl PartialEq for ExperimentSummary {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.accuracy == other.accuracy
            && self.mae_deg == other.mae_deg
            && self.trials == other.trials
    }
}

impl ExperimentSummary {
    pub fn from_trials(
        config: ExperimentConfig,
        trials: Vec<TrialResult>,
        wall_time_s: f64,
    ) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::invalid("no trials"));
        }
        let c = trials.len() as f64;
        let successes = trials.iter().filter(|t| t.success).count();
        let mae_deg = trials.iter().map(|t| t.abs_error_deg).sum::<f64>() / c;
        Ok(Self {
            config,
            accuracy: successes as f64 / c,
            mae_deg,
            trials,
            wall_time_s,
        })
    }

    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.success).count()
    }
}

/// Grid, steering field and STFT settings shared by all trials of a run.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub stft: StftConfig,
    pub grid: AngleGrid,
    pub field: SteeringField<f64>,
}

impl EvalContext {
    pub fn new(grid_resolution: f64) -> Result<Self> {
        let stft = StftConfig::default();
        let grid = AngleGrid::new(grid_resolution)?;
        let (_, array) = crate::room::default_room_and_array(1.0)?;
        let freqs: Vec<f64> = stft
            .retained_bins()
            .iter()
            .map(|&k| stft.bin_frequency(k))
            .collect();
        let field = build_steering_field(&array, &grid, &freqs)?;
        Ok(Self { stft, grid, field })
    }
}

/// Everything about one trial up to (but excluding) post-processing.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub index: u64,
    pub scenario: Scenario,
    pub rendered: RenderedSignals,
    pub snapshots: SnapshotTensor<f64>,
    /// Raw per-microphone weights before post-processing.
    pub raw_mask: MaskTensor<f64>,
}

impl TrialData {
    pub fn theta_gt(&self) -> f64 {
        self.scenario.theta_gt()
    }
}

/// Independent per-trial seeds: the ChaCha stream selected by the trial index
/// under the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub scenario: u64,
    pub speech: u64,
    pub noise: u64,
    pub interference: u64,
}

impl TrialSeeds {
    pub fn derive(base_seed: u64, trial_index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(base_seed);
        rng.set_stream(trial_index);
        Self {
            scenario: rng.random(),
            speech: rng.random(),
            noise: rng.random(),
            interference: rng.random(),
        }
    }
}

fn multichannel_stft(
    channels: &[TimeSignal],
    stft: &StftConfig,
    len: usize,
) -> Result<SnapshotTensor<f64>> {
    let specs = channels
        .iter()
        .map(|ch| compute_stft(&ch.fit_to(len), stft))
        .collect::<Result<Vec<_>>>()?;
    stack_snapshots(&specs)
}

fn expand_trial_path(template: &Path, index: u64) -> PathBuf {
    PathBuf::from(
        template
            .to_string_lossy()
            .replace("{trial}", &index.to_string()),
    )
}

/// Renders trial `index` and computes snapshots and raw weights.
pub fn prepare_trial(cfg: &ExperimentConfig, ctx: &EvalContext, index: u64) -> Result<TrialData> {
    let tag = |e: Error| Error::Trial {
        index,
        source: Box::new(e),
    };
    prepare_inner(cfg, ctx, index).map_err(tag)
}

/// A uniformly drawn file, looped or cut to `len` samples and scaled to unit
/// power.
fn corpus_clip(files: &[PathBuf], rng: &mut ChaCha20Rng, len: usize) -> Result<TimeSignal> {
    let path = &files[rng.random_range(0..files.len())];
    let source = load_wav(path)?;
    if source.is_empty() {
        return Err(Error::Wav {
            path: path.clone(),
            reason: "no samples".into(),
        });
    }
    let clip: Vec<f64> = source.samples().iter().copied().cycle().take(len).collect();
    let power = mean_power(&clip);
    let gain = if power > 0.0 {
        power.sqrt().recip()
    } else {
        1.0
    };
    TimeSignal::new(clip.into_iter().map(|x| x * gain).collect())
}

fn prepare_inner(cfg: &ExperimentConfig, ctx: &EvalContext, index: u64) -> Result<TrialData> {
    let seeds = TrialSeeds::derive(cfg.base_seed, index);
    let scenario = sample_scenario(&cfg.scenario_params(), seeds.scenario)?;
    let len = ctx.stft.samples_for_frames(cfg.t_frames);
    let duration = len as f64 / SAMPLE_RATE as f64;

    let speech = if cfg.speech_files.is_empty() {
        synth_speech_like(seeds.speech, duration)?
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seeds.speech);
        corpus_clip(&cfg.speech_files, &mut rng, len)?
    };
    let mut kind_rng = ChaCha20Rng::seed_from_u64(seeds.interference);
    let interference = (0..cfg.k)
        .map(|_| {
            if cfg.interference_files.is_empty() {
                let kind =
                    InterferenceKind::ALL[kind_rng.random_range(0..InterferenceKind::ALL.len())];
                synth_interference(kind, kind_rng.random(), duration)
            } else {
                corpus_clip(&cfg.interference_files, &mut kind_rng, len)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let rendered = render_scenario(&scenario, &speech, &interference, seeds.noise)?;

    let snapshots = multichannel_stft(&rendered.mixture, &ctx.stft, len)?;
    let raw_mask = match &cfg.mask_source {
        MaskSource::Constant => MaskTensor::ones(snapshots.shape()),
        MaskSource::Oracle => {
            let s = multichannel_stft(&rendered.speech_images, &ctx.stft, len)?;
            let n = multichannel_stft(&rendered.nonspeech_images, &ctx.stft, len)?;
            oracle_irm(&s, &n)?
        }
        MaskSource::File(template) => {
            load_mask(expand_trial_path(template, index), snapshots.shape())?
        }
    };
    Ok(TrialData {
        index,
        scenario,
        rendered,
        snapshots,
        raw_mask,
    })
}

/// Spectrum of `method` for a prepared trial under `postproc`.
pub fn trial_spectrum(
    data: &TrialData,
    ctx: &EvalContext,
    method: Method,
    postproc: PostProcKind,
) -> Result<SpatialSpectrum<f64>> {
    let w = post_process(postproc, &data.raw_mask)?;
    spatial_spectrum(method, &data.snapshots, &w, &ctx.field)
}

/// Scores a prepared trial with one criterion.
pub fn evaluate_trial(
    data: &TrialData,
    ctx: &EvalContext,
    method: Method,
    postproc: PostProcKind,
) -> Result<TrialResult> {
    let spectrum = trial_spectrum(data, ctx, method, postproc).map_err(|e| Error::Trial {
        index: data.index,
        source: Box::new(e),
    })?;
    let theta_hat = estimate_doa(&spectrum, &ctx.grid)?;
    Ok(TrialResult::new(data.index, theta_hat, data.theta_gt()))
}

pub fn run_trial(cfg: &ExperimentConfig, trial_index: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let ctx = EvalContext::new(cfg.grid_resolution)?;
    run_trial_in(cfg, &ctx, trial_index)
}

pub fn run_trial_in(
    cfg: &ExperimentConfig,
    ctx: &EvalContext,
    trial_index: u64,
) -> Result<TrialResult> {
    let data = prepare_trial(cfg, ctx, trial_index)?;
    evaluate_trial(&data, ctx, cfg.method, cfg.postproc)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// Runs trials `0..C` on up to `workers` threads (0 = all cores).
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let ctx = EvalContext::new(cfg.grid_resolution)?;
    let trials = thread_pool(workers)?.install(|| {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|i| run_trial_in(cfg, &ctx, i))
            .collect::<Result<Vec<_>>>()
    })?;
    ExperimentSummary::from_trials(cfg.clone(), trials, start.elapsed().as_secs_f64())
}

/// Axes of a Cartesian sweep; an absent axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub sir_db: Option<Vec<f64>>,
    pub rt60: Option<Vec<f64>>,
    pub snr_db: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Option<Vec<usize>>,
    #[serde(rename = "T_frames")]
    pub t_frames: Option<Vec<usize>>,
    pub postproc: Option<Vec<PostProcKind>>,
    pub method: Option<Vec<Method>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub axes: SweepAxes,
    /// Replace `postproc` with [`best_postproc`] for each method.
    #[serde(default)]
    pub best_postproc_per_method: bool,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Configurations in axis order sir, rt60, snr, K, T, postproc, method
    /// (the last varies fastest).
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        fn axis<T: Clone>(values: &Option<Vec<T>>, base: T, name: &str) -> Result<Vec<T>> {
            match values {
                None => Ok(vec![base]),
                Some(v) if v.is_empty() => {
                    Err(Error::invalid(format!("sweep axis '{name}' is empty")))
                }
                Some(v) => Ok(v.clone()),
            }
        }
        let a = &self.axes;
        let b = &self.base;
        let mut out = Vec::new();
        for &sir in &axis(&a.sir_db, b.sir_db, "sir_db")? {
            for &rt60 in &axis(&a.rt60, b.rt60, "rt60")? {
                for &snr in &axis(&a.snr_db, b.snr_db, "snr_db")? {
                    for &k in &axis(&a.k, b.k, "K")? {
                        for &t in &axis(&a.t_frames, b.t_frames, "T_frames")? {
                            for &pp in &axis(&a.postproc, b.postproc, "postproc")? {
                                for &method in &axis(&a.method, b.method, "method")? {
                                    let cfg = ExperimentConfig {
                                        sir_db: sir,
                                        rt60,
                                        snr_db: snr,
                                        k,
                                        t_frames: t,
                                        postproc: if self.best_postproc_per_method {
                                            best_postproc(method)
                                        } else {
                                            pp
                                        },
                                        method,
                                        ..b.clone()
                                    };
                                    cfg.validate()?;
                                    out.push(cfg);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn run_sweep(sweep: &SweepConfig, workers: usize) -> Result<Vec<ExperimentSummary>> {
    sweep
        .expand()?
        .iter()
        .map(|cfg| run_experiment(cfg, workers))
        .collect()
}

pub const REPORT_HEADER: &str =
    "method,postproc,rt60_s,snr_db,sir_db,K,T,trials,accuracy,mae_deg,seed";

fn fmt_db(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.6}")
    }
}

pub fn write_report(out: &mut impl Write, summaries: &[ExperimentSummary]) -> Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for s in summaries {
        let c = &s.config;
        writeln!(
            out,
            "{},{},{:.6},{},{},{},{},{},{:.6},{:.6},{}",
            c.method,
            c.postproc,
            c.rt60,
            fmt_db(c.snr_db),
            fmt_db(c.sir_db),
            c.k,
            c.t_frames,
            s.trials.len(),
            s.accuracy,
            s.mae_deg,
            c.base_seed
        )?;
    }
    Ok(())
}

pub fn emit_report(summaries: &[ExperimentSummary], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_report(&mut out, summaries)?;
    out.flush()?;
    Ok(())
}
