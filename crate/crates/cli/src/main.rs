//! `tfdoa`: command-line front end for the wideband DoA toolkit.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tfdoa::angular_distance;
use tfdoa::criteria::{estimate_doa, save_spectrum_csv, Method};
use tfdoa::eval::{
    best_postproc, prepare_trial, run_experiment, run_sweep, trial_spectrum, write_report,
    EvalContext, ExperimentConfig, ExperimentSummary, SweepConfig,
};
use tfdoa::mask::PostProcKind;
use tfdoa::room::{
    default_image_order, sabine_absorption, schroeder_crossing, schroeder_decay_db, simulate_rir,
    RoomConfig, TapPlacement, ARRAY_CENTER, ROOM_DIMS,
};
use tfdoa::signal::write_wav;

#[derive(Parser)]
#[command(
    name = "tfdoa",
    version,
    about = "Wideband DoA estimation with time-frequency weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the speaker azimuth of one simulated trial and write its spectrum.
    Estimate(SpectrumArgs),
    /// Run one experiment configuration and write a report CSV.
    Eval(EvalArgs),
    /// Run a parameter sweep and write a report CSV.
    Sweep(EvalArgs),
    /// Write normalized pseudo-spectra of one trial (all methods by default).
    Spectrum(SpectrumArgs),
    /// Simulate a room impulse response; write it as WAV plus its Schroeder decay.
    Rir(RirArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Music,
    Principal,
    Srp,
    Proposed,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Music => vec![Method::Music],
            MethodArg::Principal => vec![Method::Principal],
            MethodArg::Srp => vec![Method::Srp],
            MethodArg::Proposed => vec![Method::Proposed],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

/// Overrides applied on top of a configuration file (or the defaults).
#[derive(Args, Clone)]
struct Overrides {
    /// Base seed of the trial generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Post-processing, e.g. `hadamard`, `bt:0.9`, `geo_mean`.
    #[arg(long)]
    postproc: Option<PostProcKind>,
    #[arg(long, allow_negative_numbers = true)]
    sir_db: Option<f64>,
    /// Signal-to-noise ratio; `inf` disables additive noise.
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    rt60: Option<f64>,
    /// Number of STFT frames per trial.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Number of interferers.
    #[arg(long)]
    interferers: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.postproc {
            cfg.postproc = v;
        }
        if let Some(v) = self.sir_db {
            cfg.sir_db = v;
        }
        if let Some(v) = self.snr_db {
            cfg.snr_db = v;
        }
        if let Some(v) = self.rt60 {
            cfg.rt60 = v;
        }
        if let Some(v) = self.frames {
            cfg.t_frames = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.interferers {
            cfg.k = v;
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment (or sweep) JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full per-trial summaries as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trial index within the configuration.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Spectrum CSV path; with several methods, `<stem>_<method>.csv` next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the sampled scenario as JSON.
    #[arg(long)]
    scenario_out: Option<PathBuf>,
    /// Write the rendered microphone mixtures as `mic<m>.wav` into this directory.
    #[arg(long)]
    wav_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum TapMode {
    Nearest,
    Frac,
}

#[derive(Args)]
struct RirArgs {
    #[arg(long, default_value_t = 0.3)]
    rt60: f64,
    /// Room dimensions `x,y,z` in metres.
    #[arg(long, value_parser = parse_point)]
    dims: Option<[f64; 3]>,
    /// Source position `x,y,z`; 2 m from the array centre along +x by default.
    #[arg(long, value_parser = parse_point)]
    src: Option<[f64; 3]>,
    /// Microphone position `x,y,z`; the array centre by default.
    #[arg(long, value_parser = parse_point)]
    mic: Option<[f64; 3]>,
    /// Image-source order; chosen from the reverberation time when absent.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_enum, default_value = "frac")]
    mode: TapMode,
    /// Scale the WAV to a peak of 0.99.
    #[arg(long)]
    normalize: bool,
    /// Output prefix: writes `<out>.wav` and `<out>_schroeder.csv`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected three comma-separated numbers, got '{s}'"))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_output(out: Option<&Path>, summaries: &[ExperimentSummary]) -> Result<()> {
    match out {
        Some(p) => {
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            write_report(&mut file, summaries)?;
            file.flush()?;
        }
        None => write_report(&mut std::io::stdout().lock(), summaries)?,
    }
    Ok(())
}

fn write_summary(path: Option<&Path>, summaries: &[ExperimentSummary]) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(summaries)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn log_summary(s: &ExperimentSummary) {
    eprintln!(
        "{} / {}: accuracy {:.3}, MAE {:.2} deg over {} trials ({:.1}s)",
        s.config.method,
        s.config.postproc,
        s.accuracy,
        s.mae_deg,
        s.trials.len(),
        s.wall_time_s
    );
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut base = load_config(args.config.as_deref())?;
    args.overrides.apply(&mut base);
    let methods = args
        .method
        .map_or_else(|| vec![base.method], MethodArg::methods);
    let mut summaries = Vec::new();
    for method in methods {
        let cfg = ExperimentConfig {
            method,
            ..base.clone()
        };
        let s = run_experiment(&cfg, args.workers)?;
        log_summary(&s);
        summaries.push(s);
    }
    write_output(args.out.as_deref(), &summaries)?;
    write_summary(args.summary.as_deref(), &summaries)
}

fn cmd_sweep(args: EvalArgs) -> Result<()> {
    let path = args.config.as_deref().context("sweep needs --config")?;
    let mut sweep =
        SweepConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    args.overrides.apply(&mut sweep.base);
    if let Some(m) = args.method {
        sweep.axes.method = Some(m.methods());
    }
    let summaries = run_sweep(&sweep, args.workers)?;
    summaries.iter().for_each(log_summary);
    write_output(args.out.as_deref(), &summaries)?;
    write_summary(args.summary.as_deref(), &summaries)
}

fn spectrum_path(out: &Path, method: Method, several: bool) -> PathBuf {
    if !several {
        return out.to_path_buf();
    }
    let stem = out
        .file_stem()
        .map_or_else(|| "spectrum".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_{}.csv", method.name()))
}

fn cmd_spectrum(args: SpectrumArgs, default_method: MethodArg) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    let method_arg = args.method.unwrap_or(default_method);
    cfg.validate()?;
    let ctx = EvalContext::new(cfg.grid_resolution)?;
    let data = prepare_trial(&cfg, &ctx, args.trial)?;
    if let Some(p) = &args.scenario_out {
        std::fs::write(p, data.scenario.to_json()?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(dir) = &args.wav_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (m, channel) in data.rendered.mixture.iter().enumerate() {
            let path = dir.join(format!("mic{}.wav", m + 1));
            let export = write_wav(&path, channel.samples())?;
            if export.clipped > 0 {
                eprintln!(
                    "{}: peak {:.3}, {} samples clipped",
                    path.display(),
                    export.peak,
                    export.clipped
                );
            }
        }
    }
    let methods = method_arg.methods();
    let several = methods.len() > 1;
    let theta_gt = data.theta_gt();
    for method in methods {
        let postproc = match (args.overrides.postproc, &args.config) {
            (Some(p), _) => p,
            (None, Some(_)) if !several => cfg.postproc,
            _ => best_postproc(method),
        };
        let spectrum = trial_spectrum(&data, &ctx, method, postproc)?;
        let theta_hat = estimate_doa(&spectrum, &ctx.grid)?;
        let err = angular_distance(theta_hat, theta_gt);
        println!(
            "{method} ({postproc}): theta_hat {theta_hat:.1} deg, theta_gt {theta_gt:.2} deg, error {err:.2} deg"
        );
        if let Some(out) = &args.out {
            let path = spectrum_path(out, method, several);
            save_spectrum_csv(&path, &spectrum, &ctx.grid)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn cmd_rir(args: RirArgs) -> Result<()> {
    let room = RoomConfig::new(args.dims.unwrap_or(ROOM_DIMS), args.rt60)?;
    let room = room.with_max_order(args.order.unwrap_or_else(|| default_image_order(&room)));
    let mic = args.mic.unwrap_or(ARRAY_CENTER);
    let src = args
        .src
        .unwrap_or([ARRAY_CENTER[0] + 2.0, ARRAY_CENTER[1], ARRAY_CENTER[2]]);
    let alpha = sabine_absorption(&room)?;
    let mode = match args.mode {
        TapMode::Nearest => TapPlacement::NearestSample,
        TapMode::Frac => TapPlacement::FracDelay,
    };
    let rir = simulate_rir(&room, src, mic, alpha, mode)?;
    let samples = rir.samples();

    let wav_path = args.out.with_extension("wav");
    let peak = samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let gain = if args.normalize && peak > 0.0 {
        0.99 / peak
    } else {
        1.0
    };
    let scaled: Vec<f64> = samples.iter().map(|&x| x * gain).collect();
    let export = write_wav(&wav_path, &scaled)?;
    if export.clipped > 0 {
        eprintln!(
            "warning: {} samples clipped; try --normalize",
            export.clipped
        );
    }

    let stem = args
        .out
        .file_name()
        .map_or_else(|| "rir".into(), |s| s.to_string_lossy().into_owned());
    let csv_path = args.out.with_file_name(format!("{stem}_schroeder.csv"));
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "time_s,decay_db")?;
    for (i, d) in schroeder_decay_db(samples).iter().enumerate() {
        if d.is_finite() {
            writeln!(csv, "{:.6},{:.6}", i as f64 / room.fs, d)?;
        }
    }
    csv.flush()?;

    let decay = schroeder_crossing(samples, room.fs, -60.0);
    println!(
        "absorption {alpha:.6}, image order {}, {} taps, -60 dB decay {}",
        room.max_image_order,
        samples.len(),
        decay.map_or_else(|| "not reached".to_string(), |t| format!("{t:.3} s"))
    );
    println!("wrote {} and {}", wav_path.display(), csv_path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Estimate(args) => {
            if matches!(args.method, Some(MethodArg::All)) && args.out.is_none() {
                bail!("--method all with estimate needs --out for the spectra, or use `spectrum`");
            }
            cmd_spectrum(args, MethodArg::Proposed)
        }
        Command::Spectrum(args) => {
            if args.out.is_none() {
                bail!("spectrum needs --out");
            }
            cmd_spectrum(args, MethodArg::All)
        }
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Rir(args) => cmd_rir(args),
    }
}
