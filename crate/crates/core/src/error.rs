use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("no frequency bins inside the band [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),

    #[error("unsupported channel count {0} (expected mono)")]
    ChannelCount(u16),

    #[error("unsupported WAV encoding: {0}")]
    Encoding(String),

    #[error("malformed WAV file {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("mask file: {0}")]
    MaskFormat(String),

    #[error("mask dimensions {found:?} do not match expected {expected:?}")]
    MaskDims {
        found: (usize, usize, usize),
        expected: (usize, usize, usize),
    },

    #[error("mask value {value} at (m={}, t={}, f={}) outside [0, 1]", .index.0, .index.1, .index.2)]
    MaskValue {
        value: f64,
        index: (usize, usize, usize),
    },

    #[error("matrix is not Hermitian (max asymmetry {asym:e}, scale {scale:e})")]
    NotHermitian { asym: f64, scale: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("absorption coefficient {0:.4} exceeds 1; room too small for the requested RT60")]
    Absorption(f64),

    #[error("position {0:?} lies outside the room")]
    OutsideRoom([f64; 3]),

    #[error("could not place sources with the required separation after {0} attempts")]
    Placement(usize),

    #[error("speech image at the reference microphone is silent")]
    SilentSpeech,

    #[error("trial {index}: {source}")]
    Trial {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
