//! Wideband direction-of-arrival estimation guided by time-frequency weights.
//!
//! The estimation code ([`criteria`], [`linalg`], [`array`], [`mask`]) is
//! generic over a [`Real`] scalar (`f32` or `f64`); the room simulator and
//! Monte-Carlo harness run in `f64`. Type aliases for the common
//! double-precision instantiations are exported at the crate root.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod criteria;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mask;
pub mod room;
mod scalar;
pub mod signal;

pub use error::{Error, Result};
pub use scalar::{Cplx, Real};

pub use array::{angular_distance, build_steering_field, rect_array, steering_vector, AngleGrid};
pub use criteria::{
    compute_norm_scm, compute_wscm, eq5_residual, estimate_doa, spatial_spectrum, spectrum_music,
    spectrum_principal, spectrum_proposed, spectrum_srp, Method,
};
pub use eval::{
    run_experiment, run_sweep, run_trial, ExperimentConfig, ExperimentSummary, SweepConfig,
    TrialResult,
};
pub use mask::{oracle_irm, post_process, PostProcKind};
pub use signal::{compute_stft, stack_snapshots, StftConfig, TimeSignal};

pub type C64 = num_complex::Complex<f64>;
pub type C32 = num_complex::Complex<f32>;

pub type SnapshotTensor64 = signal::SnapshotTensor<f64>;
pub type SnapshotTensor32 = signal::SnapshotTensor<f32>;
pub type MaskTensor64 = mask::MaskTensor<f64>;
pub type MaskTensor32 = mask::MaskTensor<f32>;
pub type SteeringField64 = array::SteeringField<f64>;
pub type SteeringField32 = array::SteeringField<f32>;
pub type ArrayGeometry64 = array::ArrayGeometry<f64>;
pub type ArrayGeometry32 = array::ArrayGeometry<f32>;
pub type EigenBasis64 = linalg::EigenBasis<f64>;
pub type Wscm64 = criteria::Wscm<f64>;
pub type NormScm64 = criteria::NormScm<f64>;
pub type SpatialSpectrum64 = criteria::SpatialSpectrum<f64>;
pub type SpatialSpectrum32 = criteria::SpatialSpectrum<f32>;

/// `f64` fields where `+∞` round-trips through JSON as `null`.
pub(crate) mod serde_db {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if *x > 0.0 {
            s.serialize_none()
        } else {
            Err(serde::ser::Error::custom("only +inf may be serialized"))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
