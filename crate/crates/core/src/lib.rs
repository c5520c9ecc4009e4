//! Differentially private set union over user item sets.
//!
//! Users add weight to a histogram one at a time under a bounded-sensitivity
//! update policy; noise is added and items above a calibrated threshold are
//! released.

pub mod calibration;
pub mod error;
pub mod experiments;
pub mod histogram;
pub mod ingestion;
pub mod model;
pub mod policies;
pub mod release;
pub mod sensitivity;
pub mod streams;

pub use calibration::{calibrate, CalibrationResult};
pub use error::{DpsuError, Result};
pub use histogram::build_histogram;
pub use model::{
    Database, Item, ItemSet, Mechanism, MechanismConfig, NoiseFamily, Norm, PrivacyParams,
    UserRecord, WeightedHistogram, EPS_BUDGET,
};
pub use policies::{PolicyKind, UpdatePolicy};
pub use release::{run_dpsu, NoiseKind, NoiseSpec, ReleaseReport};
