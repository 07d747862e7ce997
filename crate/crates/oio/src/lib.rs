//! Olfactory inertial odometry (OIO) toolkit.
//!
//! A deterministic, seedable simulator and algorithm library for odour-source
//! localization with a 5-DoF arm: fast-sampled olfaction readings are fused
//! with inertial kinematics, and three interchangeable navigation policies
//! (gradient following, RSSI belief maps, tabular RL) drive the effector to
//! the source. A trial harness runs seeded experiments and emits CSV/JSON
//! reports.

pub mod belief;
pub mod bout;
pub mod config;
pub mod fusion;
pub mod harness;
pub mod kinematics;
pub mod nav;
pub mod plume;
pub mod report;
pub mod sensors;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sensor not ready: {0}")]
    NotReady(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("no landmark available")]
    NoLandmark,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
