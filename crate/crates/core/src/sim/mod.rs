//! Deterministic mobility simulator.
//!
//! Devices move by random waypoint inside a rectangle. Pairs that come into
//! radio range shake hands once and then resynchronize at a fixed interval
//! while they stay together. A sync takes air time proportional to its size
//! and is lost if the pair separates first. Metrics are sampled at a fixed
//! cadence and can be exported as CSV.

mod config;
mod engine;
mod metrics;
mod mobility;

use thiserror::Error;

use crate::protocol::ProtocolError;

pub use config::{Calibration, SimConfig, SizeEntry};
pub use engine::{derive_seed, run, Simulation};
pub use metrics::{export_metrics, MetricsLog, Sample};
pub use mobility::{contacts, contacts_brute_force, rwp_step, Area, Motion, Pos};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("size-model run needs a calibration file")]
    MissingCalibration,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}
