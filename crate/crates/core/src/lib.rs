//! Decentralized device-to-device web of trust.
//!
//! Devices certify each other's keys in proximity, propagate certificates
//! through pairwise synchronization, and derive a local trust level for every
//! key they hold. The crate also contains a deterministic mobility simulator
//! used to study how trust, bandwidth and storage evolve in a population of
//! moving devices.

pub mod keystore;
pub mod model;
pub mod protocol;
pub mod trust;
pub mod sim;
