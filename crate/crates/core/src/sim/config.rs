use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::keystore::{generate_keypair, issue_certificate};
use crate::model::{Algorithm, CryptoMode, TrustConfig};

/// Parameters of one simulation run. Field names double as the keys of a
/// scenario file (TOML); omitted keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub num_nodes: usize,
    pub duration_s: u64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub tx_range_m: f64,
    pub tx_rate_bps: u64,
    pub buffer_bytes: u64,
    pub sync_interval_s: u64,
    /// Length of one fixed time step.
    pub step_ms: u64,
    pub sample_interval_s: u64,
    pub trust: TrustConfig,
    pub seed: u64,
    pub crypto_mode: CryptoMode,
}

impl Default for SimConfig {
    /// The full-scale evaluation setup.
    fn default() -> Self {
        SimConfig {
            width_m: 3000.0,
            height_m: 3000.0,
            num_nodes: 120,
            duration_s: 43_200,
            speed_min_mps: 0.5,
            speed_max_mps: 1.5,
            tx_range_m: 10.0,
            tx_rate_bps: 2_000_000,
            buffer_bytes: 20_000_000,
            sync_interval_s: 10,
            step_ms: 1000,
            sample_interval_s: 60,
            trust: TrustConfig::default(),
            seed: 1,
            crypto_mode: CryptoMode::SizeModel,
        }
    }
}

impl SimConfig {
    /// Scaled-down scenario that runs in seconds: 40 nodes on 1000 x 1000 m
    /// for two simulated hours, other parameters unchanged.
    pub fn desk() -> Self {
        SimConfig {
            width_m: 1000.0,
            height_m: 1000.0,
            num_nodes: 40,
            duration_s: 7200,
            ..SimConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.width_m) || !finite_pos(self.height_m) {
            return bad("world dimensions must be positive");
        }
        if self.num_nodes == 0 {
            return bad("num_nodes must be positive");
        }
        if self.duration_s == 0 || self.step_ms == 0 || self.sample_interval_s == 0 || self.sync_interval_s == 0 {
            return bad("durations and intervals must be positive");
        }
        if (self.sample_interval_s * 1000) % self.step_ms != 0 {
            return bad("sample interval must be a whole number of steps");
        }
        if !(self.speed_min_mps.is_finite() && self.speed_max_mps.is_finite())
            || self.speed_min_mps <= 0.0
            || self.speed_min_mps > self.speed_max_mps
        {
            return bad("speeds must satisfy 0 < speed_min <= speed_max");
        }
        if !finite_pos(self.tx_range_m) || self.tx_rate_bps == 0 || self.buffer_bytes == 0 {
            return bad("range, rate and buffer must be positive");
        }
        self.trust.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))
    }
}

/// Encoded lengths used for placeholder keys and signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub public_key_len: usize,
    pub signature_len: usize,
}

/// Per-algorithm lengths measured from real keys, stored as TOML:
///
/// ```toml
/// [rsa2048]
/// public_key_len = 295
/// signature_len = 256
///
/// [ecdsa-p256]
/// public_key_len = 92
/// signature_len = 64
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub rsa2048: SizeEntry,
    #[serde(rename = "ecdsa-p256")]
    pub ecdsa_p256: SizeEntry,
}

impl Calibration {
    /// Generates one real key pair per algorithm and records the lengths.
    pub fn measure() -> Result<Self, SimError> {
        let entry = |alg: Algorithm| -> Result<SizeEntry, SimError> {
            let a = generate_keypair(alg, Some(1)).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            let b = generate_keypair(alg, Some(2)).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            let cert = issue_certificate(&a, b.public(), 0).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            Ok(SizeEntry {
                public_key_len: a.public().len(),
                signature_len: cert.sig.len(),
            })
        };
        Ok(Calibration {
            rsa2048: entry(Algorithm::Rsa2048)?,
            ecdsa_p256: entry(Algorithm::EcdsaP256)?,
        })
    }

    pub fn get(&self, alg: Algorithm) -> SizeEntry {
        match alg {
            Algorithm::Rsa2048 => self.rsa2048,
            Algorithm::EcdsaP256 => self.ecdsa_p256,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SimError::MissingCalibration,
            _ => SimError::Io(e),
        })?;
        toml::from_str(&text).map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }
}
