//! Command implementations behind the `wotnet` binary.

pub mod bench;
pub mod demo;
pub mod repo;
pub mod sim;

use std::path::PathBuf;

/// Environment variable naming the default directory for generated files.
pub const OUT_DIR_ENV: &str = "WOTNET_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}
