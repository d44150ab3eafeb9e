//! Configuration-driven experiment runner for `rsgda`.

pub mod config;
pub mod experiments;
pub mod output;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RSGDA_OUT_DIR";
