//! File formats, the model container and the batch workflows behind the
//! `udmorph` command.

pub mod commands;
pub mod config;
pub mod container;
pub mod formats;

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `version=.. config=.. seed=..` fields written into every output.
pub fn provenance(config_hash: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!("version={VERSION} config={config_hash} seed={seed}")
}

/// The comment line form of [`provenance`].
pub fn provenance_header(fields: &str) -> String {
    format!("# generated-by = {fields}")
}
