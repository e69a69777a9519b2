//! Experiment config: a TOML document naming the kind, the seed, the
//! output directory, and a kind-specific parameter table.

use std::path::PathBuf;

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the `--out` flag overrides it.
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: toml::Table,
}

pub const KINDS: &[&str] = &[
    "maximal",
    "potential",
    "capacity",
    "weak_type",
    "truncation",
    "exhaustion",
    "area",
    "chain_checks",
    "identity_checks",
];

pub fn parse(text: &str) -> Result<ExperimentConfig, Failure> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Failure::Input(format!("malformed config: {e}")))?;
    if !KINDS.contains(&cfg.kind.as_str()) {
        return Err(Failure::Input(format!(
            "unknown experiment kind '{}'; available: {}",
            cfg.kind,
            KINDS.join(", ")
        )));
    }
    Ok(cfg)
}

/// Decode the parameter table into a kind-specific record, keeping the
/// field name in the diagnostic.
pub fn params<T: serde::de::DeserializeOwned>(table: &toml::Table) -> Result<T, Failure> {
    table
        .clone()
        .try_into()
        .map_err(|e| Failure::Input(format!("bad params: {e}")))
}
