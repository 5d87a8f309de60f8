use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub resolved_config: ResolvedConfig,
}

/// SHA-256 of the compact JSON form of the resolved configuration. Field
/// order is fixed by the struct layout and floats print in shortest
/// round-trip form, so equal configurations hash equally everywhere.
pub fn config_digest(cfg: &ResolvedConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("configuration serializes");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ResolvedConfig, started: DateTime<Utc>) -> Self {
        Self {
            command: command.into(),
            config_digest: config_digest(cfg),
            master_seed: cfg.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: timestamp(started),
            finished_at: timestamp(Utc::now()),
            resolved_config: cfg.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// `results.csv` → `results.csv.manifest.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = ResolvedConfig::from_preset("paper-example", 1).unwrap();
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
        b.seed = 2;
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("/tmp/x/out.csv")), PathBuf::from("/tmp/x/out.csv.manifest.json"));
    }
}
