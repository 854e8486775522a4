use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;
use crate::output::Provenance;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub resolved_config: Value,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    /// Git-style SHA-256 blob id of the config file, or of the resolved
    /// config when no file was given.
    pub config_hash: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            master_seed: self.master_seed,
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn write(&self) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&path, &(body + "\n"))?;
        Ok(path)
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
