use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Reproduction record: written atomically before any results so a run can
/// always be re-created from its seed and config hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub config_sha256: String,
    pub root_seed: u64,
    pub created_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, root_seed: u64, outputs: Vec<String>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        Self {
            schema_version: 1,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: format!("{:x}", hasher.finalize()),
            root_seed,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs,
        }
    }

    /// Write via a temp file and rename, so a manifest is never partial.
    pub fn write_atomic(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let tmp = out_dir.join(".manifest.json.tmp");
        let final_path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
        std::fs::write(&tmp, text + "\n")?;
        std::fs::rename(&tmp, &final_path)?;
        Ok(())
    }
}
