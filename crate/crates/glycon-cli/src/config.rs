use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use glycon::retro::RetroConfig;
use glycon::trial::TrialConfig;

pub const TRIAL_SCHEMA_VERSION: u32 = 1;

/// On-disk trial configuration: the trial parameters plus the protocol
/// tables to pair against. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialFile {
    pub schema_version: u32,
    /// Protocol tables, relative to this file's directory.
    pub protocols: Vec<PathBuf>,
    pub trial: TrialConfig,
}

impl TrialFile {
    pub fn load(path: &Path) -> Result<(Self, String), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let file: TrialFile =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if file.schema_version != TRIAL_SCHEMA_VERSION {
            return Err(format!(
                "{}: schema_version {} unsupported (expected {TRIAL_SCHEMA_VERSION})",
                path.display(),
                file.schema_version
            ));
        }
        if file.protocols.is_empty() {
            return Err(format!("{}: no protocols listed", path.display()));
        }
        file.trial.validate().map_err(|e| e.to_string())?;
        Ok((file, text))
    }

    /// Protocol paths resolved against the config file's directory.
    pub fn protocol_paths(&self, config_path: &Path) -> Vec<PathBuf> {
        let base = config_path.parent().unwrap_or_else(|| Path::new("."));
        self.protocols
            .iter()
            .map(|p| if p.is_absolute() { p.clone() } else { base.join(p) })
            .collect()
    }
}

/// Optional retro replay configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetroFile {
    pub retro: RetroConfig,
}

impl RetroFile {
    pub fn load(path: &Path) -> Result<(Self, String), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let file: RetroFile =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok((file, text))
    }
}
