//! Cached offline synthesis, tied to the system it was computed for.

use std::fmt::Write as _;

use adaptive_mpc::model::{Mode, SystemConfig};
use adaptive_mpc::synthesis::TerminalIngredients;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Terminal ingredients plus the digest of the system they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub schema_version: u32,
    /// SHA-256 of the canonical JSON of the validated system description, so
    /// reformatting the config file keeps the artifact valid while any change
    /// that affects synthesis does not.
    pub config_digest: String,
    pub mode: Mode,
    pub terminal: TerminalIngredients,
}

pub fn system_digest(sys: &SystemConfig) -> String {
    let canonical = serde_json::to_vec(sys).expect("system description serializes");
    let hash = Sha256::digest(&canonical);
    let mut hex = String::with_capacity(64);
    for b in hash {
        write!(hex, "{b:02x}").expect("writing to a string");
    }
    hex
}

impl Artifact {
    pub fn new(sys: &SystemConfig, terminal: TerminalIngredients) -> Self {
        Self {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            config_digest: system_digest(sys),
            mode: sys.mode(),
            terminal,
        }
    }

    pub fn matches(&self, sys: &SystemConfig) -> bool {
        self.schema_version == ARTIFACT_SCHEMA_VERSION && self.config_digest == system_digest(sys)
    }
}
