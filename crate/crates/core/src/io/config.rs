//! Run configuration for the `simulate` pipeline. Every field has a
//! default matching the published constants (scales {0.8, 0.9, 1, 1.1,
//! 1.2}, four flips, weak blur (21, 21), strong (13, 33) after odd
//! rounding, transition threshold 0.9, batch size 8), so a partial or
//! empty JSON object is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{json_error, IoError};
use crate::cloning::{BlurKind, BlurStrength};
use crate::fusion::FusionConfig;
use crate::selftrain::{CorruptionParams, LoopParams, SimDetectorConfig, WorldParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldParams,
    pub corruption: CorruptionParams,
    pub detector: SimDetectorConfig,
    pub fusion: FusionConfig,
    pub blur: BlurKind,
    #[serde(rename = "loop")]
    pub loop_params: LoopParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            world: WorldParams::default(),
            corruption: CorruptionParams::default(),
            detector: SimDetectorConfig::default(),
            fusion: FusionConfig::default(),
            blur: BlurKind::Weak,
            loop_params: LoopParams::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(json: &str) -> Result<RunConfig, IoError> {
        serde_json::from_str(json).map_err(|e| json_error(&e))
    }

    pub fn read(path: &Path) -> Result<RunConfig, IoError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn blur_strength(&self) -> BlurStrength {
        BlurStrength::from_kind(self.blur)
    }
}
