//! Preset storage format and the minimal analysis vector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bounds::BoundsConfig;
use super::layout::{minimal_indices, DELAY_LOG_ETA, NUM_LOGITS, NUM_MINIMAL};
use crate::error::{Error, Result};

pub const PRESET_VERSION: u32 = 1;

/// Logit used for the delay damping when presets are rebuilt from minimal vectors; it decodes
/// to `eta = 1` in double precision.
pub const INFERENCE_ETA_LOGIT: f64 = -40.0;

/// On-disk preset: `{"version", "sample_rate", "logits", "bounds_id"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub version: u32,
    pub sample_rate: f64,
    pub logits: Vec<f64>,
    pub bounds_id: String,
}

impl Preset {
    pub fn new(logits: Vec<f64>, bounds: &BoundsConfig) -> Result<Self> {
        let p = Self {
            version: PRESET_VERSION,
            sample_rate: bounds.sample_rate,
            logits,
            bounds_id: bounds.id.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.logits.len() != NUM_LOGITS {
            return Err(Error::Layout {
                expected: NUM_LOGITS,
                actual: self.logits.len(),
            });
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("preset logit".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn minimal(&self) -> Vec<f64> {
        to_minimal(&self.logits)
    }
}

/// The 130 analysis coordinates, in ascending logit-index order.
pub fn to_minimal(logits: &[f64]) -> Vec<f64> {
    minimal_indices().iter().map(|&i| logits[i]).collect()
}

/// Rebuilds a full logit vector from a minimal one: dead feedback-matrix logits are zero and
/// the damping logit is [`INFERENCE_ETA_LOGIT`].
pub fn from_minimal(minimal: &[f64]) -> Result<Vec<f64>> {
    if minimal.len() != NUM_MINIMAL {
        return Err(Error::Layout {
            expected: NUM_MINIMAL,
            actual: minimal.len(),
        });
    }
    let mut out = vec![0.0; NUM_LOGITS];
    for (&i, &v) in minimal_indices().iter().zip(minimal) {
        out[i] = v;
    }
    out[DELAY_LOG_ETA] = INFERENCE_ETA_LOGIT;
    Ok(out)
}
