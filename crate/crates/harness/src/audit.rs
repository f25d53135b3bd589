//! Flags nominally correct episodes that the detector is confident are wrong.

use serde::{Deserialize, Serialize};

use vlnie_core::{Error, Result};
use vlnie_iedl::{Example, Model};

use crate::pipeline::PolicyKind;

pub const DEFAULT_AUDIT_THRESHOLD: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub threshold: f64,
    /// Policy that produces the trajectories the detector reads.
    pub policy: PolicyKind,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { threshold: DEFAULT_AUDIT_THRESHOLD, policy: PolicyKind::Literal }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("audit threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub episode_id: String,
    pub score: f64,
}

/// Every episode with its alignment score, highest first, ties by id.
pub fn rank(model: &Model, examples: &[Example]) -> Result<Vec<Flag>> {
    let mut flags = examples
        .iter()
        .map(|e| {
            Ok(Flag {
                episode_id: e.episode_id.clone(),
                score: model.predict(e)?.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    flags.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.episode_id.cmp(&b.episode_id)));
    Ok(flags)
}

/// Keeps the ranked episodes scoring strictly above `threshold`.
pub fn select(ranked: &[Flag], threshold: f64) -> Vec<Flag> {
    ranked.iter().filter(|f| f.score > threshold).cloned().collect()
}

pub fn audit(model: &Model, examples: &[Example], config: &AuditConfig) -> Result<Vec<Flag>> {
    config.validate()?;
    Ok(select(&rank(model, examples)?, config.threshold))
}
