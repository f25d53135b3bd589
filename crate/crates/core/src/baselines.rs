//! Reference detectors: a uniform random guesser and a grounding check that
//! flags room/object mentions never observed along the trajectory.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::perturber::tag_spans;
use crate::rng;
use crate::types::{DetectorOutput, Episode, SpanKind, Trajectory};

/// Decision threshold shared by both detectors' `has_error` flags.
pub const RANDOM_THRESHOLD: f64 = 0.5;
pub const GROUNDING_THRESHOLD: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    /// Labels kept per observation: the room label, then objects nearest first.
    pub top_k: usize,
    /// Probability that a kept label is replaced by a random label of the same kind.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            top_k: 5,
            noise_rate: 0.1,
            seed: 0,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("grounding top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "grounding noise_rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

pub fn random_detector<R: Rng + ?Sized>(
    episode: &Episode,
    expected_errors: usize,
    rng: &mut R,
) -> Result<DetectorOutput> {
    if expected_errors == 0 {
        return Err(Error::Precondition(
            "random detector needs at least one expected error".into(),
        ));
    }
    let score: f64 = rng.gen();
    let len = episode.instruction.length;
    let predicted_indices = (0..expected_errors).map(|_| rng.gen_range(0..len)).collect();
    Ok(DetectorOutput {
        episode_id: episode.id.clone(),
        score,
        has_error: score > RANDOM_THRESHOLD,
        predicted_indices,
    })
}

/// Labels the detector believes it saw, after truncation and noise.
pub fn observed_labels(
    trajectory: &Trajectory,
    lexicon: &Lexicon,
    config: &GroundingConfig,
) -> BTreeSet<String> {
    let mut rng = rng::stream(config.seed, &trajectory.episode_id);
    let rooms = lexicon.vocabulary(SpanKind::Room);
    let objects = lexicon.vocabulary(SpanKind::Object);
    let mut seen = BTreeSet::new();
    for obs in &trajectory.observations {
        for (i, label) in obs.labels().take(config.top_k).enumerate() {
            let pool = if i == 0 { &rooms } else { &objects };
            if config.noise_rate > 0.0 && rng.gen_bool(config.noise_rate) && !pool.is_empty() {
                seen.insert(pool[rng.gen_range(0..pool.len())].to_string());
            } else {
                seen.insert(label.to_string());
            }
        }
    }
    seen
}

pub fn grounding_detector(
    episode: &Episode,
    trajectory: &Trajectory,
    lexicon: &Lexicon,
    config: &GroundingConfig,
) -> Result<DetectorOutput> {
    config.validate()?;
    if trajectory.episode_id != episode.id {
        return Err(Error::Precondition(format!(
            "trajectory {} does not belong to episode {}",
            trajectory.episode_id, episode.id
        )));
    }
    let mentions: Vec<_> = tag_spans(&episode.instruction.tokens, lexicon)
        .into_iter()
        .filter(|s| s.kind != SpanKind::Direction)
        .collect();
    let seen = observed_labels(trajectory, lexicon, config);
    let predicted_indices: Vec<usize> = mentions
        .iter()
        .filter(|s| !seen.contains(&s.surface))
        .map(|s| s.start_index)
        .collect();
    let score = if mentions.is_empty() {
        0.0
    } else {
        predicted_indices.len() as f64 / mentions.len() as f64
    };
    Ok(DetectorOutput {
        episode_id: episode.id.clone(),
        score,
        has_error: score > GROUNDING_THRESHOLD,
        predicted_indices,
    })
}
