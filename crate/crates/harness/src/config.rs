use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vlnie_core::baselines::GroundingConfig;
use vlnie_core::io::read_json;
use vlnie_core::perturber::DEFAULT_MIN_TOKENS;
use vlnie_core::{Error, Lexicon, Result};
use vlnie_iedl::ModelConfig;
use vlnie_world::FollowConfig;

use crate::pipeline::{Method, PolicyKind};

/// Sizes of the three disjoint scene sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub rooms_per_scene: usize,
    pub episodes_per_scene: usize,
    pub train_scenes: usize,
    pub validation_scenes: usize,
    pub test_scenes: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            rooms_per_scene: 4,
            episodes_per_scene: 4,
            train_scenes: 500,
            validation_scenes: 50,
            test_scenes: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Lexicon file; the shipped lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub world: WorldConfig,
    pub min_tokens: usize,
    pub policy: PolicyKind,
    pub follow: FollowConfig,
    pub methods: Vec<Method>,
    pub grounding: GroundingConfig,
    pub model: ModelConfig,
    /// Detection threshold on the IEDL score.
    pub threshold: f64,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            lexicon: None,
            world: WorldConfig::default(),
            min_tokens: DEFAULT_MIN_TOKENS,
            policy: PolicyKind::Literal,
            follow: FollowConfig::default(),
            methods: vec![Method::Random, Method::Grounding, Method::Iedl],
            grounding: GroundingConfig::default(),
            model: ModelConfig::default(),
            threshold: 0.5,
            threads: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: PipelineConfig = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.train_scenes == 0 || w.validation_scenes == 0 || w.test_scenes == 0 || w.episodes_per_scene == 0 {
            return Err(Error::Config("every scene split needs at least one scene and episode".into()));
        }
        if w.rooms_per_scene < 2 {
            return Err(Error::Config("scenes need at least two rooms".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no detection methods selected".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        self.grounding.validate()?;
        self.model.validate()
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::default()),
        }
    }
}
