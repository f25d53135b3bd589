#![allow(dead_code)]

use vlnie_iedl::{Example, Model, ModelConfig, Vocabulary};

pub fn vocab(tokens: usize, labels: usize) -> Vocabulary {
    let names = |prefix: &str, n: usize| {
        std::iter::once("<unk>".to_string())
            .chain((0..n).map(|i| format!("{prefix}{i:02}")))
            .collect()
    };
    Vocabulary { tokens: names("w", tokens), labels: names("l", labels) }
}

pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        max_tokens: 8,
        width: 8,
        layers: 1,
        heads: 2,
        ff_width: 16,
        seed,
        ..ModelConfig::default()
    }
}

pub fn small_model(seed: u64) -> Model {
    Model::new(small_config(seed), vocab(12, 6)).unwrap()
}

pub fn example(id: &str, tokens: &[usize], frames: &[&[usize]], gold: &[usize]) -> Example {
    Example {
        episode_id: id.to_string(),
        tokens: tokens.to_vec(),
        frames: frames.iter().map(|f| f.to_vec()).collect(),
        has_error: !gold.is_empty(),
        gold: gold.to_vec(),
    }
}

/// A correct item, a single-error item and a two-error item.
pub fn mixed_items() -> Vec<Example> {
    vec![
        example("c", &[1, 2, 3, 4, 5, 6], &[&[1, 2], &[1, 3, 4]], &[]),
        example("p1", &[1, 7, 3, 4, 0], &[&[2], &[2, 5], &[6]], &[1]),
        example("p2", &[9, 8, 3, 10, 11, 2, 4, 12], &[&[3, 4, 5]], &[0, 6]),
    ]
}
