mod common;

use common::{example, vocab};
use rand::Rng;
use vlnie_iedl::train::AdamW;
use vlnie_iedl::{io, train, Batch, Example, Model, ModelConfig};

/// Four correct items and four with one corrupted token each.
fn toy_items(seed: u64) -> Vec<Example> {
    let mut rng = vlnie_core::rng::seeded(seed);
    (0..8)
        .map(|i| {
            let len = rng.gen_range(6..=12);
            let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=30)).collect();
            let frames: Vec<Vec<usize>> = (0..rng.gen_range(2..=6))
                .map(|_| (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=20)).collect())
                .collect();
            let frames: Vec<&[usize]> = frames.iter().map(Vec::as_slice).collect();
            let gold = if i % 2 == 0 { vec![] } else { vec![rng.gen_range(0..len)] };
            example(&format!("e{i}"), &tokens, &frames, &gold)
        })
        .collect()
}

fn desk_model(seed: u64) -> Model {
    let config = ModelConfig { max_iterations: 30, eval_every: 10, batch_size: 4, seed, ..ModelConfig::default() };
    Model::new(config, vocab(30, 20)).unwrap()
}

#[test]
fn overfits_a_handful_of_episodes() {
    let mut model = desk_model(0);
    let batch = Batch { items: toy_items(1) };
    let mut opt = AdamW::new(model.config.learning_rate, model.params());
    let start = model.batch_loss(&batch).unwrap();
    for _ in 0..500 {
        let (_, grads) = model.gradients(&batch).unwrap();
        opt.update(model.params_mut(), &grads);
    }
    let end = model.batch_loss(&batch).unwrap();
    assert!(end < 0.05, "loss {start} -> {end}");
}

#[test]
fn training_is_bitwise_reproducible() {
    let items = toy_items(2);
    let (a, log_a) = train(desk_model(7), &items[..6], &items[6..]).unwrap();
    let (b, log_b) = train(desk_model(7), &items[..6], &items[6..]).unwrap();
    assert_eq!(a, b);
    assert_eq!(io::to_bytes(&a), io::to_bytes(&b));
    assert_eq!(log_a.best_iteration, log_b.best_iteration);
    let (c, _) = train(desk_model(8), &items[..6], &items[6..]).unwrap();
    assert_ne!(a, c);
}

#[test]
fn keeps_the_earliest_best_checkpoint() {
    let items = toy_items(3);
    let (model, log) = train(desk_model(1), &items, &items).unwrap();
    let iterations: Vec<usize> = log.curve.iter().map(|p| p.iteration).collect();
    assert_eq!(iterations, vec![0, 10, 20, 30]);
    let best = log.curve.iter().map(|p| p.validation_auc).fold(f64::MIN, f64::max);
    assert_eq!(log.best_validation_auc, best);
    let first = log.curve.iter().find(|p| p.validation_auc == best).unwrap();
    assert_eq!(log.best_iteration, first.iteration);
    let auc = vlnie_iedl::train::validation_auc(&model, &items).unwrap();
    assert_eq!(auc, best);
}

#[test]
fn training_rejects_empty_splits() {
    let items = toy_items(4);
    assert!(train(desk_model(0), &[], &items).is_err());
    assert!(train(desk_model(0), &items, &[]).is_err());
}
