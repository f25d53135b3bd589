//! AdamW training with validation-AUC checkpoint selection, and inference.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use vlnie_core::metrics::auc;
use vlnie_core::{rng, DetectorOutput, Error, Result};

use crate::model::{Batch, Example, Model, Output};
use crate::tensor::Mat;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const WEIGHT_DECAY: f64 = 0.01;
const ADAM_EPS: f64 = 1e-8;

/// Adaptive moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    step: i32,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl AdamW {
    pub fn new(learning_rate: f64, params: &[Mat]) -> Self {
        let zeros = || params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        AdamW { learning_rate, step: 0, first: zeros(), second: zeros() }
    }

    pub fn update(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let lr = self.learning_rate;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
                let step = (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
                p.data[i] -= lr * (step + WEIGHT_DECAY * p.data[i]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Mean training loss over the iterations since the previous point.
    pub train_loss: f64,
    pub validation_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub curve: Vec<CurvePoint>,
    pub best_iteration: usize,
    pub best_validation_auc: f64,
}

/// Detection scores of `model` on `examples`, in order.
pub fn scores(model: &Model, examples: &[Example]) -> Result<Vec<f64>> {
    examples.iter().map(|e| model.predict(e).map(|o| o.score)).collect()
}

pub fn validation_auc(model: &Model, examples: &[Example]) -> Result<f64> {
    let scored: Vec<(f64, bool)> = scores(model, examples)?
        .into_iter()
        .zip(examples)
        .map(|(s, e)| (s, e.has_error))
        .collect();
    auc(&scored)
}

/// Trains from the initial `model`, keeping the parameters with the best
/// validation AUC (earliest on ties). Batches are drawn by reshuffling the
/// training set every epoch with a generator derived from the config seed.
pub fn train(mut model: Model, training: &[Example], validation: &[Example]) -> Result<(Model, TrainLog)> {
    if training.is_empty() || validation.is_empty() {
        return Err(Error::Precondition("training and validation splits must be nonempty".into()));
    }
    let config = model.config.clone();
    Batch { items: training.to_vec() }.validate(&config)?;
    Batch { items: validation.to_vec() }.validate(&config)?;
    let mut rng = rng::stream(config.seed, "iedl-batches");
    let mut order: Vec<usize> = Vec::new();
    let mut optimizer = AdamW::new(config.learning_rate, model.params());

    let first = validation_auc(&model, validation)?;
    let mut log = TrainLog {
        curve: vec![CurvePoint { iteration: 0, train_loss: f64::NAN, validation_auc: first }],
        best_iteration: 0,
        best_validation_auc: first,
    };
    let mut best = model.params().to_vec();
    let mut running = (0.0, 0usize);
    for iteration in 1..=config.max_iterations {
        let mut items = Vec::with_capacity(config.batch_size);
        while items.len() < config.batch_size.min(training.len()) {
            if order.is_empty() {
                order = (0..training.len()).collect();
                order.shuffle(&mut rng);
            }
            items.push(training[order.pop().expect("refilled above")].clone());
        }
        let (loss, grads) = model.gradients(&Batch { items })?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged at iteration {iteration}")));
        }
        optimizer.update(model.params_mut(), &grads);
        running.0 += loss;
        running.1 += 1;
        if iteration % config.eval_every == 0 || iteration == config.max_iterations {
            let auc = validation_auc(&model, validation)?;
            let train_loss = running.0 / running.1 as f64;
            log::info!("iteration {iteration}: train loss {train_loss:.4}, validation AUC {auc:.4}");
            log.curve.push(CurvePoint { iteration, train_loss, validation_auc: auc });
            running = (0.0, 0);
            if auc > log.best_validation_auc {
                log.best_validation_auc = auc;
                log.best_iteration = iteration;
                best = model.params().to_vec();
            }
        }
    }
    model.params_mut().clone_from_slice(&best);
    Ok((model, log))
}

/// Indices of the `count` largest finite logits, highest first, ties toward the lower index.
pub fn top_indices(logits: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).filter(|&i| logits[i].is_finite()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

/// Flags the episode when the score exceeds `threshold` and points at the
/// `expected_errors` most likely error positions.
pub fn detect_and_localize(model: &Model, example: &Example, threshold: f64, expected_errors: usize) -> Result<DetectorOutput> {
    let out: Output = model.predict(example)?;
    Ok(DetectorOutput {
        episode_id: example.episode_id.clone(),
        score: out.score,
        has_error: out.score > threshold,
        predicted_indices: top_indices(&out.localization, expected_errors),
    })
}
