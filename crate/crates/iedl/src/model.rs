//! Cross-modal transformer: trajectory keyframes query the instruction,
//! and the CLS row feeds a detection head and a localization head.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use vlnie_core::{rng, Episode, Error, Lexicon, Result, Trajectory};

use crate::tape::{logistic, Tape, Var};
use crate::tensor::{positional_encoding, Mat};

pub const UNKNOWN: &str = "<unk>";
/// Most errors a single episode carries.
pub const MAX_ERRORS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Longest instruction, in tokens, the model accepts.
    pub max_tokens: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub detection_weight: f64,
    pub localization_weight: f64,
    /// Filled in from the vocabulary when a model is built.
    pub vocab_size: usize,
    /// Number of distinct observation labels; filled in like `vocab_size`.
    pub obs_feature_size: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub ff_width: usize,
    /// Trajectories are compressed to at most this many keyframes.
    pub max_keyframes: usize,
    /// Validation AUC is computed every this many iterations.
    pub eval_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_tokens: 40,
            width: 64,
            layers: 2,
            heads: 4,
            detection_weight: 1.0,
            localization_weight: 1.0,
            vocab_size: 0,
            obs_feature_size: 0,
            learning_rate: 1e-3,
            max_iterations: 5000,
            seed: 0,
            batch_size: 16,
            ff_width: 128,
            max_keyframes: 16,
            eval_every: 250,
        }
    }
}

impl ModelConfig {
    /// The large configuration: 80 tokens, width 768, 4 layers, 12 heads, 9000 iterations.
    pub fn large() -> Self {
        ModelConfig {
            max_tokens: 80,
            width: 768,
            layers: 4,
            heads: 12,
            max_iterations: 9000,
            ff_width: 3072,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("model config: {msg}")));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return fail("width must be a positive multiple of heads");
        }
        if self.max_tokens == 0 || self.layers == 0 || self.ff_width == 0 {
            return fail("max_tokens, layers and ff_width must be positive");
        }
        if !(self.detection_weight > 0.0 && self.localization_weight > 0.0) {
            return fail("loss weights must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_keyframes == 0 || self.eval_every == 0 {
            return fail("batch_size, max_keyframes and eval_every must be positive");
        }
        Ok(())
    }
}

/// Token and observation-label vocabularies; index 0 is the unknown entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl Vocabulary {
    /// Every word of every lexicon phrase plus every token of `episodes`;
    /// labels are the lexicon's room and object names.
    pub fn build<'a>(lexicon: &Lexicon, episodes: impl IntoIterator<Item = &'a Episode>) -> Self {
        let mut words: BTreeSet<String> = BTreeSet::new();
        let mut labels: BTreeSet<String> = BTreeSet::new();
        for kind in vlnie_core::SpanKind::ALL {
            for phrase in lexicon.vocabulary(kind) {
                words.extend(phrase.split(' ').map(String::from));
                if kind != vlnie_core::SpanKind::Direction {
                    labels.insert(phrase.to_string());
                }
            }
        }
        for e in episodes {
            words.extend(e.instruction.tokens.iter().cloned());
        }
        let with_unknown = |set: BTreeSet<String>| {
            std::iter::once(UNKNOWN.to_string())
                .chain(set.into_iter().filter(|w| w != UNKNOWN))
                .collect()
        };
        Vocabulary { tokens: with_unknown(words), labels: with_unknown(labels) }
    }

    fn lookup(list: &[String], key: &str) -> usize {
        list[1..].binary_search_by(|w| w.as_str().cmp(key)).map_or(0, |i| i + 1)
    }

    pub fn token_id(&self, token: &str) -> usize {
        Self::lookup(&self.tokens, token)
    }

    pub fn label_id(&self, label: &str) -> usize {
        Self::lookup(&self.labels, label)
    }
}

/// One episode turned into ids, ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub episode_id: String,
    pub tokens: Vec<usize>,
    /// Label ids of each keyframe.
    pub frames: Vec<Vec<usize>>,
    pub has_error: bool,
    pub gold: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<Example>,
}

impl Example {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("example {}: {msg}", self.episode_id)));
        if self.tokens.len() > config.max_tokens {
            return fail(format!("{} tokens exceed the limit {}", self.tokens.len(), config.max_tokens));
        }
        if self.frames.is_empty() {
            return fail("no keyframes".into());
        }
        if self.gold.len() > MAX_ERRORS || self.has_error == self.gold.is_empty() {
            return fail(format!("{} gold indices with has_error = {}", self.gold.len(), self.has_error));
        }
        if let Some(g) = self.gold.iter().find(|&&g| g >= self.tokens.len()) {
            return fail(format!("gold index {g} is a padded position"));
        }
        Ok(())
    }
}

impl Batch {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.items.iter().try_for_each(|e| e.validate(config))
    }
}

/// Runs of identical views collapse to their first observation; if more
/// remain than `max`, an evenly spaced subset keeping the first and last is used.
pub fn keyframes(trajectory: &Trajectory, max: usize) -> Vec<usize> {
    let obs = &trajectory.observations;
    let starts: Vec<usize> = (0..obs.len())
        .filter(|&i| i == 0 || !obs[i].same_view(&obs[i - 1]))
        .collect();
    if starts.len() <= max {
        return starts;
    }
    if max == 1 {
        return vec![starts[0]];
    }
    let last = starts.len() - 1;
    (0..max)
        .map(|i| starts[(i * last + (max - 1) / 2) / (max - 1)])
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub logit: f64,
    /// Sigmoid of the logit.
    pub score: f64,
    /// One logit per instruction position; padded positions are `-inf`.
    pub localization: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    SmallNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    cross: Attention,
    cross_norm: Norm,
    own: Attention,
    own_norm: Norm,
    ff_in: usize,
    ff_in_bias: usize,
    ff_out: usize,
    ff_out_bias: usize,
    ff_norm: Norm,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    hidden: usize,
    hidden_bias: usize,
    norm: Norm,
    out: usize,
    out_bias: usize,
}

#[derive(Clone, Debug)]
struct Index {
    tokens: usize,
    labels: usize,
    obs: usize,
    obs_bias: usize,
    cls: usize,
    layers: Vec<Layer>,
    detect: Head,
    locate: Head,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<(ParamSpec, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((ParamSpec { name, rows, cols }, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        (
            self.add(format!("{name}.weight"), fan_in, fan_out, Init::Xavier),
            self.add(format!("{name}.bias"), 1, fan_out, Init::Zeros),
        )
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gain: self.add(format!("{name}.gain"), 1, width, Init::Ones),
            bias: self.add(format!("{name}.bias"), 1, width, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, width: usize) -> Attention {
        let (wq, bq) = self.linear(&format!("{name}.query"), width, width);
        let (wk, bk) = self.linear(&format!("{name}.key"), width, width);
        let (wv, bv) = self.linear(&format!("{name}.value"), width, width);
        let (wo, bo) = self.linear(&format!("{name}.output"), width, width);
        Attention { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn head(&mut self, name: &str, width: usize, outputs: usize) -> Head {
        let (hidden, hidden_bias) = self.linear(&format!("{name}.hidden"), width, width);
        let norm = self.norm(&format!("{name}.norm"), width);
        let (out, out_bias) = self.linear(&format!("{name}.output"), width, outputs);
        Head { hidden, hidden_bias, norm, out, out_bias }
    }
}

fn layout(config: &ModelConfig) -> (Index, Vec<(ParamSpec, Init)>) {
    let d = config.width;
    let mut b = LayoutBuilder::default();
    let tokens = b.add("token_embedding".into(), config.vocab_size, d, Init::Xavier);
    let labels = b.add("label_embedding".into(), config.obs_feature_size, d, Init::Xavier);
    let (obs, obs_bias) = b.linear("observation", d, d);
    let cls = b.add("cls".into(), 1, d, Init::SmallNormal);
    let layers = (0..config.layers)
        .map(|l| {
            let cross = b.attention(&format!("layer{l}.cross"), d);
            let cross_norm = b.norm(&format!("layer{l}.cross_norm"), d);
            let own = b.attention(&format!("layer{l}.self"), d);
            let own_norm = b.norm(&format!("layer{l}.self_norm"), d);
            let (ff_in, ff_in_bias) = b.linear(&format!("layer{l}.ff_in"), d, config.ff_width);
            let (ff_out, ff_out_bias) = b.linear(&format!("layer{l}.ff_out"), config.ff_width, d);
            let ff_norm = b.norm(&format!("layer{l}.ff_norm"), d);
            Layer { cross, cross_norm, own, own_norm, ff_in, ff_in_bias, ff_out, ff_out_bias, ff_norm }
        })
        .collect();
    let detect = b.head("detect", d, 1);
    let locate = b.head("locate", d, config.max_tokens);
    let index = Index { tokens, labels, obs, obs_bias, cls, layers, detect, locate };
    (index, b.specs)
}

/// Additive attention mask: 0 for usable keys, `-inf` otherwise, repeated for every query row.
fn key_mask(rows: usize, keys: &[bool]) -> Mat {
    let row: Vec<f64> = keys.iter().map(|&k| if k { 0.0 } else { f64::NEG_INFINITY }).collect();
    Mat::from_vec(rows, keys.len(), row.repeat(rows))
}

fn check_finite(t: &Tape, v: Var, stage: &str) -> Result<()> {
    if t.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite values after {stage}")))
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    specs: Vec<ParamSpec>,
    params: Vec<Mat>,
    index: Index,
}

impl PartialEq for Model {
    fn eq(&self, other: &Model) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

impl Model {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.vocab_size = vocab.tokens.len();
        config.obs_feature_size = vocab.labels.len();
        config.validate()?;
        let (index, specs) = layout(&config);
        let mut rng = rng::stream(config.seed, "iedl-init");
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let params = specs
            .iter()
            .map(|(s, init)| {
                let n = s.rows * s.cols;
                let data = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::SmallNormal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Xavier => {
                        let bound = (6.0 / (s.rows + s.cols) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                };
                Mat::from_vec(s.rows, s.cols, data)
            })
            .collect();
        Ok(Model {
            config,
            vocab,
            specs: specs.into_iter().map(|(s, _)| s).collect(),
            params,
            index,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: Vec<Mat>) -> Result<Self> {
        let mut model = Model::new(ModelConfig { seed: config.seed, ..config.clone() }, vocab)?;
        if model.config != config {
            return Err(Error::Validation("stored config disagrees with its vocabularies".into()));
        }
        if params.len() != model.params.len() {
            return Err(Error::Validation(format!(
                "{} parameter blocks, expected {}",
                params.len(),
                model.params.len()
            )));
        }
        for (spec, p) in model.specs.iter().zip(&params) {
            if (p.rows, p.cols) != (spec.rows, spec.cols) {
                return Err(Error::Validation(format!("parameter {} has the wrong shape", spec.name)));
            }
            if !p.is_finite() {
                return Err(Error::Numerical(format!("parameter {} is not finite", spec.name)));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect()
    }

    /// Converts an episode and the trajectory of a policy following it.
    pub fn example(&self, episode: &Episode, trajectory: &Trajectory) -> Result<Example> {
        if trajectory.episode_id != episode.id {
            return Err(Error::Precondition(format!(
                "trajectory {} does not belong to episode {}",
                trajectory.episode_id, episode.id
            )));
        }
        let example = Example {
            episode_id: episode.id.clone(),
            tokens: self.token_ids(&episode.instruction.tokens)?,
            frames: self.frames(trajectory)?,
            has_error: !episode.is_correct(),
            gold: episode.perturbation.gold_indices(),
        };
        example.validate(&self.config)?;
        Ok(example)
    }

    fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>> {
        if tokens.len() > self.config.max_tokens {
            return Err(Error::Precondition(format!(
                "instruction of {} tokens exceeds the limit of {}",
                tokens.len(),
                self.config.max_tokens
            )));
        }
        Ok(tokens.iter().map(|t| self.vocab.token_id(t)).collect())
    }

    fn frames(&self, trajectory: &Trajectory) -> Result<Vec<Vec<usize>>> {
        if trajectory.observations.is_empty() {
            return Err(Error::Precondition(format!("trajectory {} is empty", trajectory.episode_id)));
        }
        Ok(keyframes(trajectory, self.config.max_keyframes)
            .into_iter()
            .map(|i| trajectory.observations[i].labels().map(|l| self.vocab.label_id(l)).collect())
            .collect())
    }

    fn embed_tokens(&self, t: &mut Tape, ids: &[usize]) -> Var {
        let d = self.config.width;
        let rows = t.gather(self.index.tokens, ids);
        let mut pe = Mat::zeros(ids.len(), d);
        for i in 0..ids.len() {
            pe.row_mut(i).copy_from_slice(&positional_encoding(i, d));
        }
        let pe = t.input(pe);
        t.add(rows, pe)
    }

    fn embed_frames(&self, t: &mut Tape, frames: &[Vec<usize>]) -> Var {
        let d = self.config.width;
        let distinct: Vec<usize> = frames.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let table = t.gather(self.index.labels, &distinct);
        let mut average = Mat::zeros(frames.len(), distinct.len());
        for (r, frame) in frames.iter().enumerate() {
            for id in frame {
                let c = distinct.binary_search(id).expect("label collected above");
                average.data[r * distinct.len() + c] += 1.0 / frame.len() as f64;
            }
        }
        let average = t.input(average);
        let bags = t.matmul(average, table);
        let proj = t.param(self.index.obs);
        let bias = t.param(self.index.obs_bias);
        let feats = t.matmul(bags, proj);
        let feats = t.add_row(feats, bias);
        let mut pe = Mat::zeros(frames.len(), d);
        for i in 0..frames.len() {
            pe.row_mut(i).copy_from_slice(&positional_encoding(i + 1, d));
        }
        let pe = t.input(pe);
        let feats = t.add(feats, pe);
        let cls = t.param(self.index.cls);
        t.vcat(&[cls, feats])
    }

    fn attention(&self, t: &mut Tape, a: &Attention, query: Var, context: Var, keys: &[bool]) -> Var {
        let heads = self.config.heads;
        let dh = self.config.width / heads;
        let project = |t: &mut Tape, x: Var, w: usize, b: usize| {
            let w = t.param(w);
            let b = t.param(b);
            let y = t.matmul(x, w);
            t.add_row(y, b)
        };
        let q = project(t, query, a.wq, a.bq);
        let k = project(t, context, a.wk, a.bk);
        let v = project(t, context, a.wv, a.bv);
        let rows = t.value(q).rows;
        let mask = t.input(key_mask(rows, keys));
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = t.cols(q, h * dh, dh);
                let kh = t.cols(k, h * dh, dh);
                let vh = t.cols(v, h * dh, dh);
                let s = t.matmul_t(qh, kh);
                let s = t.scale(s, scale);
                let s = t.add(s, mask);
                let p = t.softmax(s);
                t.matmul(p, vh)
            })
            .collect();
        let joined = if heads == 1 { outs[0] } else { t.hcat(&outs) };
        project(t, joined, a.wo, a.bo)
    }

    fn residual_norm(&self, t: &mut Tape, x: Var, update: Var, n: Norm) -> Var {
        let sum = t.add(x, update);
        let g = t.param(n.gain);
        let b = t.param(n.bias);
        t.layer_norm(sum, g, b)
    }

    fn head(&self, t: &mut Tape, h: &Head, cls: Var) -> Var {
        let w = t.param(h.hidden);
        let b = t.param(h.hidden_bias);
        let x = t.matmul(cls, w);
        let x = t.add_row(x, b);
        let x = t.relu(x);
        let g = t.param(h.norm.gain);
        let nb = t.param(h.norm.bias);
        let x = t.layer_norm(x, g, nb);
        let w = t.param(h.out);
        let b = t.param(h.out_bias);
        let x = t.matmul(x, w);
        t.add_row(x, b)
    }

    /// Runs the transformer and both heads; returns the 1×1 detection logit
    /// and the 1×W localization logits.
    fn network(&self, t: &mut Tape, gamma: Var, gamma_mask: &[bool], upsilon: Var, upsilon_mask: &[bool]) -> Result<(Var, Var)> {
        let w = self.config.max_tokens;
        if upsilon_mask.len() > w {
            return Err(Error::Precondition(format!(
                "{} instruction rows exceed the limit of {w}",
                upsilon_mask.len()
            )));
        }
        if gamma_mask.first() != Some(&true) {
            return Err(Error::Precondition("the CLS row must be unmasked".into()));
        }
        let mut h = gamma;
        for (l, layer) in self.index.layers.iter().enumerate() {
            let cross = self.attention(t, &layer.cross, h, upsilon, upsilon_mask);
            h = self.residual_norm(t, h, cross, layer.cross_norm);
            let own = self.attention(t, &layer.own, h, h, gamma_mask);
            h = self.residual_norm(t, h, own, layer.own_norm);
            let wi = t.param(layer.ff_in);
            let bi = t.param(layer.ff_in_bias);
            let wo = t.param(layer.ff_out);
            let bo = t.param(layer.ff_out_bias);
            let ff = t.matmul(h, wi);
            let ff = t.add_row(ff, bi);
            let ff = t.relu(ff);
            let ff = t.matmul(ff, wo);
            let ff = t.add_row(ff, bo);
            h = self.residual_norm(t, h, ff, layer.ff_norm);
            check_finite(t, h, &format!("transformer layer {l}"))?;
        }
        let cls = t.rows(h, &[0]);
        let logit = self.head(t, &self.index.detect, cls);
        check_finite(t, logit, "the detection head")?;
        let loc = self.head(t, &self.index.locate, cls);
        check_finite(t, loc, "the localization head")?;
        let mut valid = upsilon_mask.to_vec();
        valid.resize(w, false);
        let mask = t.input(key_mask(1, &valid));
        let loc = t.add(loc, mask);
        Ok((logit, loc))
    }

    fn example_graph(&self, t: &mut Tape, ex: &Example) -> Result<(Var, Var)> {
        let upsilon = self.embed_tokens(t, &ex.tokens);
        let gamma = self.embed_frames(t, &ex.frames);
        let upsilon_mask = vec![true; ex.tokens.len()];
        let gamma_mask = vec![true; ex.frames.len() + 1];
        self.network(t, gamma, &gamma_mask, upsilon, &upsilon_mask)
    }

    /// W×D instruction matrix and its mask; rows past the instruction are zero and masked.
    pub fn encode_instruction(&self, tokens: &[String]) -> Result<(Mat, Vec<bool>)> {
        let ids = self.token_ids(tokens)?;
        let mut t = Tape::new(&self.params);
        let v = self.embed_tokens(&mut t, &ids);
        let mut out = Mat::zeros(self.config.max_tokens, self.config.width);
        out.data[..ids.len() * self.config.width].copy_from_slice(&t.value(v).data);
        let mut mask = vec![true; ids.len()];
        mask.resize(self.config.max_tokens, false);
        Ok((out, mask))
    }

    /// (T+1)×D trajectory matrix, CLS first, one row per keyframe.
    pub fn encode_trajectory(&self, trajectory: &Trajectory) -> Result<(Mat, Vec<bool>)> {
        let frames = self.frames(trajectory)?;
        let mut t = Tape::new(&self.params);
        let v = self.embed_frames(&mut t, &frames);
        Ok((t.value(v).clone(), vec![true; frames.len() + 1]))
    }

    pub fn forward(&self, gamma: &Mat, gamma_mask: &[bool], upsilon: &Mat, upsilon_mask: &[bool]) -> Result<Output> {
        if gamma.rows != gamma_mask.len() || upsilon.rows != upsilon_mask.len() {
            return Err(Error::Precondition("mask lengths must match the matrices".into()));
        }
        let mut t = Tape::new(&self.params);
        let g = t.input(gamma.clone());
        let u = t.input(upsilon.clone());
        let (logit, loc) = self.network(&mut t, g, gamma_mask, u, upsilon_mask)?;
        Ok(Self::output(&t, logit, loc))
    }

    fn output(t: &Tape, logit: Var, loc: Var) -> Output {
        let logit = t.scalar(logit);
        Output {
            logit,
            score: logistic(logit),
            localization: t.value(loc).data.clone(),
        }
    }

    pub fn predict(&self, example: &Example) -> Result<Output> {
        let mut t = Tape::new(&self.params);
        let (logit, loc) = self.example_graph(&mut t, example)?;
        Ok(Self::output(&t, logit, loc))
    }

    /// Mean joint loss over `batch` and its gradient for every parameter.
    pub fn gradients(&self, batch: &Batch) -> Result<(f64, Vec<Mat>)> {
        batch.validate(&self.config)?;
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        let share = 1.0 / batch.items.len().max(1) as f64;
        for ex in &batch.items {
            let mut t = Tape::new(&self.params);
            let (logit, loc) = self.example_graph(&mut t, ex)?;
            let root = joint_loss_graph(
                &mut t,
                logit,
                loc,
                ex,
                share * self.config.detection_weight,
                share * self.config.localization_weight,
            );
            let loss = t.scalar(root);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss is not finite on {}", ex.episode_id)));
            }
            total += loss;
            t.backward(root, &mut grads);
        }
        if let Some(spec) = self.specs.iter().zip(&grads).find(|(_, g)| !g.is_finite()).map(|(s, _)| s) {
            return Err(Error::Numerical(format!("gradient of {} is not finite", spec.name)));
        }
        Ok((total, grads))
    }

    /// Mean joint loss over `batch` without gradients.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        batch.validate(&self.config)?;
        let mut total = 0.0;
        for ex in &batch.items {
            let out = self.predict(ex)?;
            total += joint_loss(&out, ex.has_error, &ex.gold, self.config.detection_weight, self.config.localization_weight)?;
        }
        Ok(total / batch.items.len().max(1) as f64)
    }
}

fn joint_loss_graph(t: &mut Tape, logit: Var, loc: Var, ex: &Example, detection: f64, localization: f64) -> Var {
    let target = if ex.has_error { 1.0 } else { 0.0 };
    let mut terms = vec![(t.bce(logit, target), detection)];
    if ex.has_error {
        let each = localization / ex.gold.len() as f64;
        for &g in &ex.gold {
            terms.push((t.cross_entropy(loc, g), each));
        }
    }
    t.weighted_sum(&terms)
}

fn binary_cross_entropy(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

fn cross_entropy(logits: &[f64], gold: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[gold]
}

/// `detection_weight · BCE + (localization_weight / E) · Σ CE`; the
/// localization terms vanish for correct episodes.
pub fn joint_loss(output: &Output, has_error: bool, gold: &[usize], detection_weight: f64, localization_weight: f64) -> Result<f64> {
    let target = if has_error { 1.0 } else { 0.0 };
    let mut loss = detection_weight * binary_cross_entropy(output.logit, target);
    if has_error {
        if gold.is_empty() {
            return Err(Error::Precondition("an erroneous episode needs gold indices".into()));
        }
        let mut sum = 0.0;
        for &g in gold {
            match output.localization.get(g) {
                Some(x) if x.is_finite() => sum += cross_entropy(&output.localization, g),
                _ => return Err(Error::Precondition(format!("gold index {g} is a padded position"))),
            }
        }
        loss += localization_weight / gold.len() as f64 * sum;
    }
    Ok(loss)
}
