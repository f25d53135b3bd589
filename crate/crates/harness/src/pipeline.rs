//! Stages shared by the CLI and the end-to-end pipeline: corpus generation,
//! benchmark construction, policy rollouts, detection and scoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};

use vlnie_core::baselines::{grounding_detector, random_detector, GroundingConfig};
use vlnie_core::metrics::{self, LocalizationCase, NavResult, SUCCESS_RADIUS_M};
use vlnie_core::perturber::{build_benchmark, FilterConfig, InjectionPlan};
use vlnie_core::{rng, BenchmarkSet, DetectorOutput, Episode, Error, ErrorType, Lexicon, Result, Trajectory};
use vlnie_iedl::{detect_and_localize, train, Example, Model, TrainLog, Vocabulary};
use vlnie_world::{
    follow, generate_corpus, CorpusConfig, FollowConfig, LiteralFollower, OracleFollower, Policy, Scene,
};

use crate::config::PipelineConfig;
use crate::data::scene_index;
use crate::report::{MethodScores, Report, ReportRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Literal,
    Oracle,
}

impl PolicyKind {
    pub fn build(self, lexicon: &Lexicon) -> Box<dyn Policy> {
        match self {
            PolicyKind::Literal => Box::new(LiteralFollower::new(lexicon.clone())),
            PolicyKind::Oracle => Box::new(OracleFollower::default()),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(PolicyKind::Literal),
            "oracle" => Ok(PolicyKind::Oracle),
            _ => Err(Error::Config(format!("unknown policy `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Grounding,
    Iedl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Grounding => "grounding",
            Method::Iedl => "iedl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Method::Random),
            "grounding" => Ok(Method::Grounding),
            "iedl" => Ok(Method::Iedl),
            _ => Err(Error::Config(format!("unknown detection method `{s}`"))),
        }
    }
}

/// Maps `f` over `items` on up to `threads` scoped workers; output order matches input order.
pub fn par_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Rolls out a fresh `policy` per worker on every episode.
pub fn rollout(
    policy: PolicyKind,
    lexicon: &Lexicon,
    episodes: &[Episode],
    scenes: &HashMap<&str, &Scene>,
    config: &FollowConfig,
    threads: usize,
) -> Result<Vec<Trajectory>> {
    let chunk = episodes.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<&[Episode]> = episodes.chunks(chunk).collect();
    let nested = par_map(&parts, threads, |part| {
        let mut p = policy.build(lexicon);
        part.iter()
            .map(|e| {
                let scene = scenes
                    .get(e.scene_id.as_str())
                    .ok_or_else(|| Error::Validation(format!("episode {} names unknown scene {}", e.id, e.scene_id)))?;
                follow(p.as_mut(), e, scene, config)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn index_trajectories(trajectories: Vec<Trajectory>) -> HashMap<String, Trajectory> {
    trajectories.into_iter().map(|t| (t.episode_id.clone(), t)).collect()
}

fn trajectory_of<'a>(trajectories: &'a HashMap<String, Trajectory>, id: &str) -> Result<&'a Trajectory> {
    crate::data::lookup(trajectories, id)
}

pub fn benchmark(
    episodes: &[Episode],
    error_type: ErrorType,
    common_sense: bool,
    min_tokens: usize,
    seed: u64,
    lexicon: &Lexicon,
) -> Result<BenchmarkSet> {
    let plan = InjectionPlan { error_type, common_sense, seed };
    let filter = FilterConfig::for_error_type(error_type, min_tokens)?;
    build_benchmark(episodes, &plan, &filter, lexicon)
}

/// Model inputs for every episode of `set`, correct episodes first.
pub fn examples(model: &Model, set: &BenchmarkSet, trajectories: &HashMap<String, Trajectory>) -> Result<Vec<Example>> {
    set.all_episodes()
        .map(|e| model.example(e, trajectory_of(trajectories, &e.id)?))
        .collect()
}

/// Settings a detection method needs beyond the benchmark itself.
#[derive(Clone, Debug)]
pub struct DetectContext<'a> {
    pub lexicon: &'a Lexicon,
    pub seed: u64,
    pub grounding: GroundingConfig,
    pub model: Option<&'a Model>,
    pub threshold: f64,
    pub threads: usize,
}

/// Runs `method` on every episode of `set`, correct episodes first. J is the
/// error count of the benchmark's type.
pub fn detect(method: Method, set: &BenchmarkSet, trajectories: &HashMap<String, Trajectory>, ctx: &DetectContext) -> Result<Vec<DetectorOutput>> {
    let expected = set.error_type.error_count();
    let episodes: Vec<&Episode> = set.all_episodes().collect();
    par_map(&episodes, ctx.threads, |e| match method {
        Method::Random => random_detector(e, expected, &mut rng::stream(ctx.seed, &e.id)),
        Method::Grounding => {
            grounding_detector(e, trajectory_of(trajectories, &e.id)?, ctx.lexicon, &ctx.grounding)
        }
        Method::Iedl => {
            let model = ctx
                .model
                .ok_or_else(|| Error::Config("the iedl method needs a model".into()))?;
            let ex = model.example(e, trajectory_of(trajectories, &e.id)?)?;
            detect_and_localize(model, &ex, ctx.threshold, expected)
        }
    })
}

/// AUC over all episodes (perturbed = positive) and ATD over perturbed ones.
pub fn score_outputs(method: Method, set: &BenchmarkSet, outputs: &[DetectorOutput]) -> Result<MethodScores> {
    let by_id: HashMap<&str, &DetectorOutput> = outputs.iter().map(|o| (o.episode_id.as_str(), o)).collect();
    let find = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("no prediction for episode {id}")))
    };
    let mut scored = Vec::new();
    for e in set.all_episodes() {
        scored.push((find(&e.id)?.score, !e.is_correct()));
    }
    let cases = set
        .perturbed
        .iter()
        .map(|e| {
            Ok(LocalizationCase {
                episode_id: e.id.clone(),
                gold_indices: e.perturbation.gold_indices(),
                predicted_indices: find(&e.id)?.predicted_indices.clone(),
                instruction_length: e.instruction.length,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodScores {
        method: method.name().to_string(),
        auc: metrics::auc(&scored)?,
        atd: metrics::atd(&cases)?,
    })
}

fn polyline_length(points: &[vlnie_core::Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

pub fn nav_results(episodes: &[Episode], trajectories: &HashMap<String, Trajectory>) -> Result<Vec<NavResult>> {
    episodes
        .iter()
        .map(|e| {
            let t = trajectory_of(trajectories, &e.id)?;
            Ok(NavResult {
                episode_id: e.id.clone(),
                success: metrics::success(t.final_position, e.goal_position, SUCCESS_RADIUS_M),
                taken_length: t.path_length,
                shortest_length: polyline_length(&e.gold_path),
            })
        })
        .collect()
}

/// Policy columns of a report row: SR and SPL on the perturbed episodes
/// and the SR drop from correct to perturbed, in percent.
pub fn policy_row(set: &BenchmarkSet, trajectories: &HashMap<String, Trajectory>) -> Result<ReportRow> {
    let correct = nav_results(&set.correct, trajectories)?;
    let perturbed = nav_results(&set.perturbed, trajectories)?;
    Ok(ReportRow {
        error_type: set.error_type.label().to_string(),
        sr: metrics::sr(&perturbed)?,
        spl: metrics::spl(&perturbed)?,
        delta_sr: metrics::delta_sr(&correct, &perturbed)?,
        methods: Vec::new(),
    })
}

/// Scenes and episodes of one split; scene ids start with the split name
/// and the generator seed is derived from (pipeline seed, split name).
pub fn corpus(config: &PipelineConfig, lexicon: &Lexicon, split: &str, scene_count: usize) -> Result<(Vec<Scene>, Vec<Episode>)> {
    let world = CorpusConfig {
        prefix: split.to_string(),
        scene_count,
        rooms_per_scene: config.world.rooms_per_scene,
        episodes_per_scene: config.world.episodes_per_scene,
        seed: rng::derive_seed(config.seed, split),
    };
    generate_corpus(lexicon, &world)
}

/// A benchmark of one split together with the trajectories of all its episodes.
pub struct RolledBenchmark {
    pub set: BenchmarkSet,
    pub trajectories: HashMap<String, Trajectory>,
}

pub fn rolled_benchmark(
    config: &PipelineConfig,
    lexicon: &Lexicon,
    split: &str,
    scene_count: usize,
    error_type: ErrorType,
    common_sense: bool,
) -> Result<RolledBenchmark> {
    let (scenes, episodes) = corpus(config, lexicon, split, scene_count)?;
    let seed = rng::derive_seed(config.seed, &format!("{split}-{}", error_type.slug()));
    let set = benchmark(&episodes, error_type, common_sense, config.min_tokens, seed, lexicon)?;
    let all: Vec<Episode> = set.all_episodes().cloned().collect();
    let trajectories = rollout(config.policy, lexicon, &all, &scene_index(&scenes), &config.follow, config.threads)?;
    Ok(RolledBenchmark { set, trajectories: index_trajectories(trajectories) })
}

/// Trains the detector on the All-type benchmark without common sense built
/// from the training scenes, selecting on the validation scenes.
pub fn train_detector(config: &PipelineConfig, lexicon: &Lexicon) -> Result<(Model, TrainLog)> {
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);
    let training = rolled_benchmark(config, lexicon, "train", config.world.train_scenes, ErrorType::All, false)
        .map_err(stage("training data"))?;
    let validation = rolled_benchmark(config, lexicon, "validation", config.world.validation_scenes, ErrorType::All, false)
        .map_err(stage("validation data"))?;
    let vocab = Vocabulary::build(lexicon, training.set.all_episodes());
    let model = Model::new(config.model.clone(), vocab).map_err(stage("model"))?;
    let train_examples = examples(&model, &training.set, &training.trajectories).map_err(stage("training data"))?;
    let val_examples = examples(&model, &validation.set, &validation.trajectories).map_err(stage("validation data"))?;
    train(model, &train_examples, &val_examples).map_err(stage("training"))
}

pub struct PipelineRun {
    pub report: Report,
    pub model: Option<Model>,
    pub log: Option<TrainLog>,
}

/// Test-split evaluation of every injectable error type (with common sense)
/// for the policy and every configured detection method.
pub fn evaluate(config: &PipelineConfig, lexicon: &Lexicon, model: Option<&Model>) -> Result<Report> {
    let ctx = DetectContext {
        lexicon,
        seed: rng::derive_seed(config.seed, "random-detector"),
        grounding: config.grounding.clone(),
        model,
        threshold: config.threshold,
        threads: config.threads,
    };
    let mut rows = Vec::new();
    for error_type in ErrorType::INJECTABLE {
        let stage = format!("evaluation ({error_type})");
        let run = || -> Result<ReportRow> {
            let bench = rolled_benchmark(config, lexicon, "test", config.world.test_scenes, error_type, true)?;
            let mut row = policy_row(&bench.set, &bench.trajectories)?;
            for &method in &config.methods {
                let outputs = detect(method, &bench.set, &bench.trajectories, &ctx)?;
                row.methods.push(score_outputs(method, &bench.set, &outputs)?);
            }
            Ok(row)
        };
        rows.push(run().map_err(|e| e.in_stage(stage))?);
    }
    Report::new(rows)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate()?;
    let lexicon = config.lexicon()?;
    let (model, log) = if config.methods.contains(&Method::Iedl) {
        let (m, l) = train_detector(config, &lexicon)?;
        (Some(m), Some(l))
    } else {
        (None, None)
    };
    let report = evaluate(config, &lexicon, model.as_ref())?;
    Ok(PipelineRun { report, model, log })
}
