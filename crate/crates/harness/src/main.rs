use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use vlnie::audit::{audit, AuditConfig};
use vlnie::data::{load_benchmark, load_scenes, load_trajectories, save_benchmark, save_scenes, scene_index};
use vlnie::pipeline::{self, benchmark, detect, examples, rollout, score_outputs, DetectContext};
use vlnie::report::{MethodScores, Report};
use vlnie::{render_table, run_pipeline, Method, PipelineConfig, PolicyKind};
use vlnie_core::io::{load_episodes, read_jsonl, save_episodes, write_json, write_jsonl, EpisodeFormat};
use vlnie_core::{DetectorOutput, Episode, Error, ErrorType, Lexicon, Result};
use vlnie_iedl::{io as model_io, train, Model, Vocabulary};
use vlnie_world::{generate_corpus, CorpusConfig};

const EPISODES_FILE: &str = "episodes.jsonl";
const SCENES_DIR: &str = "scenes";

#[derive(Parser)]
#[command(name = "vlnie", version, about = "Instruction-error benchmarks for instruction-following agents")]
struct Cli {
    /// Seed for every random choice; overrides the config file seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Run every stage on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Lexicon file; the built-in lexicon when absent.
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and one episode file for them.
    GenScenes(GenScenes),
    /// Inject errors into episodes and write the paired benchmark.
    GenBenchmark(GenBenchmark),
    /// Roll out a follower policy on episodes.
    RunPolicy(RunPolicy),
    /// Score every benchmark episode with one detection method.
    Detect(DetectArgs),
    /// Train the cross-modal detector.
    Train(TrainArgs),
    /// Score predictions and policy results against a benchmark.
    Eval(EvalArgs),
    /// Flag nominally correct episodes the detector rejects.
    Audit(AuditArgs),
    /// Run the whole pipeline from a config file.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenScenes {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    rooms: usize,
    #[arg(long, default_value_t = 4)]
    episodes_per_scene: usize,
    /// Scene id prefix; corpora meant to be disjoint need distinct prefixes.
    #[arg(long, default_value = "scene")]
    prefix: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenBenchmark {
    #[arg(long)]
    error_type: ErrorType,
    #[arg(long, value_parser = on_off, action = clap::ArgAction::Set)]
    common_sense: bool,
    /// Minimum instruction length in tokens.
    #[arg(long, default_value_t = vlnie_core::perturber::DEFAULT_MIN_TOKENS)]
    tau: usize,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunPolicy {
    #[arg(long, default_value = "literal")]
    policy: PolicyKind,
    #[arg(long, required = true)]
    episodes: Vec<PathBuf>,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, required = true)]
    trajectories: Vec<PathBuf>,
    /// Pipeline config supplying grounding settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Trajectories of the training and validation episodes.
    #[arg(long, required = true)]
    trajectories: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// `NAME=FILE` or `FILE`; the name defaults to the file stem.
    #[arg(long, required = true)]
    predictions: Vec<String>,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, required = true)]
    trajectories: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true)]
    episodes: Vec<PathBuf>,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = vlnie::audit::DEFAULT_AUDIT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "literal")]
    policy: PolicyKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected `on` or `off`, got `{s}`")),
    }
}

struct Globals {
    seed: Option<u64>,
    threads: usize,
    lexicon: Option<PathBuf>,
}

impl Globals {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::default()),
        }
    }

    /// The config file (or defaults) with command-line overrides applied.
    fn config(&self, path: Option<&Path>) -> Result<PipelineConfig> {
        let mut config = match path {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.model.seed = seed;
        }
        if self.lexicon.is_some() {
            config.lexicon = self.lexicon.clone();
        }
        config.threads = self.threads;
        config.validate()?;
        Ok(config)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_all_episodes(paths: &[PathBuf]) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_episodes(p, EpisodeFormat::Native)?);
    }
    Ok(out)
}

fn gen_scenes(g: &Globals, a: &GenScenes) -> Result<()> {
    let config = CorpusConfig {
        prefix: a.prefix.clone(),
        scene_count: a.count,
        rooms_per_scene: a.rooms,
        episodes_per_scene: a.episodes_per_scene,
        seed: g.seed(),
    };
    let (scenes, episodes) = generate_corpus(&g.lexicon()?, &config)?;
    save_scenes(&scenes, &a.out.join(SCENES_DIR))?;
    save_episodes(&episodes, &a.out.join(EPISODES_FILE))?;
    log::info!("wrote {} scenes and {} episodes to {}", scenes.len(), episodes.len(), a.out.display());
    Ok(())
}

fn gen_benchmark(g: &Globals, a: &GenBenchmark) -> Result<()> {
    let episodes = load_episodes(&a.input, EpisodeFormat::Native)?;
    let set = benchmark(&episodes, a.error_type, a.common_sense, a.tau, g.seed(), &g.lexicon()?)?;
    save_benchmark(&set, &a.out)?;
    log::info!("{} correct and {} perturbed episodes", set.correct.len(), set.perturbed.len());
    Ok(())
}

fn run_policy(g: &Globals, a: &RunPolicy) -> Result<()> {
    let episodes = load_all_episodes(&a.episodes)?;
    let scenes = load_scenes(&a.scenes)?;
    let trajectories = rollout(
        a.policy,
        &g.lexicon()?,
        &episodes,
        &scene_index(&scenes),
        &Default::default(),
        g.threads,
    )?;
    write_jsonl(&trajectories, &a.out)
}

fn detect_cmd(g: &Globals, a: &DetectArgs) -> Result<()> {
    let config = g.config(a.config.as_deref())?;
    let lexicon = config.lexicon()?;
    let set = load_benchmark(&a.benchmark)?;
    let trajectories = load_trajectories(&a.trajectories)?;
    let model = match (&a.model, a.method) {
        (Some(p), _) => Some(model_io::load(p)?),
        (None, Method::Iedl) => return Err(Error::Config("--method iedl needs --model".into())),
        (None, _) => None,
    };
    let ctx = DetectContext {
        lexicon: &lexicon,
        seed: config.seed,
        grounding: config.grounding.clone(),
        model: model.as_ref(),
        threshold: a.threshold,
        threads: g.threads,
    };
    let outputs = detect(a.method, &set, &trajectories, &ctx)?;
    write_jsonl(&outputs, &a.out)
}

fn train_cmd(g: &Globals, a: &TrainArgs) -> Result<()> {
    let config = g.config(a.config.as_deref())?;
    let lexicon = config.lexicon()?;
    let training = load_benchmark(&a.benchmark)?;
    let validation = load_benchmark(&a.val)?;
    let trajectories = load_trajectories(&a.trajectories)?;
    let vocab = Vocabulary::build(&lexicon, training.all_episodes());
    let model = Model::new(config.model.clone(), vocab)?;
    let train_examples = examples(&model, &training, &trajectories)?;
    let val_examples = examples(&model, &validation, &trajectories)?;
    let (model, log) = train(model, &train_examples, &val_examples)?;
    log::info!(
        "best validation AUC {:.4} at iteration {}",
        log.best_validation_auc,
        log.best_iteration
    );
    model_io::save(&model, &a.out)
}

fn prediction_source(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, file)) => (name.to_string(), PathBuf::from(file)),
        None => {
            let path = PathBuf::from(spec);
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (name, path)
        }
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let set = load_benchmark(&a.benchmark)?;
    let trajectories = load_trajectories(&a.trajectories)?;
    let mut row = pipeline::policy_row(&set, &trajectories)?;
    for spec in &a.predictions {
        let (name, path) = prediction_source(spec);
        let outputs: Vec<DetectorOutput> = read_jsonl(&path)?;
        let scores = score_outputs(Method::Random, &set, &outputs)?;
        row.methods.push(MethodScores { method: name, ..scores });
    }
    let report = Report::new(vec![row])?;
    write_json(&report, &a.out)
}

fn audit_cmd(g: &Globals, a: &AuditArgs) -> Result<()> {
    let config = AuditConfig { threshold: a.threshold, policy: a.policy };
    config.validate()?;
    let model = model_io::load(&a.model)?;
    let episodes = load_all_episodes(&a.episodes)?;
    let scenes = load_scenes(&a.scenes)?;
    let lexicon = g.lexicon()?;
    let trajectories = rollout(a.policy, &lexicon, &episodes, &scene_index(&scenes), &Default::default(), g.threads)?;
    let by_id: HashMap<&str, _> = trajectories.iter().map(|t| (t.episode_id.as_str(), t)).collect();
    let examples = episodes
        .iter()
        .map(|e| model.example(e, by_id[e.id.as_str()]))
        .collect::<Result<Vec<_>>>()?;
    let flags = audit(&model, &examples, &config)?;
    log::info!("flagged {} of {} episodes", flags.len(), episodes.len());
    write_jsonl(&flags, &a.out)
}

fn report_cmd(g: &Globals, a: &ReportArgs) -> Result<()> {
    let config = g.config(a.config.as_deref())?;
    let run = run_pipeline(&config)?;
    create_dir(&a.out)?;
    write_json(&run.report, &a.out.join("report.json"))?;
    write_text(&render_table(&run.report), &a.out.join("report.txt"))?;
    if let Some(model) = &run.model {
        model_io::save(model, &a.out.join("model.bin"))?;
    }
    if let Some(log) = &run.log {
        write_json(log, &a.out.join("train_log.json"))?;
    }
    print!("{}", render_table(&run.report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        threads: if cli.deterministic { 1 } else { cli.threads.max(1) },
        lexicon: cli.lexicon,
    };
    match &cli.command {
        Command::GenScenes(a) => gen_scenes(&g, a),
        Command::GenBenchmark(a) => gen_benchmark(&g, a),
        Command::RunPolicy(a) => run_policy(&g, a),
        Command::Detect(a) => detect_cmd(&g, a),
        Command::Train(a) => train_cmd(&g, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Audit(a) => audit_cmd(&g, a),
        Command::Report(a) => report_cmd(&g, a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
