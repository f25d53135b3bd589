//! On-disk layout: scene directories hold one `<scene id>.json` per scene;
//! benchmark directories hold `correct.jsonl`, `perturbed.jsonl` and `stats.json`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use vlnie_core::io::{load_episodes, read_json, read_jsonl, save_episodes, write_json, EpisodeFormat};
use vlnie_core::{BenchmarkSet, BenchmarkStats, Error, ErrorType, Result, Trajectory};
use vlnie_world::Scene;

pub const CORRECT_FILE: &str = "correct.jsonl";
pub const PERTURBED_FILE: &str = "perturbed.jsonl";
pub const STATS_FILE: &str = "stats.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMeta {
    pub error_type: ErrorType,
    pub common_sense: bool,
    pub seed: u64,
    pub stats: BenchmarkStats,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_scenes(scenes: &[Scene], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for s in scenes {
        write_json(s, &dir.join(format!("{}.json", s.id)))?;
    }
    Ok(())
}

/// Every `*.json` file in `dir`, in file-name order.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

pub fn scene_index(scenes: &[Scene]) -> HashMap<&str, &Scene> {
    scenes.iter().map(|s| (s.id.as_str(), s)).collect()
}

pub fn save_benchmark(set: &BenchmarkSet, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    save_episodes(&set.correct, &dir.join(CORRECT_FILE))?;
    save_episodes(&set.perturbed, &dir.join(PERTURBED_FILE))?;
    let meta = BenchmarkMeta {
        error_type: set.error_type,
        common_sense: set.common_sense,
        seed: set.seed,
        stats: set.stats.clone(),
    };
    write_json(&meta, &dir.join(STATS_FILE))
}

pub fn load_benchmark(dir: &Path) -> Result<BenchmarkSet> {
    let meta: BenchmarkMeta = read_json(&dir.join(STATS_FILE))?;
    let set = BenchmarkSet {
        error_type: meta.error_type,
        common_sense: meta.common_sense,
        correct: load_episodes(&dir.join(CORRECT_FILE), EpisodeFormat::Native)?,
        perturbed: load_episodes(&dir.join(PERTURBED_FILE), EpisodeFormat::Native)?,
        seed: meta.seed,
        stats: meta.stats,
    };
    set.validate()?;
    Ok(set)
}

/// Trajectories from several files, keyed by episode id; duplicates are an error.
pub fn load_trajectories(paths: &[impl AsRef<Path>]) -> Result<HashMap<String, Trajectory>> {
    let mut out = HashMap::new();
    for path in paths {
        for t in read_jsonl::<Trajectory>(path.as_ref())? {
            t.validate()?;
            let id = t.episode_id.clone();
            if out.insert(id.clone(), t).is_some() {
                return Err(Error::Validation(format!("two trajectories for episode {id}")));
            }
        }
    }
    Ok(out)
}

/// Looks up the trajectory of every episode id, failing on the first gap.
pub fn lookup<'a>(trajectories: &'a HashMap<String, Trajectory>, id: &str) -> Result<&'a Trajectory> {
    trajectories
        .get(id)
        .ok_or_else(|| Error::Validation(format!("no trajectory for episode {id}")))
}
