//! JSON-lines persistence for episodes, trajectories and predictions, plus a
//! reader for R2R-CE style episode files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Episode, Instruction, PerturbationRecord, Point, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeFormat {
    /// One [`Episode`] JSON object per line.
    Native,
    /// The public R2R-CE layout: `{"episodes": [...]}`.
    R2rCe,
}

impl FromStr for EpisodeFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "native" | "jsonl" => Ok(EpisodeFormat::Native),
            "r2rce" | "r2r-ce" | "r2r_ce" => Ok(EpisodeFormat::R2rCe),
            other => Err(Error::Config(format!("unknown episode format `{other}`"))),
        }
    }
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads one record per non-blank line; parse failures name the 1-based
/// line and the offending field.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn save_episodes(episodes: &[Episode], path: &Path) -> Result<()> {
    write_jsonl(episodes, path)
}

pub fn load_episodes(path: &Path, format: EpisodeFormat) -> Result<Vec<Episode>> {
    let episodes = match format {
        EpisodeFormat::Native => read_jsonl::<Episode>(path)?,
        EpisodeFormat::R2rCe => read_r2r_ce(path)?,
    };
    for (i, episode) in episodes.iter().enumerate() {
        episode.validate().map_err(|e| Error::Parse {
            path: path.into(),
            line: if format == EpisodeFormat::Native { i + 1 } else { 0 },
            message: e.to_string(),
        })?;
    }
    Ok(episodes)
}

#[derive(Deserialize)]
struct R2rFile {
    episodes: Vec<R2rEpisode>,
}

#[derive(Deserialize)]
struct R2rEpisode {
    episode_id: serde_json::Value,
    scene_id: String,
    start_position: Vec<f64>,
    start_rotation: Vec<f64>,
    goals: Vec<R2rGoal>,
    instruction: R2rInstruction,
    #[serde(default)]
    reference_path: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct R2rGoal {
    position: Vec<f64>,
}

#[derive(Deserialize)]
struct R2rInstruction {
    instruction_text: String,
}

/// Habitat is y-up; the horizontal plane is (x, z).
fn project(coords: &[f64], what: &str) -> Result<Point> {
    match coords {
        [x, _, z] => Ok(Point::new(*x, *z)),
        [x, y] => Ok(Point::new(*x, *y)),
        _ => Err(Error::Validation(format!(
            "{what} has {} coordinates, expected 2 or 3",
            coords.len()
        ))),
    }
}

/// Yaw about the vertical axis from an `[x, y, z, w]` quaternion.
fn yaw_degrees(q: &[f64]) -> Result<f64> {
    match q {
        [_, qy, _, qw] => Ok((2.0 * qy.atan2(*qw)).to_degrees()),
        _ => Err(Error::Validation(format!(
            "start_rotation has {} components, expected 4",
            q.len()
        ))),
    }
}

fn read_r2r_ce(path: &Path) -> Result<Vec<Episode>> {
    let file: R2rFile = read_json(path)?;
    file.episodes
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let ctx = |e: Error| Error::Parse {
                path: path.into(),
                line: 0,
                message: format!("episodes[{i}]: {e}"),
            };
            let id = match &raw.episode_id {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let start = project(&raw.start_position, "start_position").map_err(ctx)?;
            let heading = yaw_degrees(&raw.start_rotation).map_err(ctx)?;
            let goal = raw
                .goals
                .first()
                .ok_or_else(|| ctx(Error::Validation("no goals".into())))
                .and_then(|g| project(&g.position, "goal position").map_err(ctx))?;
            let mut gold_path = raw
                .reference_path
                .iter()
                .map(|p| project(p, "reference_path point"))
                .collect::<Result<Vec<_>>>()
                .map_err(ctx)?;
            if gold_path.first().map_or(true, |p| p.distance(start) > 1e-6) {
                gold_path.insert(0, start);
            }
            Ok(Episode {
                id,
                scene_id: raw.scene_id,
                instruction: Instruction::from_text(&raw.instruction.instruction_text)
                    .map_err(ctx)?,
                gold_spans: Vec::new(),
                start_pose: Pose::snapped(start, heading),
                goal_position: goal,
                gold_path,
                perturbation: PerturbationRecord::none(),
            })
        })
        .collect()
}
