//! Canonical data model: episodes, trajectories, benchmarks and detector
//! outputs. Every other module consumes these types.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{detokenize, normalize_text};

/// Metres travelled by one `Forward` action.
pub const FORWARD_STEP_M: f64 = 0.25;
/// Degrees turned by one `TurnLeft`/`TurnRight` action.
pub const TURN_STEP_DEG: u16 = 15;

/// A point on the horizontal plane, in metres. Serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// z-component of the 2D cross product; positive when `other` lies
    /// counter-clockwise (to the left) of `self`.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Agent pose. Heading is in degrees counter-clockwise from +x, always a
/// multiple of 15 in `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct Pose {
    pub position: Point,
    heading: u16,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    position: Point,
    heading: u16,
}

impl TryFrom<RawPose> for Pose {
    type Error = Error;
    fn try_from(raw: RawPose) -> Result<Self> {
        Pose::new(raw.position, raw.heading)
    }
}

impl From<Pose> for RawPose {
    fn from(p: Pose) -> Self {
        RawPose {
            position: p.position,
            heading: p.heading,
        }
    }
}

impl Pose {
    pub fn new(position: Point, heading: u16) -> Result<Self> {
        if heading >= 360 || heading % TURN_STEP_DEG != 0 {
            return Err(Error::Validation(format!(
                "heading {heading} is not a multiple of {TURN_STEP_DEG} in [0, 360)"
            )));
        }
        Ok(Pose { position, heading })
    }

    /// Snaps an arbitrary angle in degrees to the nearest legal heading.
    pub fn snapped(position: Point, degrees: f64) -> Self {
        let steps = (degrees / TURN_STEP_DEG as f64).round() as i64;
        let heading = (steps * TURN_STEP_DEG as i64).rem_euclid(360) as u16;
        Pose { position, heading }
    }

    pub fn heading(&self) -> u16 {
        self.heading
    }

    pub fn heading_rad(&self) -> f64 {
        (self.heading as f64).to_radians()
    }

    pub fn direction(&self) -> Point {
        let r = self.heading_rad();
        Point::new(r.cos(), r.sin())
    }

    pub fn moved_to(self, position: Point) -> Self {
        Pose { position, ..self }
    }

    pub fn turned_left(self) -> Self {
        Pose {
            heading: (self.heading + TURN_STEP_DEG) % 360,
            ..self
        }
    }

    pub fn turned_right(self) -> Self {
        Pose {
            heading: (self.heading + 360 - TURN_STEP_DEG) % 360,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Direction,
    Object,
    Room,
}

impl SpanKind {
    pub const ALL: [SpanKind; 3] = [SpanKind::Direction, SpanKind::Object, SpanKind::Room];

    pub fn name(self) -> &'static str {
        match self {
            SpanKind::Direction => "direction",
            SpanKind::Object => "object",
            SpanKind::Room => "room",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start_index: usize,
    pub end_index: usize,
    pub kind: SpanKind,
    pub surface: String,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.end_index == self.start_index
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start_index < other.end_index && other.start_index < self.end_index
    }

    /// Checks the span against the instruction it indexes into.
    pub fn validate(&self, tokens: &[String]) -> Result<()> {
        if self.start_index >= self.end_index || self.end_index > tokens.len() {
            return Err(Error::Validation(format!(
                "span [{}, {}) out of range for {} tokens",
                self.start_index,
                self.end_index,
                tokens.len()
            )));
        }
        let covered = tokens[self.start_index..self.end_index].join(" ");
        if covered != self.surface {
            return Err(Error::Validation(format!(
                "span surface `{}` does not match tokens `{covered}`",
                self.surface
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Direction,
    Room,
    Object,
    RoomObject,
    All,
    None,
}

impl ErrorType {
    /// The five injectable types, in reporting order.
    pub const INJECTABLE: [ErrorType; 5] = [
        ErrorType::Direction,
        ErrorType::Room,
        ErrorType::Object,
        ErrorType::RoomObject,
        ErrorType::All,
    ];

    /// Errors per perturbed episode.
    pub fn error_count(self) -> usize {
        match self {
            ErrorType::Direction | ErrorType::Room | ErrorType::Object => 1,
            ErrorType::RoomObject => 2,
            ErrorType::All => 3,
            ErrorType::None => 0,
        }
    }

    /// Span kinds an episode must contain to be eligible, which are also
    /// the kinds edited by the injection.
    pub fn required_kinds(self) -> Vec<SpanKind> {
        match self {
            ErrorType::Direction => vec![SpanKind::Direction],
            ErrorType::Room => vec![SpanKind::Room],
            ErrorType::Object => vec![SpanKind::Object],
            ErrorType::RoomObject => vec![SpanKind::Room, SpanKind::Object],
            ErrorType::All => vec![SpanKind::Direction, SpanKind::Room, SpanKind::Object],
            ErrorType::None => vec![],
        }
    }

    /// Name used on the command line and in output file names.
    pub fn slug(self) -> &'static str {
        match self {
            ErrorType::Direction => "direction",
            ErrorType::Room => "room",
            ErrorType::Object => "object",
            ErrorType::RoomObject => "room-object",
            ErrorType::All => "all",
            ErrorType::None => "none",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorType::Direction => "Direction",
            ErrorType::Room => "Room",
            ErrorType::Object => "Object",
            ErrorType::RoomObject => "Room&Object",
            ErrorType::All => "All",
            ErrorType::None => "None",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ErrorType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "direction" => ErrorType::Direction,
            "room" => ErrorType::Room,
            "object" => ErrorType::Object,
            "room-object" | "roomobject" | "room&object" => ErrorType::RoomObject,
            "all" => ErrorType::All,
            "none" => ErrorType::None,
            other => {
                return Err(Error::Config(format!("unknown error type `{other}`")));
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub original_span: TokenSpan,
    pub replacement: String,
    pub new_span: TokenSpan,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub error_type: ErrorType,
    pub edits: Vec<Edit>,
    pub error_count: usize,
}

impl PerturbationRecord {
    pub fn none() -> Self {
        PerturbationRecord {
            error_type: ErrorType::None,
            edits: Vec::new(),
            error_count: 0,
        }
    }

    /// Ground-truth error positions: the first token of every edited span
    /// in the perturbed instruction.
    pub fn gold_indices(&self) -> Vec<usize> {
        self.edits.iter().map(|e| e.new_span.start_index).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInstruction")]
pub struct Instruction {
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub length: usize,
}

#[derive(Deserialize)]
struct RawInstruction {
    raw_text: String,
    tokens: Vec<String>,
    length: usize,
}

impl TryFrom<RawInstruction> for Instruction {
    type Error = Error;
    fn try_from(raw: RawInstruction) -> Result<Self> {
        let instruction = Instruction {
            raw_text: raw.raw_text,
            tokens: raw.tokens,
            length: raw.length,
        };
        instruction.validate()?;
        Ok(instruction)
    }
}

impl Instruction {
    pub fn from_text(raw: &str) -> Result<Self> {
        let tokens = normalize_text(raw);
        let instruction = Instruction {
            raw_text: raw.to_string(),
            length: tokens.len(),
            tokens,
        };
        instruction.validate()?;
        Ok(instruction)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let instruction = Instruction {
            raw_text: detokenize(&tokens),
            length: tokens.len(),
            tokens,
        };
        instruction.validate()?;
        Ok(instruction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation("instruction has no tokens".into()));
        }
        if self.length != self.tokens.len() {
            return Err(Error::Validation(format!(
                "instruction length {} does not match {} tokens",
                self.length,
                self.tokens.len()
            )));
        }
        if normalize_text(&self.raw_text) != self.tokens {
            return Err(Error::Validation(
                "instruction tokens do not match normalized raw_text".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub scene_id: String,
    pub instruction: Instruction,
    pub gold_spans: Vec<TokenSpan>,
    pub start_pose: Pose,
    pub goal_position: Point,
    pub gold_path: Vec<Point>,
    pub perturbation: PerturbationRecord,
}

/// Separator between a correct episode id and the error-type slug in the id
/// of its perturbed counterpart.
pub const PERTURBED_ID_SEPARATOR: char = '+';

impl Episode {
    pub fn is_correct(&self) -> bool {
        self.perturbation.error_type == ErrorType::None
    }

    pub fn perturbed_id(correct_id: &str, error_type: ErrorType) -> String {
        format!("{correct_id}{PERTURBED_ID_SEPARATOR}{}", error_type.slug())
    }

    /// Id of the correct episode this one was derived from (itself when correct).
    pub fn source_id(&self) -> &str {
        if self.is_correct() {
            &self.id
        } else {
            self.id
                .rsplit_once(PERTURBED_ID_SEPARATOR)
                .map_or(&self.id, |(head, _)| head)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |e: Error| Error::Validation(format!("episode {}: {e}", self.id));
        self.instruction.validate().map_err(ctx)?;
        let first = self
            .gold_path
            .first()
            .ok_or_else(|| ctx(Error::Validation("empty gold_path".into())))?;
        if first.distance(self.start_pose.position) > 1e-6 {
            return Err(ctx(Error::Validation(
                "gold_path does not begin at the start position".into(),
            )));
        }
        if !self.goal_position.is_finite() || self.gold_path.iter().any(|p| !p.is_finite()) {
            return Err(ctx(Error::Validation("non-finite coordinate".into())));
        }
        let tokens = &self.instruction.tokens;
        for (i, span) in self.gold_spans.iter().enumerate() {
            span.validate(tokens).map_err(ctx)?;
            if self.gold_spans[..i].iter().any(|s| s.overlaps(span)) {
                return Err(ctx(Error::Validation("overlapping gold spans".into())));
            }
        }
        let record = &self.perturbation;
        if record.error_count != record.edits.len()
            || record.error_count != record.error_type.error_count()
        {
            return Err(ctx(Error::Validation(format!(
                "{} edits recorded for error type {} with error_count {}",
                record.edits.len(),
                record.error_type,
                record.error_count
            ))));
        }
        for edit in &record.edits {
            edit.new_span.validate(tokens).map_err(ctx)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub pose: Pose,
    pub room_label: String,
    /// Visible objects, nearest first, without duplicates.
    pub object_labels: Vec<String>,
}

impl Observation {
    /// Room label followed by object labels.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.room_label.as_str()).chain(self.object_labels.iter().map(String::as_str))
    }

    pub fn same_view(&self, other: &Observation) -> bool {
        self.room_label == other.room_label && self.object_labels == other.object_labels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub path_length: f64,
    pub final_position: Point,
}

impl Trajectory {
    pub fn forward_count(&self) -> usize {
        self.actions.iter().filter(|a| **a == Action::Forward).count()
    }

    /// Commanded odometry: every `Forward` counts one full step.
    pub fn odometry(actions: &[Action]) -> f64 {
        actions.iter().filter(|a| **a == Action::Forward).count() as f64 * FORWARD_STEP_M
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Validation(format!("trajectory {}: {msg}", self.episode_id));
        if self.actions.last() != Some(&Action::Stop) {
            return Err(ctx("last action is not Stop".into()));
        }
        if self.actions[..self.actions.len() - 1].contains(&Action::Stop) {
            return Err(ctx("Stop before the last action".into()));
        }
        if self.observations.is_empty() {
            return Err(ctx("no observations".into()));
        }
        if let Some((i, o)) = self.observations.iter().enumerate().find(|(i, o)| o.step != *i) {
            return Err(ctx(format!("observation {i} has step {}", o.step)));
        }
        if self.path_length != Self::odometry(&self.actions) {
            return Err(ctx(format!(
                "path_length {} != {} forward steps",
                self.path_length,
                self.forward_count()
            )));
        }
        Ok(())
    }

    /// Union of every label seen along the trajectory.
    pub fn seen_labels(&self) -> BTreeSet<&str> {
        self.observations.iter().flat_map(|o| o.labels()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub episode_count: usize,
    pub errors_per_episode: f64,
    pub mean_instruction_length_correct: f64,
    pub mean_instruction_length_perturbed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub error_type: ErrorType,
    pub common_sense: bool,
    pub correct: Vec<Episode>,
    pub perturbed: Vec<Episode>,
    pub seed: u64,
    pub stats: BenchmarkStats,
}

impl BenchmarkSet {
    pub fn validate(&self) -> Result<()> {
        if self.correct.len() != self.perturbed.len() {
            return Err(Error::Validation(format!(
                "{} correct vs {} perturbed episodes",
                self.correct.len(),
                self.perturbed.len()
            )));
        }
        for (c, p) in self.correct.iter().zip(&self.perturbed) {
            c.validate()?;
            p.validate()?;
            if !c.is_correct() || p.perturbation.error_type != self.error_type {
                return Err(Error::Validation(format!(
                    "episode pair {} / {} has the wrong perturbation types",
                    c.id, p.id
                )));
            }
            if p.source_id() != c.id {
                return Err(Error::Validation(format!(
                    "perturbed episode {} does not reference {}",
                    p.id, c.id
                )));
            }
        }
        Ok(())
    }

    /// Correct and perturbed episodes in one list, correct first.
    pub fn all_episodes(&self) -> impl Iterator<Item = &Episode> {
        self.correct.iter().chain(&self.perturbed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    pub episode_id: String,
    pub score: f64,
    pub has_error: bool,
    pub predicted_indices: Vec<usize>,
}

impl DetectorOutput {
    pub fn validate(&self, threshold: f64, instruction_length: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "score {} of {} outside [0, 1]",
                self.score, self.episode_id
            )));
        }
        if self.has_error != (self.score > threshold) {
            return Err(Error::Validation(format!(
                "has_error inconsistent with score for {}",
                self.episode_id
            )));
        }
        if self.predicted_indices.iter().any(|&i| i >= instruction_length) {
            return Err(Error::Validation(format!(
                "predicted index out of range for {}",
                self.episode_id
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_rejects_off_grid_heading() {
        assert!(Pose::new(Point::default(), 10).is_err());
        assert!(Pose::new(Point::default(), 360).is_err());
        assert!(Pose::new(Point::default(), 345).is_ok());
    }

    #[test]
    fn pose_turns_wrap() {
        let p = Pose::new(Point::default(), 0).unwrap();
        assert_eq!(p.turned_right().heading(), 345);
        assert_eq!(p.turned_right().turned_left().heading(), 0);
        assert_eq!(Pose::snapped(Point::default(), -7.6).heading(), 345);
    }

    #[test]
    fn error_counts_follow_the_taxonomy() {
        let counts: Vec<_> = ErrorType::INJECTABLE.iter().map(|t| t.error_count()).collect();
        assert_eq!(counts, vec![1, 1, 1, 2, 3]);
        assert_eq!(ErrorType::None.error_count(), 0);
    }

    #[test]
    fn error_type_parses_cli_names() {
        for t in ErrorType::INJECTABLE {
            assert_eq!(t.slug().parse::<ErrorType>().unwrap(), t);
        }
        assert!("sideways".parse::<ErrorType>().is_err());
    }

    #[test]
    fn point_serializes_as_pair() {
        assert_eq!(serde_json::to_string(&Point::new(1.5, -2.0)).unwrap(), "[1.5,-2.0]");
    }

    #[test]
    fn perturbed_id_round_trips_to_source() {
        let id = Episode::perturbed_id("scene-3/ep-0001", ErrorType::RoomObject);
        assert_eq!(id, "scene-3/ep-0001+room-object");
        assert_eq!(id.rsplit_once('+').unwrap().0, "scene-3/ep-0001");
    }

    #[test]
    fn instruction_requires_tokens() {
        assert!(Instruction::from_text("   ").is_err());
        let i = Instruction::from_text("Exit the bedroom.").unwrap();
        assert_eq!(i.length, 4);
    }
}
