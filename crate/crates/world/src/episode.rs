//! Episode sampling and instruction templates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use vlnie_core::rng;
use vlnie_core::{
    Episode, Error, Instruction, Lexicon, PerturbationRecord, Point, Pose, Result, SpanKind,
    TokenSpan, TURN_STEP_DEG,
};

use crate::scene::{generate_scene, Scene};

/// Goals sit at least this far to one side of the entry doorway's axis, so
/// the turn word always matters.
pub const GOAL_LATERAL_MIN_M: f64 = 1.5;
const START_MARGIN_M: f64 = 1.0;
const EPISODE_ATTEMPTS: usize = 64;

const ENTER: [&str; 3] = ["enter", "continue to", "head to"];
const PASS: [&str; 2] = ["walk past", "pass"];
const FINISH: [&str; 3] = ["stop next to", "wait near", "stop by"];

/// Signed distance of `p` to the left of the line through `origin` along `normal`.
pub fn lateral_offset(origin: Point, normal: Point, p: Point) -> f64 {
    normal.cross(p.sub(origin))
}

/// Accumulates tokens and records a span for every slot filled from the lexicon.
#[derive(Default)]
struct Renderer {
    tokens: Vec<String>,
    spans: Vec<TokenSpan>,
}

impl Renderer {
    fn words(&mut self, text: &str) -> &mut Self {
        self.tokens.extend(text.split(' ').map(String::from));
        self
    }

    fn slot(&mut self, kind: SpanKind, phrase: &str) -> &mut Self {
        let start = self.tokens.len();
        self.words(phrase);
        self.spans.push(TokenSpan {
            start_index: start,
            end_index: self.tokens.len(),
            kind,
            surface: phrase.to_string(),
        });
        self
    }
}

struct PathPlan<'a> {
    rooms: Vec<usize>,
    start: Pose,
    passed: Vec<&'a str>,
    landmark: &'a str,
    goal: Point,
    goal_class: &'a str,
    turn: &'a str,
}

fn sample_plan<'a, R: Rng>(scene: &'a Scene, rng: &mut R) -> Option<PathPlan<'a>> {
    let from = rng.gen_range(0..scene.rooms.len());
    let mut targets: Vec<Vec<usize>> = (0..scene.rooms.len())
        .filter_map(|to| scene.route(from, to))
        .filter(|r| (2..=3).contains(&r.len()))
        .collect();
    targets.sort();
    let rooms = targets.choose(rng)?.clone();
    let last = *rooms.last()?;
    let entry = scene.door_between(rooms[rooms.len() - 2], last)?;
    let normal = scene.inward_normal(entry, last);

    let in_goal_room: Vec<_> = scene.objects_in(last).collect();
    let goals: Vec<_> = in_goal_room
        .iter()
        .filter(|o| lateral_offset(entry.position, normal, o.position).abs() >= GOAL_LATERAL_MIN_M)
        .collect();
    let goal = **goals.choose(rng)?;
    let landmarks: Vec<_> = in_goal_room.iter().filter(|o| o.class != goal.class).collect();
    let landmark = **landmarks.choose(rng)?;
    let passed = rooms[1..rooms.len() - 1]
        .iter()
        .map(|&r| scene.objects_in(r).collect::<Vec<_>>().choose(rng).map(|o| o.class.as_str()))
        .collect::<Option<Vec<_>>>()?;

    let rect = &scene.rooms[from].rect;
    let start = Point::new(
        rng.gen_range(rect.min.x + START_MARGIN_M..rect.max.x - START_MARGIN_M),
        rng.gen_range(rect.min.y + START_MARGIN_M..rect.max.y - START_MARGIN_M),
    );
    let heading = rng.gen_range(0..360 / TURN_STEP_DEG) * TURN_STEP_DEG;
    let side = lateral_offset(entry.position, normal, goal.position);
    Some(PathPlan {
        rooms,
        start: Pose::new(start, heading).ok()?,
        passed,
        landmark: &landmark.class,
        goal: goal.position,
        goal_class: &goal.class,
        turn: if side > 0.0 { "left" } else { "right" },
    })
}

fn render<R: Rng>(scene: &Scene, plan: &PathPlan, rng: &mut R) -> Result<(Instruction, Vec<TokenSpan>)> {
    let label = |i: usize| scene.rooms[plan.rooms[i]].label.as_str();
    let mut r = Renderer::default();
    r.words(if rng.gen_bool(0.5) { "exit the" } else { "leave the" })
        .slot(SpanKind::Room, label(0));
    if rng.gen_bool(0.5) {
        r.words("and walk").slot(SpanKind::Direction, "forward");
    }
    r.words(".");
    for (i, passed) in plan.passed.iter().enumerate() {
        r.words(ENTER.choose(rng).unwrap())
            .words("the")
            .slot(SpanKind::Room, label(i + 1))
            .words("and")
            .words(PASS.choose(rng).unwrap())
            .words("the")
            .slot(SpanKind::Object, passed)
            .words(".");
    }
    r.words(ENTER.choose(rng).unwrap())
        .words("the")
        .slot(SpanKind::Room, label(plan.rooms.len() - 1))
        .words(", turn")
        .slot(SpanKind::Direction, plan.turn)
        .words("at the")
        .slot(SpanKind::Object, plan.landmark)
        .words("and")
        .words(FINISH.choose(rng).unwrap())
        .words("the")
        .slot(SpanKind::Object, plan.goal_class)
        .words(".");
    Ok((Instruction::from_tokens(r.tokens)?, r.spans))
}

/// Samples a start in one room and a goal object one or two rooms away, and
/// renders an instruction describing the route.
pub fn generate_episode(scene: &Scene, id: &str, seed: u64) -> Result<Episode> {
    let mut rng = rng::seeded(seed);
    for _ in 0..EPISODE_ATTEMPTS {
        let Some(plan) = sample_plan(scene, &mut rng) else {
            continue;
        };
        let (instruction, gold_spans) = render(scene, &plan, &mut rng)?;
        let mut gold_path = vec![plan.start.position];
        for w in plan.rooms.windows(2) {
            gold_path.push(scene.door_between(w[0], w[1]).expect("route follows doors").position);
        }
        gold_path.push(plan.goal);
        let episode = Episode {
            id: id.to_string(),
            scene_id: scene.id.clone(),
            instruction,
            gold_spans,
            start_pose: plan.start,
            goal_position: plan.goal,
            gold_path,
            perturbation: PerturbationRecord::none(),
        };
        episode.validate()?;
        return Ok(episode);
    }
    Err(Error::Precondition(format!(
        "scene {} has no usable start/goal pair",
        scene.id
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Prefix of scene ids; corpora meant to be disjoint need distinct prefixes.
    pub prefix: String,
    pub scene_count: usize,
    pub rooms_per_scene: usize,
    pub episodes_per_scene: usize,
    pub seed: u64,
}

pub fn generate_corpus(lexicon: &Lexicon, config: &CorpusConfig) -> Result<(Vec<Scene>, Vec<Episode>)> {
    let mut scenes = Vec::with_capacity(config.scene_count);
    let mut episodes = Vec::with_capacity(config.scene_count * config.episodes_per_scene);
    for i in 0..config.scene_count {
        let scene_id = format!("{}-{i:04}", config.prefix);
        let scene = generate_scene(
            &scene_id,
            lexicon,
            config.rooms_per_scene,
            rng::derive_seed(config.seed, &scene_id),
        )?;
        for j in 0..config.episodes_per_scene {
            let id = format!("{scene_id}/ep-{j:03}");
            episodes.push(generate_episode(&scene, &id, rng::derive_seed(config.seed, &id))?);
        }
        scenes.push(scene);
    }
    Ok((scenes, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renderer_records_spans() {
        let mut r = Renderer::default();
        r.words("exit the").slot(SpanKind::Room, "living room").words(".");
        assert_eq!(r.tokens, ["exit", "the", "living", "room", "."]);
        assert_eq!(r.spans[0].start_index, 2);
        assert_eq!(r.spans[0].end_index, 4);
    }

    #[test]
    fn lateral_sign_is_left_positive() {
        let o = Point::new(0.0, 0.0);
        let east = Point::new(1.0, 0.0);
        assert!(lateral_offset(o, east, Point::new(2.0, 1.0)) > 0.0);
        assert!(lateral_offset(o, east, Point::new(2.0, -1.0)) < 0.0);
    }

    #[test]
    fn two_room_episode_mentions_both_rooms() {
        let lexicon = Lexicon::default();
        let scene = generate_scene("s", &lexicon, 2, 5).unwrap();
        let e = generate_episode(&scene, "e", 9).unwrap();
        let rooms: Vec<&str> = e
            .gold_spans
            .iter()
            .filter(|s| s.kind == SpanKind::Room)
            .map(|s| s.surface.as_str())
            .collect();
        assert_eq!(rooms.len(), 2);
        for r in &scene.rooms {
            assert!(rooms.contains(&r.label.as_str()));
        }
        assert!(e.gold_spans.iter().any(|s| s.kind == SpanKind::Direction));
        assert!(e.instruction.length >= 10);
    }
}
