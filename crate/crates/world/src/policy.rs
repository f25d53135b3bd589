//! Policies and the rollout loop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use vlnie_core::perturber::tag_spans;
use vlnie_core::{
    Action, Episode, Error, Lexicon, Observation, Point, Pose, Result, SpanKind, Trajectory,
    FORWARD_STEP_M, TURN_STEP_DEG,
};

use crate::episode::lateral_offset;
use crate::observe::{observe, ObserveConfig};
use crate::scene::Scene;

/// A waypoint counts as reached within this distance.
pub const ARRIVAL_M: f64 = 0.25;
/// Distance of the staging points on either side of a door.
pub const DOOR_STAGING_M: f64 = 0.6;
/// How far the literal follower walks sideways when it cannot see its goal.
pub const SIDE_STEP_M: f64 = 2.0;
const HEADING_TOLERANCE_DEG: f64 = TURN_STEP_DEG as f64 / 2.0;
const ROOM_CLEARANCE_M: f64 = 0.3;

pub trait Policy {
    fn begin(&mut self, episode: &Episode, scene: &Scene);
    fn act(&mut self, history: &[Observation]) -> Action;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowConfig {
    /// Maximum number of actions, the final Stop included.
    pub step_budget: usize,
    pub observe: ObserveConfig,
}

impl Default for FollowConfig {
    fn default() -> Self {
        FollowConfig {
            step_budget: 400,
            observe: ObserveConfig::default(),
        }
    }
}

/// Applies one action; a forward step that would pass through a wall is cancelled.
pub fn step(scene: &Scene, pose: Pose, action: Action) -> Pose {
    match action {
        Action::Forward => {
            let to = pose.position.add(pose.direction().scale(FORWARD_STEP_M));
            if scene.segment_clear(pose.position, to) {
                pose.moved_to(to)
            } else {
                pose
            }
        }
        Action::TurnLeft => pose.turned_left(),
        Action::TurnRight => pose.turned_right(),
        Action::Stop => pose,
    }
}

/// Rolls `policy` out on `episode`. A Stop is forced once the budget is spent.
pub fn follow(policy: &mut dyn Policy, episode: &Episode, scene: &Scene, config: &FollowConfig) -> Result<Trajectory> {
    if config.step_budget == 0 {
        return Err(Error::Precondition("step budget must be at least 1".into()));
    }
    if episode.scene_id != scene.id {
        return Err(Error::Precondition(format!(
            "episode {} belongs to scene {}, not {}",
            episode.id, episode.scene_id, scene.id
        )));
    }
    policy.begin(episode, scene);
    let mut pose = episode.start_pose;
    let mut observations = vec![observe(scene, pose, 0, &config.observe)?];
    let mut actions = Vec::new();
    loop {
        let action = if actions.len() + 1 >= config.step_budget {
            Action::Stop
        } else {
            policy.act(&observations)
        };
        actions.push(action);
        if action == Action::Stop {
            break;
        }
        pose = step(scene, pose, action);
        observations.push(observe(scene, pose, observations.len(), &config.observe)?);
    }
    Ok(Trajectory {
        episode_id: episode.id.clone(),
        path_length: Trajectory::odometry(&actions),
        observations,
        actions,
        final_position: pose.position,
    })
}

/// Turn-then-walk steering through a queue of waypoints.
#[derive(Clone, Debug, Default)]
struct Navigator {
    waypoints: VecDeque<Point>,
}

impl Navigator {
    fn next_action(&mut self, pose: Pose) -> Option<Action> {
        while let Some(&target) = self.waypoints.front() {
            if target.distance(pose.position) > ARRIVAL_M {
                break;
            }
            self.waypoints.pop_front();
        }
        let target = *self.waypoints.front()?;
        let offset = target.sub(pose.position);
        let bearing = offset.y.atan2(offset.x).to_degrees();
        let diff = (bearing - pose.heading() as f64 + 540.0).rem_euclid(360.0) - 180.0;
        Some(if diff > HEADING_TOLERANCE_DEG {
            Action::TurnLeft
        } else if diff < -HEADING_TOLERANCE_DEG {
            Action::TurnRight
        } else {
            Action::Forward
        })
    }

    fn cross_door(&mut self, door: Point, inward: Point) {
        self.waypoints.push_back(door.sub(inward.scale(DOOR_STAGING_M)));
        self.waypoints.push_back(door);
        self.waypoints.push_back(door.add(inward.scale(DOOR_STAGING_M)));
    }
}

/// Ignores the instruction and walks the gold path.
#[derive(Clone, Debug, Default)]
pub struct OracleFollower {
    nav: Navigator,
}

impl Policy for OracleFollower {
    fn begin(&mut self, episode: &Episode, scene: &Scene) {
        self.nav = Navigator::default();
        let mut room = scene.room_at(episode.start_pose.position);
        for &p in &episode.gold_path[1..] {
            let door = room.and_then(|r| {
                scene
                    .doors_of(r)
                    .find(|(_, d)| d.position.distance(p) < 1e-6)
                    .map(|(_, d)| (d, d.other(r)))
            });
            match door {
                Some((d, next)) => {
                    self.nav.cross_door(d.position, scene.inward_normal(d, next));
                    room = Some(next);
                }
                None => self.nav.waypoints.push_back(p),
            }
        }
    }

    fn act(&mut self, history: &[Observation]) -> Action {
        let pose = history.last().expect("history holds the current view").pose;
        self.nav.next_action(pose).unwrap_or(Action::Stop)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Command {
    Enter(String),
    Finish {
        turn: Option<String>,
        landmark: Option<String>,
        goal: Option<String>,
    },
}

/// Reads the instruction with the template grammar: rooms after "exit" or
/// "leave" and objects after "past"/"pass" are scenery, other rooms are
/// rooms to enter, "turn X" gives the side, the object after "at" is the
/// landmark and the last other object is the goal.
fn parse(tokens: &[String], lexicon: &Lexicon) -> Vec<Command> {
    let before = |i: usize, back: usize| -> &str {
        i.checked_sub(back).map_or("", |j| tokens[j].as_str())
    };
    let mut commands = Vec::new();
    let (mut turn, mut landmark, mut goal) = (None, None, None);
    for span in tag_spans(tokens, lexicon) {
        let i = span.start_index;
        match span.kind {
            SpanKind::Room => {
                if !matches!(before(i, 2), "exit" | "leave") {
                    commands.push(Command::Enter(span.surface));
                }
            }
            SpanKind::Direction => {
                if before(i, 1) == "turn" {
                    turn = Some(span.surface);
                }
            }
            SpanKind::Object => match before(i, 2) {
                "past" | "pass" => {}
                "at" => landmark = Some(span.surface),
                _ => goal = Some(span.surface),
            },
        }
    }
    commands.push(Command::Finish { turn, landmark, goal });
    commands
}

fn side_of(turn: Option<&str>) -> f64 {
    match turn {
        Some("left") | Some("leftmost") => 1.0,
        Some("right") | Some("rightmost") => -1.0,
        _ => 0.0,
    }
}

/// Executes instructions clause by clause using only what it can see: the
/// current room, the rooms behind its doors, and the objects in view. Any
/// room it cannot find makes it stop where it is.
#[derive(Clone, Debug)]
pub struct LiteralFollower {
    lexicon: Lexicon,
    scene: Option<Scene>,
    commands: VecDeque<Command>,
    nav: Navigator,
    /// Door (position, inward normal) used to enter the current room.
    entry: Option<(usize, Point, Point)>,
}

impl LiteralFollower {
    pub fn new(lexicon: Lexicon) -> Self {
        LiteralFollower {
            lexicon,
            scene: None,
            commands: VecDeque::new(),
            nav: Navigator::default(),
            entry: None,
        }
    }

    /// Turns the next command into waypoints. `false` means give up.
    fn plan(&mut self, view: &Observation) -> bool {
        let scene = self.scene.as_ref().expect("begin was called");
        let here = view.pose.position;
        let Some(room) = scene.room_at(here) else {
            return false;
        };
        let Some(command) = self.commands.pop_front() else {
            return false;
        };
        match command {
            Command::Enter(label) => {
                if scene.rooms[room].label == label {
                    return true;
                }
                let door = scene
                    .doors_of(room)
                    .map(|(_, d)| d)
                    .find(|d| scene.rooms[d.other(room)].label == label);
                match door {
                    Some(d) => {
                        let next = d.other(room);
                        let inward = scene.inward_normal(d, next);
                        self.nav.cross_door(d.position, inward);
                        self.entry = Some((next, d.position, inward));
                        true
                    }
                    None => {
                        self.commands.clear();
                        false
                    }
                }
            }
            Command::Finish { turn, landmark, goal } => {
                let in_view_here = |class: &Option<String>| {
                    class
                        .as_ref()
                        .filter(|c| view.object_labels.contains(c))
                        .and_then(|c| scene.object(c))
                        .filter(|o| o.room == room)
                        .map(|o| o.position)
                };
                let pivot = in_view_here(&landmark).unwrap_or(here);
                let (origin, normal) = match self.entry {
                    Some((r, door, inward)) if r == room => (door, inward),
                    _ => (here, view.pose.direction()),
                };
                let side = side_of(turn.as_deref());
                let target = match in_view_here(&goal) {
                    Some(g) if side == 0.0 || side * lateral_offset(origin, normal, g) > 0.0 => g,
                    _ => {
                        let left = Point::new(-normal.y, normal.x);
                        let along = pivot.sub(origin).dot(normal);
                        let aside = origin.add(normal.scale(along)).add(left.scale(side * SIDE_STEP_M));
                        scene.rooms[room].rect.clamp(aside, ROOM_CLEARANCE_M)
                    }
                };
                self.nav.waypoints.push_back(pivot);
                self.nav.waypoints.push_back(target);
                true
            }
        }
    }
}

impl Policy for LiteralFollower {
    fn begin(&mut self, episode: &Episode, scene: &Scene) {
        self.scene = Some(scene.clone());
        self.commands = parse(&episode.instruction.tokens, &self.lexicon).into();
        self.nav = Navigator::default();
        self.entry = None;
    }

    fn act(&mut self, history: &[Observation]) -> Action {
        let view = history.last().expect("history holds the current view");
        loop {
            if let Some(action) = self.nav.next_action(view.pose) {
                return action;
            }
            if self.commands.is_empty() || !self.plan(view) {
                return Action::Stop;
            }
        }
    }
}
