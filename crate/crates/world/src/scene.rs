//! Room-graph scenes: axis-aligned rooms on a grid, doors at wall midpoints,
//! objects placed in co-located clusters.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use vlnie_core::rng;
use vlnie_core::{Error, Lexicon, Point, Result, SpanKind};

/// Side length of every generated room, in metres.
pub const ROOM_SIZE_M: f64 = 6.0;
/// Half the width of a door opening.
pub const DOOR_HALF_WIDTH_M: f64 = 0.5;
/// Minimum distance between an object and its room's walls.
pub const WALL_MARGIN_M: f64 = 0.5;
/// Objects keep at least this far from both centre lines of their room, so
/// every object sits clearly to one side of any doorway axis.
pub const AXIS_CLEARANCE_M: f64 = 1.0;
const MIN_OBJECT_SEPARATION_M: f64 = 1.0;
const LAYOUT_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    /// Half-open containment, so a point on a shared wall belongs to exactly one room.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x < self.max.x && p.y >= self.min.y && p.y < self.max.y
    }

    pub fn center(&self) -> Point {
        self.min.add(self.max).scale(0.5)
    }

    pub fn clamp(&self, p: Point, margin: f64) -> Point {
        Point::new(
            p.x.clamp(self.min.x + margin, self.max.x - margin),
            p.y.clamp(self.min.y + margin, self.max.y - margin),
        )
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
    }

    /// Largest `t` at which `p + t (q - p)` is still inside the closed
    /// rectangle, given that `p` is inside it.
    fn exit_param(&self, p: Point, q: Point) -> f64 {
        let d = q.sub(p);
        let axis = |p: f64, d: f64, lo: f64, hi: f64| {
            if d > 0.0 {
                (hi - p) / d
            } else if d < 0.0 {
                (lo - p) / d
            } else {
                f64::INFINITY
            }
        };
        axis(p.x, d.x, self.min.x, self.max.x).min(axis(p.y, d.y, self.min.y, self.max.y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub label: String,
    pub rect: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub rooms: (usize, usize),
    pub position: Point,
}

impl Door {
    pub fn connects(&self, room: usize) -> bool {
        self.rooms.0 == room || self.rooms.1 == room
    }

    pub fn other(&self, room: usize) -> usize {
        if self.rooms.0 == room {
            self.rooms.1
        } else {
            self.rooms.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: String,
    pub position: Point,
    pub room: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn room_at(&self, p: Point) -> Option<usize> {
        self.rooms.iter().position(|r| r.rect.contains(p))
    }

    pub fn doors_of(&self, room: usize) -> impl Iterator<Item = (usize, &Door)> {
        self.doors.iter().enumerate().filter(move |(_, d)| d.connects(room))
    }

    pub fn objects_in(&self, room: usize) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(move |o| o.room == room)
    }

    pub fn object(&self, class: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.class == class)
    }

    /// Unit vector across `door` pointing into `room`.
    pub fn inward_normal(&self, door: &Door, room: usize) -> Point {
        let c = self.rooms[room].rect.center();
        let d = c.sub(door.position);
        if d.x.abs() > d.y.abs() {
            Point::new(d.x.signum(), 0.0)
        } else {
            Point::new(0.0, d.y.signum())
        }
    }

    /// True when the straight segment from `p` to `q` stays inside rooms and
    /// crosses walls only through door openings.
    pub fn segment_clear(&self, p: Point, q: Point) -> bool {
        let Some(mut room) = self.room_at(p) else {
            return false;
        };
        for _ in 0..=self.rooms.len() {
            let rect = &self.rooms[room].rect;
            if rect.contains(q) {
                return true;
            }
            let t = rect.exit_param(p, q);
            if !(0.0..=1.0).contains(&t) {
                return false;
            }
            let exit = p.add(q.sub(p).scale(t));
            let door = self
                .doors_of(room)
                .map(|(_, d)| d)
                .find(|d| d.position.distance(exit) <= DOOR_HALF_WIDTH_M);
            match door {
                Some(d) => room = d.other(room),
                None => return false,
            }
        }
        false
    }

    /// Fewest-doors route between two rooms, endpoints included.
    pub fn route(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
        let mut frontier = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(r) = frontier.pop_front() {
            if r == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(&p) = parent.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for (_, d) in self.doors_of(r) {
                let n = d.other(r);
                if seen.insert(n) {
                    parent.insert(n, r);
                    frontier.push_back(n);
                }
            }
        }
        None
    }

    pub fn door_between(&self, a: usize, b: usize) -> Option<&Door> {
        self.doors.iter().find(|d| d.connects(a) && d.other(a) == b && a != b)
    }

    pub fn validate(&self, lexicon: &Lexicon) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("scene {}: {msg}", self.id)));
        if self.rooms.len() < 2 {
            return fail("fewer than two rooms".into());
        }
        for (i, a) in self.rooms.iter().enumerate() {
            if lexicon.kind_of(&a.label) != Some(SpanKind::Room) {
                return fail(format!("unknown room label `{}`", a.label));
            }
            if !(a.rect.min.x < a.rect.max.x && a.rect.min.y < a.rect.max.y) {
                return fail(format!("room {i} has an empty rectangle"));
            }
            if let Some(j) = self.rooms[..i].iter().position(|b| b.rect.overlaps(&a.rect)) {
                return fail(format!("rooms {j} and {i} overlap"));
            }
        }
        for d in &self.doors {
            let (a, b) = d.rooms;
            if a >= self.rooms.len() || b >= self.rooms.len() || a == b {
                return fail(format!("door {:?} references invalid rooms", d.rooms));
            }
            let (ra, rb) = (&self.rooms[a].rect, &self.rooms[b].rect);
            let on_x_wall = (ra.max.x == rb.min.x || rb.max.x == ra.min.x)
                && [ra.min.x, ra.max.x].contains(&d.position.x)
                && d.position.y - DOOR_HALF_WIDTH_M >= ra.min.y.max(rb.min.y)
                && d.position.y + DOOR_HALF_WIDTH_M <= ra.max.y.min(rb.max.y);
            let on_y_wall = (ra.max.y == rb.min.y || rb.max.y == ra.min.y)
                && [ra.min.y, ra.max.y].contains(&d.position.y)
                && d.position.x - DOOR_HALF_WIDTH_M >= ra.min.x.max(rb.min.x)
                && d.position.x + DOOR_HALF_WIDTH_M <= ra.max.x.min(rb.max.x);
            if !(on_x_wall || on_y_wall) {
                return fail(format!("door between rooms {a} and {b} is not on a shared wall"));
            }
            if !lexicon.rooms.are_related(&self.rooms[a].label, &self.rooms[b].label) {
                return fail(format!(
                    "door joins {} and {}, which are not adjacent room types",
                    self.rooms[a].label, self.rooms[b].label
                ));
            }
        }
        for o in &self.objects {
            if lexicon.kind_of(&o.class) != Some(SpanKind::Object) {
                return fail(format!("unknown object class `{}`", o.class));
            }
            if o.room >= self.rooms.len() || !self.rooms[o.room].rect.contains(o.position) {
                return fail(format!("object {} lies outside its room", o.class));
            }
        }
        Ok(())
    }
}

const NEIGHBOUR_CELLS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn cell_rect(cell: (i32, i32)) -> Rect {
    let min = Point::new(cell.0 as f64 * ROOM_SIZE_M, cell.1 as f64 * ROOM_SIZE_M);
    Rect {
        min,
        max: min.add(Point::new(ROOM_SIZE_M, ROOM_SIZE_M)),
    }
}

/// Grows a tree of rooms on the grid; each new room is a lexicon neighbour
/// of the room it opens from. Room types are unique within a scene.
fn grow_layout<R: Rng>(lexicon: &Lexicon, size: usize, rng: &mut R) -> Option<(Vec<Room>, Vec<Door>)> {
    let labels = lexicon.vocabulary(SpanKind::Room);
    let first = labels[rng.gen_range(0..labels.len())];
    let mut cells = vec![(0i32, 0i32)];
    let mut rooms = vec![Room {
        label: first.to_string(),
        rect: cell_rect((0, 0)),
    }];
    let mut doors = Vec::new();
    while rooms.len() < size {
        let mut options = Vec::new();
        for (i, &(cx, cy)) in cells.iter().enumerate() {
            for (dx, dy) in NEIGHBOUR_CELLS {
                let cell = (cx + dx, cy + dy);
                if cells.contains(&cell) {
                    continue;
                }
                for label in lexicon.rooms.related(&rooms[i].label).ok()? {
                    if !rooms.iter().any(|r| &r.label == label) {
                        options.push((i, cell, label.clone()));
                    }
                }
            }
        }
        let (parent, cell, label) = options.choose(rng)?.clone();
        let rect = cell_rect(cell);
        let shared = rooms[parent].rect.center().add(rect.center()).scale(0.5);
        doors.push(Door {
            rooms: (parent, rooms.len()),
            position: shared,
        });
        cells.push(cell);
        rooms.push(Room { label, rect });
    }
    Some((rooms, doors))
}

fn place_in_room<R: Rng>(rect: &Rect, taken: &[Point], rng: &mut R) -> Option<Point> {
    let c = rect.center();
    let span = ROOM_SIZE_M / 2.0 - WALL_MARGIN_M - AXIS_CLEARANCE_M;
    for _ in 0..LAYOUT_ATTEMPTS {
        let off = |rng: &mut R| {
            let mag = AXIS_CLEARANCE_M + rng.gen::<f64>() * span;
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        let p = c.add(Point::new(off(rng), off(rng)));
        if taken.iter().all(|t| t.distance(p) >= MIN_OBJECT_SEPARATION_M) {
            return Some(p);
        }
    }
    None
}

/// Each room gets a cluster: a seed class plus members of its co-location
/// set, topped up with unused classes when the set runs dry.
fn place_objects<R: Rng>(lexicon: &Lexicon, rooms: &[Room], rng: &mut R) -> Option<Vec<SceneObject>> {
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut objects = Vec::new();
    for (room, r) in rooms.iter().enumerate() {
        let count = rng.gen_range(2..=3);
        let free: Vec<&str> = lexicon
            .vocabulary(SpanKind::Object)
            .into_iter()
            .filter(|c| !used.contains(*c))
            .collect();
        let has_free_mate = |c: &&str| {
            lexicon
                .objects
                .related(c)
                .is_ok_and(|m| m.iter().any(|k| !used.contains(k)))
        };
        let seeds: Vec<&str> = free.iter().copied().filter(has_free_mate).collect();
        let seed = *seeds.choose(rng).or_else(|| free.choose(rng))?;
        let mut cluster = vec![seed.to_string()];
        let mut mates: Vec<&String> = lexicon
            .objects
            .related(seed)
            .ok()?
            .iter()
            .filter(|c| !used.contains(*c))
            .collect();
        mates.shuffle(rng);
        cluster.extend(mates.into_iter().take(count - 1).cloned());
        let mut rest: Vec<&str> = free.into_iter().filter(|c| !cluster.iter().any(|k| k == c)).collect();
        rest.shuffle(rng);
        while cluster.len() < count {
            cluster.push(rest.pop()?.to_string());
        }
        let mut taken = Vec::new();
        for class in cluster {
            let position = place_in_room(&r.rect, &taken, rng)?;
            taken.push(position);
            used.insert(class.clone());
            objects.push(SceneObject { class, position, room });
        }
    }
    Some(objects)
}

pub fn generate_scene(id: &str, lexicon: &Lexicon, size: usize, seed: u64) -> Result<Scene> {
    if size < 2 {
        return Err(Error::Precondition(format!("scene size {size} is below 2")));
    }
    let mut rng = rng::seeded(seed);
    for _ in 0..LAYOUT_ATTEMPTS {
        let Some((rooms, doors)) = grow_layout(lexicon, size, &mut rng) else {
            continue;
        };
        let Some(objects) = place_objects(lexicon, &rooms, &mut rng) else {
            continue;
        };
        let scene = Scene {
            id: id.to_string(),
            rooms,
            doors,
            objects,
        };
        scene.validate(lexicon)?;
        return Ok(scene);
    }
    Err(Error::Precondition(format!(
        "no feasible layout with {size} rooms after {LAYOUT_ATTEMPTS} attempts"
    )))
}
