//! Linguistic priors for finding and swapping direction, object and room
//! mentions: antonym pairs, object co-location sets and room adjacency sets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::text::normalize_phrase;
use crate::types::SpanKind;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.json");

/// On-disk layout of a lexicon file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LexiconFile {
    pub direction_pairs: Vec<[String; 2]>,
    pub object_colocation: BTreeMap<String, Vec<String>>,
    pub room_adjacency: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionLexicon {
    pairs: Vec<(String, String)>,
    antonyms: BTreeMap<String, String>,
}

impl DirectionLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut antonyms = BTreeMap::new();
        let mut normalized = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let (a, b) = (normalize_phrase(&a), normalize_phrase(&b));
            if a.is_empty() || b.is_empty() || a == b {
                return Err(Error::Validation(format!(
                    "invalid direction pair `{a}` / `{b}`"
                )));
            }
            for p in [&a, &b] {
                if antonyms.contains_key(p) {
                    return Err(Error::Validation(format!(
                        "direction phrase `{p}` appears in two pairs"
                    )));
                }
            }
            antonyms.insert(a.clone(), b.clone());
            antonyms.insert(b.clone(), a.clone());
            normalized.push((a, b));
        }
        Ok(DirectionLexicon {
            pairs: normalized,
            antonyms,
        })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.antonyms.keys().map(String::as_str)
    }

    pub fn antonym(&self, phrase: &str) -> Result<&str> {
        self.antonyms
            .get(&normalize_phrase(phrase))
            .map(String::as_str)
            .ok_or_else(|| Error::Unknown {
                kind: "direction",
                phrase: phrase.to_string(),
            })
    }
}

/// A vocabulary with, for every member, a nonempty set of related members
/// (co-located objects or adjacent rooms).
#[derive(Clone, Debug, PartialEq)]
pub struct RelatedVocabulary {
    kind: SpanKind,
    related: BTreeMap<String, BTreeSet<String>>,
}

pub type ObjectCooccurrence = RelatedVocabulary;
pub type RoomAdjacency = RelatedVocabulary;

impl RelatedVocabulary {
    pub fn new(kind: SpanKind, raw: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut related = BTreeMap::new();
        for (key, members) in raw {
            let key = normalize_phrase(key);
            let token_count = key.split(' ').count();
            if key.is_empty() || token_count > 2 {
                return Err(Error::Validation(format!(
                    "{} entry `{key}` must be one or two tokens",
                    kind.name()
                )));
            }
            let members: BTreeSet<String> = members.iter().map(|m| normalize_phrase(m)).collect();
            if members.is_empty() {
                return Err(Error::Validation(format!(
                    "{} `{key}` has no related entries",
                    kind.name()
                )));
            }
            if members.contains(&key) {
                return Err(Error::Validation(format!(
                    "{} `{key}` lists itself as related",
                    kind.name()
                )));
            }
            if related.insert(key.clone(), members).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate {} entry `{key}`",
                    kind.name()
                )));
            }
        }
        for (key, members) in &related {
            if let Some(m) = members.iter().find(|m| !related.contains_key(*m)) {
                return Err(Error::Validation(format!(
                    "{} `{key}` relates to `{m}`, which is not in the vocabulary",
                    kind.name()
                )));
            }
        }
        Ok(RelatedVocabulary { kind, related })
    }

    pub fn kind(&self) -> SpanKind {
        self.kind
    }

    pub fn members(&self) -> impl Iterator<Item = &str> {
        self.related.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.related.len()
    }

    pub fn is_empty(&self) -> bool {
        self.related.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.related.contains_key(name)
    }

    pub fn related(&self, name: &str) -> Result<&BTreeSet<String>> {
        self.related.get(name).ok_or_else(|| Error::Unknown {
            kind: self.kind.name(),
            phrase: name.to_string(),
        })
    }

    /// True when either entry lists the other.
    pub fn are_related(&self, a: &str, b: &str) -> bool {
        self.related.get(a).is_some_and(|s| s.contains(b))
            || self.related.get(b).is_some_and(|s| s.contains(a))
    }

    fn to_raw(&self) -> BTreeMap<String, Vec<String>> {
        self.related
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Lexicon {
    pub directions: DirectionLexicon,
    pub objects: ObjectCooccurrence,
    pub rooms: RoomAdjacency,
    /// Every phrase (as space-joined tokens) with its kind.
    phrases: BTreeMap<String, SpanKind>,
    max_phrase_tokens: usize,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.directions == other.directions
            && self.objects == other.objects
            && self.rooms == other.rooms
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        let file: LexiconFile =
            serde_json::from_str(DEFAULT_LEXICON).expect("shipped lexicon parses");
        Lexicon::from_file(file).expect("shipped lexicon is valid")
    }
}

fn pick<'a, R: Rng + ?Sized>(candidates: &[&'a str], rng: &mut R, what: &str) -> Result<&'a str> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates(what.to_string()));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

impl Lexicon {
    pub fn new(
        directions: DirectionLexicon,
        objects: ObjectCooccurrence,
        rooms: RoomAdjacency,
    ) -> Result<Self> {
        let mut phrases = BTreeMap::new();
        for (kind, vocab) in [
            (SpanKind::Direction, directions.phrases().collect::<Vec<_>>()),
            (SpanKind::Object, objects.members().collect()),
            (SpanKind::Room, rooms.members().collect()),
        ] {
            for phrase in vocab {
                if let Some(previous) = phrases.insert(phrase.to_string(), kind) {
                    return Err(Error::Validation(format!(
                        "`{phrase}` is both a {} and a {} entry",
                        previous.name(),
                        kind.name()
                    )));
                }
            }
        }
        let max_phrase_tokens = phrases.keys().map(|p| p.split(' ').count()).max().unwrap_or(1);
        Ok(Lexicon {
            directions,
            objects,
            rooms,
            phrases,
            max_phrase_tokens,
        })
    }

    pub fn from_file(file: LexiconFile) -> Result<Self> {
        let pairs = file
            .direction_pairs
            .into_iter()
            .map(|[a, b]| (a, b))
            .collect();
        Lexicon::new(
            DirectionLexicon::new(pairs)?,
            RelatedVocabulary::new(SpanKind::Object, &file.object_colocation)?,
            RelatedVocabulary::new(SpanKind::Room, &file.room_adjacency)?,
        )
    }

    pub fn to_file(&self) -> LexiconFile {
        LexiconFile {
            direction_pairs: self
                .directions
                .pairs()
                .iter()
                .map(|(a, b)| [a.clone(), b.clone()])
                .collect(),
            object_colocation: self.objects.to_raw(),
            room_adjacency: self.rooms.to_raw(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: LexiconFile = read_json(path)?;
        Lexicon::from_file(file).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(&self.to_file(), path)
    }

    /// Kind of a normalized phrase, if it is in any vocabulary.
    pub fn kind_of(&self, phrase: &str) -> Option<SpanKind> {
        self.phrases.get(phrase).copied()
    }

    pub fn max_phrase_tokens(&self) -> usize {
        self.max_phrase_tokens
    }

    pub fn vocabulary(&self, kind: SpanKind) -> Vec<&str> {
        match kind {
            SpanKind::Direction => self.directions.phrases().collect(),
            SpanKind::Object => self.objects.members().collect(),
            SpanKind::Room => self.rooms.members().collect(),
        }
    }

    pub fn antonym(&self, phrase: &str) -> Result<&str> {
        self.directions.antonym(phrase)
    }

    /// Uniform draw from the co-location set of `class`.
    pub fn sample_colocated<R: Rng + ?Sized>(&self, class: &str, rng: &mut R) -> Result<&str> {
        let set: Vec<&str> = self.objects.related(class)?.iter().map(String::as_str).collect();
        pick(&set, rng, class)
    }

    /// Uniform draw from the adjacency set of `room`.
    pub fn sample_adjacent<R: Rng + ?Sized>(&self, room: &str, rng: &mut R) -> Result<&str> {
        let set: Vec<&str> = self.rooms.related(room)?.iter().map(String::as_str).collect();
        pick(&set, rng, room)
    }

    /// Uniform draw over the whole vocabulary of `kind` minus `exclude`.
    pub fn sample_unconstrained<R: Rng + ?Sized>(
        &self,
        kind: SpanKind,
        exclude: &[&str],
        rng: &mut R,
    ) -> Result<&str> {
        let candidates: Vec<&str> = self
            .vocabulary(kind)
            .into_iter()
            .filter(|p| !exclude.contains(p))
            .collect();
        pick(&candidates, rng, &format!("{} vocabulary", kind.name()))
    }
}
