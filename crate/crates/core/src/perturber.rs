//! Benchmark construction: tag candidate spans, filter eligible episodes,
//! inject errors and pair every correct episode with its perturbed copy.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::rng;
use crate::text::normalize_text;
use crate::types::{
    BenchmarkSet, BenchmarkStats, Edit, Episode, ErrorType, Instruction, PerturbationRecord,
    SpanKind, TokenSpan,
};

pub const DEFAULT_MIN_TOKENS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_tokens: usize,
    pub required_kinds: BTreeSet<SpanKind>,
}

impl FilterConfig {
    pub fn new(min_tokens: usize, required_kinds: BTreeSet<SpanKind>) -> Result<Self> {
        if min_tokens == 0 {
            return Err(Error::Config("min_tokens must be at least 1".into()));
        }
        if required_kinds.is_empty() {
            return Err(Error::Config("required_kinds must not be empty".into()));
        }
        Ok(FilterConfig {
            min_tokens,
            required_kinds,
        })
    }

    /// The filter that makes episodes eligible for `error_type`.
    pub fn for_error_type(error_type: ErrorType, min_tokens: usize) -> Result<Self> {
        FilterConfig::new(min_tokens, error_type.required_kinds().into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub error_type: ErrorType,
    pub common_sense: bool,
    pub seed: u64,
}

/// Greedy longest-match tagging, left to right, over all three vocabularies.
pub fn tag_spans(tokens: &[String], lexicon: &Lexicon) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lexicon.max_phrase_tokens().min(tokens.len() - i);
        let hit = (1..=longest).rev().find_map(|len| {
            let phrase = tokens[i..i + len].join(" ");
            lexicon.kind_of(&phrase).map(|kind| (len, kind, phrase))
        });
        match hit {
            Some((len, kind, surface)) => {
                spans.push(TokenSpan {
                    start_index: i,
                    end_index: i + len,
                    kind,
                    surface,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    spans
}

fn spans_of(episode: &Episode, lexicon: &Lexicon) -> Vec<TokenSpan> {
    if episode.gold_spans.is_empty() {
        tag_spans(&episode.instruction.tokens, lexicon)
    } else {
        episode.gold_spans.clone()
    }
}

/// Keeps episodes that are long enough and mention every required kind.
/// Kept episodes carry tagged `gold_spans`; order is preserved.
pub fn filter_episodes(episodes: &[Episode], filter: &FilterConfig, lexicon: &Lexicon) -> Vec<Episode> {
    episodes
        .iter()
        .filter(|e| e.instruction.length >= filter.min_tokens)
        .filter_map(|e| {
            let spans = spans_of(e, lexicon);
            let kinds: BTreeSet<SpanKind> = spans.iter().map(|s| s.kind).collect();
            filter.required_kinds.is_subset(&kinds).then(|| Episode {
                gold_spans: spans,
                ..e.clone()
            })
        })
        .collect()
}

fn replacement_for<'a, R: Rng + ?Sized>(
    span: &TokenSpan,
    common_sense: bool,
    lexicon: &'a Lexicon,
    rng: &mut R,
) -> Result<&'a str> {
    match (span.kind, common_sense) {
        (SpanKind::Direction, _) => lexicon.antonym(&span.surface),
        (SpanKind::Object, true) => lexicon.sample_colocated(&span.surface, rng),
        (SpanKind::Room, true) => lexicon.sample_adjacent(&span.surface, rng),
        (kind, false) => lexicon.sample_unconstrained(kind, &[span.surface.as_str()], rng),
    }
}

/// Injects the errors of `plan.error_type` into a copy of `episode`.
///
/// One span of each required kind is chosen uniformly among the candidates.
/// Edits are spliced right to left so earlier indices stay valid, and the
/// record stores both the original and the post-edit span of every edit.
pub fn inject<R: Rng + ?Sized>(
    episode: &Episode,
    plan: &InjectionPlan,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<Episode> {
    if plan.error_type == ErrorType::None {
        return Err(Error::Precondition("cannot inject error type `none`".into()));
    }
    let spans = spans_of(episode, lexicon);
    let mut chosen: Vec<(TokenSpan, Vec<String>)> = Vec::new();
    for kind in plan.error_type.required_kinds() {
        let candidates: Vec<&TokenSpan> = spans.iter().filter(|s| s.kind == kind).collect();
        if candidates.is_empty() {
            return Err(Error::Precondition(format!(
                "episode {} has no {} span for a {} injection",
                episode.id,
                kind.name(),
                plan.error_type
            )));
        }
        let span = candidates[rng.gen_range(0..candidates.len())].clone();
        let replacement = replacement_for(&span, plan.common_sense, lexicon, rng)?;
        chosen.push((span, normalize_text(replacement)));
    }

    let mut tokens = episode.instruction.tokens.clone();
    let mut by_position_desc: Vec<&(TokenSpan, Vec<String>)> = chosen.iter().collect();
    by_position_desc.sort_by_key(|(s, _)| std::cmp::Reverse(s.start_index));
    for (span, replacement) in by_position_desc {
        tokens.splice(span.start_index..span.end_index, replacement.iter().cloned());
    }

    chosen.sort_by_key(|(s, _)| s.start_index);
    // Length change introduced by every edit that starts before `index`.
    let shift_before = |index: usize| -> isize {
        chosen
            .iter()
            .filter(|(s, _)| s.start_index < index)
            .map(|(s, r)| r.len() as isize - s.len() as isize)
            .sum()
    };
    let mut edits = Vec::with_capacity(chosen.len());
    for (span, replacement) in &chosen {
        let start = (span.start_index as isize + shift_before(span.start_index)) as usize;
        edits.push(Edit {
            original_span: span.clone(),
            replacement: replacement.join(" "),
            new_span: TokenSpan {
                start_index: start,
                end_index: start + replacement.len(),
                kind: span.kind,
                surface: replacement.join(" "),
            },
        });
    }
    let gold_spans = spans
        .iter()
        .map(|s| match edits.iter().find(|e| e.original_span == *s) {
            Some(edit) => edit.new_span.clone(),
            None => {
                let shift = shift_before(s.start_index);
                TokenSpan {
                    start_index: (s.start_index as isize + shift) as usize,
                    end_index: (s.end_index as isize + shift) as usize,
                    ..s.clone()
                }
            }
        })
        .collect();

    let perturbed = Episode {
        id: Episode::perturbed_id(&episode.id, plan.error_type),
        instruction: Instruction::from_tokens(tokens)?,
        gold_spans,
        perturbation: PerturbationRecord {
            error_type: plan.error_type,
            error_count: edits.len(),
            edits,
        },
        ..episode.clone()
    };
    perturbed.validate()?;
    Ok(perturbed)
}

pub fn compute_stats(correct: &[Episode], perturbed: &[Episode]) -> BenchmarkStats {
    let mean = |xs: &[Episode], f: &dyn Fn(&Episode) -> usize| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().map(f).sum::<usize>() as f64 / xs.len() as f64
        }
    };
    BenchmarkStats {
        episode_count: correct.len(),
        errors_per_episode: mean(perturbed, &|e| e.perturbation.error_count),
        mean_instruction_length_correct: mean(correct, &|e| e.instruction.length),
        mean_instruction_length_perturbed: mean(perturbed, &|e| e.instruction.length),
    }
}

/// Filters `episodes` into the correct set and builds one perturbed copy
/// per member, each with its own generator derived from (seed, episode id).
pub fn build_benchmark(
    episodes: &[Episode],
    plan: &InjectionPlan,
    filter: &FilterConfig,
    lexicon: &Lexicon,
) -> Result<BenchmarkSet> {
    let correct = filter_episodes(episodes, filter, lexicon);
    if correct.is_empty() {
        return Err(Error::Precondition(format!(
            "no episodes left after filtering for {}",
            plan.error_type
        )));
    }
    let perturbed = correct
        .iter()
        .map(|e| inject(e, plan, lexicon, &mut rng::stream(plan.seed, &e.id)))
        .collect::<Result<Vec<_>>>()?;
    let stats = compute_stats(&correct, &perturbed);
    Ok(BenchmarkSet {
        error_type: plan.error_type,
        common_sense: plan.common_sense,
        correct,
        perturbed,
        seed: plan.seed,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::types::{Point, Pose};

    fn tokens(text: &str) -> Vec<String> {
        normalize_text(text)
    }

    fn episode(id: &str, text: &str) -> Episode {
        Episode {
            id: id.into(),
            scene_id: "s".into(),
            instruction: Instruction::from_text(text).unwrap(),
            gold_spans: vec![],
            start_pose: Pose::new(Point::default(), 0).unwrap(),
            goal_position: Point::new(1.0, 1.0),
            gold_path: vec![Point::default(), Point::new(1.0, 1.0)],
            perturbation: PerturbationRecord::none(),
        }
    }

    fn summary(spans: &[TokenSpan]) -> Vec<(SpanKind, &str, usize, usize)> {
        spans
            .iter()
            .map(|s| (s.kind, s.surface.as_str(), s.start_index, s.end_index))
            .collect()
    }

    #[test]
    fn tags_multiword_phrases() {
        let lex = Lexicon::default();
        let spans = tag_spans(&tokens("go out of the living room"), &lex);
        assert_eq!(
            summary(&spans),
            vec![
                (SpanKind::Direction, "out of", 1, 3),
                (SpanKind::Room, "living room", 4, 6)
            ]
        );
    }

    #[test]
    fn longest_match_wins() {
        let lex = Lexicon::default();
        let spans = tag_spans(&tokens("leftmost"), &lex);
        assert_eq!(summary(&spans), vec![(SpanKind::Direction, "leftmost", 0, 1)]);
        let spans = tag_spans(&tokens("the coffee table"), &lex);
        assert_eq!(summary(&spans), vec![(SpanKind::Object, "coffee table", 1, 3)]);
    }

    #[test]
    fn no_lexicon_words_no_spans() {
        assert!(tag_spans(&tokens("walk a little and wait"), &Lexicon::default()).is_empty());
    }

    #[test]
    fn short_episodes_are_excluded() {
        let lex = Lexicon::default();
        let filter = FilterConfig::for_error_type(ErrorType::Direction, 10).unwrap();
        let short = episode("a", "turn left at the sofa");
        assert!(filter_episodes(&[short], &filter, &lex).is_empty());
    }

    #[test]
    fn episode_with_all_kinds_passes_all_filter() {
        let lex = Lexicon::default();
        let filter = FilterConfig::for_error_type(ErrorType::All, 10).unwrap();
        let e = episode(
            "a",
            "exit the kitchen and turn left at the sofa, then wait by the fireplace.",
        );
        let kept = filter_episodes(&[e], &filter, &lex);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].gold_spans.len(), 4);
    }

    #[test]
    fn direction_filter_on_fixture() {
        // Hand-tagged: 1, 2, 4 and 6 contain direction words.
        let lex = Lexicon::default();
        let fixture = [
            episode("1", "walk forward past the sofa and stop near the big window please."),
            episode("2", "exit the kitchen then turn right and wait by the stove for a while."),
            episode("3", "enter the bedroom and stop next to the bed near the small plant."),
            episode("4", "go up the stairs and wait at the very top of them for now."),
            episode("5", "walk past the sofa and the television and stop by the fireplace."),
            episode("6", "turn around and go into the bathroom then stop by the sink there."),
        ];
        let filter = FilterConfig::for_error_type(ErrorType::Direction, 10).unwrap();
        let kept: Vec<_> = filter_episodes(&fixture, &filter, &lex)
            .into_iter()
            .map(|e| e.id)
            .collect();
        assert_eq!(kept, vec!["1", "2", "4", "6"]);
    }

    #[test]
    fn filter_config_rejects_degenerate_settings() {
        assert!(FilterConfig::new(0, [SpanKind::Room].into()).is_err());
        assert!(FilterConfig::new(10, BTreeSet::new()).is_err());
    }

    #[test]
    fn direction_error_swaps_right_for_left() {
        let lex = Lexicon::default();
        let e = episode(
            "fig1",
            "exit the bathroom and go right, then stop next to the bed in the bedroom.",
        );
        let plan = InjectionPlan {
            error_type: ErrorType::Direction,
            common_sense: true,
            seed: 0,
        };
        let p = inject(&e, &plan, &lex, &mut seeded(1)).unwrap();
        assert_eq!(p.instruction.tokens[5], "left");
        assert_eq!(p.perturbation.edits.len(), 1);
        assert_eq!(p.perturbation.gold_indices(), vec![5]);
        assert_eq!(p.id, "fig1+direction");
    }

    #[test]
    fn room_object_edits_one_room_and_one_object() {
        let lex = Lexicon::default();
        let e = episode(
            "a",
            "exit the kitchen, turn left at the sofa and wait in the living room by the rug.",
        );
        let plan = InjectionPlan {
            error_type: ErrorType::RoomObject,
            common_sense: true,
            seed: 0,
        };
        for s in 0..20 {
            let p = inject(&e, &plan, &lex, &mut seeded(s)).unwrap();
            let kinds: Vec<_> = p.perturbation.edits.iter().map(|e| e.new_span.kind).collect();
            assert_eq!(kinds.len(), 2);
            assert!(kinds.contains(&SpanKind::Room) && kinds.contains(&SpanKind::Object));
        }
    }

    #[test]
    fn multiword_replacement_shifts_later_indices() {
        let lex = Lexicon::default();
        // Only room: "kitchen"; force an unconstrained replacement until a
        // two-token room shows up, then check later spans shifted by one.
        let e = episode("a", "exit the kitchen and turn left at the sofa near the rug.");
        let plan = InjectionPlan {
            error_type: ErrorType::All,
            common_sense: false,
            seed: 0,
        };
        let mut seen_multiword = false;
        for s in 0..200 {
            let p = inject(&e, &plan, &lex, &mut seeded(s)).unwrap();
            let room = p
                .perturbation
                .edits
                .iter()
                .find(|e| e.new_span.kind == SpanKind::Room)
                .unwrap();
            if room.new_span.len() == 2 {
                seen_multiword = true;
                let dir = p.perturbation.edits.iter().find(|e| e.new_span.kind == SpanKind::Direction).unwrap();
                assert_eq!(dir.new_span.start_index, dir.original_span.start_index + 1);
            }
            for edit in &p.perturbation.edits {
                assert_eq!(
                    p.instruction.tokens[edit.new_span.start_index..edit.new_span.end_index].join(" "),
                    edit.replacement
                );
            }
        }
        assert!(seen_multiword);
    }

    #[test]
    fn missing_kind_violates_precondition() {
        let lex = Lexicon::default();
        let e = episode("a", "exit the kitchen and wait by the sofa for a short while.");
        let plan = InjectionPlan {
            error_type: ErrorType::Direction,
            common_sense: false,
            seed: 0,
        };
        assert!(matches!(inject(&e, &plan, &lex, &mut seeded(0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn empty_benchmark_is_an_error() {
        let lex = Lexicon::default();
        let plan = InjectionPlan {
            error_type: ErrorType::Direction,
            common_sense: false,
            seed: 0,
        };
        let filter = FilterConfig::for_error_type(ErrorType::Direction, 10).unwrap();
        assert!(build_benchmark(&[], &plan, &filter, &lex).is_err());
    }
}
