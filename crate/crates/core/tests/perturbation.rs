use std::collections::BTreeSet;

use proptest::prelude::*;
use vlnie_core::perturber::{
    build_benchmark, filter_episodes, inject, tag_spans, FilterConfig, InjectionPlan,
};
use vlnie_core::rng::seeded;
use vlnie_core::{
    Episode, ErrorType, Instruction, Lexicon, PerturbationRecord, Point, Pose, SpanKind,
};

const FILLER: &[&str] = &["the", "and", "walk", "then", "past", "near", "stop", "wait", ".", ","];

fn episode(id: &str, tokens: Vec<String>) -> Episode {
    let start = Point::new(0.0, 0.0);
    Episode {
        id: id.into(),
        scene_id: "scene".into(),
        instruction: Instruction::from_tokens(tokens).unwrap(),
        gold_spans: Vec::new(),
        start_pose: Pose::new(start, 0).unwrap(),
        goal_position: Point::new(3.0, 4.0),
        gold_path: vec![start, Point::new(3.0, 4.0)],
        perturbation: PerturbationRecord::none(),
    }
}

/// Instructions interleaving filler words with at least one phrase of each kind.
fn arb_tokens() -> impl Strategy<Value = Vec<String>> {
    let lexicon = Lexicon::default();
    let phrases: Vec<String> = SpanKind::ALL
        .iter()
        .flat_map(|k| lexicon.vocabulary(*k))
        .map(String::from)
        .collect();
    let by_kind: Vec<Vec<String>> = SpanKind::ALL
        .iter()
        .map(|k| lexicon.vocabulary(*k).into_iter().map(String::from).collect())
        .collect();
    let piece = prop_oneof![
        3 => prop::sample::select(FILLER).prop_map(String::from),
        1 => prop::sample::select(phrases),
    ];
    (
        prop::collection::vec(piece, 8..30),
        prop::sample::select(by_kind[0].clone()),
        prop::sample::select(by_kind[1].clone()),
        prop::sample::select(by_kind[2].clone()),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(mut pieces, d, o, r, at)| {
            for p in [d, o, r] {
                let i = at.index(pieces.len() + 1);
                pieces.insert(i, p);
            }
            pieces.join(" ").split(' ').map(String::from).collect()
        })
}

/// Rebuilds the perturbed tokens from the original and the record alone.
fn apply_record(original: &[String], record: &PerturbationRecord) -> Vec<String> {
    let mut edits: Vec<_> = record.edits.iter().collect();
    edits.sort_by_key(|e| e.original_span.start_index);
    let mut out = Vec::new();
    let mut cursor = 0;
    for e in edits {
        out.extend_from_slice(&original[cursor..e.original_span.start_index]);
        out.extend(e.replacement.split(' ').map(String::from));
        cursor = e.original_span.end_index;
    }
    out.extend_from_slice(&original[cursor..]);
    out
}

fn check_perturbation(lexicon: &Lexicon, original: &Episode, perturbed: &Episode, plan: &InjectionPlan) -> Result<(), TestCaseError> {
    let record = &perturbed.perturbation;
    prop_assert_eq!(record.error_type, plan.error_type);
    prop_assert_eq!(record.edits.len(), plan.error_type.error_count());
    prop_assert_eq!(record.error_count, record.edits.len());

    let kinds: BTreeSet<SpanKind> = record.edits.iter().map(|e| e.original_span.kind).collect();
    let wanted: BTreeSet<SpanKind> = plan.error_type.required_kinds().into_iter().collect();
    prop_assert_eq!(kinds, wanted);

    // Edit locality: nothing changes outside the recorded spans.
    let rebuilt = apply_record(&original.instruction.tokens, record);
    prop_assert_eq!(&rebuilt, &perturbed.instruction.tokens);
    for e in &record.edits {
        let orig = &original.instruction.tokens[e.original_span.start_index..e.original_span.end_index];
        prop_assert_eq!(orig.join(" "), e.original_span.surface.clone());
        let new = &perturbed.instruction.tokens[e.new_span.start_index..e.new_span.end_index];
        prop_assert_eq!(new.join(" "), e.replacement.clone());
        prop_assert_ne!(&e.replacement, &e.original_span.surface);
        prop_assert_eq!(e.new_span.kind, e.original_span.kind);

        let surface = e.original_span.surface.as_str();
        match e.original_span.kind {
            SpanKind::Direction => prop_assert_eq!(e.replacement.as_str(), lexicon.antonym(surface).unwrap()),
            SpanKind::Object if plan.common_sense => {
                prop_assert!(lexicon.objects.related(surface).unwrap().contains(&e.replacement))
            }
            SpanKind::Room if plan.common_sense => {
                prop_assert!(lexicon.rooms.related(surface).unwrap().contains(&e.replacement))
            }
            kind => prop_assert_eq!(lexicon.kind_of(&e.replacement), Some(kind)),
        }
    }
    perturbed.validate().map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(perturbed.source_id(), original.id.as_str());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn injections_are_local_typed_and_counted(
        tokens in arb_tokens(),
        type_index in 0usize..5,
        common_sense in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let lexicon = Lexicon::default();
        let plan = InjectionPlan { error_type: ErrorType::INJECTABLE[type_index], common_sense, seed };
        let original = episode("ep", tokens);
        let filter = FilterConfig::for_error_type(plan.error_type, 1).unwrap();
        let kept = filter_episodes(std::slice::from_ref(&original), &filter, &lexicon);
        prop_assert_eq!(kept.len(), 1);
        let original = &kept[0];
        let perturbed = inject(original, &plan, &lexicon, &mut seeded(seed)).unwrap();
        check_perturbation(&lexicon, original, &perturbed, &plan)?;

        let again = inject(original, &plan, &lexicon, &mut seeded(seed)).unwrap();
        prop_assert_eq!(again, perturbed);
    }

    #[test]
    fn tagged_spans_are_disjoint_and_in_lexicon(tokens in arb_tokens()) {
        let lexicon = Lexicon::default();
        let spans = tag_spans(&tokens, &lexicon);
        for (i, s) in spans.iter().enumerate() {
            s.validate(&tokens).unwrap();
            prop_assert_eq!(lexicon.kind_of(&s.surface), Some(s.kind));
            if i > 0 {
                prop_assert!(spans[i - 1].end_index <= s.start_index);
            }
        }
    }
}

fn corpus(n: usize) -> Vec<Episode> {
    let lexicon = Lexicon::default();
    let rooms = lexicon.vocabulary(SpanKind::Room);
    let objects = lexicon.vocabulary(SpanKind::Object);
    let dirs = ["left", "right"];
    (0..n)
        .map(|i| {
            let text = format!(
                "exit the {} and turn {} at the {} , then wait there .",
                rooms[i % rooms.len()],
                dirs[i % 2],
                objects[(i * 7) % objects.len()]
            );
            episode(&format!("ep-{i:04}"), Instruction::from_text(&text).unwrap().tokens)
        })
        .collect()
}

#[test]
fn hundred_eligible_episodes_give_hundred_pairs() {
    let lexicon = Lexicon::default();
    let plan = InjectionPlan { error_type: ErrorType::All, common_sense: true, seed: 5 };
    let filter = FilterConfig::for_error_type(plan.error_type, 10).unwrap();
    let set = build_benchmark(&corpus(100), &plan, &filter, &lexicon).unwrap();
    set.validate().unwrap();
    assert_eq!(set.correct.len(), 100);
    assert_eq!(set.perturbed.len(), 100);
    assert_eq!(set.stats.episode_count, 100);
    assert_eq!(set.stats.errors_per_episode, 3.0);
}

#[test]
fn stats_match_an_independent_recount() {
    let lexicon = Lexicon::default();
    for error_type in ErrorType::INJECTABLE {
        let plan = InjectionPlan { error_type, common_sense: false, seed: 21 };
        let filter = FilterConfig::for_error_type(error_type, 10).unwrap();
        let set = build_benchmark(&corpus(60), &plan, &filter, &lexicon).unwrap();

        let mut correct_tokens = 0usize;
        for e in &set.correct {
            correct_tokens += e.instruction.raw_text.split_whitespace().count()
                + e.instruction.raw_text.matches(['.', ',']).count()
                - e.instruction.raw_text.split_whitespace().filter(|w| *w == "." || *w == ",").count();
        }
        let perturbed_tokens: usize = set.perturbed.iter().map(|e| e.instruction.tokens.len()).sum();
        let edits: usize = set.perturbed.iter().map(|e| e.perturbation.edits.len()).sum();
        let n = set.correct.len() as f64;
        assert_eq!(set.stats.episode_count, set.correct.len());
        assert_eq!(set.stats.errors_per_episode, edits as f64 / n);
        assert!((set.stats.mean_instruction_length_correct - correct_tokens as f64 / n).abs() < 1e-12);
        assert!((set.stats.mean_instruction_length_perturbed - perturbed_tokens as f64 / n).abs() < 1e-12);
    }
}

#[test]
fn benchmarks_are_byte_deterministic() {
    let lexicon = Lexicon::default();
    let plan = InjectionPlan { error_type: ErrorType::RoomObject, common_sense: false, seed: 8 };
    let filter = FilterConfig::for_error_type(plan.error_type, 10).unwrap();
    let a = build_benchmark(&corpus(40), &plan, &filter, &lexicon).unwrap();
    let b = build_benchmark(&corpus(40), &plan, &filter, &lexicon).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let other = InjectionPlan { seed: 9, ..plan };
    let c = build_benchmark(&corpus(40), &other, &filter, &lexicon).unwrap();
    assert_ne!(a.perturbed, c.perturbed);
}
