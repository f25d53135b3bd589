use std::collections::BTreeSet;

use proptest::prelude::*;
use vlnie_core::baselines::{grounding_detector, random_detector, GroundingConfig};
use vlnie_core::metrics;
use vlnie_core::perturber::{inject, tag_spans, InjectionPlan};
use vlnie_core::rng::{seeded, stream};
use vlnie_core::{
    Action, Episode, ErrorType, Instruction, Lexicon, Observation, PerturbationRecord, Point, Pose,
    SpanKind, Trajectory,
};

fn episode(id: &str, text: &str) -> Episode {
    let start = Point::default();
    Episode {
        id: id.into(),
        scene_id: "s".into(),
        instruction: Instruction::from_text(text).unwrap(),
        gold_spans: Vec::new(),
        start_pose: Pose::new(start, 0).unwrap(),
        goal_position: Point::new(2.0, 0.0),
        gold_path: vec![start],
        perturbation: PerturbationRecord::none(),
    }
}

fn trajectory(id: &str, views: &[(String, Vec<String>)]) -> Trajectory {
    let pose = Pose::new(Point::default(), 0).unwrap();
    Trajectory {
        episode_id: id.into(),
        observations: views
            .iter()
            .enumerate()
            .map(|(step, (room, objects))| Observation {
                step,
                pose,
                room_label: room.clone(),
                object_labels: objects.clone(),
            })
            .collect(),
        actions: vec![Action::Stop],
        path_length: 0.0,
        final_position: Point::default(),
    }
}

fn exact() -> GroundingConfig {
    GroundingConfig { top_k: 100, noise_rate: 0.0, seed: 0 }
}

#[test]
fn random_detector_auc_is_chance() {
    let e = episode("e", "exit the kitchen and turn left at the sofa , then stop .");
    let n = 20_000;
    let scores: Vec<(f64, bool)> = (0..n)
        .map(|i| {
            let out = random_detector(&e, 1, &mut stream(3, &i.to_string())).unwrap();
            (out.score, i % 2 == 0)
        })
        .collect();
    let auc = metrics::auc(&scores).unwrap();
    let half = n as f64 / 2.0;
    let sigma = ((2.0 * half + 1.0) / (12.0 * half * half)).sqrt();
    assert!((auc - 0.5).abs() < 5.0 * sigma, "auc {auc}, sigma {sigma}");

    let flagged = (0..n)
        .filter(|i| random_detector(&e, 1, &mut stream(4, &i.to_string())).unwrap().has_error)
        .count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((flagged - n as f64 / 2.0).abs() < 5.0 * sigma);
}

#[test]
fn random_indices_cover_the_instruction_uniformly() {
    let e = episode("e", "one two three four");
    let mut rng = seeded(1);
    let mut counts = [0usize; 4];
    for _ in 0..8000 {
        for i in random_detector(&e, 1, &mut rng).unwrap().predicted_indices {
            counts[i] += 1;
        }
    }
    let sigma = (8000.0f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - 2000.0).abs() < 5.0 * sigma, "{counts:?}");
    }
}

#[test]
fn swapped_in_object_absent_from_path_is_flagged() {
    // Path shows a kitchen then a living room without any sofa.
    let e = episode("e", "exit the kitchen and stop next to the sofa in the living room .");
    let views = vec![
        ("kitchen".to_string(), vec!["sink".to_string(), "stove".to_string()]),
        ("living room".to_string(), vec!["television".to_string(), "rug".to_string()]),
    ];
    let out = grounding_detector(&e, &trajectory("e", &views), &Lexicon::default(), &exact()).unwrap();
    // K = {kitchen@2, sofa@8, living room@11}; S lacks only the sofa.
    let tokens = &e.instruction.tokens;
    assert_eq!(tokens[8], "sofa");
    assert!(out.has_error);
    assert_eq!(out.predicted_indices, vec![8]);
    assert!((out.score - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn direction_only_perturbation_goes_unnoticed() {
    let lexicon = Lexicon::default();
    let correct = episode("e", "exit the kitchen and turn right at the sofa , then stop near the rug .");
    let plan = InjectionPlan { error_type: ErrorType::Direction, common_sense: true, seed: 2 };
    let perturbed = inject(&correct, &plan, &lexicon, &mut seeded(2)).unwrap();
    let views = vec![(
        "kitchen".to_string(),
        vec!["sofa".to_string(), "rug".to_string()],
    )];
    for e in [&correct, &perturbed] {
        let out = grounding_detector(e, &trajectory(&e.id, &views), &lexicon, &exact()).unwrap();
        assert!(!out.has_error);
        assert_eq!(out.score, 0.0);
    }
}

fn arb_views() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
    let lexicon = Lexicon::default();
    let rooms: Vec<String> = lexicon.vocabulary(SpanKind::Room).into_iter().map(String::from).collect();
    let objects: Vec<String> = lexicon.vocabulary(SpanKind::Object).into_iter().map(String::from).collect();
    prop::collection::vec(
        (prop::sample::select(rooms), prop::collection::vec(prop::sample::select(objects), 0..6)),
        1..8,
    )
}

fn arb_text() -> impl Strategy<Value = String> {
    let lexicon = Lexicon::default();
    let mut words: Vec<String> = SpanKind::ALL
        .iter()
        .flat_map(|k| lexicon.vocabulary(*k))
        .map(String::from)
        .collect();
    words.extend(["the", "and", "walk", "past", "."].map(String::from));
    prop::collection::vec(prop::sample::select(words), 1..25).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn observed_landmarks_are_never_flagged(text in arb_text(), views in arb_views()) {
        let e = episode("e", &text);
        let out = grounding_detector(&e, &trajectory("e", &views), &Lexicon::default(), &exact()).unwrap();
        let seen: BTreeSet<&str> = views
            .iter()
            .flat_map(|(r, objs)| std::iter::once(r.as_str()).chain(objs.iter().map(String::as_str)))
            .collect();
        let spans = tag_spans(&e.instruction.tokens, &Lexicon::default());
        for i in &out.predicted_indices {
            let span = spans.iter().find(|s| s.start_index == *i).unwrap();
            prop_assert!(span.kind != SpanKind::Direction);
            prop_assert!(!seen.contains(span.surface.as_str()));
        }
        let mentions = spans.iter().filter(|s| s.kind != SpanKind::Direction).count();
        let unseen = spans
            .iter()
            .filter(|s| s.kind != SpanKind::Direction && !seen.contains(s.surface.as_str()))
            .count();
        prop_assert_eq!(out.predicted_indices.len(), unseen);
        if mentions > 0 {
            prop_assert!((out.score - unseen as f64 / mentions as f64).abs() < 1e-12);
        }
        out.validate(0.0, e.instruction.length).unwrap();
    }

    #[test]
    fn hiding_a_label_never_lowers_the_score(
        text in arb_text(),
        views in arb_views(),
        hide in any::<prop::sample::Index>(),
    ) {
        let lexicon = Lexicon::default();
        let e = episode("e", &text);
        let before = grounding_detector(&e, &trajectory("e", &views), &lexicon, &exact()).unwrap();
        let all: Vec<String> = views
            .iter()
            .flat_map(|(r, objs)| std::iter::once(r.clone()).chain(objs.iter().cloned()))
            .collect();
        let hidden = &all[hide.index(all.len())];
        let fewer: Vec<(String, Vec<String>)> = views
            .iter()
            .map(|(r, objs)| {
                let room = if r == hidden { "nowhere".to_string() } else { r.clone() };
                (room, objs.iter().filter(|o| *o != hidden).cloned().collect())
            })
            .collect();
        let after = grounding_detector(&e, &trajectory("e", &fewer), &lexicon, &exact()).unwrap();
        prop_assert!(after.predicted_indices.len() >= before.predicted_indices.len());
        prop_assert!(after.score >= before.score);
    }

    #[test]
    fn noisy_grounding_is_reproducible(text in arb_text(), views in arb_views(), seed in any::<u64>()) {
        let lexicon = Lexicon::default();
        let e = episode("e", &text);
        let config = GroundingConfig { top_k: 3, noise_rate: 0.3, seed };
        let t = trajectory("e", &views);
        prop_assert_eq!(
            grounding_detector(&e, &t, &lexicon, &config).unwrap(),
            grounding_detector(&e, &t, &lexicon, &config).unwrap()
        );
    }
}
