use vlnie::report::{MethodScores, Report, ReportRow, AVERAGE_LABEL};
use vlnie::render_table;

fn row(name: &str, sr: f64, spl: f64, delta: f64, scores: &[(&str, f64, f64)]) -> ReportRow {
    ReportRow {
        error_type: name.to_string(),
        sr,
        spl,
        delta_sr: delta,
        methods: scores
            .iter()
            .map(|&(m, auc, atd)| MethodScores { method: m.to_string(), auc, atd })
            .collect(),
    }
}

fn fixture() -> Report {
    Report::new(vec![
        row("Direction", 0.25, 0.2, 70.0, &[("random", 0.5, 11.0), ("iedl", 0.6, 4.5)]),
        row("Room", 0.5, 0.4, 45.5, &[("random", 0.48, 10.25), ("iedl", 0.9, 5.0)]),
        row("All", 0.15, 0.1, 80.25, &[("random", 0.52, 9.0), ("iedl", 0.96, 1.75)]),
    ])
    .unwrap()
}

#[test]
fn table_matches_the_golden_file() {
    let golden = include_str!("golden/report.txt");
    assert_eq!(render_table(&fixture()), golden);
}

#[test]
fn rendering_is_idempotent() {
    let report = fixture();
    assert_eq!(render_table(&report), render_table(&report));
    let back: Report = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(render_table(&back), render_table(&report));
}

#[test]
fn empty_report_renders_only_the_header() {
    let text = render_table(&Report::new(vec![]).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("Error type"));
    assert!(lines[0].contains("SR") && lines[0].contains("SPL") && lines[0].contains("ΔSR%"));
    assert!(lines[1].chars().all(|c| c == '-'));
}

#[test]
fn columns_keep_their_order() {
    let text = render_table(&fixture());
    let header = text.lines().next().unwrap();
    let at = |s: &str| header.find(s).unwrap();
    assert!(at("SR") < at("SPL") && at("SPL") < at("ΔSR%"));
    assert!(at("ΔSR%") < at("random AUC") && at("random AUC") < at("random ATD"));
    assert!(at("random ATD") < at("iedl AUC") && at("iedl AUC") < at("iedl ATD"));
    assert!(text.lines().last().unwrap().starts_with(AVERAGE_LABEL));
}

#[test]
fn averages_are_column_means() {
    let report = fixture();
    let avg = report.average.as_ref().unwrap();
    assert!((avg.sr - (0.25 + 0.5 + 0.15) / 3.0).abs() < 1e-12);
    assert!((avg.delta_sr - (70.0 + 45.5 + 80.25) / 3.0).abs() < 1e-12);
    assert!((avg.methods[1].auc - (0.6 + 0.9 + 0.96) / 3.0).abs() < 1e-12);
    assert!((avg.methods[0].atd - (11.0 + 10.25 + 9.0) / 3.0).abs() < 1e-12);
    report.validate().unwrap();
    let mut tampered = report.clone();
    tampered.average.as_mut().unwrap().sr += 0.01;
    assert!(tampered.validate().is_err());
}

#[test]
fn rows_must_list_the_same_methods() {
    let rows = vec![
        row("Direction", 0.2, 0.1, 1.0, &[("random", 0.5, 1.0)]),
        row("Room", 0.2, 0.1, 1.0, &[("iedl", 0.5, 1.0)]),
    ];
    assert!(Report::new(rows).is_err());
}
