use std::path::Path;
use std::process::{Command, Output};

fn vlnie(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlnie"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&vlnie(&["--help"], dir.path())), 0);
    assert_eq!(code(&vlnie(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&vlnie(&["gen-scenes", "--out", "x"], dir.path())), 1);
    assert_eq!(
        code(&vlnie(&["gen-benchmark", "--error-type", "colour", "--common-sense", "on", "--in", "a", "--out", "b"], dir.path())),
        1
    );
    assert_eq!(
        code(&vlnie(&["gen-benchmark", "--error-type", "room", "--common-sense", "maybe", "--in", "a", "--out", "b"], dir.path())),
        1
    );
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"methods": []}"#).unwrap();
    assert_eq!(code(&vlnie(&["report", "--config", "c.json", "--out", "r"], dir.path())), 1);
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = vlnie(&["gen-benchmark", "--error-type", "room", "--common-sense", "on", "--in", "missing.jsonl", "--out", "b"], dir.path());
    assert_eq!(code(&out), 2);
    std::fs::write(dir.path().join("eps.jsonl"), "{\"id\": 3}\n").unwrap();
    let out = vlnie(&["gen-benchmark", "--error-type", "room", "--common-sense", "on", "--in", "eps.jsonl", "--out", "b"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&vlnie(&["--seed", "1", "gen-scenes", "--count", "4", "--out", "w"], d)), 0);
    for (name, seed) in [("t", "2"), ("v", "3")] {
        let args = ["--seed", seed, "gen-benchmark", "--error-type", "all", "--common-sense", "off", "--in", "w/episodes.jsonl", "--out", name];
        assert_eq!(code(&vlnie(&args, d)), 0);
    }
    let args = ["run-policy", "--episodes", "t/correct.jsonl", "--episodes", "t/perturbed.jsonl", "--scenes", "w/scenes", "--out", "traj.jsonl"];
    assert_eq!(code(&vlnie(&args, d)), 0);
    std::fs::write(
        d.join("c.json"),
        r#"{"model": {"width": 8, "heads": 2, "layers": 1, "ff_width": 8, "learning_rate": 1e300, "max_iterations": 20, "eval_every": 5}}"#,
    )
    .unwrap();
    let args = ["train", "--benchmark", "t", "--val", "t", "--trajectories", "traj.jsonl", "--config", "c.json", "--out", "m.bin"];
    let out = vlnie(&args, d);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("m.bin").exists());
}
