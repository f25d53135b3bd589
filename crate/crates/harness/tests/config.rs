use vlnie::{Method, PipelineConfig, PolicyKind};

#[test]
fn partial_config_files_fill_in_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 9, "methods": ["random", "grounding"], "policy": "oracle", "model": {"width": 32}}"#).unwrap();
    let config = PipelineConfig::load(&path).unwrap();
    assert_eq!(config.seed, 9);
    assert_eq!(config.methods, vec![Method::Random, Method::Grounding]);
    assert_eq!(config.policy, PolicyKind::Oracle);
    assert_eq!(config.model.width, 32);
    assert_eq!(config.model.heads, PipelineConfig::default().model.heads);
    assert_eq!(config.world, PipelineConfig::default().world);
}

#[test]
fn invalid_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in [
        r#"{"methods": []}"#,
        r#"{"threshold": 2.0}"#,
        r#"{"model": {"width": 30, "heads": 4}}"#,
        r#"{"world": {"test_scenes": 0}}"#,
    ]
    .iter()
    .enumerate()
    {
        let path = dir.path().join(format!("{i}.json"));
        std::fs::write(&path, text).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(matches!(err.root(), vlnie_core::Error::Config(_)), "{text}: {err}");
    }
}

#[test]
fn config_round_trips_through_json() {
    let config = PipelineConfig::default();
    let text = serde_json::to_string(&config).unwrap();
    let back: PipelineConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, config);
}
