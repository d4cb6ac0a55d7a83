use std::path::Path;

use hfrac::cli::{self, RunConfig, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_OK};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("hfrac").chain(args.iter().copied()))
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{"samples": 20000, "sup-samples": 2000, "n": 300, "refinement": [200, 300]}"#).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn default_config_is_valid_and_round_trips() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    assert!(text.contains("\"eps-grid\""));
}

#[test]
fn config_rejects_unknown_keys_and_bad_ranges() {
    assert!(RunConfig::from_json(r#"{"sample": 10}"#).is_err());
    let bad = [
        r#"{"s": 1.5}"#,
        r#"{"N": 0}"#,
        r#"{"eps-grid": [0.5, 0.45, 0.4, 0.35]}"#,
        r#"{"eps-grid": [0.5, 0.25, 0.125, 0.0625]}"#,
        r#"{"radius": 1.5}"#,
        r#"{"n": 10}"#,
        r#"{"refinement": [2000, 1000]}"#,
        r#"{"samples": 10}"#,
        r#"{"only": "L9"}"#,
        r#"{"lambda": -1.0}"#,
    ];
    for text in bad {
        let cfg = RunConfig::from_json(text).unwrap();
        assert!(cfg.validate().is_err(), "{text} should be rejected");
    }
    let small = RunConfig::from_json(r#"{"eps-grid": [0.5, 0.25, 0.125, 0.0625], "allow-small-eps": true}"#).unwrap();
    small.validate().unwrap();
}

#[test]
fn hash_ignores_the_output_directory() {
    let a = RunConfig::default();
    let b = RunConfig { out: "elsewhere".into(), ..RunConfig::default() };
    let c = RunConfig { seed: 1, ..RunConfig::default() };
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 16);
}

#[test]
fn invalid_config_exits_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["constants", "--s", "1.5", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert!(!out.exists());
    assert_eq!(run(&["bogus"]), EXIT_CONFIG);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn constants_writes_stamped_documents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    assert_eq!(run(&["constants", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("constants.json")).unwrap()).unwrap();
    for key in ["kappa", "s-hat", "sigma", "config-hash", "seed", "version"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    let bubble = std::fs::read_to_string(out.join("bubble.json")).unwrap();
    let spec = hfrac::bubble::BubbleSpec::from_json(&bubble).unwrap();
    assert_eq!(spec.provenance.config_hash, report["config-hash"].as_str().unwrap());
}

#[test]
fn solve_refuses_lambda_above_the_first_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let code = run(&["solve", "--config", &cfg, "--lambda", "1000", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_HYPOTHESIS);
}

#[test]
fn eigen_writes_a_refinement_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    assert_eq!(run(&["eigen", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let mut rdr = csv::Reader::from_path(out.join("refinement.csv")).unwrap();
    assert_eq!(rdr.records().count(), 2);
    for f in ["domain.bin", "eigenvector.bin", "eigen.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}
