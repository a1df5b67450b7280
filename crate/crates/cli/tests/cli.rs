use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn objmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_sequence(dir: &Path) {
    let o = objmap(
        dir,
        &["gen-scene", "--objects", "6", "--frames", "40", "--seed", "2", "--out", "frames.jsonl", "--gt", "gt.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_succeeds_and_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = objmap(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["associate", "map", "match", "explore", "eval", "gen-scene"] {
        assert!(text.contains(sub), "missing {sub}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = objmap(dir.path(), &["map", "--in", "x.jsonl", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Input formats"));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = objmap(dir.path(), &["map", "--in", "does-not-exist.jsonl"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_frames_are_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.jsonl"), "{\"frame_id\": 0}\n").unwrap();
    let o = objmap(dir.path(), &["map", "--in", "bad.jsonl"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    small_sequence(dir.path());
    fs::write(dir.path().join("cfg.json"), r#"{"association": {"alpha": 0.05, "nonsense": 1}}"#).unwrap();
    let o = objmap(dir.path(), &["--config", "cfg.json", "map", "--in", "frames.jsonl"]);
    assert_eq!(code(&o), 1);

    fs::write(dir.path().join("cfg.json"), r#"{"association": {"alpha": 1.5}}"#).unwrap();
    let o = objmap(dir.path(), &["--config", "cfg.json", "map", "--in", "frames.jsonl"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn map_then_eval_against_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    small_sequence(dir.path());
    let o = objmap(dir.path(), &["map", "--in", "frames.jsonl", "--out", "map.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let map: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("map.json")).unwrap()).unwrap();
    assert_eq!(map["schema_version"], 1);
    assert!(!map["objects"].as_array().unwrap().is_empty());

    let o = objmap(dir.path(), &["eval", "--map", "map.json", "--gt", "gt.json"]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["gt_objects"], 6);
    assert!(report["matched"].as_u64().unwrap() >= 4);
}

#[test]
fn a_map_matches_itself_with_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    small_sequence(dir.path());
    let o = objmap(dir.path(), &["match", "--a", "gt.json", "--b", "gt.json"]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let t = &m["transform"];
    assert!((t["scale"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!(t["yaw"].as_f64().unwrap().abs() < 1e-8);
    assert_eq!(m["inliers"].as_array().unwrap().len(), 6);
}

#[test]
fn associate_reports_one_line_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    small_sequence(dir.path());
    let o = objmap(dir.path(), &["associate", "--in", "frames.jsonl"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 40);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["frame_id"], i as u64);
    }
}

#[test]
fn explore_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = objmap(dir.path(), &["gen-scene", "--kind", "tabletop", "--objects", "3", "--seed", "4", "--out", "scene.json"]);
    assert_eq!(code(&o), 0);
    let o = objmap(
        dir.path(),
        &["explore", "--scene", "scene.json", "--policy", "coverage", "--trace", "t.csv", "--metrics", "m.json", "--out", "map.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(trace.lines().count() > 1);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(metrics["gt_objects"], 3);
}

#[test]
fn invalid_scene_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scene.json"), "{\"objects\": []}").unwrap();
    let o = objmap(dir.path(), &["explore", "--scene", "scene.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn seed_changes_generated_scenes() {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["1", "2"] {
        let o = objmap(dir.path(), &["gen-scene", "--kind", "tabletop", "--seed", seed, "--out", &format!("s{seed}.json")]);
        assert_eq!(code(&o), 0);
    }
    let (a, b) = (fs::read(dir.path().join("s1.json")).unwrap(), fs::read(dir.path().join("s2.json")).unwrap());
    assert_ne!(a, b);
}

#[test]
fn numbers_carry_at_most_nine_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    small_sequence(dir.path());
    let text = fs::read_to_string(dir.path().join("gt.json")).unwrap();
    let mut token = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_ascii_digit() || ch == '.' || ch == '-' || ch == 'e' || ch == 'E' || ch == '+' {
            token.push(ch);
            continue;
        }
        if token.chars().any(|c| c.is_ascii_digit()) {
            let mantissa = token.split(['e', 'E']).next().unwrap();
            let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
            let significant = digits.trim_start_matches('0').trim_end_matches('0');
            assert!(significant.len() <= 9, "{token}");
        }
        token.clear();
    }
}
