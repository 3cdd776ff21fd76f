use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{"data": {"videos_per_split": 4, "segments_per_video": 32},
    "model": {"dim": 8, "heads": 2, "hidden": 16, "backbone_layers": 1, "blocks": 1},
    "fpa": {"proj_hidden": 8}, "suc": {"fsa_layers": 1}, "train": {"epochs": 1, "seeds": [5]}}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfalign")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

fn setup(dir: &Path, config: &str) -> (String, String) {
    let cfg = dir.join("c.json");
    std::fs::write(&cfg, config).unwrap();
    let ds = dir.join("ds");
    ok(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", ds.to_str().unwrap()]);
    (cfg.to_str().unwrap().into(), ds.to_str().unwrap().into())
}

fn hash_of(config: &str) -> String {
    dfalign::config::RunConfig::from_json(config).unwrap().hash()
}

#[test]
fn help_lists_every_flag() {
    let cases: [(&str, &[&str]); 6] = [
        ("gen-data", &["--config", "--out"]),
        ("train", &["--config", "--data", "--out"]),
        ("eval", &["--config", "--data", "--ckpt", "--out"]),
        ("verify-diffusion", &["--config", "--out", "--samples"]),
        ("export-heatmap", &["--config", "--data", "--ckpt", "--video-id", "--out"]),
        ("ablate", &["--config", "--grid", "--out"]),
    ];
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for (cmd, flags) in cases {
        assert!(top.contains(cmd), "{cmd} missing from top-level help");
        let text = String::from_utf8(ok(&[cmd, "--help"]).stdout).unwrap();
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"width": 3}}"#).unwrap();
    let out = run(&["verify-diffusion", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");

    let out = run(&["gen-data", "--config", dir.path().join("absent.json").to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");

    let out = run(&["train", "--data"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");

    let out = run(&["eval", "--data", dir.path().join("nothing").to_str().unwrap(), "--ckpt", "missing.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");
}

#[test]
fn untrained_checkpoint_evaluates_and_every_output_carries_the_hash() {
    let config = TINY.replace(r#""epochs": 1"#, r#""epochs": 0"#);
    let hash = hash_of(&config);
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup(dir.path(), &config);
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();

    let summary: Value = serde_json::from_slice(&ok(&["gen-data", "--config", &cfg, "--out", &p("ds2")]).stdout).unwrap();
    assert_eq!(summary["config_hash"], hash.as_str());

    ok(&["train", "--config", &cfg, "--data", &ds, "--out", &p("m.ckpt")]);
    let out = ok(&["eval", "--config", &cfg, "--data", &ds, "--ckpt", &p("m.ckpt")]);
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["config_hash"], hash.as_str());
    assert_eq!(metrics["seed"], 5);
    let avg = metrics["avg_map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&avg));
    for key in ["0.3", "0.4", "0.5", "0.6", "0.7"] {
        assert!(metrics["map"][key].is_number(), "missing threshold {key}");
    }
    assert!(metrics["wall_s"].is_number());

    let video = std::fs::read_dir(dir.path().join("ds/features"))
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_str().unwrap().to_string())
        .min()
        .unwrap();
    ok(&["export-heatmap", "--data", &ds, "--ckpt", &p("m.ckpt"), "--video-id", &video, "--out", &p("h.csv")]);
    let csv = std::fs::read_to_string(p("h.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_hash={hash}"));
    assert_eq!(lines.next().unwrap(), "matrix,step,segment,label,value");
    assert!(csv.contains("step_similarity,0,"));
    assert!(csv.contains("text_similarity,,"));

    let verify: Value = serde_json::from_slice(&ok(&["verify-diffusion", "--config", &cfg]).stdout).unwrap();
    assert_eq!(verify["config_hash"], hash.as_str());

    // a config that differs from the checkpoint's is rejected
    let other = dir.path().join("other.json");
    std::fs::write(&other, TINY).unwrap();
    let out = run(&["eval", "--config", other.to_str().unwrap(), "--data", &ds, "--ckpt", &p("m.ckpt")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_diffusion_passes_at_zero_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"diffusion": {"sigma": 0.0}}"#).unwrap();
    let out = ok(&["verify-diffusion", "--config", cfg.to_str().unwrap()]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["all_pass"], true);
}

#[test]
fn ablate_over_condition_types_gives_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), TINY);
    let grid = dir.path().join("g.json");
    std::fs::write(
        &grid,
        r#"{"suc.condition_type": ["none", "per_action", "shared_only", "specific_only", "suc"]}"#,
    )
    .unwrap();
    let out_path = dir.path().join("a.json");
    let out = ok(&["ablate", "--config", &cfg, "--grid", grid.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 2 + 5);
    assert!(table.lines().any(|l| l.starts_with("| suc |")));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["config_hash"], hash_of(TINY).as_str());
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().any(|r| r["overrides"]["suc.condition_type"] == "suc"));
    for r in rows {
        assert_eq!(r["runs"].as_array().unwrap().len(), 1);
        assert_eq!(r["std"], 0.0);
    }
}
