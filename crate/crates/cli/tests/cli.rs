use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "seed": 3,
  "synth": {"n_feeders": 20, "n_events": 400},
  "empirics": {"bootstrap": {"iterations": 100, "pair_draws": 200}},
  "causal": {"forest": {"n_trees": 40, "nuisance_trees": 10}},
  "estimator": {
    "model": {"seq_len": 4, "d_model": 8, "layers": 1, "heads": 2, "hidden": 8, "ffn_dim": 16},
    "train": {"epochs": 3}
  },
  "projection": {"grid": {"n_draws": 200, "durations_h": [1, 2]}, "scenario": {"n_draws": 200}},
  "mitigation": {"ev": {"trials": 50}}
}"#;

fn surge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surge"))
        .current_dir(dir)
        .env_remove("SURGE_OUT_DIR")
        .env_remove("SURGE_THREADS")
        .args(args)
        .output()
        .expect("runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) {
    std::fs::write(dir.join("small.json"), SMALL).unwrap();
}

#[test]
fn unknown_config_key_exits_2_with_pointer() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), r#"{"causal": {"forest": {"n_tree": 5}}}"#).unwrap();
    let o = surge(d.path(), &["--config", "bad.json", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/causal/forest/n_tree"), "{}", stderr(&o));
}

#[test]
fn semantic_config_error_exits_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), r#"{"projection": {"grid": {"alphas": [0.1, 1.5]}}}"#).unwrap();
    let o = surge(d.path(), &["--config", "bad.json", "report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/projection/grid/alphas/1"));
}

#[test]
fn missing_upstream_artifact_exits_1_naming_it() {
    let d = tempfile::tempdir().unwrap();
    let o = surge(d.path(), &["--out-dir", "out", "metrics"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("events.csv"), "{}", stderr(&o));
    let o = surge(d.path(), &["--out-dir", "out", "train"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    small_config(d.path());
    let o = Command::new(env!("CARGO_BIN_EXE_surge"))
        .current_dir(d.path())
        .env("SURGE_OUT_DIR", "from_env")
        .env("SURGE_THREADS", "1")
        .args(["--config", "small.json", "synth"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("from_env/dataset/events.csv").exists());
    assert!(d.path().join("from_env/manifest.json").exists());
}

fn without_timestamp(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("created_unix"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn files(dir: &Path, root: &Path, out: &mut Vec<String>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files(&p, root, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
    out.sort();
}

#[test]
fn pipeline_is_reproducible_and_reports_the_grid() {
    let d = tempfile::tempdir().unwrap();
    small_config(d.path());
    for run in ["a", "b"] {
        let o = surge(d.path(), &["--config", "small.json", "--out-dir", run, "pipeline"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let (mut fa, mut fb) = (vec![], vec![]);
    files(&a, &a, &mut fa);
    files(&b, &b, &mut fb);
    assert_eq!(fa, fb);
    for f in &fa {
        if f == "manifest.json" {
            assert_eq!(without_timestamp(&a.join(f)), without_timestamp(&b.join(f)));
        } else {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    // 2 trajectories × 4 windows × 2 durations × 6 alphas × {plain, mitigated}.
    let table = std::fs::read_to_string(a.join("projection_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 4 * 2 * 6 * 2);
    for w in ["night", "morning", "afternoon", "evening"] {
        assert!(rows.iter().any(|r| r.split(',').nth(1) == Some(w)));
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("projection_table.json")).unwrap()).unwrap();
    let cell = &json["rows"][0]["cell"];
    let (lo, mean, hi) = (cell["low"].as_f64().unwrap(), cell["mean"].as_f64().unwrap(), cell["high"].as_f64().unwrap());
    assert!(lo <= mean && mean <= hi);

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|x| x["path"] == "model.bin"));
}

#[test]
fn project_flags_override_the_scenario() {
    let d = tempfile::tempdir().unwrap();
    small_config(d.path());
    let o = surge(d.path(), &["--config", "small.json", "--out-dir", "o", "pipeline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = surge(
        d.path(),
        &[
            "--config", "small.json", "--out-dir", "o", "project", "--trajectory", "baseline", "--window", "night",
            "--alpha", "0.1", "--draws", "300", "--out", "proj.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("proj.json")).unwrap()).unwrap();
    assert_eq!(v["scenario"]["trajectory"]["name"], "baseline");
    assert_eq!(v["scenario"]["window"], "night");
    assert_eq!(v["result"]["n_draws"], 300);
    let p = v["result"]["exceedance_prob"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let o = surge(d.path(), &["--config", "small.json", "--out-dir", "o", "project", "--alpha", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("α ∈ (0,1]"));

    std::fs::write(d.path().join("pol.json"), r#"{"ev": {"t1_min": 0, "t2_min": 10, "trials": 20}}"#).unwrap();
    let o = surge(
        d.path(),
        &["--config", "small.json", "--out-dir", "o", "mitigate", "--policy", "pol.json", "--out", "mit.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(d.path().join("mit.csv")).unwrap().starts_with("event_id,gamma_ev"));
    std::fs::write(d.path().join("pol.json"), r#"{"ev": {"t_one": 0}}"#).unwrap();
    let o = surge(d.path(), &["--config", "small.json", "--out-dir", "o", "mitigate", "--policy", "pol.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/ev/t_one"), "{}", stderr(&o));
}
