use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trajstate(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajstate"))
        .args(args)
        .current_dir(dir)
        .env_remove("TRAJSTATE_OUT_DIR")
        .output()
        .expect("spawn trajstate")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Data rows of a provenance-stamped CSV, keyed by header name.
fn read_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

const SMALL: &str = r#"
seed = 11

[synthetic]
vehicle_count = 120
duration = 60.0
road_length = 800.0
lanes = 2
"#;

#[test]
fn estimate_at_native_rate_matches_sidecar_truth() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(&trajstate(
        &["generate", "--config", "run.toml", "--out", "gen"],
        dir.path(),
    ));

    let cfg = format!("{SMALL}\n[paths]\ninput = \"gen/corpus.csv\"\n");
    fs::write(dir.path().join("est.toml"), cfg).unwrap();
    ok(&trajstate(
        &[
            "estimate",
            "--config",
            "est.toml",
            "--out",
            "est",
            "--frame",
            "lagrangian",
            "--scheme",
            "strong",
        ],
        dir.path(),
    ));

    let truth: HashMap<(String, String), f64> = read_rows(&dir.path().join("gen/truth.csv"))
        .into_iter()
        .filter(|r| !r["rho_strong"].is_empty())
        .map(|r| {
            (
                (r["vehicle_id"].clone(), r["time_s"].clone()),
                r["rho_strong"].parse().unwrap(),
            )
        })
        .collect();
    let est = read_rows(&dir.path().join("est/estimates.csv"));
    let (mut sum_abs, mut sum_ref, mut matched) = (0.0, 0.0, 0usize);
    for r in &est {
        if r["rho"].is_empty() {
            continue;
        }
        if let Some(t) = truth.get(&(r["vehicle_id"].clone(), r["time_s"].clone())) {
            let e: f64 = r["rho"].parse().unwrap();
            sum_abs += (e - t).abs();
            sum_ref += t.abs();
            matched += 1;
        }
    }
    assert!(matched > 1000, "only {matched} points matched");
    let rel = sum_abs / sum_ref;
    assert!(rel < 0.05, "relative density error {rel}");
}

#[test]
fn experiment_reports_full_grid_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    ok(&trajstate(&["experiment", "--out", "exp"], dir.path()));
    for frame in ["lagrangian", "eulerian"] {
        let rows = read_rows(&dir.path().join(format!("exp/report_{frame}.csv")));
        assert_eq!(rows.len(), 4 * 5 * 7, "{frame}");
        let json: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(format!("exp/report_{frame}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(json["data"]["cells"].as_array().unwrap().len(), 140);
        assert_eq!(json["provenance"]["command"], "experiment");
    }
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[ptm]\na = \"fast\"\n").unwrap();
    let out = trajstate(
        &["estimate", "--config", "bad.toml", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["key"], "ptm.a");
    assert!(!dir.path().join("o").exists());

    fs::write(dir.path().join("neg.toml"), "[ptm]\nrho_jam = -1.0\n").unwrap();
    let out = trajstate(&["estimate", "--config", "neg.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["key"].as_str().unwrap().starts_with("ptm"));
}

#[test]
fn missing_input_is_reported_against_its_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[paths]\ninput = \"nope.csv\"\n").unwrap();
    let out = trajstate(
        &["estimate", "--config", "c.toml", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["key"], "paths.input");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("nope.csv"));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    for out in ["a", "b"] {
        ok(&trajstate(
            &["generate", "--config", "run.toml", "--out", out],
            dir.path(),
        ));
    }
    for name in ["corpus.csv", "truth.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn seed_override_changes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(&trajstate(
        &["generate", "--config", "run.toml", "--out", "a"],
        dir.path(),
    ));
    ok(&trajstate(
        &[
            "generate", "--config", "run.toml", "--out", "b", "--seed", "12",
        ],
        dir.path(),
    ));
    let a = fs::read_to_string(dir.path().join("a/corpus.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/corpus.csv")).unwrap();
    assert!(a.contains("# seed: 11") && b.contains("# seed: 12"));
    assert_ne!(a, b);
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trajstate"))
        .args(["generate", "--config", "run.toml"])
        .current_dir(dir.path())
        .env("TRAJSTATE_OUT_DIR", "from_env")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from_env/corpus.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn ingest_normalizes_raw_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = String::from("Vehicle_ID,Frame_ID,Local_Y,Lane_ID\n");
    for v in 1..=3 {
        for f in 0..50 {
            let x = 100.0 * v as f64 + 3.5 * f as f64 + 0.01 * (f as f64).powi(2);
            raw.push_str(&format!("{v},{},{x},{}\n", f + 100, v % 2 + 1));
        }
    }
    // one vehicle too short to estimate anything
    raw.push_str("9,100,5.0,1\n9,101,8.0,1\n");
    fs::write(dir.path().join("raw.csv"), raw).unwrap();
    fs::write(
        dir.path().join("ing.toml"),
        "[paths]\ninput = \"raw.csv\"\ninput_format = \"ngsim\"\n\n[ingest]\nperiod_label = \"test\"\n",
    )
    .unwrap();
    ok(&trajstate(
        &["ingest", "--config", "ing.toml", "--out", "ing"],
        dir.path(),
    ));

    let rows = read_rows(&dir.path().join("ing/corpus.csv"));
    let vehicles: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r["vehicle_id"].as_str()).collect();
    assert!(vehicles.contains("1") && vehicles.contains("3"));
    let first = rows.iter().find(|r| r["vehicle_id"] == "1").unwrap();
    let t: f64 = first["time_s"].parse().unwrap();
    assert!(
        (t - 10.0).abs() < 1e-9,
        "frame 100 at 0.1 s is 10 s, got {t}"
    );
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("ing/ingest_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["provenance"]["command"], "ingest");

    // the normalized corpus feeds the other commands
    fs::write(
        dir.path().join("est.toml"),
        "[paths]\ninput = \"ing/corpus.csv\"\n",
    )
    .unwrap();
    ok(&trajstate(
        &[
            "estimate",
            "--config",
            "est.toml",
            "--out",
            "est",
            "--frame",
            "lagrangian",
        ],
        dir.path(),
    ));
    assert!(!read_rows(&dir.path().join("est/kinematics.csv")).is_empty());
}

#[test]
fn calibrate_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    ok(&trajstate(&["calibrate", "--out", "cal"], dir.path()));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cal/calibration.json")).unwrap())
            .unwrap();
    let fitted_a = json["data"]["fit"]["params"]["a"].as_f64().unwrap();
    assert!(fitted_a > 0.0);
    let cfg = trajstate_cli::RunConfig::load(&dir.path().join("cal/calibrated.toml")).unwrap();
    assert!((cfg.ptm.a - fitted_a).abs() <= 1e-9 * fitted_a);
    let env = read_rows(&dir.path().join("cal/envelopes.csv"));
    assert!(env.len() >= 2);
}

#[test]
fn correct_cross_validates_both_rates() {
    let dir = tempfile::tempdir().unwrap();
    ok(&trajstate(&["correct", "--out", "cor"], dir.path()));
    for stem in ["cv_r_hc", "cv_r_fc"] {
        let json: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(format!("cor/{stem}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(json["data"]["report"]["k"], 10);
        let folds = read_rows(&dir.path().join(format!("cor/{stem}_folds.csv")));
        assert_eq!(folds.len(), 10);
        let hist = read_rows(&dir.path().join(format!("cor/{stem}_histogram.csv")));
        assert_eq!(hist.len(), 20);
    }
}

#[test]
fn eulerian_estimate_writes_fields() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(&trajstate(
        &[
            "estimate", "--config", "run.toml", "--out", "e", "--frame", "eulerian",
        ],
        dir.path(),
    ));
    for name in [
        "density",
        "velocity",
        "flow",
        "acceleration",
        "q_hat",
        "power",
    ] {
        let rows = read_rows(&dir.path().join(format!("e/field_{name}.csv")));
        assert!(!rows.is_empty(), "{name}");
    }
    assert!(!read_rows(&dir.path().join("e/segment_rates.csv")).is_empty());
}
