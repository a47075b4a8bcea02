use std::path::Path;
use std::process::{Command, Output};

fn config(dir: &Path, mode: &str, step: f64) -> std::path::PathBuf {
    let json = format!(
        r#"{{
  "dataset": {{"kind": "synth"}},
  "synth": {{
    "gases": [
      {{"label": "g0", "concentration_ppm": 10.0}},
      {{"label": "g1", "concentration_ppm": 10.0}},
      {{"label": "g2", "concentration_ppm": 10.0}}
    ],
    "trials_per_gas": 10,
    "schedule_mode": "{mode}",
    "session_size": 6,
    "longterm_step_sigma": {step},
    "shortterm_slope_sigma": 0.0,
    "noise_sigma": 0.1,
    "protocol": {{"sample_rate_hz": 50.0, "t_release_s": 10.0, "t_off_s": 15.0, "duration_s": 20.0}}
  }},
  "probe": {{"window": {{"width_s": 0.1, "start_times_s": [0.0, 5.0, 12.0]}}}}
}}"#
    );
    let path = dir.join(format!("{mode}.json"));
    std::fs::write(&path, json).unwrap();
    path
}

fn driftaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftaudit"))
        .args(args)
        .env_remove("DRIFTAUDIT_CONFIG")
        .env_remove("DRIFTAUDIT_OUT")
        .env_remove("DRIFTAUDIT_SEED")
        .env_remove("DRIFTAUDIT_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn audit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let clean_out = dir.path().join("clean");
    let clean = driftaudit(&[
        "--config",
        s(&config(dir.path(), "interleaved", 0.0)),
        "--out",
        s(&clean_out),
        "audit",
    ]);
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stderr));

    let leaky_out = dir.path().join("leaky");
    let leaky = driftaudit(&[
        "--config",
        s(&config(dir.path(), "batched", 2.0)),
        "--out",
        s(&leaky_out),
        "--threads",
        "1",
        "audit",
    ]);
    assert_eq!(leaky.status.code(), Some(2), "{}", String::from_utf8_lossy(&leaky.stderr));
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(leaky_out.join("audit_verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["schedule"]["verdict"], "batched");
    assert_eq!(verdict["longterm_leakage"]["status"], "present");

    let report = driftaudit(&["--out", s(&leaky_out), "report"]);
    assert_eq!(report.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&report.stdout).contains("long-term leakage: present"));
}

#[test]
fn exit_code_stable_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "batched", 2.0);
    let mut verdicts = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let o = driftaudit(&["--config", s(&cfg), "--out", s(&out), "--threads", threads, "audit"]);
        assert_eq!(o.status.code(), Some(2));
        verdicts.push(std::fs::read(out.join("audit_verdict.json")).unwrap());
    }
    assert_eq!(verdicts[0], verdicts[1]);
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = driftaudit(&["--config", s(&bad), "audit"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config:"));

    let missing = driftaudit(&["--out", s(dir.path()), "audit", "--data", s(&dir.path().join("nope"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn stage_commands_on_a_written_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "batched", 1.0);
    let store = dir.path().join("store");
    let out = dir.path().join("out");
    let synth = driftaudit(&["--config", s(&cfg), "synth", "--dest", s(&store)]);
    assert_eq!(synth.status.code(), Some(0), "{}", String::from_utf8_lossy(&synth.stderr));
    assert!(store.join("manifest.csv").exists());

    for cmd in ["audit-schedule", "drift-cv", "probe", "curate"] {
        let o = driftaudit(&[
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            cmd,
            "--kind",
            "canonical",
            "--data",
            s(&store),
        ]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "schedule_report.json",
        "event_plot.csv",
        "cv_longterm.csv",
        "cv_shortterm.csv",
        "baseline_timeline.csv",
        "accuracy_curve.csv",
        "pca_projection.csv",
        "probe_report.json",
        "subset_spec.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}
