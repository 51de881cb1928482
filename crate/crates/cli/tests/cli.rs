use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::Duration;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_neurochair"));
    c.env_remove("NEUROCHAIR_CONFIG").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, json: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json.to_string()).unwrap();
    p
}

fn script(labels: &[&str], trials: usize, dur: f64) -> serde_json::Value {
    let segs: Vec<_> = labels
        .iter()
        .flat_map(|l| std::iter::repeat_n(serde_json::json!({"label": l, "duration_s": dur}), trials))
        .collect();
    serde_json::Value::Array(segs)
}

/// A model trained once for the drive and replay tests.
fn model() -> &'static Path {
    static MODEL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, p) = MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        let cfg = write_config(
            dir.path(),
            "calib.json",
            serde_json::json!({"source": {"scenario": {"seed": 3, "intent_script":
                script(&["Neutral", "Push", "Pull", "Left", "Right"], 6, 8.0)}}}),
        );
        let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (dir, p)
    });
    p
}

#[test]
fn synth_writes_expected_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = run(&["synth", "--duration", "60", "--seed", "9", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        assert!(String::from_utf8_lossy(&o.stdout).contains("Neutral"));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 7681);
    assert!(text.starts_with("t,"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.intervals.json").exists());
}

#[test]
fn synth_zero_duration_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&run(&["synth", "--duration", "0", "--out", out.to_str().unwrap()])), 1);
}

#[test]
fn unknown_override_and_bad_flags_exit_1() {
    assert_eq!(code(&run(&["synth", "--set", "decoder.nope=1"])), 1);
    assert_eq!(code(&run(&["launch"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_env_var_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", serde_json::json!({"decoder": {"dwell": 0}}));
    let out = dir.path().join("x.csv");
    let o = bin()
        .env("NEUROCHAIR_CONFIG", &cfg)
        .args(["synth", "--duration", "1", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dwell"));
}

#[test]
fn train_reports_json_and_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"source": {"scenario": {"seed": 5, "intent_script":
            script(&["Neutral", "Push", "Pull", "Left", "Right"], 5, 8.0)}}}),
    );
    let out = dir.path().join("m.json");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--kind", "rf", "--json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["cv_accuracy"].as_f64().unwrap() >= 0.85);
    assert_eq!(report["kind"], "RandomForest");
    neurochair_core::classifier::load_model(&out).unwrap();
}

#[test]
fn train_missing_class_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"source": {"scenario": {"seed": 1, "intent_script":
            script(&["Neutral", "Push", "Pull", "Left"], 4, 8.0)}}}),
    );
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("m.json").to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Right"));
}

#[test]
fn train_on_uninformative_labels_fails_the_floor() {
    // No class signatures: every label sees the same baseline, so labels are
    // as good as shuffled.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({
            "source": {"scenario": {"seed": 2, "signatures": {}, "intent_script":
                script(&["Neutral", "Push", "Pull", "Left", "Right"], 5, 8.0)}},
            "training": {"accuracy_floor": 0.5}
        }),
    );
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--json", "--out", dir.path().join("m.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let acc = report["cv_accuracy"].as_f64().unwrap();
    assert!(acc < 0.5, "{acc}");
}

#[test]
fn bench_empty_scenario_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"source": {"scenario": {"seed": 1, "intent_script": []}}}),
    );
    let o = run(&["bench", "--config", cfg.to_str().unwrap(), "--model", model().to_str().unwrap(), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["commands"], 0);
    assert_eq!(r["frames"], 0);
    assert_eq!(r["command_accuracy"], serde_json::Value::Null);
}

#[test]
fn bench_is_reproducible_apart_from_timing() {
    let drive = configs().join("drive.json");
    let go = || {
        let o = run(&["bench", "--config", drive.to_str().unwrap(), "--model", model().to_str().unwrap(), "--json", "--seed", "4"]);
        assert_eq!(code(&o), 0);
        let mut r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        for k in ["wall_s", "throughput_x_realtime", "latency", "processing"] {
            r.as_object_mut().unwrap().remove(k);
        }
        r
    };
    let a = go();
    assert_eq!(a, go());
    assert!(a["command_accuracy"].as_f64().unwrap() > 0.7);
}

#[test]
fn drive_rejects_a_model_for_another_montage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ten.json",
        serde_json::json!({
            "montage": {"channels": ["F3", "F4", "T3", "C3", "C4", "T4", "P3", "P4", "O1", "O2"], "sampling_rate_hz": 128.0},
            "source": {"scenario": {"seed": 3, "intent_script": script(&["Neutral", "Push", "Pull", "Left", "Right"], 3, 8.0)}},
            "training": {"cv_folds": 3}
        }),
    );
    let ten = dir.path().join("ten-model.json");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", ten.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["drive", "--model", ten.to_str().unwrap(), "--set", "listen=null", "--set", "ws_listen=null"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("montage"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn drive_and_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let drive = configs().join("drive.json");
    let o = run(&[
        "drive", "--config", drive.to_str().unwrap(), "--model", model().to_str().unwrap(), "--fast",
        "--out", log.to_str().unwrap(), "--set", "listen=null", "--set", "ws_listen=null",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["replay", log.to_str().unwrap(), "--config", drive.to_str().unwrap(), "--model", model().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("identical"));

    // A corrupt log aborts at the offending line.
    let blank = dir.path().join("blank.jsonl");
    std::fs::write(&blank, "{\"type\":\"frame\"}\n").unwrap();
    let o = run(&["replay", blank.to_str().unwrap(), "--model", model().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn interrupted_drive_leaves_a_valid_session_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("live.jsonl");
    let mut child = bin()
        .args([
            "drive", "--model", model().to_str().unwrap(), "--listen", "127.0.0.1:0", "--ws-listen", "127.0.0.1:0",
            "--out", log.to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut first).unwrap();
    assert!(first.starts_with("listening on 127.0.0.1:"), "{first}");
    std::thread::sleep(Duration::from_millis(1500));
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.ends_with('\n'));
    let msgs: Vec<_> = text
        .lines()
        .map(|l| neurochair_service::wire::decode_msg(l).expect("valid line"))
        .collect();
    assert!(msgs.iter().any(|m| m.kind() == neurochair_service::MessageType::Telemetry));
}
