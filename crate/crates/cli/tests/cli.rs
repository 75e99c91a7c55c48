use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use icopro::buffers::{FeedbackBuffer, LabelSource};
use icopro::trainer::{read_metrics, read_records, EvalSummary, FINAL_CHECKPOINT, LABELS_FILE, METRICS_FILE, RECORDS_FILE};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_icopro"));
    c.env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn grid_config(method: &str) -> Value {
    json!({
        "method": method,
        "env": {"kind": "gridworld"},
        "labeler": {"type": "grid_oracle"},
        "trainer": {
            "total_iters": 3, "rollout_len": 64, "queries_per_iter": 2, "segment_len": 4,
            "eval_episodes": 2, "encoder_hidden": [16], "head_hidden": [16]
        }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_self_describing_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", &grid_config("icopro"));
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", METRICS_FILE, RECORDS_FILE, LABELS_FILE, FINAL_CHECKPOINT] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let rows = read_metrics(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    let snapshot: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["seed"], 3);

    // Re-evaluating the final checkpoint reproduces the last record exactly.
    let o = run(&["eval", "--checkpoint", s(&out.join(FINAL_CHECKPOINT)), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: EvalSummary = serde_json::from_slice(&o.stdout).unwrap();
    let last = read_records(&out.join(RECORDS_FILE)).unwrap().pop().unwrap();
    assert_eq!(summary, last.eval);
    assert_eq!(summary.crash_rate.mean, rows[2].crash_rate);
    assert_eq!(summary.distance.mean, rows[2].distance_avg);

    let o = run(&["eval", "--checkpoint", s(&out.join(FINAL_CHECKPOINT)), "--episodes", "4"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for metric in ["crash_rate", "distance_avg", "speed_avg", "lane_change_ratio", "lane_pos_avg", "steps_avg"] {
        assert!(text.contains(metric), "{text}");
    }
    assert!(text.starts_with("episodes 4"));
}

#[test]
fn invalid_config_exits_2_with_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = grid_config("icopro");
    cfg["trainer"]["segment_len"] = json!(-4);
    let path = write_config(tmp.path(), "bad.json", &cfg);
    let o = run(&["train", "--config", s(&path), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trainer.segment_len"));

    let mut cfg = grid_config("icopro");
    cfg["labeler"] = json!({"type": "grid_oracle", "n_cff": 2});
    let path = write_config(tmp.path(), "bad2.json", &cfg);
    let o = run(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("labeler"));

    let path = write_config(tmp.path(), "bad3.json", &json!({"method": "dagger", "env": {"kind": "gridworld"}}));
    assert_eq!(run(&["train", "--config", s(&path)]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = grid_config("icopro");
    cfg["env"] = json!({"kind": "highway", "proxy_reward": "PR4"});
    cfg["labeler"] = json!({"type": "simulated", "checkpoint": "missing.ckpt"});
    let path = write_config(tmp.path(), "run.json", &cfg);
    let o = run(&["train", "--config", s(&path), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(run(&["eval", "--checkpoint", s(&tmp.path().join("nope.ckpt"))]).status.code(), Some(1));
}

#[test]
fn compare_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for method in ["icopro", "dagger"] {
        for seed in 0..2 {
            let cfg = write_config(tmp.path(), &format!("{method}.json"), &grid_config(method));
            let out = tmp.path().join(format!("{method}_{seed}"));
            let o = run(&["train", "--config", s(&cfg), "--seed", &seed.to_string(), "--out", s(&out)]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            dirs.push(out);
        }
    }
    let mut args = vec!["compare", "--json"];
    args.extend(dirs.iter().map(|d| s(d)));
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table: Value = serde_json::from_slice(&o.stdout).unwrap();
    let methods: Vec<&str> = table.as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["dagger", "icopro"]);
    for m in table.as_array().unwrap() {
        assert_eq!(m["runs"], 2);
        assert_eq!(m["budget_ok"], true);
        assert!(m["metrics"]["crash_rate"]["mean"].is_number());
    }
    let o = run(&["compare", s(&dirs[0]), s(&dirs[2])]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() == 3 && text.contains("±"), "{text}");

    let replayed = tmp.path().join("replayed.jsonl");
    let o = run(&["replay-labels", s(&dirs[0]), "--out", s(&replayed)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&replayed).unwrap(), std::fs::read(dirs[0].join(LABELS_FILE)).unwrap());
}

/// A scripted client answers every query of a human-mode run over HTTP.
#[test]
fn human_session_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "method": "icopro",
        "env": {"kind": "gridworld"},
        "labeler": {"type": "human", "timeout_s": 60},
        "trainer": {
            "total_iters": 5, "rollout_len": 64, "queries_per_iter": 3, "segment_len": 4,
            "eval_episodes": 1, "encoder_hidden": [16], "head_hidden": [16]
        }
    });
    let path = write_config(tmp.path(), "human.json", &cfg);
    let out = tmp.path().join("human_run");
    let mut child = bin()
        .args(["label-serve", "--config", s(&path), "--out", s(&out), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let base = first.strip_prefix("listening on ").unwrap().to_string();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .into();

    let mut submitted = Vec::new();
    let mut answered = 0;
    loop {
        let mut r = match agent.get(format!("{base}/api/query/next")).call() {
            Ok(r) => r,
            Err(_) => break, // service shut down after the run finished
        };
        if r.status() == 204 {
            let info: Value = match agent.get(format!("{base}/api/session")).call() {
                Ok(mut r) => r.body_mut().read_json().unwrap(),
                Err(_) => break,
            };
            if info["status"] == "done" {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
            continue;
        }
        let q: Value = r.body_mut().read_json().unwrap();
        let id = q["segment_id"].as_u64().unwrap();
        let t = q["frames"].as_array().unwrap().len();
        let status = if answered % 3 == 2 {
            agent.post(format!("{base}/api/query/{id}/pass")).send_empty().unwrap().status()
        } else {
            let (at, action) = ((id as usize) % t, (id as usize + 1) % 4);
            submitted.push(action);
            let body = json!({"t": at, "action": q["action_names"][action]});
            agent.post(format!("{base}/api/query/{id}/label")).send_json(&body).unwrap().status()
        };
        assert_eq!(status, 200);
        answered += 1;
    }
    let status = child.wait().unwrap();
    assert!(status.success());
    assert_eq!(answered, 15);

    let text = std::fs::read_to_string(out.join(LABELS_FILE)).unwrap();
    let labels = FeedbackBuffer::read_jsonl(text.as_bytes()).unwrap();
    let actions: Vec<usize> = labels.labels().iter().map(|l| l.label_action).collect();
    assert_eq!(actions, submitted);
    assert!(labels.labels().iter().all(|l| l.source == LabelSource::Human));
    let records = read_records(&out.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.len(), 5);
    assert_eq!(records[4].labels_total, 10);

    let replayed = tmp.path().join("replayed.jsonl");
    assert!(run(&["replay-labels", s(&out.join(LABELS_FILE)), "--out", s(&replayed)]).status.success());
    assert_eq!(std::fs::read_to_string(&replayed).unwrap(), text);
}
