use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn vsgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsgn")).args(args).env("VSGN_THREADS", "1").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_SPEC: &str = "train_videos = 6\nval_videos = 2\nmin_len = 48\nmax_len = 120\nchannels = 8\nclasses = 3\nmax_action_len = 20\nseed = 4\n";
const TINY_CONFIG: &str = "input_len = 64\nchannels = 8\ngn_groups = 2\nedges_k = 4\ngap = 6\nprofile = synthetic\nhead_blocks = 1\nepochs = 2\nbatch_size = 4\nlearning_rate = 0.002\n";

fn tiny_dataset(dir: &Path) -> std::path::PathBuf {
    std::fs::write(dir.join("tiny.spec"), TINY_SPEC).unwrap();
    std::fs::write(dir.join("tiny.cfg"), TINY_CONFIG).unwrap();
    let out = vsgn(&["gen-data", "--spec", path(&dir.join("tiny.spec")), "--out", path(&dir.join("data"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("data/manifest.json")
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&vsgn(&[])), 2);
    assert_eq!(code(&vsgn(&["train", "--bogus"])), 2);
    assert_eq!(code(&vsgn(&["--help"])), 0);
    assert_eq!(code(&vsgn(&["gradcheck", "--module", "nope"])), 2);
    let missing = vsgn(&["eval", "--manifest", "/no/such.json", "--predictions", "/no/p.json", "--profile", "synthetic", "--out", "/tmp/x"]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/no/such.json"));

    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let cfg = dir.path().join("tiny.cfg");
    let ckpt = dir.path().join("m.ckpt");
    let odd = vsgn(&["train", "--config", path(&cfg), "--set", "edges_k=3", "--manifest", path(&manifest), "--out", path(&ckpt)]);
    assert_eq!(code(&odd), 2);
    assert!(String::from_utf8_lossy(&odd.stderr).contains("edges_k"));
    let profile = vsgn(&["eval", "--manifest", path(&manifest), "--predictions", path(&manifest), "--profile", "imagenet", "--out", "/tmp/x"]);
    assert_eq!(code(&profile), 2);
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let cfg = dir.path().join("tiny.cfg");
    let out = vsgn(&["infer", "--config", path(&cfg), "--manifest", path(&manifest), "--ckpt", path(&garbage), "--out", path(&dir.path().join("p.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_passes_every_registered_check() {
    let out = vsgn(&["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{text}");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), vsgn::checks::registry().len());
    assert!(lines.iter().all(|l| l.starts_with("PASS")));
    let heads = vsgn(&["gradcheck", "--module", "heads"]);
    assert_eq!(code(&heads), 0);
    assert!(String::from_utf8_lossy(&heads.stdout).lines().all(|l| l.contains(" heads ")));
}

#[test]
fn ground_truth_as_predictions_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let mut results = serde_json::Map::new();
    for (id, v) in m["videos"].as_object().unwrap() {
        let list: Vec<Value> = v["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| json!({"segment": a["segment"], "label": a["label"], "score": 1.0}))
            .collect();
        results.insert(id.clone(), Value::Array(list));
    }
    let preds = dir.path().join("gt.json");
    std::fs::write(&preds, json!({ "results": results }).to_string()).unwrap();
    let report = dir.path().join("r.json");
    for profile in ["synthetic", "activitynet", "thumos"] {
        let out = vsgn(&["eval", "--manifest", path(&manifest), "--predictions", path(&preds), "--profile", profile, "--out", path(&report)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r["report"]["suite"]["average"], json!(1.0));
    }
    let stray = dir.path().join("stray.json");
    std::fs::write(&stray, json!({"results": {"unknown_video": []}}).to_string()).unwrap();
    let out = vsgn(&["eval", "--manifest", path(&manifest), "--predictions", path(&stray), "--profile", "synthetic", "--out", path(&report)]);
    assert_eq!(code(&out), 1);
}

fn pipeline(dir: &Path, manifest: &Path) -> (String, String) {
    let cfg = dir.parent().unwrap().join("tiny.cfg");
    let ckpt = dir.join("m.ckpt");
    let preds = dir.join("p.json");
    let report = dir.join("r.json");
    let train = vsgn(&["train", "--config", path(&cfg), "--manifest", path(manifest), "--out", path(&ckpt)]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    assert!(String::from_utf8_lossy(&train.stdout).contains("epoch 2 "));
    assert!(ckpt.exists() && vsgn::train::sidecar_path(&ckpt).exists());
    let infer = vsgn(&["infer", "--config", path(&cfg), "--manifest", path(manifest), "--ckpt", path(&ckpt), "--out", path(&preds)]);
    assert_eq!(code(&infer), 0, "{}", String::from_utf8_lossy(&infer.stderr));
    let eval = vsgn(&["eval", "--manifest", path(manifest), "--predictions", path(&preds), "--profile", "synthetic", "--out", path(&report)]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    (std::fs::read_to_string(&preds).unwrap(), std::fs::read_to_string(&report).unwrap())
}

#[test]
fn train_infer_eval_is_reproducible_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let (preds_a, report_a) = pipeline(&a, &manifest);
    let (preds_b, report_b) = pipeline(&b, &manifest);
    assert_eq!(preds_a, preds_b);
    assert_eq!(report_a, report_b);
    assert_eq!(std::fs::read(a.join("m.ckpt")).unwrap(), std::fs::read(b.join("m.ckpt")).unwrap());

    let p: Value = serde_json::from_str(&preds_a).unwrap();
    let c = &p["config"];
    assert_eq!(c["input_len"], json!(64));
    assert_eq!(c["edges_k"], json!(4));
    assert_eq!(c["in_channels"], json!(8));
    assert_eq!(c["num_classes"], json!(3));
    let r: Value = serde_json::from_str(&report_a).unwrap();
    assert_eq!(&r["config"], c);
    let sidecar = std::fs::read_to_string(vsgn::train::sidecar_path(&a.join("m.ckpt"))).unwrap();
    assert!(sidecar.contains("input_len = 64") && sidecar.contains("in_channels = 8"), "{sidecar}");
}

#[test]
fn inspect_graph_dumps_every_level() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let features = manifest.parent().unwrap().join("features/train_0000.vsgf");
    let cfg = dir.path().join("tiny.cfg");
    let out = vsgn(&["inspect-graph", "--config", path(&cfg), "--features", path(&features)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("# level")).count(), 5);
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 4, "{line}");
        assert!(f[2] == "free" || f[2] == "cross_scale");
        assert!(f[3].parse::<f64>().unwrap() <= 0.0);
    }
}
