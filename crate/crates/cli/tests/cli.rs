use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use speechvqa_core::eval::EvalReport;

const BIN: &str = env!("CARGO_BIN_EXE_speechvqa");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("SPEECHVQA_PROFILE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert_eq!(code(&o), 0, "{args:?} failed:\n{}", stderr(&o));
    o
}

fn gen(dir: &Path, out: &str, n: &str, seed: &str) {
    ok(dir, &["gen-data", "--out", out, "--n", n, "--seed", seed]);
}

const QUICK: [&str; 6] = ["--epochs", "1", "--warmup-steps", "0", "--batch-size", "4"];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&QUICK);
    run(dir, &args)
}

fn manifest(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_and_bad_flags() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(t.path(), &["--help"])), 0);
    assert_eq!(code(&run(t.path(), &["--version"])), 0);
    assert_eq!(code(&run(t.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&run(t.path(), &[])), 1);
}

#[test]
fn gen_data_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "a", "6", "4");
    gen(t.path(), "b", "6", "4");
    for f in ["samples.jsonl", "manifest.json"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap());
    }
    let m = manifest(t.path().join("a.run.json"));
    assert_eq!(m["exit_status"], 0);
    assert_eq!(m["seeds"]["dataset"], 4);
    assert_eq!(m["artifacts"].as_object().unwrap().len(), 1);

    gen(t.path(), "c", "6", "5");
    assert_ne!(
        fs::read(t.path().join("a/samples.jsonl")).unwrap(),
        fs::read(t.path().join("c/samples.jsonl")).unwrap()
    );
}

#[test]
fn gen_data_refuses_bad_requests() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["gen-data", "--out", "d", "--n", "0"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--n"), "{}", stderr(&o));
    assert_eq!(manifest(t.path().join("d.run.json"))["exit_status"], 1);

    gen(t.path(), "d", "2", "0");
    assert_eq!(code(&run(t.path(), &["gen-data", "--out", "d", "--n", "2"])), 1);
    assert_eq!(code(&run(t.path(), &["gen-data", "--out", "d", "--n", "3", "--force"])), 0);

    fs::create_dir(t.path().join("other")).unwrap();
    fs::write(t.path().join("other/keep.txt"), "x").unwrap();
    let o = run(t.path(), &["gen-data", "--out", "other", "--n", "2", "--force"]);
    assert_eq!(code(&o), 1);
    assert!(t.path().join("other/keep.txt").exists());
}

#[test]
fn stage2_needs_stage1_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "1");
    let o = train(t.path(), &["--dataset", "d", "--out", "s2.ckpt", "--stage", "2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("stage-1 checkpoint"), "{}", stderr(&o));
    assert!(!t.path().join("s2.ckpt").exists());

    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "s2.ckpt", "--stage", "2", "--allow-missing-stage1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn training_is_reproducible_and_chains() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "2");
    let a = train(t.path(), &["--dataset", "d", "--out", "a.ckpt", "--stage", "1", "--seed", "3"]);
    let b = train(t.path(), &["--dataset", "d", "--out", "b.ckpt", "--stage", "1", "--seed", "3"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(stdout(&a).lines().next(), stdout(&b).lines().next());
    assert!(stdout(&a).starts_with("final loss "));
    assert_eq!(fs::read(t.path().join("a.ckpt")).unwrap(), fs::read(t.path().join("b.ckpt")).unwrap());
    assert!(stderr(&a).contains("resolved training config"));
    let log = fs::read_to_string(t.path().join("a.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "header plus one step:\n{log}");

    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "s2.ckpt", "--stage", "2", "--init-from", "a.ckpt"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "x.ckpt", "--stage", "2", "--init-from", "a.ckpt", "--adapter", "mlp"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("adapter"), "{}", stderr(&o));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "2");
    fs::write(t.path().join("c.toml"), "init_lr = 0.002\nweight_decay = 0.2\nseed = 9\n").unwrap();
    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "a.ckpt", "--stage", "1", "--config", "c.toml", "--seed", "4"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(t.path().join("a.ckpt.run.json"));
    let cfg = &m["config"]["train"];
    assert_eq!(cfg["init_lr"], 0.002);
    assert_eq!(cfg["weight_decay"], 0.2);
    assert_eq!(cfg["seed"], 4);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);

    fs::write(t.path().join("bad.toml"), "init_lr = \"fast\"\n").unwrap();
    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "b.ckpt", "--stage", "1", "--config", "bad.toml"],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn profile_mismatch_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "2", "2");
    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "a.ckpt", "--stage", "1", "--profile", "standard"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("audio width"), "{}", stderr(&o));
}

#[test]
fn non_finite_loss_exits_3_and_keeps_the_log() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "8", "2");
    let o = train(
        t.path(),
        &["--dataset", "d", "--out", "n.ckpt", "--stage", "1", "--lr", "1e300", "--grad-clip", "0"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
    assert!(!t.path().join("n.ckpt").exists());
    assert!(t.path().join("n.ckpt.log.csv").exists());
    assert_eq!(manifest(t.path().join("n.ckpt.run.json"))["exit_status"], 3);
}

#[test]
fn reference_responders_saturate_and_floor() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "9", "6");
    let o = ok(
        t.path(),
        &["eval", "--dataset", "d", "--responder", "echo", "--out-dir", "e", "--timestamp", "fixed"],
    );
    assert!(stdout(&o).contains("Complex reasoning"));
    let json = fs::read_dir(t.path().join("e"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".json") && !p.to_string_lossy().ends_with(".run.json"))
        .unwrap();
    let report = EvalReport::from_json(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report.grid.len(), 6);
    assert_eq!(report.metadata.timestamp, "fixed");
    for c in &report.grid {
        assert!((c.scores.rouge1_f - 1.0).abs() < 1e-12);
        assert!((c.scores.bleu1 - 1.0).abs() < 1e-12);
        assert_eq!(c.scores.bbox_accuracy, 1.0);
    }

    ok(
        t.path(),
        &["eval", "--dataset", "d", "--responder", "empty", "--out-dir", "z", "--cells", "simple:text"],
    );
    let csv = fs::read_dir(t.path().join("z"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .unwrap();
    let body = fs::read_to_string(csv).unwrap();
    let rows: Vec<&str> = body.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("simple_reasoning,text,"), "{}", rows[0]);

    assert_eq!(code(&run(t.path(), &["eval", "--dataset", "d", "--cells", "simple:smell"])), 1);
    assert_eq!(code(&run(t.path(), &["eval", "--dataset", "d"])), 1);
}

#[test]
fn eval_reports_bad_checkpoints() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "2");
    let o = train(t.path(), &["--dataset", "d", "--out", "a.ckpt", "--stage", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bytes = fs::read(t.path().join("a.ckpt")).unwrap();
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    fs::write(t.path().join("bad.ckpt"), &bad).unwrap();
    let o = run(t.path(), &["eval", "--dataset", "d", "--checkpoint", "bad.ckpt", "--max-new", "4"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("bad.ckpt") && err.contains("checkpoint format version 1"), "{err}");

    let mut future = bytes;
    future[8..12].copy_from_slice(&99u32.to_le_bytes());
    fs::write(t.path().join("future.ckpt"), &future).unwrap();
    let o = run(t.path(), &["eval", "--dataset", "d", "--checkpoint", "future.ckpt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("99"), "{}", stderr(&o));
}

#[test]
fn predict_contract() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "2");
    let o = train(t.path(), &["--dataset", "d", "--out", "a.ckpt", "--stage", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let image = fs::read_dir(t.path().join("d/images")).unwrap().next().unwrap().unwrap().path();
    let image = image.to_str().unwrap();

    let both = run(
        t.path(),
        &["predict", "--checkpoint", "a.ckpt", "--image", image, "--text", "hi", "--speech-from-text", "hi"],
    );
    assert_eq!(code(&both), 1);
    assert_eq!(code(&run(t.path(), &["predict", "--checkpoint", "a.ckpt", "--image", image])), 1);

    for flag in ["--text", "--speech-from-text"] {
        let o = ok(
            t.path(),
            &[
                "predict", "--checkpoint", "a.ckpt", "--image", image, flag, "where is the red circle?",
                "--max-new", "12", "--gt-bbox", "1,2,30,40",
            ],
        );
        let out = stdout(&o);
        let bbox_line = out.lines().find(|l| l.starts_with("bbox ")).unwrap_or_else(|| panic!("{out}"));
        if bbox_line != "bbox none" {
            assert!(out.lines().any(|l| l.starts_with("iou ")), "{out}");
        }
    }

    let o = run(
        t.path(),
        &["predict", "--checkpoint", "a.ckpt", "--image", image, "--text", "hi", "--gt-bbox", "9,9,1,1"],
    );
    assert_eq!(code(&o), 1);
    let o = run(t.path(), &["predict", "--checkpoint", "a.ckpt", "--image", "missing.png", "--text", "hi"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn replay_reproduces_and_detects_changed_inputs() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "8");
    let o = train(t.path(), &["--dataset", "d", "--out", "a.ckpt", "--stage", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = ok(t.path(), &["replay", "a.ckpt.run.json"]);
    assert!(stdout(&o).contains("reproduced 2 artifact"), "{}", stdout(&o));
    assert!(t.path().join("a.ckpt.run.json.replay.json").exists());

    ok(t.path(), &["replay", "d.run.json"]);

    ok(
        t.path(),
        &["eval", "--dataset", "d", "--responder", "echo", "--out-dir", "e", "--manifest", "e.run.json"],
    );
    ok(t.path(), &["replay", "e.run.json"]);

    gen(t.path(), "other", "4", "9");
    fs::copy(t.path().join("other/samples.jsonl"), t.path().join("d/samples.jsonl")).unwrap();
    let o = run(t.path(), &["replay", "a.ckpt.run.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("changed"), "{}", stderr(&o));
}
