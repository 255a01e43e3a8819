use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scoring-lm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Writes a small Markov corpus and a training config into `dir`.
fn setup(dir: &Path, steps: u64) -> std::path::PathBuf {
    let corpus = dir.join("corpus.txt");
    let o = run(&["synth", "--states", "3", "--length", "4000", "--seed", "5", "--out", p(&corpus)]);
    assert!(o.status.success(), "{o:?}");
    let cfg = dir.join("c.json");
    let doc = serde_json::json!({
        "model": {"context": 2, "embed_dim": 4, "hidden_dim": 8, "seed": 1},
        "train": {"steps": steps, "batch_size": 32, "learning_rate": 0.01, "eval_every": 10, "seed": 3},
        "corpus": corpus,
        "checkpoint": dir.join("ck.json"),
        "metrics": dir.join("metrics.jsonl"),
    });
    std::fs::write(&cfg, doc.to_string()).unwrap();
    cfg
}

#[test]
fn synth_is_deterministic() {
    let a = run(&["synth", "--states", "4", "--length", "50", "--seed", "2"]);
    let b = run(&["synth", "--states", "4", "--length", "50", "--seed", "2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.trim_end().len(), 50);
    assert!(text.trim_end().chars().all(|c| ('a'..='d').contains(&c)));
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 30);
    let o = run(&["train", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3);
    let rec: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
    assert_eq!(rec["step"], 30);
    for key in ["loss", "score_log", "score_brier", "score_spherical", "ppl", "rel_log", "rel_brier", "rel_spherical"] {
        assert!(rec[key].is_number(), "{key}");
    }
    let ck: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ck.json")).unwrap()).unwrap();
    assert_eq!(ck["v"], 1);
    assert_eq!(ck["step"], 30);
    assert_eq!(ck["model"]["vocab_size"], 5);
}

#[test]
fn zero_steps_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 0);
    let o = run(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("steps"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["train", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["verify", "nothing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 30);
    let out = dir.path().join("other.json");
    let o = run(&["train", "--config", p(&cfg), "--steps", "4", "--rule", "brier", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(ck["step"], 4);
    assert_eq!(ck["rule"]["kind"], "brier");
}

#[test]
fn greedy_and_beam_one_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 60);
    assert!(run(&["train", "--config", p(&cfg)]).status.success());
    let ck = dir.path().join("ck.json");
    let g = run(&["generate", "--checkpoint", p(&ck), "--prompt", "ab", "--greedy", "--max-len", "12"]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    for obj in ["log", "brier", "spherical"] {
        let b = run(&[
            "generate", "--checkpoint", p(&ck), "--prompt", "ab", "--beam", "1", "--max-len", "12", "--objective", obj,
        ]);
        assert!(b.status.success());
        assert_eq!(stdout(&b), stdout(&g), "{obj}");
    }
    assert_eq!(stdout(&g).trim_end().chars().count(), 12);
    let j = run(&["generate", "--checkpoint", p(&ck), "--beam", "3", "--max-len", "5", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
}

#[test]
fn finetune_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 20);
    assert!(run(&["train", "--config", p(&cfg)]).status.success());
    let base = dir.path().join("ck.json");
    let ft = dir.path().join("ft.json");
    let fm = dir.path().join("ft.jsonl");
    let corpus = dir.path().join("corpus.txt");
    let o = run(&[
        "finetune", "--base", p(&base), "--corpus", p(&corpus), "--rule", "brier", "--steps", "10", "--out", p(&ft),
        "--metrics", p(&fm),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ft).unwrap()).unwrap();
    assert_eq!(ck["step"], 30);

    let e = run(&["eval", "--checkpoint", p(&ft), "--corpus", p(&corpus)]);
    assert!(e.status.success());
    let v: serde_json::Value = serde_json::from_slice(&e.stdout).unwrap();
    let ppl = v["ppl"].as_f64().unwrap();
    assert!((ppl - (-v["score_log"].as_f64().unwrap()).exp()).abs() < 1e-9);

    // a config that asks for another shape is refused, naming the field
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"context": 2, "embed_dim": 4, "hidden_dim": 9}}"#).unwrap();
    let o = run(&["finetune", "--base", p(&base), "--config", p(&bad), "--corpus", p(&corpus), "--steps", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hidden_dim"));
}

#[test]
fn bad_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("v2.json");
    std::fs::write(&ck, r#"{"v": 2}"#).unwrap();
    let o = run(&["generate", "--checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
    std::fs::write(&ck, r#"{"v": 1, "model": "#).unwrap();
    let o = run(&["generate", "--checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed"));
}

#[test]
fn verify_commands() {
    let o = run(&["verify", "table1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    assert!(text.contains("0.8119") && text.contains("-0.7778") && text.contains("-inf"));
    assert_eq!(run(&["verify", "smoothing", "--rule", "spherical", "--step", "0.05"]).status.code(), Some(0));
    assert_eq!(run(&["verify", "gradcheck", "--rule", "brier", "--m", "8", "--trials", "5"]).status.code(), Some(0));
    assert_eq!(run(&["verify", "entmax", "--trials", "20"]).status.code(), Some(0));
    assert_eq!(run(&["verify", "propriety", "--rule", "linear", "--m", "2", "--q", "0.6,0.4"]).status.code(), Some(3));
}

#[test]
fn pairs_training() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("p.jsonl");
    let mut text = String::new();
    for i in 0..20 {
        let src = ["ab", "ba", "aab"][i % 3];
        text.push_str(&serde_json::json!({"source": src, "target": src.chars().rev().collect::<String>()}).to_string());
        text.push('\n');
    }
    std::fs::write(&pairs, text).unwrap();
    let ck = dir.path().join("ck.json");
    let o = run(&[
        "train", "--pairs", p(&pairs), "--steps", "5", "--context", "3", "--embed-dim", "2", "--hidden-dim", "4",
        "--out", p(&ck),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&pairs, "{\"source\": \"a\"}\n").unwrap();
    let o = run(&["train", "--pairs", p(&pairs), "--steps", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}
