use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn docee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docee")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = docee(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

fn gen(dir: &Path, name: &str, docs: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&["gen", "--docs", &docs.to_string(), "--seed", &seed.to_string(), "--types", "2", "--out", s(&out)]);
    out
}

#[test]
fn gen_is_deterministic_and_rejects_zero_docs() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", 30, 7);
    let b = gen(dir.path(), "b", 30, 7);
    for f in ["corpus.jsonl", "schema.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(lines(&a.join("corpus.jsonl")).len(), 30);
    let c = gen(dir.path(), "c", 30, 8);
    assert_ne!(fs::read(a.join("corpus.jsonl")).unwrap(), fs::read(c.join("corpus.jsonl")).unwrap());
    let out = docee(&["gen", "--docs", "0", "--out", s(&dir.path().join("z"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn flags_beat_config_file_beats_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    fs::write(&cfg, "# small corpus\ndocs = 5\nseed = 3\nscatter_max = 2\n").unwrap();
    let a = dir.path().join("a");
    ok(&["gen", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(lines(&a.join("corpus.jsonl")).len(), 5);
    let echoed = fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(echoed.contains("docs = 5\n") && echoed.contains("scatter-max = 2\n") && echoed.contains("types = 3\n"), "{echoed}");
    let b = dir.path().join("b");
    ok(&["gen", "--config", s(&cfg), "--docs", "2", "--out", s(&b)]);
    assert_eq!(lines(&b.join("corpus.jsonl")).len(), 2);
    assert!(fs::read_to_string(b.join("config.txt")).unwrap().contains("seed = 3\n"));

    fs::write(&cfg, "docs = 5\nwidth = 3\n").unwrap();
    assert_eq!(docee(&["gen", "--config", s(&cfg), "--out", s(&a)]).status.code(), Some(1));
    fs::write(&cfg, "docs = five\n").unwrap();
    assert_eq!(docee(&["gen", "--config", s(&cfg), "--out", s(&a)]).status.code(), Some(1));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(docee(&["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(docee(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(docee(&["train"]).status.code(), Some(1));
    for (cmd, flags) in [
        ("gen", &["--docs", "--seed", "--out", "--config", "--scatter-max", "--same-type"][..]),
        ("train", &["--train", "--dev", "--resume", "--epochs", "--learning-rate", "--lambda-ae", "--clip-norm", "--workers"][..]),
        ("extract", &["--checkpoint", "--input", "--threshold", "--workers"][..]),
        ("eval", &["--pred", "--gold", "--schema", "--throughput"][..]),
    ] {
        let out = docee(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn train_resume_extract_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen(d, "data", 64, 1);
    let dev = gen(d, "dev", 10, 2);
    let run = d.join("run");
    let (train, schema) = (data.join("corpus.jsonl"), data.join("schema.json"));
    let dev_corpus = dev.join("corpus.jsonl");
    let common = [
        "train",
        "--train",
        s(&train),
        "--schema",
        s(&schema),
        "--out",
        s(&run),
        "--dim",
        "16",
        "--layers",
        "1",
        "--heads",
        "2",
    ];
    let mut first = common.to_vec();
    first.extend(["--epochs", "2", "--dev", s(&dev_corpus)]);
    ok(&first);
    assert!(run.join("model.ckpt").exists());
    assert!(fs::read_to_string(run.join("config.txt")).unwrap().contains("epochs = 2\n"));
    let steps = lines(&run.join("train_log.jsonl"));
    assert_eq!(steps.len(), 32);
    let epochs = lines(&run.join("epochs.jsonl"));
    assert_eq!(epochs.len(), 2);
    for e in &epochs {
        let v: serde_json::Value = serde_json::from_str(e).unwrap();
        assert!(v["dev_f1"].as_f64().is_some(), "{e}");
    }
    let ckpt = d.join("first.ckpt");
    fs::copy(run.join("model.ckpt"), &ckpt).unwrap();

    let mut resumed = common.to_vec();
    resumed.extend(["--epochs", "3", "--resume", s(&ckpt)]);
    ok(&resumed);
    let steps = lines(&run.join("train_log.jsonl"));
    assert_eq!(steps.len(), 48);
    let ids: Vec<u64> = steps.iter().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap()).collect();
    assert_eq!(ids, (1..=48).collect::<Vec<_>>());
    let v: serde_json::Value = serde_json::from_str(&steps[40]).unwrap();
    for k in ["L_rr", "L_sl", "L_ae", "L_all"] {
        assert!(v[k].as_f64().unwrap().is_finite());
    }

    let ex = |name: &str| {
        let out = d.join(name);
        let o = ok(&["extract", "--checkpoint", s(&run.join("model.ckpt")), "--input", s(&dev.join("corpus.jsonl")), "--out", s(&out), "--threshold", "0.2"]);
        (out, String::from_utf8_lossy(&o.stdout).to_string())
    };
    let (x1, said) = ex("x1");
    let (x2, _) = ex("x2");
    assert!(said.contains("docs/sec"), "{said}");
    assert_eq!(lines(&x1.join("predictions.jsonl")).len(), 10);
    assert_eq!(fs::read(x1.join("predictions.jsonl")).unwrap(), fs::read(x2.join("predictions.jsonl")).unwrap());
    let tp: serde_json::Value = serde_json::from_str(&fs::read_to_string(x1.join("throughput.json")).unwrap()).unwrap();
    assert!(tp["docs_per_sec"].as_f64().unwrap() > 0.0);
    assert!(fs::read_to_string(x1.join("config.txt")).unwrap().contains("threshold = 0.2\n"));

    let ev = d.join("ev");
    ok(&[
        "eval",
        "--pred",
        s(&x1.join("predictions.jsonl")),
        "--gold",
        s(&dev.join("corpus.jsonl")),
        "--schema",
        s(&data.join("schema.json")),
        "--out",
        s(&ev),
        "--throughput",
        s(&x1.join("throughput.json")),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert!(report["throughput"].as_f64().unwrap() > 0.0);
    for k in ["overall", "per_type", "splits", "buckets"] {
        assert!(!report[k].is_null(), "{k}");
    }
}

#[test]
fn eval_of_gold_is_perfect_and_agrees_with_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data", 40, 5);
    let out = dir.path().join("ev");
    let gold = data.join("corpus.jsonl");
    let schema = data.join("schema.json");
    let o = ok(&["eval", "--pred", s(&gold), "--gold", s(&gold), "--schema", s(&schema), "--out", s(&out)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let overall = &report["overall"];
    assert_eq!(overall["f1"].as_f64(), Some(1.0));
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    let row: Vec<&str> = table.lines().find(|l| l.starts_with("overall")).unwrap().split_whitespace().collect();
    let f = |i: usize| row[i].parse::<f64>().unwrap();
    assert_eq!(row[1].parse::<usize>().unwrap(), 40);
    assert!((f(2) - overall["precision"].as_f64().unwrap()).abs() < 1e-4);
    assert!((f(3) - overall["recall"].as_f64().unwrap()).abs() < 1e-4);
    assert!((f(4) - overall["f1"].as_f64().unwrap()).abs() < 1e-4);
    assert_eq!(row[5].parse::<u64>().unwrap(), overall["tp"].as_u64().unwrap());

    let missing = docee(&["eval", "--pred", s(&gold), "--gold", s(&dir.path().join("nope.jsonl")), "--schema", s(&schema), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn non_finite_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data", 4, 9);
    let out = docee(&[
        "train",
        "--train",
        s(&data.join("corpus.jsonl")),
        "--schema",
        s(&data.join("schema.json")),
        "--out",
        s(&dir.path().join("run")),
        "--dim",
        "8",
        "--layers",
        "1",
        "--heads",
        "1",
        "--epochs",
        "1",
        "--lambda-ae",
        "1e308",
        "--lambda-sl",
        "1e308",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
