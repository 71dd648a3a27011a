use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn layie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layie"))
        .args(args)
        .env_remove("LAYIE_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    runs: PathBuf,
}

impl Fixture {
    fn new(docs: usize) -> Fixture {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let runs = tmp.path().join("runs");
        let o = layie(&["synth", "--out", s(&data), "--docs", &docs.to_string(), "--train", "5", "--seed", "2"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture { _tmp: tmp, data, runs }
    }

    fn args<'a>(&'a self, extra: &[&'a str]) -> Vec<String> {
        let mut v: Vec<String> = [
            "--corpus",
            s(&self.data.join("test.jsonl")),
            "--training",
            s(&self.data.join("train.jsonl")),
            "--schema",
            s(&self.data.join("schema.json")),
            "--out",
            s(&self.runs),
        ]
        .iter()
        .map(|x| x.to_string())
        .collect();
        v.extend(extra.iter().map(|x| x.to_string()));
        v
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_with(cmd: &str, args: Vec<String>) -> Output {
    let mut all = vec![cmd.to_string()];
    all.extend(args);
    let refs: Vec<&str> = all.iter().map(String::as_str).collect();
    layie(&refs)
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = layie(&[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&layie(&["--help"])), 0);
    assert_eq!(code(&layie(&["--version"])), 0);
}

#[test]
fn unknown_flag_exits_1() {
    let o = layie(&["run", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--no-such-flag"));
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let o = layie(&["run", "--corpus", "/nonexistent/test.jsonl"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn http_without_key_is_a_usage_error() {
    let f = Fixture::new(2);
    let o = run_with("run", f.args(&["--backend", "http", "--model", "gpt-4o"]));
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("LAYIE_API_KEY"));
}

#[test]
fn replay_without_cache_is_a_runtime_failure() {
    let f = Fixture::new(2);
    let o = run_with("run", f.args(&["--backend", "replay"]));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("cache miss"));
}

#[test]
fn run_then_score_makes_no_model_calls() {
    let f = Fixture::new(4);
    let o = run_with("run", f.args(&["--backend", "mock", "--seed", "5", "--sweep-id", "r"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("F1 1.000"));
    let run = f.runs.join("r");
    let o = layie(&["score", "--run", s(&run), "--technique", "fuzzy", "--stage", "cleaned"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("model calls: 0"));
    let rescored = std::fs::read_to_string(run.join("scores-cleaned-fuzzy.jsonl")).unwrap();
    assert!(rescored.contains("\"refinement_stage\":\"cleaned\""), "{rescored}");
    // every artifact carries the manifest hash and the seed
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["manifest_hash"].as_str().unwrap();
    assert_eq!(manifest["seed"], 5);
    for file in ["configs.json", "scores.jsonl", "report.csv", "report.md", "report.json", "scores-cleaned-fuzzy.jsonl"] {
        let text = std::fs::read_to_string(run.join(file)).unwrap();
        assert!(text.contains(hash), "{file} lacks the manifest hash");
        assert!(text.contains('5'), "{file} lacks the seed");
    }
}

#[test]
fn factorial_sweep_on_mock_writes_432_rows_and_reruns_identically() {
    let f = Fixture::new(3);
    let args = f.args(&["--backend", "mock", "--mode", "factorial", "--sweep-id", "fact"]);
    let o = run_with("sweep", args.clone());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores = f.runs.join("fact").join("scores.jsonl");
    let first = std::fs::read(&scores).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 432);
    let o = run_with("sweep", args);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("model calls: 0"), "{}", stdout(&o));
    assert_eq!(std::fs::read(&scores).unwrap(), first);
}

#[test]
fn ofat_sweep_reports_both_counts() {
    let f = Fixture::new(3);
    let o = run_with("sweep", f.args(&["--backend", "mock", "--mode", "ofat", "--sweep-id", "o"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("scored 12 of 432 configurations per model (2.78%), 8 call signatures"), "{}", stdout(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.runs.join("o").join("ofat.json")).unwrap()).unwrap();
    assert_eq!(summary["call_bearing_configs_per_model"], 8);
    assert_eq!(summary["scored_configs_per_model"], 12);
}

#[test]
fn report_refuses_mixed_manifests() {
    let f = Fixture::new(2);
    for (seed, id) in [("1", "a"), ("2", "b")] {
        let o = run_with("run", f.args(&["--backend", "mock", "--seed", seed, "--sweep-id", id]));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (a, b) = (f.runs.join("a/scores.jsonl"), f.runs.join("b/scores.jsonl"));
    let o = layie(&["report", "--input", s(&a), "--input", s(&b), "--out", s(&f.runs)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("different manifests"));
    let o = layie(&["report", "--run", s(&f.runs.join("a")), "--format", "md"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn manifest_file_with_flag_override() {
    let f = Fixture::new(2);
    let manifest = f.runs.parent().unwrap().join("m.toml");
    std::fs::write(
        &manifest,
        "corpus = \"data/test.jsonl\"\ntraining = \"data/train.jsonl\"\nschema = \"data/schema.json\"\nbackend = \"mock\"\nseed = 11\nbaseline = \"chunk=max\"\n\n[noise]\nkey_mangle_rate = 0.5\n",
    )
    .unwrap();
    let o = layie(&["run", "--manifest", s(&manifest), "--out", s(&f.runs), "--stage", "mapped", "--sweep-id", "m"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("oracle:ocr/max/few_shot/0/mapped/exact"), "{}", stdout(&o));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.runs.join("m/manifest.json")).unwrap()).unwrap();
    assert_eq!(saved["seed"], 11);
    assert_eq!(saved["noise"]["key_mangle_rate"], 0.5);

    let bad = f.runs.parent().unwrap().join("bad.toml");
    std::fs::write(&bad, "corpus = \"x\"\nunknown_field = 1\n").unwrap();
    assert_eq!(code(&layie(&["run", "--manifest", s(&bad)])), 1);
}

#[test]
fn ingest_normalized_round_trip() {
    let f = Fixture::new(2);
    let out = f.runs.parent().unwrap().join("copy.jsonl");
    let schema = f.runs.parent().unwrap().join("schema.json");
    let o = layie(&["ingest", "--corpus", s(&f.data.join("test.jsonl")), "--adapter", "normalized", "--out", s(&out), "--schema-out", s(&schema)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(f.data.join("test.jsonl")).unwrap());
    assert!(schema.exists());
}
