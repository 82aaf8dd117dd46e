use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_instructkit"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn toy_config() -> PathBuf {
    fixtures().join("toy/run.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_run_writes_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = run(&["run", "--config", toy_config().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for stage in ["01_ingest", "02_forge", "03_pseudo", "04_render", "05_filter", "06_split"] {
        assert!(out.join(stage).is_dir(), "{stage} missing");
    }
    assert!(out.join("run_manifest.toml").is_file());
    let files = tree(&out);
    let tmp_str = tmp.path().to_str().unwrap().as_bytes();
    for (name, bytes) in &files {
        assert!(!bytes.windows(tmp_str.len()).any(|w| w == tmp_str), "{} leaks an absolute path", name.display());
    }
}

#[test]
fn stage_by_stage_equals_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = toy_config();
    assert!(run(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    for stage in ["ingest", "forge", "pseudo-label", "render", "filter", "split"] {
        let o = run(&[stage, "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn seed_flag_changes_sampling_only_through_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let dirs: Vec<PathBuf> = ["s1", "s2"].iter().map(|d| tmp.path().join(d)).collect();
    for (d, seed) in dirs.iter().zip(["1", "2"]) {
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
    }
    let m1 = fs::read_to_string(dirs[0].join("run_manifest.toml")).unwrap();
    let m2 = fs::read_to_string(dirs[1].join("run_manifest.toml")).unwrap();
    assert!(m1.contains("seed = \"1\"") && m2.contains("seed = \"2\""));
    assert_ne!(m1, m2);
}

#[test]
fn missing_dataset_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = fixtures().join("toy");
    let manifest = fs::read_to_string(toy.join("datasets.toml"))
        .unwrap()
        .replace("data/queries_en.txt", "data/does_not_exist.txt")
        .replace("source = \"data/", &format!("source = \"{}/data/", toy.display()));
    fs::write(tmp.path().join("datasets.toml"), manifest).unwrap();
    let cfg = fs::read_to_string(toy.join("run.toml"))
        .unwrap()
        .replace("\"tasks.toml\"", &format!("\"{}\"", toy.join("tasks.toml").display()));
    fs::write(tmp.path().join("run.toml"), cfg).unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", tmp.path().join("run.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does_not_exist"));
    assert!(!out.exists());
}

#[test]
fn missing_credential_aborts_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = fixtures().join("toy");
    let cfg = fs::read_to_string(toy.join("run.toml"))
        .unwrap()
        .replace("\"datasets.toml\"", &format!("\"{}\"", toy.join("datasets.toml").display()))
        .replace("\"tasks.toml\"", &format!("\"{}\"", toy.join("tasks.toml").display()))
        .replace("model = \"toy-echo\"", "model = \"toy-echo\"\ncredential_env = \"INSTRUCTKIT_CLI_TEST_NO_SUCH_VAR\"");
    fs::write(tmp.path().join("run.toml"), cfg).unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", tmp.path().join("run.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("INSTRUCTKIT_CLI_TEST_NO_SUCH_VAR"));
    assert!(!out.exists());
}

#[test]
fn stage_without_inputs_fails_with_stage_name() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["render", "--config", toy_config().to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage render"));
}

#[test]
fn stats_prints_table_totals() {
    let o = run(&["stats", fixtures().join("corpus_stats.toml").to_str().unwrap()]);
    assert!(o.status.success());
    let all = text(&o).lines().last().unwrap().to_string();
    let cols: Vec<&str> = all.split_whitespace().collect();
    assert_eq!(cols, ["ALL", "134", "1,533,300", "1,023,076"]);
}

#[test]
fn stats_on_run_dir_matches_line_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(run(&["run", "--config", toy_config().to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let o = run(&["stats", out.to_str().unwrap()]);
    assert!(o.status.success());
    let lines = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count().to_string();
    let all = text(&o).lines().last().unwrap().to_string();
    let cols: Vec<&str> = all.split_whitespace().collect();
    assert_eq!(cols[2], lines("06_split/train.jsonl"));
    assert_eq!(cols[3], lines("06_split/test.jsonl"));
}

#[test]
fn eval_and_human_eval_on_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(run(&["run", "--config", toy_config().to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let test = fs::read_to_string(out.join("06_split/test.jsonl")).unwrap();
    let mut gold_preds = String::new();
    let mut bad_preds = String::new();
    for line in test.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["record_id"].as_str().unwrap();
        let output = v["output"].as_str().unwrap();
        gold_preds.push_str(&serde_json::json!({"record_id": id, "generated": output}).to_string());
        gold_preds.push('\n');
        bad_preds.push_str(&serde_json::json!({"record_id": id, "generated": "no idea"}).to_string());
        bad_preds.push('\n');
    }
    let (pa, pb) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    fs::write(&pa, gold_preds).unwrap();
    fs::write(&pb, bad_preds).unwrap();
    let report = tmp.path().join("report.json");
    let o = run(&[
        "eval",
        "--run",
        out.to_str().unwrap(),
        "--predictions",
        pa.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["overall"]["rouge_l"].as_f64(), Some(100.0));

    let manifest = tmp.path().join("human.jsonl");
    let gold = out.join("06_split/test.jsonl");
    let args = [
        "human-eval",
        "--run-a",
        pa.to_str().unwrap(),
        "--run-b",
        pb.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
        "--per-task",
        "5",
        "--seed",
        "3",
        "--out",
        manifest.to_str().unwrap(),
    ];
    assert!(run(&args).status.success());
    let rows = fs::read_to_string(&manifest).unwrap();
    assert_eq!(rows.lines().count(), 10);
}

#[test]
fn unknown_prediction_id_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(run(&["run", "--config", toy_config().to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let p = tmp.path().join("p.jsonl");
    fs::write(&p, "{\"record_id\":\"nope\",\"generated\":\"x\"}\n").unwrap();
    let o = run(&["eval", "--run", out.to_str().unwrap(), "--predictions", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
