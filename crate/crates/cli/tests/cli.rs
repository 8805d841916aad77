use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use draftmix::models::{ModelFile, NGramModel};

const TINY: &str = r#"{
  "generator": {"sequences_per_domain": 100, "sequence_length": 40},
  "prompts_per_domain": 6,
  "eval_length": 12,
  "lambda_grid": [0.0, 0.5, 1.0],
  "seeds": [1, 2]
}"#;

fn draftmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_draftmix")).args(args).output().unwrap()
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_reproducible_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out_dir = tmp.path().join("reports");
    let run = || ok(&draftmix(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--jobs", "2"]));
    run();
    let files = ["report.json", "report.csv", "routing.csv"];
    let before: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out_dir.join(f)).unwrap()).collect();
    run();
    for (file, bytes) in files.iter().zip(&before) {
        assert!(!bytes.is_empty());
        assert_eq!(bytes, &fs::read(out_dir.join(file)).unwrap(), "{file}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(report["seeds"][0]["cells"].as_array().unwrap().len(), 8 * 2 * 2);
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("seed,mode,strategy,domain,metric,value\n"));
}

#[test]
fn seed_flag_overrides_the_seed_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    ok(&draftmix(&["sweep", "--config", &cfg, "--seed", "7", "--out", tmp.path().to_str().unwrap()]));
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 2 * 2);
    assert!(rows.iter().all(|r| r.starts_with("7,")));
}

#[test]
fn gen_and_train_write_corpora_and_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let out = tmp.path().to_str().unwrap();
    ok(&draftmix(&["gen", "--config", &cfg, "--out", out]));
    ok(&draftmix(&["train", "--config", &cfg, "--seed", "1", "--out", out]));
    let seed_dir = tmp.path().join("seed_1");
    let corpus = fs::read_to_string(seed_dir.join("corpus_a.txt")).unwrap();
    assert_eq!(corpus.lines().count(), 100);
    assert_eq!(fs::read_to_string(tmp.path().join("seed_2/prompts_b.txt")).unwrap().lines().count(), 6);
    for name in ["target", "drafter_a", "drafter_b", "mixed_small", "mixed_large", "averaged"] {
        let text = fs::read_to_string(seed_dir.join("models").join(format!("{name}.json"))).unwrap();
        let file: ModelFile = serde_json::from_str(&text).unwrap();
        let model = NGramModel::try_from(file).unwrap();
        assert_eq!(model.vocab().size(), 32);
        assert_eq!(model.order(), if name == "target" { 3 } else { 2 });
    }
}

#[test]
fn oracle_passes_on_small_instances() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#"{"instances": 5, "greedy_length": 16, "samples": 20000}"#);
    let out = draftmix(&["oracle", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(report["greedy_mismatches"], 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("sampling merged"));
}

#[test]
fn unwritable_output_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = draftmix(&["run", "--config", &cfg, "--out", blocker.join("reports").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot create output directory"));
}

#[test]
fn invalid_config_fails_with_the_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#"{"seeds": [1, 1]}"#);
    let out = draftmix(&["run", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds must be distinct"));
    let out = draftmix(&["run", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert!(!out.status.success());
}
