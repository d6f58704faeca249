use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dinfer")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dinfer(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_arm(dir: &TempDir, name: &str) -> PathBuf {
    let ck = p(dir, name);
    ok(&["train-toy", "--modality", "arm", "--epochs", "3", "--n-members", "24", "--n-nonmembers", "24", "--length", "12", "--seed", "5", "--out", s(&ck)]);
    ck
}

#[test]
fn train_toy_is_byte_reproducible_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let a = small_arm(&dir, "a.json");
    let b = small_arm(&dir, "b.json");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(p(&dir, "a.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["members"].as_array().unwrap().len(), 24);
    assert_eq!(manifest["corpus"]["kind"], "arm");
    // only the outputs remain, no temporary files
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 4);
}

#[test]
fn zero_epochs_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = dinfer(&["train-toy", "--modality", "arm", "--epochs", "0", "--out", s(&p(&dir, "x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!p(&dir, "x.json").exists());
}

#[test]
fn dm_checkpoint_records_dimension() {
    let dir = TempDir::new().unwrap();
    let ck = p(&dir, "dm.json");
    ok(&["train-toy", "--modality", "dm", "--dim", "8", "--epochs", "2", "--n-members", "20", "--n-nonmembers", "20", "--out", s(&ck)]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&ck).unwrap()).unwrap();
    assert_eq!(v["format"], 1);
    assert_eq!(v["model"]["modality"], "dm");
    assert_eq!(v["model"]["dim"], 8);
    assert_eq!(v["corpus"]["dim"], 8);
}

#[test]
fn stepwise_pipeline_matches_audit() {
    let dir = TempDir::new().unwrap();
    let ck = small_arm(&dir, "ck.json");
    for (set, name) in [("members", "p.ndjson"), ("nonmembers", "u.ndjson")] {
        let out = ok(&["trace", "--checkpoint", s(&ck), "--set", set, "--out", s(&p(&dir, name))]);
        assert_eq!(out.trim(), "wrote 24 traces");
    }
    for (t, f) in [("p.ndjson", "p.csv"), ("u.ndjson", "u.csv")] {
        ok(&["features", "--traces", s(&p(&dir, t)), "--modality", "arm", "--out", s(&p(&dir, f))]);
    }
    let header = fs::read_to_string(p(&dir, "p.csv")).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("id,loss,zlib,hinge,min_k@10"));

    let (pc, uc) = (p(&dir, "p.csv"), p(&dir, "u.csv"));
    let line = ok(&["di-test", "--suspects", s(&pc), "--references", s(&uc), "--modality", "arm", "--seed", "3", "--out", s(&p(&dir, "di.json"))]);
    assert!(line.starts_with("REJECT H0 (p=") || line.trim() == "INCONCLUSIVE");
    let di: serde_json::Value = serde_json::from_slice(&fs::read(p(&dir, "di.json")).unwrap()).unwrap();
    assert_eq!(di["partitions"].as_array().unwrap().len(), 10);

    ok(&["min-p", "--suspects", s(&pc), "--references", s(&uc), "--modality", "arm", "--trials", "2", "--grid", "4,8,24", "--out", s(&p(&dir, "minp.json"))]);
    let minp: serde_json::Value = serde_json::from_slice(&fs::read(p(&dir, "minp.json")).unwrap()).unwrap();
    assert!(minp["curve"].as_array().unwrap().len() <= 3);

    let table = ok(&["mia-eval", "--suspects", s(&pc), "--references", s(&uc), "--out", s(&p(&dir, "mia.json"))]);
    assert!(table.lines().any(|l| l.starts_with("min_k@best")));

    // the audit over stored traces reproduces the stepwise test
    ok(&["audit", "--suspects", s(&p(&dir, "p.ndjson")), "--references", s(&p(&dir, "u.ndjson")), "--modality", "arm", "--seed", "3", "--trials", "2", "--out", s(&p(&dir, "r.json"))]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(p(&dir, "r.json")).unwrap()).unwrap();
    assert_eq!(r["mean_p"], di["mean_p"]);
}

#[test]
fn audit_report_conforms_to_schema() {
    let dir = TempDir::new().unwrap();
    let ck = small_arm(&dir, "ck.json");
    let report = p(&dir, "r.json");
    ok(&["audit", "--checkpoint", s(&ck), "--trials", "2", "--out", s(&report)]);
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas/report.schema.json")).unwrap()).unwrap();
    let instance: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(instance["alpha"], 0.01);

    let printed = ok(&["report", "--report", s(&report)]);
    let last = printed.lines().last().unwrap();
    assert!(last.starts_with("REJECT H0 (p=") || last == "INCONCLUSIVE", "{last}");
}

#[test]
fn toml_config_is_merged_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let ck = small_arm(&dir, "ck.json");
    let cfg = p(&dir, "run.toml");
    fs::write(&cfg, "seed = 11\n[di]\nn_partitions = 4\ntrials = 1\n[attack]\nk_grid = [20]\n").unwrap();
    let r1 = p(&dir, "r1.json");
    ok(&["audit", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&r1)]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&r1).unwrap()).unwrap();
    assert_eq!(v["partitions"].as_array().unwrap().len(), 4);
    assert_eq!(v["seed"], 11);
    assert!(v["attacks"].get("min_k@20").is_some() && v["attacks"].get("min_k@10").is_none());

    let r2 = p(&dir, "r2.json");
    ok(&["audit", "--config", s(&cfg), "--checkpoint", s(&ck), "--partitions", "6", "--seed", "2", "--out", s(&r2)]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&r2).unwrap()).unwrap();
    assert_eq!(v["partitions"].as_array().unwrap().len(), 6);
    assert_eq!(v["seed"], 2);
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dinfer(&["features", "--traces", s(&p(&dir, "nope.ndjson")), "--modality", "arm", "--out", s(&p(&dir, "f.csv"))]);
    assert_eq!(missing.status.code(), Some(4));

    let bad = p(&dir, "bad.ndjson");
    fs::write(&bad, "{\"id\":\"a\",\"zlib_size\":3,\"steps\":[]}\nnot json\n").unwrap();
    let malformed = dinfer(&["features", "--traces", s(&bad), "--modality", "arm", "--out", s(&p(&dir, "f.csv"))]);
    assert_eq!(malformed.status.code(), Some(4));

    let cfg = p(&dir, "bad.toml");
    fs::write(&cfg, "[di]\nalpha = 2.0\n").unwrap();
    let bad_cfg = dinfer(&["report", "--config", s(&cfg), "--report", s(&p(&dir, "r.json"))]);
    assert_eq!(bad_cfg.status.code(), Some(2));

    fs::write(&cfg, "[attack]\nunknown_key = 1\n").unwrap();
    assert_eq!(dinfer(&["report", "--config", s(&cfg), "--report", "x"]).status.code(), Some(2));

    let ck = small_arm(&dir, "ck.json");
    let same = p(&dir, "same.ndjson");
    ok(&["trace", "--checkpoint", s(&ck), "--limit", "5", "--out", s(&same)]);
    let overlap = dinfer(&["audit", "--suspects", s(&same), "--references", s(&same), "--modality", "arm", "--out", s(&p(&dir, "o.json"))]);
    assert_eq!(overlap.status.code(), Some(4));
}

#[test]
fn divergence_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let out = dinfer(&["train-toy", "--modality", "dm", "--epochs", "50", "--lr", "1000", "--n-members", "20", "--n-nonmembers", "20", "--out", s(&p(&dir, "d.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
