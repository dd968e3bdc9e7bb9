use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tokbandit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_tlb_fans_out_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"algos": ["eoful", "oracle_greedy"], "family": "affine", "T": 60, "seeds": [0, 1, 2]}"#);
    let out = dir.path().join("out");
    let o = run(&["simulate-tlb", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names = csv_names(&out);
    assert_eq!(names.iter().filter(|n| !n.starts_with("bound")).count(), 6);
    assert_eq!(names.iter().filter(|n| n.starts_with("bound")).count(), 3);
    assert!(out.join("summary.json").exists());
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"algos": ["greedy_etc", "random"], "family": "affine", "n": 3, "L": 3, "T": 200}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["simulate-tmab", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = csv_names(&a);
    assert_eq!(names, csv_names(&b));
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n}");
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"algos": ["eoful"], "family": "affine", "seeds": []}"#);
    let o = run(&["simulate-tlb", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));

    let cfg = write_config(dir.path(), r#"{"algos": ["greedy_etc"], "family": "affine"}"#);
    assert_eq!(run(&["simulate-tlb", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(run(&["simulate-lookahead", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(run(&["simulate-tlb"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // eps too large for the affine generator.
    let cfg = write_config(dir.path(), r#"{"algos": ["eoful"], "family": "affine", "eps": 0.9, "T": 10}"#);
    let o = run(&["simulate-tlb", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["validate-ddmc", "--input", dir.path().join("missing.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump.jsonl");
    let o = run(&["gen-dump", "--pairs", "50", "--seed", "3", "--out", dump.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("v");
    for metric in ["d1", "l2"] {
        let o = run(&["validate-ddmc", "--input", dump.to_str().unwrap(), "--metric", metric, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ddmc_summary.json")).unwrap()).unwrap();
        assert_eq!(summary["monotonicity"], 1.0);
        assert_eq!(summary["metric"], metric);
    }
    let stats = fs::read_to_string(out.join("ddmc_stats.csv")).unwrap();
    assert!(stats.starts_with("bucket,count,mean,variance,metric,dump_id\n"));
    let o = run(&["validate-ddmc", "--input", dump.to_str().unwrap(), "--metric", "cosine"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reduce_bts_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree.json");
    fs::write(&tree, r#"{"arity": 2, "depth": 2, "leaves": [0.1, 0.4, 0.9, 0.2]}"#).unwrap();
    let out = dir.path().join("r");
    let o = run(&["reduce-bts", "--input", tree.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bts_tmab.json")).unwrap()).unwrap();
    assert_eq!(rep["value"], 0.9);
    assert_eq!(rep["max_leaf"], 0.9);

    let cfg = write_config(dir.path(), r#"{"algos": ["greedy_etc"], "family": "mab", "n": 3, "L": 3}"#);
    let o = run(&["reduce-bts", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("tree.json").exists());
}

#[test]
fn check_assumptions_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"algos": ["greedy_etc"], "family": "affine", "n": 3, "L": 4, "eps": 0.05}"#);
    let out = dir.path().join("c");
    let o = run(&["check-assumptions", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("assumptions.json")).unwrap()).unwrap();
    assert_eq!(rep["ddmc"]["passed"], true);
    assert_eq!(rep["monotonicity"]["passed"], true);
    assert_eq!(rep["sld"]["passed"], true);
}

#[test]
fn lookahead_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"algos": ["k_lookahead_etc", "greedy_etc"], "family": "k_ddmc", "n": 3, "L": 4, "lookahead_k": 2, "T": 300}"#,
    );
    let out = dir.path().join("k");
    let o = run(&["simulate-lookahead", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_names(&out).len(), 2);
}
