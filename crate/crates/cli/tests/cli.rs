//! End-to-end behaviour of the `stc-mixhop` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use stc_mixhop::graph::read_manifest;
use stc_mixhop::ingest::parse_transactions;
use stc_mixhop_cli::{cap_jobs, main_with_args, ResolvedConfig};
use tempfile::TempDir;

const FAST: [&str; 8] = ["--pretrain-epochs", "1", "--finetune-epochs", "4", "--d", "8", "--dk", "8"];

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["stc-mixhop"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn binary(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_stc-mixhop")).args(args).output().unwrap().status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generated CSV plus the store built from it.
fn store(tmp: &TempDir, seed: &str) -> PathBuf {
    let gen = tmp.path().join("gen");
    let st = tmp.path().join("store");
    let gen_args = ["gen", "--n-accounts", "300", "--n-windows", "8", "--tx-per-window", "150", "--fraud-rate", "0.04"];
    assert_eq!(run(&[&gen_args[..], &["--seed", seed, "--out-dir", p(&gen)]].concat()), 0);
    let csv = gen.join("transactions.csv");
    assert_eq!(run(&["build-graph", "--input", p(&csv), "--seed", seed, "--out-dir", p(&st)]), 0);
    st
}

fn resolved(dir: &Path) -> ResolvedConfig {
    serde_json::from_slice(&fs::read(dir.join("config.json")).unwrap()).unwrap()
}

#[test]
fn gen_is_reproducible_and_sized() {
    let tmp = TempDir::new().unwrap();
    let args = ["gen", "--n-accounts", "300", "--n-windows", "5", "--tx-per-window", "120", "--seed", "4"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&[&args[..], &["--out-dir", p(&a)]].concat()), 0);
    assert_eq!(run(&[&args[..], &["--out-dir", p(&b)]].concat()), 0);
    let bytes = fs::read(a.join("transactions.csv")).unwrap();
    assert_eq!(bytes, fs::read(b.join("transactions.csv")).unwrap());
    assert_eq!(parse_transactions(bytes.as_slice()).unwrap().len(), 600);
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 601);
    let cfg = resolved(&a);
    assert_eq!((cfg.command.as_str(), cfg.seed), ("gen", 4));
    assert_eq!(cfg.gen.unwrap().tx_per_window, 120);
}

#[test]
fn usage_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(binary(&["gen", "--regime", "sideways", "--out-dir", p(&out)]), 2);
    assert_eq!(binary(&["frobnicate"]), 2);
    assert_eq!(binary(&["train", "--out-dir", p(&out)]), 2);
    assert_eq!(binary(&["sweep", "--store", p(&out), "--param", "depth", "--values", "1"]), 2);
    assert_eq!(binary(&["baseline", "--store", p(&out), "--model", "forest"]), 2);
    assert_eq!(binary(&["--help"]), 0);
}

#[test]
fn runtime_failure_exits_with_1_and_keeps_config() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let missing = tmp.path().join("nowhere");
    assert_eq!(binary(&["train", "--store", p(&missing), "--out-dir", p(&out)]), 1);
    assert_eq!(resolved(&out).command, "train");
}

#[test]
fn bad_config_file_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"depth": 3}}"#).unwrap();
    assert_eq!(binary(&["gen", "--config", p(&cfg), "--out-dir", p(tmp.path())]), 2);
}

#[test]
fn flags_override_file_over_defaults() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 9, "gen": {"n_windows": 5, "tx_per_window": 100, "n_accounts": 250}}"#).unwrap();
    let out = tmp.path().join("g");
    assert_eq!(run(&["gen", "--config", p(&cfg), "--tx-per-window", "80", "--out-dir", p(&out)]), 0);
    let r = resolved(&out);
    let g = r.gen.unwrap();
    assert_eq!((r.seed, g.seed, g.n_windows, g.tx_per_window, g.fraud_rate), (9, 9, 5, 80, 0.02));
}

#[test]
fn jobs_cap_from_environment() {
    assert_eq!(cap_jobs(4, None), 4);
    assert_eq!(cap_jobs(4, Some("2")), 2);
    assert_eq!(cap_jobs(1, Some("8")), 1);
    assert_eq!(cap_jobs(0, None), 1);
    assert_eq!(cap_jobs(3, Some("junk")), 3);
}

#[test]
fn build_graph_on_header_only_input() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("empty.csv");
    fs::write(&csv, "step,type,amount,nameOrig,oldbalanceOrg,newbalanceOrig,nameDest,oldbalanceDest,newbalanceDest,isFraud,isFlaggedFraud\n").unwrap();
    let out = tmp.path().join("store");
    assert_eq!(run(&["build-graph", "--input", p(&csv), "--out-dir", p(&out)]), 0);
    let m = read_manifest(&out).unwrap();
    assert!(m.windows.is_empty() && m.record_counts.is_empty());
}

#[test]
fn build_graph_window_count_and_cap() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    assert_eq!(
        run(&[
            "gen",
            "--n-accounts",
            "300",
            "--n-windows",
            "4",
            "--tx-per-window",
            "100",
            "--seed",
            "2",
            "--out-dir",
            p(&gen)
        ]),
        0
    );
    let csv = gen.join("transactions.csv");
    let recs = parse_transactions(fs::File::open(&csv).unwrap()).unwrap();
    let max_step = recs.iter().map(|r| r.step).max().unwrap();

    let wide = tmp.path().join("wide");
    assert_eq!(
        run(&["build-graph", "--input", p(&csv), "--bin-hours", "24", "--cap", "1000000", "--out-dir", p(&wide)]),
        0
    );
    let m = read_manifest(&wide).unwrap();
    assert_eq!(m.windows.len() as u64, (max_step + 1).div_ceil(24));
    assert_eq!(m.record_counts.iter().sum::<usize>(), recs.len());

    let capped = tmp.path().join("capped");
    assert_eq!(run(&["build-graph", "--input", p(&csv), "--cap", "150", "--out-dir", p(&capped)]), 0);
    let m = read_manifest(&capped).unwrap();
    assert_eq!(m.record_counts.iter().sum::<usize>(), 150);
    assert_eq!(m.windows.len(), 4);
}

#[test]
fn train_run_directory_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let st = store(&tmp, "1");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        assert_eq!(run(&[&["train", "--store", p(&st), "--seed", "3", "--out-dir", p(dir)][..], &FAST].concat()), 0);
    }
    for f in ["config.json", "run_record.json", "report.json", "checkpoints/best.json", "checkpoints/pretrained.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "full");
    assert_eq!(report["seed"], 3);
}

#[test]
fn train_variant_flags() {
    let tmp = TempDir::new().unwrap();
    let st = store(&tmp, "2");
    let nt = tmp.path().join("nt");
    assert_eq!(
        run(&[&["train", "--store", p(&st), "--variant", "no_temporal_attn", "--out-dir", p(&nt)][..], &FAST].concat()),
        0
    );
    let report: serde_json::Value = serde_json::from_slice(&fs::read(nt.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "no_temporal_attn");

    let np = tmp.path().join("np");
    assert_eq!(run(&[&["train", "--store", p(&st), "--no-pretrain", "--out-dir", p(&np)][..], &FAST].concat()), 0);
    assert_eq!(resolved(&np).train.unwrap().variant.tag(), "no_contrastive");
    assert!(!np.join("checkpoints/pretrained.json").exists());

    let clash = tmp.path().join("clash");
    assert_eq!(run(&["train", "--store", p(&st), "--no-pretrain", "--variant", "no_decay", "--out-dir", p(&clash)]), 2);
}

#[test]
fn ablate_sweep_and_baseline_tables() {
    let tmp = TempDir::new().unwrap();
    let st = store(&tmp, "3");

    let ab = tmp.path().join("ab");
    assert_eq!(run(&[&["ablate", "--store", p(&st), "--jobs", "2", "--out-dir", p(&ab)][..], &FAST].concat()), 0);
    let table = fs::read_to_string(ab.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,roc_auc,pr_auc,f_beta,precision,recall,accuracy,threshold,seed");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "Full STC-MixHop",
            "w/o same-step structure",
            "w/o time-decay weighting",
            "w/o temporal attention",
            "w/o contrastive learning"
        ]
    );
    let again = tmp.path().join("ab2");
    assert_eq!(run(&[&["ablate", "--store", p(&st), "--out-dir", p(&again)][..], &FAST].concat()), 0);
    assert_eq!(fs::read_to_string(again.join("ablation.csv")).unwrap(), table);

    let sw = tmp.path().join("sw");
    assert_eq!(
        run(&[&["sweep", "--store", p(&st), "--param", "K", "--values", "1,2,3", "--out-dir", p(&sw)][..], &FAST]
            .concat()),
        0
    );
    let mut rdr = csv::Reader::from_path(sw.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let hash_col = rdr.headers().unwrap().iter().position(|h| h == "split_hash").unwrap();
    assert!(rows.iter().all(|r| r[hash_col] == rows[0][hash_col]));
    assert_eq!(rows.iter().map(|r| r[1].to_string()).collect::<Vec<_>>(), ["1", "2", "3"]);

    let bl = tmp.path().join("bl");
    assert_eq!(run(&["baseline", "--store", p(&st), "--model", "mlp", "--max-epochs", "20", "--out-dir", p(&bl)]), 0);
    let graph: serde_json::Value = serde_json::from_slice(&fs::read(ab.join("full/report.json")).unwrap()).unwrap();
    let tab: serde_json::Value = serde_json::from_slice(&fs::read(bl.join("report.json")).unwrap()).unwrap();
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&graph), keys(&tab));
    assert_eq!(graph["split_hash"], tab["split_hash"]);
    assert_eq!(tab["model"], "mlp");
}
