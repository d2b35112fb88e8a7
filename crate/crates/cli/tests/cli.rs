use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rbmd::commands::{aggregate_header, rows_header, RunSummary};
use rbmd_core::rb_solver::mde;
use rbmd_core::PortfolioReport;

const THREE_ASSET_SMD: &str = r#"{
  "model": {"builtin": "three_asset"},
  "measure": {"kind": "es", "alpha": 0.95},
  "samples": 5000,
  "optimizers": [
    {"label": "smd", "method": "smd", "epochs": 2,
     "schedule": {"kind": "power_law", "gamma0": 1.0, "beta": 0.75}},
    {"label": "tsgd", "method": "tsgd", "epochs": 2,
     "schedule": {"kind": "power_law", "gamma0": 1.0, "beta": 0.75}},
    {"label": "dmd", "method": "dmd", "iterations": 500,
     "schedule": {"kind": "constant", "gamma0": 1.0}, "record_every": 50}
  ]
}"#;

const SMALL_COMPARE: &str = r#"{
  "model": {"synthetic": {"d": 5, "seed": 11}},
  "measure": {"kind": "es", "alpha": 0.95},
  "samples": 20000,
  "replications": 3,
  "master_seed": 5,
  "optimizers": [
    {"label": "smd", "method": "smd", "init": "risk_scaled",
     "schedule": {"kind": "power_law", "gamma0": 1.0, "beta": 0.65}},
    {"label": "csgd", "method": "csgd", "init": "risk_scaled",
     "schedule": {"kind": "power_law", "gamma0": 50.0, "beta": 0.65}}
  ]
}"#;

fn rbmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbmd")).args(args).output().unwrap()
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = rbmd(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn read<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_header(p: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn csv_records(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let width = r.headers().unwrap().len();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), width);
            rec.iter().map(String::from).collect()
        })
        .collect()
}

#[test]
fn two_asset_volatility_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"inline": {"weight": 1.0, "mu1": [0.0, 0.0],
             "lambda1": [[1.0, 0.6], [0.6, 4.0]], "gaussian1": true}},
            "measure": {"kind": "deviation", "a": 1.0, "b": 1.0, "p": 2}}"#,
    );
    let out = dir.path().join("out");
    run_ok("reference", &cfg, &out, &[]);
    let rep: PortfolioReport = read(&out.join("reference.json"));
    assert!((rep.weights[0] - 2.0 / 3.0).abs() < 1e-6);
    assert!((rep.weights[1] - 1.0 / 3.0).abs() < 1e-6);
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn negative_budget_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"builtin": "three_asset"}, "budget": [-0.5, 1.0, 0.5],
            "measure": {"kind": "es", "alpha": 0.95}}"#,
    );
    let o = rbmd(&["reference", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"builtin": "three_asset"}, "measure": {"kind": "es", "alpha": 0.95},
            "optimizers": [{"label": "a", "method": "dmd", "iterations": 5, "stepsize": 1.0,
            "schedule": {"kind": "constant", "gamma0": 1.0}}]}"#,
    );
    let o = rbmd(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("optimizers[0]") && msg.contains("stepsize"), "{msg}");
}

#[test]
fn zero_threads_is_rejected() {
    let o = rbmd(&[
        "reference",
        "--config",
        repo_config("reference_three_asset.json").to_str().unwrap(),
        "--out",
        tempfile::tempdir().unwrap().path().to_str().unwrap(),
        "--threads",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", THREE_ASSET_SMD);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("run", &cfg, &a, &["--seed", "7"]);
    run_ok("run", &cfg, &b, &["--seed", "7", "--threads", "1"]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let c = dir.path().join("c");
    run_ok("run", &cfg, &c, &["--seed", "8"]);
    assert_ne!(fs::read(a.join("trace_smd.csv")).unwrap(), fs::read(c.join("trace_smd.csv")).unwrap());
}

#[test]
fn run_mde_matches_weight_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", THREE_ASSET_SMD);
    let out = dir.path().join("out");
    run_ok("run", &cfg, &out, &[]);
    let rep: PortfolioReport = read(&out.join("reference.json"));
    let summary: RunSummary = read(&out.join("summary.json"));
    for opt in &summary.optimizers {
        let recomputed = mde(&opt.weights_final, &rep.weights).unwrap();
        assert!((opt.mde_final.unwrap() - recomputed).abs() <= 1e-15, "{}", opt.label);
    }
}

#[test]
fn golden_headers_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", THREE_ASSET_SMD);
    let out = dir.path().join("out");
    run_ok("run", &cfg, &out, &[]);
    for label in ["smd", "tsgd", "dmd"] {
        let p = out.join(format!("trace_{label}.csv"));
        assert_eq!(csv_header(&p), ["iter", "gamma", "gap", "xi", "y_1", "y_2", "y_3"]);
        for rec in csv_records(&p) {
            rec[0].parse::<usize>().unwrap();
            for v in &rec[1..] {
                v.parse::<f64>().unwrap();
            }
        }
    }
    let fig = dir.path().join("fig");
    let fig_cfg = write_config(
        dir.path(),
        "f.json",
        &format!(
            r#"{{"model": {{"builtin": "three_asset"}}, "measure": {{"kind": "es", "alpha": 0.95}},
                "output_dir": {}}}"#,
            serde_json::to_string(&out).unwrap()
        ),
    );
    run_ok("figure-data", &fig_cfg, &fig, &[]);
    assert_eq!(csv_header(&fig.join("figure_data.csv")), ["series", "iter", "value"]);
    assert!(!csv_records(&fig.join("figure_data.csv")).is_empty());

    let rows = [
        "optimizer", "d", "replication", "seed", "gap_k30", "gap_k60", "gap_k90", "gap_final", "mde_k30",
        "mde_k60", "mde_k90", "mde_final", "diverged_0.05", "diverged_0.5", "diverged_5", "diverged_50",
    ];
    assert_eq!(rows_header(), rows);
    let mut agg = vec!["optimizer", "d", "replications", "divergences_0.05", "divergences_0.5", "divergences_5", "divergences_50"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for metric in ["gap", "mde"] {
        for at in ["k30", "k60", "k90", "final"] {
            agg.push(format!("median_{metric}_{at}"));
            agg.push(format!("mad_{metric}_{at}"));
        }
    }
    assert_eq!(aggregate_header(), agg);
}

#[test]
fn dmd_below_reference_norm_does_not_reach_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"builtin": "three_asset"}, "measure": {"kind": "es", "alpha": 0.95},
            "optimizers": [
              {"label": "m10", "method": "dmd", "m": 10, "iterations": 2000,
               "schedule": {"kind": "constant", "gamma0": 1.0}, "record_every": 1},
              {"label": "m35", "method": "dmd", "m": 35, "iterations": 2000,
               "schedule": {"kind": "constant", "gamma0": 1.0}}]}"#,
    );
    let out = dir.path().join("out");
    run_ok("run", &cfg, &out, &[]);
    let summary: RunSummary = read(&out.join("summary.json"));
    let (m10, m35) = (&summary.optimizers[0], &summary.optimizers[1]);
    assert_eq!(m10.reference_reached, Some(false));
    assert!(m10.mde_final.unwrap() > 1e-2);
    assert!(m10.projections > 0);
    assert_eq!(m35.reference_reached, Some(true));
    let reference = summary.reference_weights.unwrap();
    for rec in csv_records(&out.join("trace_m10.csv")) {
        let y: Vec<f64> = rec[4..].iter().map(|v| v.parse().unwrap()).collect();
        let s: f64 = y.iter().sum();
        let u: Vec<f64> = y.iter().map(|v| v / s).collect();
        assert!(mde(&u, &reference).unwrap() > 1e-2, "iteration {}", rec[0]);
    }
}

#[test]
fn full_scale_smd_matches_reference_weights() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = 5;
    let mut mean_w = [0.0; 3];
    let mut mean_var = 0.0;
    for seed in 0..seeds {
        let out = dir.path().join(seed.to_string());
        run_ok("run", &repo_config("smd_full.json"), &out, &["--seed", &seed.to_string()]);
        let summary: RunSummary = read(&out.join("summary.json"));
        let smd = &summary.optimizers[0];
        for (m, w) in mean_w.iter_mut().zip(&smd.weights_final) {
            *m += w / seeds as f64;
        }
        mean_var += smd.var_estimate.unwrap() / seeds as f64;
    }
    let reference = [0.2535, 0.3866, 0.3599];
    let err = mde(&mean_w, &reference).unwrap();
    assert!(err <= 1.5e-3, "MDE {err:e}, weights {mean_w:?}");
    assert!((mean_var - 0.0193).abs() / 0.0193 < 0.02);
}

#[test]
fn compare_is_reproducible_and_counts_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_COMPARE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("compare", &cfg, &a, &[]);
    run_ok("compare", &cfg, &b, &["--threads", "1"]);
    for name in ["compare_aggregate.csv", "compare_rows.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rows = csv_records(&a.join("compare_rows.csv"));
    assert_eq!(rows.len(), 6);
    let agg = csv_records(&a.join("compare_aggregate.csv"));
    let csgd = agg.iter().find(|r| r[0] == "csgd").unwrap();
    let smd = agg.iter().find(|r| r[0] == "smd").unwrap();
    assert!(csgd[3..7].iter().any(|v| v != "0"), "{csgd:?}");
    assert!(smd[3..7].iter().all(|v| v == "0"), "{smd:?}");

    let fig = dir.path().join("fig");
    let missing = rbmd(&["figure-data", "--config", cfg.to_str().unwrap(), "--out", fig.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    let fig_cfg = write_config(
        dir.path(),
        "f.json",
        &SMALL_COMPARE.replacen('{', &format!("{{\"output_dir\": {},", serde_json::to_string(&a).unwrap()), 1),
    );
    run_ok("figure-data", &fig_cfg, &fig, &[]);
    assert!(csv_records(&fig.join("figure_data.csv")).iter().any(|r| r[0] == "smd/d5/gap_final"));
}

#[test]
fn single_replication_aggregate_equals_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &SMALL_COMPARE.replace("\"replications\": 3", "\"replications\": 1"));
    let out = dir.path().join("out");
    run_ok("compare", &cfg, &out, &[]);
    let rows = csv_records(&out.join("compare_rows.csv"));
    let agg = csv_records(&out.join("compare_aggregate.csv"));
    assert_eq!(rows.len(), agg.len());
    for (row, a) in rows.iter().zip(&agg) {
        assert_eq!(row[0], a[0]);
        assert_eq!(a[2], "1");
        for k in 0..4 {
            let flag: bool = row[12 + k].parse().unwrap();
            assert_eq!(a[3 + k], if flag { "1" } else { "0" });
        }
        for k in 0..8 {
            assert_eq!(row[4 + k].parse::<f64>().unwrap(), a[7 + 2 * k].parse::<f64>().unwrap());
            assert_eq!(a[8 + 2 * k].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn figure_data_rejects_missing_and_empty_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"model": {{"builtin": "three_asset"}}, "measure": {{"kind": "es", "alpha": 0.95}}, "output_dir": {}}}"#,
            serde_json::to_string(&missing).unwrap()
        ),
    );
    let o = rbmd(&["figure-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("f").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    fs::create_dir(&missing).unwrap();
    let o = rbmd(&["figure-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("f").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    fs::write(missing.join("trace_x.csv"), "iter,gamma,gap,xi,y_1,y_2\n").unwrap();
    let o = rbmd(&["figure-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("f").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty trace"));
}
