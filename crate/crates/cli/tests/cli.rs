//! End-to-end runs of the `qlasso` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qlasso_cli::config::{resolve_experiment, FileConfig, Preset, SeedSource};
use qlasso_cli::output::{read_curves, read_provenance};
use qlasso_core::experiment::run_curves;
use tempfile::TempDir;

fn qlasso(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qlasso"));
    cmd.current_dir(dir).args(args).env_remove("QLASSO_SEED");
    if let Some(s) = env_seed {
        cmd.env("QLASSO_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"n": 40, "s": 5, "delta": 2, "m_grid": [100, 200, 400], "trials": 12, "seed": 99}"#;

#[test]
fn widths_row_for_n100_s25() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "w.json", r#"{"n": 100, "s": 25, "d": 100, "rank": 5}"#);
    let o = qlasso(dir.path(), &["widths", "--config", "w.json", "--out", "o"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "100,25,10.335"), "{out}");
    assert!(out.lines().any(|l| l == "100,5,54.772"), "{out}");
    let csv = fs::read_to_string(dir.path().join("o/widths_sparse.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "100,25,10.335"));
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let o = qlasso(dir.path(), &["verify", "--out", "v", "--seed", "3"], None);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report = fs::read_to_string(dir.path().join("v/verify_report.txt")).unwrap();
    assert!(report.starts_with("# qlasso master_seed=3 config_hash="));
    assert_eq!(report.matches("[PASS]").count(), 7, "{report}");
    assert!(!report.contains("[FAIL]"));
    assert!(report.contains("E[xi] (literal)") && report.contains("E[eta^2]"));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "unknown.json", "{\n  \"n\": 100,\n  \"sparsity\": 5\n}");
    write(d, "broken.json", "{\"n\": 100,");
    write(d, "invalid.json", r#"{"s": 500}"#);
    write(d, "sweep.json", r#"{"m_grid": [100, 200]}"#);
    let cases: &[&[&str]] = &[
        &["run-uniform", "--config", "unknown.json"],
        &["run-uniform", "--config", "broken.json"],
        &["run-uniform", "--config", "invalid.json"],
        &["run-uniform", "--config", "missing.json"],
        &["delta-sweep", "--config", "sweep.json"],
        &["run-uniform", "--bogus"],
        &["run-uniform", "--jobs", "0"],
        &["no-such-command"],
    ];
    for args in cases {
        let o = qlasso(d, args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = qlasso(d, &["run-uniform", "--config", "unknown.json"], None);
    let err = stderr(&o);
    assert!(err.contains("sparsity") && err.contains("line 3"), "{err}");
    let o = qlasso(d, &["widths"], Some("not-a-number"));
    assert_eq!(o.status.code(), Some(2));
    // Nothing is written when the config is rejected.
    assert!(!d.join("out").exists());
}

#[test]
fn unwritable_output_exits_3() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "blocker", "a file, not a directory");
    let o = qlasso(dir.path(), &["widths", "--out", "blocker/sub"], None);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn seed_precedence_flag_config_env() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "seeded.json", r#"{"seed": 7}"#);
    let seed_of = |args: &[&str], env: Option<&str>, out: &str| {
        let mut full = args.to_vec();
        full.extend(["--out", out]);
        let o = qlasso(d, &full, env);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        read_provenance(&d.join(out).join("widths_sparse.csv"))
            .unwrap()
            .master_seed
    };
    assert_eq!(seed_of(&["widths"], Some("11"), "a"), 11);
    assert_eq!(seed_of(&["widths", "--config", "seeded.json"], Some("11"), "b"), 7);
    assert_eq!(
        seed_of(&["widths", "--config", "seeded.json", "--seed", "5"], Some("11"), "c"),
        5
    );
    assert_eq!(seed_of(&["widths"], None, "d"), 0x5eed);
}

#[test]
fn out_dir_from_config_then_flag() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "c.json", r#"{"out_dir": "from_config"}"#);
    assert_eq!(
        qlasso(d, &["widths", "--config", "c.json"], None).status.code(),
        Some(0)
    );
    assert!(d.join("from_config/manifest.json").exists());
    assert_eq!(
        qlasso(d, &["widths", "--config", "c.json", "--out", "flag"], None)
            .status
            .code(),
        Some(0)
    );
    assert!(d.join("flag/manifest.json").exists());
}

#[test]
fn curve_csv_round_trips_and_matches_library() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "small.json", SMALL);
    let o = qlasso(d, &["run-uniform", "--config", "small.json", "--out", "u"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let file = FileConfig::parse(SMALL).unwrap();
    let expected = run_curves(
        &resolve_experiment(Preset::Uniform, &file, (99, SeedSource::Config))
            .unwrap()
            .experiment,
    )
    .unwrap();
    for curve in &expected {
        let path = d.join(format!("u/uniform_{}.csv", curve.estimator));
        let (prov, parsed) = read_curves(&path).unwrap();
        assert_eq!(prov.master_seed, 99);
        assert_eq!(
            parsed,
            vec![curve.clone()],
            "bitwise round trip for {}",
            curve.estimator
        );
    }
}

#[test]
fn outputs_are_deterministic_and_jobs_independent() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "small.json", SMALL);
    for (out, jobs) in [("a", "1"), ("b", "3")] {
        let o = qlasso(
            d,
            &["run-uniform", "--config", "small.json", "--out", out, "--jobs", jobs],
            None,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in [
        "uniform_glasso.csv",
        "uniform_pbp.csv",
        "uniform_fit.csv",
        "uniform_glasso.svg",
        "uniform_all.svg",
    ] {
        let a = fs::read(d.join("a").join(name)).unwrap();
        let b = fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn every_output_records_seed_and_config_hash() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "small.json", SMALL);
    write(
        d,
        "sweep.json",
        r#"{"n": 40, "s": 5, "delta": [2, 1, 0.5], "m_grid": [200], "trials": 6, "seed": 99}"#,
    );
    let runs: &[&[&str]] = &[
        &["run-uniform", "--config", "small.json", "--out", "o"],
        &["compare", "--config", "small.json", "--out", "o"],
        &["delta-sweep", "--config", "sweep.json", "--out", "o"],
        &["quantize-demo", "--config", "small.json", "--out", "o"],
    ];
    for args in runs {
        let o = qlasso(d, args, None);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("o/manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    let tag = format!("qlasso master_seed=99 config_hash={hash}");
    let mut seen = 0;
    for entry in fs::read_dir(d.join("o")).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let first = text.lines().next().unwrap();
                assert!(first.starts_with("# qlasso master_seed=99 config_hash="), "{name}");
                seen += 1;
            }
            Some("svg") => {
                assert!(text.contains("<!-- qlasso master_seed=99 config_hash="), "{name}");
                assert!(!text.contains("href"), "{name}");
                seen += 1;
            }
            _ => {}
        }
    }
    assert!(seen >= 8, "{seen}");
    // The last run used quantize-demo with small.json.
    let demo = fs::read_to_string(d.join("o/quantize_demo.csv")).unwrap();
    assert!(demo.starts_with(&format!("# {tag}")));
    assert_eq!(manifest["config_path"], "small.json");
    assert_eq!(manifest["master_seed"], 99);
    assert!(manifest["timestamp"].as_str().unwrap().ends_with('Z'));
}

#[test]
fn compare_has_win_rate_column() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "small.json", SMALL);
    let o = qlasso(d, &["compare", "--config", "small.json", "--out", "c"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(d.join("c/compare.csv")).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(
        lines.next().unwrap(),
        "m,estimator,mean_err,std_err,trials,win_rate,seed_hash"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Three grid points with glasso, pbp and dm each.
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| r[1] != "glasso") {
        let w: f64 = r[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&w));
    }
    let paired = fs::read_to_string(d.join("c/compare_paired.csv")).unwrap();
    assert_eq!(paired.lines().nth(1).unwrap(), "m,trial,glasso,pbp,dm");
    assert_eq!(paired.lines().count(), 2 + 3 * 12);
}

#[test]
fn uniform_run_on_reference_config_has_fitted_slope_near_half() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(
        d,
        "fig.json",
        r#"{"n": 100, "s": 25, "norm": 8, "R": 10, "ensemble": "rademacher", "quantizer": "uniform",
            "delta": 3, "m_grid": [200, 400, 700, 1000, 1400, 2000], "trials": 200,
            "estimators": ["glasso", "pbp"]}"#,
    );
    let o = qlasso(d, &["run-uniform", "--config", "fig.json", "--out", "f"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(d.join("f/uniform_fit.csv")).unwrap();
    let row = text
        .lines()
        .find(|l| l.starts_with("glasso,inv_sqrt_m,"))
        .expect("glasso fit row");
    let slope: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
}
