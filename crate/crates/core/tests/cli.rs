use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npcure::bootstrap::log_grid;
use npcure::cure::latency_estimate;
use npcure::kernel::Kernel;
use npcure::survival::{CensoredSample, Record};

/// Runs the binary in `dir` with a whitespace-separated command line.
fn npcure(dir: &Path, line: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npcure"))
        .current_dir(dir)
        .env_remove("NPCURE_OUT_DIR")
        .args(line.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, line: &str) {
    let out = npcure(dir, line);
    assert!(out.status.success(), "{line}: {}", String::from_utf8_lossy(&out.stderr));
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn num(rec: &csv::StringRecord, i: usize) -> f64 {
    rec[i].parse().unwrap()
}

fn meta(path: &Path) -> serde_json::Value {
    let mut name = path.file_name().unwrap().to_os_string();
    name.push(".meta.json");
    serde_json::from_slice(&fs::read(path.with_file_name(name)).unwrap()).unwrap()
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, "simulate --model 1 --n 1000 --seed 7 --out a.csv --threads 1");
    ok(d, "simulate --model 1 --n 1000 --seed 7 --out b.csv --threads 4");
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
    assert_eq!(meta(&d.join("a.csv")), meta(&d.join("b.csv")));
    assert_eq!(rows(&d.join("a.csv")).len(), 1000);
}

#[test]
fn missing_input_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = npcure(dir.path(), "estimate --input absent.csv --x 1 --out e.csv");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn configuration_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{"modle": 2}"#).unwrap();
    let out = npcure(d, "simulate --config cfg.json");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));

    let out = npcure(d, "mise --grid 5:100");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));

    let out = npcure(d, "simulate --model 3");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_have_their_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // No covariate density outside [-20, 20].
    let out = npcure(dir.path(), "oracle --x 30 --h 10");
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn estimate_matches_the_library_on_a_toy_sample() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("toy.csv"), "x,t,delta\n0,1,1\n1,2,0\n").unwrap();
    ok(d, "estimate --input toy.csv --x 0.5 --h 2 --time-points 7 --out e.csv");

    let sample = CensoredSample::new(vec![Record::new(0.0, 1.0, true), Record::new(1.0, 2.0, false)]).unwrap();
    let fit = latency_estimate(&sample, 0.5, 2.0, Kernel::Epanechnikov).unwrap();
    let out = rows(&d.join("e.csv"));
    assert_eq!(out.len(), 7);
    for (k, rec) in out.iter().enumerate() {
        let t = k as f64 / 6.0;
        assert_eq!(num(rec, 0), 0.5);
        assert_eq!(num(rec, 1), 2.0);
        assert_eq!(num(rec, 2), fit.incidence);
        assert!((num(rec, 3) - t).abs() < 1e-15);
        assert_eq!(num(rec, 4), fit.latency.eval(num(rec, 3)));
    }
}

#[test]
fn estimate_three_ages_within_a_stage_group() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, "synth-data --seed 1 --out registry.csv");
    ok(
        d,
        "estimate --input registry.csv --covariate-col age --time-col time --group-col stage --group 1,2 --x 35 --x 50 --x 80 --B 20 --grid 10:80:6 --out fig.csv",
    );
    let out = rows(&d.join("fig.csv"));
    assert_eq!(out.len(), 3 * 200);
    for (i, age) in [35.0, 50.0, 80.0].into_iter().enumerate() {
        let curve = &out[i * 200..(i + 1) * 200];
        assert!(curve.iter().all(|r| num(r, 0) == age));
        assert_eq!(num(&curve[0], 4), 1.0);
        assert!(curve.windows(2).all(|w| num(&w[1], 4) <= num(&w[0], 4)));
    }
    let m = meta(&d.join("fig.csv"));
    assert_eq!(m["details"]["ingest"]["rows_kept"], 229);
}

#[test]
fn selectbw_picks_from_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, "simulate --model 1 --n 100 --seed 3 --out sim.csv");
    ok(d, "selectbw --input sim.csv --x 5 --B 30 --grid 5:100:9 --out sel.csv");
    let grid = log_grid(5.0, 100.0, 9).unwrap();
    let out = rows(&d.join("sel.csv"));
    assert_eq!(out.len(), 9);
    let chosen: Vec<f64> = out.iter().filter(|r| &r[4] == "1").map(|r| num(r, 1)).collect();
    assert_eq!(chosen.len(), 1);
    assert!(grid.values().contains(&chosen[0]));
    assert_eq!(meta(&d.join("sel.csv"))["details"]["selected"][0]["h"], chosen[0]);
}

#[test]
fn oracle_rows_recompose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, "oracle --model 1 --t 1 --x 5 --h 10 --n 100 --out o.csv");
    let out = rows(&d.join("o.csv"));
    assert_eq!(out.len(), 1);
    let r = &out[0];
    assert_eq!(num(r, 11), num(r, 9) + num(r, 10));
    let d_k = 0.2f64;
    let c_k = 0.6f64;
    let bias = 10f64.powi(4) / 4.0 * d_k * d_k * (num(r, 4) - num(r, 5)).powi(2);
    let variance = c_k / (100.0 * 10.0) * (num(r, 6) + num(r, 7) - 2.0 * num(r, 8));
    assert!((bias - num(r, 9)).abs() <= 1e-12 * num(r, 9));
    assert!((variance - num(r, 10)).abs() <= 1e-12 * num(r, 10));
}

#[test]
fn sidecar_config_reproduces_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        "mise --mode two-bw --n 40 --m 5 --grid 5:50:3 --seed 11 --out first.csv",
    );
    let config = meta(&d.join("first.csv"))["config"].clone();
    fs::write(d.join("replay.json"), serde_json::to_vec(&config).unwrap()).unwrap();
    ok(d, "mise --config replay.json --out second.csv");
    assert_eq!(
        fs::read(d.join("first.csv")).unwrap(),
        fs::read(d.join("second.csv")).unwrap()
    );
    assert_eq!(rows(&d.join("first.csv")).len(), 9);
}

#[test]
fn default_output_location_follows_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target: PathBuf = dir.path().join("results");
    let out = Command::new(env!("CARGO_BIN_EXE_npcure"))
        .current_dir(dir.path())
        .env("NPCURE_OUT_DIR", &target)
        .args(["synth-data", "--seed", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(rows(&target.join("synth-data.csv")).len(), 414);
    assert!(target.join("synth-data.csv.meta.json").exists());
}
