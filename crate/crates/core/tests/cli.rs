use std::path::Path;
use std::process::{Command, Output};

use cirlab::bounds::EstimateWithError;
use cirlab::model::CirParams;
use cirlab::simulate::PathEnsemble;

fn cirlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cirlab")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let o = cirlab(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(cirlab(&["--help"]).status.code(), Some(0));
    for sub in ["simulate", "density", "moments", "bounds", "estimate", "instability", "limit"] {
        let o = cirlab(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        let text = String::from_utf8(o.stdout).unwrap();
        for flag in ["--seed", "--workers", "--out", "--config"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
}

#[test]
fn invalid_input_exits_two_and_names_the_flag() {
    let o = cirlab(&["simulate", "--pathz", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--pathz"));
    let o = cirlab(&["simulate", "--paths", "many"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--paths"));
    for args in [
        &["simulate", "--sigma", "-1"][..],
        &["simulate", "--steps", "0"],
        &["density", "--b", "0", "--kind", "stationary"],
        &["bounds", "--steps", "100", "--output-points", "64"],
        &["instability", "--process", "cir", "--b", "0"],
        &["--workers", "0", "moments"],
    ] {
        assert_eq!(cirlab(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(cirlab(&["estimate", "--input", path_str(&missing)]).status.code(), Some(1));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,value\n0,1\n1,2\n").unwrap();
    assert_eq!(cirlab(&["estimate", "--input", path_str(&bad)]).status.code(), Some(1));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "steps = 4\npaths = 3\nt_end = 2\n").unwrap();
    let out = dir.path().join("p.csv");
    run_ok(&["--config", path_str(&cfg), "simulate", "--paths", "5", "--out", path_str(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0].split(',').count(), 5);
    assert!(lines[0].ends_with(",2.0000000000000000e0"));

    std::fs::write(&cfg, "stepz = 4\n").unwrap();
    let o = cirlab(&["--config", path_str(&cfg), "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));
}

#[test]
fn simulate_defaults_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o = run_ok(&["simulate", "--out", path_str(&a)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed: 1"));
    run_ok(&["simulate", "--out", path_str(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    let header: Vec<f64> = text.lines().next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(header.len(), 101);
    for (k, t) in header.iter().enumerate() {
        assert!((t - k as f64 / 100.0).abs() < 1e-15);
    }

    let bin = dir.path().join("a.bin");
    run_ok(&["simulate", "--format", "binary", "--out", path_str(&bin)]);
    let e = PathEnsemble::read_binary(std::fs::File::open(&bin).unwrap()).unwrap();
    let c = PathEnsemble::read_csv(text.as_bytes(), e.params_tag.clone(), e.seed).unwrap();
    assert_eq!(e, c);
}

#[test]
fn simulated_means_follow_moments() {
    let dir = tempfile::tempdir().unwrap();
    for b in ["0", "1"] {
        let out = dir.path().join(format!("b{b}.bin"));
        run_ok(&[
            "simulate", "--b", b, "--paths", "4000", "--steps", "10", "--format", "binary", "--out",
            path_str(&out),
        ]);
        let e = PathEnsemble::read_binary(std::fs::File::open(&out).unwrap()).unwrap();
        let p = CirParams::new(1.0, 2.0, b.parse().unwrap(), 1.0).unwrap();
        for j in 1..e.n_times() {
            let est = EstimateWithError::from_samples(e.column(j)).unwrap();
            let exact = p.moment(e.times()[j], 1).unwrap();
            assert!((est.mean - exact).abs() < 4.0 * est.stderr, "b={b} j={j}");
        }
    }
}

#[test]
fn density_table_and_csv() {
    let o = run_ok(&["density", "--points", "4"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("integral over (0, inf): 1.00000"));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    run_ok(&["density", "--kind", "stationary", "--out", path_str(&out)]);
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("x,density\n"));
}

#[test]
fn bounds_pass_by_default_and_trivially_for_equal_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    run_ok(&["bounds", "--paths", "500", "--steps", "256", "--output-points", "16", "--out", path_str(&out)]);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let reports = doc["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 12);
    assert!(reports.iter().all(|r| r["report"]["pass"] == true));

    let o = run_ok(&["bounds", "--b0", "0.3", "--bn", "0.3", "--paths", "50", "--steps", "64", "--output-points", "8"]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for r in doc["reports"].as_array().unwrap() {
        assert_eq!(r["report"]["pass"], true);
        assert!(r["report"]["empirical"].as_array().unwrap().iter().all(|e| e["mean"] == 0.0));
    }
}

#[test]
fn estimate_from_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("traj.csv");
    let mut text = String::from("t,value\n");
    for k in 0..=1000 {
        let t = k as f64 / 100.0;
        text.push_str(&format!("{t},{}\n", 1.0 + 2.0 * t + 0.1 * (k % 2) as f64));
    }
    std::fs::write(&input, text).unwrap();
    let o = run_ok(&["estimate", "--input", path_str(&input), "--sigma-known", "1"]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["n"], 1000);
    assert_eq!(doc["T"], 10.0);
    for key in ["sigma2", "theta", "a"] {
        assert!(doc[key].as_f64().unwrap().is_finite());
    }
}

#[test]
fn instability_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("occ.csv");
    run_ok(&["instability", "--level", "1e9", "--paths", "20", "--points", "50", "--out", path_str(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "time,occupancy,stderr,level,seed,params");
    for line in lines {
        assert_eq!(line.split(',').nth(1).unwrap().parse::<f64>().unwrap(), 1.0);
    }

    let o = run_ok(&["limit", "--t-end", "50", "--points", "40", "--paths", "100"]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["n"], 100);
    assert!(doc["statistic"].as_f64().unwrap() < 1.0);
}
