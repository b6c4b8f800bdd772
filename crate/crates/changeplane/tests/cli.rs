use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use changeplane::io::{read_csv, standardize, Roles};
use changeplane::report::{FitReport, McReportJson};
use changeplane_core::model::predict;
use changeplane_core::{fit_mcpl, McplConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_changeplane"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn simulate(dir: &Path, example: &str, seed: &str) -> String {
    let path = dir.join(format!("ex{example}_{seed}.csv"));
    let out = run(&[
        "simulate",
        "--example",
        example,
        "--seed",
        seed,
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_owned()
}

fn fit(csv: &str, out: &Path, extra: &[&str]) -> (Output, Option<FitReport>) {
    let mut args = vec![
        "fit",
        "--input",
        csv,
        "--y",
        "y",
        "--x",
        "x1,x2,x3,x4,x5",
        "--output",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = run(&args);
    let report = fs::read_to_string(out).ok().map(|t| serde_json::from_str(&t).unwrap());
    (o, report)
}

#[test]
fn simulate_then_fit_recovers_two_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "2", "7");
    let out = dir.path().join("fit.json");
    let (o, report) = fit(&csv, &out, &["--z", "x2,x3,x4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report.unwrap();
    assert_eq!(r.s_hat, 2);
    assert_eq!(r.thresholds.len(), 2);
    assert_eq!(r.theta.len(), 3);
    assert!((r.thresholds[0].estimate + 0.524).abs() < 0.1);
    assert!((r.thresholds[1].estimate - 0.253).abs() < 0.1);
    assert_eq!(r.group_sizes.iter().sum::<usize>(), 300);

    // Labels file next to the report, one row per observation.
    let labels = fs::read_to_string(dir.path().join("fit.labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 301);

    // Same input, same bytes.
    let again = dir.path().join("again.json");
    let (o2, _) = fit(&csv, &again, &["--z", "x2,x3,x4"]);
    assert!(o2.status.success());
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());

    let text = run(&["report", "--input", out.to_str().unwrap()]);
    assert!(text.status.success());
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.starts_with("Multi-threshold change-plane fit: n = 300, p = 6, d = 3, s_hat = 2"));
    assert!(text.contains("Group sizes:"));
}

#[test]
fn one_grouping_column_fixes_the_direction() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "4", "3");
    let out = dir.path().join("fit.json");
    let (o, report) = fit(&csv, &out, &["--z", "x3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report.unwrap();
    assert_eq!(r.d, 1);
    if r.s_hat > 0 {
        assert_eq!(r.theta.len(), 1);
        assert_eq!(r.theta[0].estimate, 1.0);
    }

    let out = dir.path().join("mean.json");
    let (o, report) = fit(&csv, &out, &["--z", "x2,x3,x4", "--equal-weight-z", "--inference"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report.unwrap();
    assert_eq!(r.d, 1);
    if r.s_hat > 0 {
        assert_eq!(r.theta[0].estimate, 1.0);
        // Only the thresholds get standard errors when the direction is fixed.
        assert!(r.thresholds.iter().all(|t| t.se.is_some()));
        assert!(r.theta[0].se.is_none());
    }
}

#[test]
fn single_plane_with_inference() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "1", "5");
    let out = dir.path().join("fit.json");
    let (o, report) = fit(&csv, &out, &["--z", "x1,x2", "--mode", "single", "--inference"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report.unwrap();
    assert_eq!(r.mode, "single");
    assert_eq!(r.theta.len(), 3);
    assert!(r.thresholds.is_empty());
    let inf = r.inference.as_ref().unwrap();
    assert!(inf.df > 0);
    let norm: f64 = r.theta.iter().map(|t| t.estimate * t.estimate).sum::<f64>().sqrt();
    // Reports carry six significant digits.
    assert!((norm - 1.0).abs() < 1e-5);
    assert!(r.theta.iter().all(|t| t.se.is_some()));
}

#[test]
fn standardized_fit_maps_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "2", "11");
    let roles = Roles {
        y: "y".into(),
        x: ["x1", "x2", "x3", "x4", "x5"].map(String::from).to_vec(),
        z: ["x2", "x3", "x4"].map(String::from).to_vec(),
        intercept: true,
    };
    let loaded = read_csv(fs::File::open(&csv).unwrap(), &roles).unwrap();
    let (std_data, scaling) = standardize(&loaded.data, &loaded.x_names, &loaded.z_names).unwrap();
    let fit = fit_mcpl(&std_data, &McplConfig::default()).unwrap();
    assert!(fit.s() > 0);
    let original = scaling.back_map(&fit, &loaded.data).unwrap();
    assert_eq!(original.labels, fit.labels);
    let on_std = predict(&fit, &std_data).unwrap();
    let on_raw = predict(&original, &loaded.data).unwrap();
    for (a, b) in on_std.iter().zip(&on_raw) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "3", "1");
    let out = dir.path().join("fit.json");

    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--example", "9"]).status.code(), Some(1));
    let (o, _) = fit(&csv, &out, &["--z", "x2", "--h", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    let (o, _) = fit(&csv, &out, &["--z", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    let missing = run(&["report", "--input", dir.path().join("none.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,x1,x2\n1,2,abc\n").unwrap();
    let (o, _) = fit(bad.to_str().unwrap(), &out, &["--z", "x2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.cfg");
    let out = dir.path().join("sim.csv");
    fs::write(
        &cfg,
        format!(
            "# simulation\nexample = 3\nn = 40\nseed = 9\noutput = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--n", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // The command line wins over the file.
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 51);
}

#[test]
fn small_monte_carlo_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc.json");
    let csv = dir.path().join("mc.csv");
    let o = bin()
        .args(["mc", "--example", "1", "--replicates", "4", "--seed", "2"])
        .args(["--output", out.to_str().unwrap(), "--csv", csv.to_str().unwrap()])
        .env("CHANGEPLANE_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: McReportJson = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.replicates, 4);
    assert_eq!(r.s_hat_frequencies.iter().sum::<usize>() + r.failures, 4);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("parameter,"));
    let text = run(&["report", "--input", out.to_str().unwrap()]);
    assert!(text.status.success());
    assert!(!text.stdout.is_empty());
}
