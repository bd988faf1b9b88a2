use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lbgm::data::save_long_csv;
use lbgm::derived::DerivedReport;
use lbgm::simstudy::{generate_dataset, SimulationDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn lbgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbgm")).args(args).output().unwrap()
}

fn small_design(missing_z: &[usize]) -> SimulationDesign {
    let mut d = SimulationDesign::ten_wave_decreasing();
    d.n = 200;
    d.wave_times = (0..6).map(f64::from).collect();
    for o in &mut d.outcomes {
        o.gammas = vec![1.0, 0.8, 0.6, 0.4, 0.2];
    }
    d.outcomes[1].missing_waves = missing_z.to_vec();
    d
}

fn write_inputs(dir: &Path, design: &SimulationDesign, spec: &str) -> (String, String) {
    let g = generate_dataset(design, &mut ChaCha8Rng::seed_from_u64(31)).unwrap();
    let data = dir.join("data.csv");
    save_long_csv(&g.sample, &data).unwrap();
    let spec_path = dir.join("spec.toml");
    fs::write(&spec_path, spec).unwrap();
    (data.to_string_lossy().into(), spec_path.to_string_lossy().into())
}

const PARALLEL_SPEC: &str = "[[outcomes]]\nlabel = \"y\"\nJ = 6\nfixed_interval = 1\n\n\
                             [[outcomes]]\nlabel = \"z\"\nJ = 6\nfixed_interval = 1\n";

#[test]
fn fit_writes_three_tables_and_report_reads_them() {
    let tmp = TempDir::new().unwrap();
    let (data, spec) = write_inputs(tmp.path(), &small_design(&[]), PARALLEL_SPEC);
    let out = tmp.path().join("out");
    let out_s = out.to_string_lossy();
    let res = lbgm(&["fit", "--data", &data, "--spec", &spec, "--out", &out_s]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("status: Converged"));
    for f in ["params.csv", "derived.csv", "trajectory.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let params = fs::read_to_string(out.join("params.csv")).unwrap();
    assert!(params.starts_with("parameter,estimate,se,ci_low,ci_high,pvalue\n"));
    assert!(params.contains("\ncross.psi11,"));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.lines().any(|l| l.starts_with("observed,")));
    assert!(traj.lines().any(|l| l.starts_with("implied,")));

    let rep = lbgm(&["report", "--out", &out_s]);
    assert_eq!(rep.status.code(), Some(0));
    let text = String::from_utf8_lossy(&rep.stdout);
    for needle in ["Mean", "Variance", "Correlation", "Change", "Rate of Interval 5", "Covariance Estimate (SE)"] {
        assert!(text.contains(needle), "{needle}");
    }
}

#[test]
fn missing_outcome_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let spec = "[[outcomes]]\nlabel = \"science\"\nJ = 6\nfixed_interval = 1\n";
    let (data, spec) = write_inputs(tmp.path(), &small_design(&[]), spec);
    let out = tmp.path().join("out");
    let res = lbgm(&["fit", "--data", &data, "--spec", &spec, "--out", &out.to_string_lossy()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("science"));
    assert!(!out.join("params.csv").exists());
}

#[test]
fn unreadable_inputs_exit_with_input_code() {
    let tmp = TempDir::new().unwrap();
    let (_, spec) = write_inputs(tmp.path(), &small_design(&[]), PARALLEL_SPEC);
    let res = lbgm(&["fit", "--data", "/nonexistent.csv", "--spec", &spec]);
    assert_eq!(res.status.code(), Some(1));
    let res = lbgm(&["fit", "--spec", &spec]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn skipped_waves_merge_rate_intervals() {
    let tmp = TempDir::new().unwrap();
    let (data, spec) = write_inputs(tmp.path(), &small_design(&[2, 4]), PARALLEL_SPEC);
    let out = tmp.path().join("out");
    let res = lbgm(&["fit", "--data", &data, "--spec", &spec, "--out", &out.to_string_lossy()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report = DerivedReport::read_csv(fs::File::open(out.join("derived.csv")).unwrap()).unwrap();
    let z_rate = |k: usize| {
        report
            .find("Mean", &format!("Rate of Interval {k}"))
            .unwrap()
            .cells[1]
            .unwrap()
            .estimate
    };
    // z skips waves 2 and 4, so intervals 1-2 and 3-4 share a rate
    assert_eq!(z_rate(1), z_rate(2));
    assert_eq!(z_rate(3), z_rate(4));
    assert_ne!(z_rate(4), z_rate(5));
    let params = fs::read_to_string(out.join("params.csv")).unwrap();
    assert!(params.contains("\nz.gamma3-4,"));
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let mut d = small_design(&[]);
    d.n = 100;
    d.outcomes.truncate(1);
    let design = tmp.path().join("design.toml");
    fs::write(&design, d.to_toml_string()).unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["simulate", "--design", design.to_str().unwrap(), "--reps", "3", "--seed", "7"];
        let out_s = out.to_string_lossy().to_string();
        args.extend(["--out", &out_s]);
        args.extend(extra);
        let res = lbgm(&args);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        assert!(String::from_utf8_lossy(&res.stdout).contains("convergence rate: 1.0000"));
        (
            fs::read(out.join("metrics.csv")).unwrap(),
            fs::read(out.join("replications.csv")).unwrap(),
        )
    };
    let a = run("a", &[]);
    let b = run("b", &["--serial"]);
    assert_eq!(a, b);
    let metrics = String::from_utf8(a.0).unwrap();
    assert!(metrics.starts_with("parameter,truth,relative_bias,empirical_se,relative_rmse,coverage\n"));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = TempDir::new().unwrap();
    let (data, spec) = write_inputs(tmp.path(), &small_design(&[]), PARALLEL_SPEC);
    let out = tmp.path().join("from-config");
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, format!("out = {:?}\nretries = 2\n", out.to_string_lossy())).unwrap();
    let res = lbgm(&["fit", "--data", &data, "--spec", &spec, "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    assert!(out.join("params.csv").exists());

    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let res = lbgm(&["fit", "--data", &data, "--spec", &spec, "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn sentinel_values_are_dropped() {
    let tmp = TempDir::new().unwrap();
    let (data, spec) = write_inputs(tmp.path(), &small_design(&[]), PARALLEL_SPEC);
    // recode the value of the final row as a sentinel
    let text = fs::read_to_string(&data).unwrap();
    let last = text.trim_end().rsplit_once('\n').unwrap().1.to_string();
    let (head, _) = last.rsplit_once(',').unwrap();
    let text = text.replace(&last, &format!("{head},-9"));
    fs::write(&data, text).unwrap();
    let out = tmp.path().join("out");
    let res = lbgm(&[
        "fit",
        "--data",
        &data,
        "--spec",
        &spec,
        "--drop-values=-9",
        "--out",
        &out.to_string_lossy(),
    ]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("rows dropped as missing: 1"), "{stdout}");
}

#[test]
fn report_marks_unavailable_and_missing_cells() {
    use lbgm::cli::render_report;
    use lbgm::derived::{DerivedValue, ReportRow};
    let report = DerivedReport {
        outcomes: vec!["y".into(), "z".into()],
        has_cross: true,
        rows: vec![
            ReportRow {
                panel: "Mean".into(),
                quantity: "Initial Status".into(),
                cells: vec![
                    Some(DerivedValue::from_gradient(50.0, &nalgebra::DVector::from_vec(vec![1.0]), None)),
                    Some(DerivedValue {
                        estimate: 30.0,
                        se: Some(1.0),
                        pvalue: Some(0.01),
                    }),
                    None,
                ],
            },
        ],
    };
    let text = render_report(&report);
    let line = text.lines().find(|l| l.starts_with("Initial Status")).unwrap();
    assert!(line.contains("50.000 (unavailable)"));
    assert!(line.contains("30.000 (1.000)"));
    assert!(line.contains("0.0100*"));
    assert!(line.trim_end().ends_with("---"));
}
