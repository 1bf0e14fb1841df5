//! Black-box tests of the experiment runner binary: exit codes, artifact
//! schemas and byte-level determinism.

use std::path::Path;
use std::process::Command;

fn geodlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geodlab"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const CYLINDER_CENSUS: &str = r#"
[manifold]
variant = "flat-cylinder"
circumference = 1.0

[endpoints]
p = [0.25, 0.8]
q = [0.25, 0.8]

[scenario]
kind = "census"
length_max = 8.0
seed = 11
"#;

#[test]
fn census_on_the_cylinder_counts_one_image() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CYLINDER_CENSUS);
    let out = dir.path().join("run");
    let status = geodlab()
        .args(["census", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let growth = std::fs::read_to_string(out.join("growth.csv")).unwrap();
    for line in growth.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let ell: f64 = cols[0].parse().unwrap();
        let n: u64 = cols[2].parse().unwrap();
        if ell >= 1.0 {
            assert_eq!(n, 1, "distinct count at l = {ell}");
        }
    }
    assert!(out.join("geodesics.db").exists());
    assert!(out.join("fit_report.txt").exists());
    assert!(out.join("plot_growth.py").exists());
}

#[test]
fn invalid_drift_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[manifold]
variant = "flat-torus"
drift = [0.8, 0.7]

[endpoints]
p = [0.0, 0.0]
q = [0.5, 0.5]
"#,
    );
    let out = dir.path().join("run");
    let status = geodlab()
        .args(["census", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn scenario_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CYLINDER_CENSUS);
    let out = dir.path().join("run");
    let status = geodlab()
        .args(["group-growth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn identical_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[manifold]
variant = "flat-torus"
drift = [0.3, 0.1]

[endpoints]
p = [0.0, 0.0]
q = [0.29, 0.41]

[scenario]
kind = "solve-classes"
class_min = -2
class_max = 2
seed = 5
"#,
    );
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let status = geodlab()
            .args(["solve-classes", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((
            std::fs::read(out.join("geodesics.db")).unwrap(),
            std::fs::read(out.join("solve_report.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "database differs across runs");
    assert_eq!(outputs[0].1, outputs[1].1, "report differs across runs");
}

#[test]
fn group_growth_writes_exact_ball_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[manifold]
variant = "flat-torus"
drift = [0.0, 0.0]

[endpoints]
p = [0.0, 0.0]
q = [0.5, 0.5]

[scenario]
kind = "group-growth"

[group]
kind = "free-abelian"
rank = 2
max_radius = 32
"#,
    );
    let out = dir.path().join("run");
    let status = geodlab()
        .args(["group-growth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let balls = std::fs::read_to_string(out.join("balls.csv")).unwrap();
    for line in balls.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let r: u64 = cols[0].parse().unwrap();
        let c: u64 = cols[1].parse().unwrap();
        assert_eq!(c, 2 * r * r + 2 * r + 1);
    }
}

#[test]
fn minmax_scan_produces_certified_saddle_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[manifold]
variant = "circle-times-sphere"
circumference = 1.0

[endpoints]
p = [0.0, 0.0, 0.0, 1.0]
q = [0.0, 1.0, 0.0, 0.0]

[scenario]
kind = "minmax-scan"
class_min = 0
class_max = 0
n_s = 64
tol = 1e-7
max_iter = 20000
seed = 3
"#,
    );
    let out = dir.path().join("run");
    let output = geodlab()
        .args(["minmax-scan", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    let sandwich = std::fs::read_to_string(out.join("sandwich.csv")).unwrap();
    let row: Vec<&str> = sandwich.lines().nth(1).unwrap().split(',').collect();
    let tau_critical: f64 = row[3].parse().unwrap();
    let certified: bool = row[5].parse().unwrap();
    let analytic = (2.0 * std::f64::consts::PI - std::f64::consts::FRAC_PI_2).powi(2);
    assert!((tau_critical - analytic).abs() / analytic < 0.02);
    assert!(certified);
    let trace = std::fs::read_to_string(out.join("minmax_trace_m0.csv")).unwrap();
    let mut last = f64::INFINITY;
    for line in trace.lines().skip(1) {
        let max_energy: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(max_energy <= last + 1e-9, "trace must be non-increasing");
        last = max_energy;
    }
}
