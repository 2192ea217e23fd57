//! End-to-end tests of the `linphase` binary: file formats, exit codes,
//! determinism, and agreement with the library on small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_linphase")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run_cmd(subcommand: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(bin())
        .arg(subcommand)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("spawn linphase")
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect()
}

const D1_CONFIG: &str = r#"
depth = 1
width = 1
seed = 3

[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0
seed = 0

[grid]
min = 0.25
max = 0.75
count = 21

[bgrid]
min = -1.0
max = 1.0
count = 41
"#;

#[test]
fn landscape_table_matches_minimizer_and_is_even() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), D1_CONFIG);
    let out = tmp.path().join("out");
    let output = run_cmd("landscape", &config, &out, &[]);
    assert!(output.status.success(), "{output:?}");

    let text = fs::read_to_string(out.join("landscape.csv")).unwrap();
    assert!(text.starts_with("gamma,b,loss\n"));
    let rows: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1], f[2])
        })
        .collect();
    assert_eq!(rows.len(), 21 * 41);

    // Even in b: mirrored grid values agree.
    for chunk in rows.chunks(41) {
        for k in 0..41 {
            let (_, b1, l1) = chunk[k];
            let (_, b2, l2) = chunk[40 - k];
            assert!((b1 + b2).abs() < 1e-12);
            assert!((l1 - l2).abs() < 1e-12 * (1.0 + l1.abs()));
        }
    }

    // Column-wise argmin traces the 1-D minimizer b^2 = 0.5 - gamma.
    for chunk in rows.chunks(41) {
        let gamma = chunk[0].0;
        let (mut best_b, mut best_l) = (0.0, f64::INFINITY);
        for &(_, b, l) in chunk {
            if l < best_l {
                best_l = l;
                best_b = b;
            }
        }
        let expect = (0.5f64 - gamma).max(0.0).sqrt();
        assert!(
            (best_b.abs() - expect).abs() <= 0.05,
            "gamma={gamma}: argmin {best_b} vs {expect}"
        );
    }

    assert!(out.join("manifest.json").exists());
}

#[test]
fn landscape_depth2_origin_is_local_minimum() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 2
width = 2
noise_var = 0.5

[data.synthetic]
eigvals = [1.0, 0.5]
signal = [0.6, 0.3]
y2 = 1.0
seed = 3

[grid]
min = 0.05
max = 0.3
count = 9

[bgrid]
min = -0.4
max = 0.4
count = 81
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("landscape", &config, &out, &[]);
    assert!(output.status.success());
    let rows = read_csv_rows(&out.join("landscape.csv"));
    // b = 0 sits at index 40 of each 81-value column; the discrete second
    // difference there must be positive in every gamma column. The b step
    // must resolve the trivial basin, whose width shrinks with gamma.
    for chunk in rows.chunks(81) {
        let loss = |i: usize| -> f64 { chunk[i][2].parse().unwrap() };
        let second_diff = loss(41) - 2.0 * loss(40) + loss(39);
        assert!(second_diff > 0.0, "gamma column {:?}", chunk[0][0]);
    }
}

#[test]
fn classify_depth1_reports_second_order_with_flagged_closed_form() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), D1_CONFIG);
    let out = tmp.path().join("out");
    let output = run_cmd("classify", &config, &out, &[]);
    assert!(output.status.success(), "{output:?}");

    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("gamma,loss,b_star,reg_term,d1,d2\n"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("transition.json")).unwrap()).unwrap();
    assert_eq!(report["order"], "second");
    let gamma_star = report["gamma_star"].as_f64().unwrap();
    assert!((gamma_star - 0.5).abs() <= 0.005, "gamma* {gamma_star}");
    // The claimed closed form (-1) rides along with a discrepancy flag; the
    // numerical left second derivative is about -2.
    assert!((report["paper_d2_left"].as_f64().unwrap() + 1.0).abs() < 1e-9);
    assert_eq!(report["paper_d2_discrepancy"], true);
    let d2_left = report["d2_left"].as_f64().unwrap();
    assert!((d2_left + 2.0).abs() < 0.1, "d2_left {d2_left}");
}

#[test]
fn classify_depth0_reports_none() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 0

[data.synthetic]
eigvals = [1.0, 1.0]
signal = [1.0, 0.0]
y2 = 2.0
seed = 4

[grid]
min = 0.1
max = 2.0
count = 15
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("classify", &config, &out, &[]);
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("transition.json")).unwrap()).unwrap();
    assert_eq!(report["order"], "none");
    assert!(report["gamma_star"].is_null());
}

#[test]
fn train_is_byte_identical_across_reruns() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 2
width = 2
noise_var = 0.5
gamma = 0.1

[data.synthetic]
eigvals = [1.0, 0.5]
signal = [0.6, 0.3]
y2 = 1.0
seed = 3

[trainer]
step_size = 5e-3
noise_temp = 1e-4
steps = 2000
init_scale = 0.0
seed = 11
record_every = 10
"#,
    );
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let run_a = run_cmd("train", &config, &out_a, &[]);
    let run_b = run_cmd("train", &config, &out_b, &[]);
    assert!(run_a.status.success() && run_b.status.success());

    let traj_a = fs::read(out_a.join("trajectory.csv")).unwrap();
    let traj_b = fs::read(out_b.join("trajectory.csv")).unwrap();
    assert_eq!(traj_a, traj_b);
    assert!(traj_a.starts_with(b"step,loss,b,b_corrected\n"));

    // The manifest embeds the resolved output directory, so byte identity
    // is checked on a rerun into the same directory.
    let man_first = fs::read(out_a.join("manifest.json")).unwrap();
    let rerun = run_cmd("train", &config, &out_a, &[]);
    assert!(rerun.status.success());
    let man_second = fs::read(out_a.join("manifest.json")).unwrap();
    assert_eq!(man_first, man_second);
    assert_eq!(traj_a, fs::read(out_a.join("trajectory.csv")).unwrap());
}

#[test]
fn verify_passes_on_depth1_instance() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 1
width = 1
n_starts = 8

[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0
seed = 0

[grid]
min = 0.05
max = 0.95
count = 10
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("verify", &config, &out, &[]);
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("equivalence.json")).unwrap()).unwrap();
    assert_eq!(report["violations"], 0);
}

#[test]
fn verify_failure_exits_3_after_writing_report() {
    // A single tiny-scale start at depth 2 falls into the trivial basin
    // while the landscape engine finds the feature minimum: a genuine
    // equivalence violation, exit code 3.
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 2
width = 2
noise_var = 0.5
n_starts = 1

[data.synthetic]
eigvals = [1.0, 0.5]
signal = [0.6, 0.3]
y2 = 1.0
seed = 3

[grid]
min = 0.05
max = 0.12
count = 4
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("verify", &config, &out, &[]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("equivalence.json")).unwrap()).unwrap();
    assert!(report["violations"].as_u64().unwrap() > 0);
}

#[test]
fn depthscan_column_is_monotone() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 1
width = 4
noise_var = 1.0
gamma = 0.1
depths = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]

[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0
seed = 0
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("depthscan", &config, &out, &[]);
    assert!(output.status.success(), "{output:?}");
    let text = fs::read_to_string(out.join("depthscan.csv")).unwrap();
    assert!(text.starts_with("depth,loss\n"));
    let losses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 12);
    for pair in losses.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-12);
    }
}

#[test]
fn csv_data_spec_feeds_ridge_sweep() {
    let tmp = TempDir::new().unwrap();
    let csv_path = tmp.path().join("samples.csv");
    fs::write(&csv_path, "x_1,x_2,y\n1.0,0.0,2.0\n0.0,1.0,0.0\n").unwrap();
    let config = write_config(
        tmp.path(),
        &format!(
            r#"
depth = 0

[data.csv]
path = "{}"

[grid]
min = 0.25
max = 2.25
count = 9
"#,
            csv_path.display()
        ),
    );
    let out = tmp.path().join("out");
    let output = run_cmd("sweep", &config, &out, &[]);
    assert!(output.status.success(), "{output:?}");
    // cov = I/2, xy = (1,0), y2 = 2: L(gamma) = 2 - 1/(0.5+gamma).
    let rows = read_csv_rows(&out.join("sweep.csv"));
    for row in rows {
        let gamma: f64 = row[0].parse().unwrap();
        let loss: f64 = row[1].parse().unwrap();
        let expect = 2.0 - 1.0 / (0.5 + gamma);
        assert!((loss - expect).abs() < 1e-10, "gamma={gamma}");
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    // Missing required depth.
    let config = write_config(
        tmp.path(),
        r#"
[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("sweep", &config, &out, &[]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    // Engine/depth mismatch.
    let config2 = write_config(
        tmp.path(),
        r#"
depth = 1
engine = "ridge"

[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0

[grid]
min = 0.1
max = 0.9
count = 9
"#,
    );
    let output2 = run_cmd("sweep", &config2, &out, &[]);
    assert_eq!(output2.status.code(), Some(2), "{output2:?}");

    // Grid too small for a sweep command.
    let config3 = write_config(
        tmp.path(),
        r#"
depth = 1

[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0

[grid]
min = 0.1
max = 0.9
count = 5
"#,
    );
    let output3 = run_cmd("sweep", &config3, &out, &[]);
    assert_eq!(output3.status.code(), Some(2), "{output3:?}");
}

#[test]
fn divergent_training_exits_4_with_trajectory() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
depth = 1
width = 1
gamma = 0.2

[data.synthetic]
eigvals = [1.0]
signal = [0.5]
y2 = 1.0
seed = 0

[trainer]
step_size = 10.0
steps = 2000
init_scale = 1.0
seed = 2
record_every = 10
"#,
    );
    let out = tmp.path().join("out");
    let output = run_cmd("train", &config, &out, &[]);
    assert_eq!(output.status.code(), Some(4), "{output:?}");
    // The partial trajectory is still written for post-mortem use.
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn seed_override_lands_in_manifest() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), D1_CONFIG);
    let out = tmp.path().join("out");
    let output = run_cmd("sweep", &config, &out, &["--seed", "99"]);
    assert!(output.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["command"], "sweep");
    assert_eq!(manifest["outputs"][0], "sweep.csv");
}
