//! End-to-end checks of the `rme` binary: the generate -> train -> evaluate
//! -> report pipeline on a tiny synthetic campaign, plus the byte-level
//! reproducibility contract across thread counts.

use std::path::Path;
use std::process::{Command, Output};

fn rme(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rme"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn rme")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const CONFIG: &str = "\
seed = 3

[generate]
n_sets = 2
region_x_m = 14.4
region_y_m = 14.4
grid_spacing_m = 1.2
line_spacing_m = 2.4
along_spacing_m = 0.6

[propagation]
tx_power_plus_gain_db = 10
tx_x_m = -30
tx_y_m = 7.2
path_loss_exponent = 2.5
shadow_variance_db2 = 0.26
shadow_half_distance_m = 6
fading = off
noise_std_db = 0.5
wavelength_m = 0.3266

[quantize]
input = data/set_000.csv
mode = db_mean

[train]
estimator = knn
inputs = data
patch_side_m = 9.6
n_patches = 4
n_obs_lo = 5
n_obs_hi = 15
split_budget = 8

[search]
knn_k = 2, 3
kriging_var = 0.26
kriging_halfdist = 6, 12
kriging_noise_var = 0.25
krr_reg = 0.001
krr_widths = 30

[evaluate]
inputs = data
params = model/params.txt
metrics = rmse, rmse_grid_all
n_obs = 5, 10
patch_side_m = 9.6
iterations = 10
";

#[test]
fn pipeline_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.cfg"), CONFIG).unwrap();

    let out = rme(&["--config", "run.cfg", "--out", "data", "generate"], dir);
    assert_ok(&out, "generate");
    assert!(dir.join("data/set_000.csv").exists());
    assert!(dir.join("data/set_001.csv.meta").exists());

    let out = rme(&["--config", "run.cfg", "--out", "q", "quantize"], dir);
    assert_ok(&out, "quantize");
    let quantized = std::fs::read_to_string(dir.join("q/quantized.csv")).unwrap();
    assert!(quantized.starts_with("row,col,value_db,mask\n"));

    let out = rme(&["--config", "run.cfg", "--out", "model", "train"], dir);
    assert_ok(&out, "train");
    let params = std::fs::read_to_string(dir.join("model/params.txt")).unwrap();
    assert!(params.contains("kind = knn"), "params:\n{params}");

    // Same seed, different thread counts, different output dirs: the report
    // bytes must be identical. --check-seed additionally reruns in-process.
    let out = rme(
        &[
            "--config",
            "run.cfg",
            "--out",
            "r1",
            "--threads",
            "1",
            "evaluate",
            "--check-seed",
        ],
        dir,
    );
    assert_ok(&out, "evaluate (1 thread)");
    let out = rme(
        &[
            "--config", "run.cfg", "--out", "r4", "--threads", "4", "evaluate",
        ],
        dir,
    );
    assert_ok(&out, "evaluate (4 threads)");
    let r1 = std::fs::read(dir.join("r1/report.csv")).unwrap();
    let r4 = std::fs::read(dir.join("r4/report.csv")).unwrap();
    assert_eq!(r1, r4, "reports differ across thread counts");

    // A different seed must change the report (the sweep is seed-driven).
    let out = rme(
        &[
            "--config", "run.cfg", "--seed", "4", "--out", "r5", "evaluate",
        ],
        dir,
    );
    assert_ok(&out, "evaluate (seed 4)");
    let r5 = std::fs::read(dir.join("r5/report.csv")).unwrap();
    assert_ne!(r1, r5, "different seeds produced identical reports");

    let out = rme(
        &[
            "--out",
            "merged",
            "report",
            "r1/report.csv",
            "r5/report.csv",
        ],
        dir,
    );
    assert_ok(&out, "report");
    let merged = std::fs::read_to_string(dir.join("merged/merged.csv")).unwrap();
    assert!(merged.starts_with("estimator,metric,"));
    assert_eq!(merged.lines().count(), 9, "2 reports x 4 rows + header");
    assert!(dir.join("merged/summary.txt").exists());
}

#[test]
fn missing_params_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("bad.cfg"),
        "[evaluate]\ninputs = nowhere\nparams = nope.txt\nmetrics = rmse\nn_obs = 5\n",
    )
    .unwrap();
    let out = rme(&["--config", "bad.cfg", "evaluate"], dir);
    assert!(!out.status.success(), "evaluate should fail");
    assert!(
        !String::from_utf8_lossy(&out.stderr).is_empty(),
        "expected an error message on stderr"
    );
}
