//! End-to-end tests through the compiled binary: exit codes, report files,
//! determinism across thread counts, and the shipped example configs.

use gfsim::config::RunConfig;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gfsim"))
}

fn examples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn gfsim");
    assert!(
        out.status.success(),
        "gfsim {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn shipped_examples_validate_and_round_trip() {
    let mut seen = 0;
    for entry in fs::read_dir(examples_dir()).expect("examples dir") {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        seen += 1;
        let out = bin().arg("validate").arg(&path).output().expect("spawn");
        assert!(
            out.status.success(),
            "{} invalid:\n{}",
            path.display(),
            String::from_utf8_lossy(&out.stdout)
        );

        let text = fs::read_to_string(&path).unwrap();
        let parsed = RunConfig::from_toml_str(&text).unwrap();
        let reparsed = RunConfig::from_toml_str(&parsed.to_toml_string().unwrap()).unwrap();
        assert_eq!(parsed, reparsed, "{} does not round-trip", path.display());
    }
    assert_eq!(seen, 8, "one example per experiment");
}

#[test]
fn budget_run_writes_reports_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("report");
    let example = examples_dir().join("budget.toml");
    run_ok(&[
        "run",
        example.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);

    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "term,error_plus_z,error_minus_z");
    assert_eq!(lines.count(), 7, "six terms plus the total row");

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "budget");
    assert_eq!(summary["provenance"]["seed"], 13);
    assert_eq!(
        summary["provenance"]["config_sha256"].as_str().unwrap().len(),
        64
    );
    let avg = summary["results"]["total_average"].as_f64().unwrap();
    assert!((avg - 3.03e-3).abs() < 0.3e-3, "average {avg}");
    assert!(!out_dir.join("schedule.txt").exists(), "budget has no pulse program");
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn lifetime_results_are_byte_identical_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
seed = 21
preset = "cooldown-b"

[experiment.lifetime]
initial_state = "plus_z"
dd = "none"
cycle_time = "3.52 us"
n_rounds_max = 8
n_shots = 300
"#,
    );

    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let out_dir = dir.path().join(format!("jobs-{jobs}"));
        run_ok(&[
            "run",
            config.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out_dir.join("schedule.txt").exists());
        outputs.push(fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "results.csv differs across --jobs");
}

#[test]
fn seed_flag_replaces_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let example = examples_dir().join("readout-cal.toml");
    let mut csvs = Vec::new();
    for (label, seed) in [("a", Some("99")), ("b", Some("99")), ("c", None)] {
        let out_dir = dir.path().join(label);
        let mut args = vec!["run".to_string(), example.to_str().unwrap().to_string()];
        if let Some(s) = seed {
            args.extend(["--seed".to_string(), s.to_string()]);
        }
        args.extend(["--out".to_string(), out_dir.to_str().unwrap().to_string()]);
        let args_ref: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        run_ok(&args_ref);
        csvs.push(fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1], "same seed must reproduce bytes");
    assert_ne!(csvs[0], csvs[2], "different seed must resample");
}

#[test]
fn invariant_violation_is_listed_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
seed = 1

[device.data]
omega = "5182 MHz"
alpha = "180 MHz"

[device.ancilla]
omega = "5410 MHz"
alpha = "183 MHz"

[device]
coupling_g = "12.5 MHz"
drive_detuning = "0.64 MHz"
stark_shift = "70 kHz"

[device.resonator]
omega_r = "7496 MHz"
kappa_r = "0.30 MHz"
g_r = "103 MHz"
chi_bias = "-0.53 MHz"

[noise]
t1_ge = "52 us"
t1_ef = "26 us"
tphi_gf = "440 us"
p_thermal = 0.6
ancilla_t1 = "12 us"
ancilla_t2e = "16 us"
readout_len = "1.4 us"

[instrument]
p_false_pos_0l = 0.024
p_false_pos_1l = 0.027
p_fn_to_0l = 0.0266
p_fn_to_1l = 0.0012
p_fn_stay_e = 0.0453

[experiment.chi]
"#,
    );

    let out = bin()
        .args(["validate", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("p_thermal"), "diagnostics: {stdout}");

    let out = bin().args(["run", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_thermal"));
}

#[test]
fn unknown_field_is_named_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "seed = 1\npreset = \"ideal\"\n\n[experiment.chi]\nn_barr = 2.0\n",
    );
    let out = bin().args(["run", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("n_barr"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_experiment_block_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 1\npreset = \"ideal\"\n");
    let out = bin()
        .args(["validate", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("experiment"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn execution_failure_exits_3() {
    // Valid schema, but the cycle cannot clear the pulse program: the
    // failure happens at run time, not validation.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
seed = 1
preset = "cooldown-b"

[experiment.lifetime]
initial_state = "plus_z"
dd = "xy4"
cycle_time = "0.2 us"
n_shots = 10
"#,
    );
    assert!(bin()
        .args(["validate", config.to_str().unwrap()])
        .output()
        .unwrap()
        .status
        .success());
    let out = bin()
        .args([
            "run",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn noise_free_bell_heralds_at_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
seed = 2
preset = "ideal"

[experiment.bell]
"#,
    );
    let out_dir = dir.path().join("out");
    run_ok(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    for herald in ["herald_g", "herald_e"] {
        let f = summary["results"][herald]["fidelity"].as_f64().unwrap();
        assert!(f > 0.999, "{herald} fidelity {f}");
    }
    assert!(out_dir.join("schedule.txt").exists());
}
