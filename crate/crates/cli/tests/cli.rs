use std::fs;
use std::path::Path;
use std::process::Command;

use openchain_cli::{parse_config, CliError, Invocation, RunManifest, Settings};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_openchain"))
}

fn settings(argv: &[&str]) -> Result<Settings, CliError> {
    let mut full = vec!["openchain"];
    full.extend_from_slice(argv);
    match parse_config(full)? {
        Invocation::Run { settings, .. } => Ok(settings),
        Invocation::Replay { .. } => panic!("expected a run"),
    }
}

fn config_file(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn assert_same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let x = fs::read(a.join(&name)).unwrap();
        let y = fs::read(b.join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn flag_beats_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), "gamma1 = 0.9\nd1 = 0.7\n");
    let s = settings(&["chain", "--config", &cfg, "--gamma1", "0.5"]).unwrap();
    assert_eq!(s.gamma1, 0.5);
    assert_eq!(s.d1, 0.7);
    assert_eq!(s.d_l, 0.25);
}

#[test]
fn interaction_in_file_sets_g() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), "U = 0.2\nnbar = 10\n");
    assert_eq!(settings(&["chain", "--config", &cfg]).unwrap().g, vec![2.0]);
    let cfg = config_file(dir.path(), "U = 0.2\nnbar = 10\ng = 1.0\n");
    let err = settings(&["chain", "--config", &cfg]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("interaction"), "{err}");
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["relax", "--realizations", "0", "--output-dir"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());

    let cfg = config_file(dir.path(), "hoping = 1\n");
    let output = bin().args(["chain", "--config", &cfg]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("hoping"));

    let status = bin().args(["chain", "--length", "x"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let output = bin()
        .args(["spectra", "--single-site", "--t-final", "30", "--transient", "20", "--output-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("shorter"));
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let status = bin()
        .args(["chain", "--realizations", "4", "--t-final", "2", "--transient", "1", "--g", "0", "--output-dir"])
        .arg(blocker.join("sub"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn replay_reproduces_every_byte_on_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let status = bin()
        .args(["chain", "--realizations", "40", "--t-final", "30", "--transient", "10", "--threads", "1"])
        .arg("--output-dir")
        .arg(&first)
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .arg("replay")
        .arg(first.join("manifest.json"))
        .arg("--output-dir")
        .arg(&second)
        .env("OPENCHAIN_THREADS", "3")
        .status()
        .unwrap();
    assert!(status.success());
    assert_same_files(&first, &second);

    let manifest = RunManifest::load(&first.join("manifest.json")).unwrap();
    assert_eq!(manifest.outputs, ["actions.csv", "current.csv", "stationary.csv"]);
    assert_eq!(manifest.settings.g, vec![0.0, 2.0]);
    assert_eq!(manifest.integrators.len(), 2);
}

#[test]
fn csv_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let status = bin()
        .args(["relax", "--realizations", "20", "--output-dir"])
        .arg(out.join("relax"))
        .status()
        .unwrap();
    assert!(status.success());
    let relax = fs::read_to_string(out.join("relax/relax.csv")).unwrap();
    let mut lines = relax.lines();
    assert_eq!(lines.next(), Some("t,N_quantum/nbar,N_diffusion_only/nbar,I_classical,I_se"));
    assert_eq!(relax.lines().count(), 102);
    let last: Vec<f64> = relax.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 10.0);
    assert!((last[1] - (1.0 - (-5.0f64).exp())).abs() < 1e-6);

    let status = bin()
        .args(["scaling", "--g", "0", "--lengths", "3,4", "--realizations", "8", "--t-final", "12"])
        .args(["--transient", "6", "--output-dir"])
        .arg(out.join("scaling"))
        .status()
        .unwrap();
    assert!(status.success());
    let scaling = fs::read_to_string(out.join("scaling/scaling.csv")).unwrap();
    assert_eq!(scaling.lines().next(), Some("L,inv_L,j,j_se,regime"));
    assert!(scaling.lines().nth(1).unwrap().starts_with("3,3.33333333333e-1,"));
    assert!(scaling.lines().nth(2).unwrap().ends_with(",ballistic"));
    let profile = fs::read_to_string(out.join("scaling/profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 5);
}
