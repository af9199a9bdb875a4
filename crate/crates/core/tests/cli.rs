use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pd_term(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pd-term"))
        .args(args)
        .env_remove("PD_TERM_THREADS")
        .output()
        .expect("binary runs")
}

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Simulates a small panel into `dir/sim` and returns the panel path.
fn small_panel(dir: &Path) -> PathBuf {
    let config = std::fs::read_to_string(example("sim_config.json")).unwrap();
    let mut config: serde_json::Value = serde_json::from_str(&config).unwrap();
    config["n_loans"] = 800.into();
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let out = pd_term(&["simulate", "--config", &s(&path), "--out-dir", &s(&dir.join("sim"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("sim/panel.csv")
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(pd_term(&["--help"]).status.code(), Some(0));
    assert_eq!(pd_term(&["baseline", "--help"]).status.code(), Some(0));
    assert_eq!(pd_term(&[]).status.code(), Some(1));
    assert_eq!(pd_term(&["km", "--panel", "x.csv"]).status.code(), Some(1));
    assert_eq!(
        pd_term(&["baseline", "breed", "--reference", "3", "--out-dir", "x"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = pd_term(&["km", "--panel", "/nonexistent.csv", "--out-dir", &s(tmp.path())]);
    assert_eq!(missing.status.code(), Some(1));
    // a simulation config is not a model spec
    let panel = small_panel(tmp.path());
    let out = pd_term(&[
        "fit",
        "--panel",
        &s(&panel),
        "--spec",
        &example("sim_config.json"),
        "--out-dir",
        &s(&tmp.path().join("fit")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
    assert!(!tmp.path().join("fit/model.json").exists());
    let bad_fraction = pd_term(&[
        "split",
        "--panel",
        &s(&panel),
        "--fraction",
        "1.5",
        "--out-dir",
        &s(tmp.path()),
    ]);
    assert_eq!(bad_fraction.status.code(), Some(1));
}

#[test]
fn nonconvergence_exits_two_unless_allowed() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = small_panel(tmp.path());
    let fit_dir = tmp.path().join("fit");
    let args = [
        "fit",
        "--panel",
        &s(&panel),
        "--spec",
        &example("model_spec.json"),
        "--max-iter",
        "1",
        "--out-dir",
        &s(&fit_dir),
    ];
    assert_eq!(pd_term(&args).status.code(), Some(2));
    assert!(!fit_dir.join("model.json").exists());

    let mut allowed = args.to_vec();
    allowed.push("--allow-nonconverged");
    assert_eq!(pd_term(&allowed).status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit_dir.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"], 1);
}

#[test]
fn km_table_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = small_panel(tmp.path());
    let km = tmp.path().join("km");
    let out = pd_term(&["km", "--panel", &s(&panel), "--age-cap", "24", "--out-dir", &s(&km)]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(km.join("life_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "age,n,f,c,h,S,dens,var,lo,hi");
    assert!(table
        .lines()
        .skip(1)
        .all(|l| l.split(',').next().unwrap().parse::<u32>().unwrap() <= 24));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(km.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "km");
    assert_eq!(manifest["arguments"]["age_cap"], 24);
    let digest = manifest["inputs"]["panel"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(manifest["outputs"]["life_table.csv"].is_string());
    // only named outputs remain; temporary files were renamed into place
    let mut names: Vec<String> = std::fs::read_dir(&km)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["censoring.json", "life_table.csv", "manifest.json"]);
}

#[test]
fn breed_table_through_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pd_term(&[
        "baseline",
        "breed",
        "--table",
        &example("breed_defaults.csv"),
        "--reference",
        "3",
        "--out-dir",
        &s(tmp.path()),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("breed.csv")).unwrap();
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first, ["all", "1", "0.02"]);
    let bad = pd_term(&[
        "baseline",
        "breed",
        "--table",
        &example("breed_defaults.csv"),
        "--reference",
        "9",
        "--out-dir",
        &s(tmp.path()),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}
