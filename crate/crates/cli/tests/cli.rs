use std::path::Path;
use std::process::{Command, Output};

fn sel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sel")).args(args).output().unwrap()
}

fn sel_with_threads(threads: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sel"))
        .env("SEL_THREADS", threads)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "[sim]\ndt = 2e-3\nT = 0.05\nparticles = 48\n\
                     [kernel]\nresolution = 256\ncutoff = 16\n\
                     [spectral]\nresolution = 32\n\
                     [init]\nepsilon = 0.3\n\
                     [output]\nevery = 5\n";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = sel(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_config_names_the_file() {
    let o = sel(&["simulate", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.cfg"), "{}", stderr(&o));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[noise]\nbeta = 2.5\n");
    let o = sel(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = sel_with_threads("zero", &["verify", "noise"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_diagnostics_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sel(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    for file in [
        "diag.csv",
        "report.csv",
        "manifest.json",
        "summary_particles.csv",
        "snap_000025.jsonl",
    ] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ensemble"]["base_seed"], 4);
}

#[test]
fn ensemble_outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = sel_with_threads(
            threads,
            &[
                "ensemble",
                "--config",
                &cfg,
                "--members",
                "4",
                "--out",
                out.to_str().unwrap(),
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
        out
    };
    let (a, b) = (run("1"), run("3"));
    for file in [
        "summary_particles.csv",
        "holder_particles.csv",
        "report.csv",
        "member_0002/diag.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn failed_checks_exit_with_one() {
    // 32² is too coarse for this sheet; the grid undershoot exceeds 1%
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sel(&[
        "simulate",
        "--config",
        &cfg,
        "--solver",
        "spectral",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL spectral.mass_positivity"), "{}", stdout(&o));
}

#[test]
fn out_directory_and_solver_default_from_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-config");
    let text = format!("{SMALL}dir = {:?}\n[spectral]\nenabled = true\n", out.to_str().unwrap());
    let cfg = write_config(dir.path(), &text.replace("[spectral]\nresolution = 32\n", ""));
    let o = sel(&["init-preview", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("init").join("init.jsonl").is_file());
    assert!(out.join("init").join("init_grid.json").is_file());
}

#[test]
fn kernel_tables_round_trip_through_the_binary_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.sekt");
    let p = path.to_str().unwrap();
    let o = sel(&[
        "kernel-table",
        "emit",
        "--resolution",
        "64",
        "--cutoff",
        "8",
        "--out",
        p,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"SEKT");
    let o = sel(&["kernel-table", "load", p]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let info: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(info["resolution"], 64);
    assert_eq!(info["cutoff"], 8);
}

#[test]
fn init_preview_writes_both_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("init");
    let o = sel(&["init-preview", "--solver", "both", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let info: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(info["atoms"], 512);
    assert!(out.join("init.jsonl").is_file());
    assert!(out.join("init_grid.json").is_file());
}

#[test]
fn quick_verify_passes_and_prints_the_report_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify");
    let o = sel(&["verify", "--quick", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report = out.join("verify_report.csv");
    assert!(stdout(&o).contains(&format!("report: {}", report.display())));
    for file in ["verify_report.csv", "nonlinear.csv", "apriori.csv"] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let header = std::fs::read_to_string(out.join("nonlinear.csv")).unwrap();
    assert!(header.starts_with("case,metric,value,tolerance,pass"));
}
