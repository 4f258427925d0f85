use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use coopmc::config::ExperimentConfig;

fn coopmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopmc")).args(args).output().unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.output.dir = dir.join("out").display().to_string();
    edit(&mut cfg);
    let path = dir.join("exp.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path.display().to_string()
}

#[test]
fn analytic_with_one_symbol_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |c| c.sequence.length = 1);
    let out = coopmc(&["analytic", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = String::from_utf8(out.stdout).unwrap();
    let lines = data_lines(Path::new(path.trim()));
    assert_eq!(lines[0], "symbol,q_md,q_fa,q_fc,q_bar");
    assert_eq!(lines.len(), 2);
}

#[test]
fn csv_header_records_config_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |c| c.sequence.length = 2);
    let out = coopmc(&["simulate", "--config", &cfg, "--trials", "10", "--seed", "31"]);
    assert!(out.status.success());
    let text = fs::read_to_string(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert!(text.starts_with("# coopmc "));
    assert!(text.contains("# seed: 31\n"));
    assert!(text.contains("# config-hash: "));
    assert!(text.contains("#   trials = 10"));
    // Two symbols plus the mean row.
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn invalid_config_reports_every_problem_with_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::default().to_toml();
    let broken = base.replace("p1 = 0.5", "p1 = 1.5").replace("[simulation]", "[simulation]\nbogus = 1");
    assert_ne!(broken, base);
    let path = tmp.path().join("bad.toml");
    fs::write(&path, broken).unwrap();
    let out = coopmc(&["analytic", "--config", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bogus"), "{err}");
    assert!(err.lines().filter(|l| l.contains("line ")).count() >= 1, "{err}");
    assert!(!tmp.path().join("analytic.csv").exists());
}

#[test]
fn syntax_error_is_located() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[topology]\nbuilder = \"ring\"\nk = = 3\n").unwrap();
    let out = coopmc(&["analytic", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 3"));
}

#[test]
fn failed_sweep_leaves_no_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |c| c.sequence.length = 2);
    let out = coopmc(&["sweep", "--config", &cfg, "--param", "xi-rx", "--values", "5,0"]);
    assert!(!out.status.success());
    let dir = tmp.path().join("out");
    let leftovers: Vec<_> = fs::read_dir(&dir).map(|d| d.flatten().map(|e| e.file_name()).collect()).unwrap_or_default();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn sweep_over_receiver_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |c| c.sequence.length = 3);
    let out = coopmc(&["sweep", "--config", &cfg, "--param", "k", "--values", "1,2,3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = data_lines(Path::new(String::from_utf8(out.stdout).unwrap().trim()));
    assert_eq!(lines.len(), 4);
}

#[test]
fn coarse_optimizer_writes_surface() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |c| {
        c.sequence.length = 4;
        c.detection.xi_rx_range = [1, 30];
        c.detection.xi_fc_range = [1, 30];
    });
    let out = coopmc(&["optimize", "--config", &cfg, "--coarse", "4", "--surface"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("out/optimize.csv").exists());
    assert!(tmp.path().join("out/surface.csv").exists());
}

#[test]
fn exact_and_mc_flags_conflict() {
    let out = coopmc(&["analytic", "--exact", "--mc"]);
    assert!(!out.status.success());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.k = Some(5);
    cfg.sequence.p1 = 0.3;
    let text = cfg.to_toml();
    let back = coopmc::config::validate_config(&text).unwrap();
    assert_eq!(back.to_toml(), text);
    assert_eq!(back.hash(), cfg.hash());
}
