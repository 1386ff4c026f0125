use std::path::Path;
use std::process::{Command, Output};

use cyldimer::io::{read_coupling_csv, read_covers};

fn cyldimer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyldimer"))
        .args(args)
        .current_dir(dir)
        .env("CYLDIMER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn outputs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.toml", "domain = { width = 8, height = 4 }\nn_samples = 1000\nseed = 11\n");
    for sub in ["moments", "sample", "couplings"] {
        let a = cyldimer(&[sub, "--config", &cfg, "--out", "a.out"], dir.path());
        let b = cyldimer(&[sub, "--config", &cfg, "--out", "b.out", "--threads", "1"], dir.path());
        assert!(a.status.success() && b.status.success(), "{sub}: {}", String::from_utf8_lossy(&a.stderr));
        let (a, b) = (std::fs::read(dir.path().join("a.out")).unwrap(), std::fs::read(dir.path().join("b.out")).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b, "{sub} output differs between runs");
    }
}

#[test]
fn seed_flag_changes_samples_but_not_exact_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", r#"{"domain":{"width":8,"height":4},"n_samples":1000,"seed":1}"#);
    let run = |seed: &str| {
        let o = cyldimer(&["moments", "--config", &cfg, "--seed", seed], dir.path());
        assert!(o.status.success());
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()
    };
    let (a, b) = (run("1"), run("2"));
    assert_eq!(a["exact"], b["exact"]);
    assert_ne!(a["monte_carlo"]["M2"], b["monte_carlo"]["M2"]);
    assert_eq!(b["monte_carlo"]["seed"], 2);
}

#[test]
fn dumps_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "domain = { width = 6, height = 4 }\nn_samples = 4\nseed = 9\n");
    let o = cyldimer(&["couplings", "--config", &cfg], dir.path());
    assert!(o.status.success());
    let dump = read_coupling_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(dump.n, 12);
    let o = cyldimer(&["sample", "--config", &cfg], dir.path());
    let covers = read_covers(o.stdout.as_slice()).unwrap();
    assert_eq!((covers.seed, covers.covers.len()), (9, 4));
}

#[test]
fn validate_reports_and_sets_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", "domain = { width = 6, height = 4 }\n");
    let o = cyldimer(&["validate", "--config", &ok], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);
    // log of the number of covers of the 6 × 4 cylinder is positive and finite.
    assert!(v["log_partition"].as_f64().unwrap() > 0.0);

    let bad = write(dir.path(), "bad.toml", "domain = { width = 5, height = 4 }\n");
    assert_eq!(cyldimer(&["validate", "--config", &bad], dir.path()).status.code(), Some(1));
}

#[test]
fn config_and_numerical_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = write(dir.path(), "s.toml", "domain = { width = 8, height = 4 }\nn_samples = 10\n");
    assert_eq!(cyldimer(&["sample", "--config", &no_seed], dir.path()).status.code(), Some(3));
    let unknown = write(dir.path(), "u.toml", "colour = 3\n");
    assert_eq!(cyldimer(&["predict", "--config", &unknown], dir.path()).status.code(), Some(3));
    let wrong_kind = write(dir.path(), "k.toml", "kind = \"sample\"\nell = 6.0\nmu = 0.1\n");
    assert_eq!(cyldimer(&["predict", "--config", &wrong_kind], dir.path()).status.code(), Some(3));
    let unreachable = write(dir.path(), "r.toml", "ell = 6.0\nM2 = 5.0\nM3 = 0.0\n");
    assert_eq!(cyldimer(&["predict", "--config", &unreachable], dir.path()).status.code(), Some(2));
}

#[test]
fn predict_and_special_eval_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "ell = 6.0\nmu = 0.2\n");
    let o = cyldimer(&["predict", "--config", &cfg], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["cubic_residual"].as_f64().unwrap().abs() < 1e-9);

    let o = cyldimer(&["special-eval", "--config", &cfg, "--grid", "2"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 4 * 7);
}

#[test]
fn convergence_csv_has_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.toml", "[mesh]\nwidths = [8, 16]\naspect = 2\n");
    let o = cyldimer(&["convergence", "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("W,H,delta,quantity,value,error,prediction,residual"));
    assert!(lines.all(|l| l.split(',').count() == 8));
}
