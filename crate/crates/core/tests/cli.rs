use std::path::Path;
use std::process::{Command, Output};

fn irrsio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irrsio"))
        .args(args)
        .env_remove("IRRSIO_THREADS")
        .output()
        .unwrap()
}

fn with_config(dir: &Path, json: &str, args: &[&str]) -> Output {
    let path = dir.join("cfg.json");
    std::fs::write(&path, json).unwrap();
    let mut all = vec!["--config", path.to_str().unwrap()];
    all.extend_from_slice(args);
    irrsio(&all)
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).collect()
}

#[test]
fn one_generation_cantor_has_four_equal_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(
        dir.path(),
        r#"{"measure": {"type": "cantor", "generations": 1, "ratio": 0.25, "dim": 2}}"#,
        &["generate"],
    );
    let text = stdout(&out);
    let lines = data_lines(&text);
    assert_eq!(lines.len(), 4);
    for l in lines {
        let w: f64 = l.split_whitespace().last().unwrap().parse().unwrap();
        assert_eq!(w, 0.25);
    }
}

#[test]
fn graph_measure_has_the_requested_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(
        dir.path(),
        r#"{"measure": {"type": "graph", "atoms": 100, "slope": 0.5, "dim": 2}}"#,
        &["generate"],
    );
    assert_eq!(data_lines(&stdout(&out)).len(), 100);
}

#[test]
fn seeds_control_random_measures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"measure": {"type": "random", "atoms": 50, "dim": 3}}"#;
    let a = stdout(&with_config(dir.path(), cfg, &["--seed", "5", "generate"]));
    let b = stdout(&with_config(dir.path(), cfg, &["--seed", "5", "generate"]));
    let c = stdout(&with_config(dir.path(), cfg, &["--seed", "6", "generate"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mu.txt");
    let out = irrsio(&["--out", path.to_str().unwrap(), "generate"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let mu = irrsio::measure::AtomicMeasure::read_file(&path).unwrap();
    assert_eq!(mu.len(), 256);
}

#[test]
fn empty_sweep_prints_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), r#"{"sweep": {"sizes": []}}"#, &["sweep"]);
    assert_eq!(stdout(&out), "N,total_energy,max_node_ratio,op_norm,seconds\n");
}

#[test]
fn segment_sweep_stays_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(
        dir.path(),
        r#"{"measure": {"type": "graph", "atoms": 512, "slope": 0.0, "dim": 2}, "sweep": {"sizes": [64, 128, 256, 512]}}"#,
        &["sweep", "--no-timing"],
    );
    let text = stdout(&out);
    let norms: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(norms.len(), 4);
    let max = norms.iter().copied().fold(0.0, f64::max);
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max / min <= 1.5, "{norms:?}");
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn decompose_lists_both_generations() {
    let text = stdout(&irrsio(&["decompose"]));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "generation,cube_id,mass,theta,hd_count,sigma1_count,delta_energy,ratio"
    );
    let gens: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(gens, vec![0, 1, 1, 1, 1]);
}

#[test]
fn variational_reports_the_listed_keys() {
    let text = stdout(&irrsio(&["variational", "--lambda", "10"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "lambda",
        "F_init",
        "F_final",
        "sup_b",
        "pointwise_defect",
        "iterations",
        "converged",
        "hypothesis_holds",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["F_final"].as_f64().unwrap() <= v["F_init"].as_f64().unwrap());
}

#[test]
fn apply_at_target_points() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.txt");
    let pts = dir.path().join("pts.txt");
    std::fs::write(&mu, "0 0 1\n").unwrap();
    std::fs::write(&pts, "1 0\n0 2\n").unwrap();
    let out = irrsio(&["apply", "--measure", mu.to_str().unwrap(), "--targets", pts.to_str().unwrap()]);
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> = data_lines(&text)
        .iter()
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    // −x / (2π|x|²) in the plane
    let tau = 2.0 * std::f64::consts::PI;
    assert!((rows[0][2] + 1.0 / tau).abs() < 1e-15 && rows[0][3] == 0.0);
    assert!(rows[1][2] == 0.0 && (rows[1][3] + 0.5 / tau).abs() < 1e-15);
}

#[test]
fn verify_passes_on_the_default_instance() {
    let out = irrsio(&["verify"]);
    let text = stdout(&out);
    assert!(!text.lines().any(|l| l.starts_with("FAIL")), "{text}");
}

#[test]
fn small_a0_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), r#"{"lattice": {"A0": 2}}"#, &["generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("A0"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), r#"{"lattice": {"C0": 2}, "colour": 1}"#, &["generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_measure_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("broken.txt");
    std::fs::write(&mu, "# x y w\n0 0 0.5\n1 0 0.25\n1 x 0.25\n").unwrap();
    let out = irrsio(&["apply", "--measure", mu.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("broken.txt:4"), "{err}");
}
