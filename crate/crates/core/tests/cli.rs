use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn rvns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvns")).args(args).output().expect("spawn rvns")
}

fn ok(args: &[&str]) {
    let out = rvns(args);
    assert!(
        out.status.success(),
        "rvns {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read_json(path: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, n: &str, seed: &str) -> String {
    let data = p(dir, "data.csv");
    ok(&["generate", "--df", "2", "--n", n, "--a", "0", "--b", "10", "--seed", seed, "--out", &data]);
    data
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn perturb_writes_n_times_k_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "300", "1");
    let reports = p(dir.path(), "reports.csv");
    ok(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--k", "5", "--seed", "7", "--out", &reports]);
    let text = std::fs::read_to_string(&reports).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("user_id,sample_index,value"));
    assert_eq!(lines.count(), 300 * 5);

    let diag = p(dir.path(), "diag.csv");
    ok(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--k", "5", "--seed", "7", "--diagnostic", "--out", &diag]);
    let text = std::fs::read_to_string(&diag).unwrap();
    assert!(text.starts_with("user_id,sample_index,value,band_offset\n"));
}

#[test]
fn reconstruct_writes_normalized_density() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "400", "2");
    let reports = p(dir.path(), "reports.csv");
    let density = p(dir.path(), "density.json");
    ok(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--k", "5", "--seed", "7", "--out", &reports]);
    ok(&["reconstruct", "--reports", &reports, "--a", "0", "--b", "10", "--d", "2", "--m", "100", "--out", &density]);

    let json = read_json(&density);
    for key in ["grid", "density", "objective", "constraint_residual", "iterations", "converged"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let z: Vec<f64> = json["grid"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let v: Vec<f64> = json["density"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(z.len(), 100);
    assert_eq!(v.len(), 100);
    let dz = z[1] - z[0];
    let area: f64 = v.iter().map(|x| x * dz).sum();
    assert!((area - 1.0).abs() <= 1e-6, "area {area}");
    assert!(v.iter().all(|x| *x >= 0.0));
}

#[test]
fn evaluate_reports_w1_and_six_indicator_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "400", "3");
    let reports = p(dir.path(), "reports.csv");
    let density = p(dir.path(), "density.json");
    let metrics = p(dir.path(), "metrics.json");
    ok(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--k", "5", "--seed", "7", "--out", &reports]);
    ok(&["reconstruct", "--reports", &reports, "--a", "0", "--b", "10", "--d", "2", "--m", "100", "--out", &density]);
    ok(&["evaluate", "--original", &data, "--density", &density, "--out", &metrics]);

    let json = read_json(&metrics);
    assert!(json["wasserstein"].as_f64().unwrap() >= 0.0);
    assert!(json["privacy_distance"].is_null());
    for key in ["mean", "std_dev", "mode", "median", "skewness", "kurtosis"] {
        assert!(json["indicator_errors"][key].as_f64().unwrap() >= 0.0, "{key}");
    }
}

#[test]
fn attack_writes_one_row_per_user() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "50", "4");
    let reports = p(dir.path(), "reports.csv");
    let attack = p(dir.path(), "attack.csv");
    ok(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--k", "3", "--seed", "1", "--out", &reports]);
    ok(&["attack", "--reports", &reports, "--a", "0", "--b", "10", "--d", "2", "--resolution", "200", "--out", &attack]);
    let text = std::fs::read_to_string(&attack).unwrap();
    assert!(text.starts_with("user_id,x_infer,log_likelihood\n"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "20", "5");
    let out = p(dir.path(), "r.csv");

    // unknown flag and missing required flag
    assert_eq!(rvns(&["perturb", "--bogus"]).status.code(), Some(2));
    assert_eq!(rvns(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--out", &out]).status.code(), Some(2));
    // invalid values
    assert_eq!(rvns(&["perturb", "--in", &data, "--a", "5", "--b", "1", "--d", "2", "--k", "1", "--out", &out]).status.code(), Some(2));
    assert_eq!(rvns(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "20", "--k", "1", "--out", &out]).status.code(), Some(2));
    // missing input file
    let missing = p(dir.path(), "nope.csv");
    let o = rvns(&["perturb", "--in", &missing, "--a", "0", "--b", "10", "--d", "2", "--k", "1", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    // malformed config
    let cfg = write_config(dir.path(), "dataset = \"chi2\"\nnonsense = true\n");
    let table = p(dir.path(), "t.csv");
    assert_eq!(rvns(&["experiment", "--config", cfg.to_str().unwrap(), "--out", &table]).status.code(), Some(2));
}

#[test]
fn ingest_keeps_in_range_rows() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, "id,bmi\n1,22.5\n2,\n3,80\n4,31\n").unwrap();
    let out = p(dir.path(), "data.csv");
    ok(&["ingest", "--in", raw.to_str().unwrap(), "--column", "bmi", "--a", "10", "--b", "60", "--out", &out]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "value\n22.5\n31\n");
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dataset = \"chi2\"\ndf = 2\nn = 100\na = 0\nb = 10\nm = 50\nk = 5\nseed = 1\nd_sweep = []\n");
    let table = p(dir.path(), "t.csv");
    ok(&["experiment", "--config", cfg.to_str().unwrap(), "--out", &table]);
    assert_eq!(
        std::fs::read_to_string(&table).unwrap(),
        "mechanism,param,privacy_distance,wasserstein,mean_err,std_err,mode_err,median_err,skew_err,kurt_err,runtime_s\n"
    );
}

#[test]
fn experiment_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "dataset = \"chi2\"\ndf = 2\nn = 300\na = 0\nb = 10\nm = 50\nk = 3\nseed = 11\nrepetitions = 2\nattack_resolution = 200\nd_sweep = [1.0, 2.0]\nlaplace_scales = [1.0]\ngaussian_scales = [1.0]\n",
    );
    let (t1, t2) = (p(dir.path(), "t1.csv"), p(dir.path(), "t2.csv"));
    ok(&["experiment", "--config", cfg.to_str().unwrap(), "--out", &t1]);
    ok(&["experiment", "--config", cfg.to_str().unwrap(), "--out", &t2]);
    let a = std::fs::read(&t1).unwrap();
    assert_eq!(a, std::fs::read(&t2).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 5);
}

fn table_row(path: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    lines[1].split(',').skip(1).map(|s| s.parse().unwrap()).collect()
}

fn metrics_row(param: f64, path: &str) -> Vec<f64> {
    let j = read_json(path);
    let e = &j["indicator_errors"];
    let mut row = vec![param, j["privacy_distance"].as_f64().unwrap(), j["wasserstein"].as_f64().unwrap()];
    for key in ["mean", "std_dev", "mode", "median", "skewness", "kurtosis"] {
        row.push(e[key].as_f64().unwrap());
    }
    row.push(0.0);
    row
}

#[test]
fn experiment_matches_chained_rvns_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        "dataset = \"chi2\"\ndf = 2\nn = 400\na = 0\nb = 10\nm = 60\nk = 4\nseed = 21\nrepetitions = 1\nd_sweep = [2.0]\n",
    );
    let table = p(d, "t.csv");
    ok(&["experiment", "--config", cfg.to_str().unwrap(), "--out", &table]);

    let data = generate(d, "400", "21");
    let (reports, density, attack, metrics) = (p(d, "r.csv"), p(d, "f.json"), p(d, "a.csv"), p(d, "m.json"));
    ok(&["perturb", "--in", &data, "--a", "0", "--b", "10", "--d", "2", "--k", "4", "--seed", "21", "--out", &reports]);
    ok(&["reconstruct", "--reports", &reports, "--a", "0", "--b", "10", "--d", "2", "--m", "60", "--out", &density]);
    ok(&["attack", "--reports", &reports, "--a", "0", "--b", "10", "--d", "2", "--out", &attack]);
    ok(&["evaluate", "--original", &data, "--density", &density, "--inferred", &attack, "--seed", "21", "--out", &metrics]);

    assert_eq!(table_row(&table), metrics_row(2.0, &metrics));
}

#[test]
fn experiment_matches_chained_noise_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        "dataset = \"chi2\"\ndf = 2\nn = 400\na = 0\nb = 10\nm = 60\nk = 1\nseed = 8\nrepetitions = 1\nlaplace_scales = [1.5]\n",
    );
    let table = p(d, "t.csv");
    ok(&["experiment", "--config", cfg.to_str().unwrap(), "--out", &table]);

    let data = generate(d, "400", "8");
    let (reports, density, metrics) = (p(d, "r.csv"), p(d, "f.csv"), p(d, "m.json"));
    ok(&["noise", "--in", &data, "--a", "0", "--b", "10", "--mechanism", "laplace", "--scale", "1.5", "--seed", "8", "--out", &reports]);
    ok(&["estimate", "--reports", &reports, "--a", "0", "--b", "10", "--m", "60", "--out", &density]);
    ok(&["evaluate", "--original", &data, "--density", &density, "--perturbed", &reports, "--seed", "8", "--out", &metrics]);

    assert_eq!(table_row(&table), metrics_row(1.5, &metrics));
}
