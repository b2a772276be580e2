use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_heatmc");

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn heatmc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn only_subdir(root: &Path, prefix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "expected one {prefix}* directory in {}", root.display());
    dirs.into_iter().next().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const ESTIMATE: &str = r#"
version = 1
seed = 7

[coefficients]
preset = "const"
a = [[1.0]]
b = [0.0]
c = 0.0

[experiment]
kind = "estimate"
x = [0.0]
t = 1.0
y = [[0.0], [1.0]]
n_paths = 100000
n_steps = 20
pinned = true
"#;

#[test]
fn validate_constant_field_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.toml",
        r#"
version = 1
seed = 1

[coefficients]
preset = "const"
a = [[2.0]]
b = [0.5]
c = -0.1

[experiment]
kind = "validate"
"#,
    );
    let out_root = tmp.path().join("out");
    let o = heatmc(&["validate", "--config", cfg.to_str().unwrap(), "--out-dir", out_root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_subdir(&out_root, "validate-");
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("validation.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(manifest(&dir)["status"], "ok");
    assert!(fs::read_to_string(dir.join("modulus.csv")).unwrap().starts_with("r,"));
}

#[test]
fn estimate_matches_heat_kernel_at_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", ESTIMATE);
    let out_root = tmp.path().join("out");
    let o = heatmc(&["--config", cfg.to_str().unwrap(), "--out-dir", out_root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_subdir(&out_root, "estimate-");
    let csv = fs::read_to_string(dir.join("density.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "y,value,stderr,n,bandwidth");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    let exact = (2.0 * std::f64::consts::PI).powf(-0.5);
    // KDE bias at the peak is about h²/2 · p(0)
    let h = row[4];
    let bias = 0.5 * h * h * exact;
    assert!((row[1] - exact).abs() <= 4.0 * row[2] + bias, "{} vs {exact}", row[1]);
    assert!(dir.join("pinned.csv").exists());
}

#[test]
fn outputs_are_reproducible_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", ESTIMATE);
    let mut snapshots = Vec::new();
    for (i, workers) in ["1", "1", "3"].iter().enumerate() {
        let root = tmp.path().join(format!("run{i}"));
        let o = heatmc(&[
            "--config",
            cfg.to_str().unwrap(),
            "--workers",
            workers,
            "--out-dir",
            root.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let dir = only_subdir(&root, "estimate-");
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "manifest.json")
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        snapshots.push((dir.file_name().unwrap().to_owned(), files));
    }
    assert_eq!(snapshots[0], snapshots[1]);
    assert_eq!(snapshots[0], snapshots[2]);
}

#[test]
fn seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", ESTIMATE);
    let read = |seed: &str| {
        let root = tmp.path().join(format!("s{seed}"));
        let o = heatmc(&["--config", cfg.to_str().unwrap(), "--seed", seed, "--out-dir", root.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read_to_string(only_subdir(&root, "estimate-").join("density.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn unknown_key_is_a_config_error_with_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let body = ESTIMATE.replace("pinned = true", "pinned = true\nbandwith = 0.1");
    let cfg = write_config(tmp.path(), "bad.toml", &body);
    let root = tmp.path().join("out");
    let o = heatmc(&["--config", cfg.to_str().unwrap(), "--out-dir", root.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bandwith"));
    let m = manifest(&only_subdir(&root, "invalid-"));
    assert_eq!(m["status"], "error");
}

#[test]
fn invalid_value_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &ESTIMATE.replace("t = 1.0", "t = -1.0"));
    let root = tmp.path().join("out");
    let o = heatmc(&["--config", cfg.to_str().unwrap(), "--out-dir", root.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn subcommand_must_match_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", ESTIMATE);
    let root = tmp.path().join("out");
    let o = heatmc(&["couple", "--config", cfg.to_str().unwrap(), "--out-dir", root.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
}

#[test]
fn unsupported_oracle_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "o.toml",
        r#"
version = 1
seed = 0

[coefficients]
preset = "sin_a"
dim = 2

[experiment]
kind = "oracle"
x = [0.0, 0.0]
t = 1.0
y = [[0.0, 0.0]]
"#,
    );
    let root = tmp.path().join("out");
    let o = heatmc(&["--config", cfg.to_str().unwrap(), "--out-dir", root.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let m = manifest(&only_subdir(&root, "oracle-"));
    assert_eq!(m["status"], "error");
    assert!(!m["error"].as_str().unwrap().is_empty());
}

#[test]
fn oracle_default_grid_handles_any_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "o.toml",
        r#"
version = 1
seed = 0

[coefficients]
preset = "sin_a"

[experiment]
kind = "oracle"
x = [0.0]
t = 0.5
y = [[0.0], [1.0]]
"#,
    );
    let root = tmp.path().join("out");
    let o = heatmc(&["oracle", "--config", cfg.to_str().unwrap(), "--out-dir", root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(only_subdir(&root, "oracle-").join("oracle.csv")).unwrap();
    let peak: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(peak > 0.4 && peak < 0.7, "{peak}");
}
