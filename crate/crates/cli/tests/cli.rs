use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
[mollifier]
shape = "bump"
samples = 256

[grid]
L = 3.0
nx = 96

[noise]
seed = 4
replicas = 5

[schedule]
eps = [0.3]
mu = 0.5
sigma = 0.8
lambda = 1.0
times = [0.1]

[experiment]
kind = "mean-kernel"
"#;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lab"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn classify_prints_side_and_regime() {
    let out = lab().args(["classify", "--alpha", "-0.5", "--beta", "1"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "weak-env critical-SHE-proven");
    let out = lab().args(["classify", "--alpha", "0", "--beta", "-1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_table() {
    let out = lab()
        .args(["sweep", "--alpha-range", "-1,1", "--beta-range", "0,1", "--grid-points", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,beta,side,regime");
    assert_eq!(lines.len(), 10);
    assert!(lines.contains(&"1,0,weak-diff,sticky-boundary"));
}

#[test]
fn run_is_byte_identical_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let st = lab()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .map(|o| o.status)
            .unwrap();
        assert!(st.success());
    }
    for f in ["covariance.csv", "field_t0.1.csv", "mass_series.csv", "mean_kernel.csv", "records.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    let st = lab()
        .args(["run", "--seed", "5", "--replicas", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&c)
        .output()
            .map(|o| o.status)
        .unwrap();
    assert!(st.success());
    assert_ne!(
        std::fs::read(a.join("records.csv")).unwrap(),
        std::fs::read(c.join("records.csv")).unwrap()
    );
    let manifest = std::fs::read_to_string(c.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 5"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("nx = 96", "nx = 4"));
    let out = lab().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("grid.nx"));
    // mollifier not resolved by the grid
    let cfg = write_config(dir.path(), &TINY.replace("eps = [0.3]", "eps = [0.1]"));
    let out = lab().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spde_writes_fields_and_noise_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    let st = lab()
        .args(["spde", "--replicas", "4", "--dump-noise", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
            .map(|o| o.status)
        .unwrap();
    assert!(st.success());
    let bytes = std::fs::read(out.join("noise_slice_3.bin")).unwrap();
    assert_eq!(bytes.len(), 96 * 8);
    let field = std::fs::read_to_string(out.join("field_t0.1.csv")).unwrap();
    assert!(field.starts_with("y,mean,variance,q05,q50,q95\n"));
    assert_eq!(field.lines().count(), 97);
    assert!(out.join("mass_series.csv").exists());
}

#[test]
fn twopoint_and_qpde_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    let st = lab()
        .args(["twopoint", "--replicas", "200", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
            .map(|o| o.status)
        .unwrap();
    assert!(st.success());
    let m = std::fs::read_to_string(out.join("moments.csv")).unwrap();
    assert!(m.starts_with("eps,t,E_weight,SE,E_weight_f,SE_f\n"));
    assert!(out.join("difference_hist.csv").exists());
    let st = lab()
        .args(["qpde", "--eps-list", "0.3,0.2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
            .map(|o| o.status)
        .unwrap();
    assert!(st.success());
    let q = std::fs::read_to_string(out.join("q_lambda.csv")).unwrap();
    assert!(q.starts_with("t,eps,lambda,q0,mass,she_oracle,p2t0\n"));
    assert_eq!(q.lines().count(), 3);
}
