use std::path::Path;

use kernel_lab::lab::regime::sweep_grid;
use kernel_lab::lab::{classify_regime, run_and_write, run_experiment, LabConfig, Regime, RegimePoint};
use proptest::prelude::*;

fn shipped(name: &str) -> LabConfig {
    LabConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn shipped_configs_validate_and_round_trip() {
    for name in [
        "mean_kernel.toml",
        "second_moment.toml",
        "critical_line.toml",
        "weak_disorder.toml",
        "strong_disorder.toml",
        "phase_sweep.toml",
    ] {
        let cfg = shipped(name);
        cfg.validate().unwrap();
        let again = LabConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(again.hash(), cfg.hash(), "{name}");
    }
}

#[test]
fn critical_schedule_holds_kappa_fixed_and_weak_schedule_sends_it_to_zero() {
    let cfg = shipped("critical_line.toml");
    let cov = cfg.covariance().unwrap();
    for p in cfg.scale_points(&cov).unwrap() {
        assert!((p.kappa_eps - 1.0).abs() < 1e-12);
        assert!((p.nu - 1.0).abs() < 1e-12);
    }
    let cfg = shipped("weak_disorder.toml");
    let pts = cfg.scale_points(&cfg.covariance().unwrap()).unwrap();
    assert!(pts.windows(2).all(|w| w[1].kappa_eps < w[0].kappa_eps));
    assert!(pts.iter().all(|p| classify_regime(&RegimePoint::new(p.alpha, p.beta).unwrap()).unwrap() == Regime::WeakDisorder));
}

#[test]
fn written_outputs_match_the_manifest() {
    let mut cfg = shipped("strong_disorder.toml");
    cfg.noise.replicas = 4;
    cfg.schedule.kappa_list = vec![3.0];
    let dir = tempfile::tempdir().unwrap();
    let out = run_and_write(&cfg, dir.path()).unwrap();
    assert_eq!(out.exit_code(), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["kind"], "strong-disorder");
    for f in manifest["files"].as_array().unwrap() {
        let name = f.as_str().unwrap();
        assert!(dir.path().join(name).exists() || Path::new(name).exists(), "{name}");
    }
    let rows = std::fs::read_to_string(dir.path().join("strong_disorder.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + cfg.schedule.times.len());
}

#[test]
fn phase_sweep_labels_agree_with_the_classifier() {
    let cfg = shipped("phase_sweep.toml");
    let out = run_experiment(&cfg).unwrap();
    let table = out.table("phase_sweep.csv").unwrap();
    let col = |n: &str| table.header.iter().position(|h| h == n).unwrap();
    let (ia, ib, ir) = (col("alpha"), col("beta"), col("regime"));
    assert!(!table.rows.is_empty());
    for row in &table.rows {
        let pt = RegimePoint::new(row[ia].parse().unwrap(), row[ib].parse().unwrap()).unwrap();
        assert_eq!(row[ir], classify_regime(&pt).unwrap().name());
    }
}

proptest! {
    #[test]
    fn sweep_is_a_grid_of_classifications(
        a0 in -2.0f64..0.0, a1 in 0.0f64..2.0, b1 in 0.1f64..2.0, na in 1usize..6, nb in 1usize..6,
    ) {
        let grid = sweep_grid((a0, a1), (0.0, b1), (na, nb)).unwrap();
        prop_assert_eq!(grid.len(), na * nb);
        for (pt, r) in grid {
            prop_assert_eq!(classify_regime(&pt).unwrap(), r);
            let line = pt.critical_beta();
            if pt.beta < line - 1e-6 && pt.alpha <= 1.0 {
                prop_assert!(!r.is_critical() && r != Regime::StrongDisorder);
            }
            if pt.beta > line + 1e-6 && pt.beta > 0.0 {
                prop_assert_eq!(r, Regime::StrongDisorder);
            }
        }
    }

    #[test]
    fn left_line_is_proven_and_right_line_conjectured(alpha in -2.0f64..1.0) {
        prop_assume!(alpha.abs() > 1e-6);
        let beta = if alpha < 0.0 { 0.5 - alpha } else { 0.5 * (1.0 - alpha) };
        let r = classify_regime(&RegimePoint::new(alpha, beta).unwrap()).unwrap();
        let want = if alpha < 0.0 { Regime::CriticalSheProven } else { Regime::CriticalSheConjectured };
        prop_assert_eq!(r, want);
    }
}
