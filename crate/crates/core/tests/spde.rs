use kernel_lab::covariance::{build_covariance, CovarianceSpec, MollifierShape, MollifierSpec, ScaleParams};
use kernel_lab::grid::Grid1d;
use kernel_lab::qpde::she_mass_moment;
use kernel_lab::spde::{heat_kernel, noise_dt_limit, run_ensemble, EnsembleConfig, Equation, SpdeScheme};

fn cov() -> CovarianceSpec {
    build_covariance(&MollifierSpec::unit(MollifierShape::Bump)).unwrap()
}

fn ensemble(grid: Grid1d, p: ScaleParams, equation: Equation, replicas: usize, times: Vec<f64>) -> EnsembleConfig {
    let c = cov();
    let scheme = SpdeScheme::default();
    let mut dt = scheme.max_dt(&grid, p.nu);
    if let Equation::Transport { tilted: true } = equation {
        dt = dt.min(noise_dt_limit(&grid, &c, &p));
    }
    EnsembleConfig {
        grid,
        cov: c,
        params: p,
        equation,
        scheme,
        dt,
        seed: 9,
        replicas,
        times,
        t0: None,
        boxes: None,
        keep_samples: false,
    }
}

#[test]
fn ensemble_mean_tracks_the_heat_kernel() {
    let c = cov();
    let grid = Grid1d::new(4.0, 192).unwrap();
    let p = ScaleParams::new(0.25, 0.6, 0.7, 0.0, &c).unwrap();
    let res = run_ensemble(&ensemble(grid, p, Equation::Transport { tilted: false }, 600, vec![0.3])).unwrap();
    let rec = &res.records[0];
    let mean = rec.field.mean();
    let se = rec.field.se();
    let t = res.t0 + rec.step as f64 * res.dt;
    let err = (0..grid.nx)
        .map(|j| (mean[j] - heat_kernel(p.nu, t, grid.x(j)).unwrap()).abs())
        .fold(0.0, f64::max);
    let max_se = se.iter().cloned().fold(0.0, f64::max);
    assert!(err < 3.0 * max_se, "{err} vs {max_se}");
}

#[test]
fn tilted_mass_is_a_martingale() {
    let c = cov();
    let grid = Grid1d::new(3.0, 128).unwrap();
    let p = ScaleParams::new(0.2, 1.0, 0.8, 1.5, &c).unwrap();
    let res = run_ensemble(&ensemble(grid, p, Equation::Transport { tilted: true }, 400, vec![0.1, 0.3])).unwrap();
    assert_eq!(res.failed, 0);
    for rec in &res.records {
        let m = rec.mass.estimate();
        assert!((m.mean - 1.0).abs() < 4.0 * m.se, "{m:?}");
        assert!(m.se > 0.0);
        // Jensen: E sqrt(v) <= sqrt(E v) = 1
        assert!(rec.sqrt_mass.mean() < 1.0);
    }
}

#[test]
fn she_mass_second_moment_matches_volterra() {
    let c = cov();
    let grid = Grid1d::new(4.0, 256).unwrap();
    let p = ScaleParams::new(0.2, 0.0, 1.0, 0.0, &c).unwrap();
    let kappa = 0.6;
    let t = 0.25;
    let res = run_ensemble(&ensemble(grid, p, Equation::She { kappa }, 1500, vec![t])).unwrap();
    let rec = &res.records[0];
    let m = rec.mass.estimate();
    assert!((m.mean - 1.0).abs() < 4.0 * m.se, "{m:?}");
    let second = rec.mass.variance() + rec.mass.mean() * rec.mass.mean();
    let exact = she_mass_moment(kappa, 1.0, t, 64).unwrap();
    // relative SE of a second moment from 1500 samples is ~ 2-3%
    assert!((second / exact - 1.0).abs() < 0.06, "{second} vs {exact}");
}

#[test]
fn ensembles_are_reproducible() {
    let c = cov();
    let grid = Grid1d::new(3.0, 128).unwrap();
    let p = ScaleParams::new(0.2, 1.0, 0.5, 1.0, &c).unwrap();
    let cfg = ensemble(grid, p, Equation::Transport { tilted: true }, 24, vec![0.05, 0.1]);
    let a = run_ensemble(&cfg).unwrap();
    let b = run_ensemble(&cfg).unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.field.mean(), rb.field.mean());
        assert_eq!(ra.l2.mean(), rb.l2.mean());
    }
    let other = run_ensemble(&EnsembleConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.records[1].l2.mean(), other.records[1].l2.mean());
}
