//! Decay of the tilted total mass `v_t = int V(t, y) dy` above the critical line.

use serde::{Deserialize, Serialize};

use crate::covariance::MollifierSpec;
use crate::error::{LabError, Result};
use crate::spde::{run_ensemble, EnsembleConfig, Equation};
use crate::stats::{normal_cdf, Estimate};

/// Escape probability defining the window `[-a, a]`.
pub const ESCAPE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongDisorderReport {
    /// `(t, E[v_t^{1/2}])` for each requested time.
    pub series: Vec<(f64, Estimate)>,
    /// Least-squares slope of `-log E[v_t^{1/2}]` in `t`; `None` with fewer
    /// than two positive means.
    pub fitted_rate: Option<f64>,
    /// `kappa_eps^2 / (8 a)`.
    pub predicted_rate: f64,
    pub escape_radius: f64,
    pub completed: usize,
    pub failed: usize,
}

/// `P(|sqrt(s) Z + eps W| > a)` for `Z ~ N(0, nu)` and `W` with the normalised density of `rho`.
pub fn escape_probability(rho: &MollifierSpec, nu: f64, s: f64, eps: f64, a: f64) -> f64 {
    let sd = (nu * s).sqrt();
    let tail = |shift: f64| {
        if sd > 0.0 {
            (1.0 - normal_cdf((a - shift) / sd)) + normal_cdf((-a - shift) / sd)
        } else if shift.abs() > a {
            1.0
        } else {
            0.0
        }
    };
    let tab = rho.tabulate();
    let h = rho.step();
    let total: f64 = tab.iter().sum::<f64>() * h;
    if total <= 0.0 {
        return tail(0.0);
    }
    let n = tab.len();
    let mut acc = 0.0;
    for (i, &r) in tab.iter().enumerate() {
        let w = -1.0 + i as f64 * h;
        let wt = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += wt * r * tail(eps * w);
    }
    acc * h / total
}

/// Smallest `a` (to 1e-10 relative) with escape probability below `level` at time `s`.
pub fn escape_radius(rho: &MollifierSpec, nu: f64, s: f64, eps: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LabError::Validation(format!("escape level {level} outside (0,1)")));
    }
    let mut hi = eps + (nu * s).sqrt();
    while escape_probability(rho, nu, s, eps, hi) >= level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if escape_probability(rho, nu, s, eps, mid) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Slope of the least-squares line through `(t, -log m)` over positive `m`.
pub fn fit_decay_rate(series: &[(f64, Estimate)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, e)| e.mean > 0.0)
        .map(|(t, e)| (*t, -e.mean.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs the tilted ensemble of `base` for `replicas` and records `E[v_t^{1/2}]`.
/// Replicas that blow up are dropped and counted.
pub fn strong_disorder_diagnostic(
    base: &EnsembleConfig,
    replicas: usize,
    times: &[f64],
) -> Result<StrongDisorderReport> {
    let cfg = EnsembleConfig {
        equation: Equation::Transport { tilted: true },
        replicas,
        times: times.to_vec(),
        keep_samples: false,
        boxes: None,
        ..base.clone()
    };
    let res = run_ensemble(&cfg)?;
    let series: Vec<(f64, Estimate)> = res
        .records
        .iter()
        .map(|r| (r.t, r.sqrt_mass.estimate()))
        .collect();
    let p = &cfg.params;
    let s = times.iter().cloned().fold(0.0, f64::max);
    let a = escape_radius(&cfg.cov.rho, p.nu, s, p.eps, ESCAPE_LEVEL)?;
    Ok(StrongDisorderReport {
        fitted_rate: fit_decay_rate(&series),
        predicted_rate: p.kappa_eps * p.kappa_eps / (8.0 * a),
        escape_radius: a,
        series,
        completed: res.completed,
        failed: res.failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_covariance, MollifierShape, ScaleParams};
    use crate::grid::Grid1d;
    use crate::spde::SpdeScheme;

    #[test]
    fn escape_probability_limits() {
        let rho = MollifierSpec::unit(MollifierShape::Bump);
        // pure Gaussian: two-sided tail at 1.959964 sd is 5%
        let a = escape_radius(&rho, 1.0, 1.0, 0.0, 0.05).unwrap();
        assert!((a - 1.959_963_984_540_054).abs() < 1e-8);
        // no Gaussian part: the mollifier support bounds the escape
        assert_eq!(escape_probability(&rho, 1.0, 0.0, 0.1, 0.11), 0.0);
        let p = escape_probability(&rho, 1.0, 1.0, 0.1, 2.0);
        let g = escape_probability(&rho, 1.0, 1.0, 0.0, 2.0);
        assert!(p > g);
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let series: Vec<(f64, Estimate)> = (1..6)
            .map(|i| {
                let t = 0.2 * i as f64;
                (t, Estimate::new(0.8 * (-1.7 * t).exp(), 0.0))
            })
            .collect();
        assert!((fit_decay_rate(&series).unwrap() - 1.7).abs() < 1e-12);
        assert_eq!(fit_decay_rate(&series[..1]), None);
    }

    #[test]
    fn zero_lambda_keeps_unit_mass() {
        let cov = build_covariance(&MollifierSpec::unit(MollifierShape::Bump)).unwrap();
        let p = ScaleParams::new(0.2, 0.5, 0.8, 0.0, &cov).unwrap();
        let grid = Grid1d::new(3.0, 128).unwrap();
        let scheme = SpdeScheme::default();
        let base = EnsembleConfig {
            grid,
            cov,
            params: p,
            equation: Equation::Transport { tilted: true },
            scheme,
            dt: scheme.max_dt(&grid, p.nu),
            seed: 5,
            replicas: 1,
            times: vec![],
            t0: None,
            boxes: None,
            keep_samples: false,
        };
        let rep = strong_disorder_diagnostic(&base, 6, &[0.1, 0.3]).unwrap();
        for (_, e) in &rep.series {
            assert!((e.mean - 1.0).abs() < 1e-9);
        }
        assert_eq!(rep.predicted_rate, 0.0);
        assert_eq!(rep.failed, 0);
    }
}
