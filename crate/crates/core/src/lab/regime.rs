//! The `(alpha, beta)` phase diagram and parameter schedules along it.
//!
//! `alpha` measures how fast the environment strength decays relative to the
//! molecular diffusivity (`mu / sigma ~ eps^{-alpha}`), `beta` how fast the tilt
//! grows (`lambda ~ eps^{-beta}`). Left of the axis the critical line is
//! `beta = 1/2 - alpha`, right of it `beta = (1 - alpha) / 2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, ScaleParams};
use crate::error::{LabError, Result};

/// Exponent comparisons closer than this count as equal.
pub const LINE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    WeakEnv,
    Neutral,
    WeakDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    WeakDisorder,
    CriticalSheProven,
    CriticalSheConjectured,
    StrongDisorder,
    StickyBoundary,
    ArratiaBoundary,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::WeakDisorder,
        Regime::CriticalSheProven,
        Regime::CriticalSheConjectured,
        Regime::StrongDisorder,
        Regime::StickyBoundary,
        Regime::ArratiaBoundary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::WeakDisorder => "weak-disorder",
            Regime::CriticalSheProven => "critical-SHE-proven",
            Regime::CriticalSheConjectured => "critical-SHE-conjectured",
            Regime::StrongDisorder => "strong-disorder",
            Regime::StickyBoundary => "sticky-boundary",
            Regime::ArratiaBoundary => "arratia-boundary",
        }
    }

    pub fn is_critical(self) -> bool {
        matches!(self, Regime::CriticalSheProven | Regime::CriticalSheConjectured)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LabError::Validation(format!("unknown regime `{s}`")))
    }
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::WeakEnv => "weak-env",
            Side::Neutral => "neutral",
            Side::WeakDiff => "weak-diff",
        }
    }

    fn of(alpha: f64) -> Side {
        if alpha.abs() <= LINE_TOL {
            Side::Neutral
        } else if alpha < 0.0 {
            Side::WeakEnv
        } else {
            Side::WeakDiff
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A point of the phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimePoint {
    pub alpha: f64,
    pub beta: f64,
    pub side: Side,
}

impl RegimePoint {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(LabError::Validation(format!(
                "exponents must be finite (alpha = {alpha}, beta = {beta})"
            )));
        }
        if beta < -LINE_TOL {
            return Err(LabError::Validation(format!("beta = {beta} must be non-negative")));
        }
        Ok(Self {
            alpha,
            beta: beta.max(0.0),
            side: Side::of(alpha),
        })
    }

    /// The critical `beta` at this `alpha`; negative values mean the line has
    /// left the diagram.
    pub fn critical_beta(&self) -> f64 {
        if self.alpha <= 0.0 {
            0.5 - self.alpha
        } else {
            0.5 * (1.0 - self.alpha)
        }
    }
}

pub fn classify_regime(pt: &RegimePoint) -> Result<Regime> {
    let RegimePoint { alpha, beta, .. } = *pt;
    if beta < -LINE_TOL {
        return Err(LabError::Validation(format!("beta = {beta} must be non-negative")));
    }
    let at_zero_beta = beta.abs() <= LINE_TOL;
    if at_zero_beta && (alpha - 1.0).abs() <= LINE_TOL {
        return Ok(Regime::StickyBoundary);
    }
    if at_zero_beta && alpha > 1.0 {
        return Ok(Regime::ArratiaBoundary);
    }
    let crit = pt.critical_beta();
    if (beta - crit).abs() <= LINE_TOL {
        // the proven part of the line stops short of the axis
        return Ok(if alpha < -LINE_TOL {
            Regime::CriticalSheProven
        } else {
            Regime::CriticalSheConjectured
        });
    }
    Ok(if beta < crit {
        Regime::WeakDisorder
    } else {
        Regime::StrongDisorder
    })
}

/// Amplitudes multiplying the power laws of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleBase {
    pub mu0: f64,
    pub sigma0: f64,
    pub lambda0: f64,
    /// Limit of `kappa_eps` enforced on the proven critical line.
    pub kappa: f64,
    /// Hold `nu` fixed by solving for `sigma`.
    pub nu: Option<f64>,
}

impl Default for ScheduleBase {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            sigma0: 1.0,
            lambda0: 1.0,
            kappa: 1.0,
            nu: None,
        }
    }
}

pub fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(LabError::Validation("eps list is empty".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(LabError::Validation(format!("eps values must lie in (0,1): {eps_list:?}")));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Validation(format!(
            "eps list must be strictly decreasing: {eps_list:?}"
        )));
    }
    Ok(())
}

/// Realises the exponents of `pt` along `eps_list`:
/// `mu = mu0 eps^{max(-alpha,0)}`, `sigma = sigma0 eps^{max(alpha,0)}`,
/// `lambda = lambda0 eps^{-beta}`.
///
/// On the proven critical line `mu` is then fixed by `kappa_eps = kappa`,
/// i.e. `mu = kappa / (lambda sqrt(eps) mass)`. With a fixed `nu`, `sigma`
/// is recomputed from `nu - mu^2 C(0)`.
pub fn schedule(
    pt: &RegimePoint,
    eps_list: &[f64],
    base: &ScheduleBase,
    cov: &CovarianceSpec,
) -> Result<Vec<ScaleParams>> {
    check_eps_list(eps_list)?;
    let regime = classify_regime(pt)?;
    let mass = cov.rho.mass;
    eps_list
        .iter()
        .map(|&eps| {
            let lambda = base.lambda0 * eps.powf(-pt.beta);
            let mu = if regime == Regime::CriticalSheProven {
                if lambda == 0.0 || mass == 0.0 {
                    return Err(LabError::Validation(
                        "critical schedule needs nonzero lambda and mollifier mass".into(),
                    ));
                }
                base.kappa / (lambda * eps.sqrt() * mass)
            } else {
                base.mu0 * eps.powf((-pt.alpha).max(0.0))
            };
            let sigma = match base.nu {
                Some(nu) => {
                    let s2 = nu - mu * mu * cov.c0;
                    if s2 < 0.0 {
                        return Err(LabError::Validation(format!(
                            "nu = {nu} is below mu^2 C(0) = {} at eps = {eps}",
                            mu * mu * cov.c0
                        )));
                    }
                    s2.sqrt()
                }
                None => base.sigma0 * eps.powf(pt.alpha.max(0.0)),
            };
            Ok(ScaleParams::new(eps, mu, sigma, lambda, cov)?.with_exponents(pt.alpha, pt.beta))
        })
        .collect()
}

/// `mu(eps) sqrt(log(1/eps))` along a schedule; must tend to zero on the proven line.
pub fn theorem_hypothesis(points: &[ScaleParams]) -> Vec<f64> {
    points
        .iter()
        .map(|p| p.mu * (1.0 / p.eps).ln().sqrt())
        .collect()
}

pub fn is_strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Evenly spaced values over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Classification of every point of an `n x m` exponent grid, row-major in `alpha`.
pub fn sweep_grid(
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    points: (usize, usize),
) -> Result<Vec<(RegimePoint, Regime)>> {
    let mut out = Vec::with_capacity(points.0 * points.1);
    for a in linspace(alpha_range.0, alpha_range.1, points.0) {
        for b in linspace(beta_range.0, beta_range.1, points.1) {
            let pt = RegimePoint::new(a, b)?;
            out.push((pt, classify_regime(&pt)?));
        }
    }
    Ok(out)
}
