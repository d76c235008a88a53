//! Mollifier profiles, the covariance `C = rho * rho`, and its scalar functionals.
//!
//! The profile `rho` lives on `[-1, 1]`; `C` is tabulated on `[-2, 2]` with the
//! same step and evaluated by linear interpolation. At scale `eps` with
//! environment strength `mu` the field covariance is `C_eps(y) = mu^2 C(y/eps)`
//! and the mollifier is `rho_eps(y) = eps^{-1/2} mu rho(y/eps)`, so that
//! `C_eps = rho_eps * rho_eps`.

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default number of tabulation intervals for `rho` on `[-1, 1]`; `C` then
/// gets twice as many on `[-2, 2]`.
pub const DEFAULT_SAMPLES: usize = 2048;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MollifierShape {
    /// Cubic B-spline on `[-1, 1]`: a triangle with rounded apex and feet (C^2).
    TriangleSmooth,
    /// `exp(-1 / (1 - y^2))` (C^infinity).
    Bump,
    /// Raised cosine `cos^2(pi y / 2)`.
    TruncatedCosine,
}

impl MollifierShape {
    pub const ALL: [MollifierShape; 3] = [
        MollifierShape::TriangleSmooth,
        MollifierShape::Bump,
        MollifierShape::TruncatedCosine,
    ];

    /// Unnormalised profile, zero outside `(-1, 1)`.
    pub fn profile(self, y: f64) -> f64 {
        if y.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            MollifierShape::TriangleSmooth => 2.0 * cubic_bspline(2.0 * y + 2.0),
            MollifierShape::Bump => (-1.0 / (1.0 - y * y)).exp(),
            MollifierShape::TruncatedCosine => {
                let c = (FRAC_PI_2 * y).cos();
                c * c
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MollifierShape::TriangleSmooth => "triangle-smooth",
            MollifierShape::Bump => "bump",
            MollifierShape::TruncatedCosine => "truncated-cosine",
        }
    }
}

impl fmt::Display for MollifierShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MollifierShape {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        MollifierShape::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| LabError::Validation(format!("unknown mollifier shape `{s}`")))
    }
}

/// Cardinal cubic B-spline supported on `[0, 4]`, unit mass.
fn cubic_bspline(x: f64) -> f64 {
    if !(0.0..4.0).contains(&x) {
        0.0
    } else if x < 1.0 {
        x * x * x / 6.0
    } else if x < 2.0 {
        (-3.0 * x * x * x + 12.0 * x * x - 12.0 * x + 4.0) / 6.0
    } else if x < 3.0 {
        (3.0 * x * x * x - 24.0 * x * x + 60.0 * x - 44.0) / 6.0
    } else {
        let u = 4.0 - x;
        u * u * u / 6.0
    }
}

/// A symmetric, compactly supported mollifier `rho` on `[-1, 1]` with prescribed mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub shape: MollifierShape,
    pub mass: f64,
    pub samples: usize,
    norm: f64,
}

impl MollifierSpec {
    pub fn new(shape: MollifierShape, mass: f64, samples: usize) -> Result<Self> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(LabError::Validation(format!(
                "mollifier mass must be finite and non-negative, got {mass}"
            )));
        }
        if samples < 16 || samples % 2 != 0 {
            return Err(LabError::Validation(format!(
                "mollifier samples must be even and >= 16, got {samples}"
            )));
        }
        let h = 2.0 / samples as f64;
        let raw: f64 = (0..=samples)
            .map(|i| shape.profile(-1.0 + i as f64 * h))
            .sum::<f64>()
            * h;
        Ok(Self {
            shape,
            mass,
            samples,
            norm: mass / raw,
        })
    }

    pub fn unit(shape: MollifierShape) -> Self {
        Self::new(shape, 1.0, DEFAULT_SAMPLES).expect("default mollifier is valid")
    }

    /// Tabulation step on `[-1, 1]`.
    pub fn step(&self) -> f64 {
        2.0 / self.samples as f64
    }

    /// Normalised density, `int rho = mass`.
    #[inline]
    pub fn density(&self, y: f64) -> f64 {
        self.norm * self.shape.profile(y)
    }

    /// Values at `y_i = -1 + i h`, `i = 0..=samples`.
    pub fn tabulate(&self) -> Vec<f64> {
        let h = self.step();
        (0..=self.samples)
            .map(|i| self.density(-1.0 + i as f64 * h))
            .collect()
    }
}

/// Checks that a tabulated profile is non-negative, even, and vanishes at the ends.
pub fn validate_profile(table: &[f64]) -> Result<()> {
    let n = table.len();
    if n < 3 {
        return Err(LabError::Validation("profile table too short".into()));
    }
    let scale = table.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if let Some((i, v)) = table.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
        return Err(LabError::Validation(format!(
            "profile negative or non-finite at sample {i}: {v}"
        )));
    }
    for i in 0..n / 2 {
        if (table[i] - table[n - 1 - i]).abs() > SYMMETRY_TOL * scale {
            return Err(LabError::Validation(format!(
                "profile not symmetric at sample {i}: {} vs {}",
                table[i],
                table[n - 1 - i]
            )));
        }
    }
    if table[0] != 0.0 || table[n - 1] != 0.0 {
        return Err(LabError::Validation(
            "profile must vanish at the edge of its support".into(),
        ));
    }
    Ok(())
}

/// The covariance `C = rho * rho` on `[-2, 2]` and its scalar functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub rho: MollifierSpec,
    table: Vec<f64>,
    step: f64,
    inv_step: f64,
    /// `C(0)`.
    pub c0: f64,
    /// `C''(0)`.
    pub c2: f64,
    /// `int C`.
    pub int_c: f64,
}

/// Tabulates `C = rho * rho` by discrete convolution and computes `C(0)`,
/// `C''(0)` (five-point stencil) and `int C`.
pub fn build_covariance(rho: &MollifierSpec) -> Result<CovarianceSpec> {
    let table = rho.tabulate();
    validate_profile(&table)?;
    covariance_from_profile(rho.clone(), &table)
}

fn covariance_from_profile(rho: MollifierSpec, profile: &[f64]) -> Result<CovarianceSpec> {
    let n = profile.len() - 1;
    let h = 2.0 / n as f64;
    let mut c = vec![0.0; 2 * n + 1];
    for (k, ck) in c.iter_mut().enumerate() {
        let lo = k.saturating_sub(n);
        let hi = k.min(n);
        let mut acc = 0.0;
        for i in lo..=hi {
            acc += profile[i] * profile[k - i];
        }
        *ck = acc * h;
    }
    // Discrete convolution of an even table is even up to rounding; make it exact.
    for k in 0..n {
        let avg = 0.5 * (c[k] + c[2 * n - k]);
        c[k] = avg;
        c[2 * n - k] = avg;
    }
    let mid = n;
    let c0 = c[mid];
    let c2 = (-c[mid + 2] + 16.0 * c[mid + 1] - 30.0 * c[mid] + 16.0 * c[mid - 1] - c[mid - 2])
        / (12.0 * h * h);
    let int_c = c.iter().sum::<f64>() * h;
    check_curvature(c2, rho.mass)?;
    Ok(CovarianceSpec {
        rho,
        table: c,
        step: h,
        inv_step: 1.0 / h,
        c0,
        c2,
        int_c,
    })
}

/// A non-vanishing covariance must have a strict maximum at the origin.
pub fn check_curvature(c2: f64, mass: f64) -> Result<()> {
    if mass > 0.0 && !(c2 < 0.0) {
        return Err(LabError::Validation(format!(
            "degenerate covariance: C''(0) = {c2} is not negative"
        )));
    }
    Ok(())
}

impl CovarianceSpec {
    /// `C(y)` by linear interpolation; zero for `|y| >= 2`.
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        let s = (y + 2.0) * self.inv_step;
        if !(s > 0.0) || s >= (self.table.len() - 1) as f64 {
            return 0.0;
        }
        let i = s as usize;
        let w = s - i as f64;
        self.table[i] * (1.0 - w) + self.table[i + 1] * w
    }

    /// Tabulation step of `C`.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// `(y, C(y))` pairs of the tabulation.
    pub fn table(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.table
            .iter()
            .enumerate()
            .map(move |(k, &c)| (-2.0 + k as f64 * self.step, c))
    }

    pub fn values(&self) -> &[f64] {
        &self.table
    }

    pub fn is_vanishing(&self) -> bool {
        self.c0 == 0.0
    }
}

/// Parameters of one scale: `(eps, mu, sigma, lambda)` and derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub eps: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// Total diffusivity `sigma^2 + mu^2 C(0)`.
    pub nu: f64,
    /// Mass of `lambda rho_eps`: `lambda mu sqrt(eps) int rho`.
    pub kappa_eps: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ScaleParams {
    /// Builds a parameter set; `alpha` and `beta` are the effective exponents
    /// at this single `eps` (`-log(mu/sigma)/log eps`, `-log(lambda)/log eps`).
    pub fn new(eps: f64, mu: f64, sigma: f64, lambda: f64, cov: &CovarianceSpec) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(LabError::Validation(format!("eps must lie in (0,1), got {eps}")));
        }
        if !(mu >= 0.0 && sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(LabError::Validation(format!(
                "mu and sigma must be finite and non-negative (mu = {mu}, sigma = {sigma})"
            )));
        }
        if mu == 0.0 && sigma == 0.0 {
            return Err(LabError::Validation(
                "at least one of mu, sigma must be positive".into(),
            ));
        }
        if !lambda.is_finite() {
            return Err(LabError::Validation(format!("lambda must be finite, got {lambda}")));
        }
        let le = eps.ln();
        let alpha = -(mu / sigma).ln() / le;
        let beta = -lambda.abs().ln() / le;
        Ok(Self {
            eps,
            mu,
            sigma,
            lambda,
            nu: sigma * sigma + mu * mu * cov.c0,
            kappa_eps: lambda * mu * eps.sqrt() * cov.rho.mass,
            alpha,
            beta,
        })
    }

    pub fn with_exponents(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    /// `C_eps(0) = mu^2 C(0)`.
    pub fn c_eps0(&self, cov: &CovarianceSpec) -> f64 {
        self.mu * self.mu * cov.c0
    }

    /// Amplitude of `rho_eps`: `rho_eps(y) = amp * rho(y / eps)`.
    pub fn rho_amplitude(&self) -> f64 {
        self.mu / self.eps.sqrt()
    }
}

/// `C_eps(y) = mu^2 C(y / eps)`; zero for `|y| >= 2 eps`.
#[inline]
pub fn scaled_covariance(cov: &CovarianceSpec, p: &ScaleParams, y: f64) -> f64 {
    p.mu * p.mu * cov.eval(y / p.eps)
}

/// Diffusion coefficient of the separation process,
/// `a_eps(y) = sigma^2 + C_eps(0) - C_eps(y)`.
#[inline]
pub fn a_eps(cov: &CovarianceSpec, p: &ScaleParams, y: f64) -> f64 {
    let m2 = p.mu * p.mu;
    p.sigma * p.sigma + m2 * (cov.c0 - cov.eval(y / p.eps))
}

/// Effective noise strength in the weak-environment limit,
/// `nu * int C(y) / (sigma^2 + C(0) - C(y)) dy` with `nu = sigma^2 + C(0)`.
pub fn kappa2_weak_env(cov: &CovarianceSpec, sigma: f64) -> Result<f64> {
    if cov.is_vanishing() {
        return Ok(0.0);
    }
    if !(sigma > 0.0) {
        return Err(LabError::Singular(format!(
            "sigma = {sigma}: C(0) - C(y) vanishes quadratically at 0, integrand not integrable"
        )));
    }
    let s2 = sigma * sigma;
    let nu = s2 + cov.c0;
    let g: Vec<f64> = cov
        .table
        .iter()
        .map(|&c| c / (s2 + cov.c0 - c))
        .collect();
    let integral = simpson_refined(&g, cov.step, 1e-8)?;
    Ok(nu * integral)
}

/// Composite Simpson on a uniform table, refined by halving the stride until
/// the relative change drops below `rtol`.
fn simpson_refined(values: &[f64], h: f64, rtol: f64) -> Result<f64> {
    let intervals = values.len() - 1;
    let mut stride = 1;
    while intervals % (stride * 2) == 0 && intervals / (stride * 2) >= 64 {
        stride *= 2;
    }
    let mut prev = simpson_strided(values, h, stride);
    while stride > 1 {
        stride /= 2;
        let cur = simpson_strided(values, h, stride);
        if (cur - prev).abs() <= rtol * cur.abs().max(f64::MIN_POSITIVE) {
            return Ok(cur);
        }
        prev = cur;
    }
    let coarse = simpson_strided(values, h, 2);
    if (prev - coarse).abs() <= rtol * prev.abs().max(f64::MIN_POSITIVE) {
        Ok(prev)
    } else {
        Err(LabError::Validation(format!(
            "quadrature did not reach relative tolerance {rtol:e} (last change {:e})",
            (prev - coarse).abs() / prev.abs()
        )))
    }
}

fn simpson_strided(values: &[f64], h: f64, stride: usize) -> f64 {
    let n = (values.len() - 1) / stride;
    debug_assert!(n % 2 == 0);
    let hh = h * stride as f64;
    let mut acc = values[0] + values[n * stride];
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * values[k * stride];
    }
    acc * hh / 3.0
}

/// Effective noise strength in the weak-diffusivity limit,
/// `sqrt(2) c nu C(0) / |C''(0)|^{1/2}` with the limiting diffusivity `nu = C(0)`.
pub fn kappa2_weak_diff(cov: &CovarianceSpec, c: f64) -> Result<f64> {
    if !(cov.c2 < 0.0) {
        return Err(LabError::Validation(format!(
            "C''(0) = {} must be negative",
            cov.c2
        )));
    }
    if !(c >= 0.0) {
        return Err(LabError::Validation(format!("c must be non-negative, got {c}")));
    }
    let nu = cov.c0;
    Ok(SQRT_2 * c * nu * cov.c0 / cov.c2.abs().sqrt())
}
