//! Experiment configuration: a TOML document with the sections
//! `mollifier`, `grid`, `noise`, `schedule` and `experiment`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{build_covariance, CovarianceSpec, MollifierShape, MollifierSpec, ScaleParams, DEFAULT_SAMPLES};
use crate::error::{LabError, Result};
use crate::grid::Grid1d;
use crate::spde::{FluxForm, SpdeScheme};
use crate::lab::regime::{check_eps_list, schedule, RegimePoint, ScheduleBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MeanKernel,
    SecondMoment,
    CriticalLine,
    WeakDisorder,
    StrongDisorder,
    PhaseSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::MeanKernel,
        ExperimentKind::SecondMoment,
        ExperimentKind::CriticalLine,
        ExperimentKind::WeakDisorder,
        ExperimentKind::StrongDisorder,
        ExperimentKind::PhaseSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MeanKernel => "mean-kernel",
            ExperimentKind::SecondMoment => "second-moment",
            ExperimentKind::CriticalLine => "critical-line",
            ExperimentKind::WeakDisorder => "weak-disorder",
            ExperimentKind::StrongDisorder => "strong-disorder",
            ExperimentKind::PhaseSweep => "phase-sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::Validation(format!("unknown experiment kind `{s}`")))
    }
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_cells() -> f64 {
    16.0
}

fn default_replicas() -> usize {
    100
}

fn default_stability() -> f64 {
    0.25
}

fn default_flux() -> FluxForm {
    FluxForm::ConservativeCentral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSection {
    pub shape: MollifierShape,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Half-width of the periodic domain `[-L, L)`.
    #[serde(rename = "L")]
    pub half_width: f64,
    pub nx: usize,
    /// Time step of the SPDE solvers; the largest stable step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_stability")]
    pub stability_factor: f64,
    #[serde(default = "default_flux")]
    pub flux_form: FluxForm,
    /// Resolution of the `q` solver grids.
    #[serde(default = "default_cells")]
    pub cells_per_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

/// Either explicit `(mu, sigma | nu, lambda)` held fixed across `eps`, or
/// exponents `(alpha, beta)` with the amplitudes as prefactors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Target of `kappa_eps` on the proven critical line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Replace `lambda` by `k / (mu sqrt(eps) mass)` for each listed `k`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kappa_list: Vec<f64>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Separation paths for the two-point estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Box-kernel bandwidth for the two-point diagonal estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub mollifier: MollifierSection,
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub schedule: ScheduleSection,
    pub experiment: ExperimentSection,
}

/// Collects validation problems, each tagged with its config path.
#[derive(Default)]
struct Problems(Vec<(String, String)>);

impl Problems {
    fn check(&mut self, ok: bool, path: &str, msg: impl Into<String>) {
        if !ok {
            self.0.push((path.to_string(), msg.into()));
        }
    }

    fn into_result(self) -> Result<()> {
        match self.0.len() {
            0 => Ok(()),
            1 => {
                let (path, msg) = self.0.into_iter().next().unwrap();
                Err(LabError::Config { path, msg })
            }
            _ => {
                let path = self.0[0].0.clone();
                let msg = self
                    .0
                    .iter()
                    .map(|(p, m)| format!("{p}: {m}"))
                    .collect::<Vec<_>>()
                    .join("; ");
                Err(LabError::Config { path, msg })
            }
        }
    }
}

impl LabConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: LabConfig = toml::from_str(text).map_err(|e| LabError::Config {
            path: "<document>".into(),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Static checks that need no solver; every failing key is reported.
    pub fn validate(&self) -> Result<()> {
        let mut pr = Problems::default();
        let m = &self.mollifier;
        pr.check(m.mass >= 0.0 && m.mass.is_finite(), "mollifier.mass", "must be finite and non-negative");
        pr.check(m.samples >= 16 && m.samples % 2 == 0, "mollifier.samples", "must be even and at least 16");
        let g = &self.grid;
        pr.check(g.half_width > 0.0 && g.half_width.is_finite(), "grid.L", "must be positive");
        pr.check(g.nx >= 8, "grid.nx", "must be at least 8");
        if let Some(dt) = g.dt {
            pr.check(dt > 0.0 && dt.is_finite(), "grid.dt", "must be positive");
        }
        pr.check(
            g.stability_factor > 0.0 && g.stability_factor < 1.0,
            "grid.stability_factor",
            "must lie in (0,1)",
        );
        pr.check(g.cells_per_eps >= 8.0, "grid.cells_per_eps", "must be at least 8");
        pr.check(self.noise.replicas > 0, "noise.replicas", "must be positive");
        let s = &self.schedule;
        if let Err(e) = check_eps_list(&s.eps) {
            pr.check(false, "schedule.eps", e.to_string());
        }
        pr.check(!s.times.is_empty(), "schedule.times", "must not be empty");
        pr.check(
            s.times.iter().all(|&t| t > 0.0 && t.is_finite()) && s.times.windows(2).all(|w| w[0] < w[1]),
            "schedule.times",
            "must be positive and strictly increasing",
        );
        let exps = s.alpha.is_some() as u8 + s.beta.is_some() as u8;
        pr.check(exps != 1, "schedule.alpha", "alpha and beta must be given together");
        if exps == 0 {
            pr.check(s.mu.is_some(), "schedule.mu", "required unless alpha and beta are given");
            pr.check(
                s.sigma.is_some() || s.nu.is_some(),
                "schedule.sigma",
                "one of sigma or nu is required unless alpha and beta are given",
            );
        }
        if let Some(b) = s.beta {
            pr.check(b >= 0.0, "schedule.beta", "must be non-negative");
        }
        pr.check(
            s.kappa_list.windows(2).all(|w| w[0] < w[1]) && s.kappa_list.iter().all(|&k| k > 0.0),
            "schedule.kappa_list",
            "must be positive and increasing",
        );
        let e = &self.experiment;
        if let Some(h) = e.bandwidth {
            pr.check(h > 0.0, "experiment.bandwidth", "must be positive");
        }
        if let Some(n) = e.paths {
            pr.check(n >= 2, "experiment.paths", "at least two paths are needed");
        }
        if e.kind == ExperimentKind::PhaseSweep {
            pr.check(e.alpha_range.is_some(), "experiment.alpha_range", "required for phase-sweep");
            pr.check(e.beta_range.is_some(), "experiment.beta_range", "required for phase-sweep");
            if let Some([lo, _]) = e.beta_range {
                pr.check(lo >= 0.0, "experiment.beta_range", "must be non-negative");
            }
        }
        if e.kind == ExperimentKind::CriticalLine {
            pr.check(
                s.alpha.is_some(),
                "schedule.alpha",
                "critical-line runs need the exponents of the line",
            );
        }
        pr.into_result()
    }

    /// Canonical text of the resolved config; defaults are written out.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn mollifier_spec(&self) -> Result<MollifierSpec> {
        MollifierSpec::new(self.mollifier.shape, self.mollifier.mass, self.mollifier.samples)
    }

    pub fn covariance(&self) -> Result<CovarianceSpec> {
        build_covariance(&self.mollifier_spec()?)
    }

    pub fn grid(&self) -> Result<Grid1d> {
        Grid1d::new(self.grid.half_width, self.grid.nx)
    }

    pub fn scheme(&self) -> SpdeScheme {
        SpdeScheme {
            flux_form: self.grid.flux_form,
            stability_factor: self.grid.stability_factor,
        }
    }

    pub fn regime_point(&self) -> Result<Option<RegimePoint>> {
        match (self.schedule.alpha, self.schedule.beta) {
            (Some(a), Some(b)) => Ok(Some(RegimePoint::new(a, b)?)),
            _ => Ok(None),
        }
    }

    pub fn schedule_base(&self) -> ScheduleBase {
        let s = &self.schedule;
        ScheduleBase {
            mu0: s.mu.unwrap_or(1.0),
            sigma0: s.sigma.unwrap_or(1.0),
            lambda0: s.lambda.unwrap_or(1.0),
            kappa: s.kappa.unwrap_or(1.0),
            nu: s.nu,
        }
    }

    /// Parameters for every `eps` (and every `kappa_list` entry, innermost).
    pub fn scale_points(&self, cov: &CovarianceSpec) -> Result<Vec<ScaleParams>> {
        let s = &self.schedule;
        let base = match self.regime_point()? {
            Some(pt) => schedule(&pt, &s.eps, &self.schedule_base(), cov)?,
            None => {
                check_eps_list(&s.eps)?;
                let mu = s.mu.unwrap_or(0.0);
                s.eps
                    .iter()
                    .map(|&eps| {
                        let sigma = match (s.sigma, s.nu) {
                            (Some(sg), _) => sg,
                            (None, Some(nu)) => {
                                let s2 = nu - mu * mu * cov.c0;
                                if s2 < 0.0 {
                                    return Err(LabError::Config {
                                        path: "schedule.nu".into(),
                                        msg: format!("nu = {nu} is below mu^2 C(0) = {}", mu * mu * cov.c0),
                                    });
                                }
                                s2.sqrt()
                            }
                            (None, None) => unreachable!("validated"),
                        };
                        ScaleParams::new(eps, mu, sigma, s.lambda.unwrap_or(0.0), cov)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        if s.kappa_list.is_empty() {
            return Ok(base);
        }
        let mass = cov.rho.mass;
        let mut out = Vec::new();
        for p in base {
            if p.mu == 0.0 || mass == 0.0 {
                return Err(LabError::Config {
                    path: "schedule.kappa_list".into(),
                    msg: "needs a positive mu and mollifier mass".into(),
                });
            }
            for &k in &s.kappa_list {
                let lambda = k / (p.mu * p.eps.sqrt() * mass);
                let q = ScaleParams::new(p.eps, p.mu, p.sigma, lambda, cov)?;
                out.push(match self.regime_point()? {
                    Some(pt) => q.with_exponents(pt.alpha, pt.beta),
                    None => q,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[mollifier]
shape = "bump"

[grid]
L = 4.0
nx = 128

[noise]
seed = 11
replicas = 4

[schedule]
eps = [0.2, 0.1]
mu = 1.0
sigma = 1.0
lambda = 2.0
times = [0.1, 0.2]

[experiment]
kind = "mean-kernel"
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = LabConfig::parse(BASE).unwrap();
        assert_eq!(c.mollifier.mass, 1.0);
        assert_eq!(c.mollifier.samples, DEFAULT_SAMPLES);
        assert_eq!(c.grid.cells_per_eps, 16.0);
        assert_eq!(c.experiment.kind, ExperimentKind::MeanKernel);
        let cov = c.covariance().unwrap();
        let pts = c.scale_points(&cov).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].lambda, 2.0);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = LabConfig::parse(BASE).unwrap();
        let b = LabConfig::parse(&BASE.replace("seed = 11", "seed   =   11")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = LabConfig::parse(&BASE.replace("seed = 11", "seed = 12")).unwrap();
        assert_ne!(a.hash(), c.hash());
        // defaults written explicitly hash the same as omitted ones
        let d = LabConfig::parse(&BASE.replace("shape = \"bump\"", "shape = \"bump\"\nmass = 1.0")).unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn reports_config_paths() {
        let bad = BASE.replace("eps = [0.2, 0.1]", "eps = [0.1, 0.2]");
        match LabConfig::parse(&bad) {
            Err(LabError::Config { path, .. }) => assert_eq!(path, "schedule.eps"),
            other => panic!("{other:?}"),
        }
        let two = BASE.replace("nx = 128", "nx = 2").replace("replicas = 4", "replicas = 0");
        match LabConfig::parse(&two) {
            Err(LabError::Config { path, msg }) => {
                assert_eq!(path, "grid.nx");
                assert!(msg.contains("noise.replicas"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            LabConfig::parse(&BASE.replace("nx = 128", "nx = 128\nbogus = 1")),
            Err(LabError::Config { .. })
        ));
        assert!(matches!(
            LabConfig::parse(&BASE.replace("mean-kernel", "nonsense")),
            Err(LabError::Config { .. })
        ));
    }

    #[test]
    fn kappa_list_sets_lambda() {
        let text = BASE.replace("times = [0.1, 0.2]", "times = [0.1, 0.2]\nkappa_list = [3.0, 6.0]");
        let c = LabConfig::parse(&text).unwrap();
        let cov = c.covariance().unwrap();
        let pts = c.scale_points(&cov).unwrap();
        assert_eq!(pts.len(), 4);
        assert!((pts[1].kappa_eps - 6.0).abs() < 1e-12);
        assert_eq!(pts[2].eps, 0.1);
    }

    #[test]
    fn exponent_schedule_with_fixed_nu() {
        let text = BASE
            .replace("mu = 1.0\nsigma = 1.0\nlambda = 2.0", "alpha = -0.5\nbeta = 1.0\nkappa = 1.0\nnu = 1.0")
            .replace("mean-kernel", "critical-line");
        let c = LabConfig::parse(&text).unwrap();
        let cov = c.covariance().unwrap();
        for p in c.scale_points(&cov).unwrap() {
            assert!((p.kappa_eps - 1.0).abs() < 1e-12);
            assert!((p.nu - 1.0).abs() < 1e-12);
        }
    }
}
