//! Monte Carlo of the one-point flow through a frozen field, the two-point
//! motion `(Y1, Y2)`, the separation `D = Y1 - Y2` with its Feynman-Kac
//! weight, and occupation-band local times.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{a_eps, scaled_covariance, CovarianceSpec, ScaleParams};
use crate::error::{LabError, Result};
use crate::grid::Grid1d;
use crate::noise::stream_rng;
use crate::spde::GridField;
use crate::stats::{normal_cdf, Estimate, Welford};

/// Off-diagonal clamps tolerated before a two-point path is abandoned.
pub const MAX_CLAMPS: usize = 16;

/// Relative standard error above which an oracle result is flagged.
pub const LOW_CONFIDENCE_RSE: f64 = 0.2;

/// Bandwidth of the local-time estimator in units of `sqrt(qv dt)`.
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 8.0;
pub const MIN_BANDWIDTH_FACTOR: f64 = 4.0;

const PATHS_PER_CHUNK: usize = 256;

#[inline]
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Particles advected by one shared field realisation plus independent Brownian drivers.
#[derive(Debug, Clone)]
pub struct FlowEnsemble {
    pub positions: Vec<f64>,
    /// Set once a particle comes within `2 eps` of the periodic seam.
    pub flagged: Vec<bool>,
    pub field_seed: u64,
    pub particle_seed_base: u64,
    pub t: f64,
    pub sigma: f64,
    pub eps: f64,
    step_index: u64,
}

impl FlowEnsemble {
    pub fn new(m: usize, x0: f64, field_seed: u64, particle_seed_base: u64, sigma: f64, eps: f64) -> Self {
        Self {
            positions: vec![x0; m],
            flagged: vec![false; m],
            field_seed,
            particle_seed_base,
            t: 0.0,
            sigma,
            eps,
            step_index: 0,
        }
    }

    pub fn active(&self) -> usize {
        self.flagged.iter().filter(|f| !**f).count()
    }

    /// `X += dW(X) + sigma sqrt(dt) N`, with `dW` linearly interpolated.
    pub fn step_flow(&mut self, grid: &Grid1d, dw: &[f64], dt: f64) {
        let mut rng = stream_rng(self.particle_seed_base, self.step_index);
        let s = self.sigma * dt.sqrt();
        let edge = grid.half_width - 2.0 * self.eps;
        for (x, flag) in self.positions.iter_mut().zip(self.flagged.iter_mut()) {
            let z = normal(&mut rng);
            if *flag {
                continue;
            }
            *x += grid.interpolate(dw, *x) + s * z;
            if x.abs() >= edge {
                *flag = true;
            }
        }
        self.t += dt;
        self.step_index += 1;
    }
}

/// Histogram density of the unflagged particles on the cells of `bins`.
pub fn empirical_kernel(e: &FlowEnsemble, bins: &Grid1d) -> Result<GridField> {
    let active = e.active();
    if active == 0 {
        return Err(LabError::EmptyEnsemble);
    }
    let dx = bins.dx();
    let mut values = vec![0.0; bins.nx];
    for (x, f) in e.positions.iter().zip(&e.flagged) {
        if *f {
            continue;
        }
        let j = ((bins.wrap(*x) + bins.half_width) / dx + 0.5).floor() as usize % bins.nx;
        values[j] += 1.0;
    }
    let norm = 1.0 / (active as f64 * dx);
    values.iter_mut().for_each(|v| *v *= norm);
    Ok(GridField {
        values,
        t: e.t,
        grid: *bins,
    })
}

/// A two-point path with its Feynman-Kac exponent `A = lambda^2 int C_eps(Y1 - Y2) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointPath {
    pub y1: f64,
    pub y2: f64,
    pub a: f64,
    pub t: f64,
}

impl TwoPointPath {
    pub fn new(y1: f64, y2: f64) -> Self {
        Self { y1, y2, a: 0.0, t: 0.0 }
    }
}

/// Count of off-diagonal clamps applied to the two-point covariance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampLog {
    pub clamps: usize,
}

/// Step-size requirement for resolving the `eps`-scale correlation.
pub fn two_point_dt_limit(p: &ScaleParams) -> f64 {
    p.eps * p.eps / (10.0 * p.nu)
}

/// Default step for the separation process: `min(eps^2 / (10 nu), 1e-4 t)`.
pub fn difference_dt(p: &ScaleParams, t_final: f64) -> f64 {
    two_point_dt_limit(p).min(1e-4 * t_final)
}

/// One Euler step of the two-point motion. The increment has covariance
/// `dt [[s, c], [c, s]]` with `s = sigma^2 + C_eps(0)`, `c = C_eps(Y1 - Y2)`,
/// and both coordinates drift by `lambda c dt`.
pub fn step_two_point<R: Rng + ?Sized>(
    path: &mut TwoPointPath,
    p: &ScaleParams,
    cov: &CovarianceSpec,
    dt: f64,
    rng: &mut R,
    log: &mut ClampLog,
) -> Result<()> {
    let s = p.sigma * p.sigma + p.c_eps0(cov);
    let mut c = scaled_covariance(cov, p, path.y1 - path.y2);
    if c.abs() > s {
        c = c.clamp(-s, s);
        log.clamps += 1;
        if log.clamps > MAX_CLAMPS {
            return Err(LabError::NotPsd { clamps: log.clamps });
        }
    }
    let l11 = s.sqrt();
    let l21 = if l11 > 0.0 { c / l11 } else { 0.0 };
    let l22 = (s - l21 * l21).max(0.0).sqrt();
    let sq = dt.sqrt();
    let (z1, z2) = (normal(rng), normal(rng));
    let drift = p.lambda * c * dt;
    path.y1 += drift + sq * l11 * z1;
    path.y2 += drift + sq * (l21 * z1 + l22 * z2);
    let c_new = scaled_covariance(cov, p, path.y1 - path.y2);
    path.a += 0.5 * dt * p.lambda * p.lambda * (c + c_new);
    path.t += dt;
    Ok(())
}

/// State of the separation process with its Feynman-Kac exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceState {
    pub d: f64,
    pub a: f64,
    pub t: f64,
}

impl DifferenceState {
    pub fn new(d: f64) -> Self {
        Self { d, a: 0.0, t: 0.0 }
    }

    pub fn weight(&self) -> f64 {
        self.a.exp()
    }
}

/// `D += sqrt(2 a_eps(D) dt) N`; `A` by the trapezoid rule.
#[inline]
pub fn step_difference<R: Rng + ?Sized>(
    s: &mut DifferenceState,
    cov: &CovarianceSpec,
    p: &ScaleParams,
    dt: f64,
    rng: &mut R,
) {
    let l2 = p.lambda * p.lambda;
    let c_old = scaled_covariance(cov, p, s.d);
    let a = a_eps(cov, p, s.d);
    s.d += (2.0 * a * dt).sqrt() * normal(rng);
    if l2 != 0.0 {
        let c_new = scaled_covariance(cov, p, s.d);
        s.a += 0.5 * dt * l2 * (c_old + c_new);
    }
    s.t += dt;
}

/// Simulates `n` independent separation paths from `d0` over `steps` steps.
/// Path `i` uses its own random stream, so the result does not depend on scheduling.
pub fn simulate_differences(
    cov: &CovarianceSpec,
    p: &ScaleParams,
    d0: f64,
    dt: f64,
    steps: usize,
    n: usize,
    seed: u64,
) -> Vec<DifferenceState> {
    let chunks: Vec<usize> = (0..n).step_by(PATHS_PER_CHUNK).collect();
    chunks
        .par_iter()
        .flat_map_iter(|&lo| {
            let hi = (lo + PATHS_PER_CHUNK).min(n);
            (lo..hi).map(move |i| {
                let mut rng = stream_rng(seed, i as u64);
                let mut s = DifferenceState::new(d0);
                for _ in 0..steps {
                    step_difference(&mut s, cov, p, dt, &mut rng);
                }
                s
            })
        })
        .collect()
}

/// Simulates `n` two-point paths; returns the final states.
#[allow(clippy::too_many_arguments)]
pub fn simulate_two_point(
    cov: &CovarianceSpec,
    p: &ScaleParams,
    start: (f64, f64),
    dt: f64,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<TwoPointPath>> {
    let chunks: Vec<usize> = (0..n).step_by(PATHS_PER_CHUNK).collect();
    let parts: Vec<Vec<TwoPointPath>> = chunks
        .par_iter()
        .map(|&lo| {
            let hi = (lo + PATHS_PER_CHUNK).min(n);
            (lo..hi)
                .map(|i| {
                    let mut rng = stream_rng(seed, i as u64);
                    let mut path = TwoPointPath::new(start.0, start.1);
                    let mut log = ClampLog::default();
                    for _ in 0..steps {
                        step_two_point(&mut path, p, cov, dt, &mut rng, &mut log)?;
                    }
                    Ok(path)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Weighted mean `E[e^A f]` with its standard error.
pub fn feynman_kac_mean<T>(samples: &[T], weight: impl Fn(&T) -> f64, f: impl Fn(&T) -> f64) -> Estimate {
    let mut w = Welford::new();
    for s in samples {
        w.push(weight(s) * f(s));
    }
    w.estimate()
}

/// Estimate of the diagonal `q^lambda(t, 0)` from separation paths run to `t/2`.
///
/// The backward generator `a d^2/dy^2 + lambda^2 C_eps` is symmetric for the
/// speed measure `dy / a(y)`, so `q(t/2; y, 0) = q(t/2; 0, y) a(y) / a(0)` and
/// `q(t; 0, 0) = int q(t/2; 0, y)^2 a(y)/a(0) dy`. The square is estimated by a
/// box-kernel U-statistic over pairs of weighted endpoints.
pub fn diagonal_density(
    samples: &[DifferenceState],
    cov: &CovarianceSpec,
    p: &ScaleParams,
    h: f64,
) -> Result<Estimate> {
    let n = samples.len();
    if n < 2 {
        return Err(LabError::EmptyEnsemble);
    }
    let a0 = a_eps(cov, p, 0.0);
    let mut pts: Vec<(f64, f64, f64)> = samples
        .iter()
        .map(|s| (s.d, s.weight(), a_eps(cov, p, s.d) / a0))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // prefix sums of w and w g
    let mut pw = vec![0.0; n + 1];
    let mut pwg = vec![0.0; n + 1];
    for (i, &(_, w, g)) in pts.iter().enumerate() {
        pw[i + 1] = pw[i] + w;
        pwg[i + 1] = pwg[i] + w * g;
    }
    let inv = 1.0 / (2.0 * h);
    let mut lo = 0;
    let mut hi = 0;
    let mut proj = Welford::new();
    for i in 0..n {
        let (d, w, g) = pts[i];
        while pts[lo].0 < d - h {
            lo += 1;
        }
        while hi < n && pts[hi].0 <= d + h {
            hi += 1;
        }
        let sw = pw[hi] - pw[lo] - w;
        let swg = pwg[hi] - pwg[lo] - w * g;
        // symmetrised kernel  w_i w_j K_h (g_i + g_j) / 2
        let hi_val = 0.5 * w * inv * (g * sw + swg) / (n - 1) as f64;
        proj.push(hi_val);
    }
    let mean = proj.mean();
    let se = 2.0 * proj.variance().sqrt() / (n as f64).sqrt();
    Ok(Estimate::new(mean, se))
}

/// Occupation-band estimate of a local time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeEstimate {
    pub level: f64,
    pub h: f64,
    pub value: f64,
}

/// Streaming occupation-band local time.
///
/// For a process with `d<Z>_t = qv dt` the occupation-times formula gives
/// `int_0^t 1{|Z_s - y| <= h} qv ds = int_{y-h}^{y+h} L^a_t da`, so
/// `L^y_t ~ qv dt #{k : |Z_k - y| <= h} / (2h)`. This is the semimartingale
/// local time, for which `E[L^0_t] = E|Z_t|` when `Z_0 = 0` (Tanaka).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeAccumulator {
    pub level: f64,
    pub h: f64,
    scale: f64,
    count: u64,
}

impl LocalTimeAccumulator {
    pub fn new(level: f64, h: f64, qv: f64, dt: f64) -> Result<Self> {
        let min = MIN_BANDWIDTH_FACTOR * (qv * dt).sqrt();
        if !(h >= min) {
            return Err(LabError::Bandwidth { h, min });
        }
        Ok(Self {
            level,
            h,
            scale: qv * dt / (2.0 * h),
            count: 0,
        })
    }

    /// Default bandwidth `8 sqrt(qv dt)`.
    pub fn default_bandwidth(qv: f64, dt: f64) -> f64 {
        DEFAULT_BANDWIDTH_FACTOR * (qv * dt).sqrt()
    }

    #[inline]
    pub fn push(&mut self, z: f64) {
        if (z - self.level).abs() <= self.h {
            self.count += 1;
        }
    }

    pub fn value(&self) -> f64 {
        self.scale * self.count as f64
    }

    pub fn estimate(&self) -> LocalTimeEstimate {
        LocalTimeEstimate {
            level: self.level,
            h: self.h,
            value: self.value(),
        }
    }
}

/// Local time at `level` of a sampled path `z_0, z_1, ...` (left-point rule).
pub fn local_time(path: &[f64], level: f64, h: f64, qv: f64, dt: f64) -> Result<LocalTimeEstimate> {
    let mut acc = LocalTimeAccumulator::new(level, h, qv, dt)?;
    for &z in path.iter().take(path.len().saturating_sub(1)) {
        acc.push(z);
    }
    Ok(acc.estimate())
}

/// Monte Carlo local times at several levels for `Z = B1 - B2`, two independent
/// Brownian motions of diffusivity `nu` started together.
pub fn brownian_local_times(
    nu: f64,
    t: f64,
    dt: f64,
    levels: &[f64],
    h: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let qv = 2.0 * nu;
    let steps = (t / dt).round() as usize;
    for &y in levels {
        LocalTimeAccumulator::new(y, h, qv, dt)?;
    }
    let chunks: Vec<usize> = (0..replicas).step_by(PATHS_PER_CHUNK).collect();
    let parts: Vec<Vec<Welford>> = chunks
        .par_iter()
        .map(|&lo| {
            let hi = (lo + PATHS_PER_CHUNK).min(replicas);
            let mut acc = vec![Welford::new(); levels.len()];
            let s = (qv * dt).sqrt();
            for r in lo..hi {
                let mut rng = stream_rng(seed, r as u64);
                let mut lts: Vec<LocalTimeAccumulator> = levels
                    .iter()
                    .map(|&y| LocalTimeAccumulator::new(y, h, qv, dt).unwrap())
                    .collect();
                let mut z = 0.0;
                for _ in 0..steps {
                    for l in lts.iter_mut() {
                        l.push(z);
                    }
                    z += s * normal(&mut rng);
                }
                for (a, l) in acc.iter_mut().zip(&lts) {
                    a.push(l.value());
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Welford::new(); levels.len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(&part) {
            t.merge(p);
        }
    }
    Ok(total.iter().map(|w| w.estimate()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub estimate: Estimate,
    pub low_confidence: bool,
}

/// Settings for [`she_limit_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    pub dt: f64,
    /// Bandwidth; `None` selects `8 sqrt(2 nu dt)`.
    pub h: Option<f64>,
    pub replicas: usize,
    pub seed: u64,
}

/// `E[exp(kappa^2/(2 nu) L^0_t(B1 - B2)) f(B1(t), B2(t))]` for independent
/// Brownian motions of diffusivity `nu` from the origin.
pub fn she_limit_oracle(
    kappa: f64,
    nu: f64,
    t: f64,
    f: impl Fn(f64, f64) -> f64 + Sync,
    settings: OracleSettings,
) -> Result<OracleEstimate> {
    if !(nu > 0.0 && t > 0.0) {
        return Err(LabError::Domain(format!("need nu > 0 and t > 0 (nu = {nu}, t = {t})")));
    }
    let guard = kappa * kappa * t.sqrt() / (2.0 * nu);
    if guard > 5.0 {
        return Err(LabError::Validation(format!(
            "kappa^2 sqrt(t) / (2 nu) = {guard} exceeds 5; exponential moment not controllable"
        )));
    }
    if settings.replicas < 2 {
        return Err(LabError::EmptyEnsemble);
    }
    let qv = 2.0 * nu;
    let dt = settings.dt;
    let h = settings
        .h
        .unwrap_or_else(|| LocalTimeAccumulator::default_bandwidth(qv, dt));
    LocalTimeAccumulator::new(0.0, h, qv, dt)?;
    let steps = (t / dt).round() as usize;
    let theta = kappa * kappa / (2.0 * nu);
    let chunks: Vec<usize> = (0..settings.replicas).step_by(PATHS_PER_CHUNK).collect();
    let parts: Vec<Welford> = chunks
        .par_iter()
        .map(|&lo| {
            let hi = (lo + PATHS_PER_CHUNK).min(settings.replicas);
            let mut acc = Welford::new();
            let s = (qv * dt).sqrt();
            for r in lo..hi {
                let mut rng: ChaCha8Rng = stream_rng(settings.seed, r as u64);
                let mut lt = LocalTimeAccumulator::new(0.0, h, qv, dt).unwrap();
                let mut z = 0.0;
                for _ in 0..steps {
                    lt.push(z);
                    z += s * normal(&mut rng);
                }
                // B1 + B2 is independent of B1 - B2, with the same law.
                let sum = (qv * steps as f64 * dt).sqrt() * normal(&mut rng);
                let (b1, b2) = (0.5 * (sum + z), 0.5 * (sum - z));
                acc.push((theta * lt.value()).exp() * f(b1, b2));
            }
            acc
        })
        .collect();
    let mut total = Welford::new();
    parts.iter().for_each(|p| total.merge(p));
    let estimate = total.estimate();
    Ok(OracleEstimate {
        estimate,
        low_confidence: estimate.rel_se() > LOW_CONFIDENCE_RSE,
    })
}

/// `E[exp(theta L^0_t)]` for `L^0_t` the local time of a Brownian motion with
/// quadratic variation `qv`; by Levy, `L^0_t ~ |N(0, qv t)|`.
pub fn exp_local_time_mean(theta: f64, qv: f64, t: f64) -> f64 {
    let s = (qv * t).sqrt();
    2.0 * (0.5 * theta * theta * s * s).exp() * normal_cdf(theta * s)
}
