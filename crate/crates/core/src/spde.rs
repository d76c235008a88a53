//! Explicit finite-difference solvers on the periodic grid: the transport
//! SPDE for the kernel density, its tilted version, and the stochastic heat
//! equation; plus the tilt map, the (mollified) L2 pairings, and a parallel
//! replica ensemble runner.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, ScaleParams};
use crate::error::{LabError, Result};
use crate::grid::Grid1d;
use crate::noise::{FieldGenerator, NoiseGrid};
use crate::stats::{FieldWelford, Welford};

/// Relative slack for the "standard deviation at least two cells" rule.
const RESOLUTION_SLACK: f64 = 1e-12;

/// Replicas per parallel work unit; fixed so that reductions are order-stable.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxForm {
    ConservativeCentral,
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeScheme {
    pub flux_form: FluxForm,
    pub stability_factor: f64,
}

impl Default for SpdeScheme {
    fn default() -> Self {
        Self {
            flux_form: FluxForm::ConservativeCentral,
            stability_factor: 0.25,
        }
    }
}

impl SpdeScheme {
    /// Largest explicit step for diffusivity `nu` on `grid`.
    pub fn max_dt(&self, grid: &Grid1d, nu: f64) -> f64 {
        let dx = grid.dx();
        self.stability_factor * dx * dx / nu
    }

    pub fn check_cfl(&self, grid: &Grid1d, nu: f64, dt: f64) -> Result<()> {
        let limit = self.max_dt(grid, nu);
        if dt > limit * (1.0 + 1e-12) {
            return Err(LabError::Cfl { dt, limit });
        }
        Ok(())
    }
}

/// Heuristic bound for the multiplicative gradient noise:
/// `dt <= dx / (10 lambda mu sqrt(C(0)/eps))`.
pub fn noise_dt_limit(grid: &Grid1d, cov: &CovarianceSpec, p: &ScaleParams) -> f64 {
    let rate = p.lambda.abs() * p.mu * (cov.c0 / p.eps).sqrt();
    if rate == 0.0 {
        f64::INFINITY
    } else {
        grid.dx() / (10.0 * rate)
    }
}

/// A function on the periodic grid at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
    pub t: f64,
    pub grid: Grid1d,
}

impl GridField {
    pub fn zeros(grid: Grid1d, t: f64) -> Self {
        Self {
            values: vec![0.0; grid.nx],
            t,
            grid,
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn l2_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.dx()
    }

    /// Total mass carried by negative values (a diagnostic of central-difference undershoot).
    pub fn negative_mass(&self) -> f64 {
        -self.values.iter().filter(|v| **v < 0.0).sum::<f64>() * self.grid.dx()
    }

    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn check_finite(&self, time_index: usize) -> Result<()> {
        if self.values.iter().sum::<f64>().is_finite() {
            Ok(())
        } else {
            Err(LabError::BlowUp { time_index })
        }
    }
}

/// Gaussian density with variance `nu t`.
pub fn heat_kernel(nu: f64, t: f64, y: f64) -> Result<f64> {
    if !(t > 0.0) || !(nu > 0.0) {
        return Err(LabError::Domain(format!(
            "heat kernel needs t > 0 and nu > 0 (t = {t}, nu = {nu})"
        )));
    }
    let v = nu * t;
    Ok((-y * y / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
}

/// Heat kernel wrapped onto a circle of the given period; image terms are
/// added until they fall below `1e-14` of the leading one.
pub fn periodic_heat_kernel(nu: f64, t: f64, y: f64, period: f64) -> Result<f64> {
    let lead = heat_kernel(nu, t, y)?;
    let mut acc = lead;
    let peak = heat_kernel(nu, t, 0.0)?;
    for k in 1.. {
        let a = heat_kernel(nu, t, y + k as f64 * period)?;
        let b = heat_kernel(nu, t, y - k as f64 * period)?;
        acc += a + b;
        if a + b < 1e-14 * peak {
            break;
        }
    }
    Ok(acc)
}

/// The wrapped heat kernel sampled on the grid.
pub fn heat_kernel_field(grid: &Grid1d, nu: f64, t: f64) -> Result<GridField> {
    let period = grid.period();
    let values = (0..grid.nx)
        .map(|j| periodic_heat_kernel(nu, t, grid.x(j), period))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridField {
        values,
        t,
        grid: *grid,
    })
}

/// Default start time replacing the delta initial datum: `4 dx^2 / nu`.
pub fn default_t0(grid: &Grid1d, nu: f64) -> f64 {
    let dx = grid.dx();
    4.0 * dx * dx / nu
}

/// `p_{t0}` on the grid, standing in for `delta_0`.
pub fn init_delta(grid: &Grid1d, nu: f64, t0: Option<f64>) -> Result<GridField> {
    let t0 = t0.unwrap_or_else(|| default_t0(grid, nu));
    let sd = (nu * t0).sqrt();
    let dx = grid.dx();
    if sd < 2.0 * dx * (1.0 - RESOLUTION_SLACK) {
        return Err(LabError::Resolution(format!(
            "initial kernel sd {sd:e} below two cells ({:e})",
            2.0 * dx
        )));
    }
    heat_kernel_field(grid, nu, t0)
}

#[inline]
fn laplacian(v: &[f64], j: usize, n: usize) -> f64 {
    let l = if j == 0 { v[n - 1] } else { v[j - 1] };
    let r = if j + 1 == n { v[0] } else { v[j + 1] };
    l - 2.0 * v[j] + r
}

/// In-place stepper with scratch storage for the transport and heat equations.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub scheme: SpdeScheme,
    scratch: Vec<f64>,
    flux: Vec<f64>,
}

impl Stepper {
    pub fn new(scheme: SpdeScheme, nx: usize) -> Self {
        Self {
            scheme,
            scratch: vec![0.0; nx],
            flux: vec![0.0; nx],
        }
    }

    /// One Euler-Maruyama step of
    /// `dV = nu/2 V'' dt + lambda_term V dW - d_y(V dW)`;
    /// the noise multiplies the pre-step state.
    pub fn transport(
        &mut self,
        state: &mut GridField,
        dw: &[f64],
        nu: f64,
        lambda_term: f64,
        dt: f64,
        time_index: usize,
    ) -> Result<()> {
        let grid = state.grid;
        self.scheme.check_cfl(&grid, nu, dt)?;
        let n = grid.nx;
        let dx = grid.dx();
        let diff = 0.5 * nu * dt / (dx * dx);
        let v = &state.values;
        let out = &mut self.scratch;
        match self.scheme.flux_form {
            FluxForm::ConservativeCentral => {
                let f = &mut self.flux;
                for j in 0..n {
                    f[j] = v[j] * dw[j];
                }
                let c = 0.5 / dx;
                for j in 0..n {
                    let jl = if j == 0 { n - 1 } else { j - 1 };
                    let jr = if j + 1 == n { 0 } else { j + 1 };
                    out[j] = v[j] + diff * (v[jl] - 2.0 * v[j] + v[jr]) + lambda_term * f[j]
                        - c * (f[jr] - f[jl]);
                }
            }
            FluxForm::Upwind => {
                // face flux at j + 1/2
                let f = &mut self.flux;
                for j in 0..n {
                    let jr = if j + 1 == n { 0 } else { j + 1 };
                    let u = 0.5 * (dw[j] + dw[jr]);
                    f[j] = if u >= 0.0 { u * v[j] } else { u * v[jr] };
                }
                let c = 1.0 / dx;
                for j in 0..n {
                    let jl = if j == 0 { n - 1 } else { j - 1 };
                    out[j] = v[j]
                        + diff * laplacian(v, j, n)
                        + lambda_term * v[j] * dw[j]
                        - c * (f[j] - f[jl]);
                }
            }
        }
        std::mem::swap(&mut state.values, &mut self.scratch);
        state.t += dt;
        state.check_finite(time_index)
    }

    /// One step of `dZ = nu/2 Z'' dt + kappa Z xi / dx` with white increments `xi`.
    pub fn she(
        &mut self,
        state: &mut GridField,
        xi: &[f64],
        kappa: f64,
        nu: f64,
        dt: f64,
        time_index: usize,
    ) -> Result<()> {
        let grid = state.grid;
        self.scheme.check_cfl(&grid, nu, dt)?;
        let n = grid.nx;
        let dx = grid.dx();
        let diff = 0.5 * nu * dt / (dx * dx);
        let k = kappa / dx;
        let v = &state.values;
        for j in 0..n {
            self.scratch[j] = v[j] + diff * laplacian(v, j, n) + k * v[j] * xi[j];
        }
        std::mem::swap(&mut state.values, &mut self.scratch);
        state.t += dt;
        state.check_finite(time_index)
    }
}

/// Functional form of [`Stepper::transport`].
#[allow(clippy::too_many_arguments)]
pub fn step_transport(
    state: &GridField,
    dw: &[f64],
    nu: f64,
    lambda_term: f64,
    dt: f64,
    scheme: SpdeScheme,
    time_index: usize,
) -> Result<GridField> {
    let mut s = state.clone();
    Stepper::new(scheme, state.grid.nx).transport(&mut s, dw, nu, lambda_term, dt, time_index)?;
    Ok(s)
}

/// Functional form of [`Stepper::she`].
pub fn step_she(
    state: &GridField,
    xi: &[f64],
    kappa: f64,
    nu: f64,
    dt: f64,
    scheme: SpdeScheme,
    time_index: usize,
) -> Result<GridField> {
    let mut s = state.clone();
    Stepper::new(scheme, state.grid.nx).she(&mut s, xi, kappa, nu, dt, time_index)?;
    Ok(s)
}

/// Values of a periodic field translated by `shift`: `out_j = u(x_j + shift)`,
/// computed exactly for band-limited data by a Fourier phase factor.
pub fn spectral_shift(values: &[f64], dx: f64, shift: f64) -> Vec<f64> {
    let n = values.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let period = n as f64 * dx;
    for (k, b) in buf.iter_mut().enumerate() {
        let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        if n % 2 == 0 && k == n / 2 {
            // Nyquist mode: keep the real part of the shifted cosine.
            *b *= (2.0 * PI * m * shift / period).cos();
            continue;
        }
        let phase = 2.0 * PI * m * shift / period;
        *b *= Complex::new(phase.cos(), phase.sin());
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Tilt of a kernel at time `t`: `e^{nu lambda^2 t / 2 + lambda y} u(y + lambda nu t)`.
///
/// Points whose shifted argument leaves `[-L, L)` are set to zero.
pub fn tilt_kernel(u: &GridField, lambda: f64, nu: f64) -> Result<GridField> {
    if lambda == 0.0 {
        return Ok(u.clone());
    }
    let grid = u.grid;
    let shift = lambda * nu * u.t;
    if shift.abs() > 0.5 * grid.half_width {
        return Err(LabError::Window(format!(
            "frame shift {shift} exceeds half the half-width {}",
            0.5 * grid.half_width
        )));
    }
    let shifted = spectral_shift(&u.values, grid.dx(), shift);
    let g0 = 0.5 * nu * lambda * lambda * u.t;
    let values = (0..grid.nx)
        .map(|j| {
            let y = grid.x(j);
            let z = y + shift;
            if z < -grid.half_width || z >= grid.half_width {
                0.0
            } else {
                (g0 + lambda * y).exp() * shifted[j]
            }
        })
        .collect();
    Ok(GridField {
        values,
        t: u.t,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerProducts {
    pub l2: f64,
    pub l2_mollified: f64,
}

/// `(f, g)_2` and `(f * rho_eps, g * rho_eps)_2` with circular convolution.
pub fn inner_products(f: &GridField, g: &GridField, rho_eps: &FieldGenerator) -> InnerProducts {
    let dx = f.grid.dx();
    let n = f.grid.nx;
    let l2 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() * dx;
    let mut fr = vec![0.0; n];
    let mut gr = vec![0.0; n];
    rho_eps.convolve_into(&f.values, &mut fr);
    rho_eps.convolve_into(&g.values, &mut gr);
    // (f * rho)(x_j) = dx sum_i f_i rho(x_j - x_i)
    let l2_mollified = fr.iter().zip(&gr).map(|(a, b)| a * b).sum::<f64>() * dx * dx * dx;
    InnerProducts { l2, l2_mollified }
}

/// Which equation an ensemble integrates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equation {
    /// Transport SPDE with mollified noise; `tilted` adds `lambda V dW`.
    Transport { tilted: bool },
    /// Stochastic heat equation driven by the raw white noise.
    She { kappa: f64 },
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub grid: Grid1d,
    pub cov: CovarianceSpec,
    pub params: ScaleParams,
    pub equation: Equation,
    pub scheme: SpdeScheme,
    pub dt: f64,
    pub seed: u64,
    pub replicas: usize,
    /// Output times; each is rounded to the nearest step.
    pub times: Vec<f64>,
    pub t0: Option<f64>,
    /// Indicator boxes `A`, `B` for the product `(int_A V)(int_B V)`.
    pub boxes: Option<((f64, f64), (f64, f64))>,
    pub keep_samples: bool,
}

#[derive(Debug, Clone)]
pub struct RecordStats {
    pub t: f64,
    pub step: usize,
    pub field: FieldWelford,
    pub mass: Welford,
    pub l2: Welford,
    pub sqrt_mass: Welford,
    pub box_product: Welford,
    pub negative_mass: Welford,
    /// Per-replica fields, in replica order, when requested.
    pub samples: Vec<Vec<f64>>,
    /// Per-replica `sqrt(mass)`, in replica order.
    pub sqrt_mass_samples: Vec<f64>,
}

impl RecordStats {
    fn new(t: f64, step: usize, nx: usize) -> Self {
        Self {
            t,
            step,
            field: FieldWelford::new(nx),
            mass: Welford::new(),
            l2: Welford::new(),
            sqrt_mass: Welford::new(),
            box_product: Welford::new(),
            negative_mass: Welford::new(),
            samples: Vec::new(),
            sqrt_mass_samples: Vec::new(),
        }
    }

    fn merge(&mut self, other: RecordStats) {
        self.field.merge(&other.field);
        self.mass.merge(&other.mass);
        self.l2.merge(&other.l2);
        self.sqrt_mass.merge(&other.sqrt_mass);
        self.box_product.merge(&other.box_product);
        self.negative_mass.merge(&other.negative_mass);
        self.samples.extend(other.samples);
        self.sqrt_mass_samples.extend(other.sqrt_mass_samples);
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub grid: Grid1d,
    pub t0: f64,
    pub dt: f64,
    pub records: Vec<RecordStats>,
    pub completed: usize,
    /// Replicas dropped after a numerical blow-up.
    pub failed: usize,
}

impl EnsembleConfig {
    pub fn nu(&self) -> f64 {
        self.params.nu
    }

    fn start(&self) -> f64 {
        self.t0.unwrap_or_else(|| default_t0(&self.grid, self.nu()))
    }

    /// Step indices of the requested output times.
    pub fn record_steps(&self) -> Result<Vec<usize>> {
        let t0 = self.start();
        self.times
            .iter()
            .map(|&t| {
                if t < t0 {
                    return Err(LabError::Validation(format!(
                        "output time {t} precedes the start time {t0}"
                    )));
                }
                Ok(((t - t0) / self.dt).round() as usize)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(LabError::EmptyEnsemble);
        }
        self.scheme.check_cfl(&self.grid, self.nu(), self.dt)?;
        if let Equation::Transport { tilted: true } = self.equation {
            let lim = noise_dt_limit(&self.grid, &self.cov, &self.params);
            if self.dt > lim {
                return Err(LabError::Cfl {
                    dt: self.dt,
                    limit: lim,
                });
            }
        }
        let steps = self.record_steps()?;
        if steps.windows(2).any(|w| w[1] < w[0]) {
            return Err(LabError::Validation("output times must be increasing".into()));
        }
        Ok(())
    }
}

struct ReplicaOutcome {
    records: Option<Vec<RecordStats>>,
}

fn box_integral(grid: &Grid1d, values: &[f64], (a, b): (f64, f64)) -> f64 {
    let dx = grid.dx();
    (0..grid.nx)
        .filter(|&j| {
            let x = grid.x(j);
            x >= a && x < b
        })
        .map(|j| values[j])
        .sum::<f64>()
        * dx
}

fn run_replica(
    cfg: &EnsembleConfig,
    gen: Option<&FieldGenerator>,
    init: &GridField,
    steps: &[usize],
    noise: &NoiseGrid,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let n = cfg.grid.nx;
    let mut state = init.clone();
    let mut stepper = Stepper::new(cfg.scheme, n);
    let mut xi = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut out = Vec::with_capacity(steps.len());
    let last = steps.last().copied().unwrap_or(0);
    let mut next = 0;
    for k in 0..=last {
        while next < steps.len() && steps[next] == k {
            out.push((next, state.values.clone()));
            next += 1;
        }
        if k == last {
            break;
        }
        noise.fill_white(k as u64, &mut xi);
        match cfg.equation {
            Equation::Transport { tilted } => {
                gen.expect("transport needs a field generator")
                    .convolve_into(&xi, &mut dw);
                let lt = if tilted { cfg.params.lambda } else { 0.0 };
                stepper.transport(&mut state, &dw, cfg.nu(), lt, cfg.dt, k)?;
            }
            Equation::She { kappa } => {
                stepper.she(&mut state, &xi, kappa, cfg.nu(), cfg.dt, k)?;
            }
        }
    }
    Ok(out)
}

/// Runs independent replicas in parallel and reduces them in replica order.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let steps = cfg.record_steps()?;
    let t0 = cfg.start();
    let init = init_delta(&cfg.grid, cfg.nu(), Some(t0))?;
    let gen = match cfg.equation {
        Equation::Transport { .. } => Some(FieldGenerator::new(cfg.grid, &cfg.cov, &cfg.params)?),
        Equation::She { .. } => None,
    };
    let base = NoiseGrid::new(cfg.grid, cfg.dt, cfg.seed)?;
    let n = cfg.grid.nx;
    let empty = |steps: &[usize]| -> Vec<RecordStats> {
        steps
            .iter()
            .map(|&s| RecordStats::new(t0 + s as f64 * cfg.dt, s, n))
            .collect()
    };
    let chunks: Vec<(usize, usize)> = (0..cfg.replicas)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(cfg.replicas)))
        .collect();
    let partials: Vec<(Vec<RecordStats>, usize, usize)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut recs = empty(&steps);
            let mut ok = 0;
            let mut failed = 0;
            for r in lo..hi {
                let outcome = match run_replica(cfg, gen.as_ref(), &init, &steps, &base.replica(r as u64)) {
                    Ok(snaps) => ReplicaOutcome {
                        records: Some(
                            snaps
                                .into_iter()
                                .map(|(i, v)| {
                                    let mut rs = RecordStats::new(recs[i].t, recs[i].step, n);
                                    accumulate(cfg, &mut rs, v);
                                    rs
                                })
                                .collect(),
                        ),
                    },
                    Err(LabError::BlowUp { .. }) => ReplicaOutcome { records: None },
                    Err(e) => return Err(e),
                };
                match outcome.records {
                    Some(rs) => {
                        ok += 1;
                        for (dst, src) in recs.iter_mut().zip(rs) {
                            dst.merge(src);
                        }
                    }
                    None => failed += 1,
                }
            }
            Ok((recs, ok, failed))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = empty(&steps);
    let mut completed = 0;
    let mut failed = 0;
    for (recs, ok, bad) in partials {
        completed += ok;
        failed += bad;
        for (dst, src) in records.iter_mut().zip(recs) {
            dst.merge(src);
        }
    }
    if completed == 0 {
        return Err(LabError::BlowUp { time_index: 0 });
    }
    Ok(EnsembleResult {
        grid: cfg.grid,
        t0,
        dt: cfg.dt,
        records,
        completed,
        failed,
    })
}

fn accumulate(cfg: &EnsembleConfig, rs: &mut RecordStats, values: Vec<f64>) {
    let f = GridField {
        values,
        t: rs.t,
        grid: cfg.grid,
    };
    let mass = f.mass();
    rs.mass.push(mass);
    rs.l2.push(f.l2_squared());
    let sm = mass.max(0.0).sqrt();
    rs.sqrt_mass.push(sm);
    rs.sqrt_mass_samples.push(sm);
    rs.negative_mass.push(f.negative_mass());
    if let Some((a, b)) = cfg.boxes {
        rs.box_product
            .push(box_integral(&cfg.grid, &f.values, a) * box_integral(&cfg.grid, &f.values, b));
    }
    rs.field.push(&f.values);
    if cfg.keep_samples {
        rs.samples.push(f.values);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_covariance, MollifierShape, MollifierSpec};
    use crate::noise::sample_white_increments;

    fn grid() -> Grid1d {
        Grid1d::new(6.0, 256).unwrap()
    }

    #[test]
    fn heat_kernel_reference_value_and_domain() {
        let p = heat_kernel(1.0, 1.0, 0.0).unwrap();
        assert!((p - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(matches!(heat_kernel(1.0, 0.0, 0.0), Err(LabError::Domain(_))));
        assert_eq!(heat_kernel(0.7, 0.3, 0.4).unwrap(), heat_kernel(0.7, 0.3, -0.4).unwrap());
    }

    #[test]
    fn periodic_kernel_integrates_to_one() {
        let g = Grid1d::new(2.0, 400).unwrap();
        let f = heat_kernel_field(&g, 1.0, 1.0).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn init_delta_properties() {
        let g = grid();
        let f = init_delta(&g, 1.0, None).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-10);
        let (imax, _) = f
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(imax, g.origin_index());
        let m2: f64 = (0..g.nx).map(|j| g.x(j).powi(2) * f.values[j]).sum::<f64>() * g.dx();
        assert!((m2 - f.t).abs() < 1e-6);
        assert!(matches!(
            init_delta(&g, 1.0, Some(0.5 * f.t)),
            Err(LabError::Resolution(_))
        ));
    }

    #[test]
    fn zero_noise_step_is_a_heat_step() {
        let g = grid();
        let s = init_delta(&g, 1.0, Some(0.05)).unwrap();
        let dt = SpdeScheme::default().max_dt(&g, 1.0);
        let next = step_transport(&s, &vec![0.0; g.nx], 1.0, 0.0, dt, SpdeScheme::default(), 0).unwrap();
        let exact = heat_kernel_field(&g, 1.0, 0.05 + dt).unwrap();
        let dx = g.dx();
        // local truncation error: dt (nu/2) dx^2/12 |p''''| + (dt nu/2)^2/2 |p''''|
        let p4 = 3.0 * heat_kernel(1.0, 0.05, 0.0).unwrap() / (0.05f64 * 0.05);
        let bound = 2.0 * (0.5 * dt * dx * dx / 12.0 + 0.125 * dt * dt) * p4;
        assert!(next.sup_distance(&exact.values) < bound);
    }

    #[test]
    fn transport_conserves_mass_exactly() {
        let g = grid();
        let cov = build_covariance(&MollifierSpec::unit(MollifierShape::Bump)).unwrap();
        let p = ScaleParams::new(0.3, 1.0, 1.0, 0.0, &cov).unwrap();
        let gen = FieldGenerator::new(g, &cov, &p).unwrap();
        let dt = SpdeScheme::default().max_dt(&g, p.nu);
        let noise = NoiseGrid::new(g, dt, 5).unwrap();
        for form in [FluxForm::ConservativeCentral, FluxForm::Upwind] {
            let scheme = SpdeScheme {
                flux_form: form,
                ..Default::default()
            };
            let mut s = init_delta(&g, p.nu, None).unwrap();
            let m0 = s.mass();
            let mut st = Stepper::new(scheme, g.nx);
            let mut dw = vec![0.0; g.nx];
            for k in 0..200 {
                gen.convolve_into(&sample_white_increments(&noise, k), &mut dw);
                st.transport(&mut s, &dw, p.nu, 0.0, dt, k as usize).unwrap();
            }
            assert!((s.mass() - m0).abs() < 1e-12, "{form:?}");
        }
    }

    #[test]
    fn cfl_violation_is_refused() {
        let g = grid();
        let s = init_delta(&g, 1.0, None).unwrap();
        let dt = 2.0 * SpdeScheme::default().max_dt(&g, 1.0);
        let r = step_she(&s, &vec![0.0; g.nx], 1.0, 1.0, dt, SpdeScheme::default(), 0);
        assert!(matches!(r, Err(LabError::Cfl { .. })));
    }

    #[test]
    fn blow_up_reports_time_index() {
        let g = grid();
        let mut s = init_delta(&g, 1.0, None).unwrap();
        s.values[3] = f64::NAN;
        let dt = SpdeScheme::default().max_dt(&g, 1.0);
        let r = step_she(&s, &vec![0.0; g.nx], 1.0, 1.0, dt, SpdeScheme::default(), 17);
        assert_eq!(r, Err(LabError::BlowUp { time_index: 17 }));
    }

    #[test]
    fn she_without_noise_is_heat_step() {
        let g = grid();
        let s = init_delta(&g, 1.0, None).unwrap();
        let dt = 1e-4;
        let a = step_she(&s, &vec![0.3; g.nx], 0.0, 1.0, dt, SpdeScheme::default(), 0).unwrap();
        let b = step_transport(&s, &vec![0.0; g.nx], 1.0, 0.0, dt, SpdeScheme::default(), 0).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn tilt_identity_and_gaussian_mass() {
        let g = Grid1d::new(10.0, 1024).unwrap();
        let u = heat_kernel_field(&g, 1.0, 0.5).unwrap();
        assert_eq!(tilt_kernel(&u, 0.0, 1.0).unwrap(), u);
        for lambda in [0.5, 1.0, -2.0] {
            let v = tilt_kernel(&u, lambda, 1.0).unwrap();
            assert!((v.mass() - 1.0).abs() < 1e-8, "lambda {lambda}: {}", v.mass());
            // The tilt of p_t is p_t itself.
            assert!(v.sup_distance(&u.values) < 1e-8);
        }
        assert!(matches!(tilt_kernel(&u, 20.0, 1.0), Err(LabError::Window(_))));
    }

    #[test]
    fn inner_products_of_heat_kernels() {
        let g = Grid1d::new(8.0, 1024).unwrap();
        let cov = build_covariance(&MollifierSpec::unit(MollifierShape::Bump)).unwrap();
        let p = ScaleParams::new(0.1, 1.0, 1.0, 1.0, &cov).unwrap();
        let gen = FieldGenerator::new(g, &cov, &p).unwrap();
        let z = GridField::zeros(g, 0.0);
        assert_eq!(
            inner_products(&z, &z, &gen),
            InnerProducts { l2: 0.0, l2_mollified: 0.0 }
        );
        let f = heat_kernel_field(&g, 1.0, 0.4).unwrap();
        let ip = inner_products(&f, &f, &gen);
        assert!((ip.l2 - heat_kernel(1.0, 0.8, 0.0).unwrap()).abs() < 1e-6);
        let rho_l1: f64 = gen.weights().iter().sum::<f64>() * g.dx();
        assert!(ip.l2_mollified <= rho_l1 * rho_l1 * ip.l2 * (1.0 + 1e-12));
    }

    #[test]
    fn spectral_shift_of_trigonometric_data_is_exact() {
        let n = 64;
        let dx = 2.0 * PI / n as f64;
        let v: Vec<f64> = (0..n).map(|j| (3.0 * j as f64 * dx).sin()).collect();
        let s = spectral_shift(&v, dx, 0.37);
        for (j, sj) in s.iter().enumerate() {
            assert!((sj - (3.0 * (j as f64 * dx + 0.37)).sin()).abs() < 1e-12);
        }
    }
}
