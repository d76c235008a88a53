//! Deterministic solvers for the separation density `q` and its
//! Feynman-Kac weighted version `q^lambda`, the Duhamel fixed point, the
//! delta-potential Volterra equation for the SHE second moment, and the
//! diagnostics built on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariance::{a_eps, scaled_covariance, CovarianceSpec, MollifierSpec, ScaleParams};
use crate::error::{LabError, Result};
use crate::grid::Grid1d;
use crate::spde::GridField;

/// Cells per `eps` required of a `q` grid.
pub const MIN_CELLS_PER_EPS: f64 = 8.0;

/// A solution `q(t, .)` on the periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QSolution {
    pub field: GridField,
    pub lambda: f64,
    pub t: f64,
}

impl QSolution {
    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn grid(&self) -> &Grid1d {
        &self.field.grid
    }

    /// `q(t, 0)`.
    pub fn diagonal(&self) -> f64 {
        self.field.values[self.field.grid.origin_index()]
    }

    pub fn mass(&self) -> f64 {
        self.field.mass()
    }

    /// Four-point Lagrange interpolation, periodic.
    pub fn eval(&self, y: f64) -> f64 {
        cubic_interpolate(&self.field.grid, &self.field.values, y)
    }
}

/// Periodic four-point Lagrange interpolation.
pub fn cubic_interpolate(grid: &Grid1d, v: &[f64], y: f64) -> f64 {
    let n = grid.nx as i64;
    let s = (y + grid.half_width) / grid.dx();
    let fl = s.floor();
    let u = s - fl;
    let j = fl as i64;
    let at = |k: i64| v[(j + k).rem_euclid(n) as usize];
    let (pm, p0, p1, p2) = (at(-1), at(0), at(1), at(2));
    -u * (u - 1.0) * (u - 2.0) / 6.0 * pm + (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0 * p0
        - (u + 1.0) * u * (u - 2.0) / 2.0 * p1
        + (u + 1.0) * u * (u - 1.0) / 6.0 * p2
}

/// Time-stepping controls for the `q` solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSettings {
    /// Time step; `None` selects `eps^2 / (10 nu)` capped at `t / 200`.
    pub dt: Option<f64>,
    /// Start time of the Gaussian stand-in for the delta; `None` selects `2 dx^2 / a(0)`.
    pub t0: Option<f64>,
}

impl Default for QSettings {
    fn default() -> Self {
        Self { dt: None, t0: None }
    }
}

/// A grid for `q` on `[-L, L)` with at least `cells_per_eps` cells per `eps`
/// and `L` wide enough for `t_max`.
pub fn q_grid(p: &ScaleParams, t_max: f64, cells_per_eps: f64) -> Result<Grid1d> {
    let sd = (2.0 * p.nu * t_max).sqrt();
    let half_width = (7.0 * sd).max(8.0 * p.eps);
    let nx = (2.0 * half_width * cells_per_eps / p.eps).ceil() as usize;
    Grid1d::new(half_width, nx + nx % 2)
}

fn check_resolution(grid: &Grid1d, p: &ScaleParams) -> Result<()> {
    let dx = grid.dx();
    if dx > p.eps / MIN_CELLS_PER_EPS * (1.0 + 1e-12) {
        return Err(LabError::Resolution(format!(
            "q grid dx = {dx} exceeds eps / {MIN_CELLS_PER_EPS} = {}",
            p.eps / MIN_CELLS_PER_EPS
        )));
    }
    Ok(())
}

/// Symmetric cyclic tridiagonal system with diagonal `d` and all off-diagonal
/// entries `-r`, factorised once; solved by Thomas plus Sherman-Morrison.
#[derive(Debug, Clone)]
struct CyclicSolver {
    r: f64,
    /// Thomas forward-elimination multipliers and pivots for the modified matrix.
    cp: Vec<f64>,
    piv: Vec<f64>,
    z: Vec<f64>,
    vz: f64,
    gamma: f64,
}

impl CyclicSolver {
    fn new(d: &[f64], r: f64) -> Self {
        let n = d.len();
        let gamma = -d[0];
        let mut dm = d.to_vec();
        // corner entries are alpha = beta = -r
        dm[0] -= gamma;
        dm[n - 1] -= r * r / gamma;
        let mut cp = vec![0.0; n];
        let mut piv = vec![0.0; n];
        piv[0] = dm[0];
        cp[0] = -r / piv[0];
        for i in 1..n {
            piv[i] = dm[i] + r * cp[i - 1];
            cp[i] = -r / piv[i];
        }
        let mut s = Self {
            r,
            cp,
            piv,
            z: vec![0.0; n],
            vz: 0.0,
            gamma,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = -r;
        let mut z = vec![0.0; n];
        s.thomas(&u, &mut z);
        s.vz = z[0] + (-r / gamma) * z[n - 1];
        s.z = z;
        s
    }

    fn thomas(&self, rhs: &[f64], x: &mut [f64]) {
        let n = rhs.len();
        x[0] = rhs[0] / self.piv[0];
        for i in 1..n {
            x[i] = (rhs[i] + self.r * x[i - 1]) / self.piv[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
    }

    fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        let n = rhs.len();
        self.thomas(rhs, x);
        let vy = x[0] + (-self.r / self.gamma) * x[n - 1];
        let f = vy / (1.0 + self.vz);
        for (xi, zi) in x.iter_mut().zip(&self.z) {
            *xi -= f * zi;
        }
    }
}

/// One-step propagator of `d_t q = d_y^2 (a q)`: Crank-Nicolson in `w = a q`,
/// with two implicit-Euler half steps on the first step to damp the
/// non-smooth start.
#[derive(Debug, Clone)]
pub struct Propagator {
    a: Vec<f64>,
    inv_a: Vec<f64>,
    r: f64,
    solver: CyclicSolver,
    w: Vec<f64>,
    rhs: Vec<f64>,
}

impl Propagator {
    pub fn new(cov: &CovarianceSpec, p: &ScaleParams, grid: &Grid1d, dt: f64) -> Self {
        let a: Vec<f64> = (0..grid.nx).map(|j| a_eps(cov, p, grid.x(j))).collect();
        let inv_a: Vec<f64> = a.iter().map(|v| 1.0 / v).collect();
        let dx = grid.dx();
        let r = dt / (2.0 * dx * dx);
        let d: Vec<f64> = inv_a.iter().map(|ia| ia + 2.0 * r).collect();
        Self {
            solver: CyclicSolver::new(&d, r),
            a,
            inv_a,
            r,
            w: vec![0.0; grid.nx],
            rhs: vec![0.0; grid.nx],
        }
    }

    /// Advances `q` by one step; `step_index == 0` uses the damped start.
    pub fn step(&mut self, q: &mut [f64], step_index: usize) {
        let n = q.len();
        if step_index == 0 {
            for _ in 0..2 {
                // (1/a) w' - (dt/2) Lap w' = q
                self.rhs.copy_from_slice(q);
                self.solver.solve(&self.rhs, &mut self.w);
                for j in 0..n {
                    q[j] = self.w[j] * self.inv_a[j];
                }
            }
            return;
        }
        for j in 0..n {
            self.w[j] = self.a[j] * q[j];
        }
        let w = &self.w;
        for j in 0..n {
            let jl = if j == 0 { n - 1 } else { j - 1 };
            let jr = if j + 1 == n { 0 } else { j + 1 };
            self.rhs[j] = q[j] + self.r * (w[jl] - 2.0 * w[j] + w[jr]);
        }
        let mut out = std::mem::take(&mut self.w);
        self.solver.solve(&self.rhs, &mut out);
        for j in 0..n {
            q[j] = out[j] * self.inv_a[j];
        }
        self.w = out;
    }
}

struct Plan {
    dt: f64,
    t0: f64,
    steps: Vec<usize>,
}

fn plan(p: &ScaleParams, cov: &CovarianceSpec, grid: &Grid1d, times: &[f64], s: &QSettings) -> Result<Plan> {
    check_resolution(grid, p)?;
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return Err(LabError::Domain("output times must be positive".into()));
    }
    let dx = grid.dx();
    let t0 = s.t0.unwrap_or(2.0 * dx * dx / a_eps(cov, p, 0.0));
    if times.iter().any(|&t| t < t0) {
        return Err(LabError::Domain(format!("output time precedes start time {t0}")));
    }
    let dt_target = s
        .dt
        .unwrap_or_else(|| (p.eps * p.eps / (10.0 * p.nu)).min(t_max / 200.0));
    let n_total = ((t_max - t0) / dt_target).ceil().max(1.0) as usize;
    let dt = (t_max - t0) / n_total as f64;
    let steps = times
        .iter()
        .map(|&t| ((t - t0) / dt).round() as usize)
        .collect();
    Ok(Plan { dt, t0, steps })
}

/// Gaussian start with variance `2 a(0) t0`, normalised to unit discrete mass.
fn initial(grid: &Grid1d, var: f64) -> Vec<f64> {
    let mut q: Vec<f64> = (0..grid.nx)
        .map(|j| {
            let y = grid.wrap(grid.x(j));
            (-y * y / (2.0 * var)).exp()
        })
        .collect();
    let m: f64 = q.iter().sum::<f64>() * grid.dx();
    q.iter_mut().for_each(|v| *v /= m);
    q
}

/// Solves `d_t q = d_y^2(a_eps q) + lambda^2 C_eps q` and returns `q` at each
/// requested time. The potential is Strang-split around the Crank-Nicolson
/// step; for `lambda = 0` the split factors are exactly one.
pub fn solve_q_lambda_series(
    cov: &CovarianceSpec,
    p: &ScaleParams,
    times: &[f64],
    grid: &Grid1d,
    settings: &QSettings,
) -> Result<Vec<QSolution>> {
    let pl = plan(p, cov, grid, times, settings)?;
    let mut q = initial(grid, 2.0 * a_eps(cov, p, 0.0) * pl.t0);
    let mut prop = Propagator::new(cov, p, grid, pl.dt);
    let l2 = p.lambda * p.lambda;
    let half: Vec<f64> = (0..grid.nx)
        .map(|j| (0.5 * pl.dt * l2 * scaled_covariance(cov, p, grid.x(j))).exp())
        .collect();
    let support: Vec<usize> = (0..grid.nx).filter(|&j| half[j] != 1.0).collect();
    let last = *pl.steps.iter().max().unwrap();
    let mut out: Vec<Option<QSolution>> = vec![None; times.len()];
    for n in 0..=last {
        for (i, &s) in pl.steps.iter().enumerate() {
            if s == n {
                out[i] = Some(QSolution {
                    field: GridField {
                        values: q.clone(),
                        t: pl.t0 + n as f64 * pl.dt,
                        grid: *grid,
                    },
                    lambda: p.lambda,
                    t: pl.t0 + n as f64 * pl.dt,
                });
            }
        }
        if n == last {
            break;
        }
        for &j in &support {
            q[j] *= half[j];
        }
        prop.step(&mut q, n);
        for &j in &support {
            q[j] *= half[j];
        }
        if !q.iter().sum::<f64>().is_finite() {
            return Err(LabError::BlowUp { time_index: n });
        }
    }
    let neg = q.iter().filter(|v| **v < 0.0).sum::<f64>() * grid.dx();
    if neg < -1e-6 {
        return Err(LabError::Resolution(format!(
            "q carries negative mass {neg:e}; refine the time step"
        )));
    }
    Ok(out.into_iter().map(|o| o.unwrap()).collect())
}

pub fn solve_q_lambda(
    cov: &CovarianceSpec,
    p: &ScaleParams,
    t: f64,
    grid: &Grid1d,
    settings: &QSettings,
) -> Result<QSolution> {
    Ok(solve_q_lambda_series(cov, p, &[t], grid, settings)?.remove(0))
}

/// Density of the separation process (no potential).
pub fn solve_q(
    cov: &CovarianceSpec,
    p: &ScaleParams,
    t: f64,
    grid: &Grid1d,
    settings: &QSettings,
) -> Result<QSolution> {
    let free = ScaleParams { lambda: 0.0, ..*p };
    solve_q_lambda(cov, &free, t, grid, settings)
}

/// Outcome of the Duhamel fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DuhamelSolution {
    pub solution: QSolution,
    pub iterations: usize,
    pub residual: f64,
}

/// Picard iteration of the discrete Duhamel formula
/// `q_n = Q^n q_0 + dt sum_m w_m Q^{n-m} V q_m` (trapezoid weights), with
/// `V = lambda^2 C_eps` and `Q` the free propagator.
///
/// The source `V q` lives on the support of `C_eps`, so only those cells of
/// each iterate are stored. The forward-propagated history
/// `B_{n+1} = Q (B_n + dt c_n V q_n)` turns each sweep into one free solve.
pub fn duhamel_iterate(
    cov: &CovarianceSpec,
    p: &ScaleParams,
    t: f64,
    grid: &Grid1d,
    settings: &QSettings,
    max_iter: usize,
    tol: f64,
) -> Result<DuhamelSolution> {
    let pl = plan(p, cov, grid, &[t], settings)?;
    let steps = pl.steps[0];
    let l2 = p.lambda * p.lambda;
    let support: Vec<usize> = (0..grid.nx)
        .filter(|&j| scaled_covariance(cov, p, grid.x(j)) > 0.0)
        .collect();
    let v: Vec<f64> = support
        .iter()
        .map(|&j| l2 * scaled_covariance(cov, p, grid.x(j)))
        .collect();
    let q0 = initial(grid, 2.0 * a_eps(cov, p, 0.0) * pl.t0);
    let mut prop = Propagator::new(cov, p, grid, pl.dt);
    let ns = support.len();

    // q^(0) is the free solution.
    let mut hist = {
        let mut b = q0.clone();
        let mut h = vec![0.0; (steps + 1) * ns];
        for n in 0..=steps {
            for (k, &j) in support.iter().enumerate() {
                h[n * ns + k] = b[j];
            }
            if n < steps {
                prop.step(&mut b, n);
            }
        }
        h
    };
    // One sweep: given the support history `hist` (steps+1 rows), return the
    // new history and the full final field.
    let mut sweep = |hist: Option<&[f64]>| -> (Vec<f64>, Vec<f64>) {
        let mut b = q0.clone();
        let mut new_hist = vec![0.0; (steps + 1) * ns];
        for n in 0..=steps {
            // q_n = B_n + dt/2 V q_n^(old)
            for (k, &j) in support.iter().enumerate() {
                let old = hist.map_or(b[j], |h| h[n * ns + k]);
                new_hist[n * ns + k] = b[j] + 0.5 * pl.dt * v[k] * old;
            }
            if n == steps {
                break;
            }
            let c = if n == 0 { 0.5 } else { 1.0 };
            for (k, &j) in support.iter().enumerate() {
                let old = hist.map_or(b[j], |h| h[n * ns + k]);
                b[j] += pl.dt * c * v[k] * old;
            }
            prop.step(&mut b, n);
        }
        let mut fin = b;
        for (k, &j) in support.iter().enumerate() {
            fin[j] = new_hist[steps * ns + k];
        }
        (new_hist, fin)
    };

    let tt = pl.t0 + steps as f64 * pl.dt;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let (new_hist, fin) = sweep(Some(&hist));
        residual = new_hist
            .iter()
            .zip(&hist)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        hist = new_hist;
        if !residual.is_finite() {
            break;
        }
        // `tol <= 0` asks for exactly `max_iter` sweeps.
        if residual < tol || (tol <= 0.0 && it == max_iter) {
            return Ok(DuhamelSolution {
                solution: QSolution {
                    field: GridField {
                        values: fin,
                        t: tt,
                        grid: *grid,
                    },
                    lambda: p.lambda,
                    t: tt,
                },
                iterations: it,
                residual,
            });
        }
    }
    Err(LabError::Divergence {
        iterations: max_iter,
        residual,
    })
}

/// Value of the SHE second-moment Volterra solution with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolterraValue {
    pub value: f64,
    pub error: f64,
}

/// Solves `r(t) = p(t) + kappa^2 int_0^t p(t-s) r(s) ds`, `p(t) = (4 pi nu t)^{-1/2}`,
/// on `n` panels; returns `phi(s) = s^{1/2} r(s)` at the nodes `s_i = t (i/n)^2`.
///
/// `phi` is a power series in `u = s^{1/2}`, so the nodes are uniform in `u`,
/// `phi` is interpolated linearly in `u` on each panel, and the kernel
/// moments are integrated exactly.
fn volterra_phi(kappa: f64, nu: f64, t: f64, n: usize) -> Vec<f64> {
    let k = 1.0 / (4.0 * PI * nu).sqrt();
    let k2 = kappa * kappa;
    let node = |i: usize| t * (i as f64 / n as f64).powi(2);
    let mut phi = vec![0.0; n + 1];
    phi[0] = k;
    for i in 1..=n {
        let si = node(i);
        let theta = |s: f64| (s / si).sqrt().min(1.0).asin();
        let mut acc = 0.0;
        let mut diag = 0.0;
        for j in 0..i {
            let (a, b) = (node(j), node(j + 1));
            let (ta, tb) = (theta(a), if j + 1 == i { 0.5 * PI } else { theta(b) });
            // int (si - s)^{-1/2} s^{-1/2} ds and int (si - s)^{-1/2} ds on [a, b]
            let m0 = 2.0 * (tb - ta);
            let mh = 2.0 * ((si - a).sqrt() - (si - b).max(0.0).sqrt());
            let (ua, ub) = (a.sqrt(), b.sqrt());
            let wj = (ub * m0 - mh) / (ub - ua);
            let wj1 = (mh - ua * m0) / (ub - ua);
            acc += wj * phi[j];
            if j + 1 == i {
                diag = wj1;
            } else {
                acc += wj1 * phi[j + 1];
            }
        }
        let c = k2 * k * si.sqrt();
        phi[i] = (k + c * acc) / (1.0 - c * diag);
    }
    phi
}

/// `int_0^t s^{-1/2} phi(s) ds` for `phi` from [`volterra_phi`].
fn volterra_integral(phi: &[f64], t: f64) -> f64 {
    let n = phi.len() - 1;
    let du = t.sqrt() / n as f64;
    (0..n)
        .map(|j| {
            let (ua, ub) = (j as f64 * du, (j + 1) as f64 * du);
            // s^{-1/2} ds = 2 du; phi linear in u
            (ub - ua) * (phi[j] + phi[j + 1])
        })
        .sum()
}

/// `E ||Z(t)||_2^2` for the SHE with coefficients `(nu, kappa)` started from a delta,
/// by product integration of the delta-potential Volterra equation.
pub fn she_second_moment(kappa: f64, nu: f64, t: f64, resolution: usize) -> Result<VolterraValue> {
    if !(t > 0.0 && nu > 0.0) {
        return Err(LabError::Domain(format!("need t > 0 and nu > 0 (t = {t}, nu = {nu})")));
    }
    if resolution < 8 {
        return Err(LabError::Resolution(format!("resolution {resolution} below 8 panels")));
    }
    let fine = volterra_phi(kappa, nu, t, 2 * resolution)[2 * resolution] / t.sqrt();
    let coarse = volterra_phi(kappa, nu, t, resolution)[resolution] / t.sqrt();
    // second-order in the panel width: one Richardson step
    let extrapolated = fine + (fine - coarse) / 3.0;
    let error = (extrapolated - fine).abs();
    if error > 1e-3 * fine.abs() {
        return Err(LabError::Resolution(format!(
            "Volterra estimate not resolved at {resolution} panels (change {error:e})"
        )));
    }
    Ok(VolterraValue {
        value: extrapolated,
        error,
    })
}

/// `E[(int Z(t))^2] = 1 + kappa^2 int_0^t r(s) ds` from the same Volterra solution.
pub fn she_mass_moment(kappa: f64, nu: f64, t: f64, resolution: usize) -> Result<f64> {
    she_second_moment(kappa, nu, t, resolution)?;
    let fine = volterra_integral(&volterra_phi(kappa, nu, t, 2 * resolution), t);
    let coarse = volterra_integral(&volterra_phi(kappa, nu, t, resolution), t);
    Ok(1.0 + kappa * kappa * (fine + (fine - coarse) / 3.0))
}

/// `2 int (q(0) - q(eps y)) rho(y) dy + int (q(eps y) - q(0)) (rho * rho)(y) dy`
/// with `rho` normalised to unit mass: the mean-square distance between the
/// kernel and its mollification at scale `eps`.
pub fn smoothing_error(qlam: &QSolution, rho: &MollifierSpec, cov: &CovarianceSpec, eps: f64) -> f64 {
    let q0 = qlam.eval(0.0);
    let m = rho.mass;
    let tab = rho.tabulate();
    let h = rho.step();
    let first: f64 = tab
        .iter()
        .enumerate()
        .map(|(i, r)| (q0 - qlam.eval(eps * (-1.0 + i as f64 * h))) * r / m)
        .sum::<f64>()
        * h;
    let second: f64 = cov
        .table()
        .map(|(y, c)| (qlam.eval(eps * y) - q0) * c / (m * m))
        .sum::<f64>()
        * cov.step();
    2.0 * first + second
}

/// Fitted Gaussian upper envelope `q(t, y) <= C t^{-1/2} exp(-c y^2 / (2t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AronsonFit {
    pub c: f64,
    pub big_c: f64,
    pub violations: usize,
    pub checked: usize,
}

/// Fraction of mass outside which points are ignored.
const ARONSON_MASS: f64 = 0.999;
const ARONSON_TOL: f64 = 1e-3;

/// Fits `(c, C)` on the even-indexed snapshots (restricted to the window
/// holding 99.9% of the mass) and counts violations of the fitted envelope
/// on the odd-indexed ones.
pub fn aronson_check(series: &[QSolution]) -> AronsonFit {
    let pts = |sol: &QSolution| -> Vec<(f64, f64)> {
        let g = sol.grid();
        let dx = g.dx();
        let o = g.origin_index();
        let v = sol.values();
        // symmetric window around the origin containing ARONSON_MASS
        let total = sol.mass();
        let mut acc = v[o] * dx;
        let mut k = 0;
        while acc < ARONSON_MASS * total && k < g.nx / 2 - 1 {
            k += 1;
            acc += (v[(o + k) % g.nx] + v[(o + g.nx - k) % g.nx]) * dx;
        }
        let mut out = Vec::new();
        for s in -(k as i64)..=(k as i64) {
            let j = (o as i64 + s).rem_euclid(g.nx as i64) as usize;
            let y = s as f64 * dx;
            let u = y * y / (2.0 * sol.t);
            out.push((u, v[j] * sol.t.sqrt()));
        }
        out
    };
    let fit_set: Vec<Vec<(f64, f64)>> = series.iter().step_by(2).map(pts).collect();
    let big_c = fit_set
        .iter()
        .flatten()
        .fold(0.0f64, |m, &(_, z)| m.max(z));
    let lc = big_c.ln();
    let c = fit_set
        .iter()
        .flatten()
        .filter(|(u, z)| *u > 0.0 && *z > 0.0)
        .map(|&(u, z)| (lc - z.ln()) / u)
        .fold(f64::INFINITY, f64::min);
    let mut violations = 0;
    let mut checked = 0;
    for sol in series.iter().skip(1).step_by(2) {
        for (u, z) in pts(sol) {
            checked += 1;
            if z > big_c * (-c * u).exp() * (1.0 + ARONSON_TOL) {
                violations += 1;
            }
        }
    }
    AronsonFit {
        c,
        big_c,
        violations,
        checked,
    }
}
