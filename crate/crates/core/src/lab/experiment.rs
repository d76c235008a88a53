//! Dispatch of configured experiments to the solvers, and their persistence.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, ScaleParams};
use crate::error::{LabError, Result};
use crate::lab::config::{ExperimentKind, LabConfig};
use crate::lab::diagnostic::strong_disorder_diagnostic;
use crate::lab::output::{covariance_table, field_file_name, fmt_f, unix_now, Cell, Manifest, Table};
use crate::lab::regime::{
    classify_regime, linspace, schedule, theorem_hypothesis, Regime, RegimePoint,
};
use crate::noise::{dump_slice, NoiseGrid};
use crate::particles::{diagonal_density, difference_dt, simulate_differences, DifferenceState};
use crate::qpde::{q_grid, she_second_moment, solve_q_lambda_series, QSettings};
use crate::spde::{heat_kernel_field, noise_dt_limit, run_ensemble, EnsembleConfig, EnsembleResult, Equation};
use crate::stats::{quantile, Estimate, Welford};

/// Panels of the Volterra oracle.
const ORACLE_PANELS: usize = 200;
/// Per-replica fields are kept for quantiles only below this many values.
const SAMPLE_BUDGET: usize = 1 << 23;
const HIST_BINS: usize = 64;

/// Result of one cell of an experiment (one `eps`, one schedule point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub seed: u64,
    pub regime_label: Regime,
    pub cell: String,
    pub observables: BTreeMap<String, Estimate>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub kind: ExperimentKind,
    pub records: Vec<ExperimentRecord>,
    pub tables: Vec<Table>,
    /// Cells that could not be completed, with the reason.
    pub failures: Vec<String>,
}

impl ExperimentOutcome {
    /// 0 when every cell completed, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            4
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Regime of a single parameter set from its effective exponents.
pub fn effective_regime(p: &ScaleParams) -> Regime {
    let clamp = |x: f64, fallback: f64| if x.is_finite() { x.clamp(-1e6, 1e6) } else { fallback };
    let alpha = clamp(p.alpha, if p.sigma == 0.0 { 1e6 } else { -1e6 });
    let beta = clamp(p.beta, 0.0).max(0.0);
    RegimePoint::new(alpha, beta)
        .and_then(|pt| classify_regime(&pt))
        .unwrap_or(Regime::WeakDisorder)
}

fn cell_name(p: &ScaleParams, with_kappa: bool) -> String {
    if with_kappa {
        format!("eps={};kappa={}", fmt_f(p.eps), fmt_f(p.kappa_eps))
    } else {
        format!("eps={}", fmt_f(p.eps))
    }
}

struct Ctx<'a> {
    cfg: &'a LabConfig,
    cov: CovarianceSpec,
    hash: String,
}

impl Ctx<'_> {
    fn record(&self, p: &ScaleParams, started: f64, observables: BTreeMap<String, Estimate>) -> ExperimentRecord {
        let regime_label = match self.cfg.regime_point() {
            Ok(Some(pt)) => classify_regime(&pt).unwrap_or_else(|_| effective_regime(p)),
            _ => effective_regime(p),
        };
        ExperimentRecord {
            config_hash: self.hash.clone(),
            seed: self.cfg.noise.seed,
            regime_label,
            cell: cell_name(p, !self.cfg.schedule.kappa_list.is_empty()),
            observables,
            started_unix: started,
            finished_unix: unix_now(),
        }
    }

    fn ensemble(&self, p: &ScaleParams, equation: Equation, keep: bool) -> Result<EnsembleConfig> {
        let grid = self.cfg.grid()?;
        let scheme = self.cfg.scheme();
        let tilted = matches!(equation, Equation::Transport { tilted: true });
        let dt = match self.cfg.grid.dt {
            Some(dt) => dt,
            None => {
                let mut dt = scheme.max_dt(&grid, p.nu);
                if tilted {
                    dt = dt.min(noise_dt_limit(&grid, &self.cov, p));
                }
                dt
            }
        };
        let replicas = self.cfg.noise.replicas;
        let times = self.cfg.schedule.times.clone();
        Ok(EnsembleConfig {
            grid,
            cov: self.cov.clone(),
            params: *p,
            equation,
            scheme,
            dt,
            seed: self.cfg.noise.seed,
            replicas,
            keep_samples: keep && replicas * grid.nx * times.len() <= SAMPLE_BUDGET,
            times,
            t0: None,
            boxes: None,
        })
    }

    fn bandwidth(&self, p: &ScaleParams) -> f64 {
        self.cfg.experiment.bandwidth.unwrap_or(0.2 * p.eps)
    }

    fn paths(&self) -> usize {
        self.cfg.experiment.paths.unwrap_or(100_000)
    }
}

/// Field snapshots and the mass series of one ensemble; files are named by
/// the requested `times` (records sit on the nearest step).
pub fn field_tables(res: &EnsembleResult, times: &[f64], prefix: &str) -> (Vec<Table>, Table) {
    let mut out = Vec::new();
    let mut mass = Table::new(&format!("{prefix}mass_series.csv"), &["t", "mean_mass", "var_mass"]);
    for (rec, &t_req) in res.records.iter().zip(times) {
        let name = format!("{prefix}{}", field_file_name(t_req));
        let mut t = Table::new(&name, &["y", "mean", "variance", "q05", "q50", "q95"]);
        let mean = rec.field.mean();
        let var = rec.field.variance();
        for j in 0..res.grid.nx {
            let qs = if rec.samples.is_empty() {
                [f64::NAN; 3]
            } else {
                let mut col: Vec<f64> = rec.samples.iter().map(|s| s[j]).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                [quantile(&col, 0.05), quantile(&col, 0.5), quantile(&col, 0.95)]
            };
            t.push(vec![
                res.grid.x(j).into(),
                mean[j].into(),
                var[j].into(),
                qs[0].into(),
                qs[1].into(),
                qs[2].into(),
            ]);
        }
        out.push(t);
        mass.push(vec![t_req.into(), rec.mass.mean().into(), rec.mass.variance().into()]);
    }
    (out, mass)
}

fn prefix_for(points: &[ScaleParams], p: &ScaleParams) -> String {
    if points.len() > 1 {
        format!("eps{}_", fmt_f(p.eps))
    } else {
        String::new()
    }
}

fn mean_kernel(ctx: &Ctx, points: &[ScaleParams], out: &mut ExperimentOutcome) -> Result<()> {
    let mut summary = Table::new("mean_kernel.csv", &["eps", "t", "sup_error", "max_se", "ratio"]);
    for p in points {
        let started = unix_now();
        let ens = ctx.ensemble(p, Equation::Transport { tilted: false }, true)?;
        let res = run_ensemble(&ens)?;
        if res.failed > 0 {
            out.failures
                .push(format!("{}: {} replicas blew up", cell_name(p, false), res.failed));
        }
        let (fields, mass) = field_tables(&res, &ens.times, &prefix_for(points, p));
        let mut obs = BTreeMap::new();
        for (rec, &t_req) in res.records.iter().zip(&ens.times) {
            let exact = heat_kernel_field(&res.grid, p.nu, rec.t)?;
            let mean = rec.field.mean();
            let se = rec.field.se();
            let err = mean
                .iter()
                .zip(&exact.values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let max_se = se.iter().cloned().fold(0.0, f64::max);
            summary.push(vec![
                p.eps.into(),
                t_req.into(),
                err.into(),
                max_se.into(),
                (err / max_se).into(),
            ]);
            obs.insert(format!("sup_error@t={}", fmt_f(t_req)), Estimate::new(err, max_se));
            obs.insert(format!("mass@t={}", fmt_f(t_req)), rec.mass.estimate());
        }
        out.tables.extend(fields);
        out.tables.push(mass);
        out.records.push(ctx.record(p, started, obs));
    }
    out.tables.push(summary);
    Ok(())
}

/// Separation paths from the origin run to `t/2`, for the diagonal estimator.
pub fn half_time_paths(cov: &CovarianceSpec, p: &ScaleParams, t: f64, n: usize, seed: u64) -> Vec<DifferenceState> {
    let dt = difference_dt(p, t);
    let steps = ((0.5 * t / dt).round() as usize).max(1);
    let dt = 0.5 * t / steps as f64;
    simulate_differences(cov, p, 0.0, dt, steps, n, seed)
}

fn second_moment(ctx: &Ctx, points: &[ScaleParams], out: &mut ExperimentOutcome) -> Result<()> {
    let times = &ctx.cfg.schedule.times;
    let mut table = Table::new("second_moment.csv", &["eps", "t", "method", "value", "se"]);
    for p in points {
        let started = unix_now();
        let mut obs = BTreeMap::new();
        let ens = ctx.ensemble(p, Equation::Transport { tilted: true }, false)?;
        let res = run_ensemble(&ens)?;
        if res.failed > 0 {
            out.failures
                .push(format!("{}: {} replicas blew up", cell_name(p, false), res.failed));
        }
        let grid = q_grid(p, *times.last().unwrap(), ctx.cfg.grid.cells_per_eps)?;
        let qs = solve_q_lambda_series(&ctx.cov, p, times, &grid, &QSettings::default())?;
        for ((rec, q), &t) in res.records.iter().zip(&qs).zip(times) {
            let paths = half_time_paths(&ctx.cov, p, t, ctx.paths(), ctx.cfg.noise.seed);
            let fk = diagonal_density(&paths, &ctx.cov, p, ctx.bandwidth(p))?;
            let rows = [
                ("spde", rec.l2.estimate()),
                ("two-point", fk),
                ("q-pde", Estimate::exact(q.diagonal())),
            ];
            for (m, e) in rows {
                table.push(vec![p.eps.into(), t.into(), m.into(), e.mean.into(), e.se.into()]);
                obs.insert(format!("{m}@t={}", fmt_f(t)), e);
            }
        }
        out.records.push(ctx.record(p, started, obs));
    }
    out.tables.push(table);
    Ok(())
}

/// `p_{2t}(0)` for diffusivity `nu`.
pub fn p2t0(nu: f64, t: f64) -> f64 {
    1.0 / (4.0 * PI * nu * t).sqrt()
}

fn q_sequence(ctx: &Ctx, points: &[ScaleParams], out: &mut ExperimentOutcome, critical: bool) -> Result<()> {
    let times = &ctx.cfg.schedule.times;
    let (name, reference) = if critical {
        ("critical_line.csv", "she_oracle")
    } else {
        ("weak_disorder.csv", "p2t0")
    };
    let mut table = Table::new(
        name,
        &["eps", "t", "lambda", "mu", "sigma", "nu", "kappa_eps", "q0", reference, "abs_err", "mu_sqrt_log"],
    );
    let hyp = theorem_hypothesis(points);
    let kappa_target = ctx.cfg.schedule.kappa.unwrap_or(1.0);
    for (p, h) in points.iter().zip(&hyp) {
        let started = unix_now();
        let grid = q_grid(p, *times.last().unwrap(), ctx.cfg.grid.cells_per_eps)?;
        let qs = match solve_q_lambda_series(&ctx.cov, p, times, &grid, &QSettings::default()) {
            Ok(qs) => qs,
            Err(e @ (LabError::BlowUp { .. } | LabError::Resolution(_))) => {
                out.failures.push(format!("{}: {e}", cell_name(p, false)));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut obs = BTreeMap::new();
        for (q, &t) in qs.iter().zip(times) {
            let r = if critical {
                let kappa = if ctx.cfg.regime_point()?.is_some() { kappa_target } else { p.kappa_eps };
                she_second_moment(kappa, p.nu, t, ORACLE_PANELS)?.value
            } else {
                p2t0(p.nu, t)
            };
            let q0 = q.diagonal();
            let err = (q0 - r).abs();
            table.push(vec![
                p.eps.into(),
                t.into(),
                p.lambda.into(),
                p.mu.into(),
                p.sigma.into(),
                p.nu.into(),
                p.kappa_eps.into(),
                q0.into(),
                r.into(),
                err.into(),
                (*h).into(),
            ]);
            obs.insert(format!("q0@t={}", fmt_f(t)), Estimate::exact(q0));
            obs.insert(format!("abs_err@t={}", fmt_f(t)), Estimate::exact(err));
        }
        out.records.push(ctx.record(p, started, obs));
    }
    out.tables.push(table);
    Ok(())
}

fn strong_disorder(ctx: &Ctx, points: &[ScaleParams], out: &mut ExperimentOutcome) -> Result<()> {
    let times = &ctx.cfg.schedule.times;
    let mut series = Table::new(
        "strong_disorder.csv",
        &["eps", "kappa_eps", "lambda", "t", "mean_sqrt_mass", "se", "completed", "failed"],
    );
    let mut rates = Table::new(
        "strong_disorder_rates.csv",
        &["eps", "kappa_eps", "fitted_rate", "predicted_rate", "escape_radius"],
    );
    for p in points {
        let started = unix_now();
        let ens = ctx.ensemble(p, Equation::Transport { tilted: true }, false)?;
        let rep = strong_disorder_diagnostic(&ens, ctx.cfg.noise.replicas, times)?;
        if rep.failed > 0 {
            out.failures
                .push(format!("{}: {} replicas blew up", cell_name(p, true), rep.failed));
        }
        let mut obs = BTreeMap::new();
        for ((_, e), t) in rep.series.iter().zip(times) {
            series.push(vec![
                p.eps.into(),
                p.kappa_eps.into(),
                p.lambda.into(),
                (*t).into(),
                e.mean.into(),
                e.se.into(),
                rep.completed.into(),
                rep.failed.into(),
            ]);
            obs.insert(format!("sqrt_mass@t={}", fmt_f(*t)), *e);
        }
        let fitted = rep.fitted_rate.unwrap_or(f64::NAN);
        rates.push(vec![
            p.eps.into(),
            p.kappa_eps.into(),
            fitted.into(),
            rep.predicted_rate.into(),
            rep.escape_radius.into(),
        ]);
        obs.insert("predicted_rate".into(), Estimate::exact(rep.predicted_rate));
        out.records.push(ctx.record(p, started, obs));
    }
    out.tables.push(series);
    out.tables.push(rates);
    Ok(())
}

fn phase_sweep(ctx: &Ctx, out: &mut ExperimentOutcome) -> Result<()> {
    let e = &ctx.cfg.experiment;
    let [a0, a1] = e.alpha_range.expect("validated");
    let [b0, b1] = e.beta_range.expect("validated");
    let [na, nb] = e.grid_points.unwrap_or([5, 5]);
    let t = *ctx.cfg.schedule.times.last().unwrap();
    let base = ctx.cfg.schedule_base();
    let mut table = Table::new(
        "phase_sweep.csv",
        &["alpha", "beta", "side", "regime", "eps", "lambda", "mu", "sigma", "kappa_eps", "q0", "p2t0", "ratio"],
    );
    for a in linspace(a0, a1, na) {
        for b in linspace(b0, b1, nb) {
            let pt = RegimePoint::new(a, b)?;
            let regime = classify_regime(&pt)?;
            let pts = match schedule(&pt, &ctx.cfg.schedule.eps, &base, &ctx.cov) {
                Ok(p) => p,
                Err(err) => {
                    out.failures.push(format!("alpha={},beta={}: {err}", fmt_f(a), fmt_f(b)));
                    continue;
                }
            };
            let started = unix_now();
            let mut obs = BTreeMap::new();
            for p in &pts {
                let res = q_grid(p, t, ctx.cfg.grid.cells_per_eps)
                    .and_then(|g| solve_q_lambda_series(&ctx.cov, p, &[t], &g, &QSettings::default()));
                let q0 = match res {
                    Ok(q) => q[0].diagonal(),
                    Err(err) => {
                        out.failures.push(format!(
                            "alpha={},beta={},eps={}: {err}",
                            fmt_f(a),
                            fmt_f(b),
                            fmt_f(p.eps)
                        ));
                        continue;
                    }
                };
                let r = p2t0(p.nu, t);
                table.push(vec![
                    a.into(),
                    b.into(),
                    pt.side.name().into(),
                    regime.name().into(),
                    p.eps.into(),
                    p.lambda.into(),
                    p.mu.into(),
                    p.sigma.into(),
                    p.kappa_eps.into(),
                    q0.into(),
                    r.into(),
                    (q0 / r).into(),
                ]);
                obs.insert(format!("ratio@eps={}", fmt_f(p.eps)), Estimate::exact(q0 / r));
            }
            let mut rec = ctx.record(&pts[0], started, obs);
            rec.regime_label = regime;
            rec.cell = format!("alpha={};beta={}", fmt_f(a), fmt_f(b));
            out.records.push(rec);
        }
    }
    out.tables.push(table);
    Ok(())
}

/// Runs the experiment described by `cfg`; nothing is written.
pub fn run_experiment(cfg: &LabConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let cov = cfg.covariance()?;
    let ctx = Ctx {
        cfg,
        hash: cfg.hash(),
        cov,
    };
    let mut out = ExperimentOutcome {
        kind: cfg.experiment.kind,
        records: Vec::new(),
        tables: vec![covariance_table(&ctx.cov)],
        failures: Vec::new(),
    };
    if cfg.experiment.kind == ExperimentKind::PhaseSweep {
        phase_sweep(&ctx, &mut out)?;
        return Ok(out);
    }
    let points = cfg.scale_points(&ctx.cov)?;
    match cfg.experiment.kind {
        ExperimentKind::MeanKernel => mean_kernel(&ctx, &points, &mut out)?,
        ExperimentKind::SecondMoment => second_moment(&ctx, &points, &mut out)?,
        ExperimentKind::CriticalLine => q_sequence(&ctx, &points, &mut out, true)?,
        ExperimentKind::WeakDisorder => q_sequence(&ctx, &points, &mut out, false)?,
        ExperimentKind::StrongDisorder => strong_disorder(&ctx, &points, &mut out)?,
        ExperimentKind::PhaseSweep => unreachable!(),
    }
    Ok(out)
}

/// `config_hash, seed, regime, cell, observable, mean, se`, one row per observable.
pub fn records_table(records: &[ExperimentRecord]) -> Table {
    let mut t = Table::new(
        "records.csv",
        &["config_hash", "seed", "regime", "cell", "observable", "mean", "se"],
    );
    for r in records {
        for (k, e) in &r.observables {
            t.push(vec![
                r.config_hash.as_str().into(),
                Cell::I(r.seed as i64),
                r.regime_label.name().into(),
                r.cell.as_str().into(),
                k.as_str().into(),
                e.mean.into(),
                e.se.into(),
            ]);
        }
    }
    t
}

/// Writes every table, `records.csv` and `manifest.json` into `dir`.
pub fn write_outcome(cfg: &LabConfig, out: &ExperimentOutcome, dir: &Path, started: f64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::Io(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for t in &out.tables {
        files.push(t.write(dir)?);
    }
    files.push(records_table(&out.records).write(dir)?);
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.noise.seed,
        kind: cfg.experiment.kind.name().to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        failures: out.failures.clone(),
        config: cfg.canonical(),
        extra: BTreeMap::new(),
    };
    files.push(manifest.write(dir)?);
    Ok(files)
}

/// Loads, runs and persists; returns the outcome for exit-code selection.
/// Completed cells are written even when others failed.
pub fn run_and_write(cfg: &LabConfig, dir: &Path) -> Result<ExperimentOutcome> {
    let started = unix_now();
    let out = run_experiment(cfg)?;
    write_outcome(cfg, &out, dir, started)?;
    Ok(out)
}

/// Tables for `lab spde`: the tilted ensemble when `lambda != 0`, plain transport otherwise.
pub fn spde_tables(cfg: &LabConfig) -> Result<(Vec<Table>, usize)> {
    cfg.validate()?;
    let ctx = Ctx {
        cfg,
        hash: cfg.hash(),
        cov: cfg.covariance()?,
    };
    let points = cfg.scale_points(&ctx.cov)?;
    let mut tables = vec![covariance_table(&ctx.cov)];
    let mut failed = 0;
    for p in &points {
        let eq = Equation::Transport { tilted: p.lambda != 0.0 };
        let ens = ctx.ensemble(p, eq, true)?;
        let res = run_ensemble(&ens)?;
        failed += res.failed;
        let (fields, mass) = field_tables(&res, &ens.times, &prefix_for(&points, p));
        tables.extend(fields);
        tables.push(mass);
    }
    Ok((tables, failed))
}

/// Tables for `lab twopoint`: Feynman-Kac moments of the separation process.
///
/// `E_weight = E[e^A]` and `E_weight_f = E[e^A 1{|D_t| < h}] / (2h)`.
pub fn twopoint_tables(cfg: &LabConfig, paths: usize) -> Result<Vec<Table>> {
    cfg.validate()?;
    if paths < 2 {
        return Err(LabError::EmptyEnsemble);
    }
    let cov = cfg.covariance()?;
    let points = cfg.scale_points(&cov)?;
    let times = &cfg.schedule.times;
    let mut moments = Table::new("moments.csv", &["eps", "t", "E_weight", "SE", "E_weight_f", "SE_f"]);
    let mut hist = Table::new(
        "difference_hist.csv",
        &["eps", "t", "bin_lo", "bin_hi", "count", "weighted_density"],
    );
    for p in &points {
        let h = cfg.experiment.bandwidth.unwrap_or(0.2 * p.eps);
        for (i, &t) in times.iter().enumerate() {
            let dt = difference_dt(p, t);
            let steps = ((t / dt).round() as usize).max(1);
            let s = simulate_differences(&cov, p, 0.0, t / steps as f64, steps, paths, cfg.noise.seed);
            let mut w = Welford::new();
            let mut wf = Welford::new();
            for d in &s {
                w.push(d.weight());
                wf.push(if d.d.abs() < h { d.weight() / (2.0 * h) } else { 0.0 });
            }
            let (ew, ef) = (w.estimate(), wf.estimate());
            moments.push(vec![p.eps.into(), t.into(), ew.mean.into(), ew.se.into(), ef.mean.into(), ef.se.into()]);
            if i + 1 == times.len() {
                let half = 4.0 * (2.0 * p.nu * t).sqrt();
                let width = 2.0 * half / HIST_BINS as f64;
                let mut counts = vec![0usize; HIST_BINS];
                let mut weights = vec![0.0; HIST_BINS];
                for d in &s {
                    let k = ((d.d + half) / width).floor();
                    if k >= 0.0 && (k as usize) < HIST_BINS {
                        counts[k as usize] += 1;
                        weights[k as usize] += d.weight();
                    }
                }
                for k in 0..HIST_BINS {
                    let lo = -half + k as f64 * width;
                    hist.push(vec![
                        p.eps.into(),
                        t.into(),
                        lo.into(),
                        (lo + width).into(),
                        counts[k].into(),
                        (weights[k] / (s.len() as f64 * width)).into(),
                    ]);
                }
            }
        }
    }
    Ok(vec![covariance_table(&cov), moments, hist])
}

/// `q_lambda.csv` for `lab qpde` over the given `eps` values.
pub fn qpde_table(cfg: &LabConfig, eps_list: &[f64]) -> Result<Vec<Table>> {
    let mut cfg = cfg.clone();
    if !eps_list.is_empty() {
        cfg.schedule.eps = eps_list.to_vec();
    }
    cfg.validate()?;
    let cov = cfg.covariance()?;
    let points = cfg.scale_points(&cov)?;
    let times = &cfg.schedule.times;
    let mut t_out = Table::new(
        "q_lambda.csv",
        &["t", "eps", "lambda", "q0", "mass", "she_oracle", "p2t0"],
    );
    for p in &points {
        let grid = q_grid(p, *times.last().unwrap(), cfg.grid.cells_per_eps)?;
        let qs = solve_q_lambda_series(&cov, p, times, &grid, &QSettings::default())?;
        for (q, &t) in qs.iter().zip(times) {
            let oracle = she_second_moment(p.kappa_eps, p.nu, t, ORACLE_PANELS)
                .map(|v| v.value)
                .unwrap_or(f64::NAN);
            t_out.push(vec![
                t.into(),
                p.eps.into(),
                p.lambda.into(),
                q.diagonal().into(),
                q.mass().into(),
                oracle.into(),
                p2t0(p.nu, t).into(),
            ]);
        }
    }
    Ok(vec![covariance_table(&cov), t_out])
}

/// White-noise slice `time_index` of replica 0 on the first schedule point's
/// ensemble grid, as little-endian `f64`s.
pub fn noise_slice(cfg: &LabConfig, time_index: u64) -> Result<Vec<u8>> {
    cfg.validate()?;
    let ctx = Ctx {
        cfg,
        hash: cfg.hash(),
        cov: cfg.covariance()?,
    };
    let p = cfg.scale_points(&ctx.cov)?[0];
    let ens = ctx.ensemble(&p, Equation::Transport { tilted: p.lambda != 0.0 }, false)?;
    let noise = NoiseGrid::new(ens.grid, ens.dt, ens.seed)?;
    Ok(dump_slice(&noise.replica(0), time_index))
}

pub fn write_tables(tables: &[Table], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::Io(format!("{}: {e}", dir.display())))?;
    tables.iter().map(|t| t.write(dir)).collect()
}
