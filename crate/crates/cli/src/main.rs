use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kernel_lab::lab::experiment::{noise_slice, qpde_table, run_and_write, spde_tables, twopoint_tables, write_tables};
use kernel_lab::lab::output::{fmt_f, Table};
use kernel_lab::lab::regime::sweep_grid;
use kernel_lab::lab::{classify_regime, LabConfig, RegimePoint};
use kernel_lab::{LabError, Result};

#[derive(Parser)]
#[command(name = "lab", version, about = "Particles in mollified Gaussian velocity fields")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Classify a grid of exponent pairs.
    Sweep {
        /// `lo,hi`
        #[arg(long, allow_hyphen_values = true)]
        alpha_range: String,
        /// `lo,hi`
        #[arg(long, allow_hyphen_values = true)]
        beta_range: String,
        /// `n` or `n_alpha,n_beta`
        #[arg(long, default_value = "5")]
        grid_points: String,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one exponent pair.
    Classify {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
    },
    /// SPDE ensemble: field snapshots and the mass series.
    Spde {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write white-noise slice `k` as raw little-endian f64.
        #[arg(long, value_name = "K")]
        dump_noise: Option<u64>,
    },
    /// Feynman-Kac moments of the separation process.
    Twopoint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Second-moment PDE along a list of eps values.
    Qpde {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, strictly decreasing; defaults to the config's list.
        #[arg(long)]
        eps_list: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|_| LabError::Validation(format!("{what}: cannot parse `{x}`")))
        })
        .collect()
}

fn pair(s: &str, what: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(s, what)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(LabError::Validation(format!("{what}: expected `lo,hi`"))),
    }
}

fn load(config: &Path, replicas: Option<usize>, seed: Option<u64>) -> Result<LabConfig> {
    let mut cfg = LabConfig::load(config)?;
    if let Some(r) = replicas {
        cfg.noise.replicas = r;
    }
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run {
            config,
            replicas,
            seed,
            out,
        } => {
            let cfg = load(&config, replicas, seed)?;
            eprintln!("{} config {}", cfg.experiment.kind, cfg.hash());
            let outcome = run_and_write(&cfg, &out)?;
            for r in &outcome.records {
                for (k, e) in &r.observables {
                    println!("{} {} {} = {} +- {}", r.cell, r.regime_label, k, fmt_f(e.mean), fmt_f(e.se));
                }
            }
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            Ok(outcome.exit_code() as u8)
        }
        Cmd::Sweep {
            alpha_range,
            beta_range,
            grid_points,
            out,
        } => {
            let a = pair(&alpha_range, "--alpha-range")?;
            let b = pair(&beta_range, "--beta-range")?;
            let n = match parse_list::<usize>(&grid_points, "--grid-points")?[..] {
                [n] => (n, n),
                [na, nb] => (na, nb),
                _ => return Err(LabError::Validation("--grid-points: expected `n` or `na,nb`".into())),
            };
            let mut t = Table::new("sweep.csv", &["alpha", "beta", "side", "regime"]);
            for (pt, r) in sweep_grid(a, b, n)? {
                t.push(vec![pt.alpha.into(), pt.beta.into(), pt.side.name().into(), r.name().into()]);
            }
            match out {
                Some(path) => {
                    std::fs::write(&path, t.render())?;
                    report(&[path]);
                }
                None => print!("{}", t.render()),
            }
            Ok(0)
        }
        Cmd::Classify { alpha, beta } => {
            let pt = RegimePoint::new(alpha, beta)?;
            println!("{} {}", pt.side, classify_regime(&pt)?);
            Ok(0)
        }
        Cmd::Spde {
            config,
            replicas,
            out,
            dump_noise,
        } => {
            let cfg = load(&config, replicas, None)?;
            let (tables, failed) = spde_tables(&cfg)?;
            let mut files = write_tables(&tables, &out)?;
            if let Some(k) = dump_noise {
                let path = out.join(format!("noise_slice_{k}.bin"));
                std::fs::write(&path, noise_slice(&cfg, k)?)?;
                files.push(path);
            }
            report(&files);
            if failed > 0 {
                eprintln!("failed: {failed} replicas blew up");
                return Ok(4);
            }
            Ok(0)
        }
        Cmd::Twopoint { config, replicas, out } => {
            let cfg = load(&config, None, None)?;
            report(&write_tables(&twopoint_tables(&cfg, replicas)?, &out)?);
            Ok(0)
        }
        Cmd::Qpde { config, eps_list, out } => {
            let cfg = load(&config, None, None)?;
            let eps = match eps_list {
                Some(s) => parse_list::<f64>(&s, "--eps-list")?,
                None => Vec::new(),
            };
            report(&write_tables(&qpde_table(&cfg, &eps)?, &out)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
