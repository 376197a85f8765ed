//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage or input errors, 2 on numerical
//! failure (no root in the scan window, a violated hard condition, a
//! degenerate score, or too many failed replications).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::distribution::Innovation;
use crate::empirical::{default_x_grid, drift_slope, tau_grid, theorem1_residual, DEFAULT_TAU_BOUND, DEFAULT_TAU_POINTS, DEFAULT_X_POINTS};
use crate::error::Error;
use crate::estimator::{asymptotic_variance, lambda_alpha, m_estimate, SolverOptions};
use crate::model::simulate_ma1;
use crate::montecarlo::{run_study_with_threads, Aggregates, FailureRecord, RateCheck, StudyConfig};
use crate::score::{check_theorem2_conditions, e_psi_squared, integral_g_dpsi, ScoreFunction};
use crate::stats::median;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "MA1M_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ma1m", version, about = "M-estimation for MA(1) series with bounded-variation scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a stationary MA(1) series; writes CSV `i,u,eps_true`.
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "normal")]
        dist: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate alpha from a series; prints the result as JSON.
    Estimate {
        /// CSV with one column, or a column named `u`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "cdf_centered")]
        psi: String,
        /// Innovation law for the asymptotic variance; plug-in variance when absent.
        #[arg(long)]
        dist: Option<String>,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        #[arg(long, default_value_t = 5.0)]
        half_width_scale: f64,
        #[arg(long, default_value_t = 0.5)]
        grid_step_scale: f64,
        #[arg(long, default_value_t = 0.999)]
        scan_bound: f64,
        #[arg(long, default_value_t = 1e-8)]
        theta_tol: f64,
    },
    /// Print sigma_Psi^2(alpha) and the local slope lambda(alpha).
    Variance {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value = "normal")]
        dist: String,
        #[arg(long, default_value = "cdf_centered")]
        psi: String,
    },
    /// Run a Monte Carlo study described by a JSON config.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Writes `summary.json` and `records_n<N>.csv` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Weighted empirical process diagnostics on simulated series.
    EpCheck {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "normal")]
        dist: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TAU_BOUND)]
        tau_bound: f64,
        /// Writes one `ep_rep<r>.csv` per replication here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Report which assumptions of the normality result hold.
    Conditions {
        #[arg(long, default_value = "normal")]
        dist: String,
        #[arg(long, default_value = "cdf_centered")]
        psi: String,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoRootInWindow { .. } | Error::DegenerateScore(_) | Error::TooManyFailures { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}

fn threads_from_env(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn print_json<T: Serialize>(stdout: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(stdout, "{text}").map_err(|e| CliError::Usage(e.to_string()))
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Simulate { alpha, n, dist, seed, out } => {
            let dist: Innovation = dist.parse()?;
            let sample = simulate_ma1(alpha, n, dist, seed)?;
            let eps = sample.true_innovations()?;
            let mut buf = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                let write = |w: &mut csv::Writer<&mut Vec<u8>>| -> csv::Result<()> {
                    w.write_record(["i", "u", "eps_true"])?;
                    for (i, (u, e)) in sample.u.iter().zip(eps).enumerate() {
                        w.write_record([(i + 1).to_string(), u.to_string(), e.to_string()])?;
                    }
                    w.flush()?;
                    Ok(())
                };
                write(&mut w).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            match out {
                Some(path) => fs::write(&path, &buf).map_err(|e| io_err(&path, e))?,
                None => stdout.write_all(&buf).map_err(|e| CliError::Usage(e.to_string()))?,
            }
            Ok(())
        }
        Command::Estimate { input, psi, dist, ci_level, half_width_scale, grid_step_scale, scan_bound, theta_tol } => {
            let psi: ScoreFunction = psi.parse()?;
            let dist: Option<Innovation> = dist.map(|d| d.parse()).transpose()?;
            let u = read_series(&input)?;
            let opts = SolverOptions {
                half_width_scale,
                grid_step_scale,
                scan_bound,
                theta_tol,
                ci_level,
                ..SolverOptions::default()
            };
            let result = m_estimate(&u, &psi, dist.as_ref(), &opts)?;
            print_json(stdout, &result)
        }
        Command::Variance { alpha, dist, psi } => {
            let dist: Innovation = dist.parse()?;
            let psi: ScoreFunction = psi.parse()?;
            #[derive(Serialize)]
            struct Report {
                alpha: f64,
                dist: String,
                psi: String,
                sigma2: f64,
                lambda: f64,
                e_psi_squared: f64,
                integral_g_dpsi: f64,
                second_moment: f64,
            }
            let report = Report {
                alpha,
                dist: dist.to_string(),
                psi: psi.to_string(),
                sigma2: asymptotic_variance(alpha, &dist, &psi)?,
                lambda: lambda_alpha(alpha, &dist, &psi)?,
                e_psi_squared: e_psi_squared(&dist, &psi),
                integral_g_dpsi: integral_g_dpsi(&dist, &psi).value,
                second_moment: dist.second_moment(),
            };
            print_json(stdout, &report)
        }
        Command::Mc { config, out_dir, threads } => {
            let text = fs::read_to_string(&config).map_err(|e| io_err(&config, e))?;
            let cfg: StudyConfig = serde_json::from_str(&text).map_err(|e| io_err(&config, e))?;
            let result = run_study_with_threads(&cfg, threads_from_env(threads)?)?;

            #[derive(Serialize)]
            struct BlockSummary<'a> {
                n: usize,
                aggregates: &'a Aggregates,
                failed: &'a [FailureRecord],
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                config: &'a StudyConfig,
                blocks: Vec<BlockSummary<'a>>,
                rate_check: &'a Option<RateCheck>,
            }
            let summary = Summary {
                config: &result.config,
                blocks: result
                    .blocks
                    .iter()
                    .map(|b| BlockSummary { n: b.n, aggregates: &b.aggregates, failed: &b.failed })
                    .collect(),
                rate_check: &result.rate_check,
            };
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                let path = dir.join("summary.json");
                let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Usage(e.to_string()))?;
                fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
                for b in &result.blocks {
                    let path = dir.join(format!("records_n{}.csv", b.n));
                    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
                    b.write_records_csv(BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
                }
            }
            print_json(stdout, &summary)
        }
        Command::EpCheck { alpha, n, dist, reps, seed, tau_bound, out_dir, threads } => {
            let dist: Innovation = dist.parse()?;
            if reps == 0 {
                return Err(CliError::Usage("--reps must be at least 1".into()));
            }
            let taus = tau_grid(tau_bound, DEFAULT_TAU_POINTS);
            let x_grid = default_x_grid(&dist, DEFAULT_X_POINTS);
            let slope_taus: Vec<f64> = (-2..=2).map(f64::from).collect();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads_from_env(threads)?.max(1))
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let diagnostics = pool.install(|| {
                (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let sample = simulate_ma1(alpha, n, dist, seed.wrapping_add(r as u64))?;
                        let diag = theorem1_residual(&sample, &taus, &x_grid)?;
                        let slope = drift_slope(&sample, 0.0, &slope_taus)?;
                        Ok((diag, slope))
                    })
                    .collect::<Result<Vec<_>, Error>>()
            })?;
            if let Some(dir) = &out_dir {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                for (r, (diag, _)) in diagnostics.iter().enumerate() {
                    let path = dir.join(format!("ep_rep{r}.csv"));
                    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
                    diag.write_csv(BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
                }
            }
            #[derive(Serialize)]
            struct Summary {
                alpha: f64,
                n: usize,
                dist: String,
                reps: usize,
                sup_residual: Vec<f64>,
                median_sup_residual: f64,
                drift_slope_at_zero: Vec<f64>,
                median_drift_slope_at_zero: f64,
                drift_target_at_zero: f64,
            }
            let sups: Vec<f64> = diagnostics.iter().map(|d| d.0.sup_residual).collect();
            let slopes: Vec<f64> = diagnostics.iter().map(|d| d.1).collect();
            let summary = Summary {
                alpha,
                n,
                dist: dist.to_string(),
                reps,
                median_sup_residual: median(&sups).unwrap_or(f64::NAN),
                median_drift_slope_at_zero: median(&slopes).unwrap_or(f64::NAN),
                drift_target_at_zero: -dist.density(0.0) * dist.second_moment() / (1.0 - alpha * alpha),
                sup_residual: sups,
                drift_slope_at_zero: slopes,
            };
            print_json(stdout, &summary)
        }
        Command::Conditions { dist, psi } => {
            let dist: Innovation = dist.parse()?;
            let psi: ScoreFunction = psi.parse()?;
            let report = check_theorem2_conditions(&dist, &psi);
            print_json(stdout, &report)?;
            let hard = report.hard_failures();
            if hard.is_empty() {
                Ok(())
            } else {
                Err(CliError::Numerical(format!("conditions violated: {}", hard.join(", "))))
            }
        }
    }
}

/// Reads a series from CSV: a single unnamed column, or the column named `u`
/// when a header is present.
pub fn read_series(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_series(&text).map_err(|e| format!("{}: {e}", path.display()))
}

impl From<String> for CliError {
    fn from(s: String) -> Self {
        CliError::Usage(s)
    }
}

fn parse_series(text: &str) -> Result<Vec<f64>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut column: Option<usize> = None;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("malformed CSV: {e}"))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let col = match column {
            Some(c) => c,
            None => {
                let first = record.get(0).unwrap_or("");
                if first.parse::<f64>().is_ok() {
                    if record.len() != 1 {
                        return Err(format!("line {line}: expected one column or a header naming `u`"));
                    }
                    column = Some(0);
                    0
                } else {
                    let c = if record.len() == 1 {
                        0
                    } else {
                        record
                            .iter()
                            .position(|f| f == "u")
                            .ok_or_else(|| format!("line {line}: header has no column named `u`"))?
                    };
                    column = Some(c);
                    continue;
                }
            }
        };
        let field = record
            .get(col)
            .ok_or_else(|| format!("line {line}: missing column {}", col + 1))?;
        let value: f64 = field
            .parse()
            .map_err(|_| format!("line {line}: cannot parse `{field}` as a number"))?;
        if !value.is_finite() {
            return Err(format!("line {line}: non-finite value `{field}`"));
        }
        out.push(value);
    }
    if out.is_empty() {
        return Err("no observations".into());
    }
    Ok(out)
}
