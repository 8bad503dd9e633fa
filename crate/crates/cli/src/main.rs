//! Batch front end for the consensus-optimization simulator: single runs,
//! parameter sweeps, Monte Carlo perturbation studies and the centralized
//! oracle, all emitting CSV/JSON for external plotting.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime/solver error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use nrc_core::config::{preset, AlgorithmSpec, CostSpec, ExperimentConfig};
use nrc_core::costs::HessianScheme;
use nrc_core::error::Error;
use nrc_core::harness::{
    self, metadata_json, monte_carlo_perturbation, prepare, run_prepared, sweep, SweepParam,
};
use nrc_core::par;

#[derive(Parser)]
#[command(name = "nrc", version, about = "Distributed Newton-Raphson consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment and write summary/state traces.
    Run(RunArgs),
    /// Relative MSE at a probe round across a parameter grid.
    Sweep(SweepArgs),
    /// Compute the centralized optimum and its termination certificate.
    Oracle(CommonArgs),
    /// Monte Carlo study of uniform register perturbations.
    Perturb(PerturbArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config: TOML file, or a metadata JSON from a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named benchmark preset (see `--preset help`).
    #[arg(long)]
    preset: Option<String>,
    /// Override the cost-generation (or data-partition) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the round budget.
    #[arg(long)]
    rounds: Option<usize>,
    /// Override the step size of the consensus-register algorithms.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Curvature surrogate: nrc, jc or gdc.
    #[arg(long)]
    scheme: Option<String>,
    /// Algorithm: nrc, fnrc, dsm, dcm or admm.
    #[arg(long)]
    algo: Option<String>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for embarrassingly parallel layers (output is
    /// independent of this setting).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Swept parameter: epsilon, varrho, mu, delta or phi.
    #[arg(long)]
    param: String,
    /// Grid spec: `log:lo:hi:points`, `lin:lo:hi:points`, or a comma list.
    #[arg(long, default_value = "log:1e-3:1:20")]
    grid: String,
    /// Round at which the relative MSE is probed.
    #[arg(long, default_value_t = 40)]
    probe: usize,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated perturbation widths.
    #[arg(long, default_value = "1e-3,1e-2,1e-1")]
    sigmas: String,
    /// Replicates per width.
    #[arg(long, default_value_t = 300)]
    runs: usize,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig(
                "give either --config or --preset, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::InvalidConfig(
                "missing experiment description: pass --config FILE or --preset NAME".into(),
            ))
        }
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("cannot read {}: {e}", path.display()))
            })?;
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                // accept a previous run's metadata verbatim
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("JSON parse failure: {e}")))?;
                let config_value = value.get("config").cloned().unwrap_or(value);
                serde_json::from_value(config_value)
                    .map_err(|e| Error::InvalidConfig(format!("bad config JSON: {e}")))?
            } else {
                ExperimentConfig::from_toml(&text)?
            }
        }
        (None, Some(name)) => preset(name)?,
    };

    if let Some(algo) = &common.algo {
        cfg.algorithm = AlgorithmSpec::default_for(algo)?;
    }
    if let Some(eps) = common.epsilon {
        match &mut cfg.algorithm {
            AlgorithmSpec::Nrc { epsilon, .. } | AlgorithmSpec::Fnrc { epsilon, .. } => {
                *epsilon = eps
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "--epsilon does not apply to algorithm '{}'",
                    other.name()
                )))
            }
        }
    }
    if let Some(scheme) = &common.scheme {
        let parsed = HessianScheme::from_str(scheme)?;
        match &mut cfg.algorithm {
            AlgorithmSpec::Nrc { scheme, .. } | AlgorithmSpec::Fnrc { scheme, .. } => {
                *scheme = parsed
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "--scheme does not apply to algorithm '{}'",
                    other.name()
                )))
            }
        }
    }
    if let Some(rounds) = common.rounds {
        cfg.run.rounds = rounds;
    }
    if let Some(seed) = common.seed {
        match &mut cfg.costs {
            CostSpec::Quadratic { seed: s, .. } | CostSpec::ExpSum { seed: s } => *s = seed,
            CostSpec::Classification { partition_seed, .. }
            | CostSpec::Regression { partition_seed, .. } => *partition_seed = seed,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = |msg: &str| Error::InvalidConfig(format!("bad grid '{spec}': {msg}"));
    if let Some(rest) = spec.strip_prefix("log:").or_else(|| spec.strip_prefix("lin:")) {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected lo:hi:points"));
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad("lo is not a number"))?;
        let hi: f64 = parts[1].parse().map_err(|_| bad("hi is not a number"))?;
        let n: usize = parts[2].parse().map_err(|_| bad("points is not an integer"))?;
        if n < 1 {
            return Err(bad("need at least one point"));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        let logarithmic = spec.starts_with("log:");
        if logarithmic && !(lo > 0.0 && hi > 0.0) {
            return Err(bad("log grids need positive endpoints"));
        }
        Ok((0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                if logarithmic {
                    10f64.powf(lo.log10() + t * (hi.log10() - lo.log10()))
                } else {
                    lo + t * (hi - lo)
                }
            })
            .collect())
    } else {
        spec.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("'{tok}' is not a number")))
            })
            .collect()
    }
}

fn parse_sigmas(spec: &str) -> Result<Vec<f64>, Error> {
    spec.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("bad sigma list '{spec}': '{tok}' is not a number"))
            })
        })
        .collect()
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn announce(cfg: &ExperimentConfig) {
    eprintln!("resolved configuration:\n{}", cfg.to_toml());
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.common)?;
    announce(&cfg);
    let prep = prepare(&cfg)?;
    let result = run_prepared(&cfg, &prep)?;

    let dir = &args.common.out_dir;
    let meta = write_artifact(dir, "run_metadata.json", &metadata_json(&cfg, &prep))?;
    let summary = write_artifact(dir, "run_summary.csv", &harness::summary_csv(&cfg, &result))?;
    let mut written = vec![meta, summary];
    if cfg.run.record_states {
        written.push(write_artifact(
            dir,
            "run_states.csv",
            &harness::states_csv(&cfg, &result),
        )?);
    }
    for p in &written {
        eprintln!("wrote {}", p.display());
    }

    match &result.outcome {
        harness::RunOutcome::Completed => {
            println!(
                "final relative MSE after {} rounds: {}",
                cfg.run.rounds,
                result.final_relative_mse().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        harness::RunOutcome::Failed { round, message } => Err(Error::Numeric(format!(
            "run truncated at round {round}: {message}"
        ))),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let cfg = load_config(&args.common)?;
    announce(&cfg);
    let param = SweepParam::from_str(&args.param)?;
    let grid = parse_grid(&args.grid)?;
    let prep = prepare(&cfg)?;
    let rows = par::with_jobs(args.common.jobs, || {
        sweep(&cfg, &prep, param, &grid, args.probe)
    })?;

    let dir = &args.common.out_dir;
    write_artifact(dir, "sweep_metadata.json", &metadata_json(&cfg, &prep))?;
    let path = write_artifact(dir, "sweep.csv", &harness::sweep_csv(&cfg, &rows))?;
    eprintln!("wrote {}", path.display());

    let best = rows
        .iter()
        .filter(|r| r.status == harness::SweepStatus::Stable)
        .min_by(|a, b| a.mse_at_probe.total_cmp(&b.mse_at_probe));
    match best {
        Some(row) => println!(
            "best {} = {} with relative MSE {} at round {}",
            row.param, row.value, row.mse_at_probe, args.probe
        ),
        None => println!("no stable grid point at round {}", args.probe),
    }
    Ok(())
}

fn cmd_oracle(args: &CommonArgs) -> Result<(), Error> {
    let cfg = load_config(args)?;
    announce(&cfg);
    let prep = prepare(&cfg)?;

    // quadratic families admit a closed form; cross-check and report
    if matches!(cfg.costs, CostSpec::Quadratic { .. }) {
        let closed = nrc_core::costs::quadratic_closed_form(&prep.costs)?;
        let deviation = (&closed - &prep.x_star).norm();
        println!("closed-form cross-check deviation: {deviation:e}");
    }

    let path = write_artifact(&args.out_dir, "oracle.json", &metadata_json(&cfg, &prep))?;
    eprintln!("wrote {}", path.display());
    println!(
        "x* = {:?} ({} oracle iterations)",
        prep.x_star.iter().copied().collect::<Vec<f64>>(),
        prep.oracle.as_ref().map(|o| o.iterations).unwrap_or(0)
    );
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs) -> Result<(), Error> {
    let cfg = load_config(&args.common)?;
    announce(&cfg);
    let sigmas = parse_sigmas(&args.sigmas)?;
    let seed = cfg.run.perturbation.as_ref().map(|p| p.seed).unwrap_or(7);
    let prep = prepare(&cfg)?;
    let samples = par::with_jobs(args.common.jobs, || {
        monte_carlo_perturbation(&cfg, &prep, &sigmas, args.runs, seed)
    })?;

    let dir = &args.common.out_dir;
    write_artifact(dir, "perturb_metadata.json", &metadata_json(&cfg, &prep))?;
    let path = write_artifact(dir, "perturb.csv", &harness::perturbation_csv(&cfg, &samples))?;
    eprintln!("wrote {}", path.display());

    for s in &samples {
        println!(
            "sigma={}: median error {}, 90th percentile {}",
            s.sigma,
            s.median_error(),
            s.quantile(0.9)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Perturb(args) => cmd_perturb(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
