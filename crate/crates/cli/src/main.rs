use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netresp::analysis::DEFAULT_RESTARTS;
use netresp::optimizer::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use netresp_cli::commands::{
    cmd_fit, cmd_replicate, cmd_report, cmd_simulate, cmd_tune, FitOptions, ReportOptions,
};
use netresp_cli::CliResult;

#[derive(Parser)]
#[command(name = "netresp", version, about = "Regression with network-valued responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its ground truth from a TOML simulation config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit at a fixed rank and sparsity proportion.
    Fit {
        manifest: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.0)]
        sparsity_frac: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Select rank and sparsity by eBIC over a grid.
    Tune {
        manifest: PathBuf,
        /// Comma-separated ranks; default 1..=min(20, n).
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        /// Comma-separated sparsity proportions; default 10^-3, 10^-2.9, ..., 1.
        #[arg(long, value_delimiter = ',')]
        sparsity_fracs: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Emit heatmap, coefficient, community and inertia tables from a report.
    Report {
        report: PathBuf,
        /// Node grouping file (`node,group` rows) used to order the tables.
        #[arg(long)]
        order: Option<PathBuf>,
        #[arg(long)]
        communities: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a replication study from a TOML study config.
    Replicate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    step_delta: Option<f64>,
    #[arg(long)]
    step_tau: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit on the covariates as given.
    #[arg(long)]
    no_standardize: bool,
    /// Cluster the rows of U into this many communities.
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// Record wall-clock runtime in the report (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn options(&self, rank: usize, sparsity_frac: f64) -> FitOptions {
        FitOptions {
            rank,
            sparsity_frac,
            step_delta: self.step_delta,
            step_tau: self.step_tau,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            standardize: !self.no_standardize,
            communities: self.communities,
            restarts: self.restarts,
            timing: self.timing,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let manifest = cmd_simulate(&config, seed, &out)?;
            println!("{}", manifest.display());
        }
        Command::Fit {
            manifest,
            rank,
            sparsity_frac,
            common,
        } => {
            let report = cmd_fit(&manifest, &common.options(rank, sparsity_frac), &common.out)?;
            println!(
                "rank {} sparsity {} ebic {} converged {}",
                report.rank, report.sparsity, report.ebic, report.converged
            );
        }
        Command::Tune {
            manifest,
            ranks,
            sparsity_fracs,
            common,
        } => {
            let report = cmd_tune(
                &manifest,
                ranks,
                sparsity_fracs,
                &common.options(1, 0.0),
                &common.out,
            )?;
            println!(
                "selected rank {} s0 {} ebic {}",
                report.rank,
                report.s0.unwrap_or(0.0),
                report.ebic
            );
        }
        Command::Report {
            report,
            order,
            communities,
            restarts,
            seed,
            k_max,
            out,
        } => {
            let opts = ReportOptions {
                order,
                communities,
                restarts,
                seed,
                k_max,
            };
            for path in cmd_report(&report, &opts, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Replicate { config, seed, out } => {
            let study = cmd_replicate(&config, seed, &out)?;
            println!("{} study points written to {}", study.points.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
