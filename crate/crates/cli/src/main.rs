use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ebmc::bench::{Algorithm, SweepAxis};
use ebmc::em::Sigma0;
use ebmc_cli::commands::{
    run_bench, run_fit, run_holdout, BenchOptions, FitOptions, HoldoutOptions,
};

#[derive(Parser)]
#[command(
    name = "ebmc",
    version,
    about = "Empirical Bayes matrix completion: fit sparse matrices, run synthetic benchmarks, evaluate holdouts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    /// Empirical Bayes EM solver.
    Eb,
    /// Nuclear-norm soft-impute with cross-validated regularization.
    SoftImpute,
    /// Closed-form Efron-Morris estimator (fully observed input only).
    EfronMorris,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Eb => Algorithm::Eb,
            AlgorithmArg::SoftImpute => Algorithm::SoftImpute,
            AlgorithmArg::EfronMorris => Algorithm::EfronMorris,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    /// Vary p with q fixed.
    PLong,
    /// Vary p with q = p.
    PSquare,
    Rank,
    Fill,
    Noise,
    /// Vary the EB initial noise variance on a fixed instance.
    Sigma0,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::PLong => SweepAxis::PLong,
            AxisArg::PSquare => SweepAxis::PSquare,
            AxisArg::Rank => SweepAxis::Rank,
            AxisArg::Fill => SweepAxis::Fill,
            AxisArg::Noise => SweepAxis::Noise,
            AxisArg::Sigma0 => SweepAxis::Sigma0,
        }
    }
}

fn parse_sigma0(s: &str) -> Result<Sigma0, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Sigma0::Auto);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("'{s}' is neither 'auto' nor a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(Sigma0::Fixed(v))
    } else {
        Err(format!("sigma0 must be positive and finite, got {v}"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a completion model to a sparse triple file and write the
    /// completed matrix plus a fit report (<out>.report).
    Fit {
        /// Input triple file with header row,col,value (1-based indices).
        #[arg(long)]
        input: PathBuf,
        /// Number of rows; inferred from the largest row index if omitted.
        #[arg(long)]
        p: Option<usize>,
        /// Number of columns; inferred from the largest column index if omitted.
        #[arg(long)]
        q: Option<usize>,
        /// Initial noise variance: a positive number or 'auto'.
        #[arg(long, value_parser = parse_sigma0, default_value = "auto")]
        sigma0: Sigma0,
        /// Log-likelihood gain tolerance.
        #[arg(long, default_value_t = 1e-3)]
        eps1: f64,
        /// Relative parameter-change tolerance.
        #[arg(long, default_value_t = 1e-4)]
        eps2: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Eb)]
        algorithm: AlgorithmArg,
        /// Seed for the soft-impute cross-validation split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the completed matrix (dense CSV, or triples with
        /// --predict).
        #[arg(long)]
        out: PathBuf,
        /// Cell list file (header row,col, 1-based); prediction triples are
        /// written for exactly these cells.
        #[arg(long)]
        predict: Option<PathBuf>,
    },
    /// Run a synthetic experiment sweep and write a results CSV.
    Bench {
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated grid values for the chosen axis.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        p: usize,
        #[arg(long, default_value_t = 100)]
        q: usize,
        #[arg(long, default_value_t = 10)]
        r: usize,
        /// Observation noise variance of the synthetic instances.
        #[arg(long = "sigma2", default_value_t = 1.0)]
        sigma_sq: f64,
        /// Fraction of observed entries.
        #[arg(long, default_value_t = 0.5)]
        fill: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        /// Comma-separated algorithms to run at every grid point.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "eb")]
        algorithm: Vec<AlgorithmArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a random sample of a file's entries and report the
    /// normalized error on the held-out remainder.
    Holdout {
        /// Input triple file; its entries are the evaluation universe.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Number of entries sampled for training (rest are held out).
        #[arg(long)]
        sample_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Eb)]
        algorithm: AlgorithmArg,
        /// Initial noise variance for the EB solver.
        #[arg(long, value_parser = parse_sigma0, default_value = "auto")]
        sigma0: Sigma0,
        /// Output path for the evaluation report.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit {
            input,
            p,
            q,
            sigma0,
            eps1,
            eps2,
            max_iters,
            algorithm,
            seed,
            out,
            predict,
        } => run_fit(&FitOptions {
            input,
            p,
            q,
            sigma0,
            eps1,
            eps2,
            max_iters,
            algorithm: algorithm.into(),
            seed,
            out,
            predict,
        }),
        Command::Bench {
            axis,
            grid,
            p,
            q,
            r,
            sigma_sq,
            fill,
            seed,
            replicates,
            algorithm,
            out,
        } => run_bench(&BenchOptions {
            axis: axis.into(),
            grid,
            p,
            q,
            r,
            sigma_sq,
            fill,
            seed,
            replicates,
            algorithms: algorithm.into_iter().map(Into::into).collect(),
            out,
        }),
        Command::Holdout {
            input,
            p,
            q,
            sample_size,
            seed,
            algorithm,
            sigma0,
            out,
        } => run_holdout(&HoldoutOptions {
            input,
            p,
            q,
            sample_size,
            seed,
            algorithm: algorithm.into(),
            sigma0,
            out,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
