//! The `fit`, `bench`, and `holdout` commands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ebmc::bench::{run_sweep, write_sweep_csv, Algorithm, ExperimentSpec, SweepAxis};
use ebmc::em::{fit, EmConfig, FitResult, Sigma0};
use ebmc::model::ObservedMatrix;
use ebmc::shrinkage::{efron_morris, TallMatrix};
use ebmc::soft_impute::{cv_select_lambda, SoftImputeConfig};

use crate::triples::{read_cells_file, read_triple_file, write_triples};
use crate::CliError;

/// Dense outputs beyond this many cells require an explicit `--predict`
/// cell list instead.
const DENSE_OUTPUT_CELL_CAP: usize = 10_000_000;

/// Writes a file through a temporary sibling and a rename, so failures never
/// leave a partial file at the target path.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let file_name = path.file_name().ok_or_else(|| {
        CliError::Flags(format!("output path {} has no file name", path.display()))
    })?;
    let mut tmp = PathBuf::from(path);
    tmp.set_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    let result = (|| -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut out)?;
        out.flush()
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Io(format!("writing {}: {e}", tmp.display())));
    }
    fs::rename(&tmp, path).map_err(|e| {
        CliError::Io(format!(
            "renaming {} to {}: {e}",
            tmp.display(),
            path.display()
        ))
    })
}

/// Loads a triple file into an `ObservedMatrix`, inferring dimensions from
/// the maximum indices unless they are given.
fn load_matrix(
    input: &Path,
    p: Option<usize>,
    q: Option<usize>,
) -> Result<ObservedMatrix, CliError> {
    let triples = read_triple_file(input)?;
    if triples.is_empty() {
        return Err(CliError::Parse("input file has no entries".into()));
    }
    let max_row = triples.iter().map(|&(i, _, _)| i).max().unwrap() + 1;
    let max_col = triples.iter().map(|&(_, j, _)| j).max().unwrap() + 1;
    let p = p.unwrap_or(max_row);
    let q = q.unwrap_or(max_col);
    if p < max_row || q < max_col {
        return Err(CliError::Flags(format!(
            "entries reach ({max_row}, {max_col}) but --p/--q request a {p} x {q} matrix"
        )));
    }
    Ok(ObservedMatrix::from_triples(p, q, triples)?)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub input: PathBuf,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub sigma0: Sigma0,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iters: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub out: PathBuf,
    pub predict: Option<PathBuf>,
}

/// Key-value report lines for an EM fit.
fn em_report(result: &FitResult) -> Vec<String> {
    let eigs = result.params.sigma().clone().symmetric_eigenvalues();
    let mut sorted: Vec<f64> = eigs.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let trace_joined = result
        .trace
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(";");
    vec![
        format!("algorithm=eb"),
        format!("iterations={}", result.iterations()),
        format!("stop_reason={}", result.stop_reason),
        format!("sigma_sq_hat={}", result.params.sigma_sq()),
        format!("loglik_final={}", result.trace.last().unwrap()),
        format!("loglik_trace={trace_joined}"),
        format!("sigma_eig_min={}", sorted.first().unwrap()),
        format!("sigma_eig_median={}", sorted[sorted.len() / 2]),
        format!("sigma_eig_max={}", sorted.last().unwrap()),
        format!("transposed={}", result.transposed),
    ]
}

fn write_report(path: &Path, lines: &[String]) -> Result<(), CliError> {
    write_atomic(path, |out| {
        for line in lines {
            writeln!(out, "{line}")?;
        }
        Ok(())
    })
}

/// Report file path for a matrix output path.
pub fn report_path(out: &Path) -> PathBuf {
    let mut path = out.as_os_str().to_owned();
    path.push(".report");
    PathBuf::from(path)
}

fn write_matrix_output(
    opts_out: &Path,
    predict: Option<&Path>,
    m_hat: &DMatrix<f64>,
) -> Result<(), CliError> {
    match predict {
        Some(cells_path) => {
            let cells = read_cells_file(cells_path)?;
            for &(i, j) in &cells {
                if i >= m_hat.nrows() || j >= m_hat.ncols() {
                    return Err(CliError::Flags(format!(
                        "prediction cell ({}, {}) is outside the {} x {} matrix",
                        i + 1,
                        j + 1,
                        m_hat.nrows(),
                        m_hat.ncols()
                    )));
                }
            }
            write_atomic(opts_out, |out| {
                write_triples(out, cells.iter().map(|&(i, j)| (i, j, m_hat[(i, j)])))
            })
        }
        None => {
            let cells = m_hat.nrows() * m_hat.ncols();
            if cells > DENSE_OUTPUT_CELL_CAP {
                return Err(CliError::Flags(format!(
                    "dense output would have {cells} cells (cap {DENSE_OUTPUT_CELL_CAP}); \
                     pass --predict with a cell list instead"
                )));
            }
            write_atomic(opts_out, |out| {
                for i in 0..m_hat.nrows() {
                    for j in 0..m_hat.ncols() {
                        if j > 0 {
                            write!(out, ",")?;
                        }
                        write!(out, "{}", m_hat[(i, j)])?;
                    }
                    writeln!(out)?;
                }
                Ok(())
            })
        }
    }
}

pub fn run_fit(opts: &FitOptions) -> Result<(), CliError> {
    let data = load_matrix(&opts.input, opts.p, opts.q)?;
    let (m_hat, report) = match opts.algorithm {
        Algorithm::Eb => {
            let config = EmConfig {
                sigma0_sq: opts.sigma0,
                eps1: opts.eps1,
                eps2: opts.eps2,
                max_iters: opts.max_iters,
                jitter: 1e-6,
            };
            let result = fit(&data, &config)?;
            let report = em_report(&result);
            (result.m_hat, report)
        }
        Algorithm::SoftImpute => {
            let config = SoftImputeConfig {
                tol: opts.eps2,
                max_iters: opts.max_iters,
                rng_seed: opts.seed,
                ..SoftImputeConfig::default()
            };
            let (lambda, m_hat) = cv_select_lambda(&data, &config)?;
            (
                m_hat,
                vec![
                    "algorithm=soft_impute".into(),
                    format!("lambda_best={lambda}"),
                ],
            )
        }
        Algorithm::EfronMorris => {
            if data.n_observed() != data.p() * data.q() {
                return Err(CliError::Flags(
                    "efron-morris requires a fully observed input matrix".into(),
                ));
            }
            let y = TallMatrix::new(data.zero_filled()).map_err(CliError::from)?;
            let m_hat = efron_morris(&y)?;
            (m_hat, vec!["algorithm=efron_morris".into()])
        }
    };
    write_matrix_output(&opts.out, opts.predict.as_deref(), &m_hat)?;
    write_report(&report_path(&opts.out), &report)?;
    println!(
        "fit: {} ({} x {}, {} observed) -> {}",
        opts.algorithm,
        data.p(),
        data.q(),
        data.n_observed(),
        opts.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub sigma_sq: f64,
    pub fill: f64,
    pub seed: u64,
    pub replicates: usize,
    pub algorithms: Vec<Algorithm>,
    pub out: PathBuf,
}

pub fn run_bench(opts: &BenchOptions) -> Result<(), CliError> {
    let base = ExperimentSpec {
        p: opts.p,
        q: opts.q,
        r: opts.r,
        sigma_sq: opts.sigma_sq,
        fill: opts.fill,
        seed: opts.seed,
        algorithm: *opts.algorithms.first().unwrap_or(&Algorithm::Eb),
        replicates: opts.replicates,
    };
    let cells = run_sweep(opts.axis, &opts.grid, &base, &opts.algorithms)?;
    for cell in &cells {
        println!(
            "{}={} algorithm={} error1={:.4} error2={:.4} time={:.3}s n={}",
            opts.axis,
            cell.axis_value,
            cell.algorithm,
            cell.result.mean_error1,
            cell.result.mean_error2,
            cell.result.mean_time_s,
            cell.result.n_successful()
        );
    }
    write_atomic(&opts.out, |out| write_sweep_csv(&cells, out))?;
    println!("bench: wrote {}", opts.out.display());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct HoldoutOptions {
    pub input: PathBuf,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub sample_size: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub sigma0: Sigma0,
    pub out: PathBuf,
}

/// Seeded split of a file's entries into a training sample and a held-out
/// remainder; entry indices refer to canonical (row-major) order.
pub fn holdout_split(
    n_entries: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<bool>, CliError> {
    if sample_size == 0 || sample_size >= n_entries {
        return Err(CliError::Flags(format!(
            "--sample-size must be in [1, {}), got {sample_size}",
            n_entries
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n_entries];
    for idx in rand::seq::index::sample(&mut rng, n_entries, sample_size) {
        in_train[idx] = true;
    }
    Ok(in_train)
}

/// Normalized holdout error: `sqrt(sum (M_hat - y)^2) / sqrt(sum y^2)` over
/// the held-out entries, accumulated in canonical entry order.
pub fn holdout_error(
    m_hat: &DMatrix<f64>,
    entries: &[(usize, usize, f64)],
    in_train: &[bool],
) -> Result<f64, CliError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, &(i, j, y)) in entries.iter().enumerate() {
        if !in_train[idx] {
            num += (m_hat[(i, j)] - y).powi(2);
            den += y * y;
        }
    }
    if den == 0.0 {
        return Err(CliError::Flags("held-out entries carry no mass".into()));
    }
    Ok(num.sqrt() / den.sqrt())
}

pub fn run_holdout(opts: &HoldoutOptions) -> Result<(), CliError> {
    let full = load_matrix(&opts.input, opts.p, opts.q)?;
    let entries = full.entries().to_vec();
    let in_train = holdout_split(entries.len(), opts.sample_size, opts.seed)?;
    let train_triples: Vec<_> = entries
        .iter()
        .enumerate()
        .filter(|(idx, _)| in_train[*idx])
        .map(|(_, &t)| t)
        .collect();
    let train = ObservedMatrix::from_triples(full.p(), full.q(), train_triples)?;

    let started = Instant::now();
    let mut extra_lines = Vec::new();
    let m_hat = match opts.algorithm {
        Algorithm::Eb => {
            let config = EmConfig {
                sigma0_sq: opts.sigma0,
                ..EmConfig::default()
            };
            let result = fit(&train, &config)?;
            extra_lines.push(format!("iterations={}", result.iterations()));
            extra_lines.push(format!("stop_reason={}", result.stop_reason));
            extra_lines.push(format!("sigma_sq_hat={}", result.params.sigma_sq()));
            result.m_hat
        }
        Algorithm::SoftImpute => {
            let config = SoftImputeConfig {
                rng_seed: opts.seed,
                ..SoftImputeConfig::default()
            };
            let (lambda, m_hat) = cv_select_lambda(&train, &config)?;
            extra_lines.push(format!("lambda_best={lambda}"));
            m_hat
        }
        Algorithm::EfronMorris => {
            return Err(CliError::Flags(
                "efron-morris cannot run on a holdout sample (needs full observation)".into(),
            ));
        }
    };
    let wall_time_s = started.elapsed().as_secs_f64();
    let error = holdout_error(&m_hat, &entries, &in_train)?;

    let mut lines = vec![
        format!("algorithm={}", opts.algorithm),
        format!("sample_size={}", opts.sample_size),
        format!("n_heldout={}", entries.len() - opts.sample_size),
        format!("seed={}", opts.seed),
        format!("error={error}"),
        format!("wall_time_s={wall_time_s}"),
    ];
    lines.extend(extra_lines);
    write_report(&opts.out, &lines)?;
    println!(
        "holdout: {} trained on {} of {} entries, error={error:.4}, time={wall_time_s:.2}s",
        opts.algorithm,
        opts.sample_size,
        entries.len()
    );
    Ok(())
}
