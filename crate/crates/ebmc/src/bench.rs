//! Seeded synthetic benchmarks: instance generation, error metrics, and
//! experiment sweeps.
//!
//! Instances follow the low-rank-plus-noise recipe: `M = U V` with iid
//! standard normal factors, `Y = M + E` with `E_ij ~ N(0, sigma^2)`, and a
//! uniformly sampled observation set of `round(fill * p * q)` entries. All
//! randomness comes from one `ChaCha8` stream per instance seed, consumed in
//! a fixed order (`U` row-major, then `V` row-major, then `E` row-major,
//! then the index sample), so a seed pins the instance bit-for-bit.
//!
//! Accuracy metrics:
//!
//! ```text
//! error1 = ||M_hat - M||_F / ||M||_F
//! error2 = sqrt(sum_{(i,j) not in Omega} (M_hat - M)_ij^2)
//!        / sqrt(sum_{(i,j) not in Omega} M_ij^2)
//! ```

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::em::{fit, EmConfig, Sigma0};
use crate::error::{Error, Result};
use crate::model::ObservedMatrix;
use crate::shrinkage::{efron_morris, TallMatrix};
use crate::soft_impute::{cv_select_lambda, SoftImputeConfig};

/// Completion algorithm under benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Eb,
    SoftImpute,
    /// Closed-form estimator; needs a fully observed instance.
    EfronMorris,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Algorithm::Eb => "eb",
            Algorithm::SoftImpute => "soft_impute",
            Algorithm::EfronMorris => "efron_morris",
        };
        f.write_str(s)
    }
}

/// One synthetic configuration.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentSpec {
    pub p: usize,
    pub q: usize,
    /// True rank of the noiseless matrix.
    pub r: usize,
    /// Observation noise variance (nonnegative; zero means noiseless).
    pub sigma_sq: f64,
    /// Fraction of observed entries, in (0, 1].
    pub fill: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub replicates: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidInput("p and q must be positive".into()));
        }
        if self.r == 0 || self.r > self.p.min(self.q) {
            return Err(Error::InvalidInput(format!(
                "rank must satisfy 1 <= r <= min(p, q), got r = {} for {} x {}",
                self.r, self.p, self.q
            )));
        }
        if self.fill.is_nan() || self.fill <= 0.0 || self.fill > 1.0 {
            return Err(Error::InvalidInput(format!(
                "fill must be in (0, 1], got {}",
                self.fill
            )));
        }
        if (self.fill * (self.p * self.q) as f64).round() < 1.0 {
            return Err(Error::InvalidInput(
                "fill leaves no observed entries".into(),
            ));
        }
        if !self.sigma_sq.is_finite() || self.sigma_sq < 0.0 {
            return Err(Error::InvalidInput(format!(
                "sigma_sq must be nonnegative, got {}",
                self.sigma_sq
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws `(M_true, observed data)` for a spec.
pub fn gen_instance(spec: &ExperimentSpec) -> Result<(DMatrix<f64>, ObservedMatrix)> {
    spec.validate()?;
    let (p, q, r) = (spec.p, spec.q, spec.r);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let u = DMatrix::from_row_slice(p, r, &draw(p * r));
    let v = DMatrix::from_row_slice(r, q, &draw(r * q));
    let noise = DMatrix::from_row_slice(p, q, &draw(p * q));
    let m_true = u * v;
    let y = &m_true + spec.sigma_sq.sqrt() * noise;

    let n_obs = (spec.fill * (p * q) as f64).round() as usize;
    let mut cells: Vec<usize> = rand::seq::index::sample(&mut rng, p * q, n_obs).into_vec();
    cells.sort_unstable();
    let triples: Vec<_> = cells
        .into_iter()
        .map(|cell| (cell / q, cell % q, y[(cell / q, cell % q)]))
        .collect();
    let data = ObservedMatrix::from_triples(p, q, triples)?;
    Ok((m_true, data))
}

/// Normalized Frobenius error over all entries.
pub fn error1(m_hat: &DMatrix<f64>, m_true: &DMatrix<f64>) -> Result<f64> {
    if m_hat.shape() != m_true.shape() {
        return Err(Error::Dimension(format!(
            "shape mismatch: {:?} vs {:?}",
            m_hat.shape(),
            m_true.shape()
        )));
    }
    let denom = m_true.norm();
    if denom == 0.0 {
        return Err(Error::InvalidInput(
            "true matrix has zero Frobenius norm".into(),
        ));
    }
    Ok((m_hat - m_true).norm() / denom)
}

/// Normalized error over the unobserved entries only.
pub fn error2(m_hat: &DMatrix<f64>, m_true: &DMatrix<f64>, data: &ObservedMatrix) -> Result<f64> {
    if m_hat.shape() != m_true.shape() {
        return Err(Error::Dimension(format!(
            "shape mismatch: {:?} vs {:?}",
            m_hat.shape(),
            m_true.shape()
        )));
    }
    if m_true.shape() != (data.p(), data.q()) {
        return Err(Error::Dimension(
            "observation set does not match the matrices".into(),
        ));
    }
    let mask = data.observed_mask();
    let q = data.q();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.p() {
        for j in 0..q {
            if !mask[i * q + j] {
                num += (m_hat[(i, j)] - m_true[(i, j)]).powi(2);
                den += m_true[(i, j)].powi(2);
            }
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidInput(
            "unobserved entries are empty or carry no true mass".into(),
        ));
    }
    Ok(num.sqrt() / den.sqrt())
}

/// Which experiment knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Rows `p`, columns fixed.
    PLong,
    /// Square instances `p = q`.
    PSquare,
    Rank,
    Fill,
    Noise,
    /// Initial noise variance handed to the EB solver; the instance itself
    /// stays at the base spec.
    Sigma0,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::PLong => "p_long",
            SweepAxis::PSquare => "p_square",
            SweepAxis::Rank => "rank",
            SweepAxis::Fill => "fill",
            SweepAxis::Noise => "noise",
            SweepAxis::Sigma0 => "sigma0",
        };
        f.write_str(s)
    }
}

fn integer_axis_value(axis: SweepAxis, value: f64) -> Result<usize> {
    if value < 1.0 || value.fract() != 0.0 || !value.is_finite() {
        return Err(Error::InvalidInput(format!(
            "{axis} axis needs positive integer grid values, got {value}"
        )));
    }
    Ok(value as usize)
}

/// Base spec with one axis overridden; also returns the EB `sigma0` override
/// for the `Sigma0` axis.
fn apply_axis(
    axis: SweepAxis,
    value: f64,
    base: &ExperimentSpec,
) -> Result<(ExperimentSpec, Option<f64>)> {
    let mut spec = *base;
    let mut sigma0_override = None;
    match axis {
        SweepAxis::PLong => spec.p = integer_axis_value(axis, value)?,
        SweepAxis::PSquare => {
            spec.p = integer_axis_value(axis, value)?;
            spec.q = spec.p;
        }
        SweepAxis::Rank => spec.r = integer_axis_value(axis, value)?,
        SweepAxis::Fill => spec.fill = value,
        SweepAxis::Noise => spec.sigma_sq = value,
        SweepAxis::Sigma0 => {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "sigma0 axis needs positive grid values, got {value}"
                )));
            }
            sigma0_override = Some(value);
        }
    }
    spec.validate()?;
    Ok((spec, sigma0_override))
}

/// Measurements from one seeded run.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub seed: u64,
    /// Error message when the run failed; metrics are meaningless then.
    pub failure: Option<String>,
    pub error1: f64,
    /// `NaN` when the instance has no unobserved entries (`fill = 1`).
    pub error2: f64,
    /// Wall time of the fit call only; instance generation is excluded.
    pub wall_time_s: f64,
    /// EM updates for the EB solver; zero for the other algorithms.
    pub iterations: usize,
}

/// Aggregated cell result; means are over successful replicates and `NaN`
/// when none succeeded.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub mean_error1: f64,
    pub mean_error2: f64,
    pub mean_time_s: f64,
    pub replicates: Vec<ReplicateResult>,
}

impl ExperimentResult {
    pub fn n_successful(&self) -> usize {
        self.replicates
            .iter()
            .filter(|r| r.failure.is_none())
            .count()
    }

    fn from_replicates(replicates: Vec<ReplicateResult>) -> Self {
        let ok: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.failure.is_none()).collect();
        let n = ok.len() as f64;
        let mean = |f: &dyn Fn(&ReplicateResult) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / n
            }
        };
        Self {
            mean_error1: mean(&|r| r.error1),
            mean_error2: mean(&|r| r.error2),
            mean_time_s: mean(&|r| r.wall_time_s),
            replicates,
        }
    }
}

/// One (axis value, algorithm) cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub axis_value: f64,
    pub algorithm: Algorithm,
    pub result: ExperimentResult,
}

/// Runs one algorithm on one instance; returns `(M_hat, iterations)`.
fn run_algorithm(
    algorithm: Algorithm,
    spec: &ExperimentSpec,
    data: &ObservedMatrix,
    sigma0_override: Option<f64>,
) -> Result<(DMatrix<f64>, usize)> {
    match algorithm {
        Algorithm::Eb => {
            let sigma0_sq = match sigma0_override {
                Some(v) => Sigma0::Fixed(v),
                // Mirror the reference protocol: start from the true noise
                // variance when it is usable.
                None if spec.sigma_sq > 0.0 => Sigma0::Fixed(spec.sigma_sq),
                None => Sigma0::Auto,
            };
            let config = EmConfig {
                sigma0_sq,
                ..EmConfig::default()
            };
            let result = fit(data, &config)?;
            let iterations = result.iterations();
            Ok((result.m_hat, iterations))
        }
        Algorithm::SoftImpute => {
            let config = SoftImputeConfig {
                rng_seed: spec.seed,
                ..SoftImputeConfig::default()
            };
            let (_, m_hat) = cv_select_lambda(data, &config)?;
            Ok((m_hat, 0))
        }
        Algorithm::EfronMorris => {
            if data.n_observed() != data.p() * data.q() {
                return Err(Error::InvalidInput(
                    "efron_morris requires a fully observed instance (fill = 1)".into(),
                ));
            }
            let y = TallMatrix::new(data.zero_filled())?;
            Ok((efron_morris(&y)?, 0))
        }
    }
}

fn run_replicate(
    algorithm: Algorithm,
    spec: &ExperimentSpec,
    sigma0_override: Option<f64>,
) -> ReplicateResult {
    let seed = spec.seed;
    let failed = |msg: String| ReplicateResult {
        seed,
        failure: Some(msg),
        error1: f64::NAN,
        error2: f64::NAN,
        wall_time_s: f64::NAN,
        iterations: 0,
    };
    let (m_true, data) = match gen_instance(spec) {
        Ok(pair) => pair,
        Err(e) => return failed(e.to_string()),
    };
    let started = Instant::now();
    let (m_hat, iterations) = match run_algorithm(algorithm, spec, &data, sigma0_override) {
        Ok(out) => out,
        Err(e) => return failed(e.to_string()),
    };
    let wall_time_s = started.elapsed().as_secs_f64();
    let e1 = match error1(&m_hat, &m_true) {
        Ok(v) => v,
        Err(e) => return failed(e.to_string()),
    };
    let fully_observed = data.n_observed() == data.p() * data.q();
    let e2 = if fully_observed {
        f64::NAN
    } else {
        match error2(&m_hat, &m_true, &data) {
            Ok(v) => v,
            Err(e) => return failed(e.to_string()),
        }
    };
    ReplicateResult {
        seed,
        failure: None,
        error1: e1,
        error2: e2,
        wall_time_s,
        iterations,
    }
}

/// Runs every algorithm at every grid point for `base.replicates` seeds.
///
/// Replicate `k` of any cell uses seed `base.seed + k`, so cells share
/// common random numbers. The grid is validated up front; individual run
/// failures are recorded in their cell without aborting the sweep. Cells
/// are emitted in (grid value, algorithm) order with replicates ascending.
pub fn run_sweep(
    axis: SweepAxis,
    grid: &[f64],
    base: &ExperimentSpec,
    algorithms: &[Algorithm],
) -> Result<Vec<SweepCell>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid must be nonempty".into()));
    }
    if algorithms.is_empty() {
        return Err(Error::InvalidInput(
            "sweep needs at least one algorithm".into(),
        ));
    }
    base.validate()?;
    let points: Vec<(f64, ExperimentSpec, Option<f64>)> = grid
        .iter()
        .map(|&value| apply_axis(axis, value, base).map(|(s, o)| (value, s, o)))
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(points.len() * algorithms.len());
    for (value, spec, sigma0_override) in &points {
        for &algorithm in algorithms {
            let replicates: Vec<ReplicateResult> = (0..base.replicates)
                .map(|k| {
                    let rep_spec = ExperimentSpec {
                        seed: base.seed.wrapping_add(k as u64),
                        algorithm,
                        ..*spec
                    };
                    run_replicate(algorithm, &rep_spec, *sigma0_override)
                })
                .collect();
            cells.push(SweepCell {
                axis_value: *value,
                algorithm,
                result: ExperimentResult::from_replicates(replicates),
            });
        }
    }
    Ok(cells)
}

/// Writes the sweep results table as CSV, one row per cell.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "axis_value,algorithm,mean_error1,mean_error2,mean_time_s,n_replicates"
    )?;
    for cell in cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            cell.axis_value,
            cell.algorithm,
            cell.result.mean_error1,
            cell.result.mean_error2,
            cell.result.mean_time_s,
            cell.result.n_successful(),
        )?;
    }
    Ok(())
}
