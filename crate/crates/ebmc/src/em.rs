//! EM loop for the completion model.
//!
//! Each iteration computes every row posterior at the current parameters
//! (E-step), stacks the posterior means into the new completed matrix, and
//! re-estimates the hyperparameters from posterior moments (M-step):
//!
//! ```text
//! Sigma_new   = (1/p) sum_i (m_hat_i m_hat_i' + R_i)
//! sigma^2_new = (1/|Omega|) sum_{(i,j) in Omega} ((Y_ij - m_hat_ij)^2 + (R_i)_jj)
//! ```
//!
//! The loop stops when the log-likelihood gain drops below `eps1`, when the
//! relative squared Frobenius change of the completed matrix drops below
//! `eps2`, at `max_iters`, or on a numerical log-likelihood decrease. Both
//! tolerance checks run after the update, so the returned matrix is always
//! the freshly updated one.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{loglik_grouped, Hyperparameters, ObservedMatrix, PatternGroup, PatternSolve};

/// Lower bound applied to the noise variance after every M-step.
const SIGMA_SQ_FLOOR: f64 = 1e-12;

/// Lower bound for the `"auto"` initial noise variance.
const SIGMA0_AUTO_FLOOR: f64 = 1e-8;

/// Log-likelihood decreases beyond this are flagged as a numerical stop.
const ASCENT_SLACK: f64 = 1e-8;

/// Initial noise variance: a fixed value or the sample variance of the
/// observed entries (floored at `1e-8`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma0 {
    Auto,
    Fixed(f64),
}

/// Solver configuration.
///
/// Defaults follow the reference experiment protocol: `eps1 = 1e-3`,
/// `eps2 = 1e-4`, `max_iters = 500`, `jitter = 1e-6`, automatic `sigma0`.
#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub sigma0_sq: Sigma0,
    /// Stop when the log-likelihood increase falls below this.
    pub eps1: f64,
    /// Stop when `||M_new - M_old||_F^2 / ||M_old||_F^2` falls below this.
    pub eps2: f64,
    pub max_iters: usize,
    /// Diagonal regularizer added to the initial `Sigma`, scaled by
    /// `max(1, trace(M0' M0 / p) / q)`.
    pub jitter: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            sigma0_sq: Sigma0::Auto,
            eps1: 1e-3,
            eps2: 1e-4,
            max_iters: 500,
            jitter: 1e-6,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if !self.eps1.is_finite() || self.eps1 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "eps1 must be positive, got {}",
                self.eps1
            )));
        }
        if !self.eps2.is_finite() || self.eps2 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "eps2 must be positive, got {}",
                self.eps2
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !self.jitter.is_finite() || self.jitter < 0.0 {
            return Err(Error::InvalidInput(format!(
                "jitter must be nonnegative, got {}",
                self.jitter
            )));
        }
        if let Sigma0::Fixed(v) = self.sigma0_sq {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "sigma0_sq must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Log-likelihood increase below `eps1`.
    LoglikTol,
    /// Relative squared Frobenius change of `M` below `eps2`.
    ParamTol,
    /// Iteration cap reached.
    MaxIters,
    /// Log-likelihood decreased by more than the numerical slack.
    LoglikDecrease,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::LoglikTol => "loglik_tol",
            StopReason::ParamTol => "param_tol",
            StopReason::MaxIters => "max_iters",
            StopReason::LoglikDecrease => "loglik_decrease",
        };
        f.write_str(s)
    }
}

/// Fitted model: completed matrix, final hyperparameters, and the
/// log-likelihood trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Completed matrix in the orientation of the input data.
    pub m_hat: DMatrix<f64>,
    /// Final hyperparameters. With `transposed` set they live in the
    /// transposed orientation, i.e. `Sigma` is over the input's row dimension.
    pub params: Hyperparameters,
    /// `trace[0]` is the log-likelihood at the initial parameters, `trace[t]`
    /// after `t` EM updates; non-decreasing up to numerical slack.
    pub trace: Vec<f64>,
    pub stop_reason: StopReason,
    /// Set when the input had `p < q` and the solver ran on the transpose.
    pub transposed: bool,
}

impl FitResult {
    /// Number of EM updates performed.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// One EM update at the given parameters: the new completed matrix, the new
/// hyperparameters, and the per-row posterior variances (row `i` holds
/// `diag(R_i)`).
#[derive(Debug, Clone)]
pub struct EmStep {
    pub m_new: DMatrix<f64>,
    pub params_new: Hyperparameters,
    pub r_diag: DMatrix<f64>,
}

/// Zero-filled starting matrix and initial hyperparameters.
///
/// `Sigma_0 = M_0' M_0 / p + jitter_eff I` with `jitter_eff` scaled by the
/// average diagonal mass, so the regularizer tracks the data's units.
pub fn initialize(
    data: &ObservedMatrix,
    config: &EmConfig,
) -> Result<(DMatrix<f64>, Hyperparameters)> {
    config.validate()?;
    if data.n_observed() == 0 {
        return Err(Error::InvalidInput(
            "cannot initialize from an empty observation set".into(),
        ));
    }
    let p = data.p() as f64;
    let q = data.q();
    let m0 = data.zero_filled();
    let mut sigma0 = m0.tr_mul(&m0) / p;
    // tr_mul is symmetric only up to rounding; make it exact.
    sigma0 = 0.5 * (&sigma0 + sigma0.transpose());
    let jitter_eff = config.jitter * (sigma0.trace() / q as f64).max(1.0);
    for d in 0..q {
        sigma0[(d, d)] += jitter_eff;
    }
    let sigma_sq0 = match config.sigma0_sq {
        Sigma0::Fixed(v) => v,
        Sigma0::Auto => observed_sample_variance(data).max(SIGMA0_AUTO_FLOOR),
    };
    Ok((m0, Hyperparameters::new(sigma0, sigma_sq0)?))
}

/// Unbiased sample variance of the observed entries; zero when fewer than
/// two entries are observed.
fn observed_sample_variance(data: &ObservedMatrix) -> f64 {
    let n = data.n_observed();
    if n < 2 {
        return 0.0;
    }
    let mean = data.entries().iter().map(|&(_, _, y)| y).sum::<f64>() / n as f64;
    let ss = data
        .entries()
        .iter()
        .map(|&(_, _, y)| (y - mean).powi(2))
        .sum::<f64>();
    ss / (n - 1) as f64
}

/// One EM update (E-step plus M-step) at the given parameters.
///
/// With an empty observation set the prior is reproduced exactly:
/// `Sigma_new = Sigma` and the noise variance is left unchanged.
pub fn em_iterate(data: &ObservedMatrix, params: &Hyperparameters) -> Result<EmStep> {
    if params.q() != data.q() {
        return Err(Error::Dimension(format!(
            "Sigma is {} x {} but the data has q = {}",
            params.q(),
            params.q(),
            data.q()
        )));
    }
    let groups = data.pattern_groups();
    let (m_new, params_new, r_diag) = em_update(data, &groups, params, true)?;
    Ok(EmStep {
        m_new,
        params_new,
        r_diag: r_diag.expect("requested diagnostics"),
    })
}

/// Shared E/M update. Accumulations run over patterns in lexicographic order
/// with rows ascending inside each group, a fixed order that makes repeated
/// runs bit-identical.
fn em_update(
    data: &ObservedMatrix,
    groups: &[PatternGroup],
    params: &Hyperparameters,
    want_r_diag: bool,
) -> Result<(DMatrix<f64>, Hyperparameters, Option<DMatrix<f64>>)> {
    let p = data.p();
    let q = data.q();
    let sigma = params.sigma();
    let mut m_new = DMatrix::zeros(p, q);
    let mut second_moment = DMatrix::zeros(q, q);
    let mut r_diag = want_r_diag.then(|| DMatrix::zeros(p, q));
    let mut noise_sum = 0.0;

    for group in groups {
        let count = group.rows.len() as f64;
        if group.cols.is_empty() {
            // No data: posterior equals the prior for every row in the group.
            second_moment.zip_apply(sigma, |acc, v| *acc += count * v);
            if let Some(diag) = r_diag.as_mut() {
                for &i in &group.rows {
                    for j in 0..q {
                        diag[(i, j)] = sigma[(j, j)];
                    }
                }
            }
            continue;
        }
        let solve = PatternSolve::new(sigma, params.sigma_sq(), &group.cols)?;
        let r = solve.posterior_cov(sigma);
        second_moment.zip_apply(&r, |acc, v| *acc += count * v);
        for &i in &group.rows {
            let (cols, vals) = data.row(i);
            let mean = solve.posterior_mean(vals);
            for (l, &j) in cols.iter().enumerate() {
                let resid = vals[l] - mean[j];
                noise_sum += resid * resid + r[(j, j)];
            }
            second_moment.ger(1.0, &mean, &mean, 1.0);
            m_new.row_mut(i).tr_copy_from(&mean);
            if let Some(diag) = r_diag.as_mut() {
                for j in 0..q {
                    diag[(i, j)] = r[(j, j)];
                }
            }
        }
    }

    let mut sigma_new = second_moment / p as f64;
    sigma_new = 0.5 * (&sigma_new + sigma_new.transpose());
    let n_obs = data.n_observed();
    let sigma_sq_new = if n_obs > 0 {
        (noise_sum / n_obs as f64).max(SIGMA_SQ_FLOOR)
    } else {
        params.sigma_sq()
    };
    let params_new = Hyperparameters::new(sigma_new, sigma_sq_new).map_err(|e| {
        Error::Conditioning(format!("M-step produced invalid hyperparameters: {e}"))
    })?;
    Ok((m_new, params_new, r_diag))
}

/// Runs the EM loop to convergence.
///
/// Requires at least one observed entry. Inputs with `p < q` are fitted on
/// the transpose and the result is transposed back (`FitResult::transposed`
/// records this); the row-wise prior should sit on the longer dimension.
pub fn fit(data: &ObservedMatrix, config: &EmConfig) -> Result<FitResult> {
    let result = if data.p() < data.q() {
        let mut result = fit_oriented(&data.transposed(), config)?;
        result.m_hat = result.m_hat.transpose();
        result.transposed = true;
        result
    } else {
        fit_oriented(data, config)?
    };
    if result.m_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning(
            "completed matrix has non-finite entries".into(),
        ));
    }
    Ok(result)
}

fn fit_oriented(data: &ObservedMatrix, config: &EmConfig) -> Result<FitResult> {
    let (m0, params0) = initialize(data, config)?;
    let groups = data.pattern_groups();
    let mut loglik_old = loglik_grouped(data, &groups, &params0)
        .map_err(|e| Error::Conditioning(format!("initial log-likelihood: {e}")))?;
    let mut trace = vec![loglik_old];
    let mut m_old = m0;
    let mut params_old = params0;

    for iter in 1..=config.max_iters {
        let (m_new, params_new, _) =
            em_update(data, &groups, &params_old, false).map_err(|e| attach_iteration(e, iter))?;
        let loglik_new =
            loglik_grouped(data, &groups, &params_new).map_err(|e| attach_iteration(e, iter))?;
        trace.push(loglik_new);

        let gain = loglik_new - loglik_old;
        if gain < config.eps1 {
            let stop_reason = if gain < -ASCENT_SLACK {
                StopReason::LoglikDecrease
            } else {
                StopReason::LoglikTol
            };
            return Ok(FitResult {
                m_hat: m_new,
                params: params_new,
                trace,
                stop_reason,
                transposed: false,
            });
        }
        let norm_old = m_old.norm_squared();
        // ||M_old|| = 0 leaves the relative-change criterion unsatisfied.
        if norm_old > 0.0 && (&m_new - &m_old).norm_squared() / norm_old < config.eps2 {
            return Ok(FitResult {
                m_hat: m_new,
                params: params_new,
                trace,
                stop_reason: StopReason::ParamTol,
                transposed: false,
            });
        }
        m_old = m_new;
        params_old = params_new;
        loglik_old = loglik_new;
    }

    Ok(FitResult {
        m_hat: m_old,
        params: params_old,
        trace,
        stop_reason: StopReason::MaxIters,
        transposed: false,
    })
}

fn attach_iteration(e: Error, iter: usize) -> Error {
    match e {
        Error::Conditioning(msg) => Error::Conditioning(format!("EM iteration {iter}: {msg}")),
        other => other,
    }
}
