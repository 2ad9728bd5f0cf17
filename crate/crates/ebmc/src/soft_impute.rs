//! Soft-impute baseline: nuclear-norm regularized completion.
//!
//! Minimizes `1/2 sum_{(i,j) in Omega} (Y_ij - M_ij)^2 + lambda ||M||_*` by
//! the fixed-point iteration
//!
//! ```text
//! M <- SVT_lambda( P_Omega(Y) + P_Omega_perp(M) ),
//! ```
//!
//! where `SVT_lambda` soft-thresholds the singular values by `lambda`. The
//! singular value thresholding step is evaluated exactly through the
//! eigendecomposition of the Gram matrix on the shorter side, which is the
//! thin SVD of the iterate; only components above the threshold are ever
//! reconstructed.
//!
//! `lambda` is selected by holdout cross-validation over a log-spaced grid
//! bracketing the useful range (anything at or above the top singular value
//! of the zero-filled matrix collapses the solution to zero).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ObservedMatrix;

/// Cross-validation configuration.
///
/// Defaults: `K = 20` candidates, `20%` validation split, `tol = 1e-4`,
/// `max_iters = 500`.
#[derive(Debug, Clone, Copy)]
pub struct SoftImputeConfig {
    /// Number of candidate regularization values `K`.
    pub lambda_grid_size: usize,
    /// Percentage of observed entries held out for validation, in (0, 100).
    pub validation_percent: f64,
    /// Relative squared Frobenius change below which a fit stops.
    pub tol: f64,
    pub max_iters: usize,
    pub rng_seed: u64,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        Self {
            lambda_grid_size: 20,
            validation_percent: 20.0,
            tol: 1e-4,
            max_iters: 500,
            rng_seed: 0,
        }
    }
}

impl SoftImputeConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda_grid_size == 0 {
            return Err(Error::InvalidInput(
                "lambda grid size must be at least 1".into(),
            ));
        }
        if self.validation_percent.is_nan()
            || self.validation_percent <= 0.0
            || self.validation_percent >= 100.0
        {
            return Err(Error::InvalidInput(format!(
                "validation percentage must be in (0, 100), got {}",
                self.validation_percent
            )));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Singular value soft-thresholding: every singular value of `a` is reduced
/// by `lambda` and clamped at zero, singular vectors unchanged.
fn svt(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    if lambda == 0.0 {
        return a.clone();
    }
    let (p, q) = a.shape();
    if q <= p {
        let gram = {
            let g = a.tr_mul(a);
            0.5 * (&g + g.transpose())
        };
        let eigen = SymmetricEigen::new(gram);
        let factors = threshold_factors(&eigen, lambda);
        if factors.is_empty() {
            return DMatrix::zeros(p, q);
        }
        // M = A V_k diag((s - lambda)/s) V_k'.
        let basis = scaled_basis(&eigen.eigenvectors, &factors);
        let kept = kept_columns(&eigen.eigenvectors, &factors);
        a * basis * kept.transpose()
    } else {
        let gram = {
            let g = a * a.transpose();
            0.5 * (&g + g.transpose())
        };
        let eigen = SymmetricEigen::new(gram);
        let factors = threshold_factors(&eigen, lambda);
        if factors.is_empty() {
            return DMatrix::zeros(p, q);
        }
        let basis = scaled_basis(&eigen.eigenvectors, &factors);
        let kept = kept_columns(&eigen.eigenvectors, &factors);
        kept * basis.transpose() * a
    }
}

/// Indices and scale factors `(s - lambda)/s` of the components surviving
/// the threshold.
fn threshold_factors(eigen: &SymmetricEigen<f64, nalgebra::Dyn>, lambda: f64) -> Vec<(usize, f64)> {
    eigen
        .eigenvalues
        .iter()
        .enumerate()
        .filter_map(|(idx, &ev)| {
            let s = ev.max(0.0).sqrt();
            (s > lambda).then(|| (idx, (s - lambda) / s))
        })
        .collect()
}

fn scaled_basis(vectors: &DMatrix<f64>, factors: &[(usize, f64)]) -> DMatrix<f64> {
    let mut basis = DMatrix::zeros(vectors.nrows(), factors.len());
    for (col, &(idx, factor)) in factors.iter().enumerate() {
        basis
            .column_mut(col)
            .copy_from(&(vectors.column(idx) * factor));
    }
    basis
}

fn kept_columns(vectors: &DMatrix<f64>, factors: &[(usize, f64)]) -> DMatrix<f64> {
    let mut kept = DMatrix::zeros(vectors.nrows(), factors.len());
    for (col, &(idx, _)) in factors.iter().enumerate() {
        kept.column_mut(col).copy_from(&vectors.column(idx));
    }
    kept
}

/// Top singular value of a dense matrix via the Gram spectrum.
fn top_singular_value(a: &DMatrix<f64>) -> f64 {
    let (p, q) = a.shape();
    let gram = if q <= p {
        a.tr_mul(a)
    } else {
        a * a.transpose()
    };
    let sym = 0.5 * (&gram + gram.transpose());
    sym.symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// Soft-impute from the zero matrix. See [`soft_impute_from`].
pub fn soft_impute(
    data: &ObservedMatrix,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<DMatrix<f64>> {
    let init = DMatrix::zeros(data.p(), data.q());
    soft_impute_from(data, lambda, tol, max_iters, init).map(|(m, _)| m)
}

/// Soft-impute from a warm start; returns the solution and the number of
/// iterations used.
///
/// Stops when `||M_new - M_old||_F^2 / ||M_old||_F^2 < tol`; when the old
/// iterate is zero the criterion holds only if the new iterate is zero too.
pub fn soft_impute_from(
    data: &ObservedMatrix,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    init: DMatrix<f64>,
) -> Result<(DMatrix<f64>, usize)> {
    if data.n_observed() == 0 {
        return Err(Error::InvalidInput(
            "soft-impute needs at least one observed entry".into(),
        ));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidInput(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if init.shape() != (data.p(), data.q()) {
        return Err(Error::Dimension(format!(
            "warm start is {} x {} but the data is {} x {}",
            init.nrows(),
            init.ncols(),
            data.p(),
            data.q()
        )));
    }
    let mut m = init;
    for iter in 1..=max_iters {
        // P_Omega(Y) + P_Omega_perp(M)
        let mut filled = m.clone();
        for &(i, j, y) in data.entries() {
            filled[(i, j)] = y;
        }
        let m_new = svt(&filled, lambda);
        let change = (&m_new - &m).norm_squared();
        let scale = m.norm_squared();
        let converged = if scale == 0.0 {
            change == 0.0
        } else {
            change / scale < tol
        };
        m = m_new;
        if converged {
            return Ok((m, iter));
        }
    }
    Ok((m, max_iters))
}

/// Selects `lambda` by holdout cross-validation and returns the refitted
/// completion.
///
/// The observed entries are split into train/validation by seeded uniform
/// sampling; candidates are log-spaced over `[s1/1000, s1]` with `s1` the
/// top singular value of the zero-filled training matrix, swept largest
/// first with warm starts. The winner (ties to the larger `lambda`) is
/// refitted on all observed entries, warm-started from its CV solution.
pub fn cv_select_lambda(
    data: &ObservedMatrix,
    config: &SoftImputeConfig,
) -> Result<(f64, DMatrix<f64>)> {
    config.validate()?;
    let n = data.n_observed();
    if n == 0 {
        return Err(Error::InvalidInput(
            "cross-validation needs observed entries".into(),
        ));
    }
    let n_val = (config.validation_percent / 100.0 * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidInput(format!(
            "degenerate validation split: {n_val} of {n} entries held out"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut held = vec![false; n];
    for idx in rand::seq::index::sample(&mut rng, n, n_val) {
        held[idx] = true;
    }
    let entries = data.entries();
    let train_triples: Vec<_> = entries
        .iter()
        .enumerate()
        .filter(|(l, _)| !held[*l])
        .map(|(_, &t)| t)
        .collect();
    let validation: Vec<_> = entries
        .iter()
        .enumerate()
        .filter(|(l, _)| held[*l])
        .map(|(_, &t)| t)
        .collect();
    let train = ObservedMatrix::from_triples(data.p(), data.q(), train_triples)?;

    let s1 = top_singular_value(&train.zero_filled());
    let grid = lambda_grid(s1, config.lambda_grid_size);

    let mut warm = DMatrix::zeros(data.p(), data.q());
    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for &lambda in grid.iter().rev() {
        let (m_fit, _) = soft_impute_from(&train, lambda, config.tol, config.max_iters, warm)?;
        let val_err: f64 = validation
            .iter()
            .map(|&(i, j, y)| (y - m_fit[(i, j)]).powi(2))
            .sum();
        let improved = best.as_ref().is_none_or(|(err, _, _)| val_err < *err);
        if improved {
            best = Some((val_err, lambda, m_fit.clone()));
        }
        warm = m_fit;
    }
    let (_, lambda_best, m_cv) = best.expect("grid is nonempty");
    let (m_hat, _) = soft_impute_from(data, lambda_best, config.tol, config.max_iters, m_cv)?;
    Ok((lambda_best, m_hat))
}

/// `k` log-spaced values over `[s1/1000, s1]`, ascending; a single-point
/// grid takes the lower end.
fn lambda_grid(s1: f64, k: usize) -> Vec<f64> {
    let lo = s1 / 1e3;
    if k == 1 {
        return vec![lo];
    }
    (0..k)
        .map(|i| {
            if s1 <= 0.0 {
                0.0
            } else {
                lo * (s1 / lo).powf(i as f64 / (k - 1) as f64)
            }
        })
        .collect()
}
