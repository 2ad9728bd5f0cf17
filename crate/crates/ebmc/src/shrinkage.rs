//! Closed-form shrinkage estimators for a fully observed mean matrix.
//!
//! For `Y ~ N_{p,q}(M, I_p, I_q)` with `p - q - 1 > 0`, the Efron-Morris
//! estimator
//!
//! ```text
//! M_EM = Y (I_q - (p - q - 1) (Y'Y)^{-1})
//! ```
//!
//! dominates the maximum likelihood estimator `Y` under Frobenius loss.
//! Equivalently it shrinks each singular value of `Y` while keeping the
//! singular vectors: `sigma_i -> (1 - (p - q - 1) / sigma_i^2) sigma_i`.
//! When `sigma_i^2 < p - q - 1` that factor is negative; the raw estimator
//! is kept as is, with an explicit positive-part variant for experiments.
//!
//! Also here: the known-covariance Bayes estimator `Y (I - (I + Sigma)^{-1})`
//! and the log-density of the singular value shrinkage prior
//! `pi(M) = det(M'M)^{-(p-q-1)/2}`.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Condition number of `Y'Y` beyond which the Gram-based path defers to the
/// SVD form (the two are algebraically identical).
const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// A dense real matrix kept in `p >= q` orientation.
///
/// Wide inputs are stored transposed and the flag remembers the original
/// orientation; estimator outputs are returned in the caller's orientation.
#[derive(Debug, Clone)]
pub struct TallMatrix {
    values: DMatrix<f64>,
    transposed: bool,
}

impl TallMatrix {
    /// Wraps a matrix, transposing if it is wider than tall. All entries
    /// must be finite.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("matrix must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        if values.nrows() >= values.ncols() {
            Ok(Self {
                values,
                transposed: false,
            })
        } else {
            Ok(Self {
                values: values.transpose(),
                transposed: true,
            })
        }
    }

    /// Rows in the stored (tall) orientation.
    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    /// Columns in the stored (tall) orientation.
    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    /// Whether the input was wide and stored transposed.
    pub fn was_transposed(&self) -> bool {
        self.transposed
    }

    /// The stored tall-orientation values.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Returns an estimate computed in tall orientation in the original
    /// input orientation.
    fn restore(&self, m: DMatrix<f64>) -> DMatrix<f64> {
        if self.transposed {
            m.transpose()
        } else {
            m
        }
    }

    fn shrink_count(&self) -> Result<f64> {
        let (p, q) = (self.p(), self.q());
        if p <= q + 1 {
            return Err(Error::Dimension(format!(
                "estimator requires p - q - 1 > 0, got p = {p}, q = {q}"
            )));
        }
        Ok((p - q - 1) as f64)
    }
}

fn rank_tolerance(sigma_max: f64, p: usize, q: usize) -> f64 {
    sigma_max * p.max(q) as f64 * f64::EPSILON
}

/// Efron-Morris estimator `Y (I - (p - q - 1) (Y'Y)^{-1})`.
///
/// Computed by a symmetric solve against the Gram matrix; defers to the SVD
/// form when the Gram matrix is ill-conditioned (condition number beyond
/// `1e12`). Errors if `p - q - 1 <= 0` or `Y` is rank-deficient to working
/// precision.
pub fn efron_morris(y: &TallMatrix) -> Result<DMatrix<f64>> {
    let c = y.shrink_count()?;
    let m = y.values();
    let gram = {
        let g = m.tr_mul(m);
        0.5 * (&g + g.transpose())
    };
    let eigs = gram.clone().symmetric_eigenvalues();
    let (min_eig, max_eig) = (eigs.min(), eigs.max());
    if min_eig <= 0.0 || max_eig / min_eig > GRAM_CONDITION_LIMIT {
        return svd_shrink(y, false);
    }
    let chol = match Cholesky::new(gram) {
        Some(chol) => chol,
        // Positive spectrum but a failed factorization: marginal case, the
        // SVD form handles it.
        None => return svd_shrink(y, false),
    };
    let mut x = m.transpose();
    chol.solve_mut(&mut x);
    Ok(y.restore(m - c * x.transpose()))
}

/// Stein's singular value decomposition form of the Efron-Morris estimator:
/// each singular value is scaled by `1 - (p - q - 1) / sigma_i^2` and the
/// singular vectors are kept.
pub fn efron_morris_svd_form(y: &TallMatrix) -> Result<DMatrix<f64>> {
    svd_shrink(y, false)
}

/// SVD form with negative shrinkage factors truncated at zero.
pub fn efron_morris_positive_part(y: &TallMatrix) -> Result<DMatrix<f64>> {
    svd_shrink(y, true)
}

fn svd_shrink(y: &TallMatrix, positive_part: bool) -> Result<DMatrix<f64>> {
    let c = y.shrink_count()?;
    let svd = y.values().clone().svd(true, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let sigma_min = sigma.min();
    if sigma_min <= rank_tolerance(sigma_max, y.p(), y.q()) {
        return Err(Error::RankDeficient(
            "Y'Y is singular to working precision; the estimator is undefined".into(),
        ));
    }
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    for (i, &s) in sigma.iter().enumerate() {
        let mut shrunk = s - c / s;
        if positive_part {
            shrunk = shrunk.max(0.0);
        }
        u.column_mut(i).scale_mut(shrunk);
    }
    Ok(y.restore(u * v_t))
}

/// Bayes estimator with known row covariance: `Y (I - (I + Sigma)^{-1})`.
///
/// `sigma` must be `q x q` for the stored orientation of `y` and symmetric
/// PSD; the solve goes through the Cholesky factor of `I + Sigma`.
pub fn bayes_given_sigma(y: &TallMatrix, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = y.q();
    if sigma.nrows() != q || sigma.ncols() != q {
        return Err(Error::Dimension(format!(
            "Sigma must be {q} x {q}, got {} x {}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let mut shifted = sigma.clone();
    for d in 0..q {
        shifted[(d, d)] += 1.0;
    }
    let chol = Cholesky::new(shifted).ok_or_else(|| {
        Error::Conditioning("I + Sigma is not positive definite; Sigma must be PSD".into())
    })?;
    let mut x = y.values().transpose();
    chol.solve_mut(&mut x);
    Ok(y.restore(y.values() - x.transpose()))
}

/// Log-density of the singular value shrinkage prior, up to its (improper)
/// normalization: `-((p - q - 1)/2) log det(M'M)`, evaluated through the
/// singular values of `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvsLogPrior {
    /// The log-density value, or the sentinel when `diverged` is set.
    pub value: f64,
    /// Set when `M` is rank-deficient and the density diverges; `value` is
    /// then a negative-infinity sentinel.
    pub diverged: bool,
}

/// Evaluates the singular value shrinkage prior log-density at `M`.
///
/// Requires `p - q - 1 > 0`. Rank-deficient `M` yields the divergence
/// sentinel rather than an error.
pub fn log_svs_prior(m: &TallMatrix) -> Result<SvsLogPrior> {
    let c = m.shrink_count()?;
    let svd = m.values().clone().svd(false, false);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    if sigma.min() <= rank_tolerance(sigma_max, m.p(), m.q()) {
        return Ok(SvsLogPrior {
            value: f64::NEG_INFINITY,
            diverged: true,
        });
    }
    // log det(M'M) = 2 sum_i log sigma_i.
    let value = -c * sigma.iter().map(|s| s.ln()).sum::<f64>();
    Ok(SvsLogPrior {
        value,
        diverged: false,
    })
}
