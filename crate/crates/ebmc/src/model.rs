//! Domain types and closed-form inference kernels for the hierarchical model.
//!
//! Rows `m_i` of the latent matrix are a priori `N_q(0, Sigma)` and the
//! observed entries satisfy `Y_ij = M_ij + noise`, `noise ~ N(0, sigma^2)`.
//! Conditioning on the observed entries of row `i` (index set `omega`,
//! values `z`) gives a Gaussian posterior `m_i | z ~ N(m_hat, R)` with
//!
//! ```text
//! P[omega, omega] = (sigma^2 I + Sigma[omega, omega])^{-1}   (zero elsewhere)
//! R     = Sigma - Sigma P Sigma
//! m_hat = sigma^{-2} R b,   b = z on omega, 0 elsewhere.
//! ```
//!
//! The observed-data log-likelihood factorizes over rows:
//!
//! ```text
//! log p(Y_Omega | Sigma, sigma^2) = -(|Omega|/2) log(2 pi)
//!     - (1/2) sum_i [ log det A_i + y_i' A_i^{-1} y_i ],
//! A_i = sigma^2 I + Sigma[Omega_i, Omega_i].
//! ```
//!
//! All solves against `A_i` go through its Cholesky factor; `Sigma` itself is
//! never inverted, so a rank-deficient prior covariance is fine as long as
//! `sigma^2 > 0`. Rows sharing an observation pattern share one factorization.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on covariance matrices.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Relative tolerance (against the largest eigenvalue) for numerical PSD.
const PSD_RTOL: f64 = 1e-10;

/// A sparse `p x q` real matrix stored as entry triples plus per-row index
/// sets, the canonical observed-data container.
///
/// Entries are canonicalized to row-major order at construction, so every
/// derived quantity is independent of the order triples were supplied in.
#[derive(Debug, Clone)]
pub struct ObservedMatrix {
    p: usize,
    q: usize,
    entries: Vec<(usize, usize, f64)>,
    row_cols: Vec<Vec<usize>>,
    row_vals: Vec<Vec<f64>>,
}

impl ObservedMatrix {
    /// Builds an observed matrix from 0-based `(row, col, value)` triples.
    ///
    /// Fails on out-of-range indices, duplicate `(row, col)` pairs, and
    /// non-finite values. The triple list may be empty.
    pub fn from_triples(
        p: usize,
        q: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix dimensions must be positive, got {p} x {q}"
            )));
        }
        let mut entries: Vec<(usize, usize, f64)> = triples.into_iter().collect();
        for &(i, j, y) in &entries {
            if i >= p || j >= q {
                return Err(Error::InvalidInput(format!(
                    "entry index ({i}, {j}) out of range for a {p} x {q} matrix"
                )));
            }
            if !y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) has non-finite value {y}"
                )));
            }
        }
        entries.sort_unstable_by_key(|a| (a.0, a.1));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::InvalidInput(format!(
                "duplicate entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut row_cols = vec![Vec::new(); p];
        let mut row_vals = vec![Vec::new(); p];
        for &(i, j, y) in &entries {
            row_cols[i].push(j);
            row_vals[i].push(y);
        }
        Ok(Self {
            p,
            q,
            entries,
            row_cols,
            row_vals,
        })
    }

    /// Number of rows.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of columns.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Total number of observed entries `|Omega|`.
    pub fn n_observed(&self) -> usize {
        self.entries.len()
    }

    /// Entries in canonical row-major order.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Observed column indices (ascending) and matching values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        (&self.row_cols[i], &self.row_vals[i])
    }

    /// Dense copy with unobserved entries set to zero.
    pub fn zero_filled(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.q);
        for &(i, j, y) in &self.entries {
            m[(i, j)] = y;
        }
        m
    }

    /// Row-major observation mask of length `p * q`.
    pub fn observed_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.p * self.q];
        for &(i, j, _) in &self.entries {
            mask[i * self.q + j] = true;
        }
        mask
    }

    /// The same data viewed as a `q x p` matrix.
    pub fn transposed(&self) -> Self {
        let triples: Vec<_> = self.entries.iter().map(|&(i, j, y)| (j, i, y)).collect();
        Self::from_triples(self.q, self.p, triples).expect("transpose preserves validity")
    }

    /// Rows grouped by identical observation pattern, patterns in
    /// lexicographic order and row indices ascending within each group.
    pub(crate) fn pattern_groups(&self) -> Vec<PatternGroup> {
        let mut by_pattern: HashMap<&[usize], Vec<usize>> = HashMap::new();
        for i in 0..self.p {
            by_pattern.entry(&self.row_cols[i]).or_default().push(i);
        }
        let mut groups: Vec<PatternGroup> = by_pattern
            .into_iter()
            .map(|(cols, rows)| PatternGroup {
                cols: cols.to_vec(),
                rows,
            })
            .collect();
        groups.sort_unstable_by(|a, b| a.cols.cmp(&b.cols));
        groups
    }
}

/// Rows sharing one observation pattern; they share one factorization.
pub(crate) struct PatternGroup {
    pub cols: Vec<usize>,
    /// Ascending; `pattern_groups` pushes rows in index order.
    pub rows: Vec<usize>,
}

/// Model hyperparameters: the row prior covariance `Sigma` (q x q, symmetric
/// PSD) and the observation noise variance `sigma^2 > 0`.
#[derive(Debug, Clone)]
pub struct Hyperparameters {
    sigma: DMatrix<f64>,
    sigma_sq: f64,
}

impl Hyperparameters {
    /// Validates and wraps `(Sigma, sigma^2)`.
    ///
    /// `Sigma` must be symmetric to `1e-12` relative and numerically PSD
    /// (eigenvalues no smaller than `-1e-10` times the largest eigenvalue);
    /// `sigma^2` must be positive and finite.
    pub fn new(sigma: DMatrix<f64>, sigma_sq: f64) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "Sigma must be square and nonempty, got {} x {}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !sigma_sq.is_finite() || sigma_sq <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sigma_sq must be positive and finite, got {sigma_sq}"
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Sigma has non-finite entries".into()));
        }
        let scale = sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..sigma.nrows() {
            for c in (r + 1)..sigma.ncols() {
                if (sigma[(r, c)] - sigma[(c, r)]).abs() > SYMMETRY_RTOL * scale.max(1e-300) {
                    return Err(Error::InvalidInput(format!(
                        "Sigma is not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        let eigs = sigma.clone().symmetric_eigenvalues();
        let max_eig = eigs.max();
        let min_eig = eigs.min();
        if min_eig < -PSD_RTOL * max_eig.max(0.0) {
            return Err(Error::InvalidInput(format!(
                "Sigma is not numerically PSD: min eigenvalue {min_eig:e}, max {max_eig:e}"
            )));
        }
        Ok(Self { sigma, sigma_sq })
    }

    /// The row prior covariance.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// The observation noise variance.
    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    /// Column dimension `q` of the model.
    pub fn q(&self) -> usize {
        self.sigma.nrows()
    }
}

/// Gaussian posterior of one latent row: mean `m_hat` and covariance `R`.
#[derive(Debug, Clone)]
pub struct RowPosterior {
    /// Posterior mean, length q.
    pub mean: DVector<f64>,
    /// Posterior covariance, q x q symmetric PSD with `R <= Sigma` (Loewner).
    pub cov: DMatrix<f64>,
}

/// Cholesky factor of `A = sigma^2 I_k + Sigma[omega, omega]` for one
/// observation pattern, the single factorization behind the posterior, the
/// log-likelihood, and the EM E-step.
pub(crate) struct PatternFactor {
    /// Lower-triangular `L` with `L L' = A`.
    l: DMatrix<f64>,
}

impl PatternFactor {
    pub fn new(sigma: &DMatrix<f64>, sigma_sq: f64, omega: &[usize]) -> Result<Self> {
        let k = omega.len();
        let mut a = DMatrix::zeros(k, k);
        for (r, &jr) in omega.iter().enumerate() {
            for (c, &jc) in omega.iter().enumerate() {
                a[(r, c)] = sigma[(jr, jc)];
            }
        }
        for d in 0..k {
            a[(d, d)] += sigma_sq;
        }
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::Conditioning(format!(
                "Cholesky factorization of sigma^2 I + Sigma[omega, omega] failed \
                 for a pattern of size {k}"
            ))
        })?;
        Ok(Self { l: chol.unpack() })
    }

    /// `log det A = 2 sum_j log L_jj`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.l.nrows())
            .map(|d| self.l[(d, d)].ln())
            .sum::<f64>()
    }

    /// `y' A^{-1} y = ||L^{-1} y||^2`.
    pub fn quad_form(&self, values: &[f64]) -> f64 {
        let mut w = DVector::from_column_slice(values);
        self.l.solve_lower_triangular_mut(&mut w);
        w.norm_squared()
    }
}

/// Pattern factorization extended with `Z = L^{-1} Sigma[omega, :]`, enough
/// to produce posterior means and the shared posterior covariance.
pub(crate) struct PatternSolve {
    factor: PatternFactor,
    /// `k x q`; `Z' Z = Sigma P Sigma`.
    z: DMatrix<f64>,
}

impl PatternSolve {
    pub fn new(sigma: &DMatrix<f64>, sigma_sq: f64, omega: &[usize]) -> Result<Self> {
        let factor = PatternFactor::new(sigma, sigma_sq, omega)?;
        let q = sigma.ncols();
        let k = omega.len();
        let mut z = DMatrix::zeros(k, q);
        for (r, &jr) in omega.iter().enumerate() {
            z.row_mut(r).copy_from(&sigma.row(jr));
        }
        factor.l.solve_lower_triangular_mut(&mut z);
        Ok(Self { factor, z })
    }

    /// Posterior covariance `R = Sigma - Sigma P Sigma = Sigma - Z' Z`.
    pub fn posterior_cov(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        sigma - self.z.tr_mul(&self.z)
    }

    /// Posterior mean for observed values `z`.
    ///
    /// Evaluated as `Sigma[:, omega] A^{-1} z = Z' (L^{-1} z)`, which equals
    /// `sigma^{-2} R b` identically.
    pub fn posterior_mean(&self, values: &[f64]) -> DVector<f64> {
        let mut w = DVector::from_column_slice(values);
        self.factor.l.solve_lower_triangular_mut(&mut w);
        self.z.tr_mul(&w)
    }
}

/// Posterior of one latent row given its observed coordinates.
///
/// `omega` holds the observed column indices (0-based, strictly ascending,
/// possibly empty) and `values` the matching observations. With no data the
/// posterior is the prior: mean zero, covariance `Sigma`.
pub fn row_posterior(
    omega: &[usize],
    values: &[f64],
    params: &Hyperparameters,
) -> Result<RowPosterior> {
    let q = params.q();
    if omega.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "omega has {} indices but {} values were supplied",
            omega.len(),
            values.len()
        )));
    }
    if !omega.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidInput(
            "omega must be strictly ascending (canonical index-set form)".into(),
        ));
    }
    if let Some(&j) = omega.last() {
        if j >= q {
            return Err(Error::InvalidInput(format!(
                "observed index {j} out of range for q = {q}"
            )));
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observed values must be finite".into()));
    }
    if omega.is_empty() {
        return Ok(RowPosterior {
            mean: DVector::zeros(q),
            cov: params.sigma().clone(),
        });
    }
    let ps = PatternSolve::new(params.sigma(), params.sigma_sq(), omega)?;
    Ok(RowPosterior {
        mean: ps.posterior_mean(values),
        cov: ps.posterior_cov(params.sigma()),
    })
}

/// Observed-data log-likelihood `log p(Y_Omega | Sigma, sigma^2)`.
///
/// Rows with no observed entries contribute nothing. Row contributions are
/// accumulated in ascending row order, so the result does not depend on the
/// order entries were supplied in.
pub fn observed_loglik(data: &ObservedMatrix, params: &Hyperparameters) -> Result<f64> {
    if params.q() != data.q() {
        return Err(Error::Dimension(format!(
            "Sigma is {} x {} but the data has q = {}",
            params.q(),
            params.q(),
            data.q()
        )));
    }
    let groups = data.pattern_groups();
    loglik_grouped(data, &groups, params)
}

/// Log-likelihood over precomputed pattern groups (one factorization per
/// pattern, shared by all rows in the group).
pub(crate) fn loglik_grouped(
    data: &ObservedMatrix,
    groups: &[PatternGroup],
    params: &Hyperparameters,
) -> Result<f64> {
    let mut per_row = vec![0.0; data.p()];
    for group in groups {
        if group.cols.is_empty() {
            continue;
        }
        let factor = PatternFactor::new(params.sigma(), params.sigma_sq(), &group.cols)?;
        let log_det = factor.log_det();
        for &i in &group.rows {
            let (_, vals) = data.row(i);
            per_row[i] = -0.5 * log_det - 0.5 * factor.quad_form(vals);
        }
    }
    let n_obs = data.n_observed() as f64;
    let mut total = -0.5 * n_obs * (2.0 * std::f64::consts::PI).ln();
    for value in per_row {
        total += value;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Direct-inversion oracle for the posterior: `R = (Sigma^{-1} +
    /// sigma^{-2} D)^{-1}`, `m_hat = sigma^{-2} R b`, with `D` the 0/1
    /// diagonal observation mask. Requires strictly PD `Sigma`.
    fn direct_posterior(
        sigma: &DMatrix<f64>,
        sigma_sq: f64,
        omega: &[usize],
        values: &[f64],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let q = sigma.nrows();
        let sigma_inv = sigma.clone().try_inverse().expect("oracle needs PD Sigma");
        let mut precision = sigma_inv;
        for &j in omega {
            precision[(j, j)] += 1.0 / sigma_sq;
        }
        let r = precision.try_inverse().expect("posterior precision is PD");
        let mut b = DVector::zeros(q);
        for (l, &j) in omega.iter().enumerate() {
            b[j] = values[l];
        }
        let mean = &r * b / sigma_sq;
        (mean, r)
    }

    fn random_pd_sigma(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(q, 2 * q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = &a * a.transpose() / (2.0 * q as f64);
        let mut sigma = 0.5 * (&g + g.transpose());
        for d in 0..q {
            sigma[(d, d)] += 0.05;
        }
        sigma
    }

    #[test]
    fn empty_pattern_returns_prior() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let params = Hyperparameters::new(sigma.clone(), 1.0).unwrap();
        let post = row_posterior(&[], &[], &params).unwrap();
        assert_eq!(post.mean, DVector::zeros(2));
        assert_eq!(post.cov, sigma);
    }

    #[test]
    fn identity_prior_decouples_coordinates() {
        // q = 2, Sigma = I, sigma^2 = 1, observe coordinate 0 with value z:
        // scalar shrinkage 1/(1+1) on the observed coordinate only.
        let params = Hyperparameters::new(DMatrix::identity(2, 2), 1.0).unwrap();
        let z = 3.2;
        let post = row_posterior(&[0], &[z], &params).unwrap();
        assert_relative_eq!(post.mean[0], z / 2.0, max_relative = 1e-14);
        assert_abs_diff_eq!(post.mean[1], 0.0);
        assert_relative_eq!(post.cov[(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(post.cov[(1, 1)], 1.0, max_relative = 1e-14);
        assert_abs_diff_eq!(post.cov[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn row_posterior_validates_inputs() {
        let params = Hyperparameters::new(DMatrix::identity(3, 3), 1.0).unwrap();
        assert!(row_posterior(&[1, 0], &[1.0, 2.0], &params).is_err()); // unsorted
        assert!(row_posterior(&[0, 0], &[1.0, 2.0], &params).is_err()); // duplicate
        assert!(row_posterior(&[3], &[1.0], &params).is_err()); // out of range
        assert!(row_posterior(&[0], &[f64::NAN], &params).is_err()); // non-finite
        assert!(row_posterior(&[0], &[1.0, 2.0], &params).is_err()); // length mismatch
    }

    #[test]
    fn unobserved_coordinates_keep_zero_mean_under_diagonal_prior() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 2.0, 1.3]));
        let params = Hyperparameters::new(sigma, 0.5).unwrap();
        let post = row_posterior(&[1], &[4.0], &params).unwrap();
        assert_abs_diff_eq!(post.mean[0], 0.0);
        assert_abs_diff_eq!(post.mean[2], 0.0);
    }

    #[test]
    fn posterior_matches_direct_inversion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = random_pd_sigma(&mut rng, 4);
        let params = Hyperparameters::new(sigma.clone(), 0.8).unwrap();
        let omega = [0, 2];
        let values = [1.4, -0.3];
        let post = row_posterior(&omega, &values, &params).unwrap();
        let (mean_o, cov_o) = direct_posterior(&sigma, 0.8, &omega, &values);
        assert_relative_eq!(post.mean, mean_o, max_relative = 1e-10);
        assert_relative_eq!(post.cov, cov_o, max_relative = 1e-10);
    }

    #[test]
    fn full_observation_isotropic_shrinkage() {
        for c in [0.5, 1.0, 2.0] {
            let q = 3;
            let params = Hyperparameters::new(DMatrix::identity(q, q) * c, 1.0).unwrap();
            let omega: Vec<usize> = (0..q).collect();
            let values = [1.5, -2.0, 0.25];
            let post = row_posterior(&omega, &values, &params).unwrap();
            for (j, &value) in values.iter().enumerate() {
                assert_relative_eq!(post.mean[j], c / (1.0 + c) * value, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn loglik_single_entry_zero_value() {
        // One observed entry y = 0 kills the quadratic term.
        let s = 0.7;
        let sigma_sq = 0.4;
        let data = ObservedMatrix::from_triples(1, 1, vec![(0, 0, 0.0)]).unwrap();
        let params = Hyperparameters::new(DMatrix::from_element(1, 1, s), sigma_sq).unwrap();
        let ll = observed_loglik(&data, &params).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (sigma_sq + s).ln();
        assert_relative_eq!(ll, expected, max_relative = 1e-14);
    }

    #[test]
    fn loglik_matches_univariate_gaussian_density() {
        // y = 2 with total variance sigma^2 + Sigma_11 = 2.
        let data = ObservedMatrix::from_triples(1, 1, vec![(0, 0, 2.0)]).unwrap();
        let params = Hyperparameters::new(DMatrix::from_element(1, 1, 1.5), 0.5).unwrap();
        let ll = observed_loglik(&data, &params).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * 2.0f64.ln() - 1.0;
        assert_relative_eq!(ll, expected, max_relative = 1e-14);
    }

    #[test]
    fn loglik_sums_over_independent_rows() {
        let params = Hyperparameters::new(DMatrix::from_element(1, 1, 1.5), 0.5).unwrap();
        let one = ObservedMatrix::from_triples(1, 1, vec![(0, 0, 2.0)]).unwrap();
        let other = ObservedMatrix::from_triples(1, 1, vec![(0, 0, -0.7)]).unwrap();
        let both = ObservedMatrix::from_triples(2, 1, vec![(0, 0, 2.0), (1, 0, -0.7)]).unwrap();
        let sum =
            observed_loglik(&one, &params).unwrap() + observed_loglik(&other, &params).unwrap();
        assert_relative_eq!(
            observed_loglik(&both, &params).unwrap(),
            sum,
            max_relative = 1e-14
        );
    }

    #[test]
    fn loglik_ignores_entry_order() {
        let params =
            Hyperparameters::new(random_pd_sigma(&mut ChaCha8Rng::seed_from_u64(3), 3), 0.9)
                .unwrap();
        let triples = vec![(0, 0, 1.0), (0, 2, -0.5), (1, 1, 0.3), (2, 0, 2.0)];
        let mut shuffled = triples.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let a = ObservedMatrix::from_triples(3, 3, triples).unwrap();
        let b = ObservedMatrix::from_triples(3, 3, shuffled).unwrap();
        // Canonicalization makes the two accumulations identical, not merely close.
        assert_eq!(
            observed_loglik(&a, &params).unwrap(),
            observed_loglik(&b, &params).unwrap()
        );
    }

    #[test]
    fn duplicate_triples_rejected() {
        let err = ObservedMatrix::from_triples(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn out_of_range_triples_rejected() {
        assert!(ObservedMatrix::from_triples(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(ObservedMatrix::from_triples(2, 2, vec![(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn hyperparameters_reject_asymmetric_or_indefinite_sigma() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(Hyperparameters::new(asym, 1.0).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Hyperparameters::new(indef, 1.0).is_err());
        assert!(Hyperparameters::new(DMatrix::identity(2, 2), 0.0).is_err());
        assert!(Hyperparameters::new(DMatrix::identity(2, 2), -1.0).is_err());
    }

    #[test]
    fn rank_deficient_prior_is_accepted() {
        // Sigma = ones is PSD with a zero eigenvalue; the shifted system stays PD.
        let sigma = DMatrix::from_element(3, 3, 1.0);
        let params = Hyperparameters::new(sigma, 0.5).unwrap();
        let post = row_posterior(&[0, 1], &[1.0, 1.0], &params).unwrap();
        assert!(post.mean.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Woodbury consistency: the factorized posterior agrees with the
        /// direct-inversion oracle whenever the oracle exists.
        #[test]
        fn woodbury_consistency(seed in 0u64..1_000, q in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma = random_pd_sigma(&mut rng, q);
            let sigma_sq = rng.gen_range(0.05..4.0);
            let omega: Vec<usize> = (0..q).filter(|_| rng.gen_bool(0.6)).collect();
            let values: Vec<f64> =
                omega.iter().map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            let params = Hyperparameters::new(sigma.clone(), sigma_sq).unwrap();
            let post = row_posterior(&omega, &values, &params).unwrap();
            let (mean_o, cov_o) = direct_posterior(&sigma, sigma_sq, &omega, &values);
            let mean_scale = mean_o.norm().max(1e-12);
            prop_assert!((&post.mean - &mean_o).norm() <= 1e-10 * mean_scale.max(1.0));
            prop_assert!((&post.cov - &cov_o).norm() <= 1e-10 * cov_o.norm());
        }

        /// Posterior contraction: Sigma - R is PSD up to 1e-10.
        #[test]
        fn posterior_never_inflates_prior(seed in 0u64..1_000, q in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma = random_pd_sigma(&mut rng, q);
            let sigma_sq = rng.gen_range(0.05..4.0);
            let omega: Vec<usize> = (0..q).filter(|_| rng.gen_bool(0.5)).collect();
            let values: Vec<f64> =
                omega.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let params = Hyperparameters::new(sigma.clone(), sigma_sq).unwrap();
            let post = row_posterior(&omega, &values, &params).unwrap();
            let gap = &sigma - &post.cov;
            let eigs = (0.5 * (&gap + gap.transpose())).symmetric_eigenvalues();
            prop_assert!(eigs.min() >= -1e-10);
            let cov_eigs =
                (0.5 * (&post.cov + post.cov.transpose())).symmetric_eigenvalues();
            prop_assert!(cov_eigs.min() >= -1e-10);
        }
    }
}
