//! Empirical Bayes matrix completion.
//!
//! The crate estimates a partially observed `p x q` matrix under the
//! hierarchical model
//!
//! ```text
//! M ~ N_{p,q}(0, I_p, Sigma),      Y | M ~ N_{p,q}(M, sigma^2 I_p, I_q),
//! ```
//!
//! where only the entries of `Y` at an index set `Omega` are observed. The
//! hyperparameters `(Sigma, sigma^2)` are fitted by an EM loop ([`em::fit`])
//! whose E-step is the closed-form Gaussian row posterior
//! ([`model::row_posterior`]) and whose M-step averages posterior moments.
//! The completed matrix is the stack of posterior row means.
//!
//! Alongside the solver, the crate ships the closed-form ancestors of the
//! method for fully observed matrices ([`shrinkage`]), a minimal soft-impute
//! baseline with cross-validated regularization ([`soft_impute`]), and a
//! seeded synthetic benchmark harness ([`bench`]).
//!
//! All row/column indices in this crate are 0-based.

pub mod bench;
pub mod em;
mod error;
pub mod model;
pub mod shrinkage;
pub mod soft_impute;

pub use error::{Error, Result};
