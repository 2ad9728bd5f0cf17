//! Times one reference-scale fit; a quick way to eyeball solver cost.

use std::time::Instant;

use ebmc::bench::{error1, error2, gen_instance, Algorithm, ExperimentSpec};
use ebmc::em::{fit, EmConfig, Sigma0};
use ebmc::soft_impute::{cv_select_lambda, SoftImputeConfig};

fn main() {
    let spec = ExperimentSpec {
        p: 1000,
        q: 100,
        r: 10,
        sigma_sq: 1.0,
        fill: 0.5,
        seed: 0,
        algorithm: Algorithm::Eb,
        replicates: 1,
    };
    let (m_true, data) = gen_instance(&spec).unwrap();
    let config = EmConfig {
        sigma0_sq: Sigma0::Fixed(1.0),
        ..EmConfig::default()
    };
    let started = Instant::now();
    let result = fit(&data, &config).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "iterations = {}, stop = {}, time = {elapsed:.2}s",
        result.iterations(),
        result.stop_reason
    );
    println!(
        "error1 = {:.4}, error2 = {:.4}, sigma_sq_hat = {:.4}",
        error1(&result.m_hat, &m_true).unwrap(),
        error2(&result.m_hat, &m_true, &data).unwrap(),
        result.params.sigma_sq()
    );

    if std::env::args().any(|a| a == "--soft-impute") {
        let config = SoftImputeConfig {
            rng_seed: 0,
            ..SoftImputeConfig::default()
        };
        let started = Instant::now();
        let (lambda, m_hat) = cv_select_lambda(&data, &config).unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        println!(
            "soft-impute: lambda = {lambda:.3}, time = {elapsed:.2}s, error2 = {:.4}",
            error2(&m_hat, &m_true, &data).unwrap()
        );
    }
}
