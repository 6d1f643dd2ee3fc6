//! Privacy budget accounting for the first exchanged message.
//!
//! Both noised rules release client i's round-zero tracker through t rounds
//! of mixing, so the Laplace scale seen by an observer at round t is the
//! mixed scale (W^t beta)_i. The budget (smaller is stronger protection) is
//!
//! * noise-difference rule: eps_i = delta_f_i / (sqrt(2) (W^t beta)_i)
//! * independent-noise rule: eps_i = delta_f_i / (W^t beta)_i
//!
//! The sqrt(2) comes from the difference of two independent Laplace draws
//! carrying twice the variance of one. At t = 0 the matrix power is the
//! exact identity and the classical delta_f / beta form falls out.

use crate::data::Dataset;
use crate::model::{grad_weights, Batch, ModelError, ModelParams, ModelSpec};
use crate::numerics::{mat_pow, DenseVector, NumericsError};
use crate::topology::WeightMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("{name} must be positive and finite, got {value} at index {index}")]
    NonPositive {
        name: &'static str,
        value: f64,
        index: usize,
    },
    #[error("expected {expected} clients, got {got}")]
    ClientMismatch { expected: usize, got: usize },
    #[error("mixed noise scale for client {client} is not positive")]
    DegenerateScale { client: usize },
    #[error("sensitivity probing needs at least two samples")]
    TooFewSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Per-client noise scales and query sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyParams {
    beta: DenseVector,
    delta_f: DenseVector,
}

impl PrivacyParams {
    pub fn new(beta: DenseVector, delta_f: DenseVector) -> Result<Self, PrivacyError> {
        if beta.len() != delta_f.len() {
            return Err(PrivacyError::ClientMismatch {
                expected: beta.len(),
                got: delta_f.len(),
            });
        }
        for (name, vec) in [("beta", &beta), ("delta_f", &delta_f)] {
            for (index, &value) in vec.iter().enumerate() {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(PrivacyError::NonPositive { name, value, index });
                }
            }
        }
        Ok(Self { beta, delta_f })
    }

    pub fn uniform(n: usize, beta: f64, delta_f: f64) -> Result<Self, PrivacyError> {
        Self::new(
            DenseVector::from_fn(n, |_| beta),
            DenseVector::from_fn(n, |_| delta_f),
        )
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &DenseVector {
        &self.beta
    }

    pub fn delta_f(&self) -> &DenseVector {
        &self.delta_f
    }
}

/// Per-client budgets observed at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub round: usize,
    pub per_client: Vec<f64>,
}

fn mixed_scales(
    params: &PrivacyParams,
    weights: &WeightMatrix,
    round: usize,
) -> Result<DenseVector, PrivacyError> {
    if weights.n() != params.n() {
        return Err(PrivacyError::ClientMismatch {
            expected: weights.n(),
            got: params.n(),
        });
    }
    let wt = mat_pow(weights.matrix(), round)?;
    let mixed = wt.mat_vec(params.beta())?;
    for (client, &s) in mixed.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(PrivacyError::DegenerateScale { client });
        }
    }
    Ok(mixed)
}

/// Budget of the noise-difference rule at the given round.
pub fn budget_lppa(
    params: &PrivacyParams,
    weights: &WeightMatrix,
    round: usize,
) -> Result<BudgetReport, PrivacyError> {
    let mixed = mixed_scales(params, weights, round)?;
    let per_client = (0..params.n())
        .map(|i| params.delta_f()[i] / (2.0_f64.sqrt() * mixed[i]))
        .collect();
    Ok(BudgetReport { round, per_client })
}

/// Budget of the independent-noise rule at the given round.
pub fn budget_dp(
    params: &PrivacyParams,
    weights: &WeightMatrix,
    round: usize,
) -> Result<BudgetReport, PrivacyError> {
    let mixed = mixed_scales(params, weights, round)?;
    let per_client = (0..params.n())
        .map(|i| params.delta_f()[i] / mixed[i])
        .collect();
    Ok(BudgetReport { round, per_client })
}

/// Worst-case L1 change of the shard gradient when one sample is removed,
/// evaluated at the given parameters. A data-driven stand-in for delta_f
/// when no analytic bound is available.
pub fn empirical_sensitivity(
    spec: &ModelSpec,
    params: &ModelParams,
    shard: &Dataset,
) -> Result<f64, PrivacyError> {
    let n = shard.n_samples();
    if n < 2 {
        return Err(PrivacyError::TooFewSamples);
    }
    let full = grad_weights(spec, params, &Batch::from_dataset(shard))?;
    let mut worst = 0.0_f64;
    for s in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&i| i != s).collect();
        let reduced = grad_weights(spec, params, &Batch::from_dataset(&shard.select(&keep)))?;
        worst = worst.max(full.sub(&reduced).norm1());
    }
    Ok(worst)
}
