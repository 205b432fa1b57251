//! Global temperature scaling: one scalar τ dividing every logit vector.

use crate::error::{Error, Result};
use crate::metrics;
use crate::prob::{self, Dataset};

use super::{FitConfig, FitTrace, TraceRecord, MIN_STEP, TRACE_BINS};

/// Temperatures are clamped to this floor during fitting so a wild step
/// can never cross into τ ≤ 0.
pub const TAU_FLOOR: f64 = 0.05;

/// A single learned scaling temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureScaler {
    tau: f64,
}

impl TemperatureScaler {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Mean NLL of the dataset at temperature `tau` and its derivative
/// with respect to `tau`.
pub fn temp_nll_and_grad(dataset: &Dataset, tau: f64) -> Result<(f64, f64)> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    let mut nll_sum = 0.0;
    let mut grad_sum = 0.0;
    for sample in dataset.samples() {
        let (nll, grad) = prob::nll_grad_wrt_t(&sample.logits, sample.true_label, tau);
        nll_sum += nll;
        grad_sum += grad;
    }
    let n = dataset.len() as f64;
    Ok((nll_sum / n, grad_sum / n))
}

fn trace_record(dataset: &Dataset, tau: f64, nll: f64, epoch: usize) -> Result<TraceRecord> {
    let pairs: Vec<(f64, bool)> = dataset
        .samples()
        .iter()
        .map(|s| {
            let (pred, conf) = prob::max_softmax(&s.logits, tau);
            (conf, pred == s.true_label)
        })
        .collect();
    let bins = metrics::bin_stats_from_pairs(&pairs, TRACE_BINS)?;
    let ece = metrics::ece(&bins, pairs.len())?;
    Ok(TraceRecord {
        epoch,
        nll,
        ece,
        mean_temperature: tau,
        std_temperature: 0.0,
    })
}

/// Fits τ on a validation dataset: full-batch gradient descent from
/// τ₀ = 1.0 for exactly `config.epochs` steps, each step length found by
/// halving from the running step size until the NLL does not increase.
/// τ is clamped to [`TAU_FLOOR`] after every step.
pub fn fit_temperature(
    dataset: &Dataset,
    config: &FitConfig,
) -> Result<(TemperatureScaler, FitTrace)> {
    config.validate()?;
    let mut tau = 1.0;
    let mut trace = FitTrace::default();
    if config.epochs == 0 {
        return Ok((TemperatureScaler::new(tau)?, trace));
    }

    let (mut loss, mut grad) = temp_nll_and_grad(dataset, tau)?;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NumericFailure {
            epoch: 0,
            message: format!("non-finite loss or gradient at τ = {tau}"),
        });
    }
    let mut alpha = config.learning_rate;
    for epoch in 1..=config.epochs {
        loop {
            let candidate = (tau - alpha * grad).max(TAU_FLOOR);
            let (cand_loss, cand_grad) = temp_nll_and_grad(dataset, candidate)?;
            if cand_loss.is_finite() && cand_grad.is_finite() && cand_loss <= loss {
                tau = candidate;
                loss = cand_loss;
                grad = cand_grad;
                break;
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                // No improving step in this direction; keep τ as is.
                break;
            }
        }
        trace.records.push(trace_record(dataset, tau, loss, epoch)?);
        alpha *= 2.0;
    }
    Ok((TemperatureScaler::new(tau)?, trace))
}
