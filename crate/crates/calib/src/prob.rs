//! Numeric primitives shared by the whole toolkit: softmax, prediction
//! extraction, logit scaling and negative log likelihood.
//!
//! Everything here is a pure function of its inputs and computes in f64.
//! Softmax subtracts the max logit before exponentiating and NLL goes
//! through log-sum-exp, so arbitrarily large logits stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One prediction record: the classifier's logit vector, the penultimate
/// feature representation and the ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
    pub true_label: usize,
}

/// An ordered collection of samples with consistent dimensions.
///
/// Construction validates the invariants once; everything downstream
/// relies on them: all logit vectors have length `num_classes`, all
/// feature vectors have length `feature_dim`, all values are finite and
/// every label is in range.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "dataset needs at least 2 classes, got {num_classes}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter(
                "dataset needs at least 1 sample".into(),
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.logits.len() != num_classes {
                return Err(Error::Data(format!(
                    "sample {i}: logits length {} ≠ {num_classes}",
                    s.logits.len()
                )));
            }
            if s.features.len() != feature_dim {
                return Err(Error::Data(format!(
                    "sample {i}: features length {} ≠ {feature_dim}",
                    s.features.len()
                )));
            }
            if !all_finite(&s.logits) || !all_finite(&s.features) {
                return Err(Error::Data(format!("sample {i}: non-finite value")));
            }
            if s.true_label >= num_classes {
                return Err(Error::Data(format!(
                    "sample {i}: label {} out of range for {num_classes} classes",
                    s.true_label
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}

/// Predicted label plus the full softmax distribution it came from.
/// `confidence` is always `probs[pred_label]`, the max-softmax score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pred_label: usize,
    pub confidence: f64,
    pub probs: Vec<f64>,
}

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "logit vector needs at least 2 entries, got {}",
            logits.len()
        )));
    }
    if !all_finite(logits) {
        return Err(Error::Data("non-finite logit".into()));
    }
    Ok(())
}

/// Softmax with max-subtraction, so `[1000.0, 0.0]` maps to `[≈1, ≈0]`
/// instead of overflowing.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Argmax over the logits (ties broken towards the lowest class index)
/// together with the max-softmax confidence.
pub fn predict(logits: &[f64]) -> Result<Prediction> {
    let probs = softmax(logits)?;
    let mut pred = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[pred] {
            pred = i;
        }
    }
    Ok(Prediction {
        pred_label: pred,
        confidence: probs[pred],
        probs,
    })
}

/// Divides every logit by the temperature `t`. The argmax is unchanged
/// for any `t > 0`, so scaling never alters the predicted class.
pub fn scale_logits(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {t}"
        )));
    }
    Ok(logits.iter().map(|&x| x / t).collect())
}

/// Mean negative log likelihood of the true classes under per-sample
/// temperature scaling. `per_sample_t` must have one entry per sample;
/// an all-ones vector gives the uncalibrated NLL.
pub fn nll(dataset: &Dataset, per_sample_t: &[f64]) -> Result<f64> {
    if per_sample_t.len() != dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "temperature vector length {} ≠ dataset size {}",
            per_sample_t.len(),
            dataset.len()
        )));
    }
    let mut total = 0.0;
    for (sample, &t) in dataset.samples().iter().zip(per_sample_t) {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {t}"
            )));
        }
        total += nll_grad_wrt_t(&sample.logits, sample.true_label, t).0;
    }
    Ok(total / dataset.len() as f64)
}

/// Argmax and max-softmax confidence at temperature `t`, without
/// materializing the full distribution. Ties go to the lowest index,
/// like `predict`.
pub(crate) fn max_softmax(logits: &[f64], t: f64) -> (usize, f64) {
    let mut pred = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[pred] {
            pred = i;
        }
    }
    let top = logits[pred];
    let mut sum = 0.0;
    for &y in logits {
        sum += ((y - top) / t).exp();
    }
    (pred, 1.0 / sum)
}

/// Per-sample NLL under temperature `t` and its derivative with respect
/// to `t`, both via log-sum-exp:
///
/// nll = lse(y/t) − y_label/t,  d nll/dt = (y_label − Σ_j p_j y_j) / t².
pub(crate) fn nll_grad_wrt_t(logits: &[f64], label: usize, t: f64) -> (f64, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
    let mut sum = 0.0;
    for &y in logits {
        sum += (y / t - max).exp();
    }
    let lse = max + sum.ln();
    let nll = lse - logits[label] / t;
    let mut weighted = 0.0;
    for &y in logits {
        weighted += (y / t - lse).exp() * y;
    }
    let grad = (logits[label] - weighted) / (t * t);
    (nll, grad)
}
