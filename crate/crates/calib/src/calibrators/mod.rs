//! Post-hoc calibrators: a single global temperature and the CARING
//! input-guided temperature network, each fitted by deterministic
//! full-batch gradient descent on the validation NLL.
//!
//! Both fitters run the same update rule: a step along the negative
//! gradient whose length starts at the configured learning rate and is
//! halved until the loss does not increase, then doubled again for the
//! next epoch. That keeps runs monotone in the loss and independent of
//! dataset scale while staying fully deterministic.

mod caring;
mod temperature;

pub use caring::{
    caring_confidence, caring_loss_and_grads, caring_temperature, fit_caring, CaringCalibrator,
    CaringGradients,
};
pub use temperature::{fit_temperature, temp_nll_and_grad, TemperatureScaler};

use crate::error::{Error, Result};
use crate::prob::Dataset;

/// Bin count used for the per-epoch ECE in fit traces.
pub(crate) const TRACE_BINS: usize = 10;

/// Step lengths below this are treated as "no descent direction left";
/// the epoch then keeps the current parameters.
pub(crate) const MIN_STEP: f64 = 1e-18;

/// Hyperparameters for both fitters. `weight_decay`, `seed` and
/// `hidden_dim` only matter for the CARING network.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Initial step length of the line-searched gradient descent.
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the weight matrices (not the biases).
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden_dim: usize,
}

impl FitConfig {
    /// Defaults for the global temperature fit: lr 0.01 for 50 epochs.
    pub fn temperature_defaults() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            weight_decay: 0.0,
            seed: 0,
            hidden_dim: 0,
        }
    }

    /// Defaults for the CARING fit: lr 0.005 for 300 epochs, weight decay
    /// 1e-6, hidden width 64.
    pub fn caring_defaults() -> Self {
        Self {
            learning_rate: 0.005,
            epochs: 300,
            weight_decay: 1e-6,
            seed: 0,
            hidden_dim: 64,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One fit-trace entry, recorded after each epoch's update on the
/// fitting data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub nll: f64,
    pub ece: f64,
    pub mean_temperature: f64,
    pub std_temperature: f64,
}

/// Per-epoch training diagnostics: NLL, ECE and the mean/standard
/// deviation of the temperatures applied to the fitting data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
}

impl FitTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Either calibrator behind one interface: a per-sample temperature.
#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    Temperature(TemperatureScaler),
    Caring(CaringCalibrator),
}

impl Calibrator {
    pub fn kind(&self) -> &'static str {
        match self {
            Calibrator::Temperature(_) => "temperature",
            Calibrator::Caring(_) => "caring",
        }
    }

    /// Temperature this calibrator applies to a sample with the given
    /// feature vector. The global scaler ignores the features.
    pub fn temperature_for(&self, features: &[f64]) -> Result<f64> {
        match self {
            Calibrator::Temperature(scaler) => Ok(scaler.tau()),
            Calibrator::Caring(net) => caring_temperature(net, features),
        }
    }

    pub fn per_sample_temperatures(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if let Calibrator::Caring(net) = self {
            if net.feature_dim() != dataset.feature_dim() {
                return Err(Error::Data(format!(
                    "calibrator expects feature dimension {} but dataset has {}",
                    net.feature_dim(),
                    dataset.feature_dim()
                )));
            }
        }
        dataset
            .samples()
            .iter()
            .map(|s| self.temperature_for(&s.features))
            .collect()
    }
}

/// Population mean and standard deviation, accumulated in input order.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
