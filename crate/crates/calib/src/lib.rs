//! Confidence calibration toolkit for multi-class classifiers.
//!
//! A classifier's max-softmax score only deserves to be called a
//! probability if, among all predictions made with confidence p, a
//! fraction p is actually correct. This crate measures that agreement
//! (expected calibration error, NLL, reliability diagrams) and fits two
//! post-hoc calibrators that repair it without touching the predicted
//! classes:
//!
//! - **temperature scaling** — one global τ dividing all logits;
//! - **CARING** — a small network that infers a per-sample temperature
//!   T(z) ≥ 1 from the sample's feature representation, so inputs the
//!   model handles poorly can be softened more than inputs it masters.
//!
//! Both are fitted on held-out validation logits with deterministic
//! full-batch gradient descent. [`synth`] generates miscalibrated
//! datasets with known ground truth for end-to-end verification, and
//! [`io`] defines the prediction/calibrator/report file formats.

pub mod calibrators;
pub mod error;
pub mod io;
pub mod metrics;
pub mod prob;
pub mod synth;

pub use calibrators::{
    caring_confidence, caring_loss_and_grads, caring_temperature, fit_caring, fit_temperature,
    temp_nll_and_grad, Calibrator, CaringCalibrator, CaringGradients, FitConfig, FitTrace,
    TemperatureScaler, TraceRecord,
};
pub use error::{Error, Result};
pub use metrics::{
    assign_bin, bin_stats, ece, partition_classes, per_class_report, reliability_report,
    subset_filter, BinStats, ClassManifest, ClassReport, ReliabilityReport, SubsetTag,
};
pub use prob::{nll, predict, scale_logits, softmax, Dataset, Prediction, Sample};
pub use synth::{gen_global, gen_grouped, generate, SynthMode, SynthSpec};
