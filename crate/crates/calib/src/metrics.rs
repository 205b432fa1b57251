//! Reliability measurement: confidence binning, expected calibration error,
//! per-class reports and frequency-based class partitioning.
//!
//! ECE is the bin-count-weighted mean absolute gap between per-bin accuracy
//! and per-bin mean confidence. The confidence axis is split into `k`
//! half-open bins `[i/k, (i+1)/k)`, with the last bin closed at 1.0; empty
//! bins contribute nothing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{self, Dataset, Prediction, Sample};

/// Which slice of the data a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetTag {
    All,
    Common,
    Rare,
    Custom,
}

/// Per-bin statistics. `accuracy` and `mean_confidence` are `None` when the
/// bin holds no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub mean_confidence: Option<f64>,
}

/// Reliability summary for one dataset slice: the bins plus ECE, NLL and
/// overall accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<BinStats>,
    pub ece: f64,
    pub nll: f64,
    pub accuracy: f64,
    pub total: usize,
    pub subset_tag: SubsetTag,
}

/// Per-ground-truth-class calibration summary. Metrics are `None` for
/// classes with no samples in the evaluated slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub class_name: String,
    pub num_samples: usize,
    pub recall: Option<f64>,
    pub mean_confidence: Option<f64>,
    /// Signed gap `mean_confidence − recall`; positive means overconfident.
    pub delta_acc: Option<f64>,
    pub ece: Option<f64>,
}

/// Class names and their training-split frequencies; the source of the
/// common/rare partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassManifest {
    names: Vec<String>,
    frequencies: Vec<u64>,
}

impl ClassManifest {
    pub fn new(names: Vec<String>, frequencies: Vec<u64>) -> Result<Self> {
        if names.len() != frequencies.len() {
            return Err(Error::InvalidParameter(format!(
                "manifest has {} names but {} frequencies",
                names.len(),
                frequencies.len()
            )));
        }
        if names.is_empty() {
            return Err(Error::InvalidParameter("manifest is empty".into()));
        }
        Ok(Self { names, frequencies })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }
}

/// Maps a confidence in [0,1] to its bin: `min(floor(confidence·k), k−1)`.
/// Boundary values land in the upper bin; 1.0 lands in the last bin.
pub fn assign_bin(confidence: f64, k: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::InvalidParameter(
            "bin count must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::InvalidParameter(format!(
            "confidence {confidence} outside [0, 1]"
        )));
    }
    Ok(((confidence * k as f64).floor() as usize).min(k - 1))
}

/// Single-pass accumulator behind `bin_stats` and the fit-trace ECE.
/// Sums are accumulated in sample order so results are deterministic.
struct BinAccumulator {
    counts: Vec<usize>,
    correct: Vec<usize>,
    conf_sums: Vec<f64>,
}

impl BinAccumulator {
    fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            correct: vec![0; k],
            conf_sums: vec![0.0; k],
        }
    }

    fn push(&mut self, confidence: f64, is_correct: bool, k: usize) -> Result<()> {
        let bin = assign_bin(confidence, k)?;
        self.counts[bin] += 1;
        self.correct[bin] += usize::from(is_correct);
        self.conf_sums[bin] += confidence;
        Ok(())
    }

    fn into_bin_stats(self, k: usize) -> Vec<BinStats> {
        (0..k)
            .map(|i| {
                let count = self.counts[i];
                let (accuracy, mean_confidence) = if count > 0 {
                    (
                        Some(self.correct[i] as f64 / count as f64),
                        Some(self.conf_sums[i] / count as f64),
                    )
                } else {
                    (None, None)
                };
                BinStats {
                    index: i,
                    lower: i as f64 / k as f64,
                    upper: (i + 1) as f64 / k as f64,
                    count,
                    accuracy,
                    mean_confidence,
                }
            })
            .collect()
    }
}

pub(crate) fn bin_stats_from_pairs(pairs: &[(f64, bool)], k: usize) -> Result<Vec<BinStats>> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot bin an empty prediction list".into(),
        ));
    }
    let mut acc = BinAccumulator::new(k);
    for &(confidence, is_correct) in pairs {
        acc.push(confidence, is_correct, k)?;
    }
    Ok(acc.into_bin_stats(k))
}

/// Per-bin count, accuracy and mean confidence for a list of predictions
/// paired with their true labels.
pub fn bin_stats(predictions: &[(Prediction, usize)], k: usize) -> Result<Vec<BinStats>> {
    let pairs: Vec<(f64, bool)> = predictions
        .iter()
        .map(|(p, label)| (p.confidence, p.pred_label == *label))
        .collect();
    bin_stats_from_pairs(&pairs, k)
}

/// Expected calibration error: Σ_i (count_i / total) · |acc_i − conf_i|,
/// with empty bins contributing zero.
pub fn ece(bins: &[BinStats], total: usize) -> Result<f64> {
    let counted: usize = bins.iter().map(|b| b.count).sum();
    if counted != total {
        return Err(Error::InvalidParameter(format!(
            "bin counts sum to {counted} but total is {total}"
        )));
    }
    if total == 0 {
        return Err(Error::InvalidParameter(
            "ECE of zero samples is undefined".into(),
        ));
    }
    let mut sum = 0.0;
    for bin in bins {
        if bin.count == 0 {
            continue;
        }
        match (bin.accuracy, bin.mean_confidence) {
            (Some(acc), Some(conf)) => {
                sum += bin.count as f64 / total as f64 * (acc - conf).abs();
            }
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "bin {} has {} samples but no statistics",
                    bin.index, bin.count
                )));
            }
        }
    }
    Ok(sum)
}

fn scaled_predictions(dataset: &Dataset, per_sample_t: &[f64]) -> Result<Vec<Prediction>> {
    if per_sample_t.len() != dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "temperature vector length {} ≠ dataset size {}",
            per_sample_t.len(),
            dataset.len()
        )));
    }
    dataset
        .samples()
        .iter()
        .zip(per_sample_t)
        .map(|(sample, &t)| prob::predict(&prob::scale_logits(&sample.logits, t)?))
        .collect()
}

/// Builds the full reliability report for a dataset slice under per-sample
/// temperatures (all-ones = the raw model).
pub fn reliability_report(
    dataset: &Dataset,
    per_sample_t: &[f64],
    k: usize,
    subset_tag: SubsetTag,
) -> Result<ReliabilityReport> {
    let predictions = scaled_predictions(dataset, per_sample_t)?;
    let pairs: Vec<(f64, bool)> = predictions
        .iter()
        .zip(dataset.samples())
        .map(|(p, s)| (p.confidence, p.pred_label == s.true_label))
        .collect();
    let bins = bin_stats_from_pairs(&pairs, k)?;
    let total = dataset.len();
    let ece = ece(&bins, total)?;
    let nll = prob::nll(dataset, per_sample_t)?;
    let correct = pairs.iter().filter(|(_, ok)| *ok).count();
    Ok(ReliabilityReport {
        bins,
        ece,
        nll,
        accuracy: correct as f64 / total as f64,
        total,
        subset_tag,
    })
}

/// Per-ground-truth-class recall, mean confidence, confidence-accuracy gap
/// and ECE, in class-id order. Uses the same `k` bins for every class.
pub fn per_class_report(
    dataset: &Dataset,
    per_sample_t: &[f64],
    manifest: &ClassManifest,
    k: usize,
) -> Result<Vec<ClassReport>> {
    if manifest.len() != dataset.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "manifest has {} classes but dataset has {}",
            manifest.len(),
            dataset.num_classes()
        )));
    }
    let predictions = scaled_predictions(dataset, per_sample_t)?;
    let m = dataset.num_classes();
    let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); m];
    for (p, s) in predictions.iter().zip(dataset.samples()) {
        per_class[s.true_label].push((p.confidence, p.pred_label == s.true_label));
    }
    let mut reports = Vec::with_capacity(m);
    for (class_id, pairs) in per_class.into_iter().enumerate() {
        let n = pairs.len();
        let report = if n == 0 {
            ClassReport {
                class_id,
                class_name: manifest.names()[class_id].clone(),
                num_samples: 0,
                recall: None,
                mean_confidence: None,
                delta_acc: None,
                ece: None,
            }
        } else {
            let correct = pairs.iter().filter(|(_, ok)| *ok).count();
            let recall = correct as f64 / n as f64;
            let mean_conf = pairs.iter().map(|(c, _)| c).sum::<f64>() / n as f64;
            let class_ece = ece(&bin_stats_from_pairs(&pairs, k)?, n)?;
            ClassReport {
                class_id,
                class_name: manifest.names()[class_id].clone(),
                num_samples: n,
                recall: Some(recall),
                mean_confidence: Some(mean_conf),
                delta_acc: Some(mean_conf - recall),
                ece: Some(class_ece),
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Splits class ids into (common, rare) halves by training frequency:
/// sort descending (ties towards the lower id), the first ⌈m/2⌉ ids are
/// common and the rest rare.
pub fn partition_classes(manifest: &ClassManifest) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.sort_by(|&a, &b| {
        manifest.frequencies()[b]
            .cmp(&manifest.frequencies()[a])
            .then(a.cmp(&b))
    });
    let cut = manifest.len().div_ceil(2);
    let common: BTreeSet<usize> = order[..cut].iter().copied().collect();
    let rare: BTreeSet<usize> = order[cut..].iter().copied().collect();
    (common, rare)
}

/// Keeps only the samples whose true label is in `classes`, preserving
/// order. Class count and feature dimension are unchanged.
pub fn subset_filter(dataset: &Dataset, classes: &BTreeSet<usize>) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(Error::InvalidParameter("class filter is empty".into()));
    }
    let samples: Vec<Sample> = dataset
        .samples()
        .iter()
        .filter(|s| classes.contains(&s.true_label))
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(Error::Data(
            "class filter matches no samples in the dataset".into(),
        ));
    }
    Dataset::new(samples, dataset.num_classes(), dataset.feature_dim())
}
