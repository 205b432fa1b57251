//! File formats: line-delimited JSON prediction files, class manifests,
//! calibrator persistence, report tables (JSON/CSV) and fit traces.
//!
//! Every writer is a deterministic function of its input: fixed field
//! order, fixed row order, and floats in shortest round-trip decimal form
//! so that read(write(x)) reproduces x bit for bit.

pub mod svg;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrators::{Calibrator, CaringCalibrator, FitTrace, TemperatureScaler};
use crate::error::{Error, Result};
use crate::metrics::{ClassManifest, ClassReport, ReliabilityReport};
use crate::prob::{all_finite, Dataset, Sample};

pub const CALIBRATOR_FORMAT_VERSION: u32 = 1;

/// One line of a prediction file.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    label: usize,
    logits: Vec<f64>,
    features: Vec<f64>,
}

/// One line of a calibrated prediction file: the input record plus the
/// applied temperature and the resulting prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedRecord {
    pub id: String,
    pub label: usize,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
    pub pred: usize,
    pub confidence: f64,
    pub temperature: f64,
}

/// Where the optional class manifest sits next to a prediction file.
pub fn manifest_sidecar_path(predictions: &Path) -> PathBuf {
    predictions.with_extension("manifest.json")
}

/// Writes one JSON object per sample: `{"id", "label", "logits", "features"}`.
pub fn write_predictions(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for sample in dataset.samples() {
        let record = PredictionRecord {
            id: sample.id.clone(),
            label: sample.true_label,
            logits: sample.logits.clone(),
            features: sample.features.clone(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a prediction file, validating every line: dimensions are fixed by
/// the first record, values must be finite and labels in range. Errors name
/// the offending 1-based line. If a `<stem>.manifest.json` sidecar exists it
/// is loaded and checked against the dataset's class count.
pub fn read_predictions(path: &Path) -> Result<(Dataset, Option<ClassManifest>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            return Err(Error::Data(format!("line {line_no}: empty line")));
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        let (m, d) = *dims.get_or_insert((record.logits.len(), record.features.len()));
        if record.logits.len() != m {
            return Err(Error::Data(format!(
                "line {line_no}: logits length {} ≠ {m}",
                record.logits.len()
            )));
        }
        if record.features.len() != d {
            return Err(Error::Data(format!(
                "line {line_no}: features length {} ≠ {d}",
                record.features.len()
            )));
        }
        if !all_finite(&record.logits) {
            return Err(Error::Data(format!(
                "line {line_no}: non-finite value in logits"
            )));
        }
        if !all_finite(&record.features) {
            return Err(Error::Data(format!(
                "line {line_no}: non-finite value in features"
            )));
        }
        if record.label >= m {
            return Err(Error::Data(format!(
                "line {line_no}: label {} out of range for {m} classes",
                record.label
            )));
        }
        samples.push(Sample {
            id: record.id,
            logits: record.logits,
            features: record.features,
            true_label: record.label,
        });
    }
    let (m, d) = dims.ok_or_else(|| Error::Data("prediction file is empty".into()))?;
    let dataset = Dataset::new(samples, m, d)?;
    let sidecar = manifest_sidecar_path(path);
    let manifest = if sidecar.is_file() {
        let manifest = read_manifest(&sidecar)?;
        check_manifest(&manifest, &dataset)?;
        Some(manifest)
    } else {
        None
    };
    Ok((dataset, manifest))
}

pub fn check_manifest(manifest: &ClassManifest, dataset: &Dataset) -> Result<()> {
    if manifest.len() != dataset.num_classes() {
        return Err(Error::Data(format!(
            "manifest lists {} classes but the dataset has {}",
            manifest.len(),
            dataset.num_classes()
        )));
    }
    Ok(())
}

pub fn write_applied_records(records: &[AppliedRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    classes: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    frequency: u64,
}

pub fn read_manifest(path: &Path) -> Result<ClassManifest> {
    let file: ManifestFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
    let (names, frequencies) = file
        .classes
        .into_iter()
        .map(|c| (c.name, c.frequency))
        .unzip();
    ClassManifest::new(names, frequencies)
}

pub fn write_manifest(manifest: &ClassManifest, path: &Path) -> Result<()> {
    let file = ManifestFile {
        classes: manifest
            .names()
            .iter()
            .zip(manifest.frequencies())
            .map(|(name, &frequency)| ManifestEntry {
                name: name.clone(),
                frequency,
            })
            .collect(),
    };
    write_pretty_json(&file, path)
}

/// On-disk calibrator schema, shared by both kinds.
#[derive(Debug, Serialize, Deserialize)]
struct CalibratorFile {
    kind: String,
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
}

pub fn save_calibrator(calibrator: &Calibrator, path: &Path) -> Result<()> {
    let file = match calibrator {
        Calibrator::Temperature(scaler) => CalibratorFile {
            kind: "temperature".into(),
            format_version: CALIBRATOR_FORMAT_VERSION,
            tau: Some(scaler.tau()),
            w1: None,
            b1: None,
            w2: None,
            b2: None,
            hidden_dim: None,
            feature_dim: None,
        },
        Calibrator::Caring(net) => CalibratorFile {
            kind: "caring".into(),
            format_version: CALIBRATOR_FORMAT_VERSION,
            tau: None,
            w1: Some(net.w1().to_vec()),
            b1: Some(net.b1().to_vec()),
            w2: Some(net.w2().to_vec()),
            b2: Some(net.b2()),
            hidden_dim: Some(net.hidden_dim()),
            feature_dim: Some(net.feature_dim()),
        },
    };
    write_pretty_json(&file, path)
}

pub fn load_calibrator(path: &Path) -> Result<Calibrator> {
    let file: CalibratorFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Data(format!("calibrator {}: {e}", path.display())))?;
    if file.format_version != CALIBRATOR_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported calibrator format version {}",
            file.format_version
        )));
    }
    let missing = |field: &str| Error::Data(format!("calibrator file lacks \"{field}\""));
    match file.kind.as_str() {
        "temperature" => {
            let tau = file.tau.ok_or_else(|| missing("tau"))?;
            let scaler = TemperatureScaler::new(tau).map_err(|e| Error::Data(e.to_string()))?;
            Ok(Calibrator::Temperature(scaler))
        }
        "caring" => {
            let w1 = file.w1.ok_or_else(|| missing("w1"))?;
            let b1 = file.b1.ok_or_else(|| missing("b1"))?;
            let w2 = file.w2.ok_or_else(|| missing("w2"))?;
            let b2 = file.b2.ok_or_else(|| missing("b2"))?;
            let net =
                CaringCalibrator::new(w1, b1, w2, b2).map_err(|e| Error::Data(e.to_string()))?;
            if let Some(h) = file.hidden_dim {
                if h != net.hidden_dim() {
                    return Err(Error::Data(format!(
                        "hidden_dim {} does not match w1 with {} rows",
                        h,
                        net.hidden_dim()
                    )));
                }
            }
            if let Some(d) = file.feature_dim {
                if d != net.feature_dim() {
                    return Err(Error::Data(format!(
                        "feature_dim {} does not match w1 with {} columns",
                        d,
                        net.feature_dim()
                    )));
                }
            }
            Ok(Calibrator::Caring(net))
        }
        other => Err(Error::Data(format!(
            "unsupported calibrator kind \"{other}\""
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

fn write_pretty_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn fmt4(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Reliability report as JSON (full precision, re-readable) or CSV with the
/// fixed columns `bin_low,bin_high,count,accuracy,mean_confidence,gap`.
/// Empty bins keep their count of 0 and blank metric cells.
pub fn write_reliability_report(
    report: &ReliabilityReport,
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    match format {
        ReportFormat::Json => write_pretty_json(report, path),
        ReportFormat::Csv => {
            let mut out = String::from("bin_low,bin_high,count,accuracy,mean_confidence,gap\n");
            for bin in &report.bins {
                let gap = match (bin.accuracy, bin.mean_confidence) {
                    (Some(acc), Some(conf)) => Some((acc - conf).abs()),
                    _ => None,
                };
                out.push_str(&format!(
                    "{:.4},{:.4},{},{},{},{}\n",
                    bin.lower,
                    bin.upper,
                    bin.count,
                    fmt4(bin.accuracy),
                    fmt4(bin.mean_confidence),
                    fmt4(gap),
                ));
            }
            std::fs::write(path, out)?;
            Ok(())
        }
    }
}

pub fn read_reliability_report(path: &Path) -> Result<ReliabilityReport> {
    serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Data(format!("report {}: {e}", path.display())))
}

/// Per-class reports as JSON or CSV with the fixed columns
/// `class,n,recall,mean_conf,delta_acc,ece`, one row per class id.
pub fn write_class_reports(
    reports: &[ClassReport],
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    match format {
        ReportFormat::Json => write_pretty_json(&reports, path),
        ReportFormat::Csv => {
            let mut out = String::from("class,n,recall,mean_conf,delta_acc,ece\n");
            for r in reports {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    csv_escape(&r.class_name),
                    r.num_samples,
                    fmt4(r.recall),
                    fmt4(r.mean_confidence),
                    fmt4(r.delta_acc),
                    fmt4(r.ece),
                ));
            }
            std::fs::write(path, out)?;
            Ok(())
        }
    }
}

/// Per-epoch fit diagnostics as CSV: `epoch,nll,ece,mean_temperature,std_temperature`.
pub fn write_fit_trace(trace: &FitTrace, path: &Path) -> Result<()> {
    let mut out = String::from("epoch,nll,ece,mean_temperature,std_temperature\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.nll, r.ece, r.mean_temperature, r.std_temperature
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
