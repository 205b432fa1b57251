//! `calib` — measure classifier calibration, fit post-hoc calibrators and
//! render reliability diagrams from exported logit files.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or numeric
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use calib::io::{self, AppliedRecord, ReportFormat};
use calib::{
    fit_caring, fit_temperature, partition_classes, per_class_report, predict, reliability_report,
    scale_logits, subset_filter, Calibrator, ClassManifest, Dataset, Error, FitConfig, FitTrace,
    Result, SubsetTag, SynthMode, SynthSpec,
};

#[derive(Parser)]
#[command(
    name = "calib",
    version,
    about = "Confidence calibration toolkit: evaluate, fit, apply, visualize, synthesize"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    All,
    Common,
    Rare,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Global,
    Grouped,
}

#[derive(Subcommand)]
enum Command {
    /// Measure ECE, NLL and accuracy of a prediction file
    Evaluate {
        /// Line-delimited JSON prediction file
        predictions: PathBuf,
        /// Calibrator JSON to apply before measuring
        #[arg(long)]
        calibrator: Option<PathBuf>,
        /// Number of confidence bins
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Evaluate all classes or only the common/rare half
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        /// Class manifest (names + training frequencies); overrides any
        /// `<stem>.manifest.json` sidecar
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write the reliability report as JSON
        #[arg(long)]
        out_json: Option<PathBuf>,
        /// Write the per-bin table as CSV
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Write the per-class table as CSV (requires a manifest)
        #[arg(long)]
        per_class_csv: Option<PathBuf>,
        /// Write the per-class table as JSON (requires a manifest)
        #[arg(long)]
        per_class_json: Option<PathBuf>,
    },
    /// Fit a global temperature on a validation file
    FitTemp {
        valfile: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Output calibrator JSON
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch diagnostics as CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fit the input-guided temperature network on a validation file
    FitCaring {
        valfile: PathBuf,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-6)]
        weight_decay: f64,
        /// Hidden width of the temperature network
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        /// Seed of the weight initialization
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output calibrator JSON
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch diagnostics as CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rewrite a prediction file with calibrated confidences
    Apply {
        predictions: PathBuf,
        calibrator: PathBuf,
        /// Output file; each record gains "pred", "confidence", "temperature"
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a reliability diagram (or confidence histogram) as SVG
    Diagram {
        predictions: PathBuf,
        #[arg(long)]
        calibrator: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out_svg: PathBuf,
        /// Also write the per-bin table as CSV
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Plot the confidence histogram instead of the reliability diagram
        #[arg(long)]
        histogram: bool,
    },
    /// Generate a synthetic miscalibrated prediction file
    Synth {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Sample count
        #[arg(long)]
        n: usize,
        /// Class count
        #[arg(long)]
        m: usize,
        /// Overconfidence factor (global mode)
        #[arg(long)]
        c: Option<f64>,
        /// Per-group overconfidence factors, e.g. 1.5,4.0 (grouped mode)
        #[arg(long, value_delimiter = ',')]
        groups: Vec<f64>,
        /// Feature dimension
        #[arg(long, default_value_t = 16)]
        d: usize,
        /// Feature noise scale
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a class manifest with the generated label counts
        #[arg(long)]
        manifest_out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let code = match e {
            Error::InvalidParameter(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Evaluate {
            predictions,
            calibrator,
            bins,
            subset,
            manifest,
            out_json,
            out_csv,
            per_class_csv,
            per_class_json,
        } => evaluate(
            &predictions,
            calibrator.as_deref(),
            bins,
            subset,
            manifest.as_deref(),
            out_json.as_deref(),
            out_csv.as_deref(),
            per_class_csv.as_deref(),
            per_class_json.as_deref(),
        ),
        Command::FitTemp {
            valfile,
            lr,
            epochs,
            out,
            trace,
        } => fit_temp_cmd(&valfile, lr, epochs, &out, trace.as_deref()),
        Command::FitCaring {
            valfile,
            lr,
            epochs,
            weight_decay,
            hidden,
            seed,
            out,
            trace,
        } => fit_caring_cmd(
            &valfile,
            lr,
            epochs,
            weight_decay,
            hidden,
            seed,
            &out,
            trace.as_deref(),
        ),
        Command::Apply {
            predictions,
            calibrator,
            out,
        } => apply(&predictions, &calibrator, &out),
        Command::Diagram {
            predictions,
            calibrator,
            bins,
            out_svg,
            out_csv,
            histogram,
        } => diagram(
            &predictions,
            calibrator.as_deref(),
            bins,
            &out_svg,
            out_csv.as_deref(),
            histogram,
        ),
        Command::Synth {
            mode,
            n,
            m,
            c,
            groups,
            d,
            noise,
            seed,
            out,
            manifest_out,
        } => synth(
            mode,
            n,
            m,
            c,
            &groups,
            d,
            noise,
            seed,
            &out,
            manifest_out.as_deref(),
        ),
    }
}

fn load_inputs(
    predictions: &Path,
    manifest: Option<&Path>,
) -> Result<(Dataset, Option<ClassManifest>)> {
    let (dataset, sidecar) = io::read_predictions(predictions)?;
    let manifest = match manifest {
        Some(path) => {
            let manifest = io::read_manifest(path)?;
            io::check_manifest(&manifest, &dataset)?;
            Some(manifest)
        }
        None => sidecar,
    };
    Ok((dataset, manifest))
}

fn temperatures_for(dataset: &Dataset, calibrator: Option<&Calibrator>) -> Result<Vec<f64>> {
    match calibrator {
        Some(cal) => cal.per_sample_temperatures(dataset),
        None => Ok(vec![1.0; dataset.len()]),
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    predictions: &Path,
    calibrator: Option<&Path>,
    bins: usize,
    subset: Subset,
    manifest: Option<&Path>,
    out_json: Option<&Path>,
    out_csv: Option<&Path>,
    per_class_csv: Option<&Path>,
    per_class_json: Option<&Path>,
) -> Result<()> {
    let (dataset, manifest) = load_inputs(predictions, manifest)?;
    let calibrator = calibrator.map(io::load_calibrator).transpose()?;

    let needs_manifest =
        subset != Subset::All || per_class_csv.is_some() || per_class_json.is_some();
    if needs_manifest && manifest.is_none() {
        return Err(Error::InvalidParameter(
            "--subset common|rare and per-class reports need --manifest \
             (or a manifest sidecar next to the predictions)"
                .into(),
        ));
    }

    let (slice, tag) = match subset {
        Subset::All => (dataset.clone(), SubsetTag::All),
        Subset::Common | Subset::Rare => {
            let (common, rare) = partition_classes(manifest.as_ref().unwrap());
            match subset {
                Subset::Common => (subset_filter(&dataset, &common)?, SubsetTag::Common),
                _ => (subset_filter(&dataset, &rare)?, SubsetTag::Rare),
            }
        }
    };

    let temps = temperatures_for(&slice, calibrator.as_ref())?;
    let report = reliability_report(&slice, &temps, bins, tag)?;
    println!("subset={}", subset_name(tag));
    println!("samples={}", report.total);
    println!("accuracy={:.6}", report.accuracy);
    println!("ece={:.6}", report.ece);
    println!("nll={:.6}", report.nll);
    if let Some(path) = out_json {
        io::write_reliability_report(&report, ReportFormat::Json, path)?;
    }
    if let Some(path) = out_csv {
        io::write_reliability_report(&report, ReportFormat::Csv, path)?;
    }
    if per_class_csv.is_some() || per_class_json.is_some() {
        let class_reports = per_class_report(&slice, &temps, manifest.as_ref().unwrap(), bins)?;
        if let Some(path) = per_class_csv {
            io::write_class_reports(&class_reports, ReportFormat::Csv, path)?;
        }
        if let Some(path) = per_class_json {
            io::write_class_reports(&class_reports, ReportFormat::Json, path)?;
        }
    }
    Ok(())
}

fn subset_name(tag: SubsetTag) -> &'static str {
    match tag {
        SubsetTag::All => "all",
        SubsetTag::Common => "common",
        SubsetTag::Rare => "rare",
        SubsetTag::Custom => "custom",
    }
}

fn write_trace(trace: &FitTrace, path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        io::write_fit_trace(trace, path)?;
    }
    Ok(())
}

fn fit_temp_cmd(
    valfile: &Path,
    lr: f64,
    epochs: usize,
    out: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let (dataset, _) = io::read_predictions(valfile)?;
    let config = FitConfig {
        learning_rate: lr,
        epochs,
        ..FitConfig::temperature_defaults()
    };
    let (scaler, trace) = fit_temperature(&dataset, &config)?;
    io::save_calibrator(&Calibrator::Temperature(scaler), out)?;
    write_trace(&trace, trace_path)?;
    println!("tau={:.6}", scaler.tau());
    if let Some(last) = trace.records.last() {
        println!("final_nll={:.6}", last.nll);
        println!("final_ece={:.6}", last.ece);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_caring_cmd(
    valfile: &Path,
    lr: f64,
    epochs: usize,
    weight_decay: f64,
    hidden: usize,
    seed: u64,
    out: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let (dataset, _) = io::read_predictions(valfile)?;
    let config = FitConfig {
        learning_rate: lr,
        epochs,
        weight_decay,
        seed,
        hidden_dim: hidden,
    };
    let (net, trace) = fit_caring(&dataset, &config)?;
    io::save_calibrator(&Calibrator::Caring(net), out)?;
    write_trace(&trace, trace_path)?;
    if let Some(last) = trace.records.last() {
        println!("mean_temperature={:.6}", last.mean_temperature);
        println!("std_temperature={:.6}", last.std_temperature);
        println!("final_nll={:.6}", last.nll);
        println!("final_ece={:.6}", last.ece);
    }
    Ok(())
}

fn apply(predictions: &Path, calibrator: &Path, out: &Path) -> Result<()> {
    let (dataset, _) = io::read_predictions(predictions)?;
    let calibrator = io::load_calibrator(calibrator)?;
    let temps = calibrator.per_sample_temperatures(&dataset)?;
    let records: Vec<AppliedRecord> = dataset
        .samples()
        .iter()
        .zip(&temps)
        .map(|(sample, &t)| {
            let p = predict(&scale_logits(&sample.logits, t)?)?;
            Ok(AppliedRecord {
                id: sample.id.clone(),
                label: sample.true_label,
                logits: sample.logits.clone(),
                features: sample.features.clone(),
                pred: p.pred_label,
                confidence: p.confidence,
                temperature: t,
            })
        })
        .collect::<Result<_>>()?;
    io::write_applied_records(&records, out)?;
    println!(
        "calibrated {} records with the {} calibrator",
        records.len(),
        calibrator.kind()
    );
    Ok(())
}

fn diagram(
    predictions: &Path,
    calibrator: Option<&Path>,
    bins: usize,
    out_svg: &Path,
    out_csv: Option<&Path>,
    histogram: bool,
) -> Result<()> {
    let (dataset, _) = io::read_predictions(predictions)?;
    let calibrator = calibrator.map(io::load_calibrator).transpose()?;
    let temps = temperatures_for(&dataset, calibrator.as_ref())?;
    if histogram {
        io::svg::write_confidence_histogram(&dataset, &temps, bins, out_svg)?;
    } else {
        let report = reliability_report(&dataset, &temps, bins, SubsetTag::All)?;
        io::svg::write_reliability_diagram(&report, out_svg)?;
    }
    if let Some(path) = out_csv {
        let report = reliability_report(&dataset, &temps, bins, SubsetTag::All)?;
        io::write_reliability_report(&report, ReportFormat::Csv, path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    mode: Mode,
    n: usize,
    m: usize,
    c: Option<f64>,
    groups: &[f64],
    d: usize,
    noise: f64,
    seed: u64,
    out: &Path,
    manifest_out: Option<&Path>,
) -> Result<()> {
    let mode = match mode {
        Mode::Global => {
            if !groups.is_empty() {
                return Err(Error::InvalidParameter(
                    "--groups only applies to --mode grouped".into(),
                ));
            }
            SynthMode::Global {
                overconfidence: c
                    .ok_or_else(|| Error::InvalidParameter("--mode global needs --c".into()))?,
            }
        }
        Mode::Grouped => {
            if c.is_some() {
                return Err(Error::InvalidParameter(
                    "--c only applies to --mode global; use --groups".into(),
                ));
            }
            if groups.is_empty() {
                return Err(Error::InvalidParameter(
                    "--mode grouped needs --groups, e.g. --groups 1.5,4.0".into(),
                ));
            }
            SynthMode::Grouped {
                overconfidence: groups.to_vec(),
            }
        }
    };
    let spec = SynthSpec {
        n,
        num_classes: m,
        feature_dim: d,
        feature_noise: noise,
        seed,
        mode,
    };
    let dataset = calib::generate(&spec)?;
    io::write_predictions(&dataset, out)?;
    if let Some(path) = manifest_out {
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for sample in dataset.samples() {
            *counts.entry(sample.true_label).or_insert(0) += 1;
        }
        let names: Vec<String> = (0..m).map(|i| format!("class_{i}")).collect();
        let frequencies: Vec<u64> = (0..m)
            .map(|i| counts.get(&i).copied().unwrap_or(0))
            .collect();
        let manifest = ClassManifest::new(names, frequencies)?;
        io::write_manifest(&manifest, path)?;
    }
    println!("generated {} samples over {} classes", dataset.len(), m);
    Ok(())
}
