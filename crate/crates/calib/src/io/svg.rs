//! Deterministic standalone SVG emission: reliability diagrams (per-bin
//! accuracy bars against the identity diagonal) and confidence histograms.
//! Identical inputs produce byte-identical files.

use std::path::Path;

use crate::error::Result;
use crate::metrics::{self, ReliabilityReport};
use crate::prob::{self, Dataset};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PLOT: f64 = SIZE - 2.0 * MARGIN;

fn x_of(value: f64) -> f64 {
    MARGIN + value * PLOT
}

fn y_of(value: f64) -> f64 {
    SIZE - MARGIN - value * PLOT
}

fn header(out: &mut String) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    out.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"
    ));
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_ticks: bool) {
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let x = x_of(v);
        let y = y_of(v);
        out.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            y_of(0.0),
            y_of(1.0)
        ));
        out.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" \
             text-anchor=\"middle\">{v:.2}</text>\n",
            y_of(0.0) + 18.0
        ));
        if y_ticks {
            out.push_str(&format!(
                "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                x_of(0.0),
                x_of(1.0)
            ));
            out.push_str(&format!(
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" \
                 text-anchor=\"end\">{v:.2}</text>\n",
                x_of(0.0) - 8.0,
                y + 4.0
            ));
        }
    }
    out.push_str(&format!(
        "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{PLOT:.2}\" height=\"{PLOT:.2}\" \
         fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        x_of(0.0),
        y_of(1.0)
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"13\" \
         text-anchor=\"middle\">{x_label}</text>\n",
        x_of(0.5),
        SIZE - 12.0
    ));
    out.push_str(&format!(
        "  <text x=\"16\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.2})\">{y_label}</text>\n",
        y_of(0.5)
    ));
}

/// Renders the reliability diagram: one accuracy bar per non-empty bin,
/// the identity diagonal, and the ECE value in the top-left corner.
pub fn render_reliability_diagram(report: &ReliabilityReport) -> String {
    let mut out = String::new();
    header(&mut out);
    axes(&mut out, "confidence", "accuracy", true);
    for bin in &report.bins {
        let Some(accuracy) = bin.accuracy else {
            continue;
        };
        let x = x_of(bin.lower);
        let width = (bin.upper - bin.lower) * PLOT;
        let y = y_of(accuracy);
        let height = accuracy * PLOT;
        out.push_str(&format!(
            "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{width:.2}\" height=\"{height:.2}\" \
             fill=\"#4878a8\" fill-opacity=\"0.85\" stroke=\"white\" stroke-width=\"1\"/>\n"
        ));
    }
    out.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#c04040\" \
         stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n",
        x_of(0.0),
        y_of(0.0),
        x_of(1.0),
        y_of(1.0)
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"14\" \
         font-weight=\"bold\">ECE = {:.4}</text>\n",
        x_of(0.0) + 8.0,
        y_of(1.0) + 20.0,
        report.ece
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\">\
         N = {}</text>\n",
        x_of(0.0) + 8.0,
        y_of(1.0) + 38.0,
        report.total
    ));
    out.push_str("</svg>\n");
    out
}

pub fn write_reliability_diagram(report: &ReliabilityReport, path: &Path) -> Result<()> {
    std::fs::write(path, render_reliability_diagram(report))?;
    Ok(())
}

/// Renders the distribution of predicted confidences over the same `k`
/// bins the reliability metrics use; bar heights are relative to the
/// fullest bin.
pub fn render_confidence_histogram(counts: &[usize], total: usize) -> String {
    let k = counts.len();
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = String::new();
    header(&mut out);
    axes(&mut out, "confidence", "share of samples", false);
    for (i, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let fraction = count as f64 / peak;
        let x = x_of(i as f64 / k as f64);
        let width = PLOT / k as f64;
        let y = y_of(fraction);
        let height = fraction * PLOT;
        out.push_str(&format!(
            "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{width:.2}\" height=\"{height:.2}\" \
             fill=\"#60a060\" fill-opacity=\"0.85\" stroke=\"white\" stroke-width=\"1\"/>\n"
        ));
        out.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"10\" \
             text-anchor=\"middle\">{count}</text>\n",
            x + width / 2.0,
            y - 4.0
        ));
    }
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\">\
         N = {total}</text>\n",
        x_of(0.0) + 8.0,
        y_of(1.0) + 20.0,
    ));
    out.push_str("</svg>\n");
    out
}

/// Histogram of per-sample predicted confidences under the given
/// temperatures. Bin membership matches `metrics::assign_bin`, so the bar
/// counts agree exactly with `bin_stats` on the same data.
pub fn write_confidence_histogram(
    dataset: &Dataset,
    per_sample_t: &[f64],
    k: usize,
    path: &Path,
) -> Result<()> {
    let counts = confidence_bin_counts(dataset, per_sample_t, k)?;
    std::fs::write(path, render_confidence_histogram(&counts, dataset.len()))?;
    Ok(())
}

pub fn confidence_bin_counts(
    dataset: &Dataset,
    per_sample_t: &[f64],
    k: usize,
) -> Result<Vec<usize>> {
    if per_sample_t.len() != dataset.len() {
        return Err(crate::error::Error::InvalidParameter(format!(
            "temperature vector length {} ≠ dataset size {}",
            per_sample_t.len(),
            dataset.len()
        )));
    }
    let mut counts = vec![0usize; k];
    for (sample, &t) in dataset.samples().iter().zip(per_sample_t) {
        let prediction = prob::predict(&prob::scale_logits(&sample.logits, t)?)?;
        counts[metrics::assign_bin(prediction.confidence, k)?] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{bin_stats, ece, SubsetTag};
    use crate::prob::{Prediction, Sample};
    use tempfile::tempdir;

    fn hand_report() -> ReliabilityReport {
        let mk = |conf: f64| Prediction {
            pred_label: 0,
            confidence: conf,
            probs: vec![conf, 1.0 - conf],
        };
        let preds = vec![(mk(0.95), 0), (mk(0.95), 1), (mk(0.65), 0), (mk(0.65), 0)];
        let bins = bin_stats(&preds, 10).unwrap();
        let e = ece(&bins, 4).unwrap();
        ReliabilityReport {
            bins,
            ece: e,
            nll: 0.4,
            accuracy: 0.75,
            total: 4,
            subset_tag: SubsetTag::All,
        }
    }

    #[test]
    fn diagram_is_deterministic_and_carries_the_ece() {
        let report = hand_report();
        let a = render_reliability_diagram(&report);
        let b = render_reliability_diagram(&report);
        assert_eq!(a, b);
        assert!(a.contains("ECE = 0.4000"));
        // Two non-empty bins → exactly two bars beyond the frame and
        // background rects.
        assert_eq!(a.matches("<rect").count(), 4);
        assert!(a.contains("stroke-dasharray"));
    }

    #[test]
    fn calibrated_bars_touch_the_diagonal() {
        // A bin whose accuracy equals its mean confidence: the bar's top
        // edge must sit exactly at the diagonal's height at that accuracy.
        let mk = |conf: f64| Prediction {
            pred_label: 0,
            confidence: conf,
            probs: vec![conf, 1.0 - conf],
        };
        let preds = vec![(mk(0.75), 0), (mk(0.75), 0), (mk(0.75), 1), (mk(0.75), 0)];
        let bins = bin_stats(&preds, 10).unwrap();
        let e = ece(&bins, 4).unwrap();
        assert!(e < 1e-12);
        let report = ReliabilityReport {
            bins,
            ece: e,
            nll: 0.3,
            accuracy: 0.75,
            total: 4,
            subset_tag: SubsetTag::All,
        };
        let svg = render_reliability_diagram(&report);
        let expected_top = format!("y=\"{:.2}\"", y_of(0.75));
        assert!(svg.contains(&expected_top), "{svg}");
    }

    #[test]
    fn diagram_file_is_byte_identical_across_writes() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        let report = hand_report();
        write_reliability_diagram(&report, &a).unwrap();
        write_reliability_diagram(&report, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    fn uniform_pair_dataset() -> Dataset {
        Dataset::new(
            vec![
                Sample {
                    id: "a".into(),
                    logits: vec![0.0, 0.0],
                    features: vec![0.0],
                    true_label: 0,
                },
                Sample {
                    id: "b".into(),
                    logits: vec![0.0, 0.0],
                    features: vec![0.0],
                    true_label: 1,
                },
            ],
            2,
            1,
        )
        .unwrap()
    }

    #[test]
    fn histogram_counts_match_bin_assignment() {
        let d = uniform_pair_dataset();
        let counts = confidence_bin_counts(&d, &[1.0, 1.0], 10).unwrap();
        // Uniform logits over two classes put every confidence at 0.5.
        assert_eq!(counts[5], 2);
        assert_eq!(counts.iter().sum::<usize>(), 2);
        let svg = render_confidence_histogram(&counts, 2);
        assert_eq!(svg.matches("<rect").count(), 3);
    }

    #[test]
    fn histogram_shows_top_bin_mass_spreading_after_calibration() {
        let spec = crate::synth::SynthSpec {
            n: 4000,
            num_classes: 10,
            feature_dim: 4,
            feature_noise: 0.1,
            seed: 31,
            mode: crate::synth::SynthMode::Global {
                overconfidence: 3.0,
            },
        };
        let d = crate::synth::gen_global(&spec).unwrap();
        let raw = confidence_bin_counts(&d, &vec![1.0; d.len()], 10).unwrap();
        let calibrated = confidence_bin_counts(&d, &vec![3.0; d.len()], 10).unwrap();
        // Inflated logits pile confidence into the top bins; undoing the
        // inflation moves that mass down the axis.
        let top = |counts: &[usize]| counts[8] + counts[9];
        assert!(
            top(&raw) > 2 * top(&calibrated),
            "top-bin mass {} vs {}",
            top(&raw),
            top(&calibrated)
        );
        // Counts agree with the binning the metrics use.
        let pairs: Vec<(f64, bool)> = d
            .samples()
            .iter()
            .map(|s| {
                let p = prob::predict(&s.logits).unwrap();
                (p.confidence, p.pred_label == s.true_label)
            })
            .collect();
        let bins = crate::metrics::bin_stats_from_pairs(&pairs, 10).unwrap();
        for (bin, &count) in bins.iter().zip(&raw) {
            assert_eq!(bin.count, count);
        }
    }

    #[test]
    fn histogram_single_bar_for_certain_predictions() {
        let d = Dataset::new(
            vec![Sample {
                id: "a".into(),
                logits: vec![500.0, 0.0],
                features: vec![0.0],
                true_label: 0,
            }],
            2,
            1,
        )
        .unwrap();
        let counts = confidence_bin_counts(&d, &[1.0], 10).unwrap();
        assert_eq!(counts[9], 1);
        assert_eq!(counts.iter().sum::<usize>(), 1);
    }
}
