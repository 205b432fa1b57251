//! CARING: a two-layer network that maps a sample's feature vector to its
//! own scaling temperature,
//!
//! T(z) = 1 + relu(w₂ · relu(W₁ z + b₁) + b₂),
//!
//! so miscalibration that varies with the input can be corrected where a
//! single global temperature cannot. The leading 1 + relu keeps T(z) ≥ 1:
//! the network can only soften confidences, never sharpen them, which also
//! guarantees the predicted class is untouched.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics;
use crate::prob::{self, all_finite, Dataset, Prediction, Sample};

use super::{mean_std, FitConfig, FitTrace, TraceRecord, MIN_STEP, TRACE_BINS};

/// Weights of the temperature network. `w1` is `hidden_dim` rows of
/// `feature_dim` columns; `w2` reduces the hidden layer to one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct CaringCalibrator {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl CaringCalibrator {
    pub fn new(w1: Vec<Vec<f64>>, b1: Vec<f64>, w2: Vec<f64>, b2: f64) -> Result<Self> {
        let hidden = w1.len();
        if hidden == 0 {
            return Err(Error::InvalidParameter(
                "hidden dimension must be at least 1".into(),
            ));
        }
        let feature = w1[0].len();
        if feature == 0 {
            return Err(Error::InvalidParameter(
                "feature dimension must be at least 1".into(),
            ));
        }
        if w1.iter().any(|row| row.len() != feature) {
            return Err(Error::InvalidParameter(
                "w1 rows have inconsistent lengths".into(),
            ));
        }
        if b1.len() != hidden || w2.len() != hidden {
            return Err(Error::InvalidParameter(format!(
                "b1/w2 lengths ({}, {}) do not match hidden dimension {hidden}",
                b1.len(),
                w2.len()
            )));
        }
        let finite = w1.iter().all(|row| all_finite(row))
            && all_finite(&b1)
            && all_finite(&w2)
            && b2.is_finite();
        if !finite {
            return Err(Error::Data("non-finite calibrator parameter".into()));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// The identity calibrator: all parameters zero, T(z) ≡ 1.
    pub fn zeros(hidden_dim: usize, feature_dim: usize) -> Result<Self> {
        Self::new(
            vec![vec![0.0; feature_dim]; hidden_dim],
            vec![0.0; hidden_dim],
            vec![0.0; hidden_dim],
            0.0,
        )
    }

    /// Seeded init: weights uniform on ±1/√fan_in, biases zero. All-zero
    /// weights would leave the first layer permanently stuck behind the
    /// relu subgradient at 0.
    pub fn seeded(hidden_dim: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidParameter(
                "hidden and feature dimensions must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (feature_dim as f64).sqrt();
        let dist1 = Uniform::new(-bound1, bound1);
        let w1: Vec<Vec<f64>> = (0..hidden_dim)
            .map(|_| (0..feature_dim).map(|_| dist1.sample(&mut rng)).collect())
            .collect();
        let bound2 = 1.0 / (hidden_dim as f64).sqrt();
        let dist2 = Uniform::new(-bound2, bound2);
        let w2: Vec<f64> = (0..hidden_dim).map(|_| dist2.sample(&mut rng)).collect();
        Self::new(w1, vec![0.0; hidden_dim], w2, 0.0)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.w1[0].len()
    }

    pub fn w1(&self) -> &[Vec<f64>] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    /// θ − α·g, leaving `self` untouched.
    fn stepped(&self, grads: &CaringGradients, alpha: f64) -> Self {
        let w1 = self
            .w1
            .iter()
            .zip(&grads.w1)
            .map(|(row, grow)| row.iter().zip(grow).map(|(w, g)| w - alpha * g).collect())
            .collect();
        let b1 = self
            .b1
            .iter()
            .zip(&grads.b1)
            .map(|(b, g)| b - alpha * g)
            .collect();
        let w2 = self
            .w2
            .iter()
            .zip(&grads.w2)
            .map(|(w, g)| w - alpha * g)
            .collect();
        Self {
            w1,
            b1,
            w2,
            b2: self.b2 - alpha * grads.b2,
        }
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().all(|row| all_finite(row))
            && all_finite(&self.b1)
            && all_finite(&self.w2)
            && self.b2.is_finite()
    }

    /// Forward pass up to the pre-activation of the output neuron,
    /// filling `hidden` with relu(W₁ z + b₁).
    fn output_preactivation(&self, features: &[f64], hidden: &mut Vec<f64>) -> f64 {
        hidden.clear();
        let mut u = self.b2;
        for (row, (&b, &v)) in self.w1.iter().zip(self.b1.iter().zip(&self.w2)) {
            let mut pre = b;
            for (w, z) in row.iter().zip(features) {
                pre += w * z;
            }
            let h = pre.max(0.0);
            hidden.push(h);
            u += v * h;
        }
        u
    }
}

/// Squared L2 norm of the weight matrices (biases excluded).
fn weight_norm_sq(cal: &CaringCalibrator) -> f64 {
    let w1: f64 = cal.w1.iter().flatten().map(|w| w * w).sum();
    let w2: f64 = cal.w2.iter().map(|w| w * w).sum();
    w1 + w2
}

/// Evaluates T(z) = 1 + relu(w₂ relu(W₁ z + b₁) + b₂). Always ≥ 1.
pub fn caring_temperature(cal: &CaringCalibrator, features: &[f64]) -> Result<f64> {
    if features.len() != cal.feature_dim() {
        return Err(Error::InvalidParameter(format!(
            "feature vector length {} ≠ calibrator feature dimension {}",
            features.len(),
            cal.feature_dim()
        )));
    }
    if !all_finite(features) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let mut hidden = Vec::with_capacity(cal.hidden_dim());
    let u = cal.output_preactivation(features, &mut hidden);
    Ok(1.0 + u.max(0.0))
}

/// Calibrated prediction: softmax of the logits divided by T(z). The
/// predicted label always matches the uncalibrated argmax.
pub fn caring_confidence(cal: &CaringCalibrator, sample: &Sample) -> Result<Prediction> {
    let t = caring_temperature(cal, &sample.features)?;
    prob::predict(&prob::scale_logits(&sample.logits, t)?)
}

/// Gradients of the CARING loss, with the same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaringGradients {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl CaringGradients {
    fn zeros(hidden_dim: usize, feature_dim: usize) -> Self {
        Self {
            w1: vec![vec![0.0; feature_dim]; hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        }
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().all(|row| all_finite(row))
            && all_finite(&self.b1)
            && all_finite(&self.w2)
            && self.b2.is_finite()
    }
}

fn check_dataset(cal: &CaringCalibrator, dataset: &Dataset) -> Result<()> {
    if dataset.feature_dim() != cal.feature_dim() {
        return Err(Error::InvalidParameter(format!(
            "dataset feature dimension {} ≠ calibrator feature dimension {}",
            dataset.feature_dim(),
            cal.feature_dim()
        )));
    }
    Ok(())
}

/// Loss = mean NLL of the true classes under T(z) scaling plus
/// `weight_decay · (‖W₁‖² + ‖w₂‖²)`, and its exact gradients. Backprop
/// uses the relu subgradient with relu'(0) = 0.
pub fn caring_loss_and_grads(
    cal: &CaringCalibrator,
    dataset: &Dataset,
    weight_decay: f64,
) -> Result<(f64, CaringGradients)> {
    if weight_decay.is_nan() || weight_decay < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "weight decay must be non-negative, got {weight_decay}"
        )));
    }
    check_dataset(cal, dataset)?;
    let n = dataset.len() as f64;
    let mut grads = CaringGradients::zeros(cal.hidden_dim(), cal.feature_dim());
    let mut nll_sum = 0.0;
    let mut hidden = Vec::with_capacity(cal.hidden_dim());
    for sample in dataset.samples() {
        let u = cal.output_preactivation(&sample.features, &mut hidden);
        let t = 1.0 + u.max(0.0);
        let (nll, dnll_dt) = prob::nll_grad_wrt_t(&sample.logits, sample.true_label, t);
        nll_sum += nll;
        if u > 0.0 {
            let gu = dnll_dt / n;
            grads.b2 += gu;
            for (a, (&h, &v)) in hidden.iter().zip(&cal.w2).enumerate() {
                grads.w2[a] += gu * h;
                if h > 0.0 {
                    let ga = gu * v;
                    grads.b1[a] += ga;
                    let row = &mut grads.w1[a];
                    for (g, &z) in row.iter_mut().zip(&sample.features) {
                        *g += ga * z;
                    }
                }
            }
        }
    }
    for (grow, wrow) in grads.w1.iter_mut().zip(&cal.w1) {
        for (g, &w) in grow.iter_mut().zip(wrow) {
            *g += 2.0 * weight_decay * w;
        }
    }
    for (g, &w) in grads.w2.iter_mut().zip(&cal.w2) {
        *g += 2.0 * weight_decay * w;
    }
    let loss = nll_sum / n + weight_decay * weight_norm_sq(cal);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NumericFailure {
            epoch: 0,
            message: "non-finite loss or gradient".into(),
        });
    }
    Ok((loss, grads))
}

/// Forward-only evaluation used by the line search and the fit trace.
struct Evaluation {
    loss: f64,
    nll: f64,
    temperatures: Vec<f64>,
    pairs: Vec<(f64, bool)>,
}

fn evaluate(cal: &CaringCalibrator, dataset: &Dataset, weight_decay: f64) -> Evaluation {
    let n = dataset.len() as f64;
    let mut nll_sum = 0.0;
    let mut temperatures = Vec::with_capacity(dataset.len());
    let mut pairs = Vec::with_capacity(dataset.len());
    let mut hidden = Vec::with_capacity(cal.hidden_dim());
    for sample in dataset.samples() {
        let u = cal.output_preactivation(&sample.features, &mut hidden);
        let t = 1.0 + u.max(0.0);
        let (nll, _) = prob::nll_grad_wrt_t(&sample.logits, sample.true_label, t);
        nll_sum += nll;
        temperatures.push(t);
        let (pred, conf) = prob::max_softmax(&sample.logits, t);
        pairs.push((conf, pred == sample.true_label));
    }
    let nll = nll_sum / n;
    Evaluation {
        loss: nll + weight_decay * weight_norm_sq(cal),
        nll,
        temperatures,
        pairs,
    }
}

fn trace_record(eval: &Evaluation, epoch: usize) -> Result<TraceRecord> {
    let bins = metrics::bin_stats_from_pairs(&eval.pairs, TRACE_BINS)?;
    let ece = metrics::ece(&bins, eval.pairs.len())?;
    let (mean_temperature, std_temperature) = mean_std(&eval.temperatures);
    Ok(TraceRecord {
        epoch,
        nll: eval.nll,
        ece,
        mean_temperature,
        std_temperature,
    })
}

/// Trains the temperature network on a validation dataset: seeded init,
/// then full-batch gradient descent for exactly `config.epochs` steps with
/// the same halving/doubling step-size rule as the temperature fit. The
/// trace records NLL, ECE and the mean/std of T(z) after every epoch.
pub fn fit_caring(dataset: &Dataset, config: &FitConfig) -> Result<(CaringCalibrator, FitTrace)> {
    config.validate()?;
    if config.hidden_dim < 1 {
        return Err(Error::InvalidParameter(
            "hidden dimension must be at least 1".into(),
        ));
    }
    let mut cal = CaringCalibrator::seeded(config.hidden_dim, dataset.feature_dim(), config.seed)?;
    let mut trace = FitTrace::default();
    if config.epochs == 0 {
        return Ok((cal, trace));
    }

    let (mut loss, mut grads) = caring_loss_and_grads(&cal, dataset, config.weight_decay)?;
    let mut alpha = config.learning_rate;
    for epoch in 1..=config.epochs {
        let accepted = loop {
            let candidate = cal.stepped(&grads, alpha);
            if candidate.is_finite() {
                let eval = evaluate(&candidate, dataset, config.weight_decay);
                if eval.loss.is_finite() && eval.loss <= loss {
                    break Some((candidate, eval));
                }
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                break None;
            }
        };
        match accepted {
            Some((candidate, eval)) => {
                cal = candidate;
                loss = eval.loss;
                trace.records.push(trace_record(&eval, epoch)?);
                grads = match caring_loss_and_grads(&cal, dataset, config.weight_decay) {
                    Ok((_, grads)) => grads,
                    Err(Error::NumericFailure { message, .. }) => {
                        return Err(Error::NumericFailure { epoch, message })
                    }
                    Err(other) => return Err(other),
                };
            }
            None => {
                // Stationary: no improving step exists at any length.
                let eval = evaluate(&cal, dataset, config.weight_decay);
                trace.records.push(trace_record(&eval, epoch)?);
            }
        }
        alpha *= 2.0;
    }
    Ok((cal, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_network() -> CaringCalibrator {
        CaringCalibrator::new(vec![vec![1.0]], vec![0.0], vec![2.0], 0.5).unwrap()
    }

    #[test]
    fn zero_parameters_give_identity_temperature() {
        let cal = CaringCalibrator::zeros(4, 3).unwrap();
        assert_eq!(caring_temperature(&cal, &[5.0, -2.0, 0.1]).unwrap(), 1.0);
    }

    #[test]
    fn hand_network_temperatures() {
        let cal = hand_network();
        // relu(1.5) = 1.5, relu(2·1.5 + 0.5) = 3.5, T = 4.5.
        assert_eq!(caring_temperature(&cal, &[1.5]).unwrap(), 4.5);
        // Hidden relu dies on negative input: relu(0.5) = 0.5, T = 1.5.
        assert_eq!(caring_temperature(&cal, &[-3.0]).unwrap(), 1.5);
    }

    #[test]
    fn temperature_rejects_dimension_mismatch() {
        let cal = hand_network();
        assert!(matches!(
            caring_temperature(&cal, &[1.0, 2.0]),
            Err(Error::InvalidParameter(_))
        ));
    }

    fn sample(logits: Vec<f64>, features: Vec<f64>, label: usize) -> Sample {
        Sample {
            id: "s".into(),
            logits,
            features,
            true_label: label,
        }
    }

    #[test]
    fn identity_calibrator_matches_raw_predict() {
        let cal = CaringCalibrator::zeros(4, 2).unwrap();
        let s = sample(vec![2.0, 1.0, 0.0], vec![0.3, -0.4], 0);
        let calibrated = caring_confidence(&cal, &s).unwrap();
        let raw = prob::predict(&s.logits).unwrap();
        assert_eq!(calibrated, raw);
    }

    #[test]
    fn temperature_two_matches_scaled_softmax() {
        // z-independent network with T ≡ 2: relu(0·z) = 0, relu(0 + 1) = 1.
        let cal = CaringCalibrator::new(vec![vec![0.0]], vec![0.0], vec![0.0], 1.0).unwrap();
        let s = sample(vec![2.0, 1.0, 0.0], vec![7.0], 0);
        let p = caring_confidence(&cal, &s).unwrap();
        assert_eq!(p.pred_label, 0);
        assert!((p.confidence - 0.5065).abs() < 1e-4);
    }

    #[test]
    fn calibration_never_sharpens_confident_predictions() {
        let nets = [
            hand_network(),
            CaringCalibrator::seeded(8, 1, 3).unwrap(),
            CaringCalibrator::seeded(8, 1, 4).unwrap(),
        ];
        for net in &nets {
            for z in [-2.0, -0.5, 0.0, 0.7, 1.9, 5.0] {
                let s = sample(vec![2.5, 0.0, -1.0], vec![z], 0);
                let raw = prob::predict(&s.logits).unwrap();
                let cal = caring_confidence(net, &s).unwrap();
                assert_eq!(cal.pred_label, raw.pred_label);
                assert!(cal.confidence <= raw.confidence + 1e-12);
            }
        }
    }

    fn tiny_dataset() -> Dataset {
        Dataset::new(
            vec![
                sample(vec![3.0, 0.0], vec![1.5], 0),
                sample(vec![0.5, 2.0], vec![0.25], 1),
                sample(vec![1.0, 1.5], vec![-0.75], 0),
            ],
            2,
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_block_first_layer_gradient() {
        let cal = CaringCalibrator::zeros(3, 1).unwrap();
        let d = tiny_dataset();
        let (loss, grads) = caring_loss_and_grads(&cal, &d, 0.0).unwrap();
        let uncalibrated = prob::nll(&d, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(loss, uncalibrated);
        assert!(grads.w1.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.b1.iter().all(|&g| g == 0.0));
        // The outer relu sits exactly at 0, so nothing propagates at all.
        assert_eq!(grads.b2, 0.0);
    }

    #[test]
    fn weight_decay_gradient_is_decoupled() {
        // Near-zero NLL: the prediction of the true class is ≈ certain,
        // so the data term of every gradient is ≈ 0.
        let d = Dataset::new(vec![sample(vec![200.0, 0.0], vec![2.0], 0)], 2, 1).unwrap();
        let cal = hand_network();
        let lambda = 0.01;
        let (_, grads) = caring_loss_and_grads(&cal, &d, lambda).unwrap();
        for (grow, wrow) in grads.w1.iter().zip(cal.w1()) {
            for (g, w) in grow.iter().zip(wrow) {
                assert!((g - 2.0 * lambda * w).abs() < 1e-12);
            }
        }
        for (g, w) in grads.w2.iter().zip(cal.w2()) {
            assert!((g - 2.0 * lambda * w).abs() < 1e-12);
        }
        assert!(grads.b2.abs() < 1e-12);
    }

    /// Central finite difference over every parameter coordinate.
    fn finite_difference_check(cal: &CaringCalibrator, d: &Dataset, lambda: f64, tol: f64) {
        let eps = 1e-6;
        let (_, grads) = caring_loss_and_grads(cal, d, lambda).unwrap();
        let loss_of = |c: &CaringCalibrator| caring_loss_and_grads(c, d, lambda).unwrap().0;
        let check = |analytic: f64, up: CaringCalibrator, down: CaringCalibrator, what: String| {
            let numeric = (loss_of(&up) - loss_of(&down)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-10);
            assert!(
                rel < tol,
                "{what}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
        };
        for i in 0..cal.hidden_dim() {
            for j in 0..cal.feature_dim() {
                let mut up = cal.clone();
                up.w1[i][j] += eps;
                let mut down = cal.clone();
                down.w1[i][j] -= eps;
                check(grads.w1[i][j], up, down, format!("w1[{i}][{j}]"));
            }
            let mut up = cal.clone();
            up.b1[i] += eps;
            let mut down = cal.clone();
            down.b1[i] -= eps;
            check(grads.b1[i], up, down, format!("b1[{i}]"));

            let mut up = cal.clone();
            up.w2[i] += eps;
            let mut down = cal.clone();
            down.w2[i] -= eps;
            check(grads.w2[i], up, down, format!("w2[{i}]"));
        }
        let mut up = cal.clone();
        up.b2 += eps;
        let mut down = cal.clone();
        down.b2 -= eps;
        check(grads.b2, up, down, "b2".into());
    }

    #[test]
    fn hand_network_gradient_matches_finite_differences() {
        let d = Dataset::new(vec![sample(vec![2.0, 0.0], vec![1.5], 0)], 2, 1).unwrap();
        finite_difference_check(&hand_network(), &d, 0.0, 1e-5);
        finite_difference_check(&hand_network(), &d, 1e-3, 1e-5);
    }

    #[test]
    fn fit_rejects_zero_hidden_dim() {
        let mut config = FitConfig::caring_defaults();
        config.hidden_dim = 0;
        assert!(fit_caring(&tiny_dataset(), &config).is_err());
    }

    #[test]
    fn fit_zero_epochs_returns_seeded_init() {
        let mut config = FitConfig::caring_defaults();
        config.epochs = 0;
        config.hidden_dim = 4;
        let (cal, trace) = fit_caring(&tiny_dataset(), &config).unwrap();
        assert!(trace.is_empty());
        assert_eq!(cal, CaringCalibrator::seeded(4, 1, config.seed).unwrap());
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let d = tiny_dataset();
        let mut config = FitConfig::caring_defaults();
        config.epochs = 25;
        config.hidden_dim = 6;
        config.seed = 42;
        let (a, trace_a) = fit_caring(&d, &config).unwrap();
        let (b, trace_b) = fit_caring(&d, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace_a, trace_b);
        let bits = |x: f64| x.to_bits();
        for (ra, rb) in a.w1().iter().flatten().zip(b.w1().iter().flatten()) {
            assert_eq!(bits(*ra), bits(*rb));
        }
        assert_eq!(bits(a.b2()), bits(b.b2()));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Structural: the 1 + relu head can never emit a temperature
            // below 1, whatever the parameters or input are.
            #[test]
            fn temperature_is_at_least_one(
                weights in proptest::collection::vec(-100.0..100.0f64, 1..24),
                biases in proptest::collection::vec(-100.0..100.0f64, 1..8),
                features in proptest::collection::vec(-100.0..100.0f64, 1..4),
                b2 in -100.0..100.0f64,
            ) {
                let d = features.len();
                let h = biases.len().min(weights.len() / d.max(1)).max(1);
                let mut w1 = vec![vec![0.0; d]; h];
                for (i, chunk) in weights.chunks(d).take(h).enumerate() {
                    w1[i][..chunk.len()].copy_from_slice(chunk);
                }
                let b1 = biases.iter().cycle().take(h).copied().collect();
                let w2 = weights.iter().rev().cycle().take(h).copied().collect();
                let cal = CaringCalibrator::new(w1, b1, w2, b2).unwrap();
                let t = caring_temperature(&cal, &features).unwrap();
                prop_assert!(t >= 1.0, "T(z) = {t}");
            }
        }
    }

    #[test]
    fn fit_trace_has_one_record_per_epoch() {
        let d = tiny_dataset();
        let mut config = FitConfig::caring_defaults();
        config.epochs = 40;
        config.hidden_dim = 4;
        let (_, trace) = fit_caring(&d, &config).unwrap();
        assert_eq!(trace.len(), 40);
        for (i, record) in trace.records.iter().enumerate() {
            assert_eq!(record.epoch, i + 1);
            assert!(record.mean_temperature >= 1.0);
            assert!(record.std_temperature >= 0.0);
        }
    }
}
