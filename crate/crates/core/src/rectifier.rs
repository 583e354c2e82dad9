//! Two-layer rectifier network with a fixed output layer.
//!
//! The network computes `raw(psi) = 1 - sum_k relu(w_k . psi + b_k)` and
//! classifies an input as valid (+1) when `raw(psi) >= 0`. Only the hidden
//! layer is trained; the output layer stays frozen so the network can later
//! be rewritten as an explicit system of linear inequalities.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

/// One training example: a feature vector and a +1/-1 validity label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureExample {
    pub psi: Vec<f64>,
    pub label: i32,
}

impl LabeledFeatureExample {
    /// Build an example, rejecting labels outside {+1, -1} and non-finite features.
    pub fn new(psi: Vec<f64>, label: i32) -> Result<Self> {
        if label != 1 && label != -1 {
            return Err(Error::InvalidSign(label));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("feature vector contains a non-finite value".into()));
        }
        Ok(LabeledFeatureExample { psi, label })
    }
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Base step size; the grid used for model selection is [`LR_GRID`].
    pub learning_rate: f64,
    /// Inverse-time decay: the step size at update t is `learning_rate / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    /// Number of passes over the training data.
    pub epochs: usize,
    /// First-moment averaging coefficient.
    pub moment1: f64,
    /// Second-moment averaging coefficient.
    pub moment2: f64,
    /// Denominator stabilizer in the update rule.
    pub epsilon_stab: f64,
    /// Seed for weight initialization and example shuffling.
    pub seed: u64,
    /// Minibatch size; `None` trains on the full batch every step.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            lr_decay: 0.0,
            epochs: 1000,
            moment1: 0.9,
            moment2: 0.999,
            epsilon_stab: 1e-7,
            seed: 0,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive and finite".into()));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::InvalidParameter("lr_decay must be nonnegative and finite".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.moment1 > 0.0 && self.moment1 < 1.0) {
            return Err(Error::InvalidParameter("moment1 must lie in (0, 1)".into()));
        }
        if !(self.moment2 > 0.0 && self.moment2 < 1.0) {
            return Err(Error::InvalidParameter("moment2 must lie in (0, 1)".into()));
        }
        if !(self.epsilon_stab > 0.0) {
            return Err(Error::InvalidParameter("epsilon_stab must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning-rate grid used for model selection.
pub const LR_GRID: [f64; 3] = [0.001, 0.01, 0.1];
/// Learning-rate decay grid used for model selection.
pub const LR_DECAY_GRID: [f64; 3] = [0.0, 1e-7, 1e-6];

/// The trained network: `hidden_count` rectifier units over `input_dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintNet {
    hidden_count: usize,
    input_dim: usize,
    /// Row-major hidden weights, one row of length `input_dim` per unit.
    weights: Vec<Vec<f64>>,
    /// One bias per hidden unit.
    biases: Vec<f64>,
}

/// Sign convention used throughout: zero counts as positive.
pub(crate) fn sgn(x: f64) -> i32 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Overflow-free `ln(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ConstraintNet {
    /// Build a network from explicit parameters.
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("hidden layer"));
        }
        if weights.len() != biases.len() {
            return Err(Error::LengthMismatch { left: weights.len(), right: biases.len() });
        }
        let input_dim = weights[0].len();
        if input_dim == 0 {
            return Err(Error::EmptyInput("weight row"));
        }
        for row in &weights {
            if row.len() != input_dim {
                return Err(Error::DimensionMismatch { expected: input_dim, actual: row.len() });
            }
        }
        let finite = weights.iter().flatten().all(|v| v.is_finite()) && biases.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("network parameters must be finite".into()));
        }
        Ok(ConstraintNet { hidden_count: weights.len(), input_dim, weights, biases })
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden_count
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn check_dim(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, actual: psi.len() });
        }
        Ok(())
    }

    /// Pre-activation of every hidden unit: `a_k = w_k . psi + b_k`.
    pub fn activations(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(psi)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, psi) + b)
            .collect())
    }

    /// Raw score before thresholding: `1 - sum_k relu(a_k)`.
    pub fn forward_raw(&self, psi: &[f64]) -> Result<f64> {
        self.check_dim(psi)?;
        let mut total = 0.0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let a = dot(w, psi) + b;
            if a > 0.0 {
                total += a;
            }
        }
        Ok(1.0 - total)
    }

    /// Thresholded output in {+1, -1}; zero maps to +1.
    pub fn predict(&self, psi: &[f64]) -> Result<i32> {
        Ok(sgn(self.forward_raw(psi)?))
    }

    /// Mean binary cross-entropy over the batch and its gradient with respect
    /// to the hidden weights and biases. The +1/-1 label is mapped to a 1/0
    /// target on the sigmoid of the raw score; rectifier units that are
    /// inactive on an example contribute no gradient for it.
    pub fn loss_and_grad(&self, batch: &[LabeledFeatureExample]) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
        let idx: Vec<usize> = (0..batch.len()).collect();
        self.loss_and_grad_indexed(batch, &idx)
    }

    /// Same as [`Self::loss_and_grad`] but over a subset of indices, so the
    /// trainer can shuffle without copying examples.
    fn loss_and_grad_indexed(
        &self,
        data: &[LabeledFeatureExample],
        indices: &[usize],
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let mut grad_w = vec![vec![0.0; self.input_dim]; self.hidden_count];
        let mut grad_b = vec![0.0; self.hidden_count];
        let mut loss = 0.0;
        let mut active = Vec::with_capacity(self.hidden_count);
        for &i in indices {
            let ex = &data[i];
            self.check_dim(&ex.psi)?;
            active.clear();
            let mut total = 0.0;
            for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
                let a = dot(w, &ex.psi) + b;
                if a > 0.0 {
                    total += a;
                    active.push(k);
                }
            }
            let s = 1.0 - total;
            let target = if ex.label == 1 { 1.0 } else { 0.0 };
            loss += target * softplus(-s) + (1.0 - target) * softplus(s);
            // dL/ds = p - target, ds/da_k = -1 for active units.
            let upstream = target - sigmoid(s);
            for &k in &active {
                for (g, x) in grad_w[k].iter_mut().zip(&ex.psi) {
                    *g += upstream * x;
                }
                grad_b[k] += upstream;
            }
        }
        let scale = 1.0 / indices.len() as f64;
        loss *= scale;
        for row in &mut grad_w {
            for g in row {
                *g *= scale;
            }
        }
        for g in &mut grad_b {
            *g *= scale;
        }
        Ok((loss, grad_w, grad_b))
    }

    /// Serialize to the text format accepted by [`ConstraintNet::from_text`].
    /// Floats are written with enough digits to round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("format_version: 1\n");
        let _ = writeln!(out, "hidden_count: {}", self.hidden_count);
        let _ = writeln!(out, "input_dim: {}", self.input_dim);
        out.push_str("weights:");
        for row in &self.weights {
            for v in row {
                let _ = write!(out, " {v:.16e}");
            }
        }
        out.push('\n');
        out.push_str("biases:");
        for v in &self.biases {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
        out
    }

    /// Parse the text format produced by [`ConstraintNet::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut expect = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing {key:?} line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(':'))
                .ok_or_else(|| Error::parse(n + 1, format!("expected {key:?} line, got {line:?}")))?;
            Ok((n + 1, rest.trim().to_string()))
        };
        let (line, version) = expect("format_version")?;
        if version != "1" {
            return Err(Error::parse(line, format!("unsupported format version {version:?}")));
        }
        let (line, k) = expect("hidden_count")?;
        let hidden: usize = k.parse().map_err(|_| Error::parse(line, "hidden_count must be an integer"))?;
        let (line, d) = expect("input_dim")?;
        let input_dim: usize = d.parse().map_err(|_| Error::parse(line, "input_dim must be an integer"))?;
        let (line, w) = expect("weights")?;
        let flat = parse_floats(&w, line)?;
        if flat.len() != hidden * input_dim {
            return Err(Error::parse(line, format!("expected {} weights, got {}", hidden * input_dim, flat.len())));
        }
        let (line, b) = expect("biases")?;
        let biases = parse_floats(&b, line)?;
        if biases.len() != hidden {
            return Err(Error::parse(line, format!("expected {} biases, got {}", hidden, biases.len())));
        }
        let weights: Vec<Vec<f64>> = flat.chunks(input_dim).map(|c| c.to_vec()).collect();
        ConstraintNet::new(weights, biases)
    }

    /// Write the network atomically to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_text())
    }

    /// Read a network from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConstraintNet::from_text(&text)
    }
}

pub(crate) fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("invalid number {tok:?}")))
        })
        .collect()
}

fn check_data(input_dim: usize, hidden_count: usize, data: &[LabeledFeatureExample]) -> Result<()> {
    if hidden_count == 0 {
        return Err(Error::InvalidParameter("hidden_count must be at least 1".into()));
    }
    if input_dim == 0 {
        return Err(Error::InvalidParameter("input_dim must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    for ex in data {
        if ex.psi.len() != input_dim {
            return Err(Error::DimensionMismatch { expected: input_dim, actual: ex.psi.len() });
        }
    }
    let has_pos = data.iter().any(|e| e.label == 1);
    let has_neg = data.iter().any(|e| e.label == -1);
    if !has_pos || !has_neg {
        return Err(Error::DegenerateTrainingSet);
    }
    Ok(())
}

/// Train a network with the adaptive-moment update rule. Returns the network
/// and the per-epoch loss history (exactly `config.epochs` entries). The same
/// seed always produces bit-identical parameters.
pub fn train(
    input_dim: usize,
    hidden_count: usize,
    data: &[LabeledFeatureExample],
    config: &TrainConfig,
) -> Result<(ConstraintNet, Vec<f64>)> {
    config.validate()?;
    check_data(input_dim, hidden_count, data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / (input_dim as f64).sqrt();
    let weights: Vec<Vec<f64>> = (0..hidden_count)
        .map(|_| (0..input_dim).map(|_| rng.random_range(-bound..bound)).collect())
        .collect();
    let biases = vec![0.0; hidden_count];
    let mut net = ConstraintNet::new(weights, biases)?;

    let n = data.len();
    let batch_size = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();

    let mut m_w = vec![vec![0.0; input_dim]; hidden_count];
    let mut v_w = vec![vec![0.0; input_dim]; hidden_count];
    let mut m_b = vec![0.0; hidden_count];
    let mut v_b = vec![0.0; hidden_count];
    let mut step = 0u64;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let (loss, grad_w, grad_b) = net.loss_and_grad_indexed(data, chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;

            step += 1;
            let lr = config.learning_rate / (1.0 + config.lr_decay * step as f64);
            let bc1 = 1.0 - config.moment1.powi(step as i32);
            let bc2 = 1.0 - config.moment2.powi(step as i32);
            for k in 0..hidden_count {
                for j in 0..input_dim {
                    let g = grad_w[k][j];
                    m_w[k][j] = config.moment1 * m_w[k][j] + (1.0 - config.moment1) * g;
                    v_w[k][j] = config.moment2 * v_w[k][j] + (1.0 - config.moment2) * g * g;
                    let m_hat = m_w[k][j] / bc1;
                    let v_hat = v_w[k][j] / bc2;
                    net.weights[k][j] -= lr * m_hat / (v_hat.sqrt() + config.epsilon_stab);
                }
                let g = grad_b[k];
                m_b[k] = config.moment1 * m_b[k] + (1.0 - config.moment1) * g;
                v_b[k] = config.moment2 * v_b[k] + (1.0 - config.moment2) * g * g;
                let m_hat = m_b[k] / bc1;
                let v_hat = v_b[k] / bc2;
                net.biases[k] -= lr * m_hat / (v_hat.sqrt() + config.epsilon_stab);
            }
        }
        let finite = net.weights.iter().flatten().all(|v| v.is_finite())
            && net.biases.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(epoch_loss / n as f64);
    }
    Ok((net, history))
}

/// Fraction of examples whose predicted sign matches the label.
pub fn classification_accuracy(net: &ConstraintNet, data: &[LabeledFeatureExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    let mut hits = 0usize;
    for ex in data {
        if net.predict(&ex.psi)? == ex.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Result of grid-search model selection.
#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub net: ConstraintNet,
    pub history: Vec<f64>,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Accuracy of the selected configuration on the internal holdout split.
    pub holdout_accuracy: f64,
}

/// Grid-search over step sizes and decays: split the data 80/20 (shuffled with
/// `base.seed`), pick the combination with the best holdout accuracy (earliest
/// grid point wins ties), then retrain on all data with that combination.
pub fn train_grid(
    input_dim: usize,
    hidden_count: usize,
    data: &[LabeledFeatureExample],
    base: &TrainConfig,
    learning_rates: &[f64],
    lr_decays: &[f64],
) -> Result<GridSearchOutcome> {
    base.validate()?;
    check_data(input_dim, hidden_count, data)?;
    if learning_rates.is_empty() || lr_decays.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let cut = ((data.len() * 4) / 5).max(1).min(data.len().saturating_sub(1));
    let train_part: Vec<LabeledFeatureExample> = order[..cut].iter().map(|&i| data[i].clone()).collect();
    let hold_part: Vec<LabeledFeatureExample> = order[cut..].iter().map(|&i| data[i].clone()).collect();

    let splits_usable = !hold_part.is_empty()
        && train_part.iter().any(|e| e.label == 1)
        && train_part.iter().any(|e| e.label == -1);

    // Each grid point trains independently, so they can run in parallel; the
    // selection below walks them in grid order, keeping ties deterministic.
    let combos: Vec<(f64, f64)> = learning_rates
        .iter()
        .flat_map(|&lr| lr_decays.iter().map(move |&decay| (lr, decay)))
        .collect();
    let accuracies: Vec<f64> = combos
        .par_iter()
        .map(|&(lr, decay)| {
            let mut config = base.clone();
            config.learning_rate = lr;
            config.lr_decay = decay;
            if splits_usable {
                let (candidate, _) = train(input_dim, hidden_count, &train_part, &config)?;
                classification_accuracy(&candidate, &hold_part)
            } else {
                // Too little data to hold anything out: fall back to
                // training accuracy on the full set.
                let (candidate, _) = train(input_dim, hidden_count, data, &config)?;
                classification_accuracy(&candidate, data)
            }
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, f64, f64)> = None; // (accuracy, lr, decay)
    for (&(lr, decay), &acc) in combos.iter().zip(&accuracies) {
        if best.map_or(true, |(b, _, _)| acc > b) {
            best = Some((acc, lr, decay));
        }
    }
    let (holdout_accuracy, learning_rate, lr_decay) = best.expect("grid is nonempty");
    let mut config = base.clone();
    config.learning_rate = learning_rate;
    config.lr_decay = lr_decay;
    let (net, history) = train(input_dim, hidden_count, data, &config)?;
    Ok(GridSearchOutcome { net, history, learning_rate, lr_decay, holdout_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(psi: &[f64], label: i32) -> LabeledFeatureExample {
        LabeledFeatureExample::new(psi.to_vec(), label).unwrap()
    }

    fn toy_net() -> ConstraintNet {
        // Single unit w = (1, 1), b = -1.5: fires only when both inputs are 1.
        ConstraintNet::new(vec![vec![1.0, 1.0]], vec![-1.5]).unwrap()
    }

    #[test]
    fn forward_raw_matches_hand_computation() {
        let net = toy_net();
        // Both coordinates on: a = 0.5, raw = 1 - 0.5 = 0.5.
        assert_eq!(net.forward_raw(&[1.0, 1.0]).unwrap(), 0.5);
        // Unit inactive: raw stays 1.
        assert_eq!(net.forward_raw(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(net.forward_raw(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn predict_treats_zero_as_positive() {
        // a = 1 exactly, raw = 0, sign convention says +1.
        let net = ConstraintNet::new(vec![vec![1.0]], vec![0.0]).unwrap();
        assert_eq!(net.forward_raw(&[1.0]).unwrap(), 0.0);
        assert_eq!(net.predict(&[1.0]).unwrap(), 1);
        // Push the activation past 1 and the sign flips.
        assert_eq!(net.predict(&[1.0 + 1e-6]).unwrap(), -1);
    }

    #[test]
    fn forward_raw_rejects_wrong_dimension() {
        let net = toy_net();
        match net.forward_raw(&[1.0]) {
            Err(Error::DimensionMismatch { expected: 2, actual: 1 }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn loss_at_zero_raw_score_is_ln_two() {
        // Unit exactly saturates the output: raw = 0 => sigmoid = 1/2.
        let net = ConstraintNet::new(vec![vec![1.0]], vec![0.0]).unwrap();
        for label in [1, -1] {
            let (loss, _, _) = net.loss_and_grad(&[example(&[1.0], label)]).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "loss {loss}");
        }
    }

    #[test]
    fn inactive_unit_gets_zero_gradient() {
        let net = ConstraintNet::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![-2.0, -2.0]).unwrap();
        // Both units inactive on every example.
        let batch = [example(&[1.0, 1.0], 1), example(&[0.5, -1.0], -1)];
        let (_, grad_w, grad_b) = net.loss_and_grad(&batch).unwrap();
        assert_eq!(grad_w, vec![vec![0.0, 0.0]; 2]);
        assert_eq!(grad_b, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        // Independent oracle: perturb every parameter by +/- h and compare the
        // analytic gradient against (L(+h) - L(-h)) / 2h.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let k = rng.random_range(1..=4usize);
            let d = rng.random_range(1..=6usize);
            let batch_len = rng.random_range(1..=8usize);
            let (net, batch) = loop {
                let weights: Vec<Vec<f64>> =
                    (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                let biases: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let net = ConstraintNet::new(weights, biases).unwrap();
                let batch: Vec<LabeledFeatureExample> = (0..batch_len)
                    .map(|_| {
                        let psi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let label = if rng.random_range(0..2) == 0 { 1 } else { -1 };
                        example(&psi, label)
                    })
                    .collect();
                // Keep every activation away from the rectifier kink so the
                // finite-difference probe does not step across it.
                let safe = batch
                    .iter()
                    .all(|ex| net.activations(&ex.psi).unwrap().iter().all(|a| a.abs() > 1e-3));
                if safe {
                    break (net, batch);
                }
            };
            let (_, grad_w, grad_b) = net.loss_and_grad(&batch).unwrap();
            let h = 1e-5;
            let mut check = |numeric: f64, analytic: f64| {
                let denom = analytic.abs().max(numeric.abs());
                if denom > 1e-8 {
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(rel < 1e-4, "relative error {rel} (analytic {analytic}, numeric {numeric})");
                } else {
                    assert!((analytic - numeric).abs() < 1e-8);
                }
            };
            for ki in 0..k {
                for j in 0..d {
                    let mut plus = net.clone();
                    plus.weights[ki][j] += h;
                    let mut minus = net.clone();
                    minus.weights[ki][j] -= h;
                    let lp = plus.loss_and_grad(&batch).unwrap().0;
                    let lm = minus.loss_and_grad(&batch).unwrap().0;
                    check((lp - lm) / (2.0 * h), grad_w[ki][j]);
                }
                let mut plus = net.clone();
                plus.biases[ki] += h;
                let mut minus = net.clone();
                minus.biases[ki] -= h;
                let lp = plus.loss_and_grad(&batch).unwrap().0;
                let lm = minus.loss_and_grad(&batch).unwrap().0;
                check((lp - lm) / (2.0 * h), grad_b[ki]);
            }
        }
    }

    #[test]
    fn scaling_an_active_unit_shifts_raw_score_proportionally() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.random_range(1..=5usize);
            let d = rng.random_range(1..=6usize);
            let weights: Vec<Vec<f64>> =
                (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let biases: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let net = ConstraintNet::new(weights.clone(), biases.clone()).unwrap();
            let psi: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c = rng.random_range(0.1..3.0);
            let target = rng.random_range(0..k);
            let a = net.activations(&psi).unwrap()[target];
            let mut scaled_w = weights;
            for v in &mut scaled_w[target] {
                *v *= c;
            }
            let mut scaled_b = biases;
            scaled_b[target] *= c;
            let scaled = ConstraintNet::new(scaled_w, scaled_b).unwrap();
            let before = net.forward_raw(&psi).unwrap();
            let after = scaled.forward_raw(&psi).unwrap();
            // Scaling unit weights and bias by c > 0 scales its rectified
            // activation by c, so the raw score drops by (c - 1) * relu(a).
            let expected_drop = (c - 1.0) * a.max(0.0);
            assert!(
                (before - after - expected_drop).abs() < 1e-9,
                "before {before} after {after} expected drop {expected_drop}"
            );
        }
    }

    #[test]
    fn train_rejects_single_class_data() {
        let data = [example(&[1.0], 1), example(&[0.5], 1)];
        match train(1, 2, &data, &TrainConfig::default()) {
            Err(Error::DegenerateTrainingSet) => {}
            other => panic!("expected degenerate training set, got {other:?}"),
        }
    }

    #[test]
    fn train_separates_a_simple_rule() {
        // Valid iff the two indicator coordinates are not both on.
        let mut data = Vec::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)] {
            data.push(example(&[a, b], 1));
        }
        data.push(example(&[1.0, 1.0], -1));
        // Some seeds start with every unit inactive on every example and stay
        // there (zero gradient); seed 0 converges, which is what grid search
        // over restarts relies on.
        let config = TrainConfig { learning_rate: 0.1, epochs: 500, seed: 0, ..TrainConfig::default() };
        let (net, history) = train(2, 2, &data, &config).unwrap();
        assert_eq!(history.len(), 500);
        assert!(history[499] < history[0], "loss should decrease");
        assert_eq!(classification_accuracy(&net, &data).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut data = Vec::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)] {
            data.push(example(&[a, b], 1));
        }
        data.push(example(&[1.0, 1.0], -1));
        let config = TrainConfig { learning_rate: 0.1, epochs: 50, seed: 11, batch_size: Some(2), ..TrainConfig::default() };
        let (net_a, hist_a) = train(2, 3, &data, &config).unwrap();
        let (net_b, hist_b) = train(2, 3, &data, &config).unwrap();
        assert_eq!(net_a, net_b);
        assert_eq!(hist_a, hist_b);
        let other = TrainConfig { seed: 12, ..config };
        let (net_c, _) = train(2, 3, &data, &other).unwrap();
        assert_ne!(net_a, net_c, "a different seed should give different weights");
    }

    #[test]
    fn history_has_one_entry_per_epoch_and_rejects_bad_config() {
        let data = [example(&[0.0], 1), example(&[1.0], -1)];
        let config = TrainConfig { epochs: 7, ..TrainConfig::default() };
        let (_, history) = train(1, 1, &data, &config).unwrap();
        assert_eq!(history.len(), 7);
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(train(1, 1, &data, &bad).is_err());
        let bad_batch = TrainConfig { batch_size: Some(0), ..TrainConfig::default() };
        assert!(train(1, 1, &data, &bad_batch).is_err());
    }

    #[test]
    fn net_text_round_trips_exactly() {
        let net = ConstraintNet::new(
            vec![vec![0.1 + 0.2, -1.0 / 3.0], vec![1e-300, 2.5e17]],
            vec![std::f64::consts::PI, -0.0],
        )
        .unwrap();
        let text = net.to_text();
        let back = ConstraintNet::from_text(&text).unwrap();
        assert_eq!(net, back);
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn net_parser_reports_line_numbers() {
        let text = "format_version: 1\nhidden_count: 2\ninput_dim: 1\nweights: 0.5\nbiases: 0 0\n";
        match ConstraintNet::from_text(text) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("expected parse error on line 4, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_picks_a_working_configuration() {
        let mut data = Vec::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)] {
            for _ in 0..4 {
                data.push(example(&[a, b], 1));
            }
        }
        for _ in 0..4 {
            data.push(example(&[1.0, 1.0], -1));
        }
        let base = TrainConfig { epochs: 300, seed: 5, ..TrainConfig::default() };
        let outcome = train_grid(2, 2, &data, &base, &LR_GRID, &[0.0]).unwrap();
        assert!(LR_GRID.contains(&outcome.learning_rate));
        assert!(classification_accuracy(&outcome.net, &data).unwrap() >= 0.9);
    }

    #[test]
    fn example_rejects_bad_labels() {
        match LabeledFeatureExample::new(vec![0.0], 0) {
            Err(Error::InvalidSign(0)) => {}
            other => panic!("expected invalid sign, got {other:?}"),
        }
        assert!(LabeledFeatureExample::new(vec![f64::NAN], 1).is_err());
    }
}

