//! Multilayer perceptron baseline: fully connected ReLU layers with inverted
//! dropout, a softmax output, categorical cross-entropy, and Adadelta (or SGD /
//! Adam) updates with learning-rate reduction on plateaus.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rocket::FeatureMatrix;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Exp-normalised with the maximum subtracted first.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

// -ln p, clamped away from ln 0; NaN passes through so divergence is visible.
fn neg_log(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

/// Mean categorical cross-entropy of probability rows against class indices.
pub fn cross_entropy(probabilities: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(p, &l)| neg_log(p[l]))
        .sum();
    total / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adadelta { learning_rate: f64, rho: f64, epsilon: f64 },
    Sgd { learning_rate: f64, momentum: f64 },
    Adam { learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adadelta {
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl Optimizer {
    fn learning_rate(&self) -> f64 {
        match *self {
            Optimizer::Adadelta { learning_rate, .. }
            | Optimizer::Sgd { learning_rate, .. }
            | Optimizer::Adam { learning_rate, .. } => learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 50,
            factor: 0.5,
            min_lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr_plateau: PlateauConfig,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![500, 500, 500],
            dropout_rate: 0.1,
            epochs: 200,
            batch_size: 16,
            optimizer: Optimizer::default(),
            lr_plateau: PlateauConfig::default(),
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.contains(&0) {
            return Err(Error::validation("hidden layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout rate must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        let p = &self.lr_plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || !(p.min_lr >= 0.0) {
            return Err(Error::validation("plateau factor must be in (0, 1), min_lr >= 0"));
        }
        if !(self.optimizer.learning_rate() > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Dense layer `out = in * weights + bias` (weights: inputs x outputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub label_order: Vec<String>,
    pub config: MlpConfig,
    pub history: Vec<EpochRecord>,
}

struct Gradients {
    weights: Vec<DMatrix<f64>>,
    bias: Vec<DVector<f64>>,
}

fn to_matrix(features: &FeatureMatrix, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), features.cols(), |i, j| features.row(rows[i])[j])
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in z.row_iter_mut() {
        row += b.transpose();
    }
}

fn softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let v: Vec<f64> = row.iter().copied().collect();
        for (dst, p) in row.iter_mut().zip(softmax(&v)) {
            *dst = p;
        }
    }
    out
}

impl MlpModel {
    /// Seeded He-uniform initialisation, zero biases.
    pub fn init(inputs: usize, label_order: &[String], config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        if inputs == 0 {
            return Err(Error::validation("network needs at least one input"));
        }
        if label_order.len() < 2 {
            return Err(Error::validation("at least two classes are required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![inputs];
        sizes.extend(&config.hidden_sizes);
        sizes.push(label_order.len());
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            layers,
            label_order: label_order.to_vec(),
            config: config.clone(),
            history: Vec::new(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    fn forward_probs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &a * &layer.weights;
            add_bias(&mut z, &layer.bias);
            a = if l == last { softmax_rows(&z) } else { z.map(relu) };
        }
        a
    }

    /// Loss and gradients of a batch. `masks` are per-hidden-layer inverted
    /// dropout masks (already scaled), or `None` for no dropout.
    fn backprop(
        &self,
        x: &DMatrix<f64>,
        labels: &[usize],
        masks: Option<&[DMatrix<f64>]>,
    ) -> (f64, Gradients) {
        let last = self.layers.len() - 1;
        let mut activations = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = activations.last().unwrap() * &layer.weights;
            add_bias(&mut z, &layer.bias);
            let a = if l == last {
                softmax_rows(&z)
            } else {
                let mut a = z.map(relu);
                if let Some(m) = masks {
                    a.component_mul_assign(&m[l]);
                }
                a
            };
            pre.push(z);
            activations.push(a);
        }
        let n = labels.len() as f64;
        let probs = activations.last().unwrap();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| neg_log(probs[(i, l)]))
            .sum::<f64>()
            / n;

        let mut delta = probs.clone();
        for (i, &l) in labels.iter().enumerate() {
            delta[(i, l)] -= 1.0;
        }
        delta /= n;

        let mut gw = vec![DMatrix::zeros(0, 0); self.layers.len()];
        let mut gb = vec![DVector::zeros(0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            gw[l] = activations[l].transpose() * &delta;
            gb[l] = delta.row_sum().transpose();
            if l > 0 {
                let mut back = &delta * self.layers[l].weights.transpose();
                let z = &pre[l - 1];
                back.zip_apply(z, |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                if let Some(m) = masks {
                    back.component_mul_assign(&m[l - 1]);
                }
                delta = back;
            }
        }
        (
            loss,
            Gradients {
                weights: gw,
                bias: gb,
            },
        )
    }

    /// Full-batch loss with dropout disabled.
    pub fn loss(&self, inputs: &FeatureMatrix, labels: &[usize]) -> f64 {
        let rows: Vec<usize> = (0..inputs.rows()).collect();
        self.backprop(&to_matrix(inputs, &rows), labels, None).0
    }

    /// Full-batch gradient with dropout disabled, flattened in
    /// [`MlpModel::parameters`] order.
    pub fn gradient(&self, inputs: &FeatureMatrix, labels: &[usize]) -> Vec<f64> {
        let rows: Vec<usize> = (0..inputs.rows()).collect();
        let (_, g) = self.backprop(&to_matrix(inputs, &rows), labels, None);
        g.weights
            .iter()
            .zip(&g.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    /// All parameters, layer by layer (weights column-major, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if params.len() != total {
            return Err(Error::validation(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Class probabilities per row (dropout off).
    pub fn predict_proba(&self, inputs: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if inputs.cols() != self.input_size() {
            return Err(Error::validation(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                inputs.cols()
            )));
        }
        let rows: Vec<usize> = (0..inputs.rows()).collect();
        let p = self.forward_probs(&to_matrix(inputs, &rows));
        Ok(p.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Argmax class indices with their probability rows.
    pub fn predict(&self, inputs: &FeatureMatrix) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let probs = self.predict_proba(inputs)?;
        let labels = probs.iter().map(|p| argmax(p)).collect();
        Ok((labels, probs))
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,validation_loss,learning_rate\n");
        for h in &self.history {
            let v = h.validation_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{v},{}\n", h.epoch, h.train_loss, h.learning_rate));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "checkpoint tagged '{}', expected '{CHECKPOINT_FORMAT}'",
                file.format
            )));
        }
        Ok(file.model)
    }
}

const CHECKPOINT_FORMAT: &str = "calfrocket-mlp/1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    model: MlpModel,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Per-parameter optimiser state, one slot per layer tensor.
struct OptimizerState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl OptimizerState {
    fn new(model: &MlpModel) -> Self {
        let shapes: Vec<usize> = model
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn apply(&mut self, optimizer: &Optimizer, lr: f64, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let tensors: [(&mut [f64], &[f64]); 2] = [
                (layer.weights.as_mut_slice(), grads.weights[l].as_slice()),
                (layer.bias.as_mut_slice(), grads.bias[l].as_slice()),
            ];
            for (t, (params, grad)) in tensors.into_iter().enumerate() {
                let slot = 2 * l + t;
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                for i in 0..params.len() {
                    let g = grad[i];
                    match *optimizer {
                        Optimizer::Adadelta { rho, epsilon, .. } => {
                            // v: running E[g^2], m: running E[dx^2]
                            v[i] = rho * v[i] + (1.0 - rho) * g * g;
                            let dx = (m[i] + epsilon).sqrt() / (v[i] + epsilon).sqrt() * g;
                            m[i] = rho * m[i] + (1.0 - rho) * dx * dx;
                            params[i] -= lr * dx;
                        }
                        Optimizer::Sgd { momentum, .. } => {
                            m[i] = momentum * m[i] - lr * g;
                            params[i] += m[i];
                        }
                        Optimizer::Adam {
                            beta1,
                            beta2,
                            epsilon,
                            ..
                        } => {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                            let mh = m[i] / (1.0 - beta1.powi(self.step));
                            let vh = v[i] / (1.0 - beta2.powi(self.step));
                            params[i] -= lr * mh / (vh.sqrt() + epsilon);
                        }
                    }
                }
            }
        }
    }
}

/// Held-out data monitored for learning-rate reduction.
pub struct ValidationData<'a> {
    pub inputs: &'a FeatureMatrix,
    pub labels: &'a [usize],
}

/// Trains a network by mini-batch backpropagation.
pub fn train(
    inputs: &FeatureMatrix,
    labels: &[usize],
    label_order: &[String],
    config: &MlpConfig,
    validation: Option<ValidationData<'_>>,
) -> Result<MlpModel> {
    if inputs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::validation("inputs and labels must be non-empty and aligned"));
    }
    if labels.iter().any(|&l| l >= label_order.len()) {
        return Err(Error::validation("label index outside label order"));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::validation("at least two classes are required"));
    }
    let mut model = MlpModel::init(inputs.cols(), label_order, config)?;
    if let Some(v) = &validation {
        if v.inputs.cols() != inputs.cols() || v.inputs.rows() != v.labels.len() {
            return Err(Error::validation("validation data shape mismatch"));
        }
    }
    // Separate stream from initialisation.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut state = OptimizerState::new(&model);
    let mut lr = config.optimizer.learning_rate();
    let mut best = f64::INFINITY;
    let mut wait = 0;
    let keep = 1.0 - config.dropout_rate;
    let mut order: Vec<usize> = (0..labels.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = to_matrix(inputs, batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let masks: Option<Vec<DMatrix<f64>>> = (config.dropout_rate > 0.0).then(|| {
                config
                    .hidden_sizes
                    .iter()
                    .map(|&h| {
                        DMatrix::from_fn(batch.len(), h, |_, _| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect()
            });
            let (loss, grads) = model.backprop(&x, &y, masks.as_deref());
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            state.apply(&config.optimizer, lr, &mut model, &grads);
        }
        let train_loss = epoch_loss / labels.len() as f64;
        let validation_loss = validation.as_ref().map(|v| model.loss(v.inputs, v.labels));
        let monitored = validation_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: monitored,
            });
        }
        model.history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            learning_rate: lr,
        });
        if monitored < best {
            best = monitored;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.lr_plateau.patience {
                lr = (lr * config.lr_plateau.factor).max(config.lr_plateau.min_lr);
                wait = 0;
            }
        }
    }
    Ok(model)
}
