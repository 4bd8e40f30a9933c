//! Small fully connected force-estimation network with deterministic
//! Adam + L1 training, dataset generation from run logs, and the balanced
//! refitting procedure.
//!
//! Hidden layers use tanh; the output layer is linear and produces one force
//! value (N). Inputs are normalized by the mean and standard deviation of the
//! training split only.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SimError};
use crate::runlog::RunLog;

/// Checkpoint format version tag.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Live feature vector consumed by the network, in this exact order:
/// follower position (m), follower velocity at the estimator's own rate
/// (m/s), operator tracking force (N), previously displayed feedback (N).
pub const FEATURE_COUNT: usize = 4;

/// One dense layer: weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// tanh for hidden layers, identity for the output layer.
    pub tanh: bool,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.biases.len()
    }

    fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// Feedforward network plus the input normalization captured at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub format_version: u32,
    pub layers: Vec<Layer>,
    /// Per-feature mean of the training split.
    pub norm_mean: Vec<f64>,
    /// Per-feature standard deviation of the training split (floored).
    pub norm_sd: Vec<f64>,
}

impl Mlp {
    /// Fresh network with seeded uniform init scaled by fan-in.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let weights = (0..n_out)
                .map(|_| (0..n_in).map(|_| rng.gen_range(-limit..limit)).collect())
                .collect();
            layers.push(Layer {
                weights,
                biases: vec![0.0; n_out],
                tanh: true,
            });
        }
        if let Some(last) = layers.last_mut() {
            last.tanh = false;
        }
        Self {
            format_version: CHECKPOINT_VERSION,
            layers,
            norm_mean: vec![0.0; input_dim],
            norm_sd: vec![1.0; input_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    /// Normalize a raw feature vector with the stored statistics.
    pub fn normalize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.norm_mean.iter().zip(&self.norm_sd))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    /// Invert `normalize`.
    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(self.norm_mean.iter().zip(&self.norm_sd))
            .map(|(&z, (&m, &s))| z * s + m)
            .collect()
    }

    /// Forward pass on raw (unnormalized) features.
    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(SimError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        let mut a = self.normalize(features);
        for layer in &self.layers {
            a = layer_forward(layer, &a);
        }
        Ok(a[0])
    }

    /// Mean squared force error over a slice of rows.
    pub fn mse(&self, rows: &[DataRow]) -> Result<f64> {
        if rows.is_empty() {
            return Err(SimError::EmptyInput("mse over empty rows"));
        }
        let mut acc = 0.0;
        for row in rows {
            let e = self.forward(&row.features)? - row.target;
            acc += e * e;
        }
        Ok(acc / rows.len() as f64)
    }

    /// Root mean squared force error over a slice of rows.
    pub fn rmse(&self, rows: &[DataRow]) -> Result<f64> {
        Ok(self.mse(rows)?.sqrt())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)?;
        let mut f = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| SimError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)
            .map_err(|e| SimError::io(path, e))?
            .read_to_string(&mut text)
            .map_err(|e| SimError::io(path, e))?;
        let model: Mlp = toml::from_str(&text)?;
        if model.format_version != CHECKPOINT_VERSION {
            return Err(SimError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {})",
                model.format_version, CHECKPOINT_VERSION
            )));
        }
        Ok(model)
    }
}

fn layer_forward(layer: &Layer, input: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layer.out_dim());
    for (row, b) in layer.weights.iter().zip(&layer.biases) {
        let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
        out.push(if layer.tanh { z.tanh() } else { z });
    }
    out
}

/// Feedback condition under which a dataset's runs were collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// No force feedback rendered to the operator model.
    Nf,
    /// Ground-truth (force sensor) feedback.
    Fs,
    /// Feedback from an existing trained network.
    Ef,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::Nf => "nf",
            Condition::Fs => "fs",
            Condition::Ef => "ef",
        }
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub features: Vec<f64>,
    /// Ground-truth interaction force (N).
    pub target: f64,
}

/// Train/validation split tagged with its collection condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub condition: Condition,
    pub train: Vec<DataRow>,
    pub validation: Vec<DataRow>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write all rows as CSV with a split column.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        let mut header = vec!["split".to_string()];
        header.extend((0..FEATURE_COUNT).map(|i| format!("f{i}")));
        header.push("target".into());
        w.write_record(&header)?;
        for (split, rows) in [("train", &self.train), ("validation", &self.validation)] {
            for row in rows {
                let mut rec = vec![split.to_string()];
                rec.extend(row.features.iter().map(f64::to_string));
                rec.push(row.target.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| SimError::io(path, e))?;
        Ok(())
    }
}

/// Extract supervised rows from run logs at the estimator cadence.
///
/// Rows are resampled from the log timeline by zero-order hold onto the
/// estimator tick grid. The velocity feature is the finite difference of the
/// follower position between consecutive rows, matching what the live
/// estimator computes at its own rate. The fourth feature is the feedback
/// displayed during the preceding inter-tick interval (zero on the first
/// row and throughout no-feedback runs).
///
/// Rows are split 2:1 into train/validation by a seeded shuffle.
pub fn generate_dataset(
    logs: &[RunLog],
    condition: Condition,
    estimator_rate_hz: u32,
    seed: u64,
) -> Result<Dataset> {
    if logs.is_empty() {
        return Err(SimError::EmptyInput("generate_dataset needs at least one log"));
    }
    let mut rows = Vec::new();
    for log in logs {
        let log_rate = log.meta.log_rate_hz as u64;
        let n_rows = log.records.len() as u64;
        if n_rows == 0 {
            return Err(SimError::EmptyInput("generate_dataset got an empty log"));
        }
        let duration_ticks = n_rows - 1;
        let n_samples = duration_ticks * estimator_rate_hz as u64 / log_rate;
        let est_rate = estimator_rate_hz as u64;
        let mut prev_pos: Option<f64> = None;
        for k in 0..=n_samples {
            // log row at or before estimator tick k (exact integer arithmetic)
            let idx = (k * log_rate / est_rate) as usize;
            let r = &log.records[idx];
            let vel = match prev_pos {
                Some(p) => (r.psm_position - p) * estimator_rate_hz as f64,
                None => 0.0,
            };
            // feedback displayed during [tick k-1, tick k): the last log row
            // strictly before tick k still holds it
            let prev_feedback = if k == 0 {
                0.0
            } else {
                let idx_prev = ((k * log_rate).div_ceil(est_rate) - 1) as usize;
                log.records[idx_prev].f_feedback
            };
            rows.push(DataRow {
                features: vec![r.psm_position, vel, r.f_c, prev_feedback],
                target: r.f_ground_truth,
            });
            prev_pos = Some(r.psm_position);
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let n_train = (rows.len() * 2).div_euclid(3);
    let validation = rows.split_off(n_train);
    Ok(Dataset {
        condition,
        train: rows,
        validation,
    })
}

/// Optimizer and regularization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L1 penalty on weights (not biases).
    pub l1: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.001,
            l1: 0.001,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || !(self.learning_rate > 0.0)
            || self.l1 < 0.0
            || self.batch_size == 0
        {
            return Err(SimError::InvalidConfig(format!(
                "training hyperparameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Loss trace of one training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Per-epoch (training loss, validation loss). The training loss includes
    /// the L1 term; validation loss is plain MSE.
    pub epochs: Vec<(f64, f64)>,
}

// Adam moment buffers matching the parameter layout.
struct AdamState {
    m_w: Vec<Vec<Vec<f64>>>,
    v_w: Vec<Vec<Vec<f64>>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    fn new(model: &Mlp) -> Self {
        let m_w = model
            .layers
            .iter()
            .map(|l| l.weights.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect::<Vec<Vec<Vec<f64>>>>();
        let m_b = model
            .layers
            .iter()
            .map(|l| vec![0.0; l.biases.len()])
            .collect::<Vec<Vec<f64>>>();
        Self {
            v_w: m_w.clone(),
            m_w,
            v_b: m_b.clone(),
            m_b,
            step: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-parameter gradients in the same layout as the model.
pub struct Gradients {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(model: &Mlp) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|r| vec![0.0; r.len()]).collect())
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }
}

/// Batch loss (MSE over the batch plus the L1 term) and its gradients.
///
/// Backpropagation on normalized inputs; the normalization constants are
/// folded into the features, so gradients are with respect to raw weights.
pub fn loss_and_gradients(model: &Mlp, batch: &[&DataRow], l1: f64) -> (f64, Gradients) {
    let mut grads = Gradients::zeros(model);
    let mut loss = 0.0;
    let inv_n = 1.0 / batch.len() as f64;
    for row in batch {
        // forward, caching activations
        let mut activations = vec![model.normalize(&row.features)];
        for layer in &model.layers {
            let a = layer_forward(layer, activations.last().unwrap());
            activations.push(a);
        }
        let out = activations.last().unwrap()[0];
        let err = out - row.target;
        loss += err * err * inv_n;

        // backward: dL/dout = 2 * err / n
        let mut delta = vec![2.0 * err * inv_n];
        for (li, layer) in model.layers.iter().enumerate().rev() {
            let input = &activations[li];
            let output = &activations[li + 1];
            // through the activation
            let dz: Vec<f64> = if layer.tanh {
                delta
                    .iter()
                    .zip(output)
                    .map(|(&d, &y)| d * (1.0 - y * y))
                    .collect()
            } else {
                delta.clone()
            };
            for (j, &dzj) in dz.iter().enumerate() {
                grads.biases[li][j] += dzj;
                for (i, &xi) in input.iter().enumerate() {
                    grads.weights[li][j][i] += dzj * xi;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; input.len()];
                for (j, &dzj) in dz.iter().enumerate() {
                    for (i, w) in model.layers[li].weights[j].iter().enumerate() {
                        next[i] += dzj * w;
                    }
                }
                delta = next;
            }
        }
    }
    if l1 > 0.0 {
        for (li, layer) in model.layers.iter().enumerate() {
            for (j, row) in layer.weights.iter().enumerate() {
                for (i, &w) in row.iter().enumerate() {
                    loss += l1 * w.abs();
                    grads.weights[li][j][i] += l1 * w.signum();
                }
            }
        }
    }
    (loss, grads)
}

fn adam_update(model: &mut Mlp, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let lr_t = lr * (1.0 - ADAM_BETA2.powi(t)).sqrt() / (1.0 - ADAM_BETA1.powi(t));
    for (li, layer) in model.layers.iter_mut().enumerate() {
        for (j, row) in layer.weights.iter_mut().enumerate() {
            for (i, w) in row.iter_mut().enumerate() {
                let g = grads.weights[li][j][i];
                let m = &mut state.m_w[li][j][i];
                let v = &mut state.v_w[li][j][i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + ADAM_EPS);
            }
        }
        for (j, b) in layer.biases.iter_mut().enumerate() {
            let g = grads.biases[li][j];
            let m = &mut state.m_b[li][j];
            let v = &mut state.v_b[li][j];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *b -= lr_t * *m / (v.sqrt() + ADAM_EPS);
        }
    }
}

/// Fit `model` on the dataset's training split. Normalization statistics are
/// recomputed from the training split before the first epoch. Deterministic
/// for a fixed `cfg.seed`: batches are drawn from a seeded shuffle per epoch.
pub fn train(mut model: Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(SimError::EmptyInput("training split is empty"));
    }
    set_normalization(&mut model, &data.train);

    let mut adam = AdamState::new(&model);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut report = TrainReport::default();

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DataRow> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (loss, grads) = loss_and_gradients(&model, &batch, cfg.l1);
            if !loss.is_finite() {
                return Err(SimError::TrainingDiverged(format!(
                    "non-finite loss at epoch {_epoch}"
                )));
            }
            adam_update(&mut model, &grads, &mut adam, cfg.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        let val_loss = if data.validation.is_empty() {
            f64::NAN
        } else {
            model.mse(&data.validation)?
        };
        report.epochs.push((epoch_loss / batches as f64, val_loss));
    }
    Ok((model, report))
}

fn set_normalization(model: &mut Mlp, rows: &[DataRow]) {
    let dim = model.input_dim();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, &x) in mean.iter_mut().zip(&row.features) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for row in rows {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(&row.features) {
            *v += (x - m) * (x - m) / n;
        }
    }
    model.norm_mean = mean;
    // a feature that is constant in the training data (e.g. the feedback
    // column under no feedback) keeps unit scale, so unseen live values map
    // to bounded inputs instead of exploding through a near-zero divisor
    model.norm_sd = var
        .iter()
        .map(|v| {
            let sd = v.sqrt();
            if sd < 1e-6 {
                1.0
            } else {
                sd
            }
        })
        .collect();
}

/// Refit from scratch on a balanced union of original and new data.
///
/// The larger training split is subsampled (seeded by `cfg.seed`) to the size
/// of the smaller so the two sources contribute equally; validation splits
/// are concatenated unchanged. The network restarts from the given scratch
/// initialization seed rather than warm-starting.
pub fn refit(
    input_dim: usize,
    hidden: &[usize],
    init_seed: u64,
    original: &Dataset,
    new_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    if original.train.is_empty() {
        return Err(SimError::EmptyInput("refit: original training split empty"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9e3779b97f4a7c15);
    let (orig_rows, new_rows) = balance(&original.train, &new_data.train, &mut rng);
    let mut train_rows = orig_rows;
    train_rows.extend(new_rows);
    let mut validation = original.validation.clone();
    validation.extend(new_data.validation.iter().cloned());
    let merged = Dataset {
        condition: new_data.condition,
        train: train_rows,
        validation,
    };
    let model = Mlp::new(input_dim, hidden, init_seed);
    train(model, &merged, cfg)
}

fn balance(
    a: &[DataRow],
    b: &[DataRow],
    rng: &mut ChaCha12Rng,
) -> (Vec<DataRow>, Vec<DataRow>) {
    if b.is_empty() {
        return (a.to_vec(), Vec::new());
    }
    let target = a.len().min(b.len());
    (subsample(a, target, rng), subsample(b, target, rng))
}

fn subsample(rows: &[DataRow], n: usize, rng: &mut ChaCha12Rng) -> Vec<DataRow> {
    if rows.len() <= n {
        return rows.to_vec();
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_rows(n: usize, f: impl Fn(f64) -> f64) -> Vec<DataRow> {
        (0..n)
            .map(|k| {
                let x = -1.0 + 2.0 * k as f64 / (n - 1) as f64;
                DataRow {
                    features: vec![x],
                    target: f(x),
                }
            })
            .collect()
    }

    #[test]
    fn constant_network_outputs_bias() {
        let mut model = Mlp::new(3, &[4], 1);
        for layer in &mut model.layers {
            for row in &mut layer.weights {
                row.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        model.layers.last_mut().unwrap().biases[0] = 2.5;
        for features in [[0.0, 0.0, 0.0], [1.0, -3.0, 7.0]] {
            assert_relative_eq!(model.forward(&features).unwrap(), 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_linear_layer_identity_case() {
        // w=[2], b=0, input [3] -> 6
        let model = Mlp {
            format_version: CHECKPOINT_VERSION,
            layers: vec![Layer {
                weights: vec![vec![2.0]],
                biases: vec![0.0],
                tanh: false,
            }],
            norm_mean: vec![0.0],
            norm_sd: vec![1.0],
        };
        assert_eq!(model.forward(&[3.0]).unwrap(), 6.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = Mlp::new(4, &[8], 0);
        assert!(model.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn normalization_round_trip_is_identity() {
        let mut model = Mlp::new(3, &[4], 9);
        model.norm_mean = vec![1.5, -2.0, 0.25];
        model.norm_sd = vec![0.3, 4.0, 1.7];
        let raw = vec![0.7, 3.2, -5.5];
        let back = model.denormalize(&model.normalize(&raw));
        for (a, b) in raw.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        // Relative error < 1e-5 on every parameter of a 2-layer net.
        let mut model = Mlp::new(2, &[3], 42);
        // keep weights away from zero so the L1 subgradient is smooth
        for layer in &mut model.layers {
            for row in &mut layer.weights {
                for w in row.iter_mut() {
                    if w.abs() < 0.05 {
                        *w += 0.1_f64.copysign(*w + 0.01);
                    }
                }
            }
            for b in &mut layer.biases {
                *b = 0.03;
            }
        }
        let rows = vec![
            DataRow {
                features: vec![0.3, -0.7],
                target: 0.4,
            },
            DataRow {
                features: vec![-1.1, 0.2],
                target: -0.9,
            },
            DataRow {
                features: vec![0.9, 0.8],
                target: 0.1,
            },
        ];
        let batch: Vec<&DataRow> = rows.iter().collect();
        let l1 = 0.001;
        let (_, grads) = loss_and_gradients(&model, &batch, l1);

        let h = 1e-6;
        let mut checked = 0;
        for li in 0..model.layers.len() {
            for j in 0..model.layers[li].weights.len() {
                for i in 0..model.layers[li].weights[j].len() {
                    let mut plus = model.clone();
                    plus.layers[li].weights[j][i] += h;
                    let mut minus = model.clone();
                    minus.layers[li].weights[j][i] -= h;
                    let (lp, _) = loss_and_gradients(&plus, &batch, l1);
                    let (lm, _) = loss_and_gradients(&minus, &batch, l1);
                    let fd = (lp - lm) / (2.0 * h);
                    let an = grads.weights[li][j][i];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(rel < 1e-5, "w[{li}][{j}][{i}]: fd {fd} vs analytic {an}");
                    checked += 1;
                }
            }
            for j in 0..model.layers[li].biases.len() {
                let mut plus = model.clone();
                plus.layers[li].biases[j] += h;
                let mut minus = model.clone();
                minus.layers[li].biases[j] -= h;
                let (lp, _) = loss_and_gradients(&plus, &batch, l1);
                let (lm, _) = loss_and_gradients(&minus, &batch, l1);
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.biases[li][j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-5, "b[{li}][{j}]: fd {fd} vs analytic {an}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn linear_target_recovery() {
        // y = 3x with a purely linear net: recovered slope within 1e-3.
        let data = Dataset {
            condition: Condition::Nf,
            train: toy_rows(64, |x| 3.0 * x),
            validation: toy_rows(16, |x| 3.0 * x),
        };
        let model = Mlp::new(1, &[], 7);
        let cfg = TrainConfig {
            epochs: 2000,
            learning_rate: 0.02,
            l1: 0.0,
            batch_size: 64,
            seed: 3,
        };
        let (fit, _) = train(model, &data, &cfg).unwrap();
        // slope in raw units = w / norm_sd
        let slope = fit.layers[0].weights[0][0] / fit.norm_sd[0];
        assert!((slope - 3.0).abs() < 1e-3, "recovered slope {slope}");
    }

    #[test]
    fn heavy_l1_drives_weights_to_zero() {
        let data = Dataset {
            condition: Condition::Nf,
            train: toy_rows(32, |x| 0.5 * x),
            validation: vec![],
        };
        let model = Mlp::new(1, &[4], 5);
        let cfg = TrainConfig {
            epochs: 800,
            learning_rate: 0.01,
            l1: 10.0,
            batch_size: 32,
            seed: 1,
        };
        let (fit, _) = train(model, &data, &cfg).unwrap();
        let max_w = fit
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().flatten())
            .fold(0.0_f64, |a, &w| a.max(w.abs()));
        assert!(max_w < 0.02, "max |w| after heavy L1: {max_w}");
    }

    #[test]
    fn training_loss_mostly_monotone_on_toy_problem() {
        let data = Dataset {
            condition: Condition::Nf,
            train: toy_rows(64, |x| 2.0 * x - 0.3),
            validation: vec![],
        };
        let model = Mlp::new(1, &[8], 11);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.002,
            l1: 0.0,
            batch_size: 64,
            seed: 2,
        };
        let (_, report) = train(model, &data, &cfg).unwrap();
        let mut drops = 0;
        let total = report.epochs.len() - 1;
        for pair in report.epochs.windows(2) {
            if pair[1].0 <= pair[0].0 {
                drops += 1;
            }
        }
        assert!(
            drops as f64 >= 0.9 * total as f64,
            "loss decreased on only {drops}/{total} transitions"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = Dataset {
            condition: Condition::Nf,
            train: toy_rows(50, |x| x * x),
            validation: toy_rows(10, |x| x * x),
        };
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let (a, _) = train(Mlp::new(1, &[8], 3), &data, &cfg).unwrap();
        let (b, _) = train(Mlp::new(1, &[8], 3), &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn twenty_second_log_yields_1200_rows_at_60_hz() {
        use crate::runlog::{LogRecord, RunLog, RunMeta};
        let records = (0..20_000)
            .map(|k| {
                let t = k as f64 / 1000.0;
                LogRecord {
                    t,
                    x_des: 0.0,
                    xdot_des: 0.0,
                    x: 0.0,
                    xdot: 0.0,
                    f_c: 0.0,
                    f_feedback: 0.1,
                    f_passive: 0.0,
                    e_win: 0.0,
                    psm_position: (t * 0.3).sin() * 0.01,
                    f_ground_truth: (t * 0.3).sin(),
                }
            })
            .collect();
        let log = RunLog {
            meta: RunMeta {
                log_rate_hz: 1000,
                ..RunMeta::default()
            },
            records,
        };
        let dataset = generate_dataset(&[log], Condition::Nf, 60, 4).unwrap();
        assert_eq!(dataset.len(), 1200);
        // 2:1 split
        assert_eq!(dataset.train.len(), 800);
        assert_eq!(dataset.validation.len(), 400);
        // deterministic under a fixed seed
        let again = generate_dataset(
            &[RunLog {
                meta: RunMeta {
                    log_rate_hz: 1000,
                    ..RunMeta::default()
                },
                records: (0..20_000)
                    .map(|k| {
                        let t = k as f64 / 1000.0;
                        LogRecord {
                            t,
                            x_des: 0.0,
                            xdot_des: 0.0,
                            x: 0.0,
                            xdot: 0.0,
                            f_c: 0.0,
                            f_feedback: 0.1,
                            f_passive: 0.0,
                            e_win: 0.0,
                            psm_position: (t * 0.3).sin() * 0.01,
                            f_ground_truth: (t * 0.3).sin(),
                        }
                    })
                    .collect(),
            }],
            Condition::Nf,
            60,
            4,
        )
        .unwrap();
        assert_eq!(dataset, again);
    }

    #[test]
    fn refit_balances_sources_within_5_percent() {
        let original = Dataset {
            condition: Condition::Nf,
            train: toy_rows(300, |x| x),
            validation: toy_rows(10, |x| x),
        };
        let new_data = Dataset {
            condition: Condition::Ef,
            train: toy_rows(100, |x| x + 0.1),
            validation: toy_rows(10, |x| x + 0.1),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (a, b) = balance(&original.train, &new_data.train, &mut rng);
        let diff = (a.len() as f64 - b.len() as f64).abs() / a.len().max(b.len()) as f64;
        assert!(diff <= 0.05, "balance off by {diff}");
    }

    #[test]
    fn refit_with_empty_new_data_equals_plain_training() {
        let original = Dataset {
            condition: Condition::Nf,
            train: toy_rows(40, |x| x),
            validation: toy_rows(10, |x| x),
        };
        let empty = Dataset {
            condition: Condition::Ef,
            train: vec![],
            validation: vec![],
        };
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let (refit_model, _) = refit(1, &[4], 21, &original, &empty, &cfg).unwrap();
        let (plain_model, _) = train(Mlp::new(1, &[4], 21), &original, &cfg).unwrap();
        assert_eq!(refit_model, plain_model);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        let model = Mlp::new(4, &[8, 8], 17);
        model.save(&path).unwrap();
        let loaded = Mlp::load(&path).unwrap();
        assert_eq!(model, loaded);
    }
}
