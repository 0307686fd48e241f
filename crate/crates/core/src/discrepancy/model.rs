use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ResidualDataset;
use crate::error::{CcdError, Result};
use crate::tensorgrad::{Activation, Adam, Matrix, Mlp, MlpDocument, MlpVars, StepOutcome, Tape, Var};

/// Quantile levels of the lower, median and upper heads.
pub const QUANTILE_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

/// Smallest standard deviation used for standardization; constant columns
/// (e.g. a residual that is identically zero) are left unscaled around it.
const STD_FLOOR: f64 = 1e-8;

/// Pinball loss `max(τ·d, (τ-1)·d)` with `d = y - ŷ`, summed over entries.
pub fn pinball_loss(prediction: &[f64], target: &[f64], tau: f64) -> f64 {
    assert!(tau > 0.0 && tau < 1.0, "quantile level must lie in (0, 1)");
    prediction
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let d = y - p;
            (tau * d).max((tau - 1.0) * d)
        })
        .sum()
}

/// Sorts three values so that `a ≤ b ≤ c`.
pub fn rearrange(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let lo = a.min(b).min(c);
    let hi = a.max(b).max(c);
    let mid = a.min(b).max(a.max(b).min(c));
    (lo, mid, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction {
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuantilePrediction {
    /// `upper - lower`, non-negative after rearrangement.
    pub fn width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }
}

/// Batched predictions, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBatch {
    pub lower: Matrix,
    pub median: Matrix,
    pub upper: Matrix,
}

/// Maps `(e_k, x_k, u_k)` to next-step error quantiles.
///
/// The network sees standardized inputs and produces standardized outputs
/// laid out as `[lower | median | upper]`, each `state_dim` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    pub net: Mlp,
    pub state_dim: usize,
    pub taus: [f64; 3],
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (r, c) = m.shape();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    if r == 0 {
        return (mean, vec![1.0; c]);
    }
    for i in 0..r {
        for (j, v) in m.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= r as f64);
    for i in 0..r {
        for (j, v) in m.row(i).iter().enumerate() {
            std[j] += (v - mean[j]).powi(2);
        }
    }
    for s in &mut std {
        *s = (*s / r as f64).sqrt().max(STD_FLOOR);
    }
    (mean, std)
}

impl QuantileModel {
    /// Glorot-initialized model with tanh hidden layers and identity
    /// standardization.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if state_dim == 0 {
            return Err(CcdError::Config("quantile model needs a state".into()));
        }
        let input = 2 * state_dim + 1;
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(3 * state_dim);
        let acts = Mlp::activations_for(sizes.len() - 1, |_| Activation::Tanh);
        Ok(Self {
            net: Mlp::glorot(&sizes, &acts, rng)?,
            state_dim,
            taus: QUANTILE_LEVELS,
            input_mean: vec![0.0; input],
            input_std: vec![1.0; input],
            output_mean: vec![0.0; state_dim],
            output_std: vec![1.0; state_dim],
        })
    }

    pub fn input_dim(&self) -> usize {
        2 * self.state_dim + 1
    }

    pub fn set_standardization(&mut self, inputs: &Matrix, targets: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(CcdError::dim("quantile inputs", self.input_dim(), inputs.cols()));
        }
        if targets.cols() != self.state_dim {
            return Err(CcdError::dim("quantile targets", self.state_dim, targets.cols()));
        }
        (self.input_mean, self.input_std) = column_stats(inputs);
        (self.output_mean, self.output_std) = column_stats(targets);
        Ok(())
    }

    fn standardize(&self, inputs: &Matrix) -> Matrix {
        let mut z = inputs.clone();
        for i in 0..z.rows() {
            for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.input_mean[j]) / self.input_std[j];
            }
        }
        z
    }

    /// Standardized targets repeated for the three heads.
    fn standardized_targets(&self, targets: &Matrix) -> Matrix {
        let n = self.state_dim;
        let mut t = Matrix::zeros(targets.rows(), 3 * n);
        for i in 0..targets.rows() {
            for j in 0..n {
                let v = (targets[(i, j)] - self.output_mean[j]) / self.output_std[j];
                for h in 0..3 {
                    t[(i, h * n + j)] = v;
                }
            }
        }
        t
    }

    /// Head outputs in physical units, before rearrangement.
    pub fn raw_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(CcdError::dim("quantile inputs", self.input_dim(), inputs.cols()));
        }
        let mut out = self.net.forward_batch(&self.standardize(inputs))?;
        let n = self.state_dim;
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.output_std[j % n] + self.output_mean[j % n];
            }
        }
        Ok(out)
    }

    pub fn predict_batch(&self, inputs: &Matrix) -> Result<QuantileBatch> {
        let raw = self.raw_batch(inputs)?;
        let n = self.state_dim;
        let rows = raw.rows();
        let (mut lo, mut md, mut hi) = (Matrix::zeros(rows, n), Matrix::zeros(rows, n), Matrix::zeros(rows, n));
        for i in 0..rows {
            for j in 0..n {
                let (a, b, c) = rearrange(raw[(i, j)], raw[(i, n + j)], raw[(i, 2 * n + j)]);
                lo[(i, j)] = a;
                md[(i, j)] = b;
                hi[(i, j)] = c;
            }
        }
        Ok(QuantileBatch {
            lower: lo,
            median: md,
            upper: hi,
        })
    }

    pub fn predict(&self, e: &[f64], x: &[f64], u: f64) -> Result<QuantilePrediction> {
        let n = self.state_dim;
        if e.len() != n || x.len() != n {
            return Err(CcdError::dim("quantile predict state", n, e.len().max(x.len())));
        }
        let mut row = Vec::with_capacity(2 * n + 1);
        row.extend_from_slice(e);
        row.extend_from_slice(x);
        row.push(u);
        let b = self.predict_batch(&Matrix::row_vector(&row))?;
        Ok(QuantilePrediction {
            lower: b.lower.into_vec(),
            median: b.median.into_vec(),
            upper: b.upper.into_vec(),
        })
    }

    /// Rearranged `(lower, median, upper)` for raw inputs recorded on `tape`.
    pub fn predict_tape(&self, tape: &mut Tape, vars: &MlpVars, inputs: Var) -> Result<(Var, Var, Var)> {
        let n = self.state_dim;
        let mean = tape.leaf(Matrix::row_vector(&self.input_mean));
        let std = tape.leaf(Matrix::row_vector(&self.input_std));
        let centered = tape.sub(inputs, mean);
        let z = tape.div(centered, std);
        let out = self.net.forward_tape(tape, vars, z)?;
        let out_std = tape.leaf(Matrix::row_vector(&self.output_std));
        let out_mean = tape.leaf(Matrix::row_vector(&self.output_mean));
        let mut heads = [inputs; 3];
        for (h, slot) in heads.iter_mut().enumerate() {
            let c = tape.columns(out, h * n, n);
            let s = tape.mul(c, out_std);
            *slot = tape.add(s, out_mean);
        }
        let [a, b, c] = heads;
        let max = |tape: &mut Tape, x: Var, y: Var| {
            let nx = tape.neg(x);
            let ny = tape.neg(y);
            let m = tape.min(nx, ny);
            tape.neg(m)
        };
        let ab_lo = tape.min(a, b);
        let ab_hi = max(tape, a, b);
        let lower = tape.min(ab_lo, c);
        let upper = max(tape, ab_hi, c);
        let inner = tape.min(ab_hi, c);
        let median = max(tape, ab_lo, inner);
        Ok((lower, median, upper))
    }

    /// Mean over rows of the pinball loss summed over dimensions and levels,
    /// in standardized units.
    fn loss_tape(&self, tape: &mut Tape, vars: &MlpVars, z: Matrix, targets: Matrix) -> Result<Var> {
        let n = self.state_dim;
        let zi = tape.leaf(z);
        let out = self.net.forward_tape(tape, vars, zi)?;
        let t = tape.leaf(targets);
        let d = tape.sub(t, out);
        // max(τd, (τ-1)d) = ½|d| + (τ - ½)d
        let ad = tape.abs(d);
        let half = tape.scale(ad, 0.5);
        let mut w = Vec::with_capacity(3 * n);
        for tau in self.taus {
            w.extend(std::iter::repeat(tau - 0.5).take(n));
        }
        let wv = tape.leaf(Matrix::row_vector(&w));
        let lin = tape.mul(d, wv);
        let per = tape.add(half, lin);
        let rows = tape.sum_cols(per);
        Ok(tape.mean(rows))
    }

    fn loss(&self, z: &Matrix, targets: &Matrix) -> Result<f64> {
        let out = self.net.forward_batch(z)?;
        let n = self.state_dim;
        let mut total = 0.0;
        for i in 0..out.rows() {
            for (h, tau) in self.taus.iter().enumerate() {
                total += pinball_loss(&out.row(i)[h * n..(h + 1) * n], &targets.row(i)[h * n..(h + 1) * n], *tau);
            }
        }
        Ok(total / out.rows().max(1) as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&QuantileDocument::from(self)).expect("quantile model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: QuantileDocument = serde_json::from_str(text)?;
        Self::try_from(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CcdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CcdError::io(path, e))?;
        Self::from_json(&text)
    }
}

pub const QUANTILE_FORMAT: &str = "ccdtwin-quantile";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileDocument {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub taus: [f64; 3],
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
    pub net: MlpDocument,
}

impl From<&QuantileModel> for QuantileDocument {
    fn from(m: &QuantileModel) -> Self {
        Self {
            format: QUANTILE_FORMAT.into(),
            version: 1,
            state_dim: m.state_dim,
            taus: m.taus,
            input_mean: m.input_mean.clone(),
            input_std: m.input_std.clone(),
            output_mean: m.output_mean.clone(),
            output_std: m.output_std.clone(),
            net: MlpDocument::from(&m.net),
        }
    }
}

impl TryFrom<QuantileDocument> for QuantileModel {
    type Error = CcdError;

    fn try_from(doc: QuantileDocument) -> Result<Self> {
        if doc.format != QUANTILE_FORMAT || doc.version != 1 {
            return Err(CcdError::Parse(format!("unsupported quantile model {} v{}", doc.format, doc.version)));
        }
        let net = Mlp::try_from(doc.net)?;
        let n = doc.state_dim;
        if net.input_dim() != 2 * n + 1 || net.output_dim() != 3 * n {
            return Err(CcdError::Parse("quantile network shape does not match state_dim".into()));
        }
        if doc.input_mean.len() != 2 * n + 1
            || doc.input_std.len() != 2 * n + 1
            || doc.output_mean.len() != n
            || doc.output_std.len() != n
        {
            return Err(CcdError::Parse("standardization statistics have wrong length".into()));
        }
        Ok(Self {
            net,
            state_dim: n,
            taus: doc.taus,
            input_mean: doc.input_mean,
            input_std: doc.input_std,
            output_mean: doc.output_mean,
            output_std: doc.output_std,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantileConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate at the last epoch as a fraction of `lr` (linear decay).
    pub final_lr_fraction: f64,
    pub minibatch: usize,
    pub validation_fraction: f64,
    /// Validation loss above this multiple of the best so far aborts.
    pub divergence_factor: f64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 200,
            lr: 1e-3,
            final_lr_fraction: 0.01,
            minibatch: 256,
            validation_fraction: 0.2,
            divergence_factor: 10.0,
        }
    }
}

impl QuantileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(CcdError::Config("quantile hidden widths must be positive".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || !(self.lr > 0.0) {
            return Err(CcdError::Config("quantile epochs, minibatch and lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(CcdError::Config("final_lr_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Held-out quality of a quantile model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileMetrics {
    /// RMSE of the median head over all dimensions.
    pub median_rmse: f64,
    /// Fraction of target entries inside `[lower, upper]`.
    pub coverage: f64,
    /// Fraction of rows where the median is closer (L2) than zero.
    pub beats_zero: f64,
    pub rows: usize,
}

pub fn evaluate_quantiles(model: &QuantileModel, inputs: &Matrix, targets: &Matrix) -> Result<QuantileMetrics> {
    let p = model.predict_batch(inputs)?;
    let (r, n) = targets.shape();
    let (mut se, mut inside, mut better) = (0.0, 0usize, 0usize);
    for i in 0..r {
        let (mut dm, mut dz) = (0.0, 0.0);
        for j in 0..n {
            let y = targets[(i, j)];
            let d = p.median[(i, j)] - y;
            se += d * d;
            dm += d * d;
            dz += y * y;
            if p.lower[(i, j)] <= y && y <= p.upper[(i, j)] {
                inside += 1;
            }
        }
        if dm < dz {
            better += 1;
        }
    }
    let cells = (r * n).max(1) as f64;
    Ok(QuantileMetrics {
        median_rmse: (se / cells).sqrt(),
        coverage: inside as f64 / cells,
        beats_zero: better as f64 / r.max(1) as f64,
        rows: r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_rows: usize,
    pub validation_rows: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub final_train_loss: f64,
    /// Metrics of the returned model on the validation split (the training
    /// split when there is no validation data).
    pub metrics: QuantileMetrics,
    /// Training stopped early on divergence; the best model was kept.
    pub diverged: bool,
}

/// Trains `model` on `data` with an episode-level train/validation split and
/// returns the model with the best validation loss.
pub fn fit(data: &ResidualDataset, model: &mut QuantileModel, cfg: &QuantileConfig, seed: u64) -> Result<FitReport> {
    cfg.validate()?;
    if data.state_dim != model.state_dim {
        return Err(CcdError::dim("residual state", model.state_dim, data.state_dim));
    }
    let (train_idx, val_idx) = data.split_by_episode(cfg.validation_fraction, seed)?;
    if train_idx.is_empty() {
        return Err(CcdError::Config("no training residuals".into()));
    }
    let x_train = data.inputs(&train_idx);
    let y_train = data.targets(&train_idx);
    model.set_standardization(&x_train, &y_train)?;
    let z_train = model.standardize(&x_train);
    let t_train = model.standardized_targets(&y_train);
    let (x_val, y_val) = if val_idx.is_empty() {
        (x_train.clone(), y_train.clone())
    } else {
        (data.inputs(&val_idx), data.targets(&val_idx))
    };
    let z_val = model.standardize(&x_val);
    let t_val = model.standardized_targets(&y_val);

    let mut adam = Adam::for_params(&model.net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut best = (model.loss(&z_val, &t_val)?, 0usize, model.net.clone());
    let mut diverged = false;
    let mut epochs_run = 0;
    let mut train_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let frac = if cfg.epochs > 1 { epoch as f64 / (cfg.epochs - 1) as f64 } else { 1.0 };
        let lr = cfg.lr * (1.0 - frac * (1.0 - cfg.final_lr_fraction));
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.minibatch) {
            let mut tape = Tape::new();
            let vars = model.net.register(&mut tape);
            let loss = model.loss_tape(&mut tape, &vars, z_train.select_rows(chunk), t_train.select_rows(chunk))?;
            sum += tape.scalar(loss);
            batches += 1;
            let grads = tape.backward(loss)?;
            let g: Vec<Matrix> = vars.params().into_iter().map(|v| grads.wrt(v)).collect();
            if adam.step(&mut model.net.params_mut(), &g, lr) == StepOutcome::SkippedNonFinite {
                log::warn!("quantile fit epoch {epoch}: non-finite gradient skipped");
            }
        }
        epochs_run = epoch + 1;
        train_loss = sum / batches as f64;
        let val = model.loss(&z_val, &t_val)?;
        if !val.is_finite() || val > cfg.divergence_factor * best.0.max(1e-12) {
            log::warn!("quantile fit diverged at epoch {epoch} (validation loss {val:.4e}); keeping epoch {}", best.1);
            diverged = true;
            break;
        }
        if val < best.0 {
            best = (val, epoch + 1, model.net.clone());
        }
    }
    model.net = best.2;
    let metrics = evaluate_quantiles(model, &x_val, &y_val)?;
    Ok(FitReport {
        train_rows: train_idx.len(),
        validation_rows: val_idx.len(),
        epochs_run,
        best_epoch: best.1,
        best_validation_loss: best.0,
        final_train_loss: train_loss,
        metrics,
        diverged,
    })
}
