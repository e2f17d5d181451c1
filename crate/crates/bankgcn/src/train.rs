//! Training loop and its verification tools: exact gradients with a
//! finite-difference harness, Adam with decoupled weight decay, plateau
//! learning-rate decay, early stopping, and evaluation.
//!
//! Everything here is `f64` and single-threaded so a fixed seed yields a
//! bit-identical run.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Batch, Graph, GraphError};
use crate::model::{DecisionTrace, ModelError, ModelGrads, ModelParams, Objective};

/// Shape-matched gradient set for the full model.
pub type Gradients = ModelGrads<f64>;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const FD_DEFAULT_STEP: f64 = 1e-5;
pub const FD_DEFAULT_TOLERANCE: f64 = 1e-4;
pub const FD_MIN_COORDS: usize = 200;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("{which} split is empty")]
    EmptySplit { which: &'static str },
    #[error("non-finite loss or gradient: {detail}")]
    NonFinite { detail: String },
    #[error("finite-difference step {step} outside [1e-7, 1e-3]")]
    FdStepOutOfRange { step: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Plateau learning-rate schedule: multiply by `factor` when validation loss
/// has not improved for `plateau_patience` epochs, never below `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self { factor: 0.1, plateau_patience: 20, min_lr: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation result before stopping; must be
    /// at least 1.
    pub patience: usize,
    /// Decoupled weight decay; filter coefficients are exempt.
    pub weight_decay: f64,
    /// Diversity weight. Consumed when the caller constructs the model; the
    /// objective reads the model's own copy.
    pub gamma: f64,
    pub seed: u64,
    pub lr_decay: Option<LrDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 500,
            patience: 30,
            weight_decay: 0.0,
            gamma: 0.0,
            seed: 0,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if let Some(d) = &self.lr_decay {
            if !(d.factor > 0.0 && d.factor < 1.0) {
                return bad(format!("lr_decay.factor must be in (0, 1), got {}", d.factor));
            }
            if d.plateau_patience == 0 {
                return bad("lr_decay.plateau_patience must be at least 1".into());
            }
            if !(d.min_lr.is_finite() && d.min_lr > 0.0) {
                return bad(format!("lr_decay.min_lr must be positive, got {}", d.min_lr));
            }
        }
        Ok(())
    }
}

/// Objective and exact gradients on one batch, with a finiteness screen that
/// names the offending tensor.
pub fn loss_and_gradients(
    params: &ModelParams<f64>,
    batch: &Batch<f64>,
) -> Result<(Objective<f64>, Gradients), TrainError> {
    let (obj, grads) = params.objective_and_gradients(batch)?;
    if !obj.total.is_finite() {
        return Err(TrainError::NonFinite {
            detail: format!("objective total = {} (loss {}, omega {})", obj.total, obj.loss, obj.omega),
        });
    }
    let flat = grads.to_flat();
    if let Some(idx) = flat.iter().position(|v| !v.is_finite()) {
        let layout = params.layout();
        let tensor = layout
            .tensors
            .iter()
            .find(|t| idx >= t.offset && idx < t.offset + t.len)
            .map(|t| t.name.clone())
            .unwrap_or_else(|| "unknown".into());
        return Err(TrainError::NonFinite {
            detail: format!("gradient of {tensor} contains {}", flat[idx]),
        });
    }
    Ok((obj, grads))
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`; the differencing core of the
/// gradient check below.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// One coordinate whose analytic gradient disagreed with the finite
/// difference beyond tolerance.
#[derive(Debug, Clone)]
pub struct FdFailure {
    pub tensor: String,
    /// Index within the tensor, row-major.
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates replaced because the probe straddled a ReLU kink, a
    /// max-pool switch, or a diversity argmax tie.
    pub resampled: usize,
    pub max_rel_err: f64,
    pub failures: Vec<FdFailure>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares analytic gradients against central finite differences on a
/// random coordinate sample that touches every trainable tensor.
///
/// Relative error is `|g - fd| / max(1, |fd|)`. A coordinate whose two probe
/// points make different discrete decisions (so the objective is not smooth
/// between them) is resampled rather than compared.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    batch: &Batch<f64>,
    step: f64,
    tolerance: f64,
    min_coords: usize,
    seed: u64,
) -> Result<FdReport, TrainError> {
    fd_check_impl(params, batch, step, tolerance, min_coords, seed, 0.0)
}

/// [`finite_difference_check`] with `bias` added to the first compared
/// analytic gradient; a self-test hook proving the harness can fail.
pub fn finite_difference_check_biased(
    params: &ModelParams<f64>,
    batch: &Batch<f64>,
    step: f64,
    tolerance: f64,
    min_coords: usize,
    seed: u64,
    bias: f64,
) -> Result<FdReport, TrainError> {
    fd_check_impl(params, batch, step, tolerance, min_coords, seed, bias)
}

fn fd_check_impl(
    params: &ModelParams<f64>,
    batch: &Batch<f64>,
    step: f64,
    tolerance: f64,
    min_coords: usize,
    seed: u64,
    bias: f64,
) -> Result<FdReport, TrainError> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(TrainError::FdStepOutOfRange { step });
    }
    let (_, grads) = loss_and_gradients(params, batch)?;
    let analytic = grads.to_flat();
    let layout = params.layout();
    let frozen = params.filters_frozen();
    let eligible: Vec<_> = layout
        .tensors
        .iter()
        .filter(|t| t.len > 0 && !(frozen && t.filter_coeffs))
        .collect();
    let total_eligible: usize = eligible.iter().map(|t| t.len).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = std::collections::BTreeSet::new();
    for t in &eligible {
        chosen.insert(t.offset + rng.random_range(0..t.len));
    }
    let target = min_coords.min(total_eligible).max(chosen.len());
    let draw = |rng: &mut ChaCha8Rng| {
        let mut u = rng.random_range(0..total_eligible);
        for t in &eligible {
            if u < t.len {
                return t.offset + u;
            }
            u -= t.len;
        }
        unreachable!("prefix sums cover the draw");
    };
    let mut attempts = 0;
    while chosen.len() < target && attempts < 100 * target {
        chosen.insert(draw(&mut rng));
        attempts += 1;
    }

    let mut probe = params.clone();
    let base = params.to_flat();
    let mut flat = base.clone();
    let side = |probe: &mut ModelParams<f64>,
                    flat: &mut Vec<f64>,
                    idx: usize,
                    delta: f64|
     -> Result<(f64, DecisionTrace), TrainError> {
        flat[idx] = base[idx] + delta;
        probe.assign_from_flat(flat)?;
        flat[idx] = base[idx];
        let (obj, trace) = probe.objective_with_trace(batch)?;
        Ok((obj.total, trace))
    };

    let mut report =
        FdReport { checked: 0, resampled: 0, max_rel_err: 0.0, failures: Vec::new() };
    let mut queue: Vec<usize> = chosen.iter().copied().collect();
    let mut qi = 0;
    let mut replacement_budget = 100 * target;
    while qi < queue.len() {
        let idx = queue[qi];
        qi += 1;
        let (fp, tp) = side(&mut probe, &mut flat, idx, step)?;
        let (fm, tm) = side(&mut probe, &mut flat, idx, -step)?;
        if tp != tm {
            report.resampled += 1;
            while replacement_budget > 0 {
                replacement_budget -= 1;
                let cand = draw(&mut rng);
                if chosen.insert(cand) {
                    queue.push(cand);
                    break;
                }
            }
            continue;
        }
        let fd = (fp - fm) / (2.0 * step);
        let g = if report.checked == 0 { analytic[idx] + bias } else { analytic[idx] };
        let rel = (g - fd).abs() / fd.abs().max(1.0);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
        }
        if rel > tolerance {
            let t = layout
                .tensors
                .iter()
                .find(|t| idx >= t.offset && idx < t.offset + t.len)
                .expect("sampled index lies in a tensor");
            report.failures.push(FdFailure {
                tensor: t.name.clone(),
                index: idx - t.offset,
                analytic: g,
                fd,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}

/// Adam first and second moments over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }
}

/// Bias-corrected Adam update on flat vectors. Decoupled weight decay is
/// applied to the parameters first, skipping coordinates where `no_decay`
/// is set.
fn adam_update_flat(
    state: &mut AdamState,
    flat: &mut [f64],
    grads: &[f64],
    no_decay: &[bool],
    lr: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(flat.len(), grads.len());
    debug_assert_eq!(flat.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..flat.len() {
        if weight_decay > 0.0 && !no_decay[i] {
            flat[i] *= 1.0 - lr * weight_decay;
        }
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        flat[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One optimizer step over the whole model.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ModelParams<f64>,
    grads: &Gradients,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    let layout = params.layout();
    let mut no_decay = vec![false; layout.total];
    for t in &layout.tensors {
        if t.filter_coeffs {
            no_decay[t.offset..t.offset + t.len].fill(true);
        }
    }
    let mut flat = params.to_flat();
    let gflat = grads.to_flat();
    adam_update_flat(state, &mut flat, &gflat, &no_decay, lr, weight_decay);
    params.assign_from_flat(&flat)?;
    Ok(())
}

/// One line of the training history, emitted as newline-delimited JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub omega: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_params: ModelParams<f64>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains on shuffled mini-batches, checkpointing the parameters with the
/// best validation accuracy (ties broken by lower validation loss) and
/// stopping after `patience` epochs without a new best.
pub fn train(
    model_init: &ModelParams<f64>,
    train_graphs: &[&Graph<f64>],
    val_graphs: &[&Graph<f64>],
    config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    if train_graphs.is_empty() {
        return Err(TrainError::EmptySplit { which: "train" });
    }
    if val_graphs.is_empty() {
        return Err(TrainError::EmptySplit { which: "validation" });
    }

    let mut params = model_init.clone();
    let mut adam = AdamState::new(params.layout().total);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.learning_rate;

    let mut history = Vec::new();
    let mut best: Option<(ModelParams<f64>, usize, f64, f64)> = None;
    let mut epochs_since_best = 0;
    let mut plateau_best_loss = f64::INFINITY;
    let mut plateau_count = 0;

    let mut indices: Vec<usize> = (0..train_graphs.len()).collect();
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let epoch_lr = lr;
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            let batch = Batch::from_graphs(chunk.iter().map(|&i| train_graphs[i]))?;
            let (obj, grads) = loss_and_gradients(&params, &batch).map_err(|e| match e {
                TrainError::NonFinite { detail } => {
                    TrainError::NonFinite { detail: format!("epoch {epoch}: {detail}") }
                }
                other => other,
            })?;
            loss_sum += obj.loss * chunk.len() as f64;
            adam_step(&mut adam, &mut params, &grads, epoch_lr, config.weight_decay)?;
        }
        let train_loss = loss_sum / train_graphs.len() as f64;

        let (val_acc, val_loss, _) = eval_metrics(&params, val_graphs)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            omega: params.omega(),
            val_loss,
            val_acc,
            lr: epoch_lr,
            elapsed_s: started.elapsed().as_secs_f64(),
        });

        let improved = match &best {
            None => true,
            Some((_, _, acc, loss)) => val_acc > *acc || (val_acc == *acc && val_loss < *loss),
        };
        if improved {
            best = Some((params.clone(), epoch, val_acc, val_loss));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }

        if let Some(decay) = &config.lr_decay {
            if val_loss < plateau_best_loss {
                plateau_best_loss = val_loss;
                plateau_count = 0;
            } else {
                plateau_count += 1;
                if plateau_count >= decay.plateau_patience {
                    lr = (lr * decay.factor).max(decay.min_lr);
                    plateau_count = 0;
                }
            }
        }
    }

    let (best_params, best_epoch, best_val_acc, best_val_loss) =
        best.expect("at least one epoch ran");
    Ok(TrainResult { best_params, best_epoch, best_val_acc, best_val_loss, history })
}

/// Accuracy and a per-class confusion matrix; `confusion[[t, p]]` counts
/// graphs of true class `t` predicted as `p`.
pub fn evaluate(
    params: &ModelParams<f64>,
    graphs: &[&Graph<f64>],
) -> Result<(f64, Array2<usize>), TrainError> {
    let (acc, _, confusion) = eval_metrics(params, graphs)?;
    Ok((acc, confusion))
}

fn eval_metrics(
    params: &ModelParams<f64>,
    graphs: &[&Graph<f64>],
) -> Result<(f64, f64, Array2<usize>), TrainError> {
    if graphs.is_empty() {
        return Err(TrainError::EmptySplit { which: "evaluation" });
    }
    let classes = params.num_classes();
    let mut confusion = Array2::<usize>::zeros((classes, classes));
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let batch = Batch::from_graphs(chunk.iter().copied())?;
        let preds = params.forward(&batch)?;
        for (pred, &label) in preds.iter().zip(batch.labels()) {
            if label >= classes {
                return Err(TrainError::Model(ModelError::InvalidLabel { label, classes }));
            }
            confusion[[label, pred.predicted_class]] += 1;
            if pred.predicted_class == label {
                correct += 1;
            }
            loss_sum += crate::model::cross_entropy(pred, label)?;
        }
    }
    let n = graphs.len() as f64;
    Ok((correct as f64 / n, loss_sum / n, confusion))
}
