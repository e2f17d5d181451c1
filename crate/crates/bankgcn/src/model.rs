//! Graph classifier: a stack of filter-bank layers, mean/max readout over
//! every layer's output, and a linear softmax head.
//!
//! The objective is mean cross-entropy plus `gamma` times the sum of the
//! per-layer diversity penalties. One checkpoint format serializes every
//! parameter tensor as named little-endian `f64` data behind a `BGCN` magic
//! and version field.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use thiserror::Error;

use crate::bank::{
    diversity_penalty_grad, BankCache, BankError, BankLayerGrads, BankLayerParams,
    ParamCountConvention,
};
use crate::graph::{Batch, GraphError};
use crate::scalar::{cast, Scalar};
use crate::spectral::FilterCoeffs;

const CHECKPOINT_MAGIC: &[u8; 4] = b"BGCN";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model needs at least two classes")]
    TooFewClasses,
    #[error("gamma must be finite and non-negative, got {gamma}")]
    BadGamma { gamma: f64 },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("layer outputs have {got} rows but the batch holds {expected} nodes")]
    ReadoutRowMismatch { got: usize, expected: usize },
    #[error("readout width {got} does not match the head input {expected}")]
    HeadWidthMismatch { got: usize, expected: usize },
    #[error("flat parameter vector has length {got}, expected {expected}")]
    FlatLenMismatch { got: usize, expected: usize },
    #[error("checkpoint does not start with the BGCN magic")]
    BadMagic,
    #[error("checkpoint version {got} is not supported (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { got: u32 },
    #[error("checkpoint is truncated or malformed: {0}")]
    Corrupt(String),
    #[error("checkpoint is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("checkpoint tensor {name} has unexpected shape: {detail}")]
    TensorShape { name: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Full parameter set of the classifier.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub(crate) layers: Vec<BankLayerParams<T>>,
    pub(crate) head_w: Array2<T>,
    pub(crate) head_b: Array1<T>,
    gamma: T,
    freeze_filters: bool,
    num_classes: usize,
}

/// Gradients shape-matched to [`ModelParams`]; filter-coefficient gradients
/// are zero when the filters are frozen.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub layers: Vec<BankLayerGrads<T>>,
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

/// Per-graph classifier output.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    pub predicted_class: usize,
}

/// Objective value split into its terms: `total = loss + gamma * omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<T> {
    pub total: T,
    pub loss: T,
    pub omega: T,
}

impl<T: Scalar> Prediction<T> {
    /// Stable softmax over one logit row; ties in the argmax resolve to the
    /// smallest class index.
    pub fn from_logits(logits: &[T]) -> Self {
        let max = logits
            .iter()
            .fold(T::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
        let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum = exps.iter().fold(T::zero(), |acc, &v| acc + v);
        let probabilities: Vec<T> = exps.iter().map(|&e| e / sum).collect();
        let mut predicted_class = 0;
        for (k, &p) in probabilities.iter().enumerate() {
            if p > probabilities[predicted_class] {
                predicted_class = k;
            }
        }
        Self { logits: logits.to_vec(), probabilities, predicted_class }
    }
}

/// Cross-entropy `-log p[label]` computed from logits via log-sum-exp, so
/// extreme logits cannot overflow.
pub fn cross_entropy<T: Scalar>(pred: &Prediction<T>, label: usize) -> Result<T, ModelError> {
    if label >= pred.logits.len() {
        return Err(ModelError::InvalidLabel { label, classes: pred.logits.len() });
    }
    let max = pred
        .logits
        .iter()
        .fold(T::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    let sum = pred
        .logits
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - max).exp());
    Ok(max + sum.ln() - pred.logits[label])
}

/// Forward intermediates, including everything the backward pass and the
/// finite-difference kink detector need.
#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    layer_caches: Vec<BankCache<T>>,
    readout: Array2<T>,
    /// Per layer, `graphs x d_out` argmax node indices of the max pooling.
    argmax: Vec<Array2<usize>>,
    logits: Array2<T>,
}

impl<T: Scalar> ModelCache<T> {
    pub fn logits(&self) -> &Array2<T> {
        &self.logits
    }
}

/// Discrete choices made during a forward pass. Two evaluations at nearby
/// parameter points are only finite-difference comparable when their traces
/// agree; a mismatch means the probe straddles a ReLU kink, a max-pool
/// switch, or a diversity argmax tie.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTrace {
    relu: Vec<Vec<bool>>,
    argmax: Vec<Vec<usize>>,
    omega: Vec<(Option<(usize, usize)>, i8)>,
}

impl<T: Scalar> ModelParams<T> {
    /// Randomly initialized model.
    ///
    /// `widths` are the layer output widths; an empty list leaves a
    /// head-only model (degenerate but countable). Layers whose input is a
    /// single channel use one subspace per output channel (subspace width
    /// 1); all other layers use `subspaces`, which must divide their width.
    pub fn new<R: Rng>(
        input_dim: usize,
        widths: &[usize],
        num_classes: usize,
        subspaces: usize,
        order: usize,
        gamma: T,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if num_classes < 2 {
            return Err(ModelError::TooFewClasses);
        }
        if !(gamma.is_finite() && gamma >= T::zero()) {
            return Err(ModelError::BadGamma { gamma: gamma.to_f64().unwrap_or(f64::NAN) });
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut d_in = input_dim;
        for &width in widths {
            let s = if d_in == 1 { width } else { subspaces };
            layers.push(BankLayerParams::new(d_in, width, s, order, rng)?);
            d_in = width;
        }
        let readout_width: usize = widths.iter().map(|w| 2 * w).sum();
        let bound = (6.0 / (readout_width + num_classes) as f64).sqrt();
        let head_w = Array2::from_shape_fn((readout_width, num_classes), |_| {
            cast::<T>(rng.random_range(-bound..bound))
        });
        let head_b = Array1::zeros(num_classes);
        Ok(Self { layers, head_w, head_b, gamma, freeze_filters: false, num_classes })
    }

    /// Replaces every filter in every layer with the low-pass response
    /// `2 - lambda` and freezes the coefficients. This is the reference
    /// single-filter propagation baseline.
    pub fn freeze_lowpass(&mut self) {
        if let Some(first) = self.layers.first() {
            let lp = FilterCoeffs::<T>::lowpass(first.order());
            for layer in &mut self.layers {
                layer.set_uniform_filters(&lp);
            }
        }
        self.freeze_filters = true;
    }

    /// Overwrites every filter in every layer with the same coefficients;
    /// used to start from a maximally non-diverse bank.
    pub fn set_colinear_filters(&mut self, coeffs: &FilterCoeffs<T>) {
        for layer in &mut self.layers {
            layer.set_uniform_filters(coeffs);
        }
    }

    pub fn layers(&self) -> &[BankLayerParams<T>] {
        &self.layers
    }

    pub fn head_weights(&self) -> &Array2<T> {
        &self.head_w
    }

    pub fn head_bias(&self) -> &Array1<T> {
        &self.head_b
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn filters_frozen(&self) -> bool {
        self.freeze_filters
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.d_in())
    }

    /// Full forward pass; returns one [`Prediction`] per graph.
    pub fn forward(&self, batch: &Batch<T>) -> Result<Vec<Prediction<T>>, ModelError> {
        let cache = self.forward_cached(batch)?;
        Ok(cache
            .logits
            .rows()
            .into_iter()
            .map(|row| Prediction::from_logits(row.as_slice().expect("contiguous row")))
            .collect())
    }

    /// Forward pass retaining layer caches, readout argmaxes, and logits.
    pub fn forward_cached(&self, batch: &Batch<T>) -> Result<ModelCache<T>, ModelError> {
        let g = batch.merged();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut x = g.features().clone();
        for layer in &self.layers {
            let cache = layer.forward_cached(g, &x)?;
            x = cache.output().clone();
            layer_caches.push(cache);
        }
        let outputs: Vec<&Array2<T>> = layer_caches.iter().map(|c| c.output()).collect();
        let (readout, argmax) = readout_cached(&outputs, batch)?;
        if readout.ncols() != self.head_w.nrows() {
            return Err(ModelError::HeadWidthMismatch {
                got: readout.ncols(),
                expected: self.head_w.nrows(),
            });
        }
        let logits = readout.dot(&self.head_w) + &self.head_b;
        Ok(ModelCache { layer_caches, readout, argmax, logits })
    }

    /// Objective on a batch: mean cross-entropy, diversity penalty summed
    /// over layers, and their `gamma`-weighted total.
    pub fn objective(&self, batch: &Batch<T>) -> Result<Objective<T>, ModelError> {
        Ok(self.objective_with_trace(batch)?.0)
    }

    /// Objective together with the forward pass's discrete decisions, from a
    /// single evaluation.
    pub fn objective_with_trace(
        &self,
        batch: &Batch<T>,
    ) -> Result<(Objective<T>, DecisionTrace), ModelError> {
        let cache = self.forward_cached(batch)?;
        let loss = self.mean_cross_entropy(&cache, batch)?;
        let omega = self.omega();
        let trace = self.decision_trace(&cache);
        Ok((Objective { total: loss + self.gamma * omega, loss, omega }, trace))
    }

    /// Sum of per-layer diversity penalties.
    pub fn omega(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |acc, l| acc + crate::bank::diversity_penalty(l.filters()))
    }

    fn mean_cross_entropy(
        &self,
        cache: &ModelCache<T>,
        batch: &Batch<T>,
    ) -> Result<T, ModelError> {
        let mut total = T::zero();
        for (gi, &label) in batch.labels().iter().enumerate() {
            let row = cache.logits.row(gi);
            let pred = Prediction::from_logits(row.as_slice().expect("contiguous row"));
            total += cross_entropy(&pred, label)?;
        }
        Ok(total / cast::<T>(batch.num_graphs() as f64))
    }

    /// Objective plus exact gradients for every trainable tensor.
    pub fn objective_and_gradients(
        &self,
        batch: &Batch<T>,
    ) -> Result<(Objective<T>, ModelGrads<T>), ModelError> {
        let cache = self.forward_cached(batch)?;
        let loss = self.mean_cross_entropy(&cache, batch)?;
        let omega = self.omega();
        let objective = Objective { total: loss + self.gamma * omega, loss, omega };

        // Softmax cross-entropy: d logits = (p - onehot) / num_graphs.
        let num_graphs = batch.num_graphs();
        let scale = cast::<T>(1.0 / num_graphs as f64);
        let mut d_logits = Array2::<T>::zeros(cache.logits.raw_dim());
        for (gi, &label) in batch.labels().iter().enumerate() {
            let row = cache.logits.row(gi);
            let pred = Prediction::from_logits(row.as_slice().expect("contiguous row"));
            if label >= self.num_classes {
                return Err(ModelError::InvalidLabel { label, classes: self.num_classes });
            }
            for k in 0..self.num_classes {
                let y = if k == label { T::one() } else { T::zero() };
                d_logits[[gi, k]] = (pred.probabilities[k] - y) * scale;
            }
        }

        let head_w_grad = cache.readout.t().dot(&d_logits);
        let head_b_grad = d_logits.sum_axis(ndarray::Axis(0));
        let d_readout = d_logits.dot(&self.head_w.t());

        // Split the readout gradient back into per-layer node gradients.
        let total_nodes = batch.merged().num_nodes();
        let mut d_layer_out: Vec<Array2<T>> = self
            .layers
            .iter()
            .map(|l| Array2::zeros((total_nodes, l.d_out())))
            .collect();
        let mut col_off = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            let d = layer.d_out();
            for gi in 0..num_graphs {
                let range = batch.node_range(gi);
                let n_g = cast::<T>(range.len() as f64);
                for c in 0..d {
                    let dm = d_readout[[gi, col_off + c]];
                    if dm != T::zero() {
                        let per_node = dm / n_g;
                        for i in range.clone() {
                            d_layer_out[li][[i, c]] += per_node;
                        }
                    }
                    let dx = d_readout[[gi, col_off + d + c]];
                    if dx != T::zero() {
                        let node = cache.argmax[li][[gi, c]];
                        d_layer_out[li][[node, c]] += dx;
                    }
                }
            }
            col_off += 2 * d;
        }

        // Walk the layers backwards, folding each layer's input gradient into
        // the readout contribution of the layer below.
        let g = batch.merged();
        let mut layer_grads: Vec<BankLayerGrads<T>> = Vec::with_capacity(self.layers.len());
        let mut upstream: Option<Array2<T>> = None;
        for li in (0..self.layers.len()).rev() {
            let mut d_out = d_layer_out[li].clone();
            if let Some(up) = upstream.take() {
                d_out.zip_mut_with(&up, |a, &b| *a += b);
            }
            let (grads, d_x) = self.layers[li].backward(g, &cache.layer_caches[li], &d_out)?;
            layer_grads.push(grads);
            upstream = Some(d_x);
        }
        layer_grads.reverse();

        // Diversity term: gamma flows into the chosen pair per layer.
        if self.freeze_filters {
            for lg in &mut layer_grads {
                for a in &mut lg.alpha {
                    a.fill(T::zero());
                }
            }
        } else if self.gamma != T::zero() {
            for (layer, lg) in self.layers.iter().zip(&mut layer_grads) {
                let (_, _, omega_grads) = diversity_penalty_grad(layer.filters());
                for (a, og) in lg.alpha.iter_mut().zip(omega_grads) {
                    a.zip_mut_with(&og, |av, &ov| *av += self.gamma * ov);
                }
            }
        }

        Ok((objective, ModelGrads { layers: layer_grads, head_w: head_w_grad, head_b: head_b_grad }))
    }

    /// Discrete decisions of a forward pass; see [`DecisionTrace`].
    pub fn decision_trace(&self, cache: &ModelCache<T>) -> DecisionTrace {
        let relu = cache.layer_caches.iter().map(|c| c.relu_mask()).collect();
        let argmax = cache
            .argmax
            .iter()
            .map(|a| a.iter().copied().collect())
            .collect();
        let omega = self
            .layers
            .iter()
            .map(|layer| {
                let (_, pair, _) = diversity_penalty_grad(layer.filters());
                let sign = match pair {
                    Some((p, q)) => {
                        let dot = layer.filters()[p]
                            .alpha()
                            .iter()
                            .zip(layer.filters()[q].alpha())
                            .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                        if dot > T::zero() {
                            1
                        } else if dot < T::zero() {
                            -1
                        } else {
                            0
                        }
                    }
                    None => 0,
                };
                (pair, sign)
            })
            .collect();
        DecisionTrace { relu, argmax, omega }
    }

    /// Parameter count over all layers plus the head.
    pub fn param_count(&self, convention: ParamCountConvention) -> usize {
        let head = self.head_w.len() + self.head_b.len();
        self.layers
            .iter()
            .map(|l| l.param_count(convention))
            .sum::<usize>()
            + head
    }

    /// Like [`Self::param_count`] but skips filter coefficients when they are
    /// frozen, counting only what the optimizer updates.
    pub fn trainable_param_count(&self, convention: ParamCountConvention) -> usize {
        if !self.freeze_filters {
            return self.param_count(convention);
        }
        let head = self.head_w.len() + self.head_b.len();
        self.layers
            .iter()
            .map(|l| l.d_in() * l.d_out() + l.d_out())
            .sum::<usize>()
            + head
    }
}

/// Graph-level readout: per graph and per layer, the node-wise mean and max
/// of the layer output, concatenated layer by layer as `[mean_l, max_l]`.
pub fn readout<T: Scalar>(
    layer_outputs: &[&Array2<T>],
    batch: &Batch<T>,
) -> Result<Array2<T>, ModelError> {
    Ok(readout_cached(layer_outputs, batch)?.0)
}

fn readout_cached<T: Scalar>(
    layer_outputs: &[&Array2<T>],
    batch: &Batch<T>,
) -> Result<(Array2<T>, Vec<Array2<usize>>), ModelError> {
    let total_nodes = batch.merged().num_nodes();
    let num_graphs = batch.num_graphs();
    let width: usize = layer_outputs.iter().map(|o| 2 * o.ncols()).sum();
    let mut out = Array2::<T>::zeros((num_graphs, width));
    let mut argmax = Vec::with_capacity(layer_outputs.len());
    let mut col_off = 0;
    for output in layer_outputs {
        if output.nrows() != total_nodes {
            return Err(ModelError::ReadoutRowMismatch {
                got: output.nrows(),
                expected: total_nodes,
            });
        }
        let d = output.ncols();
        let mut arg = Array2::<usize>::zeros((num_graphs, d));
        for gi in 0..num_graphs {
            let range = batch.node_range(gi);
            let n_g = cast::<T>(range.len() as f64);
            for c in 0..d {
                let mut sum = T::zero();
                let mut best = range.start;
                for i in range.clone() {
                    let v = output[[i, c]];
                    sum += v;
                    // Strict comparison keeps the first maximizing node.
                    if v > output[[best, c]] {
                        best = i;
                    }
                }
                out[[gi, col_off + c]] = sum / n_g;
                out[[gi, col_off + d + c]] = output[[best, c]];
                arg[[gi, c]] = best;
            }
        }
        argmax.push(arg);
        col_off += 2 * d;
    }
    Ok((out, argmax))
}

// --- flat parameter layout -------------------------------------------------

/// One tensor's slot in the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct TensorDesc {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Filter coefficients are excluded from weight decay and skipped by
    /// finite-difference probes when frozen.
    pub filter_coeffs: bool,
}

/// Deterministic flattening order shared by the optimizer, the
/// finite-difference harness, and the checkpoint writer.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tensors: Vec<TensorDesc>,
    pub total: usize,
}

impl<T: Scalar> ModelParams<T> {
    pub fn layout(&self) -> ParamLayout {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize, filter_coeffs: bool, off: &mut usize| {
            tensors.push(TensorDesc { name, offset: *off, len, filter_coeffs });
            *off += len;
        };
        for (li, layer) in self.layers.iter().enumerate() {
            for p in 0..layer.subspaces() {
                push(format!("layer{li}.w{p}"), layer.proj_w()[p].len(), false, &mut offset);
            }
            for p in 0..layer.subspaces() {
                push(format!("layer{li}.b{p}"), layer.proj_b()[p].len(), false, &mut offset);
            }
            for p in 0..layer.subspaces() {
                push(
                    format!("layer{li}.alpha{p}"),
                    layer.filters()[p].alpha().len(),
                    true,
                    &mut offset,
                );
            }
        }
        push("head.w".to_string(), self.head_w.len(), false, &mut offset);
        push("head.b".to_string(), self.head_b.len(), false, &mut offset);
        ParamLayout { tensors, total: offset }
    }

    /// Copies every tensor into one vector in [`Self::layout`] order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.layout().total);
        for layer in &self.layers {
            for w in layer.proj_w() {
                flat.extend(w.iter().copied());
            }
            for b in layer.proj_b() {
                flat.extend(b.iter().copied());
            }
            for f in layer.filters() {
                flat.extend(f.alpha().iter().copied());
            }
        }
        flat.extend(self.head_w.iter().copied());
        flat.extend(self.head_b.iter().copied());
        flat
    }

    /// Writes a flat vector produced by [`Self::to_flat`] back into the
    /// structured tensors.
    pub fn assign_from_flat(&mut self, flat: &[T]) -> Result<(), ModelError> {
        let expected = self.layout().total;
        if flat.len() != expected {
            return Err(ModelError::FlatLenMismatch { got: flat.len(), expected });
        }
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &flat[pos..pos + len];
            pos += len;
            s
        };
        for layer in &mut self.layers {
            for w in &mut layer.proj_w {
                let src = take(w.len());
                for (dst, &v) in w.iter_mut().zip(src) {
                    *dst = v;
                }
            }
            for b in &mut layer.proj_b {
                let src = take(b.len());
                for (dst, &v) in b.iter_mut().zip(src) {
                    *dst = v;
                }
            }
            let order = layer.order();
            for f in &mut layer.filters {
                let src = take(order + 1).to_vec();
                *f = FilterCoeffs::new(src).expect("flat data is finite");
            }
        }
        let w_slice = take(self.head_w.len());
        for (dst, &v) in self.head_w.iter_mut().zip(w_slice) {
            *dst = v;
        }
        let b_slice = take(self.head_b.len());
        for (dst, &v) in self.head_b.iter_mut().zip(b_slice) {
            *dst = v;
        }
        Ok(())
    }
}

impl<T: Scalar> ModelGrads<T> {
    /// Same order as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            for w in &layer.proj_w {
                flat.extend(w.iter().copied());
            }
            for b in &layer.proj_b {
                flat.extend(b.iter().copied());
            }
            for a in &layer.alpha {
                flat.extend(a.iter().copied());
            }
        }
        flat.extend(self.head_w.iter().copied());
        flat.extend(self.head_b.iter().copied());
        flat
    }
}

// --- checkpoint io -----------------------------------------------------------

fn push_tensor(buf: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f64>) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Serializes the model: `BGCN` magic, version, then a length-prefixed
    /// list of named f64 tensors (row-major, little-endian). The write is
    /// atomic (temp file + rename).
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let to64 = |v: T| v.to_f64().expect("f64-representable scalar");
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        tensors.push((
            "meta".into(),
            vec![4],
            vec![
                self.layers.len() as f64,
                self.num_classes as f64,
                if self.freeze_filters { 1.0 } else { 0.0 },
                to64(self.gamma),
            ],
        ));
        for (li, layer) in self.layers.iter().enumerate() {
            tensors.push((
                format!("layer{li}.meta"),
                vec![4],
                vec![
                    layer.d_in() as f64,
                    layer.d_sub() as f64,
                    layer.subspaces() as f64,
                    layer.order() as f64,
                ],
            ));
            for p in 0..layer.subspaces() {
                let w = &layer.proj_w()[p];
                tensors.push((
                    format!("layer{li}.w{p}"),
                    vec![w.nrows(), w.ncols()],
                    w.iter().map(|&v| to64(v)).collect(),
                ));
                let b = &layer.proj_b()[p];
                tensors.push((
                    format!("layer{li}.b{p}"),
                    vec![b.len()],
                    b.iter().map(|&v| to64(v)).collect(),
                ));
                let a = layer.filters()[p].alpha();
                tensors.push((
                    format!("layer{li}.alpha{p}"),
                    vec![a.len()],
                    a.iter().map(|&v| to64(v)).collect(),
                ));
            }
        }
        tensors.push((
            "head.w".into(),
            vec![self.head_w.nrows(), self.head_w.ncols()],
            self.head_w.iter().map(|&v| to64(v)).collect(),
        ));
        tensors.push((
            "head.b".into(),
            vec![self.head_b.len()],
            self.head_b.iter().map(|&v| to64(v)).collect(),
        ));

        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, dims, data) in &tensors {
            push_tensor(&mut buf, name, dims, data.iter().copied());
        }

        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`Self::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        let buf = std::fs::read(path)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8], ModelError> {
            if *pos + len > buf.len() {
                return Err(ModelError::Corrupt(format!(
                    "need {len} bytes at offset {pos}, file has {}",
                    buf.len()
                )));
            }
            let s = &buf[*pos..*pos + len];
            *pos += len;
            Ok(s)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32, ModelError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let read_u64 = |pos: &mut usize| -> Result<u64, ModelError> {
            Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };

        if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = read_u32(&mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion { got: version });
        }
        let count = read_u32(&mut pos)? as usize;
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| ModelError::Corrupt("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut pos)? as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            tensors.insert(name, (dims, data));
        }

        let get = |name: &str| -> Result<&(Vec<usize>, Vec<f64>), ModelError> {
            tensors
                .get(name)
                .ok_or_else(|| ModelError::MissingTensor { name: name.to_string() })
        };
        let get_vec = |name: &str, len: usize| -> Result<Vec<T>, ModelError> {
            let (dims, data) = get(name)?;
            if dims.len() != 1 || data.len() != len {
                return Err(ModelError::TensorShape {
                    name: name.to_string(),
                    detail: format!("expected rank 1 length {len}, got {dims:?}"),
                });
            }
            Ok(data.iter().map(|&v| cast::<T>(v)).collect())
        };

        let meta = &get("meta")?.1;
        if meta.len() != 4 {
            return Err(ModelError::TensorShape {
                name: "meta".into(),
                detail: format!("expected 4 values, got {}", meta.len()),
            });
        }
        let num_layers = meta[0] as usize;
        let num_classes = meta[1] as usize;
        let freeze_filters = meta[2] != 0.0;
        let gamma = cast::<T>(meta[3]);

        let mut layers = Vec::with_capacity(num_layers);
        for li in 0..num_layers {
            let lm = &get(&format!("layer{li}.meta"))?.1;
            if lm.len() != 4 {
                return Err(ModelError::TensorShape {
                    name: format!("layer{li}.meta"),
                    detail: format!("expected 4 values, got {}", lm.len()),
                });
            }
            let (d_in, d_sub, subspaces, order) =
                (lm[0] as usize, lm[1] as usize, lm[2] as usize, lm[3] as usize);
            let mut proj_w = Vec::with_capacity(subspaces);
            let mut proj_b = Vec::with_capacity(subspaces);
            let mut filters = Vec::with_capacity(subspaces);
            for p in 0..subspaces {
                let name = format!("layer{li}.w{p}");
                let (dims, data) = get(&name)?;
                if dims != &[d_in, d_sub] {
                    return Err(ModelError::TensorShape {
                        name,
                        detail: format!("expected [{d_in}, {d_sub}], got {dims:?}"),
                    });
                }
                let w = Array2::from_shape_vec(
                    (d_in, d_sub),
                    data.iter().map(|&v| cast::<T>(v)).collect(),
                )
                .expect("shape checked");
                proj_w.push(w);
                proj_b.push(Array1::from_vec(get_vec(&format!("layer{li}.b{p}"), d_sub)?));
                let alpha = get_vec(&format!("layer{li}.alpha{p}"), order + 1)?;
                filters.push(FilterCoeffs::new(alpha).map_err(|e| ModelError::TensorShape {
                    name: format!("layer{li}.alpha{p}"),
                    detail: e.to_string(),
                })?);
            }
            layers.push(BankLayerParams::from_parts(proj_w, proj_b, filters)?);
        }

        let readout_width: usize = layers.iter().map(|l| 2 * l.d_out()).sum();
        let name = "head.w";
        let (dims, data) = get(name)?;
        if dims != &[readout_width, num_classes] {
            return Err(ModelError::TensorShape {
                name: name.into(),
                detail: format!("expected [{readout_width}, {num_classes}], got {dims:?}"),
            });
        }
        let head_w = Array2::from_shape_vec(
            (readout_width, num_classes),
            data.iter().map(|&v| cast::<T>(v)).collect(),
        )
        .expect("shape checked");
        let head_b = Array1::from_vec(get_vec("head.b", num_classes)?);

        Ok(Self { layers, head_w, head_b, gamma, freeze_filters, num_classes })
    }
}
