use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layered::LayeredVector;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Batchnorm epsilon used when a spec does not state one.
pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Activation(Activation),
    BatchNorm { dim: usize, eps: f64 },
}

/// One clipping/noise unit of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamGroup {
    pub name: String,
    pub len: usize,
}

/// A feed-forward classifier ending in softmax cross-entropy.
///
/// Every dense weight matrix, every dense bias and every batchnorm `(gamma,
/// beta)` pair is a separate layer of the [`LayeredVector`] layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    #[serde(skip)]
    param_index: Vec<Option<usize>>,
    #[serde(skip)]
    groups: Vec<ParamGroup>,
}

impl ModelSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("model input dimension must be positive"));
        }
        let mut dim = input_dim;
        let mut param_index = Vec::with_capacity(layers.len());
        let mut groups = Vec::new();
        let (mut n_dense, mut n_bn) = (0, 0);
        for layer in &layers {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs != dim {
                        return Err(Error::Dimension {
                            context: "dense layer input",
                            expected: dim,
                            actual: inputs,
                        });
                    }
                    if outputs == 0 {
                        return Err(Error::config("dense layer with zero outputs"));
                    }
                    param_index.push(Some(groups.len()));
                    groups.push(ParamGroup {
                        name: format!("dense{n_dense}.weight"),
                        len: inputs * outputs,
                    });
                    groups.push(ParamGroup {
                        name: format!("dense{n_dense}.bias"),
                        len: outputs,
                    });
                    n_dense += 1;
                    dim = outputs;
                }
                LayerSpec::BatchNorm { dim: d, eps } => {
                    if d != dim {
                        return Err(Error::Dimension {
                            context: "batchnorm dimension",
                            expected: dim,
                            actual: d,
                        });
                    }
                    if !(eps >= 0.0) {
                        return Err(Error::config("batchnorm eps must be nonnegative"));
                    }
                    param_index.push(Some(groups.len()));
                    groups.push(ParamGroup {
                        name: format!("bn{n_bn}.affine"),
                        len: 2 * d,
                    });
                    n_bn += 1;
                }
                LayerSpec::Activation(_) => param_index.push(None),
            }
        }
        if n_dense == 0 {
            return Err(Error::config("model needs at least one dense layer"));
        }
        if dim < 2 {
            return Err(Error::config("model output must have at least two classes"));
        }
        Ok(Self {
            input_dim,
            layers,
            param_index,
            groups,
        })
    }

    /// Dense stack `input -> hidden... -> classes`, with optional batchnorm
    /// between each hidden dense layer and its activation.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        activation: Activation,
        batchnorm: bool,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut dim = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                inputs: dim,
                outputs: h,
            });
            if batchnorm {
                layers.push(LayerSpec::BatchNorm {
                    dim: h,
                    eps: DEFAULT_BN_EPS,
                });
            }
            layers.push(LayerSpec::Activation(activation));
            dim = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: dim,
            outputs: num_classes,
        });
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Dense { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn num_param_layers(&self) -> usize {
        self.groups.len()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len).collect()
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.len).sum()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
    }

    fn num_batchnorm(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::BatchNorm { .. }))
            .count()
    }

    pub fn zeros(&self) -> LayeredVector {
        let mut w = LayeredVector::zeros(&self.param_sizes());
        self.reset_batchnorm_affine(&mut w);
        w
    }

    /// Glorot-uniform dense weights, zero biases, unit batchnorm scale.
    pub fn init(&self, seed: u64) -> LayeredVector {
        let mut rng = stream(seed, Purpose::Init, 0);
        let mut w = LayeredVector::zeros(&self.param_sizes());
        for (layer, idx) in self.layers.iter().zip(&self.param_index) {
            if let (LayerSpec::Dense { inputs, outputs }, Some(p)) = (layer, idx) {
                let a = (6.0 / (inputs + outputs) as f64).sqrt();
                for x in w.layer_mut(*p) {
                    *x = rng.random_range(-a..a);
                }
            }
        }
        self.reset_batchnorm_affine(&mut w);
        w
    }

    fn reset_batchnorm_affine(&self, w: &mut LayeredVector) {
        for (layer, idx) in self.layers.iter().zip(&self.param_index) {
            if let (LayerSpec::BatchNorm { dim, .. }, Some(p)) = (layer, idx) {
                w.layer_mut(*p)[..*dim].fill(1.0);
            }
        }
    }

    pub(crate) fn check_weights(&self, weights: &LayeredVector) -> Result<()> {
        if weights.num_layers() != self.groups.len() {
            return Err(Error::Dimension {
                context: "weights layer count",
                expected: self.groups.len(),
                actual: weights.num_layers(),
            });
        }
        for (h, g) in self.groups.iter().enumerate() {
            if weights.layer(h).len() != g.len {
                return Err(Error::Dimension {
                    context: "weights layer length",
                    expected: g.len,
                    actual: weights.layer(h).len(),
                });
            }
        }
        Ok(())
    }
}

/// Inputs (row-major, `len × feature_dim`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, feature_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("batch must contain at least one sample"));
        }
        if inputs.len() != labels.len() * feature_dim {
            return Err(Error::Dimension {
                context: "batch inputs",
                expected: labels.len() * feature_dim,
                actual: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            labels,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// The `i`-th sample as a batch of one.
    pub fn sample(&self, i: usize) -> Batch {
        Batch {
            inputs: self.row(i).to_vec(),
            labels: vec![self.labels[i]],
            feature_dim: self.feature_dim,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "sample index {i} out of range for batch of {}",
                    self.len()
                )));
            }
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, self.feature_dim, labels)
    }
}

/// Row-major `rows × cols` matrix of class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Exponential moving averages of batchnorm statistics for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(model: &ModelSpec) -> Self {
        let dims: Vec<usize> = model
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::BatchNorm { dim, .. } => Some(*dim),
                _ => None,
            })
            .collect();
        Self {
            mean: dims.iter().map(|&d| vec![0.0; d]).collect(),
            var: dims.iter().map(|&d| vec![1.0; d]).collect(),
            momentum: 0.1,
        }
    }

    pub fn update(&mut self, batch_stats: &BatchStats) {
        let m = self.momentum;
        for (k, (mean, var)) in batch_stats.iter().enumerate() {
            for (r, x) in self.mean[k].iter_mut().zip(mean) {
                *r = (1.0 - m) * *r + m * x;
            }
            for (r, x) in self.var[k].iter_mut().zip(var) {
                *r = (1.0 - m) * *r + m * x;
            }
        }
    }
}

/// Per-batchnorm-layer `(mean, population variance)` of one forward pass.
pub type BatchStats = Vec<(Vec<f64>, Vec<f64>)>;

enum Norm<'a> {
    Batch,
    Running(&'a RunningStats),
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct Trace {
    // acts[i] is the input of layer i; acts[layers.len()] holds the logits.
    acts: Vec<Vec<f64>>,
    bn: Vec<Option<BnCache>>,
    stats: BatchStats,
}

fn run_forward(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
    norm: Norm<'_>,
) -> Result<Trace> {
    model.check_weights(weights)?;
    if batch.is_empty() {
        return Err(Error::invalid("forward on an empty batch"));
    }
    if batch.feature_dim() != model.input_dim {
        return Err(Error::Dimension {
            context: "batch feature dimension",
            expected: model.input_dim,
            actual: batch.feature_dim(),
        });
    }
    let classes = model.num_classes();
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let n = batch.len();
    let mut acts = Vec::with_capacity(model.layers.len() + 1);
    let mut bn = Vec::with_capacity(model.layers.len());
    let mut stats = Vec::new();
    acts.push(batch.inputs().to_vec());
    let mut dim = model.input_dim;
    let mut bn_seen = 0;

    for (layer, idx) in model.layers.iter().zip(&model.param_index) {
        let x = acts.last().unwrap();
        let mut cache = None;
        let y = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let p = idx.unwrap();
                let w = weights.layer(p);
                let b = weights.layer(p + 1);
                let mut y = vec![0.0; n * outputs];
                for r in 0..n {
                    let xr = &x[r * inputs..(r + 1) * inputs];
                    let yr = &mut y[r * outputs..(r + 1) * outputs];
                    for (j, out) in yr.iter_mut().enumerate() {
                        *out = dot(xr, &w[j * inputs..(j + 1) * inputs]) + b[j];
                    }
                }
                dim = outputs;
                y
            }
            LayerSpec::Activation(act) => x.iter().map(|&v| act.apply(v)).collect(),
            LayerSpec::BatchNorm { dim: d, eps } => {
                let affine = weights.layer(idx.unwrap());
                let (gamma, beta) = affine.split_at(d);
                let (mean, var) = match norm {
                    Norm::Batch => column_stats(x, n, d),
                    Norm::Running(rs) => (rs.mean[bn_seen].clone(), rs.var[bn_seen].clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = vec![0.0; n * d];
                let mut y = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        let k = r * d + c;
                        xhat[k] = (x[k] - mean[c]) * inv_std[c];
                        y[k] = gamma[c] * xhat[k] + beta[c];
                    }
                }
                stats.push((mean, var));
                cache = Some(BnCache { xhat, inv_std });
                bn_seen += 1;
                y
            }
        };
        bn.push(cache);
        acts.push(y);
    }
    debug_assert_eq!(dim, classes);
    Ok(Trace { acts, bn, stats })
}

fn column_stats(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += x[r * d + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            let dv = x[r * d + c] - mean[c];
            var[c] += dv * dv;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn into_logits(trace: Trace, n: usize, classes: usize) -> Matrix {
    Matrix {
        rows: n,
        cols: classes,
        data: trace.acts.into_iter().last().unwrap(),
    }
}

/// Class scores for `batch`, with batchnorm normalizing over exactly this batch.
pub fn forward(model: &ModelSpec, weights: &LayeredVector, batch: &Batch) -> Result<Matrix> {
    let trace = run_forward(model, weights, batch, Norm::Batch)?;
    Ok(into_logits(trace, batch.len(), model.num_classes()))
}

/// Class scores with batchnorm in evaluation mode (running statistics).
pub fn forward_eval(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
    running: &RunningStats,
) -> Result<Matrix> {
    if running.mean.len() != model.num_batchnorm() {
        return Err(Error::Dimension {
            context: "running statistics",
            expected: model.num_batchnorm(),
            actual: running.mean.len(),
        });
    }
    let trace = run_forward(model, weights, batch, Norm::Running(running))?;
    Ok(into_logits(trace, batch.len(), model.num_classes()))
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy.
pub fn loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.rows {
        return Err(Error::Dimension {
            context: "loss labels",
            expected: logits.rows,
            actual: labels.len(),
        });
    }
    if logits.rows == 0 {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        if y >= row.len() {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok((total / logits.rows as f64).max(0.0))
}

/// Loss, averaged gradient and batch statistics of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct GradOutput {
    pub loss: f64,
    pub grad: LayeredVector,
    pub batch_stats: BatchStats,
}

/// Mean loss and gradient `(1/s) Σ ∇f(w; ξ)` over the batch.
pub fn loss_and_grad(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
) -> Result<GradOutput> {
    let trace = run_forward(model, weights, batch, Norm::Batch)?;
    let n = batch.len();
    let classes = model.num_classes();
    let logits = trace.acts.last().unwrap();

    let mut total = 0.0;
    let mut delta = vec![0.0; n * classes];
    for r in 0..n {
        let row = &logits[r * classes..(r + 1) * classes];
        let p = softmax_row(row);
        let y = batch.labels()[r];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
        for c in 0..classes {
            let target = if c == y { 1.0 } else { 0.0 };
            delta[r * classes + c] = (p[c] - target) / n as f64;
        }
    }

    let mut grad = weights.zeros_like();
    for (i, (layer, idx)) in model
        .layers
        .iter()
        .zip(&model.param_index)
        .enumerate()
        .rev()
    {
        let x = &trace.acts[i];
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let p = idx.unwrap();
                {
                    let gw = grad.layer_mut(p);
                    for r in 0..n {
                        let xr = &x[r * inputs..(r + 1) * inputs];
                        for j in 0..outputs {
                            let d = delta[r * outputs + j];
                            if d != 0.0 {
                                axpy(d, xr, &mut gw[j * inputs..(j + 1) * inputs]);
                            }
                        }
                    }
                }
                {
                    let gb = grad.layer_mut(p + 1);
                    for r in 0..n {
                        for j in 0..outputs {
                            gb[j] += delta[r * outputs + j];
                        }
                    }
                }
                if i > 0 {
                    let w = weights.layer(p);
                    let mut dx = vec![0.0; n * inputs];
                    for r in 0..n {
                        let dxr = &mut dx[r * inputs..(r + 1) * inputs];
                        for j in 0..outputs {
                            let d = delta[r * outputs + j];
                            if d != 0.0 {
                                axpy(d, &w[j * inputs..(j + 1) * inputs], dxr);
                            }
                        }
                    }
                    delta = dx;
                }
            }
            LayerSpec::Activation(act) => {
                let y = &trace.acts[i + 1];
                for k in 0..delta.len() {
                    delta[k] *= act.derivative(x[k], y[k]);
                }
            }
            LayerSpec::BatchNorm { dim: d, .. } => {
                let p = idx.unwrap();
                let cache = trace.bn[i].as_ref().unwrap();
                let gamma = &weights.layer(p)[..d];
                let nf = n as f64;
                let mut dx = vec![0.0; n * d];
                let g = grad.layer_mut(p);
                for c in 0..d {
                    let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                    for r in 0..n {
                        let k = r * d + c;
                        sum_d += delta[k];
                        sum_dx += delta[k] * cache.xhat[k];
                    }
                    g[c] += sum_dx;
                    g[d + c] += sum_d;
                    // dxhat = gamma * delta, folded into the sums below
                    let (s1, s2) = (gamma[c] * sum_d, gamma[c] * sum_dx);
                    for r in 0..n {
                        let k = r * d + c;
                        let dxhat = gamma[c] * delta[k];
                        dx[k] = cache.inv_std[c] / nf * (nf * dxhat - s1 - cache.xhat[k] * s2);
                    }
                }
                delta = dx;
            }
        }
    }

    Ok(GradOutput {
        loss: (total / n as f64).max(0.0),
        grad,
        batch_stats: trace.stats,
    })
}

/// Average gradient over the batch.
pub fn grad_batch(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
) -> Result<LayeredVector> {
    Ok(loss_and_grad(model, weights, batch)?.grad)
}

/// One gradient per sample. Rejected for models with batchnorm.
pub fn grad_per_sample(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
) -> Result<Vec<LayeredVector>> {
    Ok(loss_and_grad_per_sample(model, weights, batch)?
        .into_iter()
        .map(|g| g.grad)
        .collect())
}

pub(crate) fn loss_and_grad_per_sample(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
) -> Result<Vec<GradOutput>> {
    if model.has_batchnorm() {
        return Err(Error::BatchNormPerSample);
    }
    (0..batch.len())
        .map(|i| loss_and_grad(model, weights, &batch.sample(i)))
        .collect()
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if logits.rows == 0 {
        return 0.0;
    }
    let correct = (0..logits.rows)
        .filter(|&r| {
            let row = logits.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best == labels[r]
        })
        .count();
    correct as f64 / logits.rows as f64
}
