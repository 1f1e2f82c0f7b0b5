//! Dense encoder, mirrored decoder and sigmoid classifier head with explicit
//! forward and backward passes.
//!
//! Every hidden block is `affine -> batch norm -> activation -> dropout`.
//! The decoder's output block is `affine -> sigmoid` with neither batch norm
//! nor dropout, and so is the classifier head.
//!
//! Training-mode forward passes are pure: they return a [`ForwardTrace`]
//! holding every cache the backward pass needs, the dropout masks that were
//! drawn, and the batch statistics. Running batch-norm statistics change only
//! through [`NetworkParams::commit_batch_stats`].

mod adam;
mod loss;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    loss_classification, loss_entropy, loss_latent_variance, loss_reconstruction, total_loss, LossBreakdown,
    LossWeights, PROB_CLAMP,
};

use crate::error::{ClaireError, Result};
use crate::numerics::{Matrix, RngStream};
use loss::clamp_prob;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;
pub const KEEP_PROBABILITY: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if a >= 0.0 {
                    a
                } else {
                    slope * a
                }
            }
            Activation::Sigmoid => sigmoid(a),
            Activation::Linear => a,
        }
    }

    /// `dh/da` from the pre-activation `a` and the output `h`.
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if a >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => h * (1.0 - h),
            Activation::Linear => 1.0,
        }
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Affine map `h W^T + b` followed by an activation; `W` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(ClaireError::Shape {
                op: "dense_layer",
                left: weights.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weights: Matrix::from_vec(outputs, inputs, data).expect("sized above"),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn affine(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.inputs() {
            return Err(ClaireError::Shape {
                op: "dense_forward",
                left: h.shape(),
                right: self.weights.shape(),
            });
        }
        let mut a = h.matmul_transposed(&self.weights)?;
        for r in 0..a.rows() {
            for (v, b) in a.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(a)
    }
}

/// Affine map and activation, without batch norm or dropout.
pub fn dense_forward(layer: &DenseLayer, h: &Matrix) -> Result<Matrix> {
    let act = layer.activation;
    Ok(layer.affine(h)?.map(|a| act.apply(a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the old running value: `running <- m * running + (1 - m) * batch`.
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn check_width(&self, a: &Matrix) -> Result<()> {
        if a.cols() != self.width() {
            return Err(ClaireError::Shape {
                op: "batchnorm_forward",
                left: a.shape(),
                right: (1, self.width()),
            });
        }
        Ok(())
    }

    /// Population mean and variance per column; needs at least two rows.
    fn batch_stats(&self, a: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if a.rows() < 2 {
            return Err(ClaireError::BatchSize(format!(
                "batch norm in training mode needs at least 2 rows, got {}",
                a.rows()
            )));
        }
        crate::numerics::column_mean_var(a)
    }

    /// Returns `(x_hat, gamma * x_hat + beta, 1 / sqrt(var + eps))`.
    fn normalize(&self, a: &Matrix, mean: &[f64], var: &[f64]) -> (Matrix, Matrix, Vec<f64>) {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut x_hat = a.clone();
        let mut y = a.clone();
        for r in 0..a.rows() {
            let xr = x_hat.row_mut(r);
            for j in 0..xr.len() {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let xr = x_hat.row(r).to_vec();
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = self.gamma[j] * xr[j] + self.beta[j];
            }
        }
        (x_hat, y, inv_std)
    }

    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.width() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * var[j];
        }
    }
}

/// Single-layer batch norm. Training mode normalizes with batch statistics
/// and folds them into the running statistics; inference uses the running
/// statistics only.
pub fn batchnorm_forward(state: &mut BatchNormState, a: &Matrix, training: bool) -> Result<Matrix> {
    state.check_width(a)?;
    if training {
        let (mean, var) = state.batch_stats(a)?;
        let (_, y, _) = state.normalize(a, &mean, &var);
        state.update_running(&mean, &var);
        Ok(y)
    } else {
        let (_, y, _) = state.normalize(a, &state.running_mean, &state.running_var);
        Ok(y)
    }
}

/// One `affine -> [batch norm] -> activation -> [dropout]` stage.
/// `keep_probability == 1` disables dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub dense: DenseLayer,
    pub norm: Option<BatchNormState>,
    pub keep_probability: f64,
}

impl Block {
    fn has_dropout(&self) -> bool {
        self.keep_probability < 1.0
    }
}

/// Where training-mode dropout masks come from.
pub enum MaskSource<'a> {
    Sample(&'a mut RngStream),
    /// Masks recorded by an earlier trace, consumed in order.
    Replay {
        masks: &'a [Matrix],
        next: usize,
    },
}

impl<'a> MaskSource<'a> {
    pub fn replay(masks: &'a [Matrix]) -> Self {
        MaskSource::Replay { masks, next: 0 }
    }

    fn next_mask(&mut self, rows: usize, cols: usize, keep: f64) -> Result<Matrix> {
        match self {
            MaskSource::Sample(rng) => {
                let data = (0..rows * cols)
                    .map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 })
                    .collect();
                Matrix::from_vec(rows, cols, data)
            }
            MaskSource::Replay { masks, next } => {
                let mask = masks
                    .get(*next)
                    .ok_or_else(|| ClaireError::State("dropout mask replay exhausted".into()))?;
                if mask.shape() != (rows, cols) {
                    return Err(ClaireError::Shape {
                        op: "dropout_replay",
                        left: mask.shape(),
                        right: (rows, cols),
                    });
                }
                *next += 1;
                Ok(mask.clone())
            }
        }
    }
}

pub enum Mode<'m, 'a> {
    Inference,
    Training(&'m mut MaskSource<'a>),
}

#[derive(Debug, Clone)]
struct NormCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Backprop cache of one block.
#[derive(Debug, Clone)]
struct BlockCache {
    input: Matrix,
    /// Activation input, i.e. the batch-norm output (or the affine output).
    pre: Matrix,
    activated: Matrix,
    norm: Option<NormCache>,
    mask: Option<Matrix>,
}

fn block_forward(block: &Block, h: &Matrix, mode: &mut Mode) -> Result<(Matrix, Option<BlockCache>)> {
    let a = block.dense.affine(h)?;
    let act = block.dense.activation;
    match mode {
        Mode::Inference => {
            let pre = match &block.norm {
                Some(bn) => bn.normalize(&a, &bn.running_mean, &bn.running_var).1,
                None => a,
            };
            let mut out = pre.map(|v| act.apply(v));
            if block.has_dropout() {
                let p = block.keep_probability;
                out.as_mut_slice().iter_mut().for_each(|v| *v *= p);
            }
            Ok((out, None))
        }
        Mode::Training(masks) => {
            let (pre, norm) = match &block.norm {
                Some(bn) => {
                    let (mean, var) = bn.batch_stats(&a)?;
                    let (x_hat, y, inv_std) = bn.normalize(&a, &mean, &var);
                    (
                        y,
                        Some(NormCache {
                            x_hat,
                            inv_std,
                            mean,
                            var,
                        }),
                    )
                }
                None => (a, None),
            };
            let activated = pre.map(|v| act.apply(v));
            let (out, mask) = if block.has_dropout() {
                let mask = masks.next_mask(activated.rows(), activated.cols(), block.keep_probability)?;
                let mut out = activated.clone();
                out.as_mut_slice()
                    .iter_mut()
                    .zip(mask.as_slice())
                    .for_each(|(v, m)| *v *= m);
                (out, Some(mask))
            } else {
                (activated.clone(), None)
            };
            let cache = BlockCache {
                input: h.clone(),
                pre,
                activated,
                norm,
                mask,
            };
            Ok((out, Some(cache)))
        }
    }
}

fn blocks_forward(blocks: &[Block], x: &Matrix, mode: &mut Mode) -> Result<(Matrix, Vec<BlockCache>)> {
    let mut h = x.clone();
    let mut caches = Vec::new();
    for block in blocks {
        let (out, cache) = block_forward(block, &h, mode)?;
        caches.extend(cache);
        h = out;
    }
    Ok((h, caches))
}

/// Layer widths and regularisation settings of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Encoder hidden widths; the decoder uses them in reverse.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub leaky_slope: f64,
    pub keep_probability: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Architecture {
    /// `d -> 128 -> 64 -> k` with the default regularisation settings.
    pub fn new(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![128, 64],
            latent_dim,
            leaky_slope: LEAKY_SLOPE,
            keep_probability: KEEP_PROBABILITY,
            bn_momentum: BN_MOMENTUM,
            bn_epsilon: BN_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(ClaireError::Config("layer widths must be positive".into()));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(ClaireError::Config(format!(
                "keep probability must lie in (0, 1], got {}",
                self.keep_probability
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(ClaireError::Config(format!(
                "batch-norm momentum must lie in (0, 1), got {}",
                self.bn_momentum
            )));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(ClaireError::Config("batch-norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder: Vec<Block>,
    pub decoder: Vec<Block>,
    pub classifier: DenseLayer,
}

impl NetworkParams {
    pub fn init(arch: &Architecture, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let leaky = Activation::LeakyRelu {
            slope: arch.leaky_slope,
        };
        let hidden_block = |inputs: usize, outputs: usize, rng: &mut RngStream| {
            let mut norm = BatchNormState::new(outputs);
            norm.momentum = arch.bn_momentum;
            norm.epsilon = arch.bn_epsilon;
            Block {
                dense: DenseLayer::xavier(inputs, outputs, leaky, rng),
                norm: Some(norm),
                keep_probability: arch.keep_probability,
            }
        };
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        widths.push(arch.latent_dim);
        let encoder = widths.windows(2).map(|w| hidden_block(w[0], w[1], rng)).collect();
        let back: Vec<usize> = widths.iter().rev().copied().collect();
        let mut decoder: Vec<Block> = back[..back.len() - 1]
            .windows(2)
            .map(|w| hidden_block(w[0], w[1], rng))
            .collect();
        decoder.push(Block {
            dense: DenseLayer::xavier(back[back.len() - 2], arch.input_dim, Activation::Sigmoid, rng),
            norm: None,
            keep_probability: 1.0,
        });
        let classifier = DenseLayer::xavier(arch.latent_dim, 1, Activation::Sigmoid, rng);
        Ok(Self {
            input_dim: arch.input_dim,
            latent_dim: arch.latent_dim,
            encoder,
            decoder,
            classifier,
        })
    }

    /// Checks chaining, mirroring and tensor shapes, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        let widths = |blocks: &[Block]| -> Result<Vec<usize>> {
            let mut w = Vec::new();
            for (i, b) in blocks.iter().enumerate() {
                if b.dense.bias.len() != b.dense.outputs() {
                    return Err(ClaireError::Schema(format!("layer {i}: bias length mismatch")));
                }
                if let Some(bn) = &b.norm {
                    let n = b.dense.outputs();
                    if [
                        bn.gamma.len(),
                        bn.beta.len(),
                        bn.running_mean.len(),
                        bn.running_var.len(),
                    ]
                    .iter()
                    .any(|&l| l != n)
                    {
                        return Err(ClaireError::Schema(format!("layer {i}: batch-norm width mismatch")));
                    }
                    if bn.running_var.iter().any(|&v| v < 0.0) {
                        return Err(ClaireError::Schema("negative running variance".into()));
                    }
                }
                if i == 0 {
                    w.push(b.dense.inputs());
                } else if b.dense.inputs() != *w.last().unwrap() {
                    return Err(ClaireError::Schema(format!("layer {i} does not chain")));
                }
                w.push(b.dense.outputs());
            }
            Ok(w)
        };
        let enc = widths(&self.encoder)?;
        let mut dec = widths(&self.decoder)?;
        dec.reverse();
        if enc.is_empty() || enc != dec {
            return Err(ClaireError::Schema("decoder does not mirror the encoder".into()));
        }
        if enc[0] != self.input_dim || *enc.last().unwrap() != self.latent_dim {
            return Err(ClaireError::Schema(
                "encoder widths disagree with input/latent dims".into(),
            ));
        }
        if self.classifier.inputs() != self.latent_dim || self.classifier.outputs() != 1 {
            return Err(ClaireError::Schema("classifier head must map latent_dim -> 1".into()));
        }
        Ok(())
    }

    /// Every trainable tensor, in the order [`Gradients::tensors`] uses.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in self.encoder.iter().chain(&self.decoder) {
            out.push(b.dense.weights.as_slice());
            out.push(&b.dense.bias);
            if let Some(bn) = &b.norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(self.classifier.weights.as_slice());
        out.push(&self.classifier.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(b.dense.weights.as_mut_slice());
            out.push(&mut b.dense.bias);
            if let Some(bn) = &mut b.norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(self.classifier.weights.as_mut_slice());
        out.push(&mut self.classifier.bias);
        out
    }

    /// Folds a training trace's batch statistics into the running statistics.
    pub fn commit_batch_stats(&mut self, trace: &ForwardTrace) -> Result<()> {
        let caches = trace.caches()?;
        let blocks = self.encoder.iter_mut().chain(self.decoder.iter_mut());
        for (block, cache) in blocks.zip(caches) {
            if let (Some(bn), Some(nc)) = (&mut block.norm, &cache.norm) {
                bn.update_running(&nc.mean, &nc.var);
            }
        }
        Ok(())
    }
}

/// Outputs of a full pass; backprop caches only in training mode.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub z: Matrix,
    pub reconstruction: Matrix,
    pub prediction: Vec<f64>,
    encoder: Option<Vec<BlockCache>>,
    decoder: Option<Vec<BlockCache>>,
}

impl ForwardTrace {
    pub fn is_training(&self) -> bool {
        self.encoder.is_some()
    }

    fn caches(&self) -> Result<impl Iterator<Item = &BlockCache>> {
        match (&self.encoder, &self.decoder) {
            (Some(e), Some(d)) => Ok(e.iter().chain(d)),
            _ => Err(ClaireError::State(
                "backward pass needs a training-mode forward trace".into(),
            )),
        }
    }

    /// Dropout masks in the order a [`MaskSource::Replay`] consumes them.
    pub fn masks(&self) -> Vec<Matrix> {
        self.caches()
            .map(|c| c.filter_map(|b| b.mask.clone()).collect())
            .unwrap_or_default()
    }
}

fn check_input(params: &NetworkParams, x: &Matrix, op: &'static str, width: usize) -> Result<()> {
    if x.cols() != width {
        return Err(ClaireError::Shape {
            op,
            left: x.shape(),
            right: (params.input_dim, params.latent_dim),
        });
    }
    Ok(())
}

/// Encode `x`, decode the code and classify it.
pub fn forward(params: &NetworkParams, x: &Matrix, mode: &mut Mode) -> Result<ForwardTrace> {
    check_input(params, x, "encoder_forward", params.input_dim)?;
    let (z, enc) = blocks_forward(&params.encoder, x, mode)?;
    let (reconstruction, dec) = blocks_forward(&params.decoder, &z, mode)?;
    let prediction = dense_forward(&params.classifier, &z)?.into_vec();
    let training = matches!(mode, Mode::Training(_));
    Ok(ForwardTrace {
        z,
        reconstruction,
        prediction,
        encoder: training.then_some(enc),
        decoder: training.then_some(dec),
    })
}

/// Inference-mode latent codes.
pub fn encoder_forward(params: &NetworkParams, x: &Matrix) -> Result<Matrix> {
    check_input(params, x, "encoder_forward", params.input_dim)?;
    Ok(blocks_forward(&params.encoder, x, &mut Mode::Inference)?.0)
}

/// Inference-mode reconstruction of latent codes.
pub fn decoder_forward(params: &NetworkParams, z: &Matrix) -> Result<Matrix> {
    check_input(params, z, "decoder_forward", params.latent_dim)?;
    Ok(blocks_forward(&params.decoder, z, &mut Mode::Inference)?.0)
}

/// Classifier probabilities for latent codes.
pub fn classifier_forward(params: &NetworkParams, z: &Matrix) -> Result<Vec<f64>> {
    check_input(params, z, "classifier_forward", params.latent_dim)?;
    Ok(dense_forward(&params.classifier, z)?.into_vec())
}

/// Additive Gaussian noise clipped to `[0, 1]`; `noise_std == 0` is the identity.
pub fn corrupt(x: &Matrix, noise_std: f64, rng: &mut RngStream) -> Matrix {
    if noise_std == 0.0 {
        return x.clone();
    }
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v = (*v + noise_std * rng.normal()).clamp(0.0, 1.0);
    }
    out
}

/// Unweighted loss terms of a trace against clean inputs and labels.
pub fn evaluate_losses(trace: &ForwardTrace, x_clean: &Matrix, labels: &[u8]) -> Result<LossBreakdown> {
    Ok(LossBreakdown {
        recon: loss_reconstruction(x_clean, &trace.reconstruction)?,
        latent: loss_latent_variance(&trace.z),
        clf: loss_classification(labels, &trace.prediction)?,
        ent: loss_entropy(&trace.prediction),
    })
}

/// Gradients aligned with [`NetworkParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

struct BlockGrads {
    weights: Matrix,
    bias: Vec<f64>,
    norm: Option<(Vec<f64>, Vec<f64>)>,
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (acc, v) in s.iter_mut().zip(r) {
            *acc += v;
        }
    }
    s
}

fn block_backward(block: &Block, cache: &BlockCache, d_out: &Matrix) -> Result<(Matrix, BlockGrads)> {
    let (n, width) = d_out.shape();
    let act = block.dense.activation;
    let mut d_pre = d_out.clone();
    {
        let dp = d_pre.as_mut_slice();
        if let Some(mask) = &cache.mask {
            dp.iter_mut().zip(mask.as_slice()).for_each(|(g, m)| *g *= m);
        }
        for ((g, &a), &h) in dp.iter_mut().zip(cache.pre.as_slice()).zip(cache.activated.as_slice()) {
            *g *= act.derivative(a, h);
        }
    }
    let (d_affine, norm_grads) = match (&block.norm, &cache.norm) {
        (Some(bn), Some(nc)) => {
            let mut d_gamma = vec![0.0; width];
            let d_beta = column_sums(&d_pre);
            let mut d_xhat = d_pre.clone();
            for r in 0..n {
                let (dy, xh) = (d_pre.row(r), nc.x_hat.row(r));
                for j in 0..width {
                    d_gamma[j] += dy[j] * xh[j];
                }
                for (j, v) in d_xhat.row_mut(r).iter_mut().enumerate() {
                    *v *= bn.gamma[j];
                }
            }
            let sum_dx = column_sums(&d_xhat);
            let mut sum_dx_xhat = vec![0.0; width];
            for r in 0..n {
                for j in 0..width {
                    sum_dx_xhat[j] += d_xhat[(r, j)] * nc.x_hat[(r, j)];
                }
            }
            let nf = n as f64;
            let mut da = d_xhat.clone();
            for r in 0..n {
                let xh = nc.x_hat.row(r).to_vec();
                for (j, v) in da.row_mut(r).iter_mut().enumerate() {
                    *v = nc.inv_std[j] / nf * (nf * *v - sum_dx[j] - xh[j] * sum_dx_xhat[j]);
                }
            }
            (da, Some((d_gamma, d_beta)))
        }
        (None, None) => (d_pre, None),
        _ => return Err(ClaireError::State("batch-norm cache does not match block".into())),
    };
    let grads = BlockGrads {
        weights: d_affine.transposed_matmul(&cache.input)?,
        bias: column_sums(&d_affine),
        norm: norm_grads,
    };
    let d_input = d_affine.matmul(&block.dense.weights)?;
    Ok((d_input, grads))
}

fn blocks_backward(blocks: &[Block], caches: &[BlockCache], d_out: Matrix) -> Result<(Matrix, Vec<BlockGrads>)> {
    let mut d = d_out;
    let mut grads = Vec::with_capacity(blocks.len());
    for (block, cache) in blocks.iter().zip(caches).rev() {
        let (d_in, g) = block_backward(block, cache, &d)?;
        grads.push(g);
        d = d_in;
    }
    grads.reverse();
    Ok((d, grads))
}

/// Gradient of the weighted objective with respect to every trainable
/// tensor, given a training trace computed on the (possibly corrupted)
/// encoder input and the clean reconstruction target `x_clean`.
///
/// The classification and entropy gradients ignore the probability clamp,
/// which only binds once a prediction is saturated to within 1e-12.
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    x_clean: &Matrix,
    labels: &[u8],
    weights: &LossWeights,
) -> Result<Gradients> {
    let (Some(enc), Some(dec)) = (&trace.encoder, &trace.decoder) else {
        return Err(ClaireError::State(
            "backward pass needs a training-mode forward trace".into(),
        ));
    };
    if x_clean.shape() != trace.reconstruction.shape() {
        return Err(ClaireError::Shape {
            op: "backward",
            left: x_clean.shape(),
            right: trace.reconstruction.shape(),
        });
    }
    let (n, k) = trace.z.shape();
    if labels.len() != n {
        return Err(ClaireError::Shape {
            op: "backward",
            left: (labels.len(), 1),
            right: (n, 1),
        });
    }
    let nf = n as f64;

    let mut d_recon = trace.reconstruction.clone();
    for (g, x) in d_recon.as_mut_slice().iter_mut().zip(x_clean.as_slice()) {
        *g = 2.0 * (*g - x) / nf;
    }
    let (mut d_z, dec_grads) = blocks_backward(&params.decoder, dec, d_recon)?;

    let d_logit: Vec<f64> = trace
        .prediction
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let clf = (p - f64::from(y)) / nf;
            let pc = clamp_prob(p);
            let ent = -p * (1.0 - p) * (pc / (1.0 - pc)).ln() / nf;
            weights.alpha * clf + weights.beta * ent
        })
        .collect();
    let d_logit_m = Matrix::from_vec(n, 1, d_logit.clone())?;
    let clf_w = d_logit_m.transposed_matmul(&trace.z)?;
    let clf_b = vec![d_logit.iter().sum::<f64>()];
    let w_c = params.classifier.weights.row(0);

    let mean_z: Vec<f64> = column_sums(&trace.z).iter().map(|s| s / nf).collect();
    let latent_scale = weights.lambda * 2.0 / (nf * k as f64);
    for r in 0..n {
        let zr = trace.z.row(r).to_vec();
        for (j, g) in d_z.row_mut(r).iter_mut().enumerate() {
            *g += d_logit[r] * w_c[j] + latent_scale * (zr[j] - mean_z[j]);
        }
    }
    let (_, enc_grads) = blocks_backward(&params.encoder, enc, d_z)?;

    let mut tensors = Vec::new();
    for g in enc_grads.into_iter().chain(dec_grads) {
        tensors.push(g.weights.into_vec());
        tensors.push(g.bias);
        if let Some((dg, db)) = g.norm {
            tensors.push(dg);
            tensors.push(db);
        }
    }
    tensors.push(clf_w.into_vec());
    tensors.push(clf_b);
    Ok(Gradients { tensors })
}
