//! Dense feed-forward building blocks.
//!
//! Batches are row-major: one sample per row. Layers compute
//! `pre = x · W + b` with `W` shaped `fan_in × fan_out`, then
//! `post = activation(pre)`. Dropout is applied on hidden layers by
//! multiplying with a 0/1 mask during training and by scaling with
//! `1 − p` at inference.

use std::borrow::Cow;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: ArrayView1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Row-wise softmax.
pub fn softmax_rows(z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Copy of `x` with exactly `floor(ratio · len)` distinct positions zeroed.
pub fn corrupt<R: Rng + ?Sized>(x: ArrayView1<f64>, ratio: f64, rng: &mut R) -> Array1<f64> {
    let mut out = x.to_owned();
    let n = out.len();
    let k = corruption_count(n, ratio);
    for i in index::sample(rng, n, k) {
        out[i] = 0.0;
    }
    out
}

pub fn corruption_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).floor() as usize).min(n)
}

/// Applies [`corrupt`] to every row of a batch.
pub fn corrupt_rows<R: Rng + ?Sized>(x: ArrayView2<f64>, ratio: f64, rng: &mut R) -> Array2<f64> {
    let mut out = x.to_owned();
    let k = corruption_count(out.ncols(), ratio);
    if k == 0 {
        return out;
    }
    let n = out.ncols();
    for mut row in out.rows_mut() {
        for i in index::sample(rng, n, k) {
            row[i] = 0.0;
        }
    }
    out
}

/// 0/1 mask where each entry is 0 with probability `p`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
}

pub fn dropout_mask_rows<R: Rng + ?Sized>(rows: usize, n: usize, p: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, n), |_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::ShapeMismatch {
                context: "layer bias",
                expected: weights.ncols(),
                found: bias.len(),
            });
        }
        Ok(Dense {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    /// Uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn pre_activation(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.fan_in() {
            return Err(Error::ShapeMismatch {
                context: "layer input",
                expected: self.fan_in(),
                found: x.ncols(),
            });
        }
        let mut pre = x.dot(&self.weights);
        pre += &self.bias;
        Ok(pre)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Returns `(pre, post)` for a batch.
pub fn dense_forward(layer: &Dense, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let pre = layer.pre_activation(x)?;
    let act = layer.activation;
    let post = pre.mapv(|z| act.apply(z));
    Ok((pre, post))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// p ← p − lr·(g + l2·p) on weights; biases take the plain gradient step.
pub fn sgd_step(layer: &mut Dense, grad: &DenseGrad, lr: f64, l2_coeff: f64) {
    Zip::from(&mut layer.weights)
        .and(&grad.weights)
        .for_each(|w, &g| *w -= lr * (g + l2_coeff * *w));
    layer.bias.scaled_add(-lr, &grad.bias);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Sigmoid output fused with binary cross-entropy; consumes logits.
    BceSigmoid,
    /// Half squared error, `½‖o − t‖²` per sample; consumes outputs.
    Mse,
    /// Softmax fused with cross-entropy; consumes logits.
    SoftmaxXent,
}

impl LossKind {
    pub fn takes_logits(self) -> bool {
        !matches!(self, LossKind::Mse)
    }
}

#[derive(Clone, Debug)]
pub struct LossValue {
    /// Mean over the batch of the per-sample loss.
    pub value: f64,
    /// Gradient of `value` with respect to the loss input.
    pub gradient: Array2<f64>,
}

/// Batch loss and its gradient. For the fused kinds `output` holds logits and
/// the gradient is `(activation(output) − target) / batch`.
pub fn loss(kind: LossKind, output: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<LossValue> {
    if output.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            context: "loss target",
            expected: output.len(),
            found: target.len(),
        });
    }
    let batch = output.nrows().max(1) as f64;
    let (total, gradient) = match kind {
        LossKind::Mse => {
            let diff = &output - &target;
            let total = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
            (total, diff / batch)
        }
        LossKind::BceSigmoid => {
            let mut total = 0.0;
            let mut grad = Array2::zeros(output.dim());
            Zip::from(&mut grad).and(&output).and(&target).for_each(|g, &z, &t| {
                // softplus(z) − t·z, stable for large |z|
                total += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
                *g = (sigmoid(z) - t) / batch;
            });
            (total, grad)
        }
        LossKind::SoftmaxXent => {
            let mut total = 0.0;
            for (z, t) in output.rows().into_iter().zip(target.rows()) {
                let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                total += z.iter().zip(t).map(|(&zj, &tj)| tj * (lse - zj)).sum::<f64>();
            }
            let mut grad = softmax_rows(output);
            grad -= &target;
            grad /= batch;
            (total, grad)
        }
    };
    Ok(LossValue {
        value: total / batch,
        gradient,
    })
}

/// Intermediate values of one training-mode pass.
#[derive(Clone, Debug)]
pub struct ActivationBuffer {
    /// Network input as fed, i.e. after corruption.
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    /// Layer outputs after activation and dropout masking.
    pub post: Vec<Array2<f64>>,
    /// Dropout masks of the hidden layers (`layers.len() − 1` entries).
    pub masks: Vec<Option<Array2<f64>>>,
}

fn check_chain(layers: &[&Dense]) -> Result<()> {
    for pair in layers.windows(2) {
        if pair[0].fan_out() != pair[1].fan_in() {
            return Err(Error::ShapeMismatch {
                context: "layer chain",
                expected: pair[0].fan_out(),
                found: pair[1].fan_in(),
            });
        }
    }
    Ok(())
}

/// Training-mode pass. `masks[k]`, when present, multiplies the output of
/// hidden layer `k`.
pub fn forward_train(
    layers: &[&Dense],
    x: ArrayView2<f64>,
    masks: Vec<Option<Array2<f64>>>,
) -> Result<ActivationBuffer> {
    assert_eq!(masks.len() + 1, layers.len(), "one mask slot per hidden layer");
    let mut pre = Vec::with_capacity(layers.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
    for (k, layer) in layers.iter().enumerate() {
        let input = if k == 0 { x } else { post[k - 1].view() };
        let (z, mut a) = dense_forward(layer, input)?;
        if let Some(Some(mask)) = masks.get(k) {
            a *= mask;
        }
        pre.push(z);
        post.push(a);
    }
    Ok(ActivationBuffer {
        input: x.to_owned(),
        pre,
        post,
        masks,
    })
}

/// Inference pass; the output of layer `k` is multiplied by `scales[k]`.
pub fn forward_scaled(layers: &[&Dense], x: ArrayView2<f64>, scales: &[f64]) -> Result<Array2<f64>> {
    assert_eq!(scales.len(), layers.len());
    let mut current: Cow<'_, Array2<f64>> = Cow::Owned(x.to_owned());
    for (layer, &scale) in layers.iter().zip(scales) {
        let (_, mut a) = dense_forward(layer, current.view())?;
        if scale != 1.0 {
            a *= scale;
        }
        current = Cow::Owned(a);
    }
    Ok(current.into_owned())
}

/// Backpropagates a gradient with respect to the last layer's pre-activation.
pub fn backward(layers: &[&Dense], buf: &ActivationBuffer, grad_last_pre: Array2<f64>) -> Vec<DenseGrad> {
    let mut grads = Vec::with_capacity(layers.len());
    let mut dpre = grad_last_pre;
    for k in (0..layers.len()).rev() {
        let input = if k == 0 { &buf.input } else { &buf.post[k - 1] };
        grads.push(DenseGrad {
            weights: input.t().dot(&dpre),
            bias: dpre.sum_axis(Axis(0)),
        });
        if k > 0 {
            let mut dpost = dpre.dot(&layers[k].weights.t());
            if let Some(mask) = &buf.masks[k - 1] {
                dpost *= mask;
            }
            let act = layers[k - 1].activation;
            Zip::from(&mut dpost)
                .and(&buf.pre[k - 1])
                .for_each(|d, &z| *d *= act.derivative(z));
            dpre = dpost;
        }
    }
    grads.reverse();
    grads
}

/// Loss of a finished pass and its gradient with respect to the last
/// pre-activation.
fn loss_from_buffer(
    layers: &[&Dense],
    buf: &ActivationBuffer,
    target: ArrayView2<f64>,
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    let last = layers.len() - 1;
    if kind.takes_logits() {
        let l = loss(kind, buf.pre[last].view(), target)?;
        Ok((l.value, l.gradient))
    } else {
        let mut l = loss(kind, buf.post[last].view(), target)?;
        let act = layers[last].activation;
        Zip::from(&mut l.gradient)
            .and(&buf.pre[last])
            .for_each(|d, &z| *d *= act.derivative(z));
        Ok((l.value, l.gradient))
    }
}

/// A stack of dense layers trained against one loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub loss: LossKind,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>, loss: LossKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("network needs at least one layer".into()));
        }
        check_chain(&layers.iter().collect::<Vec<_>>())?;
        Ok(Mlp { layers, loss })
    }

    fn refs(&self) -> Vec<&Dense> {
        self.layers.iter().collect()
    }

    pub fn loss_and_grads(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        masks: Vec<Option<Array2<f64>>>,
    ) -> Result<(f64, Vec<DenseGrad>)> {
        let layers = self.refs();
        let buf = forward_train(&layers, x, masks)?;
        let (value, g) = loss_from_buffer(&layers, &buf, target, self.loss)?;
        Ok((value, backward(&layers, &buf, g)))
    }

    /// Inference output (post-activation of the last layer); hidden outputs
    /// are scaled by `hidden_scale`.
    pub fn forward_inference(&self, x: ArrayView2<f64>, hidden_scale: f64) -> Result<Array2<f64>> {
        let mut scales = vec![hidden_scale; self.layers.len()];
        *scales.last_mut().expect("non-empty") = 1.0;
        forward_scaled(&self.refs(), x, &scales)
    }

    pub fn no_masks(&self) -> Vec<Option<Array2<f64>>> {
        vec![None; self.layers.len() - 1]
    }
}

/// Decoder half of an autoencoder layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    Untied(Dense),
    /// Weights are the transpose of the encoder's.
    Tied { bias: Array1<f64>, activation: Activation },
}

/// One autoencoder: the encoder is what the stack keeps, the decoder exists
/// for training.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub encoder: Dense,
    pub decoder: Option<Decoder>,
}

#[derive(Clone, Debug)]
pub struct AutoencoderGrads {
    pub encoder: DenseGrad,
    /// `None` when weights are tied; the decoder's share is folded into
    /// `encoder.weights`.
    pub decoder_weights: Option<Array2<f64>>,
    pub decoder_bias: Array1<f64>,
}

impl LayerParams {
    pub fn autoencoder<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        hidden: Activation,
        output: Activation,
        tied: bool,
        rng: &mut R,
    ) -> Self {
        let encoder = Dense::glorot(fan_in, fan_out, hidden, rng);
        let decoder = if tied {
            Decoder::Tied {
                bias: Array1::zeros(fan_in),
                activation: output,
            }
        } else {
            Decoder::Untied(Dense::glorot(fan_out, fan_in, output, rng))
        };
        LayerParams {
            encoder,
            decoder: Some(decoder),
        }
    }

    pub fn is_tied(&self) -> bool {
        matches!(self.decoder, Some(Decoder::Tied { .. }))
    }

    pub fn decoder_layer(&self) -> Option<Cow<'_, Dense>> {
        match &self.decoder {
            None => None,
            Some(Decoder::Untied(d)) => Some(Cow::Borrowed(d)),
            Some(Decoder::Tied { bias, activation }) => Some(Cow::Owned(Dense {
                weights: self.encoder.weights.t().to_owned(),
                bias: bias.clone(),
                activation: *activation,
            })),
        }
    }

    fn require_decoder(&self) -> Result<Cow<'_, Dense>> {
        self.decoder_layer()
            .ok_or_else(|| Error::InvalidSpec("autoencoder layer has no decoder".into()))
    }

    /// Reconstruction loss of `clean` from `input` (usually a corrupted copy)
    /// with an optional dropout mask on the hidden layer, plus gradients.
    pub fn reconstruction_grads(
        &self,
        input: ArrayView2<f64>,
        clean: ArrayView2<f64>,
        hidden_mask: Option<Array2<f64>>,
        kind: LossKind,
    ) -> Result<(f64, AutoencoderGrads)> {
        let decoder = self.require_decoder()?;
        let layers = [&self.encoder, decoder.as_ref()];
        let buf = forward_train(&layers, input, vec![hidden_mask])?;
        let (value, g) = loss_from_buffer(&layers, &buf, clean, kind)?;
        let mut grads = backward(&layers, &buf, g).into_iter();
        let mut encoder = grads.next().expect("encoder grad");
        let decoder_grad = grads.next().expect("decoder grad");
        let decoder_weights = if self.is_tied() {
            encoder.weights += &decoder_grad.weights.t();
            None
        } else {
            Some(decoder_grad.weights)
        };
        Ok((
            value,
            AutoencoderGrads {
                encoder,
                decoder_weights,
                decoder_bias: decoder_grad.bias,
            },
        ))
    }

    pub fn apply_sgd(&mut self, grads: &AutoencoderGrads, lr: f64, l2_coeff: f64) {
        sgd_step(&mut self.encoder, &grads.encoder, lr, l2_coeff);
        match (&mut self.decoder, &grads.decoder_weights) {
            (Some(Decoder::Untied(d)), Some(w)) => {
                let g = DenseGrad {
                    weights: w.clone(),
                    bias: grads.decoder_bias.clone(),
                };
                sgd_step(d, &g, lr, l2_coeff);
            }
            (Some(Decoder::Tied { bias, .. }), None) => bias.scaled_add(-lr, &grads.decoder_bias),
            _ => unreachable!("gradient layout matches the decoder"),
        }
    }

    /// Inference-mode reconstruction loss: no corruption, hidden output
    /// scaled by `hidden_scale`.
    pub fn inference_loss(&self, x: ArrayView2<f64>, hidden_scale: f64, kind: LossKind) -> Result<f64> {
        let decoder = self.require_decoder()?;
        let mut hidden = dense_forward(&self.encoder, x)?.1;
        hidden *= hidden_scale;
        let (pre, post) = dense_forward(&decoder, hidden.view())?;
        let out = if kind.takes_logits() { pre } else { post };
        Ok(loss(kind, out.view(), x)?.value)
    }
}

/// Training hyper-parameters shared by layer-wise pretraining and fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub noise_ratio: f64,
    pub dropout_prob: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_coeff: f64,
    pub tied_weights: bool,
    /// Hidden-unit nonlinearity.
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            noise_ratio: 0.2,
            dropout_prob: 0.5,
            lr_start: 0.001,
            lr_end: 0.000001,
            epochs: 1000,
            batch_size: 20,
            l2_coeff: 1e-4,
            tied_weights: false,
            activation: Activation::Relu,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return bad(format!("noise_ratio {} outside [0, 1]", self.noise_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob {} outside [0, 1)", self.dropout_prob));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "learning rates must satisfy lr_start >= lr_end > 0 (got {} and {})",
                self.lr_start, self.lr_end
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return bad(format!("l2_coeff {} must be finite and non-negative", self.l2_coeff));
        }
        Ok(())
    }

    pub fn inference_scale(&self) -> f64 {
        1.0 - self.dropout_prob
    }
}

/// Linearly decaying learning rate; `step` runs over `0..total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps <= 1 {
        return cfg.lr_start;
    }
    let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    // endpoints come out exact in this form
    cfg.lr_start * (1.0 - t) + cfg.lr_end * t
}

/// Anything whose parameters can be flattened and differentiated, for
/// finite-difference checking.
pub trait Differentiable: Clone {
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, flat: &[f64]);
    fn loss_and_flat_grad(&self, x: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Vec<f64>)>;
}

fn push_dense(out: &mut Vec<f64>, w: &Array2<f64>, b: &Array1<f64>) {
    out.extend(w.iter());
    out.extend(b.iter());
}

fn fill<'a, D: ndarray::Dimension>(arr: &mut ndarray::Array<f64, D>, src: &mut impl Iterator<Item = &'a f64>) {
    for v in arr.iter_mut() {
        *v = *src.next().expect("flat parameter vector too short");
    }
}

impl Differentiable for Mlp {
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            push_dense(&mut out, &l.weights, &l.bias);
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for l in &mut self.layers {
            fill(&mut l.weights, &mut it);
            fill(&mut l.bias, &mut it);
        }
    }

    fn loss_and_flat_grad(&self, x: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let (value, grads) = self.loss_and_grads(x, target, self.no_masks())?;
        let mut flat = Vec::new();
        for g in &grads {
            push_dense(&mut flat, &g.weights, &g.bias);
        }
        Ok((value, flat))
    }
}

/// The loss used for checking is BCE when the decoder is sigmoid, MSE otherwise.
impl Differentiable for LayerParams {
    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        push_dense(&mut out, &self.encoder.weights, &self.encoder.bias);
        match &self.decoder {
            Some(Decoder::Untied(d)) => push_dense(&mut out, &d.weights, &d.bias),
            Some(Decoder::Tied { bias, .. }) => out.extend(bias.iter()),
            None => {}
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        fill(&mut self.encoder.weights, &mut it);
        fill(&mut self.encoder.bias, &mut it);
        match &mut self.decoder {
            Some(Decoder::Untied(d)) => {
                fill(&mut d.weights, &mut it);
                fill(&mut d.bias, &mut it);
            }
            Some(Decoder::Tied { bias, .. }) => fill(bias, &mut it),
            None => {}
        }
    }

    fn loss_and_flat_grad(&self, x: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let kind = match self.decoder_layer().map(|d| d.activation) {
            Some(Activation::Sigmoid) => LossKind::BceSigmoid,
            _ => LossKind::Mse,
        };
        let (value, g) = self.reconstruction_grads(x, target, None, kind)?;
        let mut flat = Vec::new();
        push_dense(&mut flat, &g.encoder.weights, &g.encoder.bias);
        if let Some(w) = &g.decoder_weights {
            flat.extend(w.iter());
        }
        flat.extend(g.decoder_bias.iter());
        Ok((value, flat))
    }
}

/// Agreement between analytic gradients and central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// `‖a − n‖ / (‖a‖ + ‖n‖)` over the whole parameter vector (0 when both vanish).
    pub relative_error: f64,
    /// Largest per-parameter `|a − n| / max(|a| + |n|, 1e−8)`.
    pub worst_component: f64,
}

/// Compares analytic gradients with central differences of step `eps`.
pub fn gradient_check<N: Differentiable>(
    net: &N,
    x: ArrayView2<f64>,
    target: ArrayView2<f64>,
    eps: f64,
) -> Result<GradientCheck> {
    let (_, analytic) = net.loss_and_flat_grad(x, target)?;
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut params = base.clone();
    let mut worst: f64 = 0.0;
    let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
    for i in 0..base.len() {
        params[i] = base[i] + eps;
        probe.set_flat_params(&params);
        let plus = probe.loss_and_flat_grad(x, target)?.0;
        params[i] = base[i] - eps;
        probe.set_flat_params(&params);
        let minus = probe.loss_and_flat_grad(x, target)?.0;
        params[i] = base[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
        diff_sq += (a - numeric) * (a - numeric);
        a_sq += a * a;
        n_sq += numeric * numeric;
    }
    let denom = a_sq.sqrt() + n_sq.sqrt();
    Ok(GradientCheck {
        relative_error: if denom > 0.0 { diff_sq.sqrt() / denom } else { 0.0 },
        worst_component: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::{array, Array};

    #[test]
    fn relu_examples() {
        assert_eq!(relu(array![1.0, -1.0, 0.0].view()), array![1.0, 0.0, 0.0]);
        assert_eq!(relu(array![-3.0, -0.5].view()), array![0.0, 0.0]);
        let x = array![2.0, -7.0, 0.25];
        assert_eq!(relu(relu(x.view()).view()), relu(x.view()));
    }

    #[test]
    fn corrupt_counts() {
        let mut rng = stream_rng(1, 0);
        let x = Array1::from_elem(20_000, 1.0);
        assert_eq!(corrupt(x.view(), 0.0, &mut rng), x);
        assert!(corrupt(x.view(), 1.0, &mut rng).iter().all(|&v| v == 0.0));
        let c = corrupt(x.view(), 0.2, &mut rng);
        assert_eq!(c.iter().filter(|&&v| v == 0.0).count(), 4000);
        assert_eq!(x.sum(), 20_000.0, "input untouched");
    }

    #[test]
    fn dropout_mask_rates() {
        let mut rng = stream_rng(2, 0);
        assert!(dropout_mask(100, 0.0, &mut rng).iter().all(|&v| v == 1.0));
        let m = dropout_mask(100_000, 0.5, &mut rng);
        let mean = m.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dense_forward_examples() {
        let layer = Dense::new(Array2::eye(2), Array1::zeros(2), Activation::Relu).unwrap();
        let (_, post) = dense_forward(&layer, array![[1.0, -1.0]].view()).unwrap();
        assert_eq!(post, array![[1.0, 0.0]]);

        let layer = Dense::new(Array2::zeros((3, 2)), array![0.5, -2.0], Activation::Linear).unwrap();
        let (_, post) = dense_forward(&layer, Array2::zeros((1, 3)).view()).unwrap();
        assert_eq!(post, array![[0.5, -2.0]]);

        assert!(matches!(
            dense_forward(&layer, Array2::zeros((1, 4)).view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dense_forward_matches_naive_matmul() {
        let mut rng = stream_rng(3, 0);
        let layer = Dense {
            weights: Array::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)),
            bias: Array::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
            activation: Activation::Linear,
        };
        let x = Array::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
        let (pre, _) = dense_forward(&layer, x.view()).unwrap();
        for r in 0..5 {
            for c in 0..4 {
                let mut acc = layer.bias[c];
                for k in 0..3 {
                    acc += x[[r, k]] * layer.weights[[k, c]];
                }
                assert!((pre[[r, c]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_xent_uniform() {
        let z = Array2::zeros((1, 6));
        let mut t = Array2::zeros((1, 6));
        t[[0, 4]] = 1.0;
        let l = loss(LossKind::SoftmaxXent, z.view(), t.view()).unwrap();
        assert!((l.value - 6f64.ln()).abs() < 1e-12);
        let p = softmax_rows(z.view());
        assert!(p.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let x = array![[0.3, -1.0], [2.0, 5.0]];
        let l = loss(LossKind::Mse, x.view(), x.view()).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_shape_mismatch() {
        let a = Array2::zeros((2, 3));
        let b = Array2::zeros((3, 2));
        assert!(matches!(loss(LossKind::Mse, a.view(), b.view()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn fused_softmax_gradient_is_exact() {
        let z = array![[0.1, -2.0, 3.0], [1.0, 1.0, -1.0]];
        let t = array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let l = loss(LossKind::SoftmaxXent, z.view(), t.view()).unwrap();
        let expect = (softmax_rows(z.view()) - &t) / 2.0;
        assert_eq!(l.gradient, expect);
    }

    #[test]
    fn sgd_examples() {
        let mut layer = Dense::new(array![[1.0]], array![0.0], Activation::Linear).unwrap();
        let g = DenseGrad { weights: array![[1.0]], bias: array![0.0] };
        let before = layer.clone();
        sgd_step(&mut layer, &g, 0.0, 0.5);
        assert_eq!(layer, before);
        sgd_step(&mut layer, &g, 0.1, 0.0);
        assert_eq!(layer.weights[[0, 0]], 0.9);

        let zero = DenseGrad { weights: array![[0.0]], bias: array![0.0] };
        let mut l2 = Dense::new(array![[2.0]], array![1.0], Activation::Linear).unwrap();
        sgd_step(&mut l2, &zero, 0.1, 0.0);
        assert_eq!(l2.weights[[0, 0]], 2.0);
        sgd_step(&mut l2, &zero, 0.1, 0.5);
        assert!(l2.weights[[0, 0]] < 2.0);
        assert_eq!(l2.bias[0], 1.0, "bias exempt from L2");
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, 100, &cfg), 0.001);
        assert_eq!(lr_at(99, 100, &cfg), 0.000001);
        assert_eq!(lr_at(5, 11, &cfg), 0.5 * 0.001 + 0.5 * 0.000001);
        assert!((lr_at(5, 11, &cfg) - (0.001 + 0.000001) / 2.0).abs() < 1e-18);
        assert_eq!(lr_at(0, 1, &cfg), 0.001);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.dropout_prob = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr_end = 0.01;
        assert!(c.validate().is_err());
    }

    #[test]
    fn gradient_check_linear_mse() {
        let mut rng = stream_rng(4, 0);
        let net = Mlp::new(vec![Dense::glorot(2, 2, Activation::Linear, &mut rng)], LossKind::Mse).unwrap();
        let x = Array::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let t = Array::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        assert!(gradient_check(&net, x.view(), t.view(), 1e-5).unwrap().worst_component < 1e-8);
    }

    #[test]
    fn zero_batch_has_zero_weight_gradients() {
        let mut rng = stream_rng(5, 0);
        let net = Mlp::new(
            vec![
                Dense::glorot(3, 4, Activation::Relu, &mut rng),
                Dense::glorot(4, 3, Activation::Linear, &mut rng),
            ],
            LossKind::Mse,
        )
        .unwrap();
        let zeros = Array2::zeros((2, 3));
        let (value, grads) = net.loss_and_grads(zeros.view(), zeros.view(), net.no_masks()).unwrap();
        assert_eq!(value, 0.0);
        assert!(grads.iter().all(|g| g.weights.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_check_sigmoid_bce_autoencoder() {
        let mut rng = stream_rng(6, 0);
        for tied in [false, true] {
            let ae = LayerParams::autoencoder(5, 3, Activation::Sigmoid, Activation::Sigmoid, tied, &mut rng);
            let x = Array::from_shape_fn((4, 5), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            let err = gradient_check(&ae, x.view(), x.view(), 1e-5).unwrap().relative_error;
            assert!(err < 1e-6, "tied={tied} err={err}");
        }
    }

    #[test]
    fn tied_decoder_is_transpose() {
        let mut rng = stream_rng(7, 0);
        let ae = LayerParams::autoencoder(4, 2, Activation::Relu, Activation::Linear, true, &mut rng);
        assert_eq!(ae.decoder_layer().unwrap().weights, ae.encoder.weights.t());
    }

    #[test]
    fn masked_backward_zeroes_dropped_units() {
        let mut rng = stream_rng(8, 0);
        let net = Mlp::new(
            vec![
                Dense::glorot(3, 4, Activation::Sigmoid, &mut rng),
                Dense::glorot(4, 2, Activation::Linear, &mut rng),
            ],
            LossKind::Mse,
        )
        .unwrap();
        let x = Array::from_shape_fn((1, 3), |_| rng.random_range(-1.0..1.0));
        let t = Array2::ones((1, 2));
        let mask = array![[1.0, 0.0, 1.0, 0.0]];
        let (_, grads) = net.loss_and_grads(x.view(), t.view(), vec![Some(mask)]).unwrap();
        for c in [1, 3] {
            assert!(grads[0].weights.column(c).iter().all(|&g| g == 0.0));
            assert_eq!(grads[0].bias[c], 0.0);
            assert!(grads[1].weights.row(c).iter().all(|&g| g == 0.0));
        }
    }
}
