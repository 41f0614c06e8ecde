//! Greedy layer-wise training of a denoising-autoencoder stack.
//!
//! Layer `k` is trained as a standalone denoising autoencoder on the
//! inference-mode outputs of the already frozen layers `0..k`. Only the
//! encoders are kept; the stack maps a feature vector to its signature.
//!
//! The first autoencoder reconstructs bits through a sigmoid decoder with
//! binary cross-entropy. Deeper ones reconstruct non-negative ReLU codes
//! through a linear decoder with squared error.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::corpus::FeatureVector;
use crate::error::{Error, Result};
use crate::nncore::{
    corrupt_rows, dropout_mask_rows, forward_scaled, lr_at, Activation, Dense, LayerParams, LossKind,
    TrainConfig,
};
use crate::rng::{stream_rng, DBN_LAYER_STREAM};

const MODEL_MAGIC: &[u8; 13] = b"SIGFORGE-DBN\0";
const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidSpec("architecture needs at least two widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidSpec("layer widths must be positive".into()));
        }
        Ok(Architecture { widths })
    }

    /// 20000-5000-2500-1000-500-250-100-30.
    pub fn paper_scale() -> Self {
        Architecture {
            widths: vec![20_000, 5_000, 2_500, 1_000, 500, 250, 100, 30],
        }
    }

    /// 2000-500-250-100-30, for dictionaries of a few thousand unigrams.
    pub fn desk_scale() -> Self {
        Architecture {
            widths: vec![2_000, 500, 250, 100, 30],
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn signature_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenLayer {
    pub dense: Dense,
    /// Dropout probability used while training; outputs are scaled by
    /// `1 − dropout_prob` at inference.
    pub dropout_prob: f64,
}

impl FrozenLayer {
    pub fn inference_scale(&self) -> f64 {
        1.0 - self.dropout_prob
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub dictionary_sha256: Option<String>,
    pub config: TrainConfig,
}

/// Frozen encoder stack.
#[derive(Clone, Debug, PartialEq)]
pub struct DbnModel {
    layers: Vec<FrozenLayer>,
    pub provenance: Option<Provenance>,
}

impl DbnModel {
    pub fn from_layers(layers: Vec<FrozenLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].dense.fan_out() != pair[1].dense.fan_in() {
                return Err(Error::ShapeMismatch {
                    context: "model layer chain",
                    expected: pair[0].dense.fan_out(),
                    found: pair[1].dense.fan_in(),
                });
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if !l.dense.is_finite() {
                return Err(Error::InvalidSpec(format!("layer {i} has non-finite parameters")));
            }
            if !(0.0..1.0).contains(&l.dropout_prob) {
                return Err(Error::InvalidSpec(format!("layer {i} dropout {} outside [0, 1)", l.dropout_prob)));
            }
        }
        Ok(DbnModel {
            layers,
            provenance: None,
        })
    }

    pub fn layers(&self) -> &[FrozenLayer] {
        &self.layers
    }

    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![self.layers[0].dense.fan_in()];
        widths.extend(self.layers.iter().map(|l| l.dense.fan_out()));
        Architecture { widths }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].dense.fan_in()
    }

    pub fn signature_width(&self) -> usize {
        self.layers.last().expect("non-empty").dense.fan_out()
    }

    /// Inference pass over a batch of rows.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                context: "model input",
                expected: self.input_width(),
                found: x.ncols(),
            });
        }
        let layers: Vec<&Dense> = self.layers.iter().map(|l| &l.dense).collect();
        let scales: Vec<f64> = self.layers.iter().map(FrozenLayer::inference_scale).collect();
        forward_scaled(&layers, x, &scales)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    /// Little-endian binary image with a trailing CRC32 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_params: usize = self.layers.iter().map(|l| l.dense.weights.len() + l.dense.bias.len()).sum();
        let mut buf = Vec::with_capacity(32 + 17 * self.layers.len() + 8 * n_params);
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.dense.fan_in() as u32).to_le_bytes());
            buf.extend_from_slice(&(l.dense.fan_out() as u32).to_le_bytes());
            buf.push(l.dense.activation.code());
            buf.extend_from_slice(&l.dropout_prob.to_le_bytes());
            for v in l.dense.weights.iter().chain(l.dense.bias.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::format("model file", detail);
        if bytes.len() < MODEL_MAGIC.len() + 12 {
            return Err(bad("truncated"));
        }
        let (payload, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(bad("CRC32 mismatch"));
        }
        let mut cur = Cursor { bytes: payload, pos: 0 };
        if cur.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n_layers = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let fan_in = cur.u32()? as usize;
            let fan_out = cur.u32()? as usize;
            let activation = Activation::from_code(cur.take(1)?[0]).ok_or_else(|| bad("unknown activation"))?;
            let dropout_prob = cur.f64()?;
            let n_weights = fan_in.checked_mul(fan_out).ok_or_else(|| bad("layer too large"))?;
            let weights = cur.f64s(n_weights)?;
            let bias = cur.f64s(fan_out)?;
            let weights = Array2::from_shape_vec((fan_in, fan_out), weights).map_err(|e| bad(&e.to_string()))?;
            layers.push(FrozenLayer {
                dense: Dense::new(weights, bias.into(), activation)?,
                dropout_prob,
            });
        }
        if cur.pos != payload.len() {
            return Err(bad("trailing bytes"));
        }
        DbnModel::from_layers(layers)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("model file", "truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("model file", "layer too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Loss statistics for one epoch of one layer; epoch 0 is the untrained state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub layer: usize,
    pub epoch: usize,
    /// Inference-mode reconstruction loss on the monitoring rows.
    pub loss: f64,
}

/// A trained autoencoder with its decoder and loss history.
#[derive(Clone, Debug)]
pub struct TrainedLayer {
    pub params: LayerParams,
    pub loss_kind: LossKind,
    /// Monitoring loss per epoch, index 0 before any update.
    pub history: Vec<f64>,
    /// Inference-mode reconstruction loss over the training rows, before and after.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
}

pub fn reconstruction_loss_kind(layer_index: usize) -> (LossKind, Activation) {
    if layer_index == 0 {
        (LossKind::BceSigmoid, Activation::Sigmoid)
    } else {
        (LossKind::Mse, Activation::Linear)
    }
}

pub fn train_layer(inputs: ArrayView2<f64>, fan_out: usize, cfg: &TrainConfig, layer_index: usize) -> Result<TrainedLayer> {
    train_layer_with_progress(inputs, fan_out, cfg, layer_index, &mut |_| {})
}

/// Trains one denoising autoencoder. With ten or more rows, every tenth row
/// (index ≡ 9 mod 10) is held out for the per-epoch loss and never trained on.
pub fn train_layer_with_progress(
    inputs: ArrayView2<f64>,
    fan_out: usize,
    cfg: &TrainConfig,
    layer_index: usize,
    on_epoch: &mut dyn FnMut(EpochLoss),
) -> Result<TrainedLayer> {
    cfg.validate()?;
    if inputs.nrows() == 0 || inputs.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    if fan_out == 0 {
        return Err(Error::InvalidSpec("fan_out must be positive".into()));
    }
    let (kind, output_activation) = reconstruction_loss_kind(layer_index);
    let mut rng = stream_rng(cfg.seed, DBN_LAYER_STREAM + layer_index as u64);
    let mut params = LayerParams::autoencoder(
        inputs.ncols(),
        fan_out,
        cfg.activation,
        output_activation,
        cfg.tied_weights,
        &mut rng,
    );

    let n = inputs.nrows();
    let (train_idx, monitor_idx): (Vec<usize>, Vec<usize>) = if n >= 10 {
        (0..n).partition(|i| i % 10 != 9)
    } else {
        ((0..n).collect(), (0..n).collect())
    };
    let train_rows = inputs.select(Axis(0), &train_idx);
    let monitor = inputs.select(Axis(0), &monitor_idx);
    let scale = cfg.inference_scale();

    let check = |loss: f64, epoch: usize| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFiniteLoss {
                layer: layer_index,
                epoch,
            })
        }
    };

    let initial_train_loss = check(params.inference_loss(train_rows.view(), scale, kind)?, 0)?;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let initial = check(params.inference_loss(monitor.view(), scale, kind)?, 0)?;
    history.push(initial);
    on_epoch(EpochLoss {
        layer: layer_index,
        epoch: 0,
        loss: initial,
    });

    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let clean = train_rows.select(Axis(0), chunk);
            let noisy = corrupt_rows(clean.view(), cfg.noise_ratio, &mut rng);
            let mask = (cfg.dropout_prob > 0.0)
                .then(|| dropout_mask_rows(chunk.len(), fan_out, cfg.dropout_prob, &mut rng));
            let (loss, grads) = params.reconstruction_grads(noisy.view(), clean.view(), mask, kind)?;
            check(loss, epoch)?;
            params.apply_sgd(&grads, lr_at(step, total_steps, cfg), cfg.l2_coeff);
            step += 1;
        }
        let loss = check(params.inference_loss(monitor.view(), scale, kind)?, epoch)?;
        history.push(loss);
        on_epoch(EpochLoss {
            layer: layer_index,
            epoch,
            loss,
        });
    }
    let final_train_loss = check(params.inference_loss(train_rows.view(), scale, kind)?, cfg.epochs)?;
    Ok(TrainedLayer {
        params,
        loss_kind: kind,
        history,
        initial_train_loss,
        final_train_loss,
    })
}

/// Dense 0/1 matrix of feature vectors, one row per vector.
pub fn feature_matrix(features: &[FeatureVector]) -> Result<Array2<f64>> {
    let width = features.first().map_or(0, FeatureVector::len);
    let mut x = Array2::zeros((features.len(), width));
    for (mut row, f) in x.rows_mut().into_iter().zip(features) {
        if f.len() != width {
            return Err(Error::ShapeMismatch {
                context: "feature vector width",
                expected: width,
                found: f.len(),
            });
        }
        for i in f.set_indices() {
            row[i] = 1.0;
        }
    }
    Ok(x)
}

pub fn train_dbn(features: &[FeatureVector], arch: &Architecture, cfg: &TrainConfig) -> Result<DbnModel> {
    Ok(train_dbn_with_progress(features, arch, cfg, &mut |_| {})?.0)
}

/// Trains the whole stack and returns the frozen model with each layer's
/// training record, decoders included. Labels are never read.
pub fn train_dbn_with_progress(
    features: &[FeatureVector],
    arch: &Architecture,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(EpochLoss),
) -> Result<(DbnModel, Vec<TrainedLayer>)> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    let x = feature_matrix(features)?;
    if x.ncols() != arch.input_width() {
        return Err(Error::ShapeMismatch {
            context: "architecture input width",
            expected: arch.input_width(),
            found: x.ncols(),
        });
    }
    let widths = arch.widths();
    let mut frozen = Vec::with_capacity(arch.n_layers());
    let mut records = Vec::with_capacity(arch.n_layers());
    let mut current = x;
    for k in 0..arch.n_layers() {
        let trained = train_layer_with_progress(current.view(), widths[k + 1], cfg, k, on_epoch)?;
        let layer = FrozenLayer {
            dense: trained.params.encoder.clone(),
            dropout_prob: cfg.dropout_prob,
        };
        if k + 1 < arch.n_layers() {
            current = forward_scaled(&[&layer.dense], current.view(), &[layer.inference_scale()])?;
        }
        frozen.push(layer);
        records.push(trained);
    }
    let mut model = DbnModel::from_layers(frozen)?;
    model.provenance = Some(Provenance {
        dictionary_sha256: None,
        config: cfg.clone(),
    });
    Ok((model, records))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    pub sample_id: String,
    pub values: Vec<f64>,
    pub label: Option<String>,
}

pub fn encode_signature(model: &DbnModel, x: &FeatureVector) -> Result<Signature> {
    let row = Array2::from_shape_vec((1, x.len()), x.to_f64()).expect("row shape");
    let out = model.encode_batch(row.view())?;
    Ok(Signature {
        sample_id: x.sample_id.clone(),
        values: out.into_raw_vec_and_offset().0,
        label: x.label.clone(),
    })
}

pub fn sign_corpus(model: &DbnModel, features: &[FeatureVector]) -> Result<Vec<Signature>> {
    features.iter().map(|f| encode_signature(model, f)).collect()
}

fn csv_field_ok(s: &str) -> bool {
    !s.is_empty() && !s.contains([',', '"', '\n', '\r'])
}

/// CSV with header `sample_id,label,v0,...` and 17 significant digits per value.
pub fn write_signatures<W: Write>(mut w: W, signatures: &[Signature]) -> std::io::Result<()> {
    let width = signatures.first().map_or(0, |s| s.values.len());
    write!(w, "sample_id,label")?;
    for i in 0..width {
        write!(w, ",v{i}")?;
    }
    writeln!(w)?;
    for s in signatures {
        let label = s.label.as_deref().unwrap_or("-");
        if !csv_field_ok(&s.sample_id) || !csv_field_ok(label) || s.values.len() != width {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("signature `{}` cannot be written as CSV", s.sample_id),
            ));
        }
        write!(w, "{},{}", s.sample_id, label)?;
        for v in &s.values {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_signatures<R: BufRead>(r: R) -> Result<Vec<Signature>> {
    let bad = |detail: String| Error::format("signature file", detail);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "sample_id" || cols[1] != "label" {
        return Err(bad(format!("bad header `{header}`")));
    }
    let width = cols.len() - 2;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 2 {
            return Err(bad(format!("line {} has {} fields", lineno + 2, fields.len())));
        }
        let values = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad value `{f}` on line {}", lineno + 2))))
            .collect::<Result<Vec<_>>>()?;
        out.push(Signature {
            sample_id: fields[0].to_owned(),
            label: (fields[1] != "-").then(|| fields[1].to_owned()),
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn one_hot_rows(n: usize) -> Array2<f64> {
        Array2::eye(n)
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr_start: 0.05,
            lr_end: 0.001,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_lowers_reconstruction_loss() {
        let x = one_hot_rows(8);
        let layer = train_layer(x.view(), 4, &quick_cfg(200), 0).unwrap();
        assert_eq!(layer.loss_kind, LossKind::BceSigmoid);
        assert_eq!(layer.history.len(), 201);
        assert!(layer.history[200] < layer.history[0]);
        assert!(layer.final_train_loss < layer.initial_train_loss);
    }

    #[test]
    fn identity_is_learnable_without_noise() {
        let x = one_hot_rows(4);
        let cfg = TrainConfig {
            noise_ratio: 0.0,
            dropout_prob: 0.0,
            activation: Activation::Linear,
            epochs: 3000,
            batch_size: 4,
            lr_start: 0.5,
            lr_end: 0.05,
            l2_coeff: 0.0,
            ..TrainConfig::default()
        };
        let layer = train_layer(x.view(), 6, &cfg, 1).unwrap();
        assert_eq!(layer.loss_kind, LossKind::Mse);
        assert!(layer.final_train_loss < 1e-3, "loss {}", layer.final_train_loss);
    }

    #[test]
    fn empty_input_is_rejected() {
        let x = Array2::<f64>::zeros((0, 3));
        assert!(matches!(train_layer(x.view(), 2, &quick_cfg(1), 0), Err(Error::EmptyInput)));
    }

    #[test]
    fn divergence_is_reported() {
        let x = Array2::from_elem((4, 3), 1e200);
        let err = train_layer(x.view(), 2, &quick_cfg(2), 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { layer: 1, .. }), "{err}");
    }

    fn fv(id: &str, bits: Vec<bool>) -> FeatureVector {
        FeatureVector {
            sample_id: id.into(),
            bits,
            label: Some("a".into()),
        }
    }

    #[test]
    fn single_layer_stack_equals_train_layer() {
        let feats: Vec<_> = (0..8).map(|i| fv(&format!("s{i}"), (0..8).map(|j| j == i).collect())).collect();
        let cfg = quick_cfg(20);
        let model = train_dbn(&feats, &Architecture::new(vec![8, 4]).unwrap(), &cfg).unwrap();
        let direct = train_layer(one_hot_rows(8).view(), 4, &cfg, 0).unwrap();
        assert_eq!(model.layers().len(), 1);
        assert_eq!(model.layers()[0].dense, direct.params.encoder);
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(vec![5]).is_err());
        assert!(Architecture::new(vec![5, 0]).is_err());
        assert!(Architecture::new(vec![4, 8, 2]).is_ok(), "wider hidden layers are allowed");
        assert_eq!(Architecture::paper_scale().n_layers(), 7);
        assert_eq!(Architecture::desk_scale().signature_width(), 30);
    }

    fn zero_bias_model() -> DbnModel {
        let mut layers = Vec::new();
        for (i, o) in [(6, 4), (4, 3)] {
            let w = Array2::from_shape_fn((i, o), |(r, c)| ((r * 7 + c * 3) % 5) as f64 - 2.0);
            layers.push(FrozenLayer {
                dense: Dense::new(w, Array1::zeros(o), Activation::Relu).unwrap(),
                dropout_prob: 0.5,
            });
        }
        DbnModel::from_layers(layers).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_signature() {
        let model = zero_bias_model();
        let s = encode_signature(&model, &fv("z", vec![false; 6])).unwrap();
        assert_eq!(s.values, vec![0.0; 3]);
        assert!(matches!(
            encode_signature(&model, &fv("w", vec![false; 5])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_dropout_means_raw_forward() {
        let mut model = zero_bias_model();
        let x = fv("x", vec![true, false, true, true, false, true]);
        let halved = encode_signature(&model, &x).unwrap();
        for l in &mut model.layers {
            l.dropout_prob = 0.0;
        }
        let raw = encode_signature(&model, &x).unwrap();
        let layers: Vec<&Dense> = model.layers.iter().map(|l| &l.dense).collect();
        let row = Array2::from_shape_vec((1, 6), x.to_f64()).unwrap();
        let direct = forward_scaled(&layers, row.view(), &[1.0, 1.0]).unwrap();
        assert_eq!(raw.values, direct.row(0).to_vec());
        // two halvings through ReLU layers with zero bias
        for (h, r) in halved.values.iter().zip(&raw.values) {
            assert_eq!(*h, r * 0.25);
        }
    }

    #[test]
    fn sign_corpus_preserves_order() {
        let model = zero_bias_model();
        assert!(sign_corpus(&model, &[]).unwrap().is_empty());
        let a = fv("a", vec![true, false, false, true, false, true]);
        let b = fv("b", vec![false, true, true, false, true, false]);
        let ab = sign_corpus(&model, &[a.clone(), b.clone()]).unwrap();
        let ba = sign_corpus(&model, &[b, a]).unwrap();
        assert_eq!(ab[0], ba[1]);
        assert_eq!(ab[1], ba[0]);
    }

    #[test]
    fn model_bytes_round_trip_and_corruption() {
        let model = zero_bias_model();
        let bytes = model.to_bytes();
        assert!(bytes.starts_with(b"SIGFORGE-DBN\0"));
        let back = DbnModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(DbnModel::from_bytes(&flipped).is_err());
        assert!(DbnModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn signature_csv_round_trip() {
        let sigs = vec![
            Signature { sample_id: "a".into(), values: vec![0.1, 1.0 / 3.0, 0.0], label: Some("x".into()) },
            Signature { sample_id: "b".into(), values: vec![1e-300, 2.5e10, f64::MIN_POSITIVE], label: None },
        ];
        let mut buf = Vec::new();
        write_signatures(&mut buf, &sigs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,label,v0,v1,v2\n"));
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(read_signatures(&buf[..]).unwrap(), sigs);
    }
}
