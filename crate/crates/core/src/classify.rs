//! Signature quality checks: nearest neighbour and linear SVM on signatures,
//! softmax fine-tuning of the whole stack, and accuracy reporting.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use crate::corpus::FeatureVector;
use crate::dbn::{feature_matrix, DbnModel, Signature};
use crate::error::{Error, Result};
use crate::nncore::{
    corrupt_rows, dropout_mask_rows, sgd_step, softmax_rows, Activation, Dense, LossKind, Mlp, TrainConfig,
};
use crate::rng::{stream_rng, FINETUNE_STREAM, SVM_STREAM};

/// Equal-width vectors with a class per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVectorSet {
    vectors: Array2<f64>,
    labels: Vec<usize>,
    class_index: Vec<String>,
}

impl LabeledVectorSet {
    /// Classes are the sorted distinct labels.
    pub fn new(vectors: Array2<f64>, labels: &[String]) -> Result<Self> {
        let classes: BTreeSet<&String> = labels.iter().collect();
        let class_index = classes.into_iter().cloned().collect();
        Self::with_classes(vectors, labels, class_index)
    }

    pub fn with_classes(vectors: Array2<f64>, labels: &[String], class_index: Vec<String>) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: vectors.nrows(),
                right: labels.len(),
            });
        }
        let labels = labels
            .iter()
            .map(|l| {
                class_index
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::InvalidSpec(format!("label `{l}` not in class list")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledVectorSet {
            vectors,
            labels,
            class_index,
        })
    }

    pub fn from_signatures(signatures: &[Signature]) -> Result<Self> {
        let width = signatures.first().map_or(0, |s| s.values.len());
        let mut vectors = Array2::zeros((signatures.len(), width));
        let mut labels = Vec::with_capacity(signatures.len());
        for (mut row, s) in vectors.rows_mut().into_iter().zip(signatures) {
            if s.values.len() != width {
                return Err(Error::ShapeMismatch {
                    context: "signature width",
                    expected: width,
                    found: s.values.len(),
                });
            }
            row.assign(&ArrayView1::from(&s.values));
            labels.push(s.label.clone().ok_or_else(|| Error::Unlabeled(s.sample_id.clone()))?);
        }
        Self::new(vectors, &labels)
    }

    pub fn from_features(features: &[FeatureVector]) -> Result<Self> {
        let labels = features
            .iter()
            .map(|f| f.label.clone().ok_or_else(|| Error::Unlabeled(f.sample_id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(feature_matrix(features)?, &labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn class_index(&self) -> &[String] {
        &self.class_index
    }

    pub fn label_index(&self, row: usize) -> usize {
        self.labels[row]
    }

    pub fn label(&self, row: usize) -> &str {
        &self.class_index[self.labels[row]]
    }
}

fn squared_distance(a: ArrayView1<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority label among the `k` nearest training vectors (Euclidean).
///
/// Equal distances rank by training index; a tied vote goes to the class of
/// the nearest neighbour among the tied classes.
pub fn knn_classify<'a>(train: &'a LabeledVectorSet, query: &[f64], k: usize) -> Result<&'a str> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if k == 0 {
        return Err(Error::InvalidSpec("k must be at least 1".into()));
    }
    if query.len() != train.width() {
        return Err(Error::ShapeMismatch {
            context: "k-NN query",
            expected: train.width(),
            found: query.len(),
        });
    }
    let mut ranked: Vec<(f64, usize)> = train
        .vectors
        .rows()
        .into_iter()
        .map(|row| squared_distance(row, query))
        .zip(0..)
        .collect();
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let neighbours = &ranked[..k.min(ranked.len())];
    let mut votes = vec![0usize; train.class_index.len()];
    for &(_, i) in neighbours {
        votes[train.labels[i]] += 1;
    }
    let best = *votes.iter().max().expect("at least one class");
    let winner = neighbours
        .iter()
        .map(|&(_, i)| train.labels[i])
        .find(|&c| votes[c] == best)
        .expect("some neighbour holds the top vote");
    Ok(&train.class_index[winner])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmParams {
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            epochs: 50,
            lambda: 1e-4,
            seed: 42,
        }
    }
}

/// One-vs-rest linear SVM over standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    classes: Vec<String>,
    weights: Array2<f64>,
    bias: Array1<f64>,
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl LinearSvm {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    fn standardize(&self, x: &[f64]) -> Array1<f64> {
        Array1::from_shape_fn(x.len(), |j| (x[j] - self.mean[j]) / self.scale[j])
    }

    /// `w_c · x + b_c` for every class.
    pub fn scores(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                context: "SVM input",
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        Ok(self.weights.dot(&self.standardize(x)) + &self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<&str> {
        let scores = self.scores(x)?;
        Ok(&self.classes[argmax(scores.view())])
    }
}

/// First index of the maximum.
fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Hinge-loss subgradient descent per class with step `1 / (1 + λt)`; the
/// regularizer shrinks the weights but not the bias.
pub fn train_linear_svm(train: &LabeledVectorSet, params: &SvmParams) -> Result<LinearSvm> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n_classes = train.class_index.len();
    if n_classes < 2 {
        return Err(Error::SingleClass(n_classes));
    }
    if !(params.lambda > 0.0 && params.lambda.is_finite()) {
        return Err(Error::InvalidSpec(format!("lambda {} must be positive", params.lambda)));
    }
    let x = &train.vectors;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let xs = (x - &mean) / &scale;

    let dim = train.width();
    let mut weights = Array2::<f64>::zeros((n_classes, dim));
    let mut bias = Array1::<f64>::zeros(n_classes);
    let mut rng = stream_rng(params.seed, SVM_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut t = 0usize;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (1.0 + params.lambda * t as f64);
            let row = xs.row(i);
            for c in 0..n_classes {
                let y = if train.labels[i] == c { 1.0 } else { -1.0 };
                let mut w = weights.row_mut(c);
                let margin = y * (w.dot(&row) + bias[c]);
                w *= 1.0 - eta * params.lambda;
                if margin < 1.0 {
                    w.scaled_add(eta * y, &row);
                    bias[c] += eta * y;
                }
            }
        }
    }
    Ok(LinearSvm {
        classes: train.class_index.clone(),
        weights,
        bias,
        mean,
        scale,
    })
}

/// Pretrained stack plus a softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedNet {
    pub network: Mlp,
    pub dropout_prob: f64,
    pub classes: Vec<String>,
}

impl SupervisedNet {
    /// Hidden layers initialized from `dbn`, zero output layer.
    pub fn from_dbn(dbn: &DbnModel, classes: Vec<String>, dropout_prob: f64) -> Result<Self> {
        let mut layers: Vec<Dense> = dbn.layers().iter().map(|l| l.dense.clone()).collect();
        layers.push(Dense::zeros(dbn.signature_width(), classes.len(), Activation::Linear));
        Ok(SupervisedNet {
            network: Mlp::new(layers, LossKind::SoftmaxXent)?,
            dropout_prob,
            classes,
        })
    }

    pub fn hidden_layers(&self) -> &[Dense] {
        &self.network.layers[..self.network.layers.len() - 1]
    }

    pub fn input_width(&self) -> usize {
        self.network.layers[0].fan_in()
    }

    /// Class probabilities for a batch of rows, inference mode.
    pub fn probabilities(&self, x: ndarray::ArrayView2<f64>) -> Result<Array2<f64>> {
        let logits = self.network.forward_inference(x, 1.0 - self.dropout_prob)?;
        Ok(softmax_rows(logits.view()))
    }
}

pub fn fine_tune(dbn: &DbnModel, train: &LabeledVectorSet, cfg: &TrainConfig) -> Result<SupervisedNet> {
    fine_tune_with_progress(dbn, train, cfg, &mut |_, _| {})
}

/// Supervised training of every layer with cross-entropy, input zero-masking,
/// dropout on each hidden layer, and a constant learning rate `lr_start`.
/// `on_epoch` receives the epoch number and mean training loss.
pub fn fine_tune_with_progress(
    dbn: &DbnModel,
    train: &LabeledVectorSet,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<SupervisedNet> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if train.width() != dbn.input_width() {
        return Err(Error::ShapeMismatch {
            context: "fine-tuning input",
            expected: dbn.input_width(),
            found: train.width(),
        });
    }
    let mut net = SupervisedNet::from_dbn(dbn, train.class_index.clone(), cfg.dropout_prob)?;
    let n_classes = net.classes.len();
    let mut targets = Array2::<f64>::zeros((train.len(), n_classes));
    for (i, &c) in train.labels.iter().enumerate() {
        targets[[i, c]] = 1.0;
    }
    let mut rng = stream_rng(cfg.seed, FINETUNE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let hidden_widths: Vec<usize> = net.hidden_layers().iter().map(Dense::fan_out).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = train.vectors.select(Axis(0), chunk);
            let x = corrupt_rows(clean.view(), cfg.noise_ratio, &mut rng);
            let t = targets.select(Axis(0), chunk);
            let masks = hidden_widths
                .iter()
                .map(|&w| (cfg.dropout_prob > 0.0).then(|| dropout_mask_rows(chunk.len(), w, cfg.dropout_prob, &mut rng)))
                .collect();
            let (loss, grads) = net.network.loss_and_grads(x.view(), t.view(), masks)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    layer: net.network.layers.len() - 1,
                    epoch,
                });
            }
            total += loss * chunk.len() as f64;
            for (layer, g) in net.network.layers.iter_mut().zip(&grads) {
                sgd_step(layer, g, cfg.lr_start, cfg.l2_coeff);
            }
        }
        on_epoch(epoch, total / train.len() as f64);
    }
    Ok(net)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: String,
    pub probabilities: Vec<f64>,
}

pub fn predict(net: &SupervisedNet, x: &FeatureVector) -> Result<Prediction> {
    if x.len() != net.input_width() {
        return Err(Error::ShapeMismatch {
            context: "prediction input",
            expected: net.input_width(),
            found: x.len(),
        });
    }
    let row = Array2::from_shape_vec((1, x.len()), x.to_f64()).expect("row shape");
    let probs = net.probabilities(row.view())?;
    let probs = probs.row(0);
    Ok(Prediction {
        class: net.classes[argmax(probs)].clone(),
        probabilities: probs.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<String>,
    /// Correct over total; 0 for an empty evaluation.
    pub accuracy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes that never occur in the ground truth.
    pub per_class_recall: Vec<Option<f64>>,
}

pub fn evaluate<S: AsRef<str>>(predictions: &[S], truth: &[S]) -> Result<EvalReport> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    let classes: Vec<String> = predictions
        .iter()
        .chain(truth)
        .map(|s| s.as_ref())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    let pos = |s: &str| classes.binary_search_by(|c| c.as_str().cmp(s)).expect("class collected above");
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut correct = 0usize;
    for (p, t) in predictions.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        confusion[pos(t)][pos(p)] += 1;
        correct += usize::from(p == t);
    }
    let accuracy = if truth.is_empty() {
        0.0
    } else {
        correct as f64 / truth.len() as f64
    };
    let per_class_recall = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    Ok(EvalReport {
        classes,
        accuracy,
        confusion,
        per_class_recall,
    })
}

impl EvalReport {
    /// `accuracy=<4 decimals>` followed by the confusion table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy={:.4}", self.accuracy);
        let width = self.classes.iter().map(String::len).max().unwrap_or(0).max(10);
        let _ = write!(out, "{:<width$}", "truth\\pred");
        for c in &self.classes {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(out, "{c:<width$}");
            for n in row {
                let _ = write!(out, " {n:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionRow {
    pub sample_id: String,
    pub predicted: String,
    pub truth: String,
}

pub fn write_predictions<W: Write>(mut w: W, rows: &[PredictionRow]) -> std::io::Result<()> {
    writeln!(w, "sample_id,predicted,truth")?;
    for r in rows {
        for field in [&r.sample_id, &r.predicted, &r.truth] {
            if field.is_empty() || field.contains([',', '\n', '\r', '"']) {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("field `{field}` cannot be written as CSV"),
                ));
            }
        }
        writeln!(w, "{},{},{}", r.sample_id, r.predicted, r.truth)?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRow>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h == "sample_id,predicted,truth" => {}
        _ => return Err(Error::format("predictions file", "bad header")),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::format("predictions file", e.to_string()))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::format("predictions file", format!("line {}: expected 3 fields", lineno + 2)));
        }
        out.push(PredictionRow {
            sample_id: f[0].to_owned(),
            predicted: f[1].to_owned(),
            truth: f[2].to_owned(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbn::FrozenLayer;
    use ndarray::array;

    fn set(rows: Vec<Vec<f64>>, labels: &[&str]) -> LabeledVectorSet {
        let w = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let x = Array2::from_shape_vec((labels.len(), w), flat).unwrap();
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        LabeledVectorSet::new(x, &labels).unwrap()
    }

    #[test]
    fn knn_basics() {
        let one = set(vec![vec![3.0, 3.0]], &["only"]);
        assert_eq!(knn_classify(&one, &[-100.0, 7.0], 1).unwrap(), "only");
        assert_eq!(knn_classify(&one, &[0.0, 0.0], 5).unwrap(), "only");

        let two = set(vec![vec![0.0, 0.0], vec![10.0, 10.0]], &["A", "B"]);
        assert_eq!(knn_classify(&two, &[1.0, 1.0], 1).unwrap(), "A");
        assert_eq!(knn_classify(&two, &[9.0, 8.0], 1).unwrap(), "B");
    }

    #[test]
    fn knn_ties() {
        // equidistant: lower training index wins
        let s = set(vec![vec![1.0], vec![-1.0]], &["right", "left"]);
        assert_eq!(knn_classify(&s, &[0.0], 1).unwrap(), "right");
        // 1-1 vote: nearest member's class wins
        let s = set(vec![vec![5.0], vec![1.0]], &["far", "near"]);
        assert_eq!(knn_classify(&s, &[0.0], 2).unwrap(), "near");
    }

    #[test]
    fn knn_errors() {
        let empty = LabeledVectorSet::new(Array2::zeros((0, 2)), &[]).unwrap();
        assert!(matches!(knn_classify(&empty, &[0.0, 0.0], 1), Err(Error::EmptyTrainingSet)));
        let s = set(vec![vec![0.0, 0.0]], &["a"]);
        assert!(knn_classify(&s, &[0.0], 1).is_err());
        assert!(knn_classify(&s, &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn svm_needs_two_classes() {
        let s = set(vec![vec![0.0], vec![1.0]], &["a", "a"]);
        assert!(matches!(train_linear_svm(&s, &SvmParams::default()), Err(Error::SingleClass(1))));
    }

    #[test]
    fn evaluate_examples() {
        let truth = ["a", "b", "c", "a"];
        let r = evaluate(&truth, &truth).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);

        let classes = ["c0", "c1", "c2", "c3", "c4", "c5"];
        let truth: Vec<&str> = (0..60).map(|i| classes[i % 6]).collect();
        let preds = vec!["c2"; 60];
        let r = evaluate(&preds, &truth).unwrap();
        assert_eq!(r.accuracy, 1.0 / 6.0);
        assert_eq!(r.confusion.iter().map(|row| row.iter().sum::<usize>()).collect::<Vec<_>>(), vec![10; 6]);
        assert_eq!(r.per_class_recall[2], Some(1.0));
        assert_eq!(r.per_class_recall[0], Some(0.0));

        assert!(matches!(evaluate(&["a"], &["a", "b"]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn report_rendering() {
        let r = evaluate(&["x", "y", "y"], &["x", "y", "x"]).unwrap();
        let text = r.render();
        assert!(text.starts_with("accuracy=0.6667\n"), "{text}");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn predictions_csv() {
        let rows = vec![PredictionRow { sample_id: "s".into(), predicted: "a".into(), truth: "b".into() }];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        assert_eq!(buf, b"sample_id,predicted,truth\ns,a,b\n");
        assert_eq!(read_predictions(&buf[..]).unwrap(), rows);
    }

    fn tiny_dbn() -> DbnModel {
        let dense = Dense::new(array![[1.0, -1.0], [0.5, 2.0], [-1.0, 1.0]], array![0.0, 0.1], Activation::Relu).unwrap();
        DbnModel::from_layers(vec![FrozenLayer { dense, dropout_prob: 0.5 }]).unwrap()
    }

    fn fv(bits: [bool; 3], label: &str) -> FeatureVector {
        FeatureVector { sample_id: format!("{label}{bits:?}"), bits: bits.to_vec(), label: Some(label.into()) }
    }

    #[test]
    fn zero_epochs_predict_uniformly() {
        let train = LabeledVectorSet::from_features(&[fv([true, false, true], "a"), fv([false, true, false], "b"), fv([true, true, true], "c")]).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let net = fine_tune(&tiny_dbn(), &train, &cfg).unwrap();
        assert_eq!(net.hidden_layers().len(), 1);
        assert_eq!(net.hidden_layers()[0], tiny_dbn().layers()[0].dense);
        let p = predict(&net, &fv([true, false, false], "a")).unwrap();
        assert_eq!(p.probabilities, vec![1.0 / 3.0; 3]);
        assert_eq!(p.class, "a", "ties go to the first class");
    }

    #[test]
    fn fine_tune_shape_errors() {
        let train = LabeledVectorSet::from_features(&[FeatureVector { sample_id: "s".into(), bits: vec![true; 4], label: Some("a".into()) }]).unwrap();
        assert!(matches!(fine_tune(&tiny_dbn(), &train, &TrainConfig::default()), Err(Error::ShapeMismatch { .. })));
    }
}
