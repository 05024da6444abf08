//! Downstream classifiers for the train-on-synthetic / test-on-real protocol.

use crate::data::{LabeledDataset, Provenance, N_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, DenseNet, FlatParams, LayerSpec};
use crate::numerics::RngStream;
use crate::training::streams;

const LOGREG_LR: f64 = 0.5;
const LOGREG_MAX_EPOCHS: usize = 500;
const LOGREG_GRAD_TOL: f64 = 1e-5;
const MLP_HIDDEN: usize = 100;
const MLP_LR: f64 = 1e-3;
const MLP_BATCH: usize = 64;
const MLP_EPOCHS: usize = 30;

/// Anything that maps an image to a predicted class label.
pub trait Predict {
    fn predict(&self, image: &[f64]) -> Result<u8>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    LogReg,
    Mlp,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::LogReg => "logreg",
            ClassifierKind::Mlp => "mlp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "logreg" => Ok(ClassifierKind::LogReg),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(Error::invalid_parameter(
                "classifier",
                format!("unknown classifier `{other}` (expected logreg or mlp)"),
            )),
        }
    }
}

/// In-place softmax, stabilized by the row maximum.
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn argmax(scores: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best as u8
}

/// Rejects training sets no classifier can learn from.
fn check_train_set(train: &LabeledDataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let first = train.label(0);
    if train.labels().iter().all(|&l| l == first) {
        return Err(Error::DegenerateData(format!(
            "training set holds only class {first}"
        )));
    }
    Ok(())
}

/// Multinomial softmax regression trained by full-batch gradient descent
/// from a zero initialization. Fully deterministic: no seed enters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegression {
    /// Row c holds the weights of class c.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn train(train: &LabeledDataset) -> Result<Self> {
        check_train_set(train)?;
        let dim = train.image_dim();
        let n = train.len();
        let mut model = SoftmaxRegression {
            weights: vec![vec![0.0; dim]; N_CLASSES],
            bias: vec![0.0; N_CLASSES],
        };
        let mut grad_w = vec![vec![0.0; dim]; N_CLASSES];
        let mut grad_b = vec![0.0; N_CLASSES];
        for _ in 0..LOGREG_MAX_EPOCHS {
            for row in &mut grad_w {
                row.fill(0.0);
            }
            grad_b.fill(0.0);
            for i in 0..n {
                let x = train.image(i);
                let mut p = model.logits(x);
                softmax_in_place(&mut p);
                p[train.label(i) as usize] -= 1.0;
                for (c, &res) in p.iter().enumerate() {
                    if res != 0.0 {
                        for (g, &xv) in grad_w[c].iter_mut().zip(x) {
                            *g += res * xv;
                        }
                        grad_b[c] += res;
                    }
                }
            }
            let scale = 1.0 / n as f64;
            let mut norm_sq = 0.0;
            for c in 0..N_CLASSES {
                for g in &mut grad_w[c] {
                    *g *= scale;
                    norm_sq += *g * *g;
                }
                grad_b[c] *= scale;
                norm_sq += grad_b[c] * grad_b[c];
            }
            if !norm_sq.is_finite() {
                return Err(Error::Numeric("non-finite regression gradient".into()));
            }
            if norm_sq.sqrt() < LOGREG_GRAD_TOL {
                break;
            }
            for c in 0..N_CLASSES {
                for (w, &g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                    *w -= LOGREG_LR * g;
                }
                model.bias[c] -= LOGREG_LR * grad_b[c];
            }
        }
        Ok(model)
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (c, row) in self.weights.iter().enumerate() {
            let mut acc = 0.0;
            for (&w, &xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            z[c] += acc;
        }
        z
    }
}

impl Predict for SoftmaxRegression {
    fn predict(&self, image: &[f64]) -> Result<u8> {
        if image.len() != self.weights[0].len() {
            return Err(Error::Shape(format!(
                "classifier expects {} pixels, got {}",
                self.weights[0].len(),
                image.len()
            )));
        }
        Ok(argmax(&self.logits(image)))
    }
}

/// One-hidden-layer network (input → 100 ReLU → classes) trained with Adam
/// on softmax cross-entropy. All randomness (initialization, epoch
/// shuffles) comes from the stream derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    net: DenseNet,
}

impl MlpClassifier {
    pub fn train(train: &LabeledDataset, seed: u64) -> Result<Self> {
        check_train_set(train)?;
        let dim = train.image_dim();
        let specs = [
            LayerSpec { input: dim, output: MLP_HIDDEN, activation: Activation::Relu },
            LayerSpec { input: MLP_HIDDEN, output: N_CLASSES, activation: Activation::Identity },
        ];
        let mut rng = RngStream::new(seed, streams::EVAL_BASE);
        let mut net = DenseNet::init(&specs, &mut rng)?;
        let mut adam = AdamState::new(net.param_count());
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..MLP_EPOCHS {
            rng.shuffle(&mut order);
            for chunk in order.chunks(MLP_BATCH) {
                let mut grad_sum = FlatParams::zeros(net.param_count());
                for &i in chunk {
                    let tape = net.forward(train.image(i))?;
                    let mut out_grad = tape.output().to_vec();
                    softmax_in_place(&mut out_grad);
                    out_grad[train.label(i) as usize] -= 1.0;
                    let back = net.backward(&tape, &out_grad)?;
                    grad_sum.add_assign(&back.param_grad)?;
                }
                grad_sum.scale_in_place(1.0 / chunk.len() as f64);
                if !grad_sum.is_finite() {
                    return Err(Error::Numeric("non-finite classifier gradient".into()));
                }
                net.adam_update(&grad_sum, &mut adam, MLP_LR)?;
            }
        }
        Ok(MlpClassifier { net })
    }

    pub fn params(&self) -> FlatParams {
        self.net.params()
    }
}

impl Predict for MlpClassifier {
    fn predict(&self, image: &[f64]) -> Result<u8> {
        Ok(argmax(&self.net.output(image)?))
    }
}

/// A trained downstream classifier of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    LogReg(SoftmaxRegression),
    Mlp(MlpClassifier),
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::LogReg(_) => ClassifierKind::LogReg,
            Classifier::Mlp(_) => ClassifierKind::Mlp,
        }
    }
}

impl Predict for Classifier {
    fn predict(&self, image: &[f64]) -> Result<u8> {
        match self {
            Classifier::LogReg(m) => m.predict(image),
            Classifier::Mlp(m) => m.predict(image),
        }
    }
}

/// Trains one classifier. The regression ignores `seed` (it is
/// deterministic); the network consumes it for initialization and shuffling.
pub fn train_classifier(
    kind: ClassifierKind,
    train: &LabeledDataset,
    seed: u64,
) -> Result<Classifier> {
    match kind {
        ClassifierKind::LogReg => Ok(Classifier::LogReg(SoftmaxRegression::train(train)?)),
        ClassifierKind::Mlp => Ok(Classifier::Mlp(MlpClassifier::train(train, seed)?)),
    }
}

/// Accuracy of one class within a test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassAccuracy {
    pub label: u8,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Accuracy of one evaluation run, with its per-class breakdown (classes
/// present in the test set only, ascending by label).
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassAccuracy>,
}

/// Fraction of argmax-correct predictions over a test set.
pub fn evaluate_accuracy(model: &dyn Predict, test: &LabeledDataset) -> Result<AccuracyReport> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let mut correct_by_class = [0usize; N_CLASSES];
    let mut total_by_class = [0usize; N_CLASSES];
    for i in 0..test.len() {
        let truth = test.label(i);
        total_by_class[truth as usize] += 1;
        if model.predict(test.image(i))? == truth {
            correct_by_class[truth as usize] += 1;
        }
    }
    let correct: usize = correct_by_class.iter().sum();
    let per_class: Vec<ClassAccuracy> = (0..N_CLASSES)
        .filter(|&c| total_by_class[c] > 0)
        .map(|c| ClassAccuracy {
            label: c as u8,
            correct: correct_by_class[c],
            total: total_by_class[c],
        })
        .collect();
    Ok(AccuracyReport {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        per_class,
    })
}

/// Report over repeated runs: per-run accuracy and its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub kind: ClassifierKind,
    pub train_provenance: Provenance,
    pub seeds: Vec<u64>,
    pub runs: Vec<AccuracyReport>,
    pub mean_accuracy: f64,
}

/// Trains `runs` classifiers under seeds `base_seed..base_seed+runs`, each
/// evaluated on `test`, and reports every run plus the mean accuracy.
pub fn evaluate_over_seeds(
    kind: ClassifierKind,
    train: &LabeledDataset,
    test: &LabeledDataset,
    runs: usize,
    base_seed: u64,
) -> Result<ClassifierReport> {
    if runs == 0 {
        return Err(Error::invalid_parameter("runs", "must be positive"));
    }
    let mut seeds = Vec::with_capacity(runs);
    let mut reports = Vec::with_capacity(runs);
    for r in 0..runs {
        let seed = base_seed + r as u64;
        let model = train_classifier(kind, train, seed)?;
        reports.push(evaluate_accuracy(&model, test)?);
        seeds.push(seed);
    }
    let mean_accuracy = reports.iter().map(|r| r.accuracy).sum::<f64>() / runs as f64;
    Ok(ClassifierReport {
        kind,
        train_provenance: train.provenance(),
        seeds,
        runs: reports,
        mean_accuracy,
    })
}

// ----------------------------------------------------------------------------
