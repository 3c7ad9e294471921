//! One-hidden-layer ReLU MLP with softmax output, trained by momentum SGD on
//! mean cross-entropy under a multi-step learning-rate schedule.
//!
//! Parameters live in one flat vector, `[W1 | b1 | W2 | b2]`, with `W1`
//! stored `hidden x input` and `W2` stored `classes x hidden`, both row-major.
//! Gradients use the same layout, so the optimizer is a single loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::augment::BatchTransform;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensorio::{ImageTensor, LabeledDataset};

pub const DEFAULT_HIDDEN: usize = 256;

const MODEL_MAGIC: &[u8; 8] = b"RFCAUGMD";
const MODEL_VERSION: u8 = 1;

/// Examples per gradient work unit. Fixed so the reduction order never depends on threads.
const GRAD_CHUNK: usize = 16;

/// Anything that maps an image to a per-class score vector.
pub trait ScoringModel: Sync {
    fn scores(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

impl<F> ScoringModel for F
where
    F: Fn(&ImageTensor) -> Result<Vec<f64>> + Sync,
{
    fn scores(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self(image)
    }
}

/// Index of the first maximum, `None` for an empty slice.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    input_dim: usize,
    hidden_dim: usize,
    class_count: usize,
    params: Vec<f64>,
    rng_seed: u64,
}

/// Flat gradient vector in the parameter layout, plus batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Examples whose argmax matched the label.
    pub correct: usize,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl ClassifierState {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(input_dim: usize, hidden_dim: usize, class_count: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || class_count == 0 {
            return Err(Error::Argument(format!(
                "model dims must be positive, got {input_dim}/{hidden_dim}/{class_count}"
            )));
        }
        let mut state = Self::zeros(input_dim, hidden_dim, class_count);
        state.rng_seed = seed;
        let mut rng = rng::stream(seed, u64::MAX);
        let b1 = 1.0 / (input_dim as f64).sqrt();
        let b2 = 1.0 / (hidden_dim as f64).sqrt();
        let (w1, rest) = state.params.split_at_mut(hidden_dim * input_dim);
        let (bias1, rest) = rest.split_at_mut(hidden_dim);
        let (w2, bias2) = rest.split_at_mut(class_count * hidden_dim);
        for v in w1.iter_mut().chain(bias1.iter_mut()) {
            *v = rng.random_range(-b1..=b1);
        }
        for v in w2.iter_mut().chain(bias2.iter_mut()) {
            *v = rng.random_range(-b2..=b2);
        }
        Ok(state)
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, class_count: usize) -> Self {
        let n = hidden_dim * input_dim + hidden_dim + class_count * hidden_dim + class_count;
        Self {
            input_dim,
            hidden_dim,
            class_count,
            params: vec![0.0; n],
            rng_seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.class_count * self.hidden_dim;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, _, _] = self.offsets();
        &self.params[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.offsets();
        &self.params[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.offsets();
        &self.params[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [_, _, _, b2] = self.offsets();
        &self.params[b2..]
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        if image.data().len() != self.input_dim {
            return Err(Error::Shape(format!(
                "model takes {} inputs, image {:?} has {}",
                self.input_dim,
                image.dims(),
                image.data().len()
            )));
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let pre: Vec<f64> = w1
            .chunks_exact(self.input_dim)
            .zip(b1)
            .map(|(row, &b)| b + dot(row, x))
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let logits: Vec<f64> = w2
            .chunks_exact(self.hidden_dim)
            .zip(b2)
            .map(|(row, &b)| b + dot(row, &hidden))
            .collect();
        Activations {
            pre,
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Class probabilities for `image`.
    pub fn forward(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        Ok(self.activations(image.data()).probs)
    }

    /// Max-softmax confidence.
    pub fn confidence(&self, image: &ImageTensor) -> Result<f64> {
        Ok(self.forward(image)?.into_iter().fold(0.0, f64::max))
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<usize> {
        Ok(argmax(&self.forward(image)?).expect("class_count > 0"))
    }

    /// Accumulates one example's gradient into `grad`; returns (loss, correct).
    fn backprop_into(&self, x: &[f64], label: usize, grad: &mut [f64]) -> (f64, bool) {
        let act = self.activations(x);
        let [_, ob1, ow2, ob2] = self.offsets();
        let (gw1, rest) = grad.split_at_mut(ob1);
        let (gb1, rest) = rest.split_at_mut(ow2 - ob1);
        let (gw2, gb2) = rest.split_at_mut(ob2 - ow2);

        let mut dlogits = act.probs.clone();
        dlogits[label] -= 1.0;
        let mut dhidden = vec![0.0; self.hidden_dim];
        for (k, &d) in dlogits.iter().enumerate() {
            gb2[k] += d;
            let row = &self.w2()[k * self.hidden_dim..(k + 1) * self.hidden_dim];
            let grow = &mut gw2[k * self.hidden_dim..(k + 1) * self.hidden_dim];
            for j in 0..self.hidden_dim {
                grow[j] += d * act.hidden[j];
                dhidden[j] += d * row[j];
            }
        }
        for j in 0..self.hidden_dim {
            if act.pre[j] <= 0.0 {
                continue;
            }
            let d = dhidden[j];
            gb1[j] += d;
            let grow = &mut gw1[j * self.input_dim..(j + 1) * self.input_dim];
            for (g, &xi) in grow.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        let loss = -act.probs[label].max(f64::MIN_POSITIVE).ln();
        (loss, argmax(&act.probs) == Some(label))
    }

    fn label_of(&self, image: &ImageTensor, index: usize) -> Result<usize> {
        let label = image.label().ok_or(Error::MissingLabel { index })?;
        if label >= self.class_count {
            return Err(Error::Label {
                index,
                label,
                class_count: self.class_count,
            });
        }
        Ok(label)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ScoringModel for ClassifierState {
    fn scores(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.forward(image)
    }
}

/// Exact gradient of the mean cross-entropy over `batch` (labels required).
pub fn gradients(state: &ClassifierState, batch: &[ImageTensor]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Argument("gradient of an empty batch".into()));
    }
    for (index, image) in batch.iter().enumerate() {
        state.check_input(image)?;
        state.label_of(image, index)?;
    }
    let partials: Vec<(Vec<f64>, f64, usize)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; state.params.len()];
            let mut loss = 0.0;
            let mut correct = 0;
            for image in chunk {
                let label = image.label().expect("checked above");
                let (l, ok) = state.backprop_into(image.data(), label, &mut grad);
                loss += l;
                correct += usize::from(ok);
            }
            (grad, loss, correct)
        })
        .collect();
    let n = batch.len() as f64;
    let mut values = vec![0.0; state.params.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (g, l, c) in partials {
        values.iter_mut().zip(&g).for_each(|(v, x)| *v += x);
        loss += l;
        correct += c;
    }
    values.iter_mut().for_each(|v| *v /= n);
    Ok(Gradients {
        values,
        loss: loss / n,
        correct,
    })
}

/// Fraction of `dataset` classified correctly.
pub fn accuracy(state: &ClassifierState, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let correct = dataset
        .images()
        .par_iter()
        .enumerate()
        .map(|(index, image)| {
            let p = state.predict(image).map_err(|e| Error::Model {
                index,
                source: Box::new(e),
            })?;
            Ok::<_, Error>(usize::from(Some(p) == image.label()))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / dataset.len() as f64)
}

/// Multi-step learning-rate schedule with SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub milestone_epochs: Vec<usize>,
    pub total_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

/// Milestone positions of the 200-epoch schedule (60, 120, 160, 190) as fractions.
const MILESTONE_FRACTIONS: [f64; 4] = [0.3, 0.6, 0.8, 0.95];

impl SgdSchedule {
    /// The schedule compressed to `total_epochs`, milestones kept proportional.
    pub fn scaled(total_epochs: usize) -> Self {
        let mut milestone_epochs: Vec<usize> = MILESTONE_FRACTIONS
            .iter()
            .map(|f| (f * total_epochs as f64).round() as usize)
            .filter(|&m| m > 0 && m < total_epochs)
            .collect();
        milestone_epochs.dedup();
        Self {
            base_lr: 0.1,
            decay_factor: 0.2,
            milestone_epochs,
            total_epochs,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
        }
    }

    /// 200 epochs, decays at 60, 120, 160 and 190.
    pub fn full() -> Self {
        Self::scaled(200)
    }

    /// 20 epochs, decays at 6, 12, 16 and 19.
    pub fn desk() -> Self {
        Self::scaled(20)
    }

    pub fn validate(&self) -> Result<()> {
        if self.milestone_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!(
                "milestones {:?} are not strictly increasing",
                self.milestone_epochs
            )));
        }
        if let Some(&m) = self.milestone_epochs.iter().find(|&&m| m >= self.total_epochs) {
            return Err(Error::Argument(format!(
                "milestone {m} is not below total epochs {}",
                self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        if !(self.base_lr >= 0.0 && self.decay_factor >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Argument(
                "learning rate, decay, momentum and weight decay must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// `base_lr * decay_factor ^ (milestones <= epoch)`, epochs counted from 0.
    pub fn lr(&self, epoch: usize) -> f64 {
        let passed = self.milestone_epochs.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ClassifierState,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// `epoch,lr,loss,train_acc,test_acc`; test_acc is empty without an eval set.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,train_acc,test_acc\n");
        for e in &self.log {
            let test = e.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.8},{:.6},{}", e.epoch, e.lr, e.loss, e.train_acc, test);
        }
        out
    }
}

/// Minibatch momentum SGD from `initial`.
///
/// Each epoch visits the data in an order drawn from `seed`; `hook`, when
/// given, transforms every batch before the gradient step. Equal inputs give
/// bitwise-equal parameters.
pub fn train(
    initial: ClassifierState,
    dataset: &LabeledDataset,
    schedule: &SgdSchedule,
    hook: Option<&dyn BatchTransform>,
    seed: u64,
    eval: Option<&LabeledDataset>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    let mut state = initial;
    let mut velocity = vec![0.0; state.params.len()];
    let mut log = Vec::with_capacity(schedule.total_epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..schedule.total_epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng::stream(rng::derive_seed(seed, epoch as u64, 1), 0));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch_index, idx) in order.chunks(schedule.batch_size).enumerate() {
            let mut batch: Vec<ImageTensor> = idx.iter().map(|&i| dataset.images()[i].clone()).collect();
            if let Some(hook) = hook {
                batch = hook.transform(&batch, rng::derive_seed(seed, epoch as u64, 2 + batch_index as u64))?;
            }
            let grads = gradients(&state, &batch)?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_index,
                });
            }
            for ((w, v), g) in state.params.iter_mut().zip(&mut velocity).zip(&grads.values) {
                *v = schedule.momentum * *v + g + schedule.weight_decay * *w;
                *w -= lr * *v;
            }
            if state.params.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_index,
                });
            }
            loss_sum += grads.loss * batch.len() as f64;
            correct += grads.correct;
        }
        let test_acc = eval.map(|ds| accuracy(&state, ds)).transpose()?;
        log.push(EpochLog {
            epoch,
            lr,
            loss: loss_sum / dataset.len() as f64,
            train_acc: correct as f64 / dataset.len() as f64,
            test_acc,
        });
    }
    Ok(TrainOutcome { state, log })
}

fn push_section(out: &mut Vec<u8>, tag: &[u8; 4], values: impl ExactSizeIterator<Item = [u8; 8]>) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v);
    }
}

/// Model file: magic, version byte, then `DIMS`, `W1`, `B1`, `W2`, `B2`
/// sections, each a 4-byte tag, a u64 count and that many little-endian
/// 8-byte values.
pub fn encode_model(state: &ClassifierState) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 5 * 12 + 8 * (4 + state.params.len()));
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    let dims = [
        state.input_dim as u64,
        state.hidden_dim as u64,
        state.class_count as u64,
        state.rng_seed,
    ];
    push_section(&mut out, b"DIMS", dims.iter().map(|d| d.to_le_bytes()));
    for (tag, part) in [
        (b"W1\0\0", state.w1()),
        (b"B1\0\0", state.b1()),
        (b"W2\0\0", state.w2()),
        (b"B2\0\0", state.b2()),
    ] {
        push_section(&mut out, tag, part.iter().map(|v| v.to_le_bytes()));
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ClassifierState> {
    let bad = |m: String| Error::Format { record: 0, message: m };
    if bytes.len() < 9 || &bytes[..8] != MODEL_MAGIC {
        return Err(bad("not a model file (bad magic)".into()));
    }
    if bytes[8] != MODEL_VERSION {
        return Err(bad(format!("unsupported model version {}", bytes[8])));
    }
    let mut pos = 9;
    let mut section = |tag: &[u8; 4]| -> Result<Vec<[u8; 8]>> {
        let head = bytes
            .get(pos..pos + 12)
            .ok_or_else(|| bad(format!("missing section {}", String::from_utf8_lossy(tag))))?;
        if &head[..4] != tag {
            return Err(bad(format!("expected section {}", String::from_utf8_lossy(tag))));
        }
        let count = u64::from_le_bytes(head[4..12].try_into().expect("8 bytes")) as usize;
        let start = pos + 12;
        let end = count
            .checked_mul(8)
            .and_then(|n| start.checked_add(n))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("section {} is truncated", String::from_utf8_lossy(tag))))?;
        pos = end;
        Ok(bytes[start..end]
            .chunks_exact(8)
            .map(|c| c.try_into().expect("8 bytes"))
            .collect())
    };
    let dims: Vec<u64> = section(b"DIMS")?.into_iter().map(u64::from_le_bytes).collect();
    let [input, hidden, classes, seed] = dims[..] else {
        return Err(bad("DIMS section needs 4 values".into()));
    };
    let mut state = ClassifierState::zeros(input as usize, hidden as usize, classes as usize);
    state.rng_seed = seed;
    let mut params = Vec::with_capacity(state.params.len());
    for tag in [b"W1\0\0", b"B1\0\0", b"W2\0\0", b"B2\0\0"] {
        params.extend(section(tag)?.into_iter().map(f64::from_le_bytes));
    }
    if params.len() != state.params.len() {
        return Err(bad(format!(
            "parameter count {} does not match dims ({})",
            params.len(),
            state.params.len()
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad("model holds non-finite parameters".into()));
    }
    state.params = params;
    Ok(state)
}

pub fn save_model(state: &ClassifierState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(state)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierState> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
