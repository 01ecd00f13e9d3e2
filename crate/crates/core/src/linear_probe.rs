//! Single-layer softmax classifiers trained on frozen embeddings, one per
//! caption position or size role.
//!
//! Training is plain mini-batch gradient descent on mean cross-entropy plus
//! an L2 penalty on the weights, with a cosine learning-rate schedule. It is
//! single-threaded and seeded, so two runs with the same inputs produce the
//! same weights bit for bit.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{argmax, softmax_in_place};
use crate::probe::{GroupKey, QueryGroups};
use crate::scalar::Scalar;
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    /// Fraction of each class kept for training; the rest is held out.
    pub split_fraction: f64,
    pub seed: u64,
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 128,
            l2: 1e-4,
            split_fraction: 0.8,
            seed: 0,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Value("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Value("epochs and batch_size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Value("l2 must be >= 0".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Value("split_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    fn rate_at(&self, epoch: usize) -> f64 {
        if self.cosine_decay {
            self.learning_rate * 0.5 * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearProbe<T: Scalar> {
    pub class_names: Vec<String>,
    pub dim: usize,
    /// `classes x dim`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub trained_on: String,
    pub target_group: Option<String>,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn zeros(class_names: Vec<String>, dim: usize) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Value("a probe needs at least two classes".into()));
        }
        let c = class_names.len();
        Ok(Self {
            class_names,
            dim,
            weights: vec![T::zero(); c * dim],
            bias: vec![T::zero(); c],
            trained_on: String::new(),
            target_group: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn row(&self, c: usize) -> &[T] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    /// `W x + b`.
    pub fn logits(&self, x: &[T]) -> Vec<T> {
        (0..self.n_classes()).map(|c| crate::kernels::dot(self.row(c), x) + self.bias[c]).collect()
    }

    pub fn probabilities(&self, x: &[T]) -> Vec<T> {
        let mut p = self.logits(x);
        softmax_in_place(&mut p);
        p
    }

    /// Class index with the highest logit; the lowest index wins ties.
    pub fn predict(&self, x: &[T]) -> usize {
        argmax(&self.logits(x)).expect("at least two classes")
    }

    fn to_f64(&self) -> LinearProbe<f64> {
        LinearProbe {
            class_names: self.class_names.clone(),
            dim: self.dim,
            weights: self.weights.iter().map(|w| w.as_f64()).collect(),
            bias: self.bias.iter().map(|b| b.as_f64()).collect(),
            trained_on: self.trained_on.clone(),
            target_group: self.target_group.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub probe: LinearProbe<T>,
    pub history: Vec<EpochStats>,
    pub holdout_accuracy: Option<f64>,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Mean cross-entropy plus `l2 * |W|^2`, and its gradient when `grad` is given
/// (laid out as all weights followed by all biases).
fn loss_and_grad<T: Scalar>(probe: &LinearProbe<T>, xs: &[&[T]], ys: &[usize], l2: T, mut grad: Option<&mut [T]>) -> T {
    let (c, d) = (probe.n_classes(), probe.dim);
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = T::zero());
    }
    let n = T::of(xs.len() as f64);
    let mut loss = T::zero();
    for (x, &y) in xs.iter().zip(ys) {
        let p = probe.probabilities(x);
        loss -= p[y].max(T::min_positive_value()).ln();
        if let Some(g) = grad.as_deref_mut() {
            for k in 0..c {
                let delta = (p[k] - if k == y { T::one() } else { T::zero() }) / n;
                for (gw, xv) in g[k * d..(k + 1) * d].iter_mut().zip(x.iter()) {
                    *gw += delta * *xv;
                }
                g[c * d + k] += delta;
            }
        }
    }
    let mut penalty = T::zero();
    for w in &probe.weights {
        penalty += *w * *w;
    }
    if let Some(g) = grad {
        let two_l2 = T::of(2.0) * l2;
        for (gw, w) in g[..c * d].iter_mut().zip(&probe.weights) {
            *gw += two_l2 * *w;
        }
    }
    loss / n + l2 * penalty
}

struct Dataset<T> {
    xs: Vec<Vec<T>>,
    ys: Vec<usize>,
}

fn gather<T: Scalar>(
    store: &EmbeddingStore,
    labels: &HashMap<String, String>,
    classes: &[String],
) -> Result<Dataset<T>> {
    if let Some(id) = labels.keys().filter(|id| store.index_of(id).is_none()).min() {
        return Err(Error::Key(id.clone()));
    }
    let class_index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut xs = Vec::with_capacity(labels.len());
    let mut ys = Vec::with_capacity(labels.len());
    for (id, v) in store.iter() {
        if let Some(label) = labels.get(id) {
            // Unseen classes map past the end and can never be predicted.
            ys.push(class_index.get(label.as_str()).copied().unwrap_or(usize::MAX));
            xs.push(v.iter().map(|x| T::of(f64::from(*x))).collect());
        }
    }
    Ok(Dataset { xs, ys })
}

pub fn train_probe<T: Scalar>(
    store: &EmbeddingStore,
    labels: &HashMap<String, String>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let classes: Vec<String> = labels.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Value(format!("need at least two classes, found {}", classes.len())));
    }
    let data = gather::<T>(store, labels, &classes)?;
    let mut by_class = vec![Vec::new(); classes.len()];
    for (i, y) in data.ys.iter().enumerate() {
        by_class[*y].push(i);
    }
    if let Some((c, _)) = by_class.iter().enumerate().find(|(_, v)| v.len() < 2) {
        return Err(Error::Value(format!("class `{}` has fewer than two examples", classes[c])));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let n_train = ((members.len() as f64 * cfg.split_fraction).round() as usize).clamp(1, members.len());
        train.extend_from_slice(&members[..n_train]);
        hold.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    hold.sort_unstable();

    let dim = store.dim();
    let mut probe = LinearProbe::<T>::zeros(classes, dim)?;
    probe.trained_on = store.model_id().to_string();
    let limit = (6.0 / (dim + probe.n_classes()) as f64).sqrt();
    for w in probe.weights.iter_mut() {
        *w = T::of(rng.random_range(-limit..limit));
    }

    let train_x: Vec<&[T]> = train.iter().map(|&i| data.xs[i].as_slice()).collect();
    let train_y: Vec<usize> = train.iter().map(|&i| data.ys[i]).collect();
    let hold_x: Vec<&[T]> = hold.iter().map(|&i| data.xs[i].as_slice()).collect();
    let hold_y: Vec<usize> = hold.iter().map(|&i| data.ys[i]).collect();

    let l2 = T::of(cfg.l2);
    let mut grad = vec![T::zero(); probe.weights.len() + probe.bias.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut bx, mut by) = (Vec::with_capacity(cfg.batch_size), Vec::with_capacity(cfg.batch_size));
    for epoch in 0..cfg.epochs {
        let lr = T::of(cfg.rate_at(epoch));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(batch.iter().map(|&i| train_x[i]));
            by.extend(batch.iter().map(|&i| train_y[i]));
            loss_and_grad(&probe, &bx, &by, l2, Some(&mut grad));
            let wlen = probe.weights.len();
            for (w, g) in probe.weights.iter_mut().zip(&grad[..wlen]) {
                *w -= lr * *g;
            }
            for (b, g) in probe.bias.iter_mut().zip(&grad[wlen..]) {
                *b -= lr * *g;
            }
        }
        let train_loss = loss_and_grad(&probe, &train_x, &train_y, l2, None).as_f64();
        if !train_loss.is_finite() {
            return Err(Error::Training(format!("loss became {train_loss} at epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            learning_rate: cfg.rate_at(epoch),
            train_loss,
            holdout_accuracy: accuracy(&probe, &hold_x, &hold_y),
        });
    }
    let holdout_accuracy = accuracy(&probe, &hold_x, &hold_y);
    Ok(TrainOutcome { probe, history, holdout_accuracy, n_train: train.len(), n_holdout: hold.len() })
}

fn accuracy<T: Scalar>(probe: &LinearProbe<T>, xs: &[&[T]], ys: &[usize]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let correct = xs.iter().zip(ys).filter(|(x, y)| probe.predict(x) == **y).count();
    Some(correct as f64 / xs.len() as f64)
}

/// Fraction of labeled ids whose predicted class matches the label.
pub fn eval_probe<T: Scalar>(
    probe: &LinearProbe<T>,
    store: &EmbeddingStore,
    labels: &HashMap<String, String>,
) -> Result<f64> {
    if probe.dim != store.dim() {
        return Err(Error::Dim { expected: probe.dim, actual: store.dim() });
    }
    let data = gather::<T>(store, labels, &probe.class_names)?;
    let xs: Vec<&[T]> = data.xs.iter().map(Vec::as_slice).collect();
    accuracy(probe, &xs, &data.ys).ok_or_else(|| Error::Value("evaluation set is empty".into()))
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step 1e-5, f64) over a random subset of at least 100
/// parameters, or all of them when there are fewer.
pub fn grad_check<T: Scalar>(probe: &LinearProbe<T>, batch: &[(Vec<f64>, usize)], l2: f64, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const MIN_PARAMS: usize = 100;
    // keeps round-off on near-zero gradients from reading as relative error
    const DENOM_FLOOR: f64 = 1e-6;
    if batch.is_empty() {
        return Err(Error::Value("gradient check needs a non-empty batch".into()));
    }
    if let Some((x, _)) = batch.iter().find(|(x, _)| x.len() != probe.dim) {
        return Err(Error::Dim { expected: probe.dim, actual: x.len() });
    }
    if let Some((_, y)) = batch.iter().find(|(_, y)| *y >= probe.n_classes()) {
        return Err(Error::Value(format!("label {y} out of range")));
    }
    let mut p = probe.to_f64();
    let xs: Vec<&[f64]> = batch.iter().map(|(x, _)| x.as_slice()).collect();
    let ys: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
    let n_params = p.weights.len() + p.bias.len();
    let mut analytic = vec![0.0; n_params];
    loss_and_grad(&p, &xs, &ys, l2, Some(&mut analytic));

    let mut idx: Vec<usize> = (0..n_params).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(MIN_PARAMS);

    let mut worst = 0.0f64;
    for &i in &idx {
        let orig = *param_mut(&mut p, i);
        *param_mut(&mut p, i) = orig + STEP;
        let up = loss_and_grad(&p, &xs, &ys, l2, None);
        *param_mut(&mut p, i) = orig - STEP;
        let down = loss_and_grad(&p, &xs, &ys, l2, None);
        *param_mut(&mut p, i) = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn param_mut(p: &mut LinearProbe<f64>, i: usize) -> &mut f64 {
    let wlen = p.weights.len();
    if i < wlen {
        &mut p.weights[i]
    } else {
        &mut p.bias[i - wlen]
    }
}

/// Labels for one group: each query id mapped to the object it holds in `key`.
/// Queries without that group are skipped.
pub fn labels_for_group(queries: &[QueryGroups], key: GroupKey) -> HashMap<String, String> {
    queries
        .iter()
        .filter_map(|q| q.members.iter().find(|(_, k)| *k == key).map(|(o, _)| (q.query_id.clone(), o.clone())))
        .collect()
}

pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,learning_rate,train_loss,holdout_accuracy\n");
    for h in history {
        let acc = h.holdout_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{:.8},{:.10},{}\n", h.epoch, h.learning_rate, h.train_loss, acc));
    }
    out
}
