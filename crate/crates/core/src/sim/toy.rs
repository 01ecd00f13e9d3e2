//! Toy contrastive trainer showing how a text-side first-position preference
//! emerges when large objects tend to be mentioned first.
//!
//! Objects are fixed random unit vectors. An image embeds as the normalized
//! sum of its objects with the large one scaled up; a caption embeds as
//! `normalize(sum_p exp(theta_p) * basis(obj_p))` with one learnable
//! log-weight per position. `theta` is trained with the symmetric batch
//! contrastive objective on raw cosines. This is a demonstration of the
//! mechanism, not a model of any real encoder.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub d: usize,
    pub vocab_size: usize,
    pub n_positions: usize,
    /// Size-order correlation in [0.5, 1]. 0.5 places the large object
    /// uniformly; 1 always mentions it first.
    pub gamma: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub large_scale: f64,
    pub eval_every: usize,
    pub eval_captions: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            d: 64,
            vocab_size: 64,
            n_positions: 4,
            gamma: 0.9,
            steps: 300,
            batch: 64,
            lr: 0.02,
            seed: 0,
            large_scale: 3.0,
            eval_every: 20,
            eval_captions: 2000,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("batch", self.batch),
            ("eval_every", self.eval_every),
            ("eval_captions", self.eval_captions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Value(format!("{name} must be positive")));
        }
        if self.n_positions < 2 || self.n_positions > self.vocab_size {
            return Err(Error::Value(format!(
                "n_positions must be in [2, vocab_size = {}], got {}",
                self.vocab_size, self.n_positions
            )));
        }
        if !(0.5..=1.0).contains(&self.gamma) {
            return Err(Error::Value(format!("gamma must be in [0.5, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Value("lr must be finite and positive".into()));
        }
        if !(self.large_scale > 1.0 && self.large_scale.is_finite()) {
            return Err(Error::Value("large_scale must be finite and > 1".into()));
        }
        Ok(())
    }

    /// Probability that the large object is mentioned first.
    pub fn p_large_first(&self) -> f64 {
        let chance = 1.0 / self.n_positions as f64;
        chance + (self.gamma - 0.5) / 0.5 * (1.0 - chance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCheckpoint {
    pub step: usize,
    /// Percent of hits where the retrieved object was mentioned first.
    pub first_position_rate: f64,
    /// Mean objective over the steps since the previous checkpoint.
    pub loss: Option<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub config: ToyConfig,
    pub checkpoints: Vec<ToyCheckpoint>,
}

struct Sample {
    caption: Vec<usize>,
    large: usize,
}

fn draw_sample(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Sample {
    let objs = index::sample(rng, cfg.vocab_size, cfg.n_positions).into_vec();
    let large = objs[0];
    let slot = if rng.random::<f64>() < cfg.p_large_first() { 0 } else { rng.random_range(1..cfg.n_positions) };
    let mut caption = objs[1..].to_vec();
    caption.insert(slot, large);
    Sample { caption, large }
}

fn image_embedding(cfg: &ToyConfig, bases: &[Vec<f64>], s: &Sample) -> Vec<f64> {
    let mut v = vec![0.0; cfg.d];
    for &o in &s.caption {
        let w = if o == s.large { cfg.large_scale } else { 1.0 };
        v.iter_mut().zip(&bases[o]).for_each(|(x, b)| *x += w * b);
    }
    kernels::unit(&v).expect("distinct random bases do not cancel")
}

/// Unnormalized text vector and its norm.
fn text_raw(theta: &[f64], bases: &[Vec<f64>], caption: &[usize]) -> (Vec<f64>, f64) {
    let mut u = vec![0.0; bases[0].len()];
    for (p, &o) in caption.iter().enumerate() {
        let a = theta[p].exp();
        u.iter_mut().zip(&bases[o]).for_each(|(x, b)| *x += a * b);
    }
    let n = kernels::norm(&u);
    (u, n)
}

fn first_position_rate(theta: &[f64], bases: &[Vec<f64>], eval: &[Vec<usize>]) -> f64 {
    let (mut hits, mut first) = (0usize, 0usize);
    for caption in eval {
        let (u, _) = text_raw(theta, bases, caption);
        let scores: Vec<f64> = bases.iter().map(|b| kernels::dot(&u, b)).collect();
        let best = kernels::argmax(&scores).expect("vocabulary is not empty");
        if let Some(p) = caption.iter().position(|&o| o == best) {
            hits += 1;
            if p == 0 {
                first += 1;
            }
        }
    }
    if hits == 0 {
        0.0
    } else {
        100.0 * first as f64 / hits as f64
    }
}

/// One step: objective value and gradient with respect to `theta`.
fn objective_and_grad(
    theta: &[f64],
    bases: &[Vec<f64>],
    images: &[Vec<f64>],
    captions: &[Vec<usize>],
) -> (f64, Vec<f64>) {
    let bsz = images.len();
    let texts: Vec<(Vec<f64>, f64)> = captions
        .iter()
        .map(|c| {
            let (u, n) = text_raw(theta, bases, c);
            (u.iter().map(|x| x / n).collect(), n)
        })
        .collect();
    let s: Vec<Vec<f64>> = images.iter().map(|img| texts.iter().map(|(t, _)| kernels::dot(img, t)).collect()).collect();

    // d(objective)/dS for both retrieval directions, averaged
    let mut g = vec![vec![0.0; bsz]; bsz];
    let mut loss = 0.0;
    for i in 0..bsz {
        let mut row = s[i].clone();
        let lse = log_sum_exp(&row);
        loss += lse - s[i][i];
        kernels::softmax_in_place(&mut row);
        for j in 0..bsz {
            g[i][j] += row[j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..bsz {
        let mut col: Vec<f64> = (0..bsz).map(|i| s[i][j]).collect();
        let lse = log_sum_exp(&col);
        loss += lse - s[j][j];
        kernels::softmax_in_place(&mut col);
        for i in 0..bsz {
            g[i][j] += col[i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    let scale = 1.0 / (2.0 * bsz as f64);
    let d = bases[0].len();
    let mut grad = vec![0.0; theta.len()];
    for j in 0..bsz {
        let mut r = vec![0.0; d];
        let mut c = 0.0;
        for i in 0..bsz {
            let w = g[i][j] * scale;
            r.iter_mut().zip(&images[i]).for_each(|(x, v)| *x += w * v);
            c += w * s[i][j];
        }
        let (t, n) = &texts[j];
        for (p, &o) in captions[j].iter().enumerate() {
            let e = &bases[o];
            grad[p] += theta[p].exp() / n * (kernels::dot(e, &r) - c * kernels::dot(t, e));
        }
    }
    (loss * scale, grad)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn random_bases(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..cfg.vocab_size)
        .map(|_| loop {
            let v: Vec<f64> = (0..cfg.d).map(|_| rng.sample(StandardNormal)).collect();
            if let Some(u) = kernels::unit(&v) {
                break u;
            }
        })
        .collect()
}

pub fn toy_bias_trainer(cfg: &ToyConfig) -> Result<ToyRun> {
    cfg.validate()?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(s);
        r
    };
    let bases = random_bases(cfg, &mut stream(0));
    let mut train_rng = stream(1);
    let mut eval_rng = stream(2);
    let eval: Vec<Vec<usize>> = (0..cfg.eval_captions)
        .map(|_| index::sample(&mut eval_rng, cfg.vocab_size, cfg.n_positions).into_vec())
        .collect();

    let mut theta = vec![0.0; cfg.n_positions];
    let mut checkpoints = vec![ToyCheckpoint {
        step: 0,
        first_position_rate: first_position_rate(&theta, &bases, &eval),
        loss: None,
        theta: theta.clone(),
    }];
    let (mut acc, mut since) = (0.0, 0usize);
    for step in 1..=cfg.steps {
        let samples: Vec<Sample> = (0..cfg.batch).map(|_| draw_sample(cfg, &mut train_rng)).collect();
        let images: Vec<Vec<f64>> = samples.iter().map(|s| image_embedding(cfg, &bases, s)).collect();
        let captions: Vec<Vec<usize>> = samples.into_iter().map(|s| s.caption).collect();
        let (loss, grad) = objective_and_grad(&theta, &bases, &images, &captions);
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss is {loss} at step {step}")));
        }
        theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= cfg.lr * g);
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 700.0) {
            return Err(Error::Training(format!("position weights overflowed at step {step}")));
        }
        acc += loss;
        since += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            checkpoints.push(ToyCheckpoint {
                step,
                first_position_rate: first_position_rate(&theta, &bases, &eval),
                loss: Some(acc / since as f64),
                theta: theta.clone(),
            });
            acc = 0.0;
            since = 0;
        }
    }
    Ok(ToyRun { config: cfg.clone(), checkpoints })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(run: &ToyRun) -> Vec<f64> {
        run.checkpoints.iter().map(|c| c.first_position_rate).collect()
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = ToyConfig { d: 16, vocab_size: 12, batch: 6, ..ToyConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bases = random_bases(&cfg, &mut rng);
        let samples: Vec<Sample> = (0..cfg.batch).map(|_| draw_sample(&cfg, &mut rng)).collect();
        let images: Vec<Vec<f64>> = samples.iter().map(|s| image_embedding(&cfg, &bases, s)).collect();
        let captions: Vec<Vec<usize>> = samples.into_iter().map(|s| s.caption).collect();
        let theta = vec![0.3, -0.2, 0.1, 0.5];
        let (_, grad) = objective_and_grad(&theta, &bases, &images, &captions);
        let h = 1e-6;
        for p in 0..theta.len() {
            let mut up = theta.clone();
            up[p] += h;
            let mut dn = theta.clone();
            dn[p] -= h;
            let num = (objective_and_grad(&up, &bases, &images, &captions).0
                - objective_and_grad(&dn, &bases, &images, &captions).0)
                / (2.0 * h);
            assert!((num - grad[p]).abs() < 1e-7, "p{p}: {num} vs {}", grad[p]);
        }
    }

    #[test]
    fn zero_steps_is_flat() {
        let run = toy_bias_trainer(&ToyConfig { steps: 0, ..ToyConfig::default() }).unwrap();
        assert_eq!(run.checkpoints.len(), 1);
        assert_eq!(run.checkpoints[0].theta, vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(toy_bias_trainer(&ToyConfig { gamma: 0.3, ..ToyConfig::default() }).is_err());
        assert!(toy_bias_trainer(&ToyConfig { n_positions: 1, ..ToyConfig::default() }).is_err());
        assert!(toy_bias_trainer(&ToyConfig { lr: 0.0, ..ToyConfig::default() }).is_err());
        assert!(matches!(
            toy_bias_trainer(&ToyConfig { lr: 1e300, steps: 3, ..ToyConfig::default() }),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn correlated_data_builds_first_position_bias() {
        let run = toy_bias_trainer(&ToyConfig::default()).unwrap();
        let r = rates(&run);
        let steps: Vec<f64> = run.checkpoints.iter().map(|c| c.step as f64).collect();
        assert!(*r.last().unwrap() > 40.0, "{r:?}");
        assert!(spearman(&steps, &r).unwrap() > 0.8, "{r:?}");
    }

    #[test]
    fn uncorrelated_data_stays_near_chance() {
        let run = toy_bias_trainer(&ToyConfig { gamma: 0.5, ..ToyConfig::default() }).unwrap();
        let last = *rates(&run).last().unwrap();
        assert!((last - 25.0).abs() <= 5.0, "{last}");
    }
}
