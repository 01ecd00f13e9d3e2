//! Monte Carlo estimate of the contrastive objective
//! `e / (e + sum_j exp(cos(enc(z), enc(z'_j))))` for an ideal encoder
//! (identity) and a truncated one (first `d - k` coordinates on both sides).
//! Both concentrate on `e / (e + b)` as `d` grows.

mod toy;

pub use toy::{spearman, toy_bias_trainer, ToyCheckpoint, ToyConfig, ToyRun};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trials per RNG stream. Fixed so results do not depend on thread count.
pub const TRIALS_PER_STREAM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentDistribution {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    Ideal,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    pub k: usize,
    pub b: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub distribution: LatentDistribution,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Value("d must be positive".into()));
        }
        if self.k >= self.d {
            return Err(Error::Value(format!("k = {} must be smaller than d = {}", self.k, self.d)));
        }
        if self.b == 0 {
            return Err(Error::Value("b must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Value("trials must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub analytic_limit: f64,
}

pub fn analytic_limit(b: usize) -> f64 {
    let e = std::f64::consts::E;
    e / (e + b as f64)
}

/// Per-trial objective values, ideal and truncated, from the same draws.
pub fn trial_values(cfg: &SimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let streams = cfg.trials.div_ceil(TRIALS_PER_STREAM);
    let parts: Vec<Vec<(f64, f64)>> = (0..streams)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(s as u64);
            let n = TRIALS_PER_STREAM.min(cfg.trials - s * TRIALS_PER_STREAM);
            let mut z = vec![0.0; cfg.d];
            (0..n).map(|_| one_trial(cfg, &mut rng, &mut z)).collect()
        })
        .collect();
    Ok(parts.into_iter().flatten().unzip())
}

fn fill(dist: LatentDistribution, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    match dist {
        LatentDistribution::Gaussian => out.iter_mut().for_each(|x| *x = rng.sample(StandardNormal)),
        LatentDistribution::Rademacher => {
            for chunk in out.chunks_mut(64) {
                let bits = rng.next_u64();
                for (i, x) in chunk.iter_mut().enumerate() {
                    *x = if bits >> i & 1 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
    }
}

fn one_trial(cfg: &SimConfig, rng: &mut ChaCha8Rng, z: &mut [f64]) -> (f64, f64) {
    let h = cfg.d - cfg.k;
    fill(cfg.distribution, rng, z);
    let zh: f64 = z[..h].iter().map(|x| x * x).sum();
    let zt: f64 = z[h..].iter().map(|x| x * x).sum();
    let mut neg = vec![0.0; cfg.d];
    let e = std::f64::consts::E;
    let (mut sum_ideal, mut sum_trunc) = (0.0, 0.0);
    for _ in 0..cfg.b {
        fill(cfg.distribution, rng, &mut neg);
        let (mut dh, mut nh) = (0.0, 0.0);
        for (a, b) in z[..h].iter().zip(&neg[..h]) {
            dh += a * b;
            nh += b * b;
        }
        let (mut dt, mut nt) = (0.0, 0.0);
        for (a, b) in z[h..].iter().zip(&neg[h..]) {
            dt += a * b;
            nt += b * b;
        }
        sum_ideal += ((dh + dt) / ((zh + zt) * (nh + nt)).sqrt()).exp();
        sum_trunc += (dh / (zh * nh).sqrt()).exp();
    }
    (e / (e + sum_ideal), e / (e + sum_trunc))
}

fn summarize(values: &[f64], b: usize) -> SimEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    SimEstimate { mean, std_error, analytic_limit: analytic_limit(b) }
}

/// Ideal and truncated estimates from one shared set of draws.
pub fn estimate_both(cfg: &SimConfig) -> Result<(SimEstimate, SimEstimate)> {
    let (ideal, trunc) = trial_values(cfg)?;
    Ok((summarize(&ideal, cfg.b), summarize(&trunc, cfg.b)))
}

pub fn estimate_objective(cfg: &SimConfig, encoder: Encoder) -> Result<SimEstimate> {
    let (ideal, trunc) = estimate_both(cfg)?;
    Ok(match encoder {
        Encoder::Ideal => ideal,
        Encoder::Truncated => trunc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub d: usize,
    pub ideal: SimEstimate,
    pub truncated: SimEstimate,
}

pub fn convergence_sweep(
    b: usize,
    k: usize,
    dims: &[usize],
    trials: usize,
    seed: u64,
    distribution: LatentDistribution,
) -> Result<Vec<ConvergencePoint>> {
    if dims.is_empty() {
        return Err(Error::Value("no dimensions to sweep".into()));
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Value(format!("dims must be strictly increasing, got {dims:?}")));
    }
    dims.iter()
        .map(|&d| {
            let cfg = SimConfig { d, k, b, trials, seed, distribution };
            let (ideal, truncated) = estimate_both(&cfg).map_err(|e| e.labeled(format!("d = {d}")))?;
            Ok(ConvergencePoint { d, ideal, truncated })
        })
        .collect()
}
