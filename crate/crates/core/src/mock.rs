//! Deterministic stand-in encoders with controllable positional and size
//! bias.
//!
//! Every object name maps to a seeded pseudo-random unit vector. A caption
//! embeds as `normalize(sum_i w_i * basis(obj_i))` with `w_i = decay^i`, and
//! a scene as the same sum with weight `large_scale^exponent` on the large
//! object. Optional log-normal jitter multiplies each weight by
//! `exp(jitter * xi)`, with `xi` derived from the caption text (or image id)
//! so the encoders stay pure functions of their input.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forge::{CaptionSpec, SceneSpec, SizeRole, Vocabulary};
use crate::kernels;
use crate::store::{EmbeddingStore, Modality};

pub const MIN_MOCK_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockEncoderConfig {
    pub dim: usize,
    pub seed: u64,
    /// Positional decay of the text encoder, in (0, 1]; 1 is order-blind.
    pub text_decay: f64,
    /// Exponent applied to the large-object scale by the image encoder.
    pub image_size_exponent: f64,
    /// Log-normal spread of per-position text weights; 0 disables.
    pub text_jitter: f64,
    /// Log-normal spread of per-object image weights; 0 disables.
    pub image_jitter: f64,
}

impl Default for MockEncoderConfig {
    fn default() -> Self {
        Self { dim: 256, seed: 0, text_decay: 1.0, image_size_exponent: 0.0, text_jitter: 0.0, image_jitter: 0.0 }
    }
}

impl MockEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_MOCK_DIM {
            return Err(Error::Value(format!("mock dim must be >= {MIN_MOCK_DIM}, got {}", self.dim)));
        }
        if !(self.text_decay > 0.0 && self.text_decay <= 1.0) {
            return Err(Error::Value(format!("text_decay must be in (0, 1], got {}", self.text_decay)));
        }
        if !(self.image_size_exponent >= 0.0 && self.image_size_exponent.is_finite()) {
            return Err(Error::Value("image_size_exponent must be finite and >= 0".into()));
        }
        for (name, v) in [("text_jitter", self.text_jitter), ("image_jitter", self.image_jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Value(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn seeded_rng(tag: &str, seed: u64, dim: usize, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    h.update((dim as u64).to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Unit vector for `object_name`, a pure function of `(dim, seed, name)`.
pub fn object_basis(cfg: &MockEncoderConfig, object_name: &str) -> Vec<f64> {
    let mut rng = seeded_rng("oscope/basis", cfg.seed, cfg.dim, object_name);
    loop {
        let v: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = kernels::unit(&v) {
            return u;
        }
    }
}

fn jitter(sigma: f64, tag: &str, cfg: &MockEncoderConfig, key: &str, n: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0; n];
    }
    let mut rng = seeded_rng(tag, cfg.seed, cfg.dim, key);
    (0..n).map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)).exp()).collect()
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    cfg: MockEncoderConfig,
    basis: HashMap<String, Vec<f64>>,
}

impl MockEncoder {
    /// Encoder over the objects of `vocab`; other names are rejected.
    pub fn new(cfg: MockEncoderConfig, vocab: &Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let basis = vocab.names().map(|n| (n.to_string(), object_basis(&cfg, n))).collect();
        Ok(Self { cfg, basis })
    }

    /// Encoder over caller-supplied basis vectors (normalized here).
    pub fn from_bases(cfg: MockEncoderConfig, bases: HashMap<String, Vec<f64>>) -> Result<Self> {
        cfg.validate()?;
        let mut basis = HashMap::with_capacity(bases.len());
        for (name, v) in bases {
            if v.len() != cfg.dim {
                return Err(Error::Dim { expected: cfg.dim, actual: v.len() });
            }
            let u = kernels::unit(&v).ok_or_else(|| Error::Value(format!("zero basis for `{name}`")))?;
            basis.insert(name, u);
        }
        Ok(Self { cfg, basis })
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.cfg
    }

    pub fn basis(&self, object: &str) -> Result<&[f64]> {
        self.basis
            .get(object)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Value(format!("object `{object}` is not in the encoder vocabulary")))
    }

    fn weighted_sum<'a>(&self, items: impl Iterator<Item = (&'a str, f64)>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.cfg.dim];
        for (obj, w) in items {
            for (a, b) in acc.iter_mut().zip(self.basis(obj)?) {
                *a += w * b;
            }
        }
        kernels::unit(&acc).ok_or_else(|| Error::Value("embedding collapsed to zero".into()))
    }

    pub fn encode_text(&self, caption: &CaptionSpec) -> Result<Vec<f64>> {
        if caption.objects.is_empty() {
            return Err(Error::Value(format!("caption `{}` has no objects", caption.caption_id)));
        }
        let noise = jitter(self.cfg.text_jitter, "oscope/text-jitter", &self.cfg, &caption.text, caption.objects.len());
        let decay = self.cfg.text_decay;
        self.weighted_sum(
            caption.objects.iter().enumerate().map(|(i, o)| (o.as_str(), decay.powi(i as i32) * noise[i])),
        )
    }

    pub fn encode_image(&self, scene: &SceneSpec, large_scale: f64) -> Result<Vec<f64>> {
        if !(large_scale > 1.0 && large_scale.is_finite()) {
            return Err(Error::Value(format!("large_scale must be > 1, got {large_scale}")));
        }
        scene.validate()?;
        let large_weight = large_scale.powf(self.cfg.image_size_exponent);
        let noise =
            jitter(self.cfg.image_jitter, "oscope/image-jitter", &self.cfg, &scene.image_id, scene.placements.len());
        self.weighted_sum(scene.placements.iter().enumerate().map(|(j, p)| {
            let w = if p.role == SizeRole::Large { large_weight } else { 1.0 };
            (p.object.as_str(), w * noise[j])
        }))
    }

    pub fn text_store(&self, captions: &[CaptionSpec], model_id: &str) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(model_id, Modality::Text, self.cfg.dim)?;
        for c in captions {
            store.push_f64(c.caption_id.clone(), &self.encode_text(c)?)?;
        }
        store.normalize()
    }

    pub fn image_store(&self, scenes: &[SceneSpec], large_scale: f64, model_id: &str) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(model_id, Modality::Image, self.cfg.dim)?;
        for s in scenes {
            store.push_f64(s.image_id.clone(), &self.encode_image(s, large_scale)?)?;
        }
        store.normalize()
    }

    /// Single-object embeddings keyed by object name. Both encoders reduce
    /// to the object's basis vector for a lone object.
    pub fn object_store<'a>(
        &self,
        objects: impl IntoIterator<Item = &'a str>,
        modality: Modality,
        model_id: &str,
    ) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(model_id, modality, self.cfg.dim)?;
        for o in objects {
            store.push_f64(o, self.basis(o)?)?;
        }
        store.normalize()
    }
}

impl crate::matching::TextEmbedder for MockEncoder {
    fn embed_text(&self, caption: &CaptionSpec) -> Result<Vec<f64>> {
        self.encode_text(caption)
    }
}
