//! Embedding stores: id-addressed collections of fixed-dimension vectors
//! exchanged between model exporters and the probes.
//!
//! Two on-disk encodings are supported. The binary `EMBS` format is the
//! canonical one and round-trips byte for byte; the JSONL form exists for
//! inspection and small hand-written fixtures.

mod binary;
mod jsonl;
mod similarity;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binary::{decode_binary, encode_binary, MAGIC, VERSION};
pub use jsonl::{decode_jsonl, encode_jsonl};
pub use similarity::{cosine_matrix, SimilarityMatrix, UnitRows};

/// Tolerance on `| |v| - 1 |` for vectors in a store flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Longest id the u16 length prefix can carry.
pub const MAX_ID_BYTES: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub(crate) fn code(self) -> u8 {
        match self {
            Modality::Text => 0,
            Modality::Image => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Text),
            1 => Some(Modality::Image),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreFormat {
    Binary,
    Jsonl,
}

impl FromStr for StoreFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(StoreFormat::Binary),
            "jsonl" => Ok(StoreFormat::Jsonl),
            other => Err(Error::Value(format!("unknown store format `{other}`"))),
        }
    }
}

/// An ordered, id-unique collection of `dim`-dimensional f32 vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    model_id: String,
    modality: Modality,
    dim: usize,
    normalized: bool,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id
            && self.modality == other.modality
            && self.dim == other.dim
            && self.normalized == other.normalized
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingStore {
    pub fn new(model_id: impl Into<String>, modality: Modality, dim: usize) -> Result<Self> {
        let model_id = model_id.into();
        if dim == 0 {
            return Err(Error::Value("store dimension must be at least 1".into()));
        }
        if dim > u32::MAX as usize {
            return Err(Error::Value(format!("dimension {dim} does not fit in u32")));
        }
        if model_id.len() > MAX_ID_BYTES {
            return Err(Error::Value("model id longer than 65535 bytes".into()));
        }
        Ok(Self {
            model_id,
            modality,
            dim,
            normalized: false,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Appends a record, enforcing the dimension, id uniqueness and finiteness.
    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Dim { expected: self.dim, actual: vector.len() });
        }
        if id.len() > MAX_ID_BYTES {
            return Err(Error::Value(format!("id of {} bytes exceeds 65535", id.len())));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Value(format!("non-finite component {bad} in `{id}`")));
        }
        if self.normalized {
            check_unit(&id, vector)?;
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    /// Like [`push`](Self::push) for f64 vectors, rounding to f32.
    pub fn push_f64(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let v: Vec<f32> = vector.iter().map(|x| *x as f32).collect();
        self.push(id, &v)
    }

    /// Sets the normalized flag after checking every vector is unit length.
    pub fn mark_normalized(mut self) -> Result<Self> {
        for (id, v) in self.iter() {
            check_unit(id, v)?;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.vector(i))
    }

    /// Vector for `id`, or [`Error::Key`].
    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| Error::Key(id.to_string()))
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &[f32])> + '_ {
        self.ids.iter().zip(self.data.chunks_exact(self.dim)).map(|(id, v)| (id.as_str(), v))
    }

    /// Scales every vector to unit L2 norm. Vectors already within
    /// [`NORM_TOLERANCE`] of unit length are kept bit-for-bit, which makes
    /// the operation idempotent.
    pub fn normalize(&self) -> Result<Self> {
        let mut out = self.clone();
        for (i, chunk) in out.data.chunks_exact_mut(self.dim).enumerate() {
            let n = crate::kernels::dot_f32_wide(chunk, chunk).sqrt();
            if n == 0.0 {
                return Err(Error::Value(format!("zero vector for id `{}`", self.ids[i])));
            }
            if (n - 1.0).abs() <= NORM_TOLERANCE {
                continue;
            }
            for x in chunk.iter_mut() {
                *x = (f64::from(*x) / n) as f32;
            }
        }
        out.normalized = true;
        Ok(out)
    }
}

fn check_unit(id: &str, v: &[f32]) -> Result<()> {
    let n = crate::kernels::dot_f32_wide(v, v).sqrt();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::Value(format!("vector `{id}` has norm {n} but the store is flagged normalized")));
    }
    Ok(())
}

/// Reads a store, detecting the encoding from the leading bytes.
pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return decode_binary(&bytes);
    }
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => decode_jsonl(&bytes),
        _ => Err(Error::Format(format!("{} is neither an EMBS file nor a JSONL store", path.display()))),
    }
}

/// Writes `store` atomically (temp file + rename in the target directory).
pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>, format: StoreFormat) -> Result<()> {
    let bytes = match format {
        StoreFormat::Binary => encode_binary(store),
        StoreFormat::Jsonl => encode_jsonl(store),
    };
    write_atomic(path.as_ref(), &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> EmbeddingStore {
        let mut s = EmbeddingStore::new("m", Modality::Text, 2).unwrap();
        s.push("a", &[1.0, 0.0]).unwrap();
        s.push("b", &[0.0, 1.0]).unwrap();
        s
    }

    #[test]
    fn push_enforces_invariants() {
        let mut s = two_by_two();
        assert!(matches!(s.push("a", &[1.0, 1.0]), Err(Error::DuplicateId(_))));
        assert!(matches!(s.push("c", &[1.0]), Err(Error::Dim { expected: 2, actual: 1 })));
        assert!(matches!(s.push("c", &[f32::NAN, 0.0]), Err(Error::Value(_))));
        assert!(EmbeddingStore::new("m", Modality::Text, 0).is_err());
    }

    #[test]
    fn normalize_three_four_five() {
        let mut s = EmbeddingStore::new("m", Modality::Image, 2).unwrap();
        s.push("x", &[3.0, 4.0]).unwrap();
        let n = s.normalize().unwrap();
        assert!(n.is_normalized());
        assert_eq!(n.vector(0), &[0.6f32, 0.8f32]);
    }

    #[test]
    fn normalize_is_idempotent_and_keeps_unit_vectors() {
        let mut s = two_by_two();
        s.push("c", &[0.3, -2.7]).unwrap();
        s.push("d", &[1e-3, 7.0]).unwrap();
        let once = s.normalize().unwrap();
        let twice = once.normalize().unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(a.0, b.0);
            for (x, y) in a.1.iter().zip(b.1) {
                assert!((f64::from(*x) - f64::from(*y)).abs() <= 1e-12);
            }
        }
        assert_eq!(once.vector(0), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero_vector_by_id() {
        let mut s = two_by_two();
        s.push("zero", &[0.0, 0.0]).unwrap();
        let err = s.normalize().unwrap_err();
        assert!(err.to_string().contains("zero"), "{err}");
    }

    #[test]
    fn mark_normalized_checks_norms() {
        assert!(two_by_two().mark_normalized().is_ok());
        let mut s = two_by_two();
        s.push("c", &[2.0, 0.0]).unwrap();
        assert!(matches!(s.mark_normalized(), Err(Error::Value(_))));
    }
}
