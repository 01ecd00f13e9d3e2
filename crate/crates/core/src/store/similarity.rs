use rayon::prelude::*;

use super::EmbeddingStore;
use crate::error::{Error, Result};

/// Row-major f64 copies of a store's vectors scaled to unit length.
#[derive(Debug, Clone)]
pub struct UnitRows {
    dim: usize,
    data: Vec<f64>,
}

impl UnitRows {
    pub fn from_store(store: &EmbeddingStore) -> Result<Self> {
        let mut data = Vec::with_capacity(store.len() * store.dim());
        for (id, v) in store.iter() {
            let n = crate::kernels::dot_f32_wide(v, v).sqrt();
            if n == 0.0 {
                return Err(Error::Value(format!("zero vector for id `{id}`")));
            }
            data.extend(v.iter().map(|x| f64::from(*x) / n));
        }
        Ok(Self { dim: store.dim(), data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Dim { expected: dim, actual: r.len() });
            }
            let u = crate::kernels::unit(r).ok_or_else(|| Error::Value(format!("zero vector at row {i}")))?;
            data.extend(u);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `query` (already unit) against every row.
    pub fn scores(&self, query: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|g| crate::kernels::dot(query, g)).collect()
    }

    /// Best-matching row for a unit `query`; the lowest index wins ties.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in self.data.chunks_exact(self.dim).enumerate() {
            let s = crate::kernels::dot(query, g);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        best
    }
}

/// Query-by-gallery cosine similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub query_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.gallery_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = self.values[i * c + j];
            }
        }
        Self { query_ids: self.gallery_ids.clone(), gallery_ids: self.query_ids.clone(), values }
    }
}

/// Cosine similarity of every query against every gallery vector. Rows are
/// computed in parallel, each with a sequential reduction.
pub fn cosine_matrix(queries: &EmbeddingStore, gallery: &EmbeddingStore) -> Result<SimilarityMatrix> {
    if queries.dim() != gallery.dim() {
        return Err(Error::Dim { expected: queries.dim(), actual: gallery.dim() });
    }
    let q = UnitRows::from_store(queries)?;
    let g = UnitRows::from_store(gallery)?;
    let cols = g.len();
    let mut values = vec![0.0; q.len() * cols];
    if cols > 0 {
        values.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
            let qi = q.row(i);
            for (j, out) in row.iter_mut().enumerate() {
                *out = crate::kernels::dot(qi, g.row(j));
            }
        });
    }
    Ok(SimilarityMatrix { query_ids: queries.ids().to_vec(), gallery_ids: gallery.ids().to_vec(), values })
}
