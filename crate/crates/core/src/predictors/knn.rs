use serde::{Deserialize, Serialize};

use super::features::SparseVec;
use crate::{Error, Result};

/// k-nearest-neighbour regressor over cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub rows: Vec<SparseVec>,
    pub targets: Vec<f64>,
}

fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

pub fn fit_knn(rows: Vec<SparseVec>, targets: Vec<f64>, k: usize) -> Result<Knn> {
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: targets.len(),
        });
    }
    if k == 0 || k > rows.len() {
        return Err(Error::InvalidK { k, rows: rows.len() });
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    Ok(Knn { k, rows, targets })
}

impl Knn {
    /// Mean target of the `k` most similar rows; equal similarities go to the lower row index.
    pub fn predict_raw(&self, query: &SparseVec) -> f64 {
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (cosine(query, r), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored[..self.k].iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / self.k as f64
    }
}
