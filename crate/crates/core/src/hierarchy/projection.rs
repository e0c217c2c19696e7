//! Dimensionality reduction ahead of mixture fitting.
//!
//! [`Projector`] is the plug point; [`PcaProjector`] is the deterministic
//! default (power iteration with deflation on the centered data).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::providers::EmbeddingVector;
use crate::seed::rng;
use crate::text::{dot, norm};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub chunk_id: String,
    pub z: Vec<f64>,
    pub projector_id: String,
}

pub trait Projector: Send + Sync {
    fn projector_id(&self) -> String;
    /// Maps each row of `data` to `target_dim` coordinates.
    fn fit_transform(&self, data: &[Vec<f64>], target_dim: usize) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
pub struct PcaProjector {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PcaProjector {
    fn default() -> Self {
        PcaProjector {
            seed: 0,
            max_iter: 1000,
            tol: 1e-12,
        }
    }
}

impl PcaProjector {
    pub fn new(seed: u64) -> Self {
        PcaProjector {
            seed,
            ..Default::default()
        }
    }

    /// Top `k` principal axes of the centered rows, sign-normalized so the
    /// largest-magnitude coordinate of each axis is positive.
    pub fn components(&self, centered: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
        let dim = centered.first().map_or(0, Vec::len);
        let mut r = rng(self.seed);
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
        let orthogonalize = |v: &mut Vec<f64>, comps: &[Vec<f64>]| {
            for c in comps {
                let p = dot(v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        };
        for _ in 0..k {
            let mut v: Vec<f64> = (0..dim).map(|_| r.random::<f64>() - 0.5).collect();
            orthogonalize(&mut v, &comps);
            normalize(&mut v);
            for _ in 0..self.max_iter {
                // w = Xᵀ X v
                let mut w = vec![0.0; dim];
                for row in centered {
                    let s = dot(row, &v);
                    w.iter_mut().zip(row).for_each(|(a, b)| *a += s * b);
                }
                orthogonalize(&mut w, &comps);
                if norm(&w) < 1e-300 {
                    // remaining variance exhausted; keep the orthogonal start vector
                    break;
                }
                normalize(&mut w);
                let delta = 1.0 - dot(&v, &w).abs();
                v = w;
                if delta < self.tol {
                    break;
                }
            }
            let pivot = v
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            comps.push(v);
        }
        comps
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn center(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = data.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for row in data {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= data.len() as f64);
    data.iter()
        .map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect()
}

impl Projector for PcaProjector {
    fn projector_id(&self) -> String {
        format!("pca-power:{}", self.seed)
    }

    fn fit_transform(&self, data: &[Vec<f64>], target_dim: usize) -> Result<Vec<Vec<f64>>> {
        let centered = center(data);
        let comps = self.components(&centered, target_dim);
        Ok(centered
            .iter()
            .map(|row| comps.iter().map(|c| dot(row, c)).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Spearman correlation between source and projected pairwise distances.
    pub rank_correlation: f64,
}

const DIAGNOSTIC_POINTS: usize = 300;

pub fn reduce_dimensions(
    ids: &[String],
    vectors: &[EmbeddingVector],
    target_dim: usize,
    projector: &dyn Projector,
) -> Result<Projection> {
    if vectors.len() < 2 {
        return Err(Error::validation("reduce_dimensions needs at least 2 vectors"));
    }
    if ids.len() != vectors.len() {
        return Err(Error::validation("one id per vector required"));
    }
    let source_dim = vectors[0].values.len();
    if vectors.iter().any(|v| v.values.len() != source_dim) {
        return Err(Error::validation("source vectors differ in dimension"));
    }
    if target_dim == 0 || target_dim >= source_dim {
        return Err(Error::validation(format!(
            "target_dim {target_dim} must be positive and below source dimension {source_dim}"
        )));
    }
    let data: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let projected = projector.fit_transform(&data, target_dim)?;
    let m = data.len().min(DIAGNOSTIC_POINTS);
    let rank_correlation = spearman(&pairwise(&data[..m]), &pairwise(&projected[..m]));
    let projector_id = projector.projector_id();
    Ok(Projection {
        points: ids
            .iter()
            .zip(projected)
            .map(|(id, z)| ProjectedPoint {
                chunk_id: id.clone(),
                z,
                projector_id: projector_id.clone(),
            })
            .collect(),
        rank_correlation,
    })
}

fn pairwise(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(d.sqrt());
        }
    }
    out
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && (xs[idx[j + 1]] - xs[idx[i]]).abs() <= 1e-12 {
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

/// Spearman rank correlation with average ranks for ties; 1.0 when either
/// side is constant and both are identical in rank, 0.0 otherwise.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 {
        return 1.0;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return if ra == rb { 1.0 } else { 0.0 };
    }
    num / (va * vb).sqrt()
}
