//! Gaussian mixtures fitted by expectation-maximization, with BIC model
//! selection over the component count.
//!
//! Log-likelihood `L(Θ) = Σ_i ln Σ_k π_k N(z_i | μ_k, Σ_k)`; E-step
//! responsibilities `γ_ik ∝ π_k N(z_i | μ_k, Σ_k)`; M-step weighted means,
//! covariances (plus `ε·I`) and mixing weights; `BIC(K) = −2 ln L̂ + K ln N`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, log_det_from_cholesky, mahalanobis_sq};
use super::projection::ProjectedPoint;
use crate::exec::Execution;
use crate::seed::{derive_seed, rng};
use crate::{Error, Result};

/// Full covariances up to this dimension, diagonal above.
pub const FULL_COVARIANCE_MAX_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

impl CovarianceKind {
    pub fn for_dim(dim: usize) -> Self {
        if dim <= FULL_COVARIANCE_MAX_DIM {
            CovarianceKind::Full
        } else {
            CovarianceKind::Diagonal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Absolute change in total log-likelihood treated as convergence.
    pub tol: f64,
    /// Ridge `ε` added to every covariance diagonal.
    pub reg: f64,
    pub penalty: BicPenalty,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 300,
            tol: 1e-7,
            reg: 1e-6,
            penalty: BicPenalty::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub k: usize,
    pub dim: usize,
    pub covariance_kind: CovarianceKind,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim × dim` matrices (off-diagonals zero for `Diagonal`).
    pub covariances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub penalty: BicPenalty,
    /// Parameter count `p` entering the BIC penalty.
    pub n_parameters: usize,
    pub n_points: usize,
    pub iteration_trace: Vec<f64>,
    pub converged: bool,
    pub reg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftAssignment {
    /// `N × K` responsibilities.
    pub gamma: Vec<Vec<f64>>,
}

impl SoftAssignment {
    pub fn hard_labels(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(k, _)| k)
            })
            .collect()
    }
}

/// `−2 ln L̂ + p ln N`, where `p` is the penalized parameter count.
pub fn bic(log_likelihood: f64, p: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + p as f64 * (n as f64).ln()
}

/// What the BIC penalty counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicPenalty {
    /// Every free parameter: means, covariance entries and K − 1 weights.
    #[default]
    FreeParameters,
    /// The component count K alone.
    Components,
}

impl BicPenalty {
    pub fn count(self, k: usize, dim: usize) -> usize {
        match self {
            BicPenalty::Components => k,
            BicPenalty::FreeParameters => {
                let cov = match CovarianceKind::for_dim(dim) {
                    CovarianceKind::Full => dim * (dim + 1) / 2,
                    CovarianceKind::Diagonal => dim,
                };
                k * (dim + cov) + k - 1
            }
        }
    }
}

/// Per-component cached factorization.
struct Factor {
    chol: Vec<f64>,
    log_norm: f64,
}

fn factorize(cov: &[f64], dim: usize, weight: f64) -> Result<Factor> {
    let chol = cholesky(cov, dim)
        .ok_or_else(|| Error::DegenerateFit("covariance not positive definite after regularization".into()))?;
    let log_det = log_det_from_cholesky(&chol, dim);
    Ok(Factor {
        log_norm: weight.ln() - 0.5 * (dim as f64 * (2.0 * PI).ln() + log_det),
        chol,
    })
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
}

/// E-step: fills `gamma` (row-major N×K) and returns
/// `(total log-likelihood, per-point log density)`.
fn e_step(data: &[f64], dim: usize, params: &Params, gamma: &mut [f64]) -> Result<(f64, Vec<f64>)> {
    let k = params.weights.len();
    let n = data.len() / dim;
    let factors = params
        .covs
        .iter()
        .zip(&params.weights)
        .map(|(c, &w)| factorize(c, dim, w))
        .collect::<Result<Vec<_>>>()?;
    let mut diff = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut logs = vec![0.0; k];
    let mut point_ll = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let x = &data[i * dim..(i + 1) * dim];
        for (j, f) in factors.iter().enumerate() {
            for d in 0..dim {
                diff[d] = x[d] - params.means[j][d];
            }
            logs[j] = f.log_norm - 0.5 * mahalanobis_sq(&f.chol, dim, &diff, &mut scratch);
        }
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = &mut gamma[i * k..(i + 1) * k];
        let mut sum = 0.0;
        for (g, l) in row.iter_mut().zip(&logs) {
            *g = (l - m).exp();
            sum += *g;
        }
        let lse = m + sum.ln();
        if !lse.is_finite() {
            return Err(Error::DegenerateFit("non-finite point likelihood".into()));
        }
        row.iter_mut().for_each(|g| *g /= sum);
        point_ll.push(lse);
        total += lse;
    }
    Ok((total, point_ll))
}

fn column_variances(data: &[f64], dim: usize) -> Vec<f64> {
    let n = (data.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for row in data.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; dim];
    for row in data.chunks(dim) {
        for d in 0..dim {
            var[d] += (row[d] - mean[d]).powi(2) / n;
        }
    }
    var
}

fn diag_matrix(diag: &[f64], reg: f64) -> Vec<f64> {
    let dim = diag.len();
    let mut m = vec![0.0; dim * dim];
    for d in 0..dim {
        m[d * dim + d] = diag[d] + reg;
    }
    m
}

/// Threshold below which a component is considered dead.
const DEAD_MASS: f64 = 1e-8;

/// M-step; returns `true` if a dead component had to be re-seeded.
fn m_step(data: &[f64], dim: usize, gamma: &[f64], point_ll: &[f64], kind: CovarianceKind, reg: f64, params: &mut Params) -> bool {
    let k = params.weights.len();
    let n = data.len() / dim;
    let mut rescued = false;
    let global_var = column_variances(data, dim);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| gamma[i * k + j]).sum();
        if nk <= DEAD_MASS {
            // re-seed at the worst-explained point
            let worst = (0..n)
                .min_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]))
                .unwrap_or(0);
            params.means[j] = data[worst * dim..(worst + 1) * dim].to_vec();
            params.covs[j] = diag_matrix(&global_var, reg);
            params.weights[j] = 1.0 / n as f64;
            rescued = true;
            continue;
        }
        let mut mu = vec![0.0; dim];
        for i in 0..n {
            let g = gamma[i * k + j];
            for d in 0..dim {
                mu[d] += g * data[i * dim + d];
            }
        }
        mu.iter_mut().for_each(|m| *m /= nk);
        let mut cov = vec![0.0; dim * dim];
        let mut diff = vec![0.0; dim];
        for i in 0..n {
            let g = gamma[i * k + j];
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                diff[d] = data[i * dim + d] - mu[d];
            }
            match kind {
                CovarianceKind::Full => {
                    for a in 0..dim {
                        let ga = g * diff[a];
                        for b in 0..=a {
                            cov[a * dim + b] += ga * diff[b];
                        }
                    }
                }
                CovarianceKind::Diagonal => {
                    for a in 0..dim {
                        cov[a * dim + a] += g * diff[a] * diff[a];
                    }
                }
            }
        }
        for a in 0..dim {
            for b in 0..=a {
                let v = cov[a * dim + b] / nk;
                cov[a * dim + b] = v;
                cov[b * dim + a] = v;
            }
            cov[a * dim + a] += reg;
        }
        params.means[j] = mu;
        params.covs[j] = cov;
        params.weights[j] = nk / n as f64;
    }
    let total: f64 = params.weights.iter().sum();
    params.weights.iter_mut().for_each(|w| *w /= total);
    rescued
}

/// k-means++ seeding followed by a few Lloyd iterations.
fn init_means(data: &[f64], dim: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = data.len() / dim;
    let mut r = rng(seed);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers: Vec<Vec<f64>> = vec![row(r.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            r.random_range(0..n)
        };
        centers.push(row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(row(i), &centers[centers.len() - 1]));
        }
    }
    for _ in 0..10 {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = (0..k)
                .min_by(|&a, &b| sq(row(i), &centers[a]).total_cmp(&sq(row(i), &centers[b])))
                .unwrap_or(0);
            counts[c] += 1;
            sums[c].iter_mut().zip(row(i)).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    centers
}

fn flatten(points: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::validation("points must have positive dimension"));
    }
    let mut data = Vec::with_capacity(points.len() * dim);
    for p in points {
        if p.len() != dim {
            return Err(Error::validation("points differ in dimension"));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("points must be finite"));
        }
        data.extend_from_slice(p);
    }
    Ok((data, dim))
}

/// Fits a `k`-component mixture to raw coordinate rows.
pub fn fit_em(points: &[Vec<f64>], k: usize, seed: u64, config: &EmConfig) -> Result<(GaussianMixture, SoftAssignment)> {
    if k == 0 {
        return Err(Error::validation("K must be positive"));
    }
    if points.len() < k {
        return Err(Error::validation(format!("N = {} is smaller than K = {k}", points.len())));
    }
    let (data, dim) = flatten(points)?;
    let n = points.len();
    let kind = CovarianceKind::for_dim(dim);
    let global_var = column_variances(&data, dim);
    let mut params = Params {
        weights: vec![1.0 / k as f64; k],
        means: init_means(&data, dim, k, seed),
        covs: vec![diag_matrix(&global_var, config.reg); k],
    };
    let mut gamma = vec![0.0; n * k];
    let (mut ll, mut point_ll) = e_step(&data, dim, &params, &mut gamma)?;
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..config.max_iter {
        let mut next = Params {
            weights: params.weights.clone(),
            means: params.means.clone(),
            covs: params.covs.clone(),
        };
        m_step(&data, dim, &gamma, &point_ll, kind, config.reg, &mut next);
        let mut next_gamma = vec![0.0; n * k];
        let (next_ll, next_point_ll) = e_step(&data, dim, &next, &mut next_gamma)?;
        if next_ll < ll {
            // only the ε·I ridge or a dead-component re-seed can lower the
            // likelihood; both happen at a stationary point, so stop here
            converged = true;
            break;
        }
        let delta = next_ll - ll;
        params = next;
        gamma = next_gamma;
        point_ll = next_point_ll;
        ll = next_ll;
        trace.push(ll);
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    let gamma_rows: Vec<Vec<f64>> = gamma.chunks(k).map(<[f64]>::to_vec).collect();
    let n_parameters = config.penalty.count(k, dim);
    Ok((
        GaussianMixture {
            k,
            dim,
            covariance_kind: kind,
            weights: params.weights,
            means: params.means,
            covariances: params.covs,
            log_likelihood: ll,
            bic: bic(ll, n_parameters, n),
            penalty: config.penalty,
            n_parameters,
            n_points: n,
            iteration_trace: trace,
            converged,
            reg: config.reg,
        },
        SoftAssignment { gamma: gamma_rows },
    ))
}

fn coords(points: &[ProjectedPoint]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.projector_id != first.projector_id || p.z.len() != first.z.len()) {
            return Err(Error::validation("points come from different projections"));
        }
    }
    Ok(points.iter().map(|p| p.z.clone()).collect())
}

pub fn fit_gmm_em(points: &[ProjectedPoint], k: usize, seed: u64) -> Result<(GaussianMixture, SoftAssignment)> {
    fit_em(&coords(points)?, k, seed, &EmConfig::default())
}

pub fn soft_assign_rows(model: &GaussianMixture, points: &[Vec<f64>]) -> Result<SoftAssignment> {
    if points.iter().any(|p| p.len() != model.dim) {
        return Err(Error::validation(format!("model expects dimension {}", model.dim)));
    }
    if points.is_empty() {
        return Ok(SoftAssignment { gamma: vec![] });
    }
    let (data, dim) = flatten(points)?;
    let params = Params {
        weights: model.weights.clone(),
        means: model.means.clone(),
        covs: model.covariances.clone(),
    };
    let mut gamma = vec![0.0; points.len() * model.k];
    e_step(&data, dim, &params, &mut gamma)?;
    Ok(SoftAssignment {
        gamma: gamma.chunks(model.k).map(<[f64]>::to_vec).collect(),
    })
}

pub fn soft_assign(model: &GaussianMixture, points: &[ProjectedPoint]) -> Result<SoftAssignment> {
    soft_assign_rows(model, &points.iter().map(|p| p.z.clone()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub n_restarts: usize,
    pub em: EmConfig,
    pub execution: Execution,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_restarts: 4,
            em: EmConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicPoint {
    pub k: usize,
    pub bic: Option<f64>,
    pub log_likelihood: Option<f64>,
    /// Why no admissible fit exists for this K, if none does.
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub k_star: usize,
    pub best: GaussianMixture,
    pub assignment: SoftAssignment,
    pub curve: Vec<BicPoint>,
}

/// Smallest effective component mass a fit may have: a full covariance needs
/// `dim + 1` points to be non-singular, a diagonal one needs two.
pub fn min_component_mass(dim: usize) -> f64 {
    match CovarianceKind::for_dim(dim) {
        CovarianceKind::Full => (dim + 1) as f64,
        CovarianceKind::Diagonal => 2.0,
    }
}

fn admissible(model: &GaussianMixture) -> bool {
    if model.k == 1 {
        return true;
    }
    let floor = min_component_mass(model.dim) - 1e-9;
    model.weights.iter().all(|w| w * model.n_points as f64 >= floor)
}

/// Fits K = 1..=k_max (each with `n_restarts` seeded restarts, best likelihood
/// kept) and returns the BIC minimizer, ties toward smaller K. Fits with a
/// component too small to support its covariance are not admissible.
pub fn select_cluster_count_rows(points: &[Vec<f64>], k_max: usize, seed: u64, config: &SelectionConfig) -> Result<Selection> {
    if points.len() < 2 {
        return Err(Error::validation("select_cluster_count needs at least 2 points"));
    }
    if k_max == 0 {
        return Err(Error::validation("K_max must be positive"));
    }
    let k_max = k_max.min(points.len());
    let restarts = config.n_restarts.max(1);
    let fits = config.execution.map_range(k_max * restarts, |job| {
        let k = job / restarts + 1;
        let r = job % restarts;
        fit_em(points, k, derive_seed(seed, "gmm", &format!("{k}/{r}")), &config.em)
    });
    let mut by_k: Vec<Option<(GaussianMixture, SoftAssignment)>> = vec![None; k_max];
    let mut curve = Vec::with_capacity(k_max);
    let mut first_error: Option<Error> = None;
    for (job, fit) in fits.into_iter().enumerate() {
        let slot = &mut by_k[job / restarts];
        match fit {
            Ok((m, g)) if admissible(&m) => {
                if slot.as_ref().is_none_or(|(b, _)| m.log_likelihood > b.log_likelihood) {
                    *slot = Some((m, g));
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let mut best: Option<(GaussianMixture, SoftAssignment)> = None;
    for (i, slot) in by_k.into_iter().enumerate() {
        let k = i + 1;
        match slot {
            Some((m, g)) => {
                curve.push(BicPoint {
                    k,
                    bic: Some(m.bic),
                    log_likelihood: Some(m.log_likelihood),
                    rejected: None,
                });
                if best.as_ref().is_none_or(|(b, _)| m.bic < b.bic) {
                    best = Some((m, g));
                }
            }
            None => curve.push(BicPoint {
                k,
                bic: None,
                log_likelihood: None,
                rejected: Some("no admissible restart (degenerate or undersized component)".into()),
            }),
        }
    }
    match best {
        Some((best, assignment)) => Ok(Selection {
            k_star: best.k,
            best,
            assignment,
            curve,
        }),
        None => Err(first_error.unwrap_or_else(|| Error::DegenerateFit("no admissible mixture for any K".into()))),
    }
}

pub fn select_cluster_count(points: &[ProjectedPoint], k_max: usize, seed: u64, config: &SelectionConfig) -> Result<Selection> {
    select_cluster_count_rows(&coords(points)?, k_max, seed, config)
}
