//! Post-fit inference and evaluation: K-means community detection on the
//! rows of `U`, edge selection from the support of `B`, and the scores used
//! to compare fits against ground truth.

use std::collections::{BTreeSet, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::glm::{EdgeFamily, NetworkDataset};
use crate::optimizer::FitResult;
use crate::simulation::SimTruth;
use crate::tensor::{mode3_product, Matrix, Tensor3};

pub const DEFAULT_RESTARTS: usize = 20;
const MAX_LLOYD_ITERS: usize = 300;

/// K-means partition of the rows of a factor matrix. Labels are `0..k`,
/// numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityAssignment {
    pub labels: Vec<usize>,
    /// `k × r` cluster centers, row `c` belonging to label `c`.
    pub centers: Matrix,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].to_vec()];
    while centers.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // Every point already coincides with a center.
            Err(_) => rng.random_range(0..n),
        };
        centers.push(points[next].to_vec());
    }
    centers
}

fn lloyd(points: &[&[f64]], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let n = points.len();
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points[a], &centers[labels[a]])
                            .total_cmp(&sq_dist(points[b], &centers[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("n ≥ 1");
                centers[c] = points[far].to_vec();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &c)| sq_dist(p, &centers[c]))
        .sum();
    (labels, centers, inertia)
}

/// Renumbers labels by first appearance and permutes centers to match.
fn canonicalize(labels: Vec<usize>, centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut order = Vec::new();
    for &l in &labels {
        if !map.contains_key(&l) {
            map.insert(l, order.len());
            order.push(l);
        }
    }
    for c in 0..centers.len() {
        if !map.contains_key(&c) {
            map.insert(c, order.len());
            order.push(c);
        }
    }
    let new_labels = labels.iter().map(|l| map[l]).collect();
    let new_centers = order.iter().map(|&c| centers[c].clone()).collect();
    (new_labels, new_centers)
}

/// Lloyd's K-means with k-means++ seeding on the rows of `u`, best of
/// `restarts` runs by inertia (ties keep the earliest restart).
pub fn detect_communities(
    u: &Matrix,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<CommunityAssignment> {
    let n = u.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "cluster count {k} must lie in 1..={n}"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    let points: Vec<&[f64]> = (0..n).map(|i| u.row(i)).collect();
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let seeds = plus_plus_seeds(&points, k, &mut rng);
        let run = lloyd(&points, seeds);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (labels, centers, inertia) = best.expect("restarts ≥ 1");
    let (labels, centers) = canonicalize(labels, centers);
    let dim = u.cols();
    let centers = Matrix::new(k, dim, centers.into_iter().flatten().collect())?;
    Ok(CommunityAssignment {
        labels,
        centers,
        inertia,
    })
}

/// Inertia for every `K` in `1..=k_max`, for elbow inspection.
pub fn inertia_curve(
    u: &Matrix,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    (1..=k_max.min(u.rows()))
        .map(|k| Ok((k, detect_communities(u, k, restarts, seed)?.inertia)))
        .collect()
}

/// Set of `(j, j', k)` index triples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSupport {
    pub entries: BTreeSet<(usize, usize, usize)>,
}

impl EdgeSupport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, idx: &(usize, usize, usize)) -> bool {
        self.entries.contains(idx)
    }
}

impl FromIterator<(usize, usize, usize)> for EdgeSupport {
    fn from_iter<T: IntoIterator<Item = (usize, usize, usize)>>(iter: T) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Nonzero support of `b`, never including diagonal fibers. With
/// `upper_only` (symmetric fits) each mirrored pair is reported once as
/// `j < j'`.
pub fn select_edges(b: &Tensor3, upper_only: bool) -> EdgeSupport {
    b.nonzeros()
        .into_iter()
        .map(|(idx, _)| b.unravel(idx))
        .filter(|&(i, j, _)| i != j)
        .map(|(i, j, k)| if upper_only && i > j { (j, i, k) } else { (i, j, k) })
        .collect()
}

/// `2TP / (2TP + FP + FN)`; 1.0 when both supports are empty.
pub fn f1_support(est: &EdgeSupport, truth: &EdgeSupport) -> f64 {
    if est.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let tp = est.entries.intersection(&truth.entries).count() as f64;
    let fp = est.len() as f64 - tp;
    let fn_ = truth.len() as f64 - tp;
    2.0 * tp / (2.0 * tp + fp + fn_)
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(a; b) / √(H(a) H(b))`. Two
/// single-cluster partitions score 1.0; a single-cluster partition against
/// a non-trivial one scores 0.0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_mismatch("nmi label vectors", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidData("nmi of empty partitions".into()));
    }
    let total = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), total);
    let hb = entropy(cb.values().copied(), total);
    if ca.len() == 1 && cb.len() == 1 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    // Partitions equal up to relabeling: I = H(a) = H(b) exactly.
    if joint.len() == ca.len() && joint.len() == cb.len() {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    let mut keys: Vec<_> = joint.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let pxy = joint[&key] as f64 / total;
        let px = ca[&key.0] as f64 / total;
        let py = cb[&key.1] as f64 / total;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationErrors {
    /// `N⁻¹ Σ_i ‖μ⁽ⁱ⁾ - μ̂⁽ⁱ⁾‖_F`.
    pub mu_error: f64,
    /// `N⁻¹ Σ_i ‖μ⁽ⁱ⁾ - μ̂⁽ⁱ⁾‖_F / ‖μ⁽ⁱ⁾‖_F`.
    pub mu_error_normalized: f64,
    /// `N⁻¹ Σ_i ‖μ⁽ⁱ⁾ - μ̂⁽ⁱ⁾‖_F / √(n(n-1))`, the per-edge root mean square.
    pub mu_rmse: f64,
    pub theta_error: f64,
    pub b_error: f64,
}

/// Errors of `(Θ̂, B̂)` against ground truth over off-diagonal entries only.
pub fn estimation_errors_for(
    theta_hat: &Matrix,
    b_hat: &Tensor3,
    truth: &SimTruth,
    data: &NetworkDataset,
) -> Result<EstimationErrors> {
    let n = data.num_nodes();
    let p = data.num_covariates();
    if theta_hat.shape() != (n, n) || truth.theta_star.shape() != (n, n) {
        return Err(dim_mismatch(
            "theta estimate",
            format!("({n}, {n})"),
            format!("{:?}", theta_hat.shape()),
        ));
    }
    if b_hat.dims() != (n, n, p) || truth.b_star.dims() != (n, n, p) {
        return Err(dim_mismatch(
            "coefficient estimate",
            format!("({n}, {n}, {p})"),
            format!("{:?}", b_hat.dims()),
        ));
    }
    let family = data.family();
    let big_n = data.num_subjects();
    let edges = (n * n.saturating_sub(1)).max(1) as f64;
    let mut mu_sum = 0.0;
    let mut mu_norm_sum = 0.0;
    for i in 0..big_n {
        let x = data.covariates().row(i);
        let eta_hat = theta_hat.add(&mode3_product(b_hat, x)?)?;
        let eta_true = truth.true_predictor(data, i)?;
        let (mut diff2, mut ref2) = (0.0, 0.0);
        for r in 0..n {
            for c in 0..n {
                if r == c {
                    continue;
                }
                let mu = family.inverse_link(eta_true[(r, c)]);
                let mu_hat = family.inverse_link(eta_hat[(r, c)]);
                diff2 += (mu - mu_hat) * (mu - mu_hat);
                ref2 += mu * mu;
            }
        }
        mu_sum += diff2.sqrt();
        mu_norm_sum += if ref2 > 0.0 { (diff2 / ref2).sqrt() } else { 0.0 };
    }
    let mu_error = mu_sum / big_n as f64;
    Ok(EstimationErrors {
        mu_error,
        mu_error_normalized: mu_norm_sum / big_n as f64,
        mu_rmse: mu_error / edges.sqrt(),
        theta_error: theta_hat.sub(&truth.theta_star)?.offdiag_frobenius(),
        b_error: b_hat.sub(&truth.b_star)?.offdiag_frobenius(),
    })
}

pub fn estimation_errors(
    fit: &FitResult,
    truth: &SimTruth,
    data: &NetworkDataset,
) -> Result<EstimationErrors> {
    estimation_errors_for(&fit.theta(), &fit.b, truth, data)
}

/// Mean edge value `g⁻¹(Θ)` entry-wise.
pub fn mean_matrix(theta: &Matrix, family: EdgeFamily) -> Matrix {
    theta.map(|v| family.inverse_link(v))
}
