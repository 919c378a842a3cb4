//! Ground-truth generators for the simulation protocols and the replication
//! runner that scores fits against them.
//!
//! Every generator is a pure function of its config: the random stream is
//! `ChaCha8(seed)` on stream 0, and replication `r` of a study uses stream
//! `r` of the same seed.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    detect_communities, estimation_errors, f1_support, nmi, select_edges, EdgeSupport,
    DEFAULT_RESTARTS,
};
use crate::error::{Error, Result};
use crate::glm::{EdgeFamily, NetworkDataset};
use crate::optimizer::{fit, sparsity_budget, tune, FitResult, Hyperparams};
use crate::tensor::{mode3_product, svd_r, Matrix, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Low-rank intercept plus sparse covariate tensor, logit link.
    LowRankSparse,
    /// Shared low-rank intercept plus a rank-one subject deviation, no
    /// covariates.
    CommonIndividual,
    /// Stochastic block model.
    BlockModel,
    /// Additive-plus-multiplicative latent factor model.
    LatentFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub protocol: Protocol,
    /// Nodes.
    pub n: usize,
    /// Covariates (low-rank-sparse protocol only).
    pub p: usize,
    /// Subjects.
    pub num_subjects: usize,
    /// Rank of the intercept (low-rank-sparse and common-individual).
    pub rank: usize,
    /// Proportion of nonzero off-diagonal entries of `B*`.
    pub s0: f64,
    /// Value placed on the support of `B*`.
    pub signal: f64,
    /// Within-block edge probability.
    pub w: f64,
    /// Between-block edge probability.
    pub between: f64,
    /// Blocks (block model) or latent factors (latent factor model).
    pub k: usize,
    /// Block sizes; equal split when absent.
    pub block_sizes: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::LowRankSparse,
            n: 50,
            p: 10,
            num_subjects: 200,
            rank: 2,
            s0: 0.1,
            signal: 2.0,
            w: 0.5,
            between: 0.1,
            k: 3,
            block_sizes: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.num_subjects == 0 {
            return bad("num_subjects must be positive".into());
        }
        match self.protocol {
            Protocol::LowRankSparse => {
                if !(0.0..=1.0).contains(&self.s0) {
                    return bad(format!("s0 = {} outside [0, 1]", self.s0));
                }
                if self.rank == 0 || self.rank > self.n {
                    return bad(format!("rank {} outside 1..={}", self.rank, self.n));
                }
                if !self.signal.is_finite() {
                    return bad("signal must be finite".into());
                }
            }
            Protocol::CommonIndividual => {
                if self.rank == 0 || self.rank > self.n {
                    return bad(format!("rank {} outside 1..={}", self.rank, self.n));
                }
            }
            Protocol::BlockModel => {
                for (name, v) in [("w", self.w), ("between", self.between)] {
                    if !(v > 0.0 && v < 1.0) {
                        return bad(format!("{name} = {v} outside (0, 1)"));
                    }
                }
                if self.k == 0 || self.k > self.n {
                    return bad(format!("k = {} outside 1..={}", self.k, self.n));
                }
                if let Some(sizes) = &self.block_sizes {
                    if sizes.len() != self.k || sizes.iter().sum::<usize>() != self.n {
                        return bad(format!(
                            "block sizes {sizes:?} must list k = {} blocks summing to n = {}",
                            self.k, self.n
                        ));
                    }
                }
            }
            Protocol::LatentFactor => {
                if self.k == 0 || self.k + 2 > self.n {
                    return bad(format!("k = {} too large for n = {}", self.k, self.n));
                }
            }
        }
        Ok(())
    }

    /// Number of covariates the generated dataset carries.
    pub fn num_covariates(&self) -> usize {
        match self.protocol {
            Protocol::LowRankSparse => self.p,
            _ => 0,
        }
    }

    fn block_sizes_resolved(&self) -> Vec<usize> {
        self.block_sizes.clone().unwrap_or_else(|| {
            let base = self.n / self.k;
            let extra = self.n % self.k;
            (0..self.k).map(|c| base + usize::from(c < extra)).collect()
        })
    }
}

/// Ground truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub theta_star: Matrix,
    pub b_star: Tensor3,
    /// Upper-triangle support of `B*`.
    pub support: EdgeSupport,
    pub communities: Option<Vec<usize>>,
    /// Largest singular value of `Θ*`.
    pub sigma1: f64,
    /// Rank of `Θ*` by construction.
    pub rank: usize,
    /// Per-subject deviation vectors `dᵢ` (rows of an `N × n` matrix) whose
    /// outer products add to the linear predictor.
    pub deviations: Option<Matrix>,
}

impl SimTruth {
    pub fn new(
        theta_star: Matrix,
        b_star: Tensor3,
        communities: Option<Vec<usize>>,
        rank: usize,
        deviations: Option<Matrix>,
    ) -> Result<Self> {
        let sigma1 = svd_r(&theta_star, 1)?.sigma[0];
        let support = select_edges(&b_star, true);
        Ok(Self {
            theta_star,
            b_star,
            support,
            communities,
            sigma1,
            rank,
            deviations,
        })
    }

    /// True linear predictor of subject `i`.
    pub fn true_predictor(&self, data: &NetworkDataset, i: usize) -> Result<Matrix> {
        let mut eta = self
            .theta_star
            .add(&mode3_product(&self.b_star, data.covariates().row(i))?)?;
        if let Some(dev) = &self.deviations {
            let d = dev.row(i);
            let n = eta.rows();
            for r in 0..n {
                for c in 0..n {
                    eta[(r, c)] += d[r] * d[c];
                }
            }
        }
        Ok(eta)
    }

    /// Nonzeros of `B*`, counting both members of mirrored pairs.
    pub fn sparsity(&self) -> usize {
        self.b_star.nnz()
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Centers each column and scales it to unit sample standard deviation.
/// Columns with zero spread are only centered. Returns the column means and
/// standard deviations that were removed.
pub fn standardize_columns(x: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (rows, cols) = x.shape();
    let mut means = vec![0.0; cols];
    let mut sds = vec![0.0; cols];
    for c in 0..cols {
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / rows as f64;
        let var = if rows > 1 {
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rows - 1) as f64
        } else {
            0.0
        };
        means[c] = mean;
        sds[c] = var.sqrt();
    }
    let out = Matrix::from_fn(rows, cols, |i, c| {
        let centered = x[(i, c)] - means[c];
        if sds[c] > 0.0 {
            centered / sds[c]
        } else {
            centered
        }
    });
    (out, means, sds)
}

/// Symmetric Bernoulli networks: the upper triangle is sampled, mirrored,
/// and the diagonal left at zero.
fn sample_symmetric_bernoulli(
    eta: impl Fn(usize) -> Result<Matrix>,
    n: usize,
    num_subjects: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(num_subjects);
    for i in 0..num_subjects {
        let e = eta(i)?;
        let mut a = Matrix::zeros(n, n);
        for r in 0..n {
            for c in (r + 1)..n {
                let p = EdgeFamily::Bernoulli.inverse_link(e[(r, c)]);
                let draw = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                a[(r, c)] = draw;
                a[(c, r)] = draw;
            }
        }
        out.push(a);
    }
    Ok(out)
}

fn low_rank_psd(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let u = normal_matrix(n, r, rng);
    let mut theta = u.matmul_t(&u).expect("n × r times r × n");
    for i in 0..n {
        for j in (i + 1)..n {
            theta[(j, i)] = theta[(i, j)];
        }
    }
    theta
}

/// Low-rank-plus-sparse protocol.
pub fn gen_low_rank_sparse(cfg: &SimConfig) -> Result<(NetworkDataset, SimTruth)> {
    gen_low_rank_sparse_with(cfg, &mut rng_for(cfg.seed, 0))
}

fn gen_low_rank_sparse_with(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkDataset, SimTruth)> {
    if cfg.protocol != Protocol::LowRankSparse {
        return Err(Error::InvalidConfig("protocol must be low_rank_sparse".into()));
    }
    cfg.validate()?;
    let (n, p, big_n) = (cfg.n, cfg.p, cfg.num_subjects);
    let raw_x = normal_matrix(big_n, p, rng);
    let (x, _, _) = standardize_columns(&raw_x);
    let theta_star = low_rank_psd(n, cfg.rank, rng);

    let budget = sparsity_budget(cfg.s0, n, p, true)?;
    let pairs_per_slice = n * (n - 1) / 2;
    let mut b_star = Tensor3::zeros(n, n, p);
    let mut chosen: Vec<usize> =
        index::sample(rng, pairs_per_slice * p, budget / 2).into_vec();
    chosen.sort_unstable();
    for flat in chosen {
        let k = flat / pairs_per_slice;
        let (r, c) = upper_pair(flat % pairs_per_slice, n);
        b_star.set(r, c, k, cfg.signal);
        b_star.set(c, r, k, cfg.signal);
    }

    let adjacency = sample_symmetric_bernoulli(
        |i| theta_star.add(&mode3_product(&b_star, x.row(i))?),
        n,
        big_n,
        rng,
    )?;
    let data = NetworkDataset::new(adjacency, x, EdgeFamily::Bernoulli, true)?;
    let truth = SimTruth::new(theta_star, b_star, None, cfg.rank, None)?;
    Ok((data, truth))
}

/// Maps a row-major index over the strict upper triangle to `(r, c)`.
fn upper_pair(mut idx: usize, n: usize) -> (usize, usize) {
    for r in 0..n {
        let len = n - r - 1;
        if idx < len {
            return (r, r + 1 + idx);
        }
        idx -= len;
    }
    unreachable!("index within the upper triangle")
}

/// Shared low-rank intercept with per-subject rank-one deviations.
pub fn gen_common_individual(cfg: &SimConfig) -> Result<(NetworkDataset, SimTruth)> {
    if cfg.protocol != Protocol::CommonIndividual {
        return Err(Error::InvalidConfig("protocol must be common_individual".into()));
    }
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0);
    gen_common_individual_with(cfg, &mut rng, false)
}

fn gen_common_individual_with(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    zero_deviations: bool,
) -> Result<(NetworkDataset, SimTruth)> {
    let (n, big_n) = (cfg.n, cfg.num_subjects);
    let theta_star = low_rank_psd(n, cfg.rank, rng);
    let dev = if zero_deviations {
        Matrix::zeros(big_n, n)
    } else {
        normal_matrix(big_n, n, rng)
    };
    let b_star = Tensor3::zeros(n, n, 0);
    let truth = SimTruth::new(theta_star, b_star, None, cfg.rank, Some(dev))?;
    let adjacency = sample_symmetric_bernoulli(
        |i| {
            let d = truth.deviations.as_ref().expect("set above").row(i);
            Ok(Matrix::from_fn(n, n, |r, c| truth.theta_star[(r, c)] + d[r] * d[c]))
        },
        n,
        big_n,
        rng,
    )?;
    let data =
        NetworkDataset::new(adjacency, Matrix::zeros(big_n, 0), EdgeFamily::Bernoulli, true)?;
    Ok((data, truth))
}

/// Stochastic block model with `w` within and `between` across blocks.
pub fn gen_block_model(cfg: &SimConfig) -> Result<(NetworkDataset, SimTruth)> {
    gen_block_model_with(cfg, &mut rng_for(cfg.seed, 0))
}

fn gen_block_model_with(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkDataset, SimTruth)> {
    if cfg.protocol != Protocol::BlockModel {
        return Err(Error::InvalidConfig("protocol must be block_model".into()));
    }
    cfg.validate()?;
    let n = cfg.n;
    let labels: Vec<usize> = cfg
        .block_sizes_resolved()
        .iter()
        .enumerate()
        .flat_map(|(c, &size)| std::iter::repeat_n(c, size))
        .collect();
    let logit = |p: f64| EdgeFamily::Bernoulli.link(p);
    let theta_star = Matrix::from_fn(n, n, |r, c| {
        if labels[r] == labels[c] {
            logit(cfg.w)
        } else {
            logit(cfg.between)
        }
    });
    let adjacency =
        sample_symmetric_bernoulli(|_| Ok(theta_star.clone()), n, cfg.num_subjects, rng)?;
    let data = NetworkDataset::new(
        adjacency,
        Matrix::zeros(cfg.num_subjects, 0),
        EdgeFamily::Bernoulli,
        true,
    )?;
    let truth = SimTruth::new(theta_star, Tensor3::zeros(n, n, 0), Some(labels), cfg.k, None)?;
    Ok((data, truth))
}

/// Latent factor model `α1ᵀ + 1αᵀ + CCᵀ` with standard normal `α`, `C`.
pub fn gen_latent_factor(cfg: &SimConfig) -> Result<(NetworkDataset, SimTruth)> {
    gen_latent_factor_with(cfg, &mut rng_for(cfg.seed, 0))
}

fn gen_latent_factor_with(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkDataset, SimTruth)> {
    if cfg.protocol != Protocol::LatentFactor {
        return Err(Error::InvalidConfig("protocol must be latent_factor".into()));
    }
    cfg.validate()?;
    let n = cfg.n;
    let alpha: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let c = normal_matrix(n, cfg.k, rng);
    let theta_star = latent_factor_theta(&alpha, &c);
    let adjacency =
        sample_symmetric_bernoulli(|_| Ok(theta_star.clone()), n, cfg.num_subjects, rng)?;
    let data = NetworkDataset::new(
        adjacency,
        Matrix::zeros(cfg.num_subjects, 0),
        EdgeFamily::Bernoulli,
        true,
    )?;
    // α1ᵀ + 1αᵀ is indefinite of rank two, so Θ* has rank k + 2.
    let truth = SimTruth::new(theta_star, Tensor3::zeros(n, n, 0), None, cfg.k + 2, None)?;
    Ok((data, truth))
}

/// `α1ᵀ + 1αᵀ + CCᵀ`.
pub fn latent_factor_theta(alpha: &[f64], c: &Matrix) -> Matrix {
    let n = alpha.len();
    let cc = c.matmul_t(c).expect("n × k times k × n");
    Matrix::from_fn(n, n, |r, s| {
        let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
        alpha[r] + alpha[s] + cc[(lo, hi)]
    })
}

/// Dispatches on `cfg.protocol`.
pub fn generate(cfg: &SimConfig) -> Result<(NetworkDataset, SimTruth)> {
    generate_replication(cfg, 0)
}

/// Dataset for replication `rep`: same seed, stream `rep`.
pub fn generate_replication(cfg: &SimConfig, rep: u64) -> Result<(NetworkDataset, SimTruth)> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, rep);
    match cfg.protocol {
        Protocol::LowRankSparse => gen_low_rank_sparse_with(cfg, &mut rng),
        Protocol::CommonIndividual => gen_common_individual_with(cfg, &mut rng, false),
        Protocol::BlockModel => gen_block_model_with(cfg, &mut rng),
        Protocol::LatentFactor => gen_latent_factor_with(cfg, &mut rng),
    }
}

#[cfg(test)]
pub(crate) fn gen_common_individual_without_deviation(
    cfg: &SimConfig,
) -> Result<(NetworkDataset, SimTruth)> {
    gen_common_individual_with(cfg, &mut rng_for(cfg.seed, 0), true)
}

/// How each replication chooses `(r, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitPlan {
    /// True rank and true support size.
    Truth,
    /// Fixed rank and sparsity proportion.
    Fixed { rank: usize, s0: f64 },
    /// eBIC tuning over the grids.
    Tune { ranks: Vec<usize>, s0: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOptions {
    pub reps: usize,
    pub plan: FitPlan,
    /// Step sizes, tolerance and iteration cap; rank and sparsity are
    /// overwritten by the plan.
    pub template: Hyperparams,
    /// Clusters for community scoring; defaults to the true block count
    /// when the truth carries communities.
    pub communities: Option<usize>,
    pub restarts: usize,
}

impl ReplicationOptions {
    pub fn new(reps: usize, plan: FitPlan) -> Self {
        Self {
            reps,
            plan,
            template: Hyperparams::new(1, 0),
            communities: None,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMetrics {
    pub mu_error: f64,
    pub mu_error_normalized: f64,
    pub mu_rmse: f64,
    pub theta_error: f64,
    pub b_error: f64,
    pub f1: Option<f64>,
    pub nmi: Option<f64>,
    pub rank: usize,
    pub sparsity: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub metrics: Option<ReplicationMetrics>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    /// Standard error of the mean; absent with a single replication.
    pub se: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub config: SimConfig,
    pub options: ReplicationOptions,
    pub records: Vec<ReplicationRecord>,
    pub summary: Vec<MetricSummary>,
    pub failures: usize,
}

impl ReplicationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.mean)
    }
}

/// Generates, fits and scores one replication.
pub fn run_single(
    cfg: &SimConfig,
    opts: &ReplicationOptions,
    rep: usize,
) -> Result<(ReplicationMetrics, FitResult)> {
    let (data, truth) = generate_replication(cfg, rep as u64)?;
    let p = data.num_covariates();
    let fitted = match &opts.plan {
        FitPlan::Truth => {
            let hyper = Hyperparams {
                rank: truth.rank,
                sparsity: truth.sparsity(),
                ..opts.template.clone()
            };
            fit(&data, &hyper)?
        }
        FitPlan::Fixed { rank, s0 } => {
            let hyper = Hyperparams {
                rank: *rank,
                sparsity: sparsity_budget(*s0, cfg.n, p, data.is_symmetric())?,
                ..opts.template.clone()
            };
            fit(&data, &hyper)?
        }
        FitPlan::Tune { ranks, s0 } => tune(&data, ranks, s0, &opts.template)?.0,
    };
    let errors = estimation_errors(&fitted, &truth, &data)?;
    let f1 = (p > 0).then(|| f1_support(&select_edges(&fitted.b, true), &truth.support));
    let k = opts
        .communities
        .or_else(|| truth.communities.as_ref().map(|l| l.iter().max().map_or(1, |m| m + 1)));
    let nmi_score = match (k, &truth.communities) {
        (Some(k), Some(labels)) => {
            let est = detect_communities(
                fitted.factors.u(),
                k,
                opts.restarts,
                opts.template.seed ^ rep as u64,
            )?;
            Some(nmi(&est.labels, labels)?)
        }
        _ => None,
    };
    let metrics = ReplicationMetrics {
        mu_error: errors.mu_error,
        mu_error_normalized: errors.mu_error_normalized,
        mu_rmse: errors.mu_rmse,
        theta_error: errors.theta_error,
        b_error: errors.b_error,
        f1,
        nmi: nmi_score,
        rank: fitted.factors.rank(),
        sparsity: fitted.hyper.sparsity,
        iterations: fitted.iterations,
        converged: fitted.converged,
    };
    Ok((metrics, fitted))
}

fn summarize(name: &str, values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let se = (count > 1).then(|| {
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    });
    Some(MetricSummary {
        name: name.to_string(),
        mean,
        se,
        count,
    })
}

/// Runs `opts.reps` independent replications (in parallel, aggregated in
/// replication order). Failed replications are recorded and skipped in the
/// summary.
pub fn run_replications(cfg: &SimConfig, opts: &ReplicationOptions) -> Result<ReplicationReport> {
    if opts.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    cfg.validate()?;
    opts.template.validate().or_else(|e| match e {
        // The template's rank is a placeholder; the plan supplies it.
        Error::InvalidConfig(ref m) if m.contains("rank") => Ok(()),
        other => Err(other),
    })?;
    let records: Vec<ReplicationRecord> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| match run_single(cfg, opts, rep) {
            Ok((metrics, _)) => ReplicationRecord {
                rep,
                metrics: Some(metrics),
                failure: None,
            },
            Err(e) => ReplicationRecord {
                rep,
                metrics: None,
                failure: Some(e.to_string()),
            },
        })
        .collect();

    let ok: Vec<&ReplicationMetrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let column = |f: &dyn Fn(&ReplicationMetrics) -> Option<f64>| -> Vec<f64> {
        ok.iter().filter_map(|m| f(m)).collect()
    };
    let summary = [
        ("mu_error", column(&|m| Some(m.mu_error))),
        ("mu_error_normalized", column(&|m| Some(m.mu_error_normalized))),
        ("mu_rmse", column(&|m| Some(m.mu_rmse))),
        ("theta_error", column(&|m| Some(m.theta_error))),
        ("b_error", column(&|m| Some(m.b_error))),
        ("f1", column(&|m| m.f1)),
        ("nmi", column(&|m| m.nmi)),
        ("iterations", column(&|m| Some(m.iterations as f64))),
    ]
    .iter()
    .filter_map(|(name, vals)| summarize(name, vals))
    .collect();

    let failures = records.iter().filter(|r| r.failure.is_some()).count();
    Ok(ReplicationReport {
        config: cfg.clone(),
        options: opts.clone(),
        records,
        summary,
        failures,
    })
}
