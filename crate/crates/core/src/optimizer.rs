//! Alternating gradient descent with hard thresholding.
//!
//! The asymmetric solver updates `U`, then `V` (using the fresh `U`), then
//! takes a gradient step in `B` followed by truncation to the sparsity
//! budget. The symmetric solver starts from a converged asymmetric fit,
//! fixes the sign pattern `Λ`, and alternates between `U` and `B`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::glm::{
    self, balance_penalty, evaluate, factor_grad_u, factor_grad_v, symmetric_factor_grad,
    symmetric_theta, EdgeFamily, NetworkDataset, Wants,
};
use crate::tensor::{svd_r, truncate, truncate_mirrored, FrobeniusNorm, Matrix, Tensor3};

/// `δ = DEFAULT_DELTA_SCALE / σ̂₁` unless overridden.
pub const DEFAULT_DELTA_SCALE: f64 = 1.0;
/// Default `τ` for the Bernoulli family; other families scale it by the
/// inverse of their curvature bound at initialization.
pub const DEFAULT_TAU: f64 = 2.0;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Number of times both steps are halved after a divergent attempt.
pub const MAX_STEP_HALVINGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub rank: usize,
    /// Hard budget on the number of nonzero entries of `B`.
    pub sparsity: usize,
    /// Factor step `δ`; `None` picks the data-driven default.
    pub step_delta: Option<f64>,
    /// Coefficient step `τ`; `None` picks the data-driven default.
    pub step_tau: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(rank: usize, sparsity: usize) -> Self {
        Self {
            rank,
            sparsity,
            step_delta: None,
            step_tau: None,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        for (name, step) in [("step_delta", self.step_delta), ("step_tau", self.step_tau)] {
            if let Some(s) = step {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Number of nonzeros implied by a sparsity proportion `s₀` over the
/// off-diagonal entries of an `n × n × p` tensor. Symmetric models count
/// mirrored pairs, so the budget is rounded down to an even number.
pub fn sparsity_budget(s0: f64, n: usize, p: usize, symmetric: bool) -> Result<usize> {
    if !(0.0..=1.0).contains(&s0) {
        return Err(Error::InvalidConfig(format!(
            "sparsity proportion {s0} outside [0, 1]"
        )));
    }
    let total = (n * n.saturating_sub(1) * p) as f64;
    // Guard against representation error pushing e.g. 0.1 × 870 to 86.999…
    let raw = (s0 * total + 1e-9).floor() as usize;
    Ok(if symmetric { raw - raw % 2 } else { raw })
}

/// `Θ` in factored form.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorModel {
    /// `Θ = U Vᵀ`.
    Asymmetric { u: Matrix, v: Matrix },
    /// `Θ = U diag(λ) Uᵀ`, `λ_i ∈ {-1, +1}`.
    Symmetric { u: Matrix, lambda: Vec<f64> },
}

impl FactorModel {
    pub fn theta(&self) -> Matrix {
        match self {
            FactorModel::Asymmetric { u, v } => u.matmul_t(v).expect("factor pair shapes agree"),
            FactorModel::Symmetric { u, lambda } => {
                symmetric_theta(u, lambda).expect("lambda matches rank")
            }
        }
    }

    pub fn u(&self) -> &Matrix {
        match self {
            FactorModel::Asymmetric { u, .. } | FactorModel::Symmetric { u, .. } => u,
        }
    }

    pub fn rank(&self) -> usize {
        self.u().cols()
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, FactorModel::Symmetric { .. })
    }

    /// `[U; V]` for asymmetric models, `U` for symmetric ones.
    pub fn stacked(&self) -> Matrix {
        match self {
            FactorModel::Asymmetric { u, v } => {
                let mut data = u.data().to_vec();
                data.extend_from_slice(v.data());
                Matrix::new(u.rows() + v.rows(), u.cols(), data).expect("stacked shape")
            }
            FactorModel::Symmetric { u, .. } => u.clone(),
        }
    }

    /// Balanced factors of a known `Θ*`: asymmetric `U*, V*` from the SVD, or
    /// the symmetric `U*` with `Λ` from the eigenvalue signs.
    pub fn from_theta(theta: &Matrix, r: usize, symmetric: bool) -> Result<FactorModel> {
        let svd = svd_r(theta, r)?;
        let roots: Vec<f64> = svd.sigma.iter().map(|s| s.sqrt()).collect();
        let u = svd.u.scale_columns(&roots);
        if symmetric {
            let lambda = (0..r)
                .map(|c| {
                    let dot: f64 = (0..theta.rows()).map(|i| svd.u[(i, c)] * svd.v[(i, c)]).sum();
                    if dot < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect();
            Ok(FactorModel::Symmetric { u, lambda })
        } else {
            let v = svd.v.scale_columns(&roots);
            Ok(FactorModel::Asymmetric { u, v })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub factors: FactorModel,
    pub b: Tensor3,
    /// Objective at initialization followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub hyper: Hyperparams,
    /// `(δ, τ)` actually used by the successful attempt.
    pub steps: (f64, f64),
    /// Every `(δ, τ)` attempted, in order; more than one entry means the
    /// steps were halved after a divergent attempt.
    pub step_history: Vec<(f64, f64)>,
    /// Largest singular value of the SVD initialization.
    pub sigma1_hat: f64,
}

impl FitResult {
    pub fn theta(&self) -> Matrix {
        self.factors.theta()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Output of the SVD initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymInit {
    pub u: Matrix,
    pub v: Matrix,
    pub b: Tensor3,
    /// Singular values of the link-transformed mean network.
    pub sigma: Vec<f64>,
}

/// Mean network pushed through the link after clipping into its domain,
/// with the (unidentified) diagonal set to zero.
pub fn initial_link_matrix(data: &NetworkDataset) -> Matrix {
    let eps = 1.0 / (2.0 * data.num_subjects() as f64);
    let family = data.family();
    let abar = data.mean_adjacency();
    let mut m = abar.map(|a| match family {
        EdgeFamily::Bernoulli => family.link(a.clamp(eps, 1.0 - eps)),
        EdgeFamily::Poisson => family.link(a.max(eps)),
        EdgeFamily::Gaussian => a,
    });
    m.zero_diagonal();
    m
}

/// `U₀ = Ū Σ̄^{1/2}`, `V₀ = V̄ Σ̄^{1/2}` from `SVD_r(g(Ā))`, `B₀ = 0`.
pub fn init_asym(data: &NetworkDataset, r: usize) -> Result<AsymInit> {
    let n = data.num_nodes();
    if r > n {
        return Err(Error::RankTooLarge { rank: r, max: n });
    }
    let svd = svd_r(&initial_link_matrix(data), r)?;
    let roots: Vec<f64> = svd.sigma.iter().map(|s| s.sqrt()).collect();
    Ok(AsymInit {
        u: svd.u.scale_columns(&roots),
        v: svd.v.scale_columns(&roots),
        b: Tensor3::zeros(n, n, data.num_covariates()),
        sigma: svd.sigma,
    })
}

/// Default `(δ, τ)` given the leading initial singular value.
pub fn default_steps(data: &NetworkDataset, sigma1: f64) -> (f64, f64) {
    let curvature = curvature_scale(data);
    let delta = DEFAULT_DELTA_SCALE / (sigma1.max(1e-8) * curvature);
    let tau = DEFAULT_TAU / curvature;
    (delta, tau)
}

/// Upper bound on `ψ''` relative to the Bernoulli bound of 1/4.
fn curvature_scale(data: &NetworkDataset) -> f64 {
    match data.family() {
        EdgeFamily::Bernoulli => 1.0,
        EdgeFamily::Gaussian => 4.0,
        EdgeFamily::Poisson => {
            let abar = data.mean_adjacency();
            let mut peak: f64 = 1.0;
            for i in 0..abar.rows() {
                for j in 0..abar.cols() {
                    if i != j {
                        peak = peak.max(abar[(i, j)]);
                    }
                }
            }
            4.0 * peak
        }
    }
}

fn resolve_steps(data: &NetworkDataset, hyper: &Hyperparams, sigma1: f64) -> (f64, f64) {
    let (d, t) = default_steps(data, sigma1);
    (hyper.step_delta.unwrap_or(d), hyper.step_tau.unwrap_or(t))
}

/// Observer hook: `(iteration, factors, b)`, called at the initial point and
/// after every completed iteration.
pub type Observer<'a> = dyn FnMut(usize, &FactorModel, &Tensor3) + 'a;

fn with_halving<T>(
    initial: (f64, f64),
    mut attempt: impl FnMut(f64, f64) -> Result<T>,
) -> Result<(T, (f64, f64), Vec<(f64, f64)>)> {
    let (mut delta, mut tau) = initial;
    let mut history = Vec::new();
    loop {
        history.push((delta, tau));
        match attempt(delta, tau) {
            Ok(out) => return Ok((out, (delta, tau), history)),
            Err(Error::Diverged { reason, .. }) => {
                if history.len() > MAX_STEP_HALVINGS {
                    return Err(Error::Diverged {
                        reason,
                        step_history: history,
                    });
                }
                delta *= 0.5;
                tau *= 0.5;
            }
            Err(other) => return Err(other),
        }
    }
}

struct Trajectory {
    factors: FactorModel,
    b: Tensor3,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn prune_b(b: &mut Tensor3, s: usize, mirrored: bool) {
    if mirrored {
        b.symmetrize_slices();
        *b = truncate_mirrored(b, s);
    } else {
        b.zero_diagonal_fibers();
        *b = truncate(b, s);
    }
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            reason: format!("non-finite {what}"),
            step_history: Vec::new(),
        })
    }
}

fn run_asym(
    data: &NetworkDataset,
    hyper: &Hyperparams,
    start: (&Matrix, &Matrix, &Tensor3),
    (delta, tau): (f64, f64),
    observer: &mut Observer<'_>,
) -> Result<Trajectory> {
    let (mut u, mut v, mut b) = (start.0.clone(), start.1.clone(), start.2.clone());
    let p = data.num_covariates();
    let mut eval = evaluate(data, &u.matmul_t(&v)?, &b, Wants::THETA)?;
    let mut trace = vec![eval.loss + balance_penalty(&u, &v)?];
    observer(
        0,
        &FactorModel::Asymmetric {
            u: u.clone(),
            v: v.clone(),
        },
        &b,
    );
    let mut converged = false;
    let mut iterations = 0;
    while iterations < hyper.max_iter {
        let g = eval.grad_theta.take().expect("requested");
        let step_u = factor_grad_u(&g, &u, &v);
        u.axpy(-delta, &step_u)?;
        check_finite(&u, "U iterate")?;

        let g = evaluate(data, &u.matmul_t(&v)?, &b, Wants::THETA)?
            .grad_theta
            .expect("requested");
        let step_v = factor_grad_v(&g, &u, &v);
        v.axpy(-delta, &step_v)?;
        check_finite(&v, "V iterate")?;

        let theta = u.matmul_t(&v)?;
        if p > 0 && hyper.sparsity > 0 {
            let gb = evaluate(data, &theta, &b, Wants::B)?.grad_b.expect("requested");
            b.axpy(-tau, &gb)?;
            prune_b(&mut b, hyper.sparsity, false);
        } else {
            b = Tensor3::zeros(data.num_nodes(), data.num_nodes(), p);
        }

        eval = evaluate(data, &theta, &b, Wants::THETA)?;
        let obj = eval.loss + balance_penalty(&u, &v)?;
        iterations += 1;
        let prev = *trace.last().expect("non-empty");
        trace.push(obj);
        observer(
            iterations,
            &FactorModel::Asymmetric {
                u: u.clone(),
                v: v.clone(),
            },
            &b,
        );
        if (obj - prev).abs() < hyper.tol {
            converged = true;
            break;
        }
    }
    Ok(Trajectory {
        factors: FactorModel::Asymmetric { u, v },
        b,
        trace,
        iterations,
        converged,
    })
}

/// Asymmetric fit from the SVD initialization.
pub fn fit_asym(data: &NetworkDataset, hyper: &Hyperparams) -> Result<FitResult> {
    fit_asym_observed(data, hyper, &mut |_, _, _| {})
}

/// [`fit_asym`] with an iterate observer.
pub fn fit_asym_observed(
    data: &NetworkDataset,
    hyper: &Hyperparams,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    hyper.validate()?;
    let init = init_asym(data, hyper.rank)?;
    let sigma1 = init.sigma.first().copied().unwrap_or(0.0);
    fit_asym_inner(data, hyper, (&init.u, &init.v, &init.b), sigma1, observer)
}

/// Asymmetric fit from a caller-supplied starting point. Default steps are
/// still derived from the SVD initialization.
pub fn fit_asym_from(
    data: &NetworkDataset,
    hyper: &Hyperparams,
    u0: &Matrix,
    v0: &Matrix,
    b0: &Tensor3,
) -> Result<FitResult> {
    hyper.validate()?;
    let n = data.num_nodes();
    if u0.shape() != (n, hyper.rank) || v0.shape() != (n, hyper.rank) {
        return Err(dim_mismatch(
            "starting factors",
            format!("({n}, {})", hyper.rank),
            format!("{:?} / {:?}", u0.shape(), v0.shape()),
        ));
    }
    let init = init_asym(data, hyper.rank)?;
    let sigma1 = init.sigma.first().copied().unwrap_or(0.0);
    fit_asym_inner(data, hyper, (u0, v0, b0), sigma1, &mut |_, _, _| {})
}

fn fit_asym_inner(
    data: &NetworkDataset,
    hyper: &Hyperparams,
    start: (&Matrix, &Matrix, &Tensor3),
    sigma1: f64,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    let steps = resolve_steps(data, hyper, sigma1);
    let (traj, used, history) =
        with_halving(steps, |d, t| run_asym(data, hyper, start, (d, t), observer))?;
    Ok(FitResult {
        factors: traj.factors,
        b: traj.b,
        objective_trace: traj.trace,
        iterations: traj.iterations,
        converged: traj.converged,
        hyper: hyper.clone(),
        steps: used,
        step_history: history,
        sigma1_hat: sigma1,
    })
}

/// Starting point of the symmetric solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SymInit {
    pub u: Matrix,
    pub lambda: Vec<f64>,
    pub b: Tensor3,
    /// The asymmetric fit the start was derived from.
    pub asym: FitResult,
}

/// `λ_i = sign(ũ_iᵀ ṽ_i)` (zero maps to +1).
pub fn sign_pattern(u: &Matrix, v: &Matrix) -> Vec<f64> {
    (0..u.cols())
        .map(|c| {
            let dot: f64 = (0..u.rows()).map(|i| u[(i, c)] * v[(i, c)]).sum();
            if dot < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

/// `U₀ = (Ũ + Ṽ Λ) / 2`.
pub fn symmetric_start(u: &Matrix, v: &Matrix, lambda: &[f64]) -> Matrix {
    let mut out = u.clone();
    out.axpy(1.0, &v.scale_columns(lambda))
        .expect("factor pair shapes agree");
    out.scaled(0.5)
}

pub fn init_sym(data: &NetworkDataset, hyper: &Hyperparams) -> Result<SymInit> {
    if !data.is_symmetric() {
        return Err(Error::InvalidData(
            "symmetric fit requested for a dataset not flagged symmetric".into(),
        ));
    }
    let asym = fit_asym(data, hyper)?;
    let FactorModel::Asymmetric { u, v } = &asym.factors else {
        unreachable!("fit_asym returns asymmetric factors");
    };
    let lambda = sign_pattern(u, v);
    let u0 = symmetric_start(u, v, &lambda);
    let b0 = asym.b.clone();
    Ok(SymInit {
        u: u0,
        lambda,
        b: b0,
        asym,
    })
}

fn run_sym(
    data: &NetworkDataset,
    hyper: &Hyperparams,
    start: &SymInit,
    (delta, tau): (f64, f64),
    observer: &mut Observer<'_>,
) -> Result<Trajectory> {
    let lambda = start.lambda.clone();
    let mut u = start.u.clone();
    let mut b = start.b.clone();
    let p = data.num_covariates();
    let model = |u: &Matrix| FactorModel::Symmetric {
        u: u.clone(),
        lambda: lambda.clone(),
    };
    if p > 0 {
        prune_b(&mut b, hyper.sparsity, true);
    }
    let mut eval = evaluate(data, &symmetric_theta(&u, &lambda)?, &b, Wants::THETA)?;
    let mut trace = vec![eval.loss];
    observer(0, &model(&u), &b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < hyper.max_iter {
        let g = eval.grad_theta.take().expect("requested");
        let step_u = symmetric_factor_grad(&g, &u, &lambda);
        u.axpy(-delta, &step_u)?;
        check_finite(&u, "U iterate")?;

        let theta = symmetric_theta(&u, &lambda)?;
        if p > 0 && hyper.sparsity > 0 {
            let gb = evaluate(data, &theta, &b, Wants::B)?.grad_b.expect("requested");
            b.axpy(-tau, &gb)?;
            prune_b(&mut b, hyper.sparsity, true);
        } else {
            b = Tensor3::zeros(data.num_nodes(), data.num_nodes(), p);
        }

        eval = evaluate(data, &theta, &b, Wants::THETA)?;
        iterations += 1;
        let prev = *trace.last().expect("non-empty");
        trace.push(eval.loss);
        observer(iterations, &model(&u), &b);
        if (eval.loss - prev).abs() < hyper.tol {
            converged = true;
            break;
        }
    }
    Ok(Trajectory {
        factors: model(&u),
        b,
        trace,
        iterations,
        converged,
    })
}

/// Symmetric fit: asymmetric warm start, sign recovery, then alternating
/// updates of `U` (with `Λ` held fixed) and `B`.
pub fn fit_sym(data: &NetworkDataset, hyper: &Hyperparams) -> Result<FitResult> {
    fit_sym_observed(data, hyper, &mut |_, _, _| {})
}

pub fn fit_sym_observed(
    data: &NetworkDataset,
    hyper: &Hyperparams,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    hyper.validate()?;
    let start = init_sym(data, hyper)?;
    let sigma1 = start.asym.sigma1_hat;
    // The symmetric factor enters Θ twice, doubling the curvature in U.
    let (d, t) = resolve_steps(data, hyper, sigma1);
    let (traj, used, mut history) = with_halving((0.5 * d, t), |d, t| {
        run_sym(data, hyper, &start, (d, t), observer)
    })?;
    let mut full_history = start.asym.step_history.clone();
    full_history.append(&mut history);
    Ok(FitResult {
        factors: traj.factors,
        b: traj.b,
        objective_trace: traj.trace,
        iterations: traj.iterations,
        converged: traj.converged,
        hyper: hyper.clone(),
        steps: used,
        step_history: full_history,
        sigma1_hat: sigma1,
    })
}

/// Symmetric fit for symmetric datasets, asymmetric otherwise.
pub fn fit(data: &NetworkDataset, hyper: &Hyperparams) -> Result<FitResult> {
    if data.is_symmetric() {
        fit_sym(data, hyper)
    } else {
        fit_asym(data, hyper)
    }
}

/// Unaugmented loss `ℓ(Θ̂, B̂)` of a fit.
pub fn fit_loss(fit: &FitResult, data: &NetworkDataset) -> Result<f64> {
    glm::neg_loglik(data, &fit.theta(), &fit.b)
}

/// Procrustes distance `min_Q ‖M - M* Q‖²_F` over orthonormal `Q`.
pub fn procrustes_sq(m: &Matrix, m_star: &Matrix) -> Result<f64> {
    if m.shape() != m_star.shape() {
        return Err(dim_mismatch(
            "procrustes",
            format!("{:?}", m_star.shape()),
            format!("{:?}", m.shape()),
        ));
    }
    let r = m.cols();
    if r == 0 {
        return Ok(0.0);
    }
    let cross = m_star.t_matmul(m)?;
    let svd = svd_r(&cross, r)?;
    let q = svd.u.matmul_t(&svd.v)?;
    let diff = m.sub(&m_star.matmul(&q)?)?;
    let d = diff.frobenius();
    Ok(d * d)
}

/// `D = d²(M, M*) + ‖B - B*‖²_F / σ₁`.
pub fn distance_d(
    m: &FactorModel,
    m_star: &FactorModel,
    b: &Tensor3,
    b_star: &Tensor3,
    sigma1: f64,
) -> Result<f64> {
    if m.is_symmetric() != m_star.is_symmetric() {
        return Err(Error::InvalidData(
            "distance between symmetric and asymmetric factor models".into(),
        ));
    }
    let d2 = procrustes_sq(&m.stacked(), &m_star.stacked())?;
    let db = b.sub(b_star)?.frobenius();
    Ok(d2 + db * db / sigma1)
}

/// `2N·ℓ + [log(n²N) + log(n²(p+1))]·(2nr + s)`.
pub fn ebic_value(loss: f64, n: usize, big_n: usize, p: usize, r: usize, s: usize) -> f64 {
    let n2 = (n * n) as f64;
    let penalty = (n2 * big_n as f64).ln() + (n2 * (p + 1) as f64).ln();
    2.0 * big_n as f64 * loss + penalty * (2 * n * r + s) as f64
}

pub fn ebic(fit: &FitResult, data: &NetworkDataset) -> Result<f64> {
    let loss = fit_loss(fit, data)?;
    Ok(ebic_value(
        loss,
        data.num_nodes(),
        data.num_subjects(),
        data.num_covariates(),
        fit.factors.rank(),
        fit.hyper.sparsity,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rank: usize,
    pub s0: f64,
    pub sparsity: usize,
    pub loss: Option<f64>,
    pub ebic: Option<f64>,
    /// `None` on success, otherwise the failure message.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the selected model.
    pub best: usize,
}

impl GridReport {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Fits every `(r, s₀)` pair and keeps the minimum-eBIC model. Ties go to
/// the smaller rank, then the smaller sparsity. Failed cells are reported
/// but do not abort the sweep.
pub fn tune(
    data: &NetworkDataset,
    rank_grid: &[usize],
    sparsity_grid: &[f64],
    template: &Hyperparams,
) -> Result<(FitResult, GridReport)> {
    if rank_grid.is_empty() || sparsity_grid.is_empty() {
        return Err(Error::InvalidConfig("tuning grids must be nonempty".into()));
    }
    let n = data.num_nodes();
    let p = data.num_covariates();
    let mut specs = Vec::new();
    for &r in rank_grid {
        for &s0 in sparsity_grid {
            let s = sparsity_budget(s0, n, p, data.is_symmetric())?;
            specs.push((r, s0, s));
        }
    }
    let hyper_for = |r: usize, s: usize| Hyperparams {
        rank: r,
        sparsity: s,
        ..template.clone()
    };
    // Only the scores are kept per cell; the winner is refitted afterwards,
    // which is exact because fits are deterministic.
    let cells: Vec<GridCell> = specs
        .into_par_iter()
        .map(|(r, s0, s)| {
            let result = fit(data, &hyper_for(r, s)).and_then(|f| {
                let loss = fit_loss(&f, data)?;
                Ok((loss, ebic(&f, data)?))
            });
            let (loss, e, failure) = match result {
                Ok((loss, e)) => (Some(loss), Some(e), None),
                Err(err) => (None, None, Some(err.to_string())),
            };
            GridCell {
                rank: r,
                s0,
                sparsity: s,
                loss,
                ebic: e,
                failure,
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (idx, cell) in cells.iter().enumerate() {
        let Some(e) = cell.ebic else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &cells[b];
                let ce = cur.ebic.expect("best cells succeeded");
                e < ce || (e == ce && (cell.rank, cell.sparsity) < (cur.rank, cur.sparsity))
            }
        };
        if better {
            best = Some(idx);
        }
    }
    let Some(best) = best else {
        let reasons: Vec<String> = cells.iter().filter_map(|c| c.failure.clone()).collect();
        return Err(Error::Diverged {
            reason: format!("every grid cell failed: {}", reasons.join(" | ")),
            step_history: Vec::new(),
        });
    };
    let chosen = fit(data, &hyper_for(cells[best].rank, cells[best].sparsity))?;
    Ok((chosen, GridReport { cells, best }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_rounding() {
        assert_eq!(sparsity_budget(0.1, 30, 10, false).unwrap(), 870);
        assert_eq!(sparsity_budget(0.1, 30, 10, true).unwrap(), 870);
        assert_eq!(sparsity_budget(0.05, 30, 10, true).unwrap(), 434);
        assert_eq!(sparsity_budget(0.0, 30, 10, true).unwrap(), 0);
        assert!(sparsity_budget(1.5, 30, 10, true).is_err());
    }

    #[test]
    fn ebic_hand_value() {
        let e = ebic_value(1.0, 50, 200, 10, 2, 100);
        let expect = 400.0 + (500000f64.ln() + 27500f64.ln()) * 300.0;
        assert!((e - expect).abs() < 1e-9);
        assert!((e - 7403.3).abs() < 0.05);
    }

    #[test]
    fn ebic_linearity() {
        let step = (2500.0f64 * 200.0).ln() + (2500.0f64 * 11.0).ln();
        let a = ebic_value(0.7, 50, 200, 10, 2, 100);
        let b = ebic_value(0.7, 50, 200, 10, 2, 101);
        assert!((b - a - step).abs() < 1e-9);
        let c = ebic_value(0.7, 50, 200, 10, 3, 100);
        assert!((c - a - 100.0 * step).abs() < 1e-8);
    }

    #[test]
    fn sign_pattern_and_start() {
        let u = Matrix::new(3, 2, vec![1.0, 0.5, 0.0, -1.0, 2.0, 0.3]).unwrap();
        let v = Matrix::new(3, 2, vec![1.0, -0.5, 0.0, 1.0, 2.0, -0.3]).unwrap();
        let lambda = sign_pattern(&u, &v);
        assert_eq!(lambda, vec![1.0, -1.0]);
        let start = symmetric_start(&u, &v, &lambda);
        assert!(start.sub(&u).unwrap().frobenius() < 1e-15);
        assert_eq!(symmetric_start(&u, &u, &[1.0, 1.0]), u);
    }

    #[test]
    fn procrustes_rotation_invariance() {
        let m = Matrix::new(4, 2, vec![1.0, 0.2, -0.5, 0.9, 0.3, -0.4, 2.0, 0.1]).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = Matrix::new(2, 2, vec![c, -s, s, c]).unwrap();
        let rotated = m.matmul(&q).unwrap();
        assert!(procrustes_sq(&rotated, &m).unwrap() < 1e-20);
        assert!(procrustes_sq(&m, &m).unwrap() < 1e-20);
    }

    #[test]
    fn hyper_validation() {
        assert!(Hyperparams::new(0, 3).validate().is_err());
        let mut h = Hyperparams::new(2, 3);
        h.tol = 0.0;
        assert!(h.validate().is_err());
        let mut h = Hyperparams::new(2, 3);
        h.step_tau = Some(-1.0);
        assert!(h.validate().is_err());
        assert!(Hyperparams::new(2, 0).validate().is_ok());
    }
}
