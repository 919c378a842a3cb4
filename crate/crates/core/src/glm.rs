//! Exponential-family edge models and the network-response loss
//!
//! ```text
//! ℓ(Θ, B) = -(1/N) Σ_i Σ_{j≠j'} [ A⁽ⁱ⁾_{jj'} η⁽ⁱ⁾_{jj'} - ψ(η⁽ⁱ⁾_{jj'}) ],   η⁽ⁱ⁾ = Θ + B ×₃ xᵢ
//! ```
//!
//! with analytic gradients in `Θ`, `B` and in the factors of `Θ = U Vᵀ`
//! (asymmetric, balance-regularized) or `Θ = U Λ Uᵀ` (symmetric).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::tensor::{FrobeniusNorm, Matrix, Tensor3};

/// Log-link predictors beyond this magnitude abort the evaluation.
pub const LOG_LINK_ETA_LIMIT: f64 = 50.0;

/// Number of subject chunks used by the loss/gradient reduction. Fixed so the
/// summation order never depends on the thread count.
const MAX_CHUNKS: usize = 16;

/// Edge distribution with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeFamily {
    /// Binary edges, logit link.
    Bernoulli,
    /// Count edges, log link.
    Poisson,
    /// Continuous edges, identity link, unit dispersion.
    Gaussian,
}

impl EdgeFamily {
    /// `g(μ)`.
    pub fn link(self, mu: f64) -> f64 {
        match self {
            EdgeFamily::Bernoulli => (mu / (1.0 - mu)).ln(),
            EdgeFamily::Poisson => mu.ln(),
            EdgeFamily::Gaussian => mu,
        }
    }

    /// `g⁻¹(η) = ψ'(η)`.
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            EdgeFamily::Bernoulli => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            EdgeFamily::Poisson => eta.exp(),
            EdgeFamily::Gaussian => eta,
        }
    }

    /// Cumulant `ψ(η)`.
    pub fn cumulant(self, eta: f64) -> f64 {
        match self {
            EdgeFamily::Bernoulli => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
            EdgeFamily::Poisson => eta.exp(),
            EdgeFamily::Gaussian => 0.5 * eta * eta,
        }
    }

    /// `ψ''(η)`.
    pub fn cumulant_second(self, eta: f64) -> f64 {
        match self {
            EdgeFamily::Bernoulli => {
                let p = self.inverse_link(eta);
                p * (1.0 - p)
            }
            EdgeFamily::Poisson => eta.exp(),
            EdgeFamily::Gaussian => 1.0,
        }
    }

    pub fn dispersion(self) -> f64 {
        1.0
    }

    /// Whether `a` is in the support of the edge distribution.
    pub fn admits(self, a: f64) -> bool {
        match self {
            EdgeFamily::Bernoulli => a == 0.0 || a == 1.0,
            EdgeFamily::Poisson => a >= 0.0 && a.fract() == 0.0,
            EdgeFamily::Gaussian => a.is_finite(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeFamily::Bernoulli => "bernoulli",
            EdgeFamily::Poisson => "poisson",
            EdgeFamily::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for EdgeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bernoulli" | "logit" | "binary" => Ok(EdgeFamily::Bernoulli),
            "poisson" | "log" | "count" => Ok(EdgeFamily::Poisson),
            "gaussian" | "identity" | "normal" => Ok(EdgeFamily::Gaussian),
            other => Err(Error::InvalidConfig(format!("unknown edge family `{other}`"))),
        }
    }
}

/// `N` networks over a shared node set, with an `N × p` covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDataset {
    adjacency: Vec<Matrix>,
    covariates: Matrix,
    family: EdgeFamily,
    symmetric: bool,
}

impl NetworkDataset {
    pub fn new(
        adjacency: Vec<Matrix>,
        covariates: Matrix,
        family: EdgeFamily,
        symmetric: bool,
    ) -> Result<Self> {
        let Some(first) = adjacency.first() else {
            return Err(Error::InvalidData("dataset has no networks".into()));
        };
        let n = first.rows();
        if covariates.rows() != adjacency.len() {
            return Err(dim_mismatch(
                "covariate rows",
                adjacency.len(),
                covariates.rows(),
            ));
        }
        for (i, a) in adjacency.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::InvalidData(format!(
                    "network {i} has shape {:?}, expected ({n}, {n})",
                    a.shape()
                )));
            }
            for r in 0..n {
                for c in 0..n {
                    if r != c && !family.admits(a[(r, c)]) {
                        return Err(Error::InvalidData(format!(
                            "network {i} entry ({r}, {c}) = {} is not a valid {family} edge",
                            a[(r, c)]
                        )));
                    }
                }
            }
            if symmetric && !a.is_symmetric() {
                return Err(Error::InvalidData(format!(
                    "network {i} is not symmetric"
                )));
            }
        }
        Ok(Self {
            adjacency,
            covariates,
            family,
            symmetric,
        })
    }

    pub fn adjacency(&self) -> &[Matrix] {
        &self.adjacency
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn family(&self) -> EdgeFamily {
        self.family
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of nodes `n`.
    pub fn num_nodes(&self) -> usize {
        self.adjacency[0].rows()
    }

    /// Number of subjects `N`.
    pub fn num_subjects(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of covariates `p`.
    pub fn num_covariates(&self) -> usize {
        self.covariates.cols()
    }

    /// Same networks, different covariates (e.g. after standardization).
    pub fn with_covariates(&self, covariates: Matrix) -> Result<Self> {
        Self::new(
            self.adjacency.clone(),
            covariates,
            self.family,
            self.symmetric,
        )
    }

    /// `Ā = Σ_i A⁽ⁱ⁾ / N`.
    pub fn mean_adjacency(&self) -> Matrix {
        let n = self.num_nodes();
        let mut acc = Matrix::zeros(n, n);
        for a in &self.adjacency {
            acc.axpy(1.0, a).expect("shapes validated");
        }
        acc.scaled(1.0 / self.num_subjects() as f64)
    }

    fn check_params(&self, theta: &Matrix, b: &Tensor3) -> Result<()> {
        let n = self.num_nodes();
        if theta.shape() != (n, n) {
            return Err(dim_mismatch(
                "theta",
                format!("({n}, {n})"),
                format!("{:?}", theta.shape()),
            ));
        }
        let p = self.num_covariates();
        if b.dims() != (n, n, p) {
            return Err(dim_mismatch(
                "coefficient tensor",
                format!("({n}, {n}, {p})"),
                format!("{:?}", b.dims()),
            ));
        }
        Ok(())
    }
}

/// `η⁽ⁱ⁾ = Θ + B ×₃ xᵢ` for subject `i`.
pub fn linear_predictor(
    data: &NetworkDataset,
    theta: &Matrix,
    b: &Tensor3,
    subject: usize,
) -> Result<Matrix> {
    data.check_params(theta, b)?;
    let coefs = CoefView::new(b);
    let mut eta = theta.clone();
    coefs.add_mode3(eta.data_mut(), data.covariates.row(subject));
    Ok(eta)
}

/// Cached view of the coefficient tensor used inside the subject loop:
/// sparse tensors are contracted through their nonzero list, dense ones
/// slice by slice. Both visit `k` in ascending order per entry.
struct CoefView<'a> {
    b: &'a Tensor3,
    sparse: Option<Vec<(usize, usize, f64)>>,
}

impl<'a> CoefView<'a> {
    fn new(b: &'a Tensor3) -> Self {
        let (d1, d2, d3) = b.dims();
        let plane = d1 * d2;
        let nz = b.nonzeros();
        let sparse = if nz.len() * 4 < plane * d3 {
            Some(
                nz.into_iter()
                    .map(|(idx, v)| (idx % plane, idx / plane, v))
                    .collect(),
            )
        } else {
            None
        };
        Self { b, sparse }
    }

    fn add_mode3(&self, eta: &mut [f64], x: &[f64]) {
        match &self.sparse {
            Some(entries) => {
                for &(pos, k, v) in entries {
                    eta[pos] += v * x[k];
                }
            }
            None => {
                for (k, &xk) in x.iter().enumerate() {
                    if xk == 0.0 {
                        continue;
                    }
                    for (e, &v) in eta.iter_mut().zip(self.b.slice(k)) {
                        *e += xk * v;
                    }
                }
            }
        }
    }
}

/// Which gradients an evaluation should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Wants {
    pub theta: bool,
    pub b: bool,
}

impl Wants {
    pub const LOSS: Wants = Wants {
        theta: false,
        b: false,
    };
    pub const THETA: Wants = Wants {
        theta: true,
        b: false,
    };
    pub const B: Wants = Wants {
        theta: false,
        b: true,
    };
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loss: f64,
    pub grad_theta: Option<Matrix>,
    pub grad_b: Option<Tensor3>,
}

struct Partial {
    loss: f64,
    grad_theta: Option<Vec<f64>>,
    grad_b: Option<Vec<f64>>,
}

/// Loss and (optionally) gradients of `ℓ(Θ, B)` in one pass over subjects.
pub(crate) fn evaluate(
    data: &NetworkDataset,
    theta: &Matrix,
    b: &Tensor3,
    wants: Wants,
) -> Result<Evaluation> {
    data.check_params(theta, b)?;
    let n = data.num_nodes();
    let p = data.num_covariates();
    let big_n = data.num_subjects();
    let family = data.family;
    let coefs = CoefView::new(b);
    let plane = n * n;

    let chunk_len = big_n.div_ceil(MAX_CHUNKS.min(big_n));
    let chunks: Vec<std::ops::Range<usize>> = (0..big_n)
        .step_by(chunk_len)
        .map(|start| start..(start + chunk_len).min(big_n))
        .collect();

    let partials: Vec<Result<Partial>> = chunks
        .into_par_iter()
        .map(|range| {
            let mut loss = 0.0;
            let mut g_theta = wants.theta.then(|| vec![0.0; plane]);
            let mut g_b = wants.b.then(|| vec![0.0; plane * p]);
            let mut eta = vec![0.0; plane];
            let mut resid = vec![0.0; plane];
            for i in range {
                eta.copy_from_slice(theta.data());
                let x = data.covariates.row(i);
                coefs.add_mode3(&mut eta, x);
                let a = data.adjacency[i].data();
                for r in 0..n {
                    for c in 0..n {
                        let pos = r * n + c;
                        if r == c {
                            resid[pos] = 0.0;
                            continue;
                        }
                        let e = eta[pos];
                        if family == EdgeFamily::Poisson && e.abs() > LOG_LINK_ETA_LIMIT {
                            return Err(Error::Diverged {
                                reason: format!(
                                    "log-link predictor {e:.3e} exceeds ±{LOG_LINK_ETA_LIMIT}"
                                ),
                                step_history: Vec::new(),
                            });
                        }
                        loss += a[pos] * e - family.cumulant(e);
                        resid[pos] = family.inverse_link(e) - a[pos];
                    }
                }
                if let Some(g) = g_theta.as_mut() {
                    for (acc, r) in g.iter_mut().zip(&resid) {
                        *acc += r;
                    }
                }
                if let Some(g) = g_b.as_mut() {
                    for (k, &xk) in x.iter().enumerate() {
                        if xk == 0.0 {
                            continue;
                        }
                        for (acc, r) in g[k * plane..(k + 1) * plane].iter_mut().zip(&resid) {
                            *acc += xk * r;
                        }
                    }
                }
            }
            Ok(Partial {
                loss,
                grad_theta: g_theta,
                grad_b: g_b,
            })
        })
        .collect();

    let scale = 1.0 / big_n as f64;
    let mut loss = 0.0;
    let mut g_theta = wants.theta.then(|| vec![0.0; plane]);
    let mut g_b = wants.b.then(|| vec![0.0; plane * p]);
    for part in partials {
        let part = part?;
        loss += part.loss;
        if let (Some(acc), Some(src)) = (g_theta.as_mut(), part.grad_theta) {
            acc.iter_mut().zip(src).for_each(|(a, s)| *a += s);
        }
        if let (Some(acc), Some(src)) = (g_b.as_mut(), part.grad_b) {
            acc.iter_mut().zip(src).for_each(|(a, s)| *a += s);
        }
    }
    let loss = -loss * scale;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            reason: "non-finite loss".into(),
            step_history: Vec::new(),
        });
    }
    let grad_theta = g_theta.map(|g| {
        Matrix::new(n, n, g.into_iter().map(|v| v * scale).collect())
            .expect("finite gradient of a finite loss")
    });
    let grad_b = g_b.map(|g| {
        Tensor3::new(n, n, p, g.into_iter().map(|v| v * scale).collect())
            .expect("finite gradient of a finite loss")
    });
    Ok(Evaluation {
        loss,
        grad_theta,
        grad_b,
    })
}

/// Negative log-likelihood `ℓ(Θ, B)` (diagonal entries excluded).
pub fn neg_loglik(data: &NetworkDataset, theta: &Matrix, b: &Tensor3) -> Result<f64> {
    Ok(evaluate(data, theta, b, Wants::LOSS)?.loss)
}

/// `∂ℓ/∂Θ = -(1/N) Σ_i [A⁽ⁱ⁾ - ψ'(η⁽ⁱ⁾)]`, diagonal zero.
pub fn grad_theta(data: &NetworkDataset, theta: &Matrix, b: &Tensor3) -> Result<Matrix> {
    Ok(evaluate(data, theta, b, Wants::THETA)?
        .grad_theta
        .expect("requested"))
}

/// `∂ℓ/∂B`, slice `k` equal to `-(1/N) Σ_i x_ik [A⁽ⁱ⁾ - ψ'(η⁽ⁱ⁾)]`, diagonal
/// fibers zero.
pub fn grad_b(data: &NetworkDataset, theta: &Matrix, b: &Tensor3) -> Result<Tensor3> {
    Ok(evaluate(data, theta, b, Wants::B)?.grad_b.expect("requested"))
}

fn check_factor_pair(u: &Matrix, v: &Matrix) -> Result<()> {
    if u.shape() != v.shape() {
        return Err(dim_mismatch(
            "factor pair",
            format!("{:?}", u.shape()),
            format!("{:?}", v.shape()),
        ));
    }
    Ok(())
}

/// `uᵀu - vᵀv`.
pub(crate) fn imbalance(u: &Matrix, v: &Matrix) -> Matrix {
    let uu = u.t_matmul(u).expect("same row count");
    let vv = v.t_matmul(v).expect("same row count");
    uu.sub(&vv).expect("same rank")
}

/// `‖uᵀu - vᵀv‖²_F / 8`.
pub fn balance_penalty(u: &Matrix, v: &Matrix) -> Result<f64> {
    check_factor_pair(u, v)?;
    let d = imbalance(u, v).frobenius();
    Ok(d * d / 8.0)
}

/// Augmented objective `ℓ(u vᵀ, B) + ‖uᵀu - vᵀv‖²_F / 8`.
pub fn aug_loss(data: &NetworkDataset, u: &Matrix, v: &Matrix, b: &Tensor3) -> Result<f64> {
    check_factor_pair(u, v)?;
    let theta = u.matmul_t(v)?;
    Ok(neg_loglik(data, &theta, b)? + balance_penalty(u, v)?)
}

/// `∇_u = G v + u (uᵀu - vᵀv) / 2` with `G = ∂ℓ/∂Θ` at `Θ = u vᵀ`.
pub fn grad_u(data: &NetworkDataset, u: &Matrix, v: &Matrix, b: &Tensor3) -> Result<Matrix> {
    check_factor_pair(u, v)?;
    let g = grad_theta(data, &u.matmul_t(v)?, b)?;
    Ok(factor_grad_u(&g, u, v))
}

/// `∇_v = Gᵀ u + v (vᵀv - uᵀu) / 2`.
pub fn grad_v(data: &NetworkDataset, u: &Matrix, v: &Matrix, b: &Tensor3) -> Result<Matrix> {
    check_factor_pair(u, v)?;
    let g = grad_theta(data, &u.matmul_t(v)?, b)?;
    Ok(factor_grad_v(&g, u, v))
}

pub(crate) fn factor_grad_u(g: &Matrix, u: &Matrix, v: &Matrix) -> Matrix {
    let mut out = g.matmul(v).expect("n × n times n × r");
    let reg = u.matmul(&imbalance(u, v)).expect("n × r times r × r");
    out.axpy(0.5, &reg).expect("same shape");
    out
}

pub(crate) fn factor_grad_v(g: &Matrix, u: &Matrix, v: &Matrix) -> Matrix {
    let mut out = g.t_matmul(u).expect("n × n transposed times n × r");
    let reg = v.matmul(&imbalance(u, v)).expect("n × r times r × r");
    out.axpy(-0.5, &reg).expect("same shape");
    out
}

/// `Θ = u diag(λ) uᵀ`.
pub fn symmetric_theta(u: &Matrix, lambda: &[f64]) -> Result<Matrix> {
    if lambda.len() != u.cols() {
        return Err(dim_mismatch("lambda length", u.cols(), lambda.len()));
    }
    let mut theta = u.scale_columns(lambda).matmul_t(u)?;
    // Enforce exact symmetry regardless of rounding in the products.
    let n = theta.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            theta[(j, i)] = theta[(i, j)];
        }
    }
    Ok(theta)
}

/// Gradient of `ℓ(u Λ uᵀ, B)` in `u`: `(G + Gᵀ) u Λ`.
pub fn grad_u_symmetric(
    data: &NetworkDataset,
    u: &Matrix,
    lambda: &[f64],
    b: &Tensor3,
) -> Result<Matrix> {
    let theta = symmetric_theta(u, lambda)?;
    let g = grad_theta(data, &theta, b)?;
    Ok(symmetric_factor_grad(&g, u, lambda))
}

pub(crate) fn symmetric_factor_grad(g: &Matrix, u: &Matrix, lambda: &[f64]) -> Matrix {
    let sym = g.add(&g.transpose()).expect("square");
    sym.matmul(&u.scale_columns(lambda)).expect("n × n times n × r")
}
