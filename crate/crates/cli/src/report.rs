use std::path::Path;

use netresp::analysis::EstimationErrors;
use netresp::optimizer::{FactorModel, FitResult, GridReport};
use netresp::{EdgeFamily, Matrix, Tensor3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const REPORT_NAME: &str = "report.json";

pub const INTERCEPT_NOTE: &str = "covariates were standardized to mean 0 and sd 1 before fitting, \
so theta is the linear predictor at the average covariate vector";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Communities {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    #[serde(flatten)]
    pub errors: EstimationErrors,
    /// Support recovery of `B̂`; absent without covariates.
    pub f1: Option<f64>,
    /// Agreement of detected communities with the true blocks.
    pub nmi: Option<f64>,
}

/// Everything a fit produced, in a form that reloads losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub note: Option<String>,
    pub family: EdgeFamily,
    pub symmetric: bool,
    pub n: usize,
    pub num_subjects: usize,
    pub covariate_names: Vec<String>,
    pub rank: usize,
    pub sparsity: usize,
    pub s0: Option<f64>,
    /// Dense `Θ̂`, row by row.
    pub theta: Vec<Vec<f64>>,
    /// Nonzero entries of `B̂` ordered by `(k, i, j)`.
    pub b: Vec<Triplet>,
    pub u: Vec<Vec<f64>>,
    /// Right factor (asymmetric fits).
    pub v: Option<Vec<Vec<f64>>>,
    /// Fixed signs (symmetric fits).
    pub lambda: Option<Vec<f64>>,
    pub loss: f64,
    pub ebic: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub steps: (f64, f64),
    pub step_history: Vec<(f64, f64)>,
    pub grid: Option<GridReport>,
    pub standardization: Option<Standardization>,
    pub communities: Option<Communities>,
    pub truth: Option<TruthComparison>,
    /// Wall-clock seconds; only recorded on request since it breaks
    /// byte-identical reruns.
    pub runtime_seconds: Option<f64>,
}

impl FitReport {
    pub fn base(fit: &FitResult, loss: f64, ebic: f64) -> Self {
        let (n, _, p) = fit.b.dims();
        let (v, lambda) = match &fit.factors {
            FactorModel::Asymmetric { v, .. } => (Some(v.to_rows()), None),
            FactorModel::Symmetric { lambda, .. } => (None, Some(lambda.clone())),
        };
        let mut b: Vec<Triplet> = fit
            .b
            .nonzeros()
            .into_iter()
            .map(|(idx, value)| {
                let (i, j, k) = fit.b.unravel(idx);
                Triplet { i, j, k, value }
            })
            .collect();
        b.sort_by_key(|t| (t.k, t.i, t.j));
        FitReport {
            note: None,
            family: EdgeFamily::Bernoulli,
            symmetric: fit.factors.is_symmetric(),
            n,
            num_subjects: 0,
            covariate_names: (1..=p).map(|k| format!("x{k}")).collect(),
            rank: fit.factors.rank(),
            sparsity: fit.hyper.sparsity,
            s0: None,
            theta: fit.theta().to_rows(),
            b,
            u: fit.factors.u().to_rows(),
            v,
            lambda,
            loss,
            ebic,
            objective_trace: fit.objective_trace.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
            steps: fit.steps,
            step_history: fit.step_history.clone(),
            grid: None,
            standardization: None,
            communities: None,
            truth: None,
            runtime_seconds: None,
        }
    }

    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn theta_matrix(&self) -> CliResult<Matrix> {
        Matrix::from_rows(&self.theta).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn u_matrix(&self) -> CliResult<Matrix> {
        Matrix::from_rows(&self.u).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn b_tensor(&self) -> Tensor3 {
        let mut b = Tensor3::zeros(self.n, self.n, self.num_covariates());
        for t in &self.b {
            b.set(t.i, t.j, t.k, t.value);
        }
        b
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ingest(path, None, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| CliError::ingest(path, Some(e.line()), e.to_string()))
    }
}
