use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use netresp::analysis::{
    detect_communities, estimation_errors, f1_support, inertia_curve, nmi, select_edges,
    DEFAULT_RESTARTS,
};
use netresp::optimizer::{
    ebic, fit, fit_loss, sparsity_budget, tune, FitResult, GridReport, Hyperparams,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use netresp::simulation::{
    generate, run_replications, standardize_columns, FitPlan, ReplicationOptions,
    ReplicationReport, SimConfig,
};
use netresp::{Matrix, NetworkDataset};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    default_covariate_names, labels_csv, load_dataset, read_labels, read_truth, write_dataset,
    write_truth, LoadedDataset,
};
use crate::error::{from_core, CliError, CliResult};
use crate::format::{dense_csv, fmt_num, write_text};
use crate::report::{
    Communities, FitReport, Standardization, TruthComparison, INTERCEPT_NOTE, REPORT_NAME,
};

/// Options shared by `fit` and `tune`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub rank: usize,
    pub sparsity_frac: f64,
    pub step_delta: Option<f64>,
    pub step_tau: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub standardize: bool,
    pub communities: Option<usize>,
    pub restarts: usize,
    pub timing: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank: 1,
            sparsity_frac: 0.0,
            step_delta: None,
            step_tau: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            standardize: true,
            communities: None,
            restarts: DEFAULT_RESTARTS,
            timing: false,
        }
    }
}

impl FitOptions {
    fn hyper(&self, rank: usize, sparsity: usize) -> Hyperparams {
        Hyperparams {
            rank,
            sparsity,
            step_delta: self.step_delta,
            step_tau: self.step_tau,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Generates a dataset from a simulation config and writes it, with its
/// ground truth under `truth/`, to `out`. Returns the manifest path.
pub fn cmd_simulate(config: &Path, seed: Option<u64>, out: &Path) -> CliResult<PathBuf> {
    let mut cfg: SimConfig = read_toml(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (data, truth) = generate(&cfg).map_err(|e| from_core(e, None))?;
    let names = default_covariate_names(data.num_covariates());
    let manifest = write_dataset(out, &data, &names, Some("truth"))?;
    write_truth(&out.join("truth"), &truth)?;
    Ok(manifest)
}

struct Prepared {
    loaded: LoadedDataset,
    data: NetworkDataset,
    standardization: Option<Standardization>,
}

fn prepare(manifest: &Path, opts: &FitOptions) -> CliResult<Prepared> {
    let loaded = load_dataset(manifest)?;
    let (data, standardization) = if opts.standardize && loaded.data.num_covariates() > 0 {
        let (x, means, sds) = standardize_columns(loaded.data.covariates());
        let data = loaded
            .data
            .with_covariates(x)
            .map_err(|e| from_core(e, Some(manifest)))?;
        (data, Some(Standardization { means, sds }))
    } else {
        (loaded.data.clone(), None)
    };
    Ok(Prepared {
        loaded,
        data,
        standardization,
    })
}

fn finish_report(
    prep: &Prepared,
    result: &FitResult,
    s0: Option<f64>,
    grid: Option<GridReport>,
    opts: &FitOptions,
    started: Instant,
) -> CliResult<FitReport> {
    let data = &prep.data;
    let loss = fit_loss(result, data).map_err(|e| from_core(e, None))?;
    let score = ebic(result, data).map_err(|e| from_core(e, None))?;
    let mut report = FitReport::base(result, loss, score);
    report.family = data.family();
    report.symmetric = data.is_symmetric();
    report.num_subjects = data.num_subjects();
    report.covariate_names = prep.loaded.covariate_names.clone();
    report.s0 = s0;
    report.grid = grid;
    if prep.standardization.is_some() {
        report.note = Some(INTERCEPT_NOTE.to_string());
    }
    report.standardization = prep.standardization.clone();

    if let Some(k) = opts.communities {
        let found = detect_communities(result.factors.u(), k, opts.restarts, opts.seed)
            .map_err(|e| from_core(e, None))?;
        report.communities = Some(Communities {
            k,
            restarts: opts.restarts,
            seed: opts.seed,
            labels: found.labels,
            inertia: found.inertia,
        });
    }

    if let Some(dir) = prep.loaded.truth_dir() {
        if dir.join("meta.json").exists() {
            let truth = read_truth(&dir)?;
            let errors = estimation_errors(result, &truth, data).map_err(|e| from_core(e, None))?;
            let upper = data.is_symmetric();
            let f1 = (data.num_covariates() > 0).then(|| {
                f1_support(
                    &select_edges(&result.b, upper),
                    &select_edges(&truth.b_star, upper),
                )
            });
            let nmi_score = match (&report.communities, &truth.communities) {
                (Some(c), Some(t)) => Some(nmi(&c.labels, t).map_err(|e| from_core(e, None))?),
                _ => None,
            };
            report.truth = Some(TruthComparison {
                errors,
                f1,
                nmi: nmi_score,
            });
        }
    }
    if opts.timing {
        report.runtime_seconds = Some(started.elapsed().as_secs_f64());
    }
    Ok(report)
}

/// Fits at fixed `(r, s₀)` and writes `report.json` under `out`.
pub fn cmd_fit(manifest: &Path, opts: &FitOptions, out: &Path) -> CliResult<FitReport> {
    let started = Instant::now();
    let prep = prepare(manifest, opts)?;
    let data = &prep.data;
    let s = sparsity_budget(
        opts.sparsity_frac,
        data.num_nodes(),
        data.num_covariates(),
        data.is_symmetric(),
    )
    .map_err(|e| from_core(e, None))?;
    let hyper = opts.hyper(opts.rank, s);
    hyper.validate().map_err(|e| from_core(e, None))?;
    let result = fit(data, &hyper).map_err(|e| from_core(e, None))?;
    let report = finish_report(&prep, &result, Some(opts.sparsity_frac), None, opts, started)?;
    write_text(&out.join(REPORT_NAME), &report.to_json())?;
    Ok(report)
}

/// `1..=min(20, n)`.
pub fn default_rank_grid(n: usize) -> Vec<usize> {
    (1..=n.min(20)).collect()
}

/// `10^{-3}, 10^{-2.9}, …, 10^{0}`.
pub fn default_sparsity_grid() -> Vec<f64> {
    (0..=30).map(|k| 10f64.powf(-3.0 + 0.1 * k as f64)).collect()
}

pub fn grid_csv(grid: &GridReport) -> String {
    let mut out = String::from("rank,s0,sparsity,loss,ebic,selected,status\n");
    for (idx, c) in grid.cells.iter().enumerate() {
        let num = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        let status = match &c.failure {
            None => "ok".to_string(),
            Some(msg) => format!("\"failed: {}\"", msg.replace('"', "'")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.rank,
            fmt_num(c.s0),
            c.sparsity,
            num(c.loss),
            num(c.ebic),
            u8::from(idx == grid.best),
            status
        );
    }
    out
}

/// eBIC sweep; writes `report.json` and `grid.csv` under `out`. Without
/// covariates the sparsity grid collapses to `{0}`.
pub fn cmd_tune(
    manifest: &Path,
    ranks: Option<Vec<usize>>,
    sparsity_fracs: Option<Vec<f64>>,
    opts: &FitOptions,
    out: &Path,
) -> CliResult<FitReport> {
    let started = Instant::now();
    let prep = prepare(manifest, opts)?;
    let data = &prep.data;
    let ranks = ranks.unwrap_or_else(|| default_rank_grid(data.num_nodes()));
    let fracs = match sparsity_fracs {
        Some(f) => f,
        None if data.num_covariates() == 0 => vec![0.0],
        None => default_sparsity_grid(),
    };
    let template = opts.hyper(1, 0);
    let (result, grid) = tune(data, &ranks, &fracs, &template).map_err(|e| from_core(e, None))?;
    let s0 = grid.best_cell().s0;
    let csv = grid_csv(&grid);
    let report = finish_report(&prep, &result, Some(s0), Some(grid), opts, started)?;
    write_text(&out.join(REPORT_NAME), &report.to_json())?;
    write_text(&out.join("grid.csv"), &csv)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Node grouping file (`node,group`); nodes are stably sorted by group.
    pub order: Option<PathBuf>,
    /// Recompute communities with this `K` instead of using the report's.
    pub communities: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
    /// Largest `K` in the inertia table.
    pub k_max: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            order: None,
            communities: None,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            k_max: 10,
        }
    }
}

/// Node order from a grouping file: stable sort of nodes by group.
pub fn ordering_from_groups(groups: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&node| groups[node]);
    order
}

fn permute(m: &Matrix, order: &[usize]) -> Matrix {
    Matrix::from_fn(order.len(), order.len(), |i, j| m[(order[i], order[j])])
}

/// Writes plot-ready CSVs for a fit report: `heatmap.csv` (`g⁻¹(Θ̂)`),
/// `b_<name>.csv` per covariate, `order.csv`, `inertia.csv` and, when
/// communities are available, `communities.csv`.
pub fn cmd_report(report_path: &Path, opts: &ReportOptions, out: &Path) -> CliResult<Vec<PathBuf>> {
    let report = FitReport::load(report_path)?;
    let n = report.n;
    let order = match &opts.order {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::ingest(path, None, "grouping file not found"));
            }
            let groups = read_labels(path)?;
            if groups.len() != n {
                return Err(CliError::ingest(
                    path,
                    None,
                    format!("grouping lists {} nodes, report has {n}", groups.len()),
                ));
            }
            ordering_from_groups(&groups)
        }
        None => (0..n).collect(),
    };
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> CliResult<()> {
        let path = out.join(name);
        write_text(&path, &body)?;
        written.push(path);
        Ok(())
    };

    let theta = report.theta_matrix()?;
    let family = report.family;
    let heat = permute(&theta, &order).map(|eta| family.inverse_link(eta));
    emit("heatmap.csv", dense_csv(&heat))?;
    let mut order_csv = String::from("position,node\n");
    for (pos, node) in order.iter().enumerate() {
        let _ = writeln!(order_csv, "{pos},{node}");
    }
    emit("order.csv", order_csv)?;

    let b = report.b_tensor();
    for (k, name) in report.covariate_names.iter().enumerate() {
        emit(
            &format!("b_{}.csv", file_safe(name)),
            dense_csv(&permute(&b.slice_matrix(k), &order)),
        )?;
    }

    let u = report.u_matrix()?;
    let labels = match opts.communities {
        Some(k) => Some(
            detect_communities(&u, k, opts.restarts, opts.seed)
                .map_err(|e| from_core(e, None))?
                .labels,
        ),
        None => report.communities.as_ref().map(|c| c.labels.clone()),
    };
    if let Some(labels) = labels {
        emit("communities.csv", labels_csv(&labels))?;
    }
    let curve = inertia_curve(&u, opts.k_max, opts.restarts, opts.seed)
        .map_err(|e| from_core(e, None))?;
    let mut inertia = String::from("k,inertia\n");
    for (k, v) in curve {
        let _ = writeln!(inertia, "{k},{}", fmt_num(v));
    }
    emit("inertia.csv", inertia)?;
    Ok(written)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Truth,
    Fixed,
    Tune,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFit {
    pub step_delta: Option<f64>,
    pub step_tau: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
}

/// One simulation parameter varied across study points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub field: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub reps: usize,
    pub plan: PlanKind,
    pub rank: Option<usize>,
    pub s0: Option<f64>,
    pub ranks: Option<Vec<usize>>,
    pub s0_grid: Option<Vec<f64>>,
    pub communities: Option<usize>,
    pub restarts: Option<usize>,
    pub simulation: SimConfig,
    #[serde(default)]
    pub fit: StudyFit,
    pub sweep: Option<Sweep>,
}

impl StudyConfig {
    fn plan(&self) -> CliResult<FitPlan> {
        let need = |what: &str| CliError::Config(format!("plan {:?} needs '{what}'", self.plan));
        Ok(match self.plan {
            PlanKind::Truth => FitPlan::Truth,
            PlanKind::Fixed => FitPlan::Fixed {
                rank: self.rank.ok_or_else(|| need("rank"))?,
                s0: self.s0.unwrap_or(0.0),
            },
            PlanKind::Tune => FitPlan::Tune {
                ranks: self.ranks.clone().ok_or_else(|| need("ranks"))?,
                s0: self.s0_grid.clone().unwrap_or_else(|| vec![0.0]),
            },
        })
    }

    fn options(&self) -> CliResult<ReplicationOptions> {
        let mut opts = ReplicationOptions::new(self.reps, self.plan()?);
        let f = &self.fit;
        opts.template.step_delta = f.step_delta;
        opts.template.step_tau = f.step_tau;
        opts.template.tol = f.tol.unwrap_or(DEFAULT_TOL);
        opts.template.max_iter = f.max_iter.unwrap_or(DEFAULT_MAX_ITER);
        opts.template.seed = f.seed.unwrap_or(0);
        opts.communities = self.communities;
        opts.restarts = self.restarts.unwrap_or(DEFAULT_RESTARTS);
        Ok(opts)
    }

    /// Simulation configs for every study point with the swept value.
    fn points(&self) -> CliResult<Vec<(Option<String>, SimConfig)>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(None, self.simulation.clone())]);
        };
        let base = toml::Value::try_from(&self.simulation)
            .map_err(|e| CliError::Config(e.to_string()))?;
        sweep
            .values
            .iter()
            .map(|v| {
                let mut table = base.clone();
                let slot = table
                    .as_table_mut()
                    .expect("config serializes to a table")
                    .get_mut(&sweep.field)
                    .ok_or_else(|| {
                        CliError::Config(format!("unknown sweep field '{}'", sweep.field))
                    })?;
                *slot = v.clone();
                let cfg: SimConfig = table
                    .try_into()
                    .map_err(|e| CliError::Config(format!("sweep value {v}: {e}")))?;
                let label = match v {
                    toml::Value::Float(f) => fmt_num(*f),
                    other => other.to_string(),
                };
                Ok((Some(label), cfg))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub sweep_value: Option<String>,
    pub report: ReplicationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub sweep_field: Option<String>,
    pub points: Vec<StudyPoint>,
}

const SUMMARY_METRICS: [&str; 8] = [
    "mu_error",
    "mu_error_normalized",
    "mu_rmse",
    "theta_error",
    "b_error",
    "f1",
    "nmi",
    "iterations",
];

/// One row per study point with `mean` and (for more than one
/// replication) `se` columns per metric.
pub fn summary_csv(study: &StudyReport, reps: usize) -> String {
    let present: Vec<&str> = SUMMARY_METRICS
        .iter()
        .copied()
        .filter(|m| study.points.iter().any(|p| p.report.metric(m).is_some()))
        .collect();
    let mut header = Vec::new();
    if let Some(f) = &study.sweep_field {
        header.push(f.clone());
    }
    header.push("reps".into());
    header.push("failures".into());
    for m in &present {
        header.push(format!("{m}_mean"));
        if reps > 1 {
            header.push(format!("{m}_se"));
        }
    }
    let mut out = header.join(",") + "\n";
    for p in &study.points {
        let mut row = Vec::new();
        if study.sweep_field.is_some() {
            row.push(p.sweep_value.clone().unwrap_or_default());
        }
        row.push(reps.to_string());
        row.push(p.report.failures.to_string());
        for m in &present {
            let s = p.report.metric(m);
            row.push(s.map(|s| fmt_num(s.mean)).unwrap_or_default());
            if reps > 1 {
                row.push(s.and_then(|s| s.se).map(fmt_num).unwrap_or_default());
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One row per replication and sweep point; failed replications keep their
/// row with the failure message and empty metrics.
pub fn replications_csv(study: &StudyReport) -> String {
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let mut header = Vec::new();
    if let Some(f) = &study.sweep_field {
        header.push(f.as_str());
    }
    header.extend([
        "rep",
        "mu_error",
        "mu_error_normalized",
        "mu_rmse",
        "theta_error",
        "b_error",
        "f1",
        "nmi",
        "rank",
        "sparsity",
        "iterations",
        "converged",
        "failure",
    ]);
    let mut out = header.join(",") + "\n";
    for p in &study.points {
        for rec in &p.report.records {
            let mut row = Vec::new();
            if study.sweep_field.is_some() {
                row.push(p.sweep_value.clone().unwrap_or_default());
            }
            row.push(rec.rep.to_string());
            match &rec.metrics {
                Some(m) => row.extend([
                    fmt_num(m.mu_error),
                    fmt_num(m.mu_error_normalized),
                    fmt_num(m.mu_rmse),
                    fmt_num(m.theta_error),
                    fmt_num(m.b_error),
                    opt(m.f1),
                    opt(m.nmi),
                    m.rank.to_string(),
                    m.sparsity.to_string(),
                    m.iterations.to_string(),
                    m.converged.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 11)),
            }
            // Commas and quotes would break the row.
            let failure = rec.failure.as_deref().unwrap_or("");
            row.push(failure.replace([',', '"', '\n'], " "));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// Runs a replication study; writes `summary.csv`, `replications.csv` and
/// `study.json`.
pub fn cmd_replicate(config: &Path, seed: Option<u64>, out: &Path) -> CliResult<StudyReport> {
    let mut study: StudyConfig = read_toml(config)?;
    if let Some(s) = seed {
        study.simulation.seed = s;
    }
    let opts = study.options()?;
    let mut points = Vec::new();
    for (label, cfg) in study.points()? {
        let report = run_replications(&cfg, &opts).map_err(|e| from_core(e, None))?;
        points.push(StudyPoint {
            sweep_value: label,
            report,
        });
    }
    let report = StudyReport {
        sweep_field: study.sweep.as_ref().map(|s| s.field.clone()),
        points,
    };
    write_text(&out.join("summary.csv"), &summary_csv(&report, study.reps))?;
    write_text(&out.join("replications.csv"), &replications_csv(&report))?;
    let json = serde_json::to_string_pretty(&report).expect("study report serializes") + "\n";
    write_text(&out.join("study.json"), &json)?;
    Ok(report)
}
