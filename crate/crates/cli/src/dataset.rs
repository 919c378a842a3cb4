//! Dataset manifests: a `key = value` header file naming one network file
//! per subject and an optional covariate CSV. Paths are relative to the
//! manifest's directory.
//!
//! ```text
//! n = 50
//! subjects = 3
//! covariates = 2
//! family = bernoulli
//! symmetric = true
//! covariate_file = covariates.csv
//! truth = truth
//! network = networks/subject_0000.csv
//! network = networks/subject_0001.csv
//! network = networks/subject_0002.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use netresp::simulation::SimTruth;
use netresp::{EdgeFamily, Matrix, NetworkDataset, Tensor3};
use serde::{Deserialize, Serialize};

use crate::error::{from_core, CliError, CliResult};
use crate::format::{
    covariates_csv, dense_csv, read_covariates, read_dense, read_network, read_triplets,
    triplets_csv, write_text,
};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub n: usize,
    pub num_subjects: usize,
    pub num_covariates: usize,
    pub family: EdgeFamily,
    pub symmetric: bool,
    pub networks: Vec<PathBuf>,
    pub covariate_file: Option<PathBuf>,
    /// Directory of ground-truth files, present for simulated data.
    pub truth: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn parse(path: &Path, text: &str) -> CliResult<Self> {
        let mut n = None;
        let mut subjects = None;
        let mut covariates = None;
        let mut family = None;
        let mut symmetric = None;
        let mut networks = Vec::new();
        let mut covariate_file = None;
        let mut truth = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CliError::ingest(path, Some(line_no), msg);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let count = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| err(format!("{key}: '{v}' is not a count")))
            };
            match key {
                "n" => n = Some(count(value)?),
                "subjects" => subjects = Some(count(value)?),
                "covariates" => covariates = Some(count(value)?),
                "family" => {
                    family = Some(value.parse::<EdgeFamily>().map_err(|e| err(e.to_string()))?)
                }
                "symmetric" => {
                    symmetric = Some(match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(err(format!("symmetric: '{value}' is not true/false"))),
                    })
                }
                "network" => networks.push(PathBuf::from(value)),
                "covariate_file" => covariate_file = Some(PathBuf::from(value)),
                "truth" => truth = Some(PathBuf::from(value)),
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        let missing = |k: &str| CliError::ingest(path, None, format!("missing key '{k}'"));
        let m = DatasetManifest {
            n: n.ok_or_else(|| missing("n"))?,
            num_subjects: subjects.ok_or_else(|| missing("subjects"))?,
            num_covariates: covariates.unwrap_or(0),
            family: family.ok_or_else(|| missing("family"))?,
            symmetric: symmetric.unwrap_or(true),
            networks,
            covariate_file,
            truth,
        };
        if m.networks.len() != m.num_subjects {
            return Err(CliError::ingest(
                path,
                None,
                format!(
                    "subjects = {} but {} network files listed",
                    m.num_subjects,
                    m.networks.len()
                ),
            ));
        }
        if m.num_covariates > 0 && m.covariate_file.is_none() {
            return Err(missing("covariate_file"));
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "subjects = {}", self.num_subjects);
        let _ = writeln!(out, "covariates = {}", self.num_covariates);
        let _ = writeln!(out, "family = {}", self.family);
        let _ = writeln!(out, "symmetric = {}", self.symmetric);
        if let Some(c) = &self.covariate_file {
            let _ = writeln!(out, "covariate_file = {}", c.display());
        }
        if let Some(t) = &self.truth {
            let _ = writeln!(out, "truth = {}", t.display());
        }
        for net in &self.networks {
            let _ = writeln!(out, "network = {}", net.display());
        }
        out
    }
}

/// A dataset read from disk, with the names of its covariates.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub base: PathBuf,
    pub data: NetworkDataset,
    pub covariate_names: Vec<String>,
}

impl LoadedDataset {
    pub fn truth_dir(&self) -> Option<PathBuf> {
        self.manifest.truth.as_ref().map(|t| self.base.join(t))
    }
}

pub fn load_dataset(manifest_path: &Path) -> CliResult<LoadedDataset> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| CliError::ingest(manifest_path, None, e.to_string()))?;
    let manifest = DatasetManifest::parse(manifest_path, &text)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let n = manifest.n;
    let adjacency = manifest
        .networks
        .iter()
        .map(|p| {
            let path = base.join(p);
            let a = read_network(&path, n, manifest.symmetric)?;
            check_network(&path, &a, manifest.family, manifest.symmetric)?;
            Ok(a)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let (names, x) = match &manifest.covariate_file {
        Some(c) => {
            let path = base.join(c);
            let (names, x) = read_covariates(&path)?;
            if x.shape() != (manifest.num_subjects, manifest.num_covariates) {
                return Err(CliError::ingest(
                    &path,
                    None,
                    format!(
                        "expected {} subjects × {} covariates, found {} × {}",
                        manifest.num_subjects,
                        manifest.num_covariates,
                        x.rows(),
                        x.cols()
                    ),
                ));
            }
            (names, x)
        }
        None => (Vec::new(), Matrix::zeros(manifest.num_subjects, 0)),
    };
    let data = NetworkDataset::new(adjacency, x, manifest.family, manifest.symmetric)
        .map_err(|e| from_core(e, Some(manifest_path)))?;
    Ok(LoadedDataset {
        manifest,
        base,
        data,
        covariate_names: names,
    })
}

/// Per-file validation so that errors name the offending network.
fn check_network(path: &Path, a: &Matrix, family: EdgeFamily, symmetric: bool) -> CliResult<()> {
    let n = a.rows();
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            if i != j && !family.admits(v) {
                return Err(CliError::ingest(
                    path,
                    None,
                    format!("entry ({i}, {j}) = {v} is not a valid {family} outcome"),
                ));
            }
            if symmetric && v != a[(j, i)] {
                return Err(CliError::ingest(
                    path,
                    None,
                    format!("network flagged symmetric but entry ({i}, {j}) differs from ({j}, {i})"),
                ));
            }
        }
    }
    Ok(())
}

/// Writes `data` as a manifest plus dense network CSVs under `dir`.
pub fn write_dataset(
    dir: &Path,
    data: &NetworkDataset,
    covariate_names: &[String],
    truth_subdir: Option<&str>,
) -> CliResult<PathBuf> {
    let networks: Vec<PathBuf> = (0..data.num_subjects())
        .map(|i| PathBuf::from(format!("networks/subject_{i:04}.csv")))
        .collect();
    for (rel, a) in networks.iter().zip(data.adjacency()) {
        write_text(&dir.join(rel), &dense_csv(a))?;
    }
    let covariate_file = if data.num_covariates() > 0 {
        let rel = PathBuf::from("covariates.csv");
        write_text(
            &dir.join(&rel),
            &covariates_csv(covariate_names, data.covariates()),
        )?;
        Some(rel)
    } else {
        None
    };
    let manifest = DatasetManifest {
        n: data.num_nodes(),
        num_subjects: data.num_subjects(),
        num_covariates: data.num_covariates(),
        family: data.family(),
        symmetric: data.is_symmetric(),
        networks,
        covariate_file,
        truth: truth_subdir.map(PathBuf::from),
    };
    let path = dir.join(MANIFEST_NAME);
    write_text(&path, &manifest.render())?;
    Ok(path)
}

pub fn default_covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("x{k}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthMeta {
    rank: usize,
    sigma1: f64,
    n: usize,
    p: usize,
}

/// Ground truth as `theta.csv`, `b.csv` (triplets), `meta.json`, and when
/// present `communities.csv` and `deviations.csv`.
pub fn write_truth(dir: &Path, truth: &SimTruth) -> CliResult<()> {
    let (n, _, p) = truth.b_star.dims();
    write_text(&dir.join("theta.csv"), &dense_csv(&truth.theta_star))?;
    write_text(&dir.join("b.csv"), &triplets_csv(&truth.b_star))?;
    if let Some(labels) = &truth.communities {
        write_text(&dir.join("communities.csv"), &labels_csv(labels))?;
    }
    if let Some(dev) = &truth.deviations {
        write_text(&dir.join("deviations.csv"), &dense_csv(dev))?;
    }
    let meta = TruthMeta {
        rank: truth.rank,
        sigma1: truth.sigma1,
        n,
        p,
    };
    let json = serde_json::to_string_pretty(&meta).expect("plain struct serializes");
    write_text(&dir.join("meta.json"), &(json + "\n"))
}

pub fn read_truth(dir: &Path) -> CliResult<SimTruth> {
    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| CliError::ingest(&meta_path, None, e.to_string()))?;
    let meta: TruthMeta = serde_json::from_str(&meta_text)
        .map_err(|e| CliError::ingest(&meta_path, Some(e.line()), e.to_string()))?;
    let theta = read_dense(&dir.join("theta.csv"))?;
    let b: Tensor3 = read_triplets(&dir.join("b.csv"), (meta.n, meta.n, meta.p))?;
    let comm_path = dir.join("communities.csv");
    let communities = if comm_path.exists() {
        Some(read_labels(&comm_path)?)
    } else {
        None
    };
    let dev_path = dir.join("deviations.csv");
    let deviations = if dev_path.exists() {
        Some(read_dense(&dev_path)?)
    } else {
        None
    };
    SimTruth::new(theta, b, communities, meta.rank, deviations)
        .map_err(|e| from_core(e, Some(dir)))
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("node,community\n");
    for (node, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{node},{l}");
    }
    out
}

/// Node grouping file: `node,group` rows (an optional header line is
/// skipped). Returns the group of every node in node order.
pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::ingest(path, None, e.to_string()))?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => pairs.push((v[0], v[1])),
            None if pairs.is_empty() && idx == 0 => continue,
            _ => {
                return Err(CliError::ingest(
                    path,
                    Some(idx + 1),
                    "expected 'node,group' with non-negative integers",
                ))
            }
        }
    }
    pairs.sort_unstable();
    for (expect, &(node, _)) in pairs.iter().enumerate() {
        if node != expect {
            return Err(CliError::ingest(
                path,
                None,
                format!("nodes must be listed exactly once as 0..n; missing or repeated {expect}"),
            ));
        }
    }
    Ok(pairs.into_iter().map(|(_, g)| g).collect())
}
