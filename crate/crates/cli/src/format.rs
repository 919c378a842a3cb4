//! Plain-text numeric formats: dense CSV matrices, edge lists and sparse
//! tensor triplets.
//!
//! Every float is written with 10 significant digits through [`fmt_num`],
//! so reading a file back and writing it again reproduces it byte for byte.

use std::fs;
use std::path::Path;

use netresp::{Matrix, Tensor3};

use crate::error::{CliError, CliResult};

pub const SIG_DIGITS: usize = 10;

/// Rounds to 10 significant digits and prints the shortest representation
/// of the rounded value.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{:.*e}", SIG_DIGITS - 1, v)
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

fn reader(path: &Path, has_headers: bool) -> CliResult<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::ingest(path, None, e.to_string()))
}

fn line_of(record: &csv::StringRecord) -> Option<usize> {
    record.position().map(|p| p.line() as usize)
}

fn parse_field(path: &Path, record: &csv::StringRecord, col: usize) -> CliResult<f64> {
    let raw = &record[col];
    raw.parse::<f64>().map_err(|_| {
        CliError::ingest(
            path,
            line_of(record),
            format!("column {}: '{raw}' is not a number", col + 1),
        )
    })
}

/// All rows of a headerless numeric CSV, with their line numbers.
pub fn read_numeric_rows(path: &Path) -> CliResult<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for rec in reader(path, false)?.records() {
        let rec = rec.map_err(|e| CliError::ingest(path, None, e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let line = line_of(&rec).unwrap_or(0);
        let vals = (0..rec.len())
            .map(|c| parse_field(path, &rec, c))
            .collect::<CliResult<Vec<_>>>()?;
        out.push((line, vals));
    }
    Ok(out)
}

/// How a network file is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkLayout {
    Dense,
    EdgeList,
}

/// Dense when every row has `n` columns; an edge list when every row has
/// three. With `n = 3` both match and dense wins unless the row count
/// differs from `n`.
pub fn detect_layout(rows: &[(usize, Vec<f64>)], n: usize) -> Option<NetworkLayout> {
    let all = |w: usize| rows.iter().all(|(_, r)| r.len() == w);
    if all(n) && (n != 3 || rows.len() == n) {
        Some(NetworkLayout::Dense)
    } else if all(3) {
        Some(NetworkLayout::EdgeList)
    } else {
        None
    }
}

/// Reads an `n × n` network in either layout. Edge lists use 0-based node
/// indices; absent pairs are zero and, for symmetric data, each listed pair
/// is mirrored.
pub fn read_network(path: &Path, n: usize, symmetric: bool) -> CliResult<Matrix> {
    let rows = read_numeric_rows(path)?;
    match detect_layout(&rows, n) {
        Some(NetworkLayout::Dense) => {
            if rows.len() != n {
                return Err(CliError::ingest(
                    path,
                    None,
                    format!("expected {n} rows, found {}", rows.len()),
                ));
            }
            let data = rows.into_iter().flat_map(|(_, r)| r).collect();
            Matrix::new(n, n, data).map_err(|e| CliError::ingest(path, None, e.to_string()))
        }
        Some(NetworkLayout::EdgeList) => {
            let mut m = Matrix::zeros(n, n);
            let mut seen = vec![false; n * n];
            for (line, r) in rows {
                let idx = |v: f64| -> CliResult<usize> {
                    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n {
                        Ok(v as usize)
                    } else {
                        Err(CliError::ingest(
                            path,
                            Some(line),
                            format!("node index {v} outside 0..{n}"),
                        ))
                    }
                };
                let (i, j, val) = (idx(r[0])?, idx(r[1])?, r[2]);
                let mut put = |a: usize, b: usize| -> CliResult<()> {
                    if seen[a * n + b] && m[(a, b)] != val {
                        return Err(CliError::ingest(
                            path,
                            Some(line),
                            format!("conflicting values for edge ({a}, {b})"),
                        ));
                    }
                    seen[a * n + b] = true;
                    m.data_mut()[a * n + b] = val;
                    Ok(())
                };
                put(i, j)?;
                if symmetric && i != j {
                    put(j, i)?;
                }
            }
            Ok(m)
        }
        None => Err(CliError::ingest(
            path,
            rows.first().map(|(l, _)| *l),
            format!("rows must all have {n} columns (dense) or 3 columns (edge list)"),
        )),
    }
}

pub fn dense_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| CliError::output(path, e))
}

pub fn read_dense(path: &Path) -> CliResult<Matrix> {
    let rows = read_numeric_rows(path)?;
    let width = rows.first().map_or(0, |(_, r)| r.len());
    if let Some((line, _)) = rows.iter().find(|(_, r)| r.len() != width) {
        return Err(CliError::ingest(path, Some(*line), "ragged row"));
    }
    let height = rows.len();
    Matrix::new(height, width, rows.into_iter().flat_map(|(_, r)| r).collect())
        .map_err(|e| CliError::ingest(path, None, e.to_string()))
}

/// Nonzeros of `b` as `i,j,k,value` lines under a header.
pub fn triplets_csv(b: &Tensor3) -> String {
    let mut out = String::from("i,j,k,value\n");
    let mut entries: Vec<(usize, usize, usize, f64)> = b
        .nonzeros()
        .into_iter()
        .map(|(idx, v)| {
            let (i, j, k) = b.unravel(idx);
            (i, j, k, v)
        })
        .collect();
    entries.sort_by_key(|&(i, j, k, _)| (k, i, j));
    for (i, j, k, v) in entries {
        out.push_str(&format!("{i},{j},{k},{}\n", fmt_num(v)));
    }
    out
}

pub fn read_triplets(path: &Path, dims: (usize, usize, usize)) -> CliResult<Tensor3> {
    let mut b = Tensor3::zeros(dims.0, dims.1, dims.2);
    for rec in reader(path, true)?.records() {
        let rec = rec.map_err(|e| CliError::ingest(path, None, e.to_string()))?;
        if rec.len() != 4 {
            return Err(CliError::ingest(path, line_of(&rec), "expected i,j,k,value"));
        }
        let vals = (0..4)
            .map(|c| parse_field(path, &rec, c))
            .collect::<CliResult<Vec<_>>>()?;
        let (i, j, k) = (vals[0] as usize, vals[1] as usize, vals[2] as usize);
        if i >= dims.0 || j >= dims.1 || k >= dims.2 {
            return Err(CliError::ingest(
                path,
                line_of(&rec),
                format!("index ({i}, {j}, {k}) outside {dims:?}"),
            ));
        }
        b.set(i, j, k, vals[3]);
    }
    Ok(b)
}

/// Covariates: a header row of names followed by one row per subject.
pub fn read_covariates(path: &Path) -> CliResult<(Vec<String>, Matrix)> {
    let mut rdr = reader(path, true)?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::ingest(path, Some(1), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::ingest(path, None, e.to_string()))?;
        if rec.len() != names.len() {
            return Err(CliError::ingest(
                path,
                line_of(&rec),
                format!("expected {} values, found {}", names.len(), rec.len()),
            ));
        }
        for c in 0..rec.len() {
            data.push(parse_field(path, &rec, c)?);
        }
        rows += 1;
    }
    let x = Matrix::new(rows, names.len(), data)
        .map_err(|e| CliError::ingest(path, None, e.to_string()))?;
    Ok((names, x))
}

pub fn covariates_csv(names: &[String], x: &Matrix) -> String {
    let mut out = names.join(",");
    out.push('\n');
    out.push_str(&dense_csv(x));
    out
}
