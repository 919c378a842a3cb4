//! Dense matrix and three-way tensor storage plus the handful of kernels the
//! estimator needs: mode-3 products, slice-wise inner products, Frobenius
//! norms, hard-thresholding truncation and the rank-r truncated SVD.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_mismatch(
                "Matrix::new",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(dim_mismatch("Matrix::from_rows", c, bad.len()));
        }
        Self::new(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(dim_mismatch("matmul", self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(dim_mismatch("t_matmul", self.rows, other.rows));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for l in 0..self.rows {
            let a_row = self.row(l);
            let b_row = other.row(l);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(dim_mismatch("matmul_t", self.cols, other.cols));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// Scales column `j` by `factors[j]`, i.e. `self · diag(factors)`.
    pub fn scale_columns(&self, factors: &[f64]) -> Matrix {
        assert_eq!(factors.len(), self.cols, "one factor per column");
        Matrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * factors[j])
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(dim_mismatch(
                "axpy",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Frobenius inner product `Σ self_ij other_ij`.
    pub fn inner(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(dim_mismatch(
                "inner",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zero_diagonal(&mut self) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] = 0.0;
        }
    }

    /// Frobenius norm over entries with `i != j`.
    pub fn offdiag_frobenius(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                if i != j {
                    acc += v * v;
                }
            }
        }
        acc.sqrt()
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Three-way tensor stored as `d3` frontal slices, each a row-major
/// `d1 × d2` block. Entry `(i, j, k)` lives at `k·d1·d2 + i·d2 + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    d1: usize,
    d2: usize,
    d3: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(d1: usize, d2: usize, d3: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d1 * d2 * d3 {
            return Err(dim_mismatch(
                "Tensor3::new",
                format!("{} entries", d1 * d2 * d3),
                format!("{} entries", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite tensor entry".into()));
        }
        Ok(Self { d1, d2, d3, data })
    }

    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        Self {
            d1,
            d2,
            d3,
            data: vec![0.0; d1 * d2 * d3],
        }
    }

    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::InvalidData("at least one slice required".into()));
        };
        let (d1, d2) = first.shape();
        let mut data = Vec::with_capacity(d1 * d2 * slices.len());
        for s in slices {
            if s.shape() != (d1, d2) {
                return Err(dim_mismatch(
                    "Tensor3::from_slices",
                    format!("{:?}", (d1, d2)),
                    format!("{:?}", s.shape()),
                ));
            }
            data.extend_from_slice(s.data());
        }
        Ok(Self {
            d1,
            d2,
            d3: slices.len(),
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d1, self.d2, self.d3)
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        k * self.d1 * self.d2 + i * self.d2 + j
    }

    /// Inverse of [`Tensor3::linear_index`].
    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.d1 * self.d2;
        let k = idx / plane;
        let rem = idx % plane;
        (rem / self.d2, rem % self.d2, k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.linear_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.linear_index(i, j, k);
        self.data[idx] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let plane = self.d1 * self.d2;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let plane = self.d1 * self.d2;
        &mut self.data[k * plane..(k + 1) * plane]
    }

    pub fn slice_matrix(&self, k: usize) -> Matrix {
        Matrix {
            rows: self.d1,
            cols: self.d2,
            data: self.slice(k).to_vec(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// `(linear index, value)` for every nonzero entry, in storage order.
    pub fn nonzeros(&self) -> Vec<(usize, f64)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor3) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(dim_mismatch(
                "Tensor3::axpy",
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> Tensor3 {
        Tensor3 {
            d1: self.d1,
            d2: self.d2,
            d3: self.d3,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Zeroes every diagonal tube fiber `(j, j, ·)`.
    pub fn zero_diagonal_fibers(&mut self) {
        let n = self.d1.min(self.d2);
        for k in 0..self.d3 {
            for j in 0..n {
                self.set(j, j, k, 0.0);
            }
        }
    }

    /// Replaces every slice by `(S + Sᵀ) / 2`. Slices must be square.
    pub fn symmetrize_slices(&mut self) {
        assert_eq!(self.d1, self.d2, "symmetrize_slices needs square slices");
        let n = self.d1;
        for k in 0..self.d3 {
            let s = self.slice_mut(k);
            for i in 0..n {
                for j in (i + 1)..n {
                    let avg = 0.5 * (s[i * n + j] + s[j * n + i]);
                    s[i * n + j] = avg;
                    s[j * n + i] = avg;
                }
            }
        }
    }

    /// Frobenius norm over entries off the diagonal fibers.
    pub fn offdiag_frobenius(&self) -> f64 {
        let mut acc = 0.0;
        for (idx, v) in self.data.iter().enumerate() {
            let (i, j, _) = self.unravel(idx);
            if i != j {
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

/// Sum of squared entries, square-rooted.
pub trait FrobeniusNorm {
    fn frobenius(&self) -> f64;
}

impl FrobeniusNorm for Matrix {
    fn frobenius(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }
}

impl FrobeniusNorm for Tensor3 {
    fn frobenius(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }
}

pub fn frobenius<T: FrobeniusNorm + ?Sized>(x: &T) -> f64 {
    x.frobenius()
}

/// `B ×₃ x = Σ_k x_k · B[.., .., k]`.
pub fn mode3_product(b: &Tensor3, x: &[f64]) -> Result<Matrix> {
    let (d1, d2, d3) = b.dims();
    if x.len() != d3 {
        return Err(dim_mismatch("mode3_product", d3, x.len()));
    }
    let mut out = Matrix::zeros(d1, d2);
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        for (o, &v) in out.data.iter_mut().zip(b.slice(k)) {
            *o += xk * v;
        }
    }
    Ok(out)
}

/// Slice-wise inner products: component `k` is `⟨M, B[.., .., k]⟩`.
pub fn tensor_matrix_inner(m: &Matrix, b: &Tensor3) -> Result<Vec<f64>> {
    let (d1, d2, d3) = b.dims();
    if m.shape() != (d1, d2) {
        return Err(dim_mismatch(
            "tensor_matrix_inner",
            format!("{:?}", (d1, d2)),
            format!("{:?}", m.shape()),
        ));
    }
    Ok((0..d3).map(|k| dot(m.data(), b.slice(k))).collect())
}

/// Keeps the `s` largest-magnitude entries and zeroes the rest. Ties at the
/// cut are resolved toward the smaller linear index.
pub fn truncate(b: &Tensor3, s: usize) -> Tensor3 {
    let mut candidates = b.nonzeros();
    if candidates.len() <= s {
        return b.clone();
    }
    rank_by_magnitude(&mut candidates);
    let mut out = Tensor3::zeros(b.d1, b.d2, b.d3);
    for &(idx, v) in &candidates[..s] {
        out.data[idx] = v;
    }
    out
}

/// Truncation for tensors whose slices are symmetric: entries are ranked in
/// mirrored pairs `(i, j, k)` / `(j, i, k)` by the magnitude of the upper
/// entry, both members count against `s`, so `⌊s/2⌋` pairs survive. Diagonal
/// fibers are always zeroed.
pub fn truncate_mirrored(b: &Tensor3, s: usize) -> Tensor3 {
    let (d1, d2, d3) = b.dims();
    assert_eq!(d1, d2, "truncate_mirrored needs square slices");
    let n = d1;
    let mut candidates = Vec::new();
    for k in 0..d3 {
        for i in 0..n {
            for j in (i + 1)..n {
                let idx = b.linear_index(i, j, k);
                let v = b.data[idx];
                if v != 0.0 {
                    candidates.push((idx, v));
                }
            }
        }
    }
    let keep = (s / 2).min(candidates.len());
    rank_by_magnitude(&mut candidates);
    let mut out = Tensor3::zeros(d1, d2, d3);
    for &(idx, v) in &candidates[..keep] {
        let (i, j, k) = b.unravel(idx);
        out.set(i, j, k, v);
        out.set(j, i, k, b.get(j, i, k));
    }
    out
}

fn rank_by_magnitude(candidates: &mut [(usize, f64)]) {
    candidates.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
}

/// Rank-r truncated singular value decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `d1 × r`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    /// `d2 × r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `u · diag(sigma) · vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.u
            .scale_columns(&self.sigma)
            .matmul_t(&self.v)
            .expect("factor shapes agree by construction")
    }
}

/// Top-`r` singular triplets of `m`. The largest-magnitude entry of every
/// left singular vector is made non-negative (right vector flipped along).
pub fn svd_r(m: &Matrix, r: usize) -> Result<SvdResult> {
    let max = m.rows().min(m.cols());
    if r > max {
        return Err(Error::RankTooLarge { rank: r, max });
    }
    let (d1, d2) = m.shape();
    if r == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(d1, 0),
            sigma: Vec::new(),
            v: Matrix::zeros(d2, 0),
        });
    }
    let svd = m.to_nalgebra().svd(true, true);
    let u_full = svd.u.expect("left vectors requested");
    let vt_full = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut u = Matrix::zeros(d1, r);
    let mut v = Matrix::zeros(d2, r);
    let mut sigma = Vec::with_capacity(r);
    for (c, &src) in order.iter().take(r).enumerate() {
        sigma.push(svd.singular_values[src].max(0.0));
        let mut pivot = 0;
        for i in 0..d1 {
            if u_full[(i, src)].abs() > u_full[(pivot, src)].abs() {
                pivot = i;
            }
        }
        let sign = if u_full[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d1 {
            u[(i, c)] = sign * u_full[(i, src)];
        }
        for j in 0..d2 {
            v[(j, c)] = sign * vt_full[(src, j)];
        }
    }
    Ok(SvdResult { u, sigma, v })
}
