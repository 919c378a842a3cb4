//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's numerical kernels.
#![allow(dead_code)]

use netresp::{EdgeFamily, Matrix, NetworkDataset, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept local so the oracle shares no sampling code.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Singular values by one-sided Jacobi rotations, descending.
pub fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let (a_rows, a_cols, transpose) = if rows >= cols {
        (rows, cols, false)
    } else {
        (cols, rows, true)
    };
    let mut a: Vec<Vec<f64>> = (0..a_cols)
        .map(|c| {
            (0..a_rows)
                .map(|r| if transpose { m[(c, r)] } else { m[(r, c)] })
                .collect()
        })
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..a_cols {
            for q in (p + 1)..a_cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..a_rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn cumulant(family: EdgeFamily, eta: f64) -> f64 {
    match family {
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

/// Loop-form negative log-likelihood over off-diagonal entries.
pub fn loss_oracle(data: &NetworkDataset, theta: &Matrix, b: &Tensor3) -> f64 {
    let n = data.num_nodes();
    let big_n = data.num_subjects();
    let p = data.num_covariates();
    let mut total = 0.0;
    for i in 0..big_n {
        let a = &data.adjacency()[i];
        let x = data.covariates().row(i);
        for j in 0..n {
            for jp in 0..n {
                if j == jp {
                    continue;
                }
                let mut eta = theta[(j, jp)];
                for k in 0..p {
                    eta += b.get(j, jp, k) * x[k];
                }
                total += a[(j, jp)] * eta - cumulant(data.family(), eta);
            }
        }
    }
    -total / big_n as f64
}

/// Random dataset for gradient checks. Networks are asymmetric unless
/// `symmetric` is set.
pub fn random_dataset(
    family: EdgeFamily,
    n: usize,
    p: usize,
    big_n: usize,
    symmetric: bool,
    rng: &mut ChaCha8Rng,
) -> NetworkDataset {
    let draw = |rng: &mut ChaCha8Rng| match family {
        EdgeFamily::Bernoulli => f64::from(u8::from(rng.random::<f64>() < 0.4)),
        EdgeFamily::Poisson => rng.random_range(0..5) as f64,
        EdgeFamily::Gaussian => normal(rng),
    };
    let adjacency = (0..big_n)
        .map(|_| {
            let mut a = Matrix::zeros(n, n);
            for j in 0..n {
                for jp in 0..n {
                    if j == jp || (symmetric && jp < j) {
                        continue;
                    }
                    let v = draw(rng);
                    a.data_mut()[j * n + jp] = v;
                    if symmetric {
                        a.data_mut()[jp * n + j] = v;
                    }
                }
            }
            a
        })
        .collect();
    let x = random_matrix(big_n, p, rng);
    NetworkDataset::new(adjacency, x, family, symmetric).unwrap()
}

/// Entries scaled down so the log link stays well inside its guard.
pub fn small_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * normal(rng))
}

pub fn small_tensor(n: usize, p: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor3 {
    let mut b = Tensor3::zeros(n, n, p);
    for k in 0..p {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    b.set(i, j, k, scale * normal(rng));
                }
            }
        }
    }
    b
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
