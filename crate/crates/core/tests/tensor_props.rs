mod common;

use common::jacobi_singular_values;
use netresp::tensor::{
    mode3_product, svd_r, tensor_matrix_inner, truncate, truncate_mirrored, Matrix, Tensor3,
};
use proptest::prelude::*;

/// Smallest achievable `‖b - b_S‖²` over all supports `|S| ≤ s`.
fn best_residual(values: &[f64], s: usize) -> f64 {
    let m = values.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize > s {
            continue;
        }
        let resid: f64 = (0..m)
            .filter(|i| mask & (1 << i) == 0)
            .map(|i| values[i] * values[i])
            .sum();
        best = best.min(resid);
    }
    best
}

fn small_tensor() -> impl Strategy<Value = Tensor3> {
    (1usize..=3, 1usize..=2, 1usize..=2).prop_flat_map(|(d1, d2, d3)| {
        prop::collection::vec(-6i32..=6, d1 * d2 * d3).prop_map(move |v| {
            Tensor3::new(d1, d2, d3, v.into_iter().map(f64::from).collect()).unwrap()
        })
    })
}

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1usize..=max, 1usize..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn truncate_is_optimal(b in small_tensor(), s in 0usize..=12) {
        prop_assert!(b.data().len() <= 12);
        let t = truncate(&b, s);
        prop_assert!(t.nnz() <= s);
        for (x, y) in t.data().iter().zip(b.data()) {
            prop_assert!(*x == 0.0 || x == y);
        }
        let resid: f64 = b.data().iter().zip(t.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assert_eq!(resid, best_residual(b.data(), s));
    }

    #[test]
    fn truncate_is_idempotent(b in small_tensor(), s in 0usize..=12) {
        let once = truncate(&b, s);
        prop_assert_eq!(truncate(&once, s), once);
    }

    #[test]
    fn svd_residual_matches_eckart_young(m in matrix(8), r_frac in 0.0f64..=1.0) {
        let max = m.rows().min(m.cols());
        let r = ((max as f64) * r_frac).round() as usize;
        let svd = svd_r(&m, r).unwrap();
        let oracle = jacobi_singular_values(&m);
        for (a, b) in svd.sigma.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-8 * oracle[0].max(1.0));
        }
        let resid = m.sub(&svd.reconstruct()).unwrap();
        let resid_sq: f64 = resid.data().iter().map(|v| v * v).sum();
        let tail: f64 = oracle[r..].iter().map(|s| s * s).sum();
        prop_assert!((resid_sq - tail).abs() <= 1e-8 * oracle[0].powi(2).max(1.0),
            "residual {} vs tail {}", resid_sq, tail);
    }

    #[test]
    fn svd_factors_are_orthonormal(m in matrix(8)) {
        let max = m.rows().min(m.cols());
        let svd = svd_r(&m, max).unwrap();
        let gram_u = svd.u.t_matmul(&svd.u).unwrap();
        let gram_v = svd.v.t_matmul(&svd.v).unwrap();
        for i in 0..max {
            for j in 0..max {
                let e = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram_u[(i, j)] - e).abs() < 1e-10);
                prop_assert!((gram_v[(i, j)] - e).abs() < 1e-10);
            }
        }
        prop_assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mode3_product_is_linear(
        data in prop::collection::vec(-3.0f64..3.0, 4 * 4 * 3),
        x in prop::collection::vec(-2.0f64..2.0, 3),
        y in prop::collection::vec(-2.0f64..2.0, 3),
        a in -2.0f64..2.0,
        c in -2.0f64..2.0,
    ) {
        let b = Tensor3::new(4, 4, 3, data).unwrap();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + c * v).collect();
        let lhs = mode3_product(&b, &combo).unwrap();
        let rhs = mode3_product(&b, &x).unwrap().scaled(a)
            .add(&mode3_product(&b, &y).unwrap().scaled(c)).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn mode3_inner_product_duality(
        data in prop::collection::vec(-3.0f64..3.0, 3 * 3 * 2),
        m in prop::collection::vec(-3.0f64..3.0, 9),
        x in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let b = Tensor3::new(3, 3, 2, data).unwrap();
        let m = Matrix::new(3, 3, m).unwrap();
        let lhs = m.inner(&mode3_product(&b, &x).unwrap()).unwrap();
        let dual = tensor_matrix_inner(&m, &b).unwrap();
        let rhs: f64 = dual.iter().zip(&x).map(|(d, v)| d * v).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn mirrored_truncation_keeps_symmetry(
        data in prop::collection::vec(-4i32..=4, 4 * 4 * 2),
        s in 0usize..=24,
    ) {
        let mut b = Tensor3::new(4, 4, 2, data.into_iter().map(f64::from).collect()).unwrap();
        b.symmetrize_slices();
        let t = truncate_mirrored(&b, s);
        prop_assert!(t.nnz() <= s);
        for k in 0..2 {
            for i in 0..4 {
                prop_assert_eq!(t.get(i, i, k), 0.0);
                for j in 0..4 {
                    prop_assert_eq!(t.get(i, j, k), t.get(j, i, k));
                }
            }
        }
    }
}

#[test]
fn jacobi_oracle_sanity() {
    let m = Matrix::diag(&[3.0, -5.0, 1.0]);
    let sv = jacobi_singular_values(&m);
    assert_eq!(sv, vec![5.0, 3.0, 1.0]);
}
