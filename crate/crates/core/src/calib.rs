//! Calibration statistics: the layer Hessian, the upper Cholesky factor of its
//! damped inverse, and the per-weight saliency matrix.

use serde::{Deserialize, Serialize};

use crate::error::{HbllmError, Result};
use crate::tensor::{dot, DenseMatrix};

/// Damping added to the Hessian diagonal before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Damping {
    /// `0.01 * mean(diag(H))`, or `1.0` when the diagonal is all zero.
    Auto,
    Value(f64),
}

impl Damping {
    pub const AUTO_FRACTION: f64 = 0.01;

    pub fn resolve(self, hessian: &DenseMatrix) -> f64 {
        match self {
            Damping::Value(v) => v,
            Damping::Auto => {
                let m = hessian.rows();
                if m == 0 {
                    return 1.0;
                }
                let mean = (0..m).map(|i| f64::from(hessian.get(i, i))).sum::<f64>() / m as f64;
                if mean > 0.0 {
                    Self::AUTO_FRACTION * mean
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibStats {
    pub hessian: DenseMatrix,
    pub damping: f64,
    /// Upper-triangular `U` with `UᵀU = (H + λI)⁻¹`.
    pub chol_inv: DenseMatrix,
    /// `diag((H + λI)⁻¹)`.
    pub hinv_diag: Vec<f64>,
}

impl CalibStats {
    /// `x` is oriented features × samples; the feature count must equal the weight column count.
    pub fn build(x: &DenseMatrix, damping: Damping) -> Result<Self> {
        Self::from_hessian(build_hessian(x)?, damping)
    }

    pub fn from_hessian(hessian: DenseMatrix, damping: Damping) -> Result<Self> {
        let lambda = damping.resolve(&hessian);
        let (chol_inv, hinv_diag) = damped_cholesky_inverse(&hessian, lambda)?;
        Ok(Self {
            hessian,
            damping: lambda,
            chol_inv,
            hinv_diag,
        })
    }

    pub fn width(&self) -> usize {
        self.hessian.rows()
    }
}

/// `H = 2·X·Xᵀ`, built from the upper triangle and mirrored so it is exactly symmetric.
pub fn build_hessian(x: &DenseMatrix) -> Result<DenseMatrix> {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return Err(HbllmError::shape(format!(
            "calibration activations must be non-empty, got {m}x{n}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| x.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect();
    let mut h = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = (2.0 * dot(&rows[i], &rows[j])) as f32;
            h.set(i, j, v);
            h.set(j, i, v);
        }
    }
    Ok(h)
}

/// Returns `(U, diag((H+λI)⁻¹))` where `U` is upper triangular and `UᵀU = (H+λI)⁻¹`.
///
/// Factorizes the index-reversed matrix `P(H+λI)P = L·Lᵀ`, so `H+λI = Ũ·Ũᵀ`
/// with `Ũ = P·L·P` upper triangular, and `U = Ũ⁻¹ = P·L⁻¹·P`.
pub fn damped_cholesky_inverse(h: &DenseMatrix, lambda: f64) -> Result<(DenseMatrix, Vec<f64>)> {
    let m = h.rows();
    if h.cols() != m {
        return Err(HbllmError::shape(format!(
            "Hessian must be square, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(HbllmError::config("lambda", format!("must be finite and >= 0, got {lambda}")));
    }

    // Reversed, damped copy; row i of `l` holds the lower factor row after factorization.
    let mut l: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let src = m - 1 - i;
            (0..=i)
                .map(|j| {
                    let v = f64::from(h.get(src, m - 1 - j));
                    if i == j {
                        v + lambda
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();

    for i in 0..m {
        for j in 0..=i {
            let s = l[i][j] - dot(&l[i][..j], &l[j][..j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(HbllmError::numeric(
                        m - 1 - i,
                        format!("H + lambda*I is not positive definite (pivot value {s:e})"),
                    ));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }

    // Column j of L⁻¹ by forward substitution, stored as row j of `inv_t`.
    let mut inv_t = vec![vec![0.0f64; m]; m];
    let mut col = vec![0.0f64; m];
    for j in 0..m {
        col[j] = 1.0 / l[j][j];
        for i in j + 1..m {
            let s = dot(&l[i][j..i], &col[j..i]);
            col[i] = -s / l[i][i];
        }
        inv_t[j][j..].copy_from_slice(&col[j..]);
    }

    let mut u = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            // U[i][j] = L⁻¹[m-1-i][m-1-j] = inv_t[m-1-j][m-1-i]
            u.set(i, j, inv_t[m - 1 - j][m - 1 - i] as f32);
        }
    }
    let hinv_diag = (0..m)
        .map(|j| inv_t[m - 1 - j].iter().map(|v| v * v).sum())
        .collect();
    Ok((u, hinv_diag))
}

/// `s_ij = w_ij² / d_j²` with `d = diag((H+λI)⁻¹)`.
pub fn saliency_matrix(w: &DenseMatrix, hinv_diag: &[f64]) -> Result<DenseMatrix> {
    if hinv_diag.len() != w.cols() {
        return Err(HbllmError::shape(format!(
            "inverse-Hessian diagonal has {} entries for {} columns",
            hinv_diag.len(),
            w.cols()
        )));
    }
    if let Some(j) = hinv_diag.iter().position(|&d| !(d > 0.0)) {
        return Err(HbllmError::numeric(
            j,
            format!("inverse-Hessian diagonal entry {} is not positive", hinv_diag[j]),
        ));
    }
    let mut s = DenseMatrix::zeros(w.rows(), w.cols());
    for r in 0..w.rows() {
        for ((out, &wv), &d) in s.row_mut(r).iter_mut().zip(w.row(r)).zip(hinv_diag) {
            let wv = f64::from(wv);
            *out = (wv * wv / (d * d)) as f32;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn hessian_examples() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        assert_eq!(
            build_hessian(&x).unwrap(),
            DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 8.0]])
        );
        let ones = DenseMatrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(
            build_hessian(&ones).unwrap(),
            DenseMatrix::from_rows(&[[2.0, 2.0], [2.0, 2.0]])
        );
        assert!(build_hessian(&DenseMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn hessian_matches_product_and_is_symmetric() {
        let x = gaussian(8, 32, 1);
        let h = build_hessian(&x).unwrap();
        let oracle = matmul(&x.scale(2.0), &x.transpose()).unwrap();
        for (a, b) in h.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn diagonal_case() {
        let h = DenseMatrix::identity(2).scale(4.0);
        let (u, d) = damped_cholesky_inverse(&h, 1.0).unwrap();
        let expect = 0.2f64.sqrt() as f32;
        assert!((u.get(0, 0) - expect).abs() < 1e-6);
        assert!((u.get(1, 1) - expect).abs() < 1e-6);
        assert_eq!(u.get(0, 1), 0.0);
        assert_eq!(u.get(1, 0), 0.0);
        assert!((d[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pure_damping() {
        let (u, d) = damped_cholesky_inverse(&DenseMatrix::zeros(3, 3), 1.0).unwrap();
        assert_eq!(u, DenseMatrix::identity(3));
        assert_eq!(d, vec![1.0; 3]);
    }

    #[test]
    fn multiply_back_to_identity() {
        let x = gaussian(16, 40, 2);
        let h = build_hessian(&x).unwrap();
        let lambda = 0.5;
        let (u, d) = damped_cholesky_inverse(&h, lambda).unwrap();
        let utu = matmul(&u.transpose(), &u).unwrap();
        let mut damped = h.clone();
        for i in 0..16 {
            damped.set(i, i, damped.get(i, i) + lambda as f32);
        }
        let prod = matmul(&utu, &damped).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - target).abs() <= 1e-4, "({i},{j}) = {}", prod.get(i, j));
            }
            assert!((d[i] - f64::from(utu.get(i, i))).abs() <= 1e-6 * d[i]);
            assert!(u.get(i, i) > 0.0);
            for j in 0..i {
                assert_eq!(u.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn non_pd_reports_pivot() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, -5.0]]);
        match damped_cholesky_inverse(&h, 0.0) {
            Err(HbllmError::Numeric { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn auto_damping() {
        let h = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 6.0]]);
        assert!((Damping::Auto.resolve(&h) - 0.04).abs() < 1e-12);
        assert_eq!(Damping::Auto.resolve(&DenseMatrix::zeros(2, 2)), 1.0);
        assert_eq!(Damping::Value(0.3).resolve(&h), 0.3);
    }

    #[test]
    fn saliency_examples() {
        let w = DenseMatrix::from_rows(&[[1.0, -3.0], [2.0, 0.5]]);
        let s = saliency_matrix(&w, &[1.0, 1.0]).unwrap();
        assert_eq!(s, DenseMatrix::from_rows(&[[1.0, 9.0], [4.0, 0.25]]));
        let s = saliency_matrix(&DenseMatrix::from_rows(&[[2.0]]), &[2.0]).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert!(saliency_matrix(&w, &[1.0, 0.0]).is_err());
        assert!(saliency_matrix(&w, &[1.0]).is_err());
    }

    #[test]
    fn saliency_matches_elementwise() {
        let w = gaussian(8, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..2.0)).collect();
        let s = saliency_matrix(&w, &d).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let oracle = f64::from(w.get(r, c)).powi(2) / d[c].powi(2);
                let got = f64::from(s.get(r, c));
                assert!((got - oracle).abs() <= 1e-6 * oracle.max(1e-30));
            }
        }
    }

    proptest! {
        #[test]
        fn larger_damping_keeps_factorization(seed in 0u64..500, lambda in 0.01f64..2.0, extra in 0.0f64..5.0) {
            let x = gaussian(6, 3, seed); // rank-deficient Hessian
            let h = build_hessian(&x).unwrap();
            let (_, d_small) = damped_cholesky_inverse(&h, lambda).unwrap();
            let (_, d_big) = damped_cholesky_inverse(&h, lambda + extra).unwrap();
            for (a, b) in d_small.iter().zip(&d_big) {
                prop_assert!(b <= &(a * (1.0 + 1e-9)));
            }
        }

        #[test]
        fn saliency_quadruples_when_weight_doubles(w in -10f32..10.0, d in 0.1f64..3.0) {
            let one = saliency_matrix(&DenseMatrix::from_rows(&[[w]]), &[d]).unwrap().get(0, 0);
            let two = saliency_matrix(&DenseMatrix::from_rows(&[[2.0 * w]]), &[d]).unwrap().get(0, 0);
            prop_assert!((two - 4.0 * one).abs() <= 1e-5 * two.abs().max(1e-30));
        }
    }
}
