//! Row-major dense matrix of `f32` with `f64` accumulation.

use crate::error::{HbllmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HbllmError::shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input; meant for fixtures.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f32]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    /// Copies the listed columns, in order, into a new `rows x indices.len()` matrix.
    pub fn select_columns(&self, indices: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, indices.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (d, &c) in dst.iter_mut().zip(indices) {
                *d = src[c];
            }
        }
        out
    }

    /// Contiguous column range `[start, start + width)`.
    pub fn column_block(&self, start: usize, width: usize) -> DenseMatrix {
        assert!(start + width <= self.cols, "column block out of range");
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        DenseMatrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn set_column_block(&mut self, start: usize, block: &DenseMatrix) {
        assert_eq!(block.rows, self.rows);
        assert!(start + block.cols <= self.cols, "column block out of range");
        for r in 0..self.rows {
            let cols = self.cols;
            self.data[r * cols + start..r * cols + start + block.cols]
                .copy_from_slice(block.row(r));
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&self, factor: f32) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        same_shape(self, other)?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(HbllmError::shape(format!(
                "non-finite entry at ({}, {})",
                i / self.cols.max(1),
                i % self.cols.max(1)
            ))),
        }
    }
}

fn same_shape(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(HbllmError::shape(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// `a * b`, accumulated in `f64`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(HbllmError::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    let mut acc = vec![0.0f64; b.cols];
    for i in 0..a.rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let aik = f64::from(aik);
            for (s, &bkj) in acc.iter_mut().zip(b.row(k)) {
                *s += aik * f64::from(bkj);
            }
        }
        for (o, s) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = *s as f32;
        }
    }
    Ok(out)
}

/// `‖a − b‖_F`.
pub fn frobenius_error(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f64>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(matmul(&DenseMatrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn diagonal_scaling() {
        let d = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let v = DenseMatrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(
            matmul(&d, &v).unwrap(),
            DenseMatrix::from_rows(&[[1.0], [2.0]])
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(8, 8, &mut rng);
        let b = random(8, 8, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0f64;
                for k in 0..8 {
                    s += f64::from(a.get(i, k)) * f64::from(b.get(k, j));
                }
                let got = f64::from(c.get(i, j));
                assert!((got - s).abs() <= 1e-6 * s.abs().max(1e-6), "{got} vs {s}");
            }
        }
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(HbllmError::Shape(_))));
    }

    #[test]
    fn frobenius_examples() {
        let a = DenseMatrix::from_rows(&[[3.0, 4.0]]);
        let z = DenseMatrix::zeros(1, 2);
        assert_eq!(frobenius_error(&a, &a).unwrap(), 0.0);
        assert_eq!(frobenius_error(&a, &z).unwrap(), 5.0);
        assert!(frobenius_error(&a, &DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn frobenius_matches_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(16, 16, &mut rng);
        let b = random(16, 16, &mut rng);
        let mut s = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            s += (f64::from(*x) - f64::from(*y)).powi(2);
        }
        let e = frobenius_error(&a, &b).unwrap();
        assert!((e - s.sqrt()).abs() <= 1e-9 * s.sqrt());
    }

    #[test]
    fn frobenius_symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random(5, 7, &mut rng);
            let b = random(5, 7, &mut rng);
            let c = random(5, 7, &mut rng);
            let ab = frobenius_error(&a, &b).unwrap();
            assert_eq!(ab, frobenius_error(&b, &a).unwrap());
            let bc = frobenius_error(&b, &c).unwrap();
            let ac = frobenius_error(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn column_helpers() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(m.column(1), vec![2.0, 5.0]);
        assert_eq!(
            m.select_columns(&[2, 0]),
            DenseMatrix::from_rows(&[[3.0, 1.0], [6.0, 4.0]])
        );
        let blk = m.column_block(1, 2);
        assert_eq!(blk, DenseMatrix::from_rows(&[[2.0, 3.0], [5.0, 6.0]]));
        let mut z = DenseMatrix::zeros(2, 3);
        z.set_column_block(1, &blk);
        assert_eq!(z.row(1), &[0.0, 5.0, 6.0]);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_length() {
        assert!(DenseMatrix::new(2, 2, vec![0.0; 3]).is_err());
        let m = DenseMatrix::new(1, 2, vec![0.0, f32::NAN]).unwrap();
        assert!(m.ensure_finite().is_err());
    }
}
