//! Single-level Haar analysis and synthesis.
//!
//! The transform is the pair of stride-2 kernels `[1/2, 1/2]` (low band) and
//! `[1/2, -1/2]` (high band). It is not orthonormal: for any even-length input
//! `Σv² = 2·(Σlow² + Σhigh²)`. Synthesis is `v[2k] = l + h`, `v[2k+1] = l − h`.

use serde::{Deserialize, Serialize};

use crate::error::{HbllmError, Result};
use crate::tensor::DenseMatrix;

/// Direction a matrix is transformed along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Every row is a signal; coefficients laid out `[low | high]` per row.
    Row,
    /// Every column is a signal; low rows on top, high rows below.
    Col,
}

/// Haar coefficients of a matrix, with the band boundary along the transformed axis.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarCoeffs {
    mat: DenseMatrix,
    axis: Axis,
    band_split: usize,
}

impl HaarCoeffs {
    pub fn new(mat: DenseMatrix, axis: Axis) -> Result<Self> {
        let len = axis_len(&mat, axis);
        check_even(len)?;
        Ok(Self {
            mat,
            axis,
            band_split: len / 2,
        })
    }

    pub fn mat(&self) -> &DenseMatrix {
        &self.mat
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn band_split(&self) -> usize {
        self.band_split
    }

    pub fn into_mat(self) -> DenseMatrix {
        self.mat
    }
}

fn axis_len(m: &DenseMatrix, axis: Axis) -> usize {
    match axis {
        Axis::Row => m.cols(),
        Axis::Col => m.rows(),
    }
}

fn check_even(len: usize) -> Result<()> {
    if len < 2 || len % 2 != 0 {
        return Err(HbllmError::length(format!(
            "Haar transform needs an even length >= 2, got {len}"
        )));
    }
    Ok(())
}

#[inline]
fn forward_into(v: &[f32], low: &mut [f32], high: &mut [f32]) {
    for ((pair, l), h) in v.chunks_exact(2).zip(low.iter_mut()).zip(high.iter_mut()) {
        *l = 0.5 * pair[0] + 0.5 * pair[1];
        *h = 0.5 * pair[0] - 0.5 * pair[1];
    }
}

#[inline]
fn inverse_into(low: &[f32], high: &[f32], out: &mut [f32]) {
    for ((pair, &l), &h) in out.chunks_exact_mut(2).zip(low).zip(high) {
        pair[0] = l + h;
        pair[1] = l - h;
    }
}

/// Splits an even-length signal into its low and high bands.
pub fn haar_forward_1d(v: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
    check_even(v.len())?;
    let half = v.len() / 2;
    let mut low = vec![0.0; half];
    let mut high = vec![0.0; half];
    forward_into(v, &mut low, &mut high);
    Ok((low, high))
}

pub fn haar_inverse_1d(low: &[f32], high: &[f32]) -> Result<Vec<f32>> {
    if low.len() != high.len() {
        return Err(HbllmError::shape(format!(
            "band lengths differ: {} vs {}",
            low.len(),
            high.len()
        )));
    }
    let mut out = vec![0.0; low.len() * 2];
    inverse_into(low, high, &mut out);
    Ok(out)
}

/// Forward transform of every row (`Axis::Row`) or every column (`Axis::Col`).
pub fn haar_matrix(m: &DenseMatrix, axis: Axis) -> Result<HaarCoeffs> {
    let len = axis_len(m, axis);
    check_even(len)?;
    let half = len / 2;
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    match axis {
        Axis::Row => {
            for r in 0..m.rows() {
                let (low, high) = out.row_mut(r).split_at_mut(half);
                forward_into(m.row(r), low, high);
            }
        }
        Axis::Col => {
            let cols = m.cols();
            let src = m.data();
            let (low, high) = out.data_mut().split_at_mut(half * cols);
            for k in 0..half {
                let a = &src[2 * k * cols..(2 * k + 1) * cols];
                let b = &src[(2 * k + 1) * cols..(2 * k + 2) * cols];
                let lrow = &mut low[k * cols..(k + 1) * cols];
                let hrow = &mut high[k * cols..(k + 1) * cols];
                for j in 0..cols {
                    lrow[j] = 0.5 * a[j] + 0.5 * b[j];
                    hrow[j] = 0.5 * a[j] - 0.5 * b[j];
                }
            }
        }
    }
    Ok(HaarCoeffs {
        mat: out,
        axis,
        band_split: half,
    })
}

pub fn inverse_haar_matrix(c: &HaarCoeffs) -> DenseMatrix {
    let m = &c.mat;
    let half = c.band_split;
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    match c.axis {
        Axis::Row => {
            for r in 0..m.rows() {
                let (low, high) = m.row(r).split_at(half);
                inverse_into(low, high, out.row_mut(r));
            }
        }
        Axis::Col => {
            let cols = m.cols();
            let src = m.data();
            let dst = out.data_mut();
            for k in 0..half {
                let l = &src[k * cols..(k + 1) * cols];
                let h = &src[(half + k) * cols..(half + k + 1) * cols];
                let (top, bottom) = dst[2 * k * cols..(2 * k + 2) * cols].split_at_mut(cols);
                for j in 0..cols {
                    top[j] = l[j] + h[j];
                    bottom[j] = l[j] - h[j];
                }
            }
        }
    }
    out
}
