//! Salient column scoring, trial-based selection of how many columns to set
//! aside, and neighbour-average filling of the holes they leave.

use serde::{Deserialize, Serialize};

use crate::error::{HbllmError, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreNorm {
    L1,
    L2,
}

/// Which matrix the column scores are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// `w² / diag(H⁻¹)²`
    Saliency,
    /// `|w|`
    Weight,
}

/// Salient-column bitmap of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SalientMask {
    bits: Vec<bool>,
}

impl SalientMask {
    pub fn empty(width: usize) -> Self {
        Self {
            bits: vec![false; width],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_columns(width: usize, columns: &[usize]) -> Self {
        let mut bits = vec![false; width];
        for &c in columns {
            bits[c] = true;
        }
        Self { bits }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_salient(&self, col: usize) -> bool {
        self.bits[col]
    }

    /// Salient column indices, ascending.
    pub fn columns(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&c| self.bits[c]).collect()
    }

    pub fn non_salient_columns(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&c| !self.bits[c]).collect()
    }
}

/// Per-column ℓ1 or ℓ2 norm.
pub fn column_scores(s: &DenseMatrix, norm: ScoreNorm) -> Vec<f64> {
    let mut acc = vec![0.0f64; s.cols()];
    for r in 0..s.rows() {
        for (a, &v) in acc.iter_mut().zip(s.row(r)) {
            let v = f64::from(v);
            match norm {
                ScoreNorm::L1 => *a += v.abs(),
                ScoreNorm::L2 => *a += v * v,
            }
        }
    }
    if norm == ScoreNorm::L2 {
        acc.iter_mut().for_each(|a| *a = a.sqrt());
    }
    acc
}

/// Indices of the `k` highest scores; ties go to the lower column index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn validate_k_candidates(k_candidates: &[usize], width: usize) -> Result<()> {
    if k_candidates.is_empty() {
        return Err(HbllmError::config("k_candidates", "at least one candidate is required"));
    }
    for &k in k_candidates {
        if k >= width {
            return Err(HbllmError::config(
                "k_candidates",
                format!("K = {k} must be smaller than the block width {width}"),
            ));
        }
        if k % 2 != 0 {
            return Err(HbllmError::config("k_candidates", format!("K = {k} must be even")));
        }
    }
    Ok(())
}

/// Outcome of the salient-count search.
#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub mask: SalientMask,
    pub error: f64,
    pub payload: T,
    /// `(K, error)` for every trial, in candidate order.
    pub trials: Vec<(usize, f64)>,
}

/// Runs `trial` on the top-K mask for each candidate K and keeps the lowest error
/// (ties go to the smaller K).
pub fn select_salient<T, F>(scores: &[f64], k_candidates: &[usize], mut trial: F) -> Result<Selection<T>>
where
    F: FnMut(&SalientMask) -> Result<(f64, T)>,
{
    let width = scores.len();
    validate_k_candidates(k_candidates, width)?;
    let mut ks = k_candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut best: Option<(usize, SalientMask, f64, T)> = None;
    let mut trials = Vec::with_capacity(ks.len());
    for k in ks {
        let mask = SalientMask::from_columns(width, &top_k(scores, k));
        let (error, payload) = trial(&mask)?;
        trials.push((k, error));
        if best.as_ref().is_none_or(|b| error < b.2) {
            best = Some((k, mask, error, payload));
        }
    }
    let (_, mask, error, payload) = best.expect("candidate list is non-empty");
    Ok(Selection {
        mask,
        error,
        payload,
        trials,
    })
}

/// Replaces each salient column, per row, by the mean of the nearest non-salient
/// values on its left and right (a single neighbour at the block edge).
pub fn fill_avg(w_block: &DenseMatrix, mask: &SalientMask) -> Result<DenseMatrix> {
    let width = w_block.cols();
    if mask.width() != width {
        return Err(HbllmError::shape(format!(
            "mask width {} does not match block width {width}",
            mask.width()
        )));
    }
    if mask.count() == width {
        return Err(HbllmError::config(
            "k_candidates",
            "every column is salient; nothing to fill from",
        ));
    }
    let mut left = vec![None; width];
    let mut last = None;
    for c in 0..width {
        if mask.is_salient(c) {
            left[c] = last;
        } else {
            last = Some(c);
        }
    }
    let mut right = vec![None; width];
    last = None;
    for c in (0..width).rev() {
        if mask.is_salient(c) {
            right[c] = last;
        } else {
            last = Some(c);
        }
    }
    let mut out = w_block.clone();
    for c in mask.columns() {
        for r in 0..w_block.rows() {
            let v = match (left[c], right[c]) {
                (Some(a), Some(b)) => 0.5 * (w_block.get(r, a) + w_block.get(r, b)),
                (Some(a), None) => w_block.get(r, a),
                (None, Some(b)) => w_block.get(r, b),
                (None, None) => unreachable!("at least one non-salient column exists"),
            };
            out.set(r, c, v);
        }
    }
    Ok(out)
}
