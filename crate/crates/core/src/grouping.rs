//! Band-wise grouping and sign binarization of Haar coefficients.
//!
//! Each line (a row or column of coefficients) is cut into its low and high
//! bands. Inside a band, coefficients are split by magnitude into a sparse
//! group (`|c| >= t`) and a dense group (`|c| < t`). Each group is binarized
//! as `mu + alpha * sign(c - mu)`. The cut `t` is picked from absolute-value
//! percentiles of the band by minimal squared error.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{HbllmError, Result};
use crate::haar::{Axis, HaarCoeffs};
use crate::tensor::DenseMatrix;

/// Lowest and highest percentile used for partition candidates.
pub const PERCENTILE_LO: f64 = 10.0;
pub const PERCENTILE_HI: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingConfig {
    pub n_candidates: usize,
    pub share_mean: bool,
    /// When off, a line is planned as a single band in its original domain.
    pub haar_enabled: bool,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            n_candidates: 40,
            share_mean: true,
            haar_enabled: true,
        }
    }
}

/// Offsets of the two groups in a band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupMeans {
    Shared(f32),
    Split { sparse: f32, dense: f32 },
}

impl GroupMeans {
    pub fn sparse(&self) -> f32 {
        match *self {
            GroupMeans::Shared(m) => m,
            GroupMeans::Split { sparse, .. } => sparse,
        }
    }

    pub fn dense(&self) -> f32 {
        match *self {
            GroupMeans::Shared(m) => m,
            GroupMeans::Split { dense, .. } => dense,
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, GroupMeans::Shared(_))
    }

    /// Number of stored offsets.
    pub fn count(&self) -> usize {
        if self.is_shared() {
            1
        } else {
            2
        }
    }
}

/// Quantization parameters of one frequency band of one line.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    /// Index of the winning candidate threshold (diagnostic; decode does not need it).
    pub threshold_index: u8,
    pub means: GroupMeans,
    pub alpha_sparse: f32,
    pub alpha_dense: f32,
    /// `true` marks a coefficient in the sparse (large-magnitude) group.
    pub sparse: Vec<bool>,
}

impl BandPlan {
    pub fn len(&self) -> usize {
        self.sparse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sparse.is_empty()
    }

    pub fn mu_shared(&self) -> Option<f32> {
        match self.means {
            GroupMeans::Shared(m) => Some(m),
            GroupMeans::Split { .. } => None,
        }
    }

    /// Dequantized value of position `k` given its sign bit.
    #[inline]
    pub fn level(&self, k: usize, positive: bool) -> f32 {
        let (mu, alpha) = if self.sparse[k] {
            (self.means.sparse(), self.alpha_sparse)
        } else {
            (self.means.dense(), self.alpha_dense)
        };
        if positive {
            mu + alpha
        } else {
            mu - alpha
        }
    }

    /// Rounds every stored scalar to the nearest binary16 value.
    pub fn narrowed(mut self) -> Self {
        self.means = match self.means {
            GroupMeans::Shared(m) => GroupMeans::Shared(narrow(m)),
            GroupMeans::Split { sparse, dense } => GroupMeans::Split {
                sparse: narrow(sparse),
                dense: narrow(dense),
            },
        };
        self.alpha_sparse = narrow(self.alpha_sparse);
        self.alpha_dense = narrow(self.alpha_dense);
        self
    }
}

/// Round-to-nearest-even narrowing to binary16, returned widened.
pub fn narrow(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}

/// Plans for every band of a line plus one sign bit per coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePlan {
    /// Low band then high band; a single band when the Haar transform is disabled.
    pub bands: Vec<BandPlan>,
    /// `true` is `+1`.
    pub signs: Vec<bool>,
}

impl LinePlan {
    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn low_band(&self) -> &BandPlan {
        &self.bands[0]
    }

    pub fn high_band(&self) -> Option<&BandPlan> {
        self.bands.get(1)
    }

    /// Dequantized coefficients of the line.
    pub fn dequantize(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.signs.len());
        let mut offset = 0;
        for band in &self.bands {
            for k in 0..band.len() {
                out.push(band.level(k, self.signs[offset + k]));
            }
            offset += band.len();
        }
        out
    }
}

/// Result of binarizing one group about a fixed offset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub alpha: f64,
    pub signs: Vec<bool>,
    pub sse: f64,
}

/// Sign binarization about `mu` with the squared-error-optimal scale `mean(|v - mu|)`.
/// `sign(0)` is `+1`.
pub fn binarize_group(values: &[f32], mu: f64) -> Result<GroupFit> {
    if values.is_empty() {
        return Err(HbllmError::shape("cannot binarize an empty group"));
    }
    let (alpha, sse) = group_alpha_sse(values.iter().copied(), values.len(), mu);
    let signs = values.iter().map(|&v| f64::from(v) - mu >= 0.0).collect();
    Ok(GroupFit { alpha, signs, sse })
}

/// `(alpha, sse)` of binarizing `count` values about `mu`.
fn group_alpha_sse(values: impl Iterator<Item = f32> + Clone, count: usize, mu: f64) -> (f64, f64) {
    if count == 0 {
        return (0.0, 0.0);
    }
    let alpha = values.clone().map(|v| (f64::from(v) - mu).abs()).sum::<f64>() / count as f64;
    let sse = values
        .map(|v| {
            let d = (f64::from(v) - mu).abs() - alpha;
            d * d
        })
        .sum();
    (alpha, sse)
}

/// Pooled mean of two groups.
pub fn shared_mean(group1: &[f32], group2: &[f32]) -> Result<f64> {
    let n = group1.len() + group2.len();
    if n == 0 {
        return Err(HbllmError::shape("shared mean of two empty groups"));
    }
    let sum: f64 = group1.iter().chain(group2).map(|&v| f64::from(v)).sum();
    Ok(sum / n as f64)
}

/// Percentile levels evenly spaced over `[10, 90]`; `[50]` for a single candidate.
pub fn percentile_levels(n_candidates: usize) -> Vec<f64> {
    match n_candidates {
        0 => Vec::new(),
        1 => vec![50.0],
        n => (0..n)
            .map(|k| PERCENTILE_LO + k as f64 * (PERCENTILE_HI - PERCENTILE_LO) / (n - 1) as f64)
            .collect(),
    }
}

/// 1-based nearest rank `ceil(p/100 * len)` of the `k`-th level, in exact integer arithmetic.
fn nearest_rank(k: usize, n_candidates: usize, len: usize) -> usize {
    let rank = if n_candidates == 1 {
        (50 * len).div_ceil(100)
    } else {
        let steps = n_candidates - 1;
        // p = (10·steps + 80·k) / steps
        let num = (10 * steps + 80 * k) * len;
        num.div_ceil(100 * steps)
    };
    rank.clamp(1, len)
}

/// Nearest-rank absolute-value percentiles of `band` at [`percentile_levels`].
pub fn candidate_thresholds(band: &[f32], n_candidates: usize) -> Vec<f32> {
    if band.is_empty() {
        return Vec::new();
    }
    let mut abs: Vec<f32> = band.iter().map(|v| v.abs()).collect();
    abs.sort_by(f32::total_cmp);
    (0..n_candidates)
        .map(|k| abs[nearest_rank(k, n_candidates, abs.len()) - 1])
        .collect()
}

/// Winning plan for a band, with its real threshold and squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct BandFit {
    pub plan: BandPlan,
    pub signs: Vec<bool>,
    pub threshold: f32,
    pub sse: f64,
}

pub fn plan_band(band: &[f32], n_candidates: usize, share_mean: bool) -> Result<BandFit> {
    if n_candidates == 0 {
        return Err(HbllmError::config("candidates", "must be at least 1"));
    }
    plan_band_with_thresholds(band, &candidate_thresholds(band, n_candidates), share_mean)
}

/// Evaluates every threshold in order; the first one reaching the minimal error wins.
pub fn plan_band_with_thresholds(
    band: &[f32],
    thresholds: &[f32],
    share_mean: bool,
) -> Result<BandFit> {
    if band.is_empty() {
        return Err(HbllmError::shape("cannot plan an empty band"));
    }
    if thresholds.is_empty() || thresholds.len() > usize::from(u8::MAX) + 1 {
        return Err(HbllmError::config(
            "candidates",
            format!("need between 1 and 256 thresholds, got {}", thresholds.len()),
        ));
    }
    let pooled = shared_mean(band, &[])?;
    let mut best: Option<(usize, f64)> = None;
    for (idx, &t) in thresholds.iter().enumerate() {
        if idx > 0 && thresholds[..idx].contains(&t) {
            continue;
        }
        let sse = split_sse(band, t, share_mean, pooled);
        if best.is_none_or(|(_, b)| sse < b) {
            best = Some((idx, sse));
        }
    }
    let (idx, sse) = best.expect("at least one threshold");
    let threshold = thresholds[idx];
    let (plan, signs) = build_plan(band, threshold, idx as u8, share_mean, pooled);
    Ok(BandFit {
        plan,
        signs,
        threshold,
        sse,
    })
}

fn group_mean(values: impl Iterator<Item = f32>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0f64, 0usize), |(s, n), v| (s + f64::from(v), n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

fn split_sse(band: &[f32], t: f32, share_mean: bool, pooled: f64) -> f64 {
    let sparse = band.iter().copied().filter(|v| v.abs() >= t);
    let dense = band.iter().copied().filter(|v| v.abs() < t);
    let (mu_s, n_s, mu_d, n_d) = if share_mean {
        let n_s = sparse.clone().count();
        (pooled, n_s, pooled, band.len() - n_s)
    } else {
        let (ms, ns) = group_mean(sparse.clone());
        let (md, nd) = group_mean(dense.clone());
        (ms, ns, md, nd)
    };
    group_alpha_sse(sparse, n_s, mu_s).1 + group_alpha_sse(dense, n_d, mu_d).1
}

fn build_plan(
    band: &[f32],
    t: f32,
    threshold_index: u8,
    share_mean: bool,
    pooled: f64,
) -> (BandPlan, Vec<bool>) {
    let sparse_mask: Vec<bool> = band.iter().map(|v| v.abs() >= t).collect();
    let sparse = band.iter().copied().filter(|v| v.abs() >= t);
    let dense = band.iter().copied().filter(|v| v.abs() < t);
    let (mu_s, mu_d) = if share_mean {
        (pooled, pooled)
    } else {
        (group_mean(sparse.clone()).0, group_mean(dense.clone()).0)
    };
    let n_s = sparse_mask.iter().filter(|&&s| s).count();
    let alpha_s = group_alpha_sse(sparse, n_s, mu_s).0;
    let alpha_d = group_alpha_sse(dense, band.len() - n_s, mu_d).0;
    let signs = band
        .iter()
        .zip(&sparse_mask)
        .map(|(&v, &s)| f64::from(v) - if s { mu_s } else { mu_d } >= 0.0)
        .collect();
    let means = if share_mean {
        GroupMeans::Shared(pooled as f32)
    } else {
        GroupMeans::Split {
            sparse: mu_s as f32,
            dense: mu_d as f32,
        }
    };
    (
        BandPlan {
            threshold_index,
            means,
            alpha_sparse: alpha_s as f32,
            alpha_dense: alpha_d as f32,
            sparse: sparse_mask,
        },
        signs,
    )
}

/// Plans of every line plus the diagnostic thresholds chosen for each band.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSet {
    pub plans: Vec<LinePlan>,
    pub thresholds: Vec<Vec<f32>>,
}

fn line_count(rows: usize, cols: usize, axis: Axis) -> (usize, usize) {
    match axis {
        Axis::Row => (rows, cols),
        Axis::Col => (cols, rows),
    }
}

fn extract_line(m: &DenseMatrix, axis: Axis, i: usize) -> Vec<f32> {
    match axis {
        Axis::Row => m.row(i).to_vec(),
        Axis::Col => m.column(i),
    }
}

/// Plans every line of `coeffs`, cutting each at the band boundary.
pub fn quantize_lines(coeffs: &HaarCoeffs, cfg: &GroupingConfig) -> Result<(LineSet, DenseMatrix)> {
    quantize_lines_split(coeffs.mat(), coeffs.axis(), Some(coeffs.band_split()), cfg)
}

/// Plans every row (`Axis::Row`) or column (`Axis::Col`) of `mat`.
/// With `band_split = None` each line is a single band.
pub fn quantize_lines_split(
    mat: &DenseMatrix,
    axis: Axis,
    band_split: Option<usize>,
    cfg: &GroupingConfig,
) -> Result<(LineSet, DenseMatrix)> {
    let (lines, len) = line_count(mat.rows(), mat.cols(), axis);
    if let Some(split) = band_split {
        if split == 0 || split >= len {
            return Err(HbllmError::length(format!(
                "band split {split} invalid for line length {len}"
            )));
        }
    }
    let mut plans = Vec::with_capacity(lines);
    let mut thresholds = Vec::with_capacity(lines);
    for i in 0..lines {
        let line = extract_line(mat, axis, i);
        let segments: Vec<&[f32]> = match band_split {
            Some(s) => vec![&line[..s], &line[s..]],
            None => vec![&line[..]],
        };
        let mut bands = Vec::with_capacity(segments.len());
        let mut signs = Vec::with_capacity(len);
        let mut chosen = Vec::with_capacity(segments.len());
        for seg in segments {
            let fit = plan_band(seg, cfg.n_candidates, cfg.share_mean)?;
            bands.push(fit.plan.narrowed());
            signs.extend(fit.signs);
            chosen.push(fit.threshold);
        }
        plans.push(LinePlan { bands, signs });
        thresholds.push(chosen);
    }
    let recon = reconstruct_lines(&plans, axis, mat.rows(), mat.cols())?;
    Ok((LineSet { plans, thresholds }, recon))
}

/// Dequantizes line plans back into a `rows x cols` matrix along `axis`.
pub fn reconstruct_lines(
    plans: &[LinePlan],
    axis: Axis,
    rows: usize,
    cols: usize,
) -> Result<DenseMatrix> {
    let (lines, len) = line_count(rows, cols, axis);
    if plans.len() != lines || plans.iter().any(|p| p.len() != len) {
        return Err(HbllmError::shape(format!(
            "{} line plans do not cover a {rows}x{cols} matrix along {axis:?}",
            plans.len()
        )));
    }
    let mut out = DenseMatrix::zeros(rows, cols);
    for (i, plan) in plans.iter().enumerate() {
        let values = plan.dequantize();
        match axis {
            Axis::Row => out.row_mut(i).copy_from_slice(&values),
            Axis::Col => out.set_column(i, &values),
        }
    }
    Ok(out)
}

/// Number of distinct values in `row`, merging neighbours (in sorted order) closer than `tolerance`.
pub fn compute_ciq(row: &[f32], tolerance: f64) -> usize {
    if row.is_empty() {
        return 0;
    }
    let mut sorted: Vec<f32> = row.to_vec();
    sorted.sort_by(f32::total_cmp);
    1 + sorted
        .windows(2)
        .filter(|w| f64::from(w[1]) - f64::from(w[0]) > tolerance)
        .count()
}

pub const DEFAULT_CIQ_TOLERANCE: f64 = 1e-9;
