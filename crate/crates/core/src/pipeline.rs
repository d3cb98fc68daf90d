//! Block-wise quantization of a full weight matrix.
//!
//! Columns are processed left to right in blocks of `beta`. For each block the
//! number of salient columns is chosen by trial quantization, the block is
//! quantized in row or column mode, and the block residual is pushed onto the
//! not-yet-quantized columns through the upper Cholesky factor of the damped
//! inverse Hessian.

use serde::{Deserialize, Serialize};

use crate::calib::{saliency_matrix, CalibStats, Damping};
use crate::error::{HbllmError, Result};
use crate::grouping::{quantize_lines, quantize_lines_split, reconstruct_lines, GroupingConfig, LinePlan};
use crate::haar::{haar_matrix, inverse_haar_matrix, Axis, HaarCoeffs};
use crate::salient::{column_scores, fill_avg, select_salient, validate_k_candidates, SalientMask, ScoreNorm, ScoreSource};
use crate::tensor::{dot, frobenius_error, DenseMatrix};

/// Direction of the main Haar pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Row,
    Col,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Row => "row",
            Mode::Col => "col",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub mode: Mode,
    pub beta: usize,
    pub grouping: GroupingConfig,
    pub norm: ScoreNorm,
    pub score_source: ScoreSource,
    pub k_candidates: Vec<usize>,
    pub damping: Damping,
    pub compensate: bool,
}

pub const DEFAULT_BETA: usize = 128;
pub const DEFAULT_K_CANDIDATES: [usize; 4] = [0, 2, 4, 8];

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Row,
            beta: DEFAULT_BETA,
            grouping: GroupingConfig::default(),
            norm: ScoreNorm::L2,
            score_source: ScoreSource::Saliency,
            k_candidates: DEFAULT_K_CANDIDATES.to_vec(),
            damping: Damping::Auto,
            compensate: true,
        }
    }
}

impl QuantConfig {
    /// Checks every shape-independent field.
    pub fn validate(&self) -> Result<()> {
        if self.beta < 2 || self.beta % 2 != 0 {
            return Err(HbllmError::config("beta", format!("must be even and >= 2, got {}", self.beta)));
        }
        if self.grouping.n_candidates == 0 || self.grouping.n_candidates > 256 {
            return Err(HbllmError::config(
                "candidates",
                format!("must be in 1..=256, got {}", self.grouping.n_candidates),
            ));
        }
        if let Damping::Value(v) = self.damping {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(HbllmError::config("lambda", format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.k_candidates.len() > 255 || self.k_candidates.iter().any(|&k| k > u16::MAX as usize) {
            return Err(HbllmError::config("k_candidates", "at most 255 candidates, each below 65536"));
        }
        validate_k_candidates(&self.k_candidates, self.beta)
    }

    /// Checks the config against a `n x m` weight matrix.
    pub fn validate_for(&self, n: usize, m: usize) -> Result<()> {
        self.validate()?;
        if n == 0 || m == 0 {
            return Err(HbllmError::shape(format!("weight matrix must be non-empty, got {n}x{m}")));
        }
        let remainder = m % self.beta;
        if remainder % 2 != 0 {
            return Err(HbllmError::config(
                "beta",
                format!("the last block has odd width {remainder} (m = {m}, beta = {})", self.beta),
            ));
        }
        let needs_even_rows = self.mode == Mode::Col || self.k_candidates.iter().any(|&k| k > 0);
        if needs_even_rows && n % 2 != 0 {
            let why = if self.mode == Mode::Col {
                "column mode"
            } else {
                "the salient column pass"
            };
            return Err(HbllmError::config(
                "mode",
                format!("{why} transforms along columns and needs an even row count, got n = {n}"),
            ));
        }
        Ok(())
    }

    /// Column ranges `(offset, width)` of every block.
    pub fn blocks(&self, m: usize) -> Vec<(usize, usize)> {
        (0..m)
            .step_by(self.beta)
            .map(|b| (b, self.beta.min(m - b)))
            .collect()
    }

    /// K candidates usable for a block of `width` columns.
    fn k_for_width(&self, width: usize) -> Vec<usize> {
        let ks: Vec<usize> = self.k_candidates.iter().copied().filter(|&k| k < width).collect();
        if ks.is_empty() {
            vec![0]
        } else {
            ks
        }
    }
}

/// Everything needed to rebuild one block of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub mode: Mode,
    pub mask: SalientMask,
    /// Row mode: one plan per row of the filled block. Column mode: one plan per non-salient column.
    pub lines: Vec<LinePlan>,
    /// One column-axis plan per salient column.
    pub salient_lines: Vec<LinePlan>,
    pub col_offset: usize,
    pub rows: usize,
    pub width: usize,
}

impl QuantizedBlock {
    /// Checks plan counts and lengths against the block shape.
    pub fn validate(&self, haar_enabled: bool) -> Result<()> {
        let k = self.mask.count();
        let bad = |what: String| Err(HbllmError::corrupt(format!("block at column {}: {what}", self.col_offset)));
        if self.mask.width() != self.width {
            return bad(format!("mask width {} != block width {}", self.mask.width(), self.width));
        }
        if k >= self.width {
            return bad(format!("{k} salient columns in a block of width {}", self.width));
        }
        let (main_lines, main_len) = match self.mode {
            Mode::Row => (self.rows, self.width),
            Mode::Col => (self.width - k, self.rows),
        };
        if self.lines.len() != main_lines {
            return bad(format!("{} line plans, expected {main_lines}", self.lines.len()));
        }
        if self.salient_lines.len() != k {
            return bad(format!("{} salient plans for {k} salient columns", self.salient_lines.len()));
        }
        let check = |plans: &[LinePlan], len: usize| -> Result<()> {
            for p in plans {
                let bands = if haar_enabled { 2 } else { 1 };
                let ok = p.len() == len
                    && p.bands.len() == bands
                    && p.bands.iter().all(|b| b.len() == len / bands)
                    && p.bands.iter().all(|b| {
                        b.alpha_sparse.is_finite()
                            && b.alpha_dense.is_finite()
                            && b.means.sparse().is_finite()
                            && b.means.dense().is_finite()
                    });
                if !ok {
                    return Err(HbllmError::corrupt(format!(
                        "block at column {}: malformed line plan",
                        self.col_offset
                    )));
                }
            }
            Ok(())
        };
        check(&self.lines, main_len)?;
        check(&self.salient_lines, self.rows)
    }

    /// Weight-domain reconstruction of this block. Reads nothing outside the block.
    pub fn reconstruct(&self, haar_enabled: bool) -> Result<DenseMatrix> {
        self.validate(haar_enabled)?;
        let sal = self.mask.columns();
        let mut out = match self.mode {
            Mode::Row => dequantize_axis(&self.lines, Axis::Row, self.rows, self.width, haar_enabled)?,
            Mode::Col => {
                let keep = self.mask.non_salient_columns();
                let part = dequantize_axis(&self.lines, Axis::Col, self.rows, keep.len(), haar_enabled)?;
                let mut out = DenseMatrix::zeros(self.rows, self.width);
                for (i, &c) in keep.iter().enumerate() {
                    out.set_column(c, &part.column(i));
                }
                out
            }
        };
        if !sal.is_empty() {
            let part = dequantize_axis(&self.salient_lines, Axis::Col, self.rows, sal.len(), haar_enabled)?;
            for r in 0..self.rows {
                for (i, &c) in sal.iter().enumerate() {
                    let v = out.get(r, c) + part.get(r, i);
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    /// Stored sign bits: one per coefficient of every line.
    pub fn sign_bits(&self) -> usize {
        self.lines.iter().chain(&self.salient_lines).map(LinePlan::len).sum()
    }
}

fn dequantize_axis(
    plans: &[LinePlan],
    axis: Axis,
    rows: usize,
    cols: usize,
    haar_enabled: bool,
) -> Result<DenseMatrix> {
    let coeffs = reconstruct_lines(plans, axis, rows, cols)?;
    if haar_enabled {
        Ok(inverse_haar_matrix(&HaarCoeffs::new(coeffs, axis)?))
    } else {
        Ok(coeffs)
    }
}

/// Plans `mat` along `axis`; the Haar transform is applied first when enabled.
fn quantize_axis(mat: &DenseMatrix, axis: Axis, g: &GroupingConfig) -> Result<(Vec<LinePlan>, Vec<Vec<f32>>, DenseMatrix)> {
    let (set, recon) = if g.haar_enabled {
        let coeffs = haar_matrix(mat, axis)?;
        let (set, rc) = quantize_lines(&coeffs, g)?;
        (set, inverse_haar_matrix(&HaarCoeffs::new(rc, axis)?))
    } else {
        quantize_lines_split(mat, axis, None, g)?
    };
    Ok((set.plans, set.thresholds, recon))
}

/// A quantized block with its reconstruction and the thresholds chosen per band.
#[derive(Debug, Clone)]
pub struct BlockQuant {
    pub block: QuantizedBlock,
    pub recon: DenseMatrix,
    pub thresholds: Vec<Vec<f32>>,
    pub salient_thresholds: Vec<Vec<f32>>,
}

fn check_mask(w_block: &DenseMatrix, mask: &SalientMask) -> Result<()> {
    if mask.width() != w_block.cols() {
        return Err(HbllmError::shape(format!(
            "mask width {} does not match block width {}",
            mask.width(),
            w_block.cols()
        )));
    }
    if mask.count() >= w_block.cols() {
        return Err(HbllmError::config(
            "k_candidates",
            "at least one non-salient column is required",
        ));
    }
    Ok(())
}

/// Row mode: fill salient holes, Haar and quantize each row, then quantize the
/// salient-column residual along columns.
pub fn row_haarquant(w_block: &DenseMatrix, mask: &SalientMask, g: &GroupingConfig) -> Result<BlockQuant> {
    check_mask(w_block, mask)?;
    let (n, width) = w_block.shape();
    let filled = fill_avg(w_block, mask)?;
    let (lines, thresholds, b_filled) = quantize_axis(&filled, Axis::Row, g)?;
    let sal = mask.columns();
    let (salient_lines, salient_thresholds) = if sal.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let residual = w_block.select_columns(&sal).sub(&b_filled.select_columns(&sal))?;
        let (plans, thr, _) = quantize_axis(&residual, Axis::Col, g)?;
        (plans, thr)
    };
    finish(
        QuantizedBlock {
            mode: Mode::Row,
            mask: mask.clone(),
            lines,
            salient_lines,
            col_offset: 0,
            rows: n,
            width,
        },
        thresholds,
        salient_thresholds,
        g,
    )
}

/// Column mode: quantize non-salient and salient columns separately, both along columns.
pub fn col_haarquant(w_block: &DenseMatrix, mask: &SalientMask, g: &GroupingConfig) -> Result<BlockQuant> {
    check_mask(w_block, mask)?;
    let (n, width) = w_block.shape();
    let keep = mask.non_salient_columns();
    let (lines, thresholds, _) = quantize_axis(&w_block.select_columns(&keep), Axis::Col, g)?;
    let sal = mask.columns();
    // The non-salient reconstruction is zero on salient columns, so the residual there is W itself.
    let (salient_lines, salient_thresholds) = if sal.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let (plans, thr, _) = quantize_axis(&w_block.select_columns(&sal), Axis::Col, g)?;
        (plans, thr)
    };
    finish(
        QuantizedBlock {
            mode: Mode::Col,
            mask: mask.clone(),
            lines,
            salient_lines,
            col_offset: 0,
            rows: n,
            width,
        },
        thresholds,
        salient_thresholds,
        g,
    )
}

fn finish(
    block: QuantizedBlock,
    thresholds: Vec<Vec<f32>>,
    salient_thresholds: Vec<Vec<f32>>,
    g: &GroupingConfig,
) -> Result<BlockQuant> {
    let recon = block.reconstruct(g.haar_enabled)?;
    Ok(BlockQuant {
        block,
        recon,
        thresholds,
        salient_thresholds,
    })
}

pub fn quantize_block(w_block: &DenseMatrix, mask: &SalientMask, mode: Mode, g: &GroupingConfig) -> Result<BlockQuant> {
    match mode {
        Mode::Row => row_haarquant(w_block, mask, g),
        Mode::Col => col_haarquant(w_block, mask, g),
    }
}

/// Pushes the residual of block `[b, b + beta)` onto the columns to its right.
///
/// `E = (W_blk − B)·U_blk⁻¹` by substitution against the upper-triangular diagonal
/// block of `chol_inv`, then `W_tail −= E·U_{blk,tail}`.
pub fn compensate(
    w: &mut DenseMatrix,
    recon_block: &DenseMatrix,
    chol_inv: &DenseMatrix,
    b: usize,
    beta: usize,
) -> Result<()> {
    let (n, m) = w.shape();
    if b + beta > m || recon_block.shape() != (n, beta) || chol_inv.shape() != (m, m) {
        return Err(HbllmError::shape(format!(
            "compensation block [{b}, {}) does not fit a {n}x{m} matrix with a {}x{} factor",
            b + beta,
            chol_inv.rows(),
            chol_inv.cols()
        )));
    }
    // Column j of the diagonal block, above and on the diagonal.
    let u_cols: Vec<Vec<f64>> = (0..beta)
        .map(|j| (0..=j).map(|i| f64::from(chol_inv.get(b + i, b + j))).collect())
        .collect();
    if let Some(j) = (0..beta).find(|&j| u_cols[j][j] == 0.0) {
        return Err(HbllmError::numeric(b + j, "zero diagonal in the inverse-Hessian factor"));
    }
    let tail = b + beta;
    let tail_len = m - tail;
    let u_rows: Vec<Vec<f64>> = (0..beta)
        .map(|i| chol_inv.row(b + i)[tail..].iter().map(|&v| f64::from(v)).collect())
        .collect();
    let mut e = vec![0.0f64; beta];
    let mut delta = vec![0.0f64; tail_len];
    for r in 0..n {
        let wr = w.row(r);
        let rr = recon_block.row(r);
        for j in 0..beta {
            let resid = f64::from(wr[b + j]) - f64::from(rr[j]);
            e[j] = (resid - dot(&e[..j], &u_cols[j][..j])) / u_cols[j][j];
        }
        if tail_len == 0 {
            continue;
        }
        delta.iter_mut().for_each(|d| *d = 0.0);
        for (i, &ei) in e.iter().enumerate() {
            if ei == 0.0 {
                continue;
            }
            for (d, &u) in delta.iter_mut().zip(&u_rows[i]) {
                *d += ei * u;
            }
        }
        for (x, d) in w.row_mut(r)[tail..].iter_mut().zip(&delta) {
            *x = (f64::from(*x) - d) as f32;
        }
    }
    Ok(())
}

/// Output of the full pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub blocks: Vec<QuantizedBlock>,
    pub n: usize,
    pub m: usize,
    pub beta: usize,
    pub mode: Mode,
    /// Resolved damping, stored at single precision.
    pub lambda: f32,
    pub cfg: QuantConfig,
}

impl QuantizedLayer {
    pub fn haar_enabled(&self) -> bool {
        self.cfg.grouping.haar_enabled
    }

    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        for block in &self.blocks {
            if block.col_offset != offset || block.rows != self.n || block.mode != self.mode {
                return Err(HbllmError::corrupt(format!(
                    "block at column {} does not continue the layer at column {offset}",
                    block.col_offset
                )));
            }
            block.validate(self.haar_enabled())?;
            offset += block.width;
        }
        if offset != self.m {
            return Err(HbllmError::corrupt(format!("blocks cover {offset} of {} columns", self.m)));
        }
        Ok(())
    }
}

/// Concatenates every block's reconstruction into the `n x m` weight estimate.
pub fn dequantize_layer(q: &QuantizedLayer) -> Result<DenseMatrix> {
    q.validate()?;
    let mut out = DenseMatrix::zeros(q.n, q.m);
    for block in &q.blocks {
        out.set_column_block(block.col_offset, &block.reconstruct(q.haar_enabled())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub index: usize,
    pub col_offset: usize,
    pub width: usize,
    pub k: usize,
    pub salient_columns: Vec<usize>,
    /// `‖W_blk − B_blk‖_F` against the block as it stood when quantized.
    pub error: f64,
    /// `(K, error)` of every trial.
    pub trials: Vec<(usize, f64)>,
    /// Chosen threshold per band of each main-pass line.
    pub thresholds: Vec<Vec<f32>>,
    pub salient_thresholds: Vec<Vec<f32>>,
}

pub const DIAGNOSTICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub beta: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub blocks: Vec<BlockDiagnostics>,
}

impl LayerDiagnostics {
    /// `sqrt(Σ block error²)`: the error against the compensated weights.
    pub fn total_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.error * b.error).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct QuantizeOutcome {
    pub layer: QuantizedLayer,
    pub diagnostics: LayerDiagnostics,
}

/// Quantizes `w` (`n x m`) with calibration activations `x` (`m x samples`).
///
/// `w` is updated in place by error compensation; on return it holds the
/// targets each block was quantized against. Clone beforehand to keep the original.
pub fn hbllm_quantize(w: &mut DenseMatrix, x: &DenseMatrix, cfg: &QuantConfig) -> Result<QuantizeOutcome> {
    let (n, m) = w.shape();
    cfg.validate_for(n, m)?;
    if x.rows() != m {
        return Err(HbllmError::shape(format!(
            "calibration activations have {} features, weights have {m} columns",
            x.rows()
        )));
    }
    w.ensure_finite()?;
    x.ensure_finite()?;
    let stats = CalibStats::build(x, cfg.damping)?;
    quantize_with_stats(w, &stats, cfg)
}

/// Same as [`hbllm_quantize`] with precomputed calibration statistics.
pub fn quantize_with_stats(w: &mut DenseMatrix, stats: &CalibStats, cfg: &QuantConfig) -> Result<QuantizeOutcome> {
    let (n, m) = w.shape();
    cfg.validate_for(n, m)?;
    if stats.width() != m {
        return Err(HbllmError::shape(format!(
            "calibration statistics cover {} columns, weights have {m}",
            stats.width()
        )));
    }
    let g = cfg.grouping;
    let mut blocks = Vec::new();
    let mut diags = Vec::new();
    for (index, (b, width)) in cfg.blocks(m).into_iter().enumerate() {
        let wb = w.column_block(b, width);
        let score_mat = match cfg.score_source {
            ScoreSource::Saliency => saliency_matrix(&wb, &stats.hinv_diag[b..b + width])?,
            ScoreSource::Weight => DenseMatrix::new(n, width, wb.data().iter().map(|v| v.abs()).collect())?,
        };
        let scores = column_scores(&score_mat, cfg.norm);
        let ks = cfg.k_for_width(width);
        let sel = select_salient(&scores, &ks, |mask| {
            let bq = quantize_block(&wb, mask, cfg.mode, &g)?;
            Ok((frobenius_error(&wb, &bq.recon)?, bq))
        })?;
        let BlockQuant {
            mut block,
            recon,
            thresholds,
            salient_thresholds,
        } = sel.payload;
        block.col_offset = b;
        if cfg.compensate {
            compensate(w, &recon, &stats.chol_inv, b, width)?;
        }
        diags.push(BlockDiagnostics {
            index,
            col_offset: b,
            width,
            k: sel.mask.count(),
            salient_columns: sel.mask.columns().iter().map(|c| c + b).collect(),
            error: sel.error,
            trials: sel.trials,
            thresholds,
            salient_thresholds,
        });
        blocks.push(block);
    }
    let lambda = stats.damping as f32;
    let mut snapshot = cfg.clone();
    snapshot.damping = Damping::Value(f64::from(lambda));
    Ok(QuantizeOutcome {
        layer: QuantizedLayer {
            blocks,
            n,
            m,
            beta: cfg.beta,
            mode: cfg.mode,
            lambda,
            cfg: snapshot,
        },
        diagnostics: LayerDiagnostics {
            schema_version: DIAGNOSTICS_SCHEMA_VERSION,
            n,
            m,
            beta: cfg.beta,
            mode: cfg.mode,
            lambda: f64::from(lambda),
            blocks: diags,
        },
    })
}
