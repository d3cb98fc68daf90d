//! C ABI over the `hbllm` quantizer.
//!
//! Matrices and layers are opaque heap handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns an
//! [`HbllmStatus`]; on failure [`hbllm_last_error_message`] describes the error.
//! Panics are caught at the boundary and reported as `HBLLM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hbllm::format::{bit_report, decode_layer, encode_layer};
use hbllm::{
    dequantize_layer, hbllm_quantize as quantize_layer, Damping, DenseMatrix, GroupingConfig, HbllmError, Mode, QuantConfig,
    QuantizedLayer, ScoreNorm, ScoreSource,
};

/// Maximum number of salient-count candidates in [`HbllmConfig`].
pub const HBLLM_MAX_K_CANDIDATES: usize = 16;

/// Result code of every fallible call. Values 2–4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbllmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Shape, length or configuration error.
    Invalid = 2,
    /// Corrupt or truncated container, checksum mismatch.
    Integrity = 3,
    /// Non-positive pivot or singular triangular block.
    Numeric = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

/// Dense row-major `f32` matrix.
pub struct HbllmMatrix {
    inner: DenseMatrix,
}

/// Quantized layer.
pub struct HbllmLayer {
    inner: QuantizedLayer,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HbllmConfig {
    /// 0 = row, 1 = col.
    pub mode: u32,
    pub beta: u32,
    /// Percentile threshold candidates per band.
    pub candidates: u32,
    pub share_mean: bool,
    pub haar: bool,
    pub compensate: bool,
    /// Score salient columns by ℓ1 instead of ℓ2.
    pub norm_l1: bool,
    /// Score over `|W|` instead of the saliency matrix.
    pub score_weight: bool,
    /// Used entries of `k_candidates`.
    pub k_count: u32,
    pub k_candidates: [u32; HBLLM_MAX_K_CANDIDATES],
    /// Hessian damping; negative selects the automatic value.
    pub lambda: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HbllmBitReport {
    pub sign_bits: u64,
    pub scalar_bits: u64,
    pub mask_bits: u64,
    pub index_bits: u64,
    pub container_overhead_bits: u64,
    pub total_bits: u64,
    pub total_weights: u64,
    pub avg_bits_per_weight: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &HbllmError) -> HbllmStatus {
    match e.exit_code() {
        3 => HbllmStatus::Integrity,
        4 => HbllmStatus::Numeric,
        _ => HbllmStatus::Invalid,
    }
}

fn guard<F: FnOnce() -> Result<(), (HbllmStatus, String)>>(f: F) -> HbllmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HbllmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            HbllmStatus::Panic
        }
    }
}

fn lib<T>(r: hbllm::Result<T>) -> Result<T, (HbllmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HbllmStatus, String) {
    (HbllmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (HbllmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn invalid(msg: impl Into<String>) -> (HbllmStatus, String) {
    (HbllmStatus::Invalid, msg.into())
}

impl HbllmConfig {
    fn to_quant(self) -> Result<QuantConfig, (HbllmStatus, String)> {
        let mode = match self.mode {
            0 => Mode::Row,
            1 => Mode::Col,
            m => return Err(invalid(format!("invalid config field `mode`: unknown code {m}"))),
        };
        let k_count = self.k_count as usize;
        if k_count > HBLLM_MAX_K_CANDIDATES {
            return Err(invalid(format!(
                "invalid config field `k_candidates`: k_count {k_count} exceeds {HBLLM_MAX_K_CANDIDATES}"
            )));
        }
        Ok(QuantConfig {
            mode,
            beta: self.beta as usize,
            grouping: GroupingConfig {
                n_candidates: self.candidates as usize,
                share_mean: self.share_mean,
                haar_enabled: self.haar,
            },
            norm: if self.norm_l1 { ScoreNorm::L1 } else { ScoreNorm::L2 },
            score_source: if self.score_weight {
                ScoreSource::Weight
            } else {
                ScoreSource::Saliency
            },
            k_candidates: self.k_candidates[..k_count].iter().map(|&k| k as usize).collect(),
            damping: if self.lambda < 0.0 {
                Damping::Auto
            } else {
                Damping::Value(self.lambda)
            },
            compensate: self.compensate,
        })
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hbllm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fills `out` with the default configuration.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_config_default(out: *mut HbllmConfig) -> HbllmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = QuantConfig::default();
        let mut ks = [0u32; HBLLM_MAX_K_CANDIDATES];
        for (slot, &k) in ks.iter_mut().zip(&d.k_candidates) {
            *slot = k as u32;
        }
        *out = HbllmConfig {
            mode: 0,
            beta: d.beta as u32,
            candidates: d.grouping.n_candidates as u32,
            share_mean: d.grouping.share_mean,
            haar: d.grouping.haar_enabled,
            compensate: d.compensate,
            norm_l1: false,
            score_weight: false,
            k_count: d.k_candidates.len() as u32,
            k_candidates: ks,
            lambda: -1.0,
        };
        Ok(())
    })
}

/// Copies `rows * cols` row-major floats into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable floats (it may be null when the
/// product is zero); `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f32,
    out: *mut *mut HbllmMatrix,
) -> HbllmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid(format!("{rows}x{cols} overflows")))?;
        let values = if len == 0 {
            Vec::new()
        } else {
            if data.is_null() {
                return Err(null("data"));
            }
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let inner = lib(DenseMatrix::new(rows, cols, values))?;
        *out = Box::into_raw(Box::new(HbllmMatrix { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hbllm_matrix_free(m: *mut HbllmMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle; `rows`/`cols` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_matrix_shape(m: *const HbllmMatrix, rows: *mut usize, cols: *mut usize) -> HbllmStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        *rows.as_mut().ok_or_else(|| null("rows"))? = m.inner.rows();
        *cols.as_mut().ok_or_else(|| null("cols"))? = m.inner.cols();
        Ok(())
    })
}

/// Copies the row-major contents into `out`, which must hold `len` floats and
/// `len` must equal `rows * cols`.
///
/// # Safety
/// `m` must be a live handle; `out` must be valid for `len` float writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_matrix_read(m: *const HbllmMatrix, out: *mut f32, len: usize) -> HbllmStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let data = m.inner.data();
        if len != data.len() {
            return Err(invalid(format!("buffer holds {len} floats, matrix has {}", data.len())));
        }
        if len > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(data.as_ptr(), out, len);
        }
        Ok(())
    })
}

/// Quantizes `w` (`n x m`) against calibration activations `x` (`m x samples`).
/// `w` is not modified.
///
/// # Safety
/// `w`, `x`, `cfg` must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_quantize(
    w: *const HbllmMatrix,
    x: *const HbllmMatrix,
    cfg: *const HbllmConfig,
    out: *mut *mut HbllmLayer,
) -> HbllmStatus {
    guard(|| {
        let w = deref(w, "w")?;
        let x = deref(x, "x")?;
        let cfg = (*deref(cfg, "cfg")?).to_quant()?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mut target = w.inner.clone();
        let outcome = lib(quantize_layer(&mut target, &x.inner, &cfg))?;
        *out = Box::into_raw(Box::new(HbllmLayer { inner: outcome.layer }));
        Ok(())
    })
}

/// # Safety
/// `layer` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hbllm_layer_free(layer: *mut HbllmLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// # Safety
/// `layer` must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_dequantize(layer: *const HbllmLayer, out: *mut *mut HbllmMatrix) -> HbllmStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = lib(dequantize_layer(&layer.inner))?;
        *out = Box::into_raw(Box::new(HbllmMatrix { inner }));
        Ok(())
    })
}

/// Serializes to an HBQ1 byte buffer released with [`hbllm_buffer_free`].
///
/// # Safety
/// `layer` must be live; `buf` and `len` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_layer_encode(
    layer: *const HbllmLayer,
    buf: *mut *mut u8,
    len: *mut usize,
) -> HbllmStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let buf = buf.as_mut().ok_or_else(|| null("buf"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let bytes = lib(encode_layer(&layer.inner))?.into_boxed_slice();
        *len = bytes.len();
        *buf = Box::into_raw(bytes) as *mut u8;
        Ok(())
    })
}

/// # Safety
/// `buf`/`len` must come from [`hbllm_layer_encode`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hbllm_buffer_free(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

/// Parses an HBQ1 buffer.
///
/// # Safety
/// `buf` must point to `len` readable bytes; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_layer_decode(buf: *const u8, len: usize, out: *mut *mut HbllmLayer) -> HbllmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let inner = lib(decode_layer(std::slice::from_raw_parts(buf, len)))?;
        *out = Box::into_raw(Box::new(HbllmLayer { inner }));
        Ok(())
    })
}

/// # Safety
/// `layer` must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hbllm_layer_bit_report(layer: *const HbllmLayer, out: *mut HbllmBitReport) -> HbllmStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = bit_report(&layer.inner);
        *out = HbllmBitReport {
            sign_bits: r.counts.sign_bits as u64,
            scalar_bits: r.counts.scalar_bits as u64,
            mask_bits: r.counts.mask_bits as u64,
            index_bits: r.counts.index_bits as u64,
            container_overhead_bits: r.counts.container_overhead_bits as u64,
            total_bits: r.total_bits as u64,
            total_weights: r.total_weights as u64,
            avg_bits_per_weight: r.avg_bits_per_weight,
        };
        Ok(())
    })
}
