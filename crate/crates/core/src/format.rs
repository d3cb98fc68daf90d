//! On-disk formats and storage accounting.
//!
//! Two little-endian containers:
//!
//! `RTS1` raw tensor:
//!
//! | offset | size     | field                         |
//! |--------|----------|-------------------------------|
//! | 0      | 4        | magic `RTS1`                  |
//! | 4      | 4        | dtype `u32` (0 = f32)         |
//! | 8      | 4        | rank `u32`                    |
//! | 12     | 8·rank   | dims, `u64` each              |
//! | …      | 4·Πdims  | row-major `f32` payload       |
//!
//! `HBQ1` quantized layer:
//!
//! | offset | size | field                                                       |
//! |--------|------|-------------------------------------------------------------|
//! | 0      | 4    | magic `HBQ1`                                                |
//! | 4      | 2    | version `u16` = 1                                           |
//! | 6      | 1    | mode (0 = row, 1 = col)                                     |
//! | 7      | 1    | scalar precision (0 = IEEE-754 binary16)                    |
//! | 8      | 1    | flags: bit0 shared mean, bit1 Haar, bit2 compensation,      |
//! |        |      | bit3 ℓ1 scores, bit4 scores over raw weights                |
//! | 9      | 1    | reserved, 0                                                 |
//! | 10     | 2    | partition candidates `u16`                                  |
//! | 12     | 4    | n `u32`                                                     |
//! | 16     | 4    | m `u32`                                                     |
//! | 20     | 4    | beta `u32`                                                  |
//! | 24     | 4    | lambda `f32`                                                |
//! | 28     | 4    | block count `u32`                                           |
//! | 32     | 1    | K-candidate count `c`                                       |
//! | 33     | 2·c  | K candidates, `u16` each                                    |
//!
//! Then per block: width `u32`, salient mask (width bits), the main-pass line
//! records (row mode: `n` lines of length width; column mode: width − K lines of
//! length `n`), then `K` salient line records of length `n`.
//!
//! A line record is, per band (two with Haar, one without): threshold index
//! `u8`, then the scalars: `mu, alpha_sparse, alpha_dense` with a shared mean,
//! `mu_sparse, mu_dense, alpha_sparse, alpha_dense` without. After the bands
//! come the sparse-group bitmap and the sign bitmap of the whole line.
//!
//! Bitmaps are LSB-first and zero-padded to a byte. The file ends with the
//! CRC-32 (IEEE) of every preceding byte.

use std::path::Path;

use half::f16;
use serde::Serialize;

use crate::calib::Damping;
use crate::error::{HbllmError, Result};
use crate::grouping::{BandPlan, GroupMeans, GroupingConfig, LinePlan};
use crate::pipeline::{Mode, QuantConfig, QuantizedBlock, QuantizedLayer};
use crate::salient::{SalientMask, ScoreNorm, ScoreSource};
use crate::tensor::DenseMatrix;

pub const RTS_MAGIC: &[u8; 4] = b"RTS1";
pub const HBQ_MAGIC: &[u8; 4] = b"HBQ1";
pub const HBQ_VERSION: u16 = 1;
pub const DTYPE_F32: u32 = 0;
pub const SCALAR_BINARY16: u8 = 0;

const FLAG_SHARE_MEAN: u8 = 1 << 0;
const FLAG_HAAR: u8 = 1 << 1;
const FLAG_COMPENSATE: u8 = 1 << 2;
const FLAG_NORM_L1: u8 = 1 << 3;
const FLAG_SCORE_WEIGHT: u8 = 1 << 4;
const KNOWN_FLAGS: u8 = 0b1_1111;

const HEADER_FIXED_BYTES: usize = 33;
const CRC_BYTES: usize = 4;
const SCALAR_BITS: usize = 16;
const INDEX_BITS: usize = 8;

// ---------------------------------------------------------------------------
// bit packing

/// Packs bits LSB-first; the last byte is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Packs signs (`+1` → 1, `-1` → 0) LSB-first.
pub fn pack_signs(signs: &[i8]) -> Vec<u8> {
    let bits: Vec<bool> = signs.iter().map(|&s| s >= 0).collect();
    pack_bits(&bits)
}

pub fn unpack_signs(bytes: &[u8], len: usize) -> Vec<i8> {
    unpack_bits(bytes, len)
        .into_iter()
        .map(|b| if b { 1 } else { -1 })
        .collect()
}

// ---------------------------------------------------------------------------
// byte cursors

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f16(&mut self, v: f32) {
        self.buf.extend_from_slice(&f16::from_f32(v).to_le_bytes());
    }
    fn bits(&mut self, bits: &[bool]) {
        self.buf.extend_from_slice(&pack_bits(bits));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(HbllmError::integrity(
                self.pos,
                format!("truncated while reading {what} ({n} bytes needed, {} left)", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f16(&mut self, what: &str) -> Result<f32> {
        let at = self.pos;
        let v = f16::from_le_bytes(self.take(2, what)?.try_into().unwrap()).to_f32();
        if !v.is_finite() {
            return Err(HbllmError::integrity(at, format!("non-finite {what}")));
        }
        Ok(v)
    }
    fn bits(&mut self, len: usize, what: &str) -> Result<Vec<bool>> {
        Ok(unpack_bits(self.take(len.div_ceil(8), what)?, len))
    }
}

// ---------------------------------------------------------------------------
// RTS1

pub fn encode_rts(m: &DenseMatrix) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::with_capacity(28 + 4 * m.data().len()),
    };
    w.buf.extend_from_slice(RTS_MAGIC);
    w.u32(DTYPE_F32);
    w.u32(2);
    w.buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    w.buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        w.f32(v);
    }
    w.buf
}

/// Decodes a rank-2 tensor; every entry must be finite.
pub fn decode_rts(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != RTS_MAGIC {
        return Err(HbllmError::integrity(0, "bad magic, expected RTS1"));
    }
    let dtype = r.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(HbllmError::integrity(4, format!("unsupported dtype code {dtype}")));
    }
    let rank = r.u32("rank")?;
    if rank != 2 {
        return Err(HbllmError::shape(format!("expected a rank-2 tensor, got rank {rank}")));
    }
    let rows = r.u64("rows")? as usize;
    let cols = r.u64("cols")? as usize;
    let count = rows
        .checked_mul(cols)
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| HbllmError::integrity(12, "dimensions overflow"))?;
    let payload = r.take(count * 4, "payload")?;
    if r.pos != bytes.len() {
        return Err(HbllmError::integrity(r.pos, "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = DenseMatrix::new(rows, cols, data)?;
    m.ensure_finite()?;
    Ok(m)
}

pub fn write_rts(path: &Path, m: &DenseMatrix) -> Result<()> {
    std::fs::write(path, encode_rts(m)).map_err(|e| io_err(path, "cannot write", e))
}

pub fn read_rts(path: &Path) -> Result<DenseMatrix> {
    decode_rts(&read_file(path)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, "cannot read", e))
}

fn io_err(path: &Path, what: &str, source: std::io::Error) -> HbllmError {
    HbllmError::Io {
        context: format!("{what} {}", path.display()),
        source,
    }
}

// ---------------------------------------------------------------------------
// HBQ1

fn flags_of(cfg: &QuantConfig) -> u8 {
    let mut f = 0;
    if cfg.grouping.share_mean {
        f |= FLAG_SHARE_MEAN;
    }
    if cfg.grouping.haar_enabled {
        f |= FLAG_HAAR;
    }
    if cfg.compensate {
        f |= FLAG_COMPENSATE;
    }
    if cfg.norm == ScoreNorm::L1 {
        f |= FLAG_NORM_L1;
    }
    if cfg.score_source == ScoreSource::Weight {
        f |= FLAG_SCORE_WEIGHT;
    }
    f
}

fn header_bytes(cfg: &QuantConfig) -> usize {
    HEADER_FIXED_BYTES + 2 * cfg.k_candidates.len()
}

fn block_geometry(mode: Mode, rows: usize, width: usize, k: usize) -> (usize, usize) {
    match mode {
        Mode::Row => (rows, width),
        Mode::Col => (width - k, rows),
    }
}

pub fn encode_layer(q: &QuantizedLayer) -> Result<Vec<u8>> {
    q.validate()?;
    let cfg = &q.cfg;
    let too_big = |field: &'static str| HbllmError::config(field, "value does not fit the container");
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(HBQ_MAGIC);
    w.u16(HBQ_VERSION);
    w.u8(match q.mode {
        Mode::Row => 0,
        Mode::Col => 1,
    });
    w.u8(SCALAR_BINARY16);
    w.u8(flags_of(cfg));
    w.u8(0);
    w.u16(u16::try_from(cfg.grouping.n_candidates).map_err(|_| too_big("candidates"))?);
    w.u32(u32::try_from(q.n).map_err(|_| too_big("n"))?);
    w.u32(u32::try_from(q.m).map_err(|_| too_big("m"))?);
    w.u32(u32::try_from(q.beta).map_err(|_| too_big("beta"))?);
    w.f32(q.lambda);
    w.u32(q.blocks.len() as u32);
    w.u8(u8::try_from(cfg.k_candidates.len()).map_err(|_| too_big("k_candidates"))?);
    for &k in &cfg.k_candidates {
        w.u16(u16::try_from(k).map_err(|_| too_big("k_candidates"))?);
    }
    let share = cfg.grouping.share_mean;
    for block in &q.blocks {
        w.u32(block.width as u32);
        w.bits(block.mask.bits());
        for line in block.lines.iter().chain(&block.salient_lines) {
            write_line(&mut w, line, share)?;
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

fn write_line(w: &mut Writer, line: &LinePlan, share: bool) -> Result<()> {
    for band in &line.bands {
        w.u8(band.threshold_index);
        match (band.means, share) {
            (GroupMeans::Shared(mu), true) => w.f16(mu),
            (GroupMeans::Split { sparse, dense }, false) => {
                w.f16(sparse);
                w.f16(dense);
            }
            _ => {
                return Err(HbllmError::corrupt(
                    "band mean layout disagrees with the layer's shared-mean flag",
                ))
            }
        }
        w.f16(band.alpha_sparse);
        w.f16(band.alpha_dense);
    }
    let sparse: Vec<bool> = line.bands.iter().flat_map(|b| b.sparse.iter().copied()).collect();
    w.bits(&sparse);
    w.bits(&line.signs);
    Ok(())
}

fn read_line(r: &mut Reader, len: usize, haar: bool, share: bool) -> Result<LinePlan> {
    let n_bands = if haar { 2 } else { 1 };
    if len % n_bands != 0 {
        return Err(HbllmError::integrity(r.pos, format!("line length {len} cannot be split into bands")));
    }
    let mut heads = Vec::with_capacity(n_bands);
    for _ in 0..n_bands {
        let threshold_index = r.u8("threshold index")?;
        let means = if share {
            GroupMeans::Shared(r.f16("mean")?)
        } else {
            let sparse = r.f16("sparse mean")?;
            let dense = r.f16("dense mean")?;
            GroupMeans::Split { sparse, dense }
        };
        let alpha_sparse = r.f16("sparse scale")?;
        let alpha_dense = r.f16("dense scale")?;
        heads.push((threshold_index, means, alpha_sparse, alpha_dense));
    }
    let sparse = r.bits(len, "group bitmap")?;
    let signs = r.bits(len, "sign bitmap")?;
    let band_len = len / n_bands;
    let bands = heads
        .into_iter()
        .enumerate()
        .map(|(i, (threshold_index, means, alpha_sparse, alpha_dense))| BandPlan {
            threshold_index,
            means,
            alpha_sparse,
            alpha_dense,
            sparse: sparse[i * band_len..(i + 1) * band_len].to_vec(),
        })
        .collect();
    Ok(LinePlan { bands, signs })
}

/// Parses an HBQ1 container. The checksum is verified before anything else is read.
pub fn decode_layer(bytes: &[u8]) -> Result<QuantizedLayer> {
    if bytes.len() < HEADER_FIXED_BYTES + CRC_BYTES {
        return Err(HbllmError::integrity(
            bytes.len(),
            format!("truncated: {} bytes is shorter than the fixed header", bytes.len()),
        ));
    }
    let body_len = bytes.len() - CRC_BYTES;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(HbllmError::Checksum {
            offset: body_len,
            stored,
            computed,
        });
    }
    let mut r = Reader {
        buf: &bytes[..body_len],
        pos: 0,
    };
    if r.take(4, "magic")? != HBQ_MAGIC {
        return Err(HbllmError::integrity(0, "bad magic, expected HBQ1"));
    }
    let version = r.u16("version")?;
    if version != HBQ_VERSION {
        return Err(HbllmError::integrity(4, format!("unsupported version {version}")));
    }
    let mode = match r.u8("mode")? {
        0 => Mode::Row,
        1 => Mode::Col,
        other => return Err(HbllmError::integrity(6, format!("unknown mode code {other}"))),
    };
    let precision = r.u8("scalar precision")?;
    if precision != SCALAR_BINARY16 {
        return Err(HbllmError::integrity(7, format!("unsupported scalar precision {precision}")));
    }
    let flags = r.u8("flags")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(HbllmError::integrity(8, format!("unknown flag bits {flags:#04x}")));
    }
    r.u8("reserved")?;
    let n_candidates = usize::from(r.u16("candidates")?);
    let n = r.u32("n")? as usize;
    let m = r.u32("m")? as usize;
    let beta = r.u32("beta")? as usize;
    let lambda = r.f32("lambda")?;
    let n_blocks = r.u32("block count")? as usize;
    let n_k = usize::from(r.u8("K-candidate count")?);
    let k_candidates = (0..n_k)
        .map(|_| r.u16("K candidate").map(usize::from))
        .collect::<Result<Vec<_>>>()?;

    let share = flags & FLAG_SHARE_MEAN != 0;
    let haar = flags & FLAG_HAAR != 0;
    let cfg = QuantConfig {
        mode,
        beta,
        grouping: GroupingConfig {
            n_candidates,
            share_mean: share,
            haar_enabled: haar,
        },
        norm: if flags & FLAG_NORM_L1 != 0 {
            ScoreNorm::L1
        } else {
            ScoreNorm::L2
        },
        score_source: if flags & FLAG_SCORE_WEIGHT != 0 {
            ScoreSource::Weight
        } else {
            ScoreSource::Saliency
        },
        k_candidates,
        damping: Damping::Value(f64::from(lambda)),
        compensate: flags & FLAG_COMPENSATE != 0,
    };

    let mut blocks = Vec::new();
    let mut col_offset = 0;
    for _ in 0..n_blocks {
        let at = r.pos;
        let width = r.u32("block width")? as usize;
        if width == 0 || col_offset + width > m {
            return Err(HbllmError::integrity(at, format!("block width {width} overruns m = {m}")));
        }
        let mask = SalientMask::from_bits(r.bits(width, "salient mask")?);
        let k = mask.count();
        if k >= width {
            return Err(HbllmError::integrity(at, "every column of the block is salient"));
        }
        let (n_lines, len) = block_geometry(mode, n, width, k);
        let lines = (0..n_lines)
            .map(|_| read_line(&mut r, len, haar, share))
            .collect::<Result<Vec<_>>>()?;
        let salient_lines = (0..k)
            .map(|_| read_line(&mut r, n, haar, share))
            .collect::<Result<Vec<_>>>()?;
        blocks.push(QuantizedBlock {
            mode,
            mask,
            lines,
            salient_lines,
            col_offset,
            rows: n,
            width,
        });
        col_offset += width;
    }
    if r.pos != body_len {
        return Err(HbllmError::integrity(r.pos, "trailing bytes before checksum"));
    }
    let layer = QuantizedLayer {
        blocks,
        n,
        m,
        beta,
        mode,
        lambda,
        cfg,
    };
    layer.validate()?;
    Ok(layer)
}

pub fn write_layer(path: &Path, q: &QuantizedLayer) -> Result<()> {
    std::fs::write(path, encode_layer(q)?).map_err(|e| io_err(path, "cannot write", e))
}

pub fn read_layer(path: &Path) -> Result<QuantizedLayer> {
    decode_layer(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// bit accounting

/// Storage breakdown of a layer (or block) in bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BitCounts {
    pub sign_bits: usize,
    pub scalar_bits: usize,
    /// Salient-column masks plus sparse/dense group bitmaps.
    pub mask_bits: usize,
    pub index_bits: usize,
    /// Header, block widths, byte padding, checksum.
    pub container_overhead_bits: usize,
}

impl BitCounts {
    pub fn total(&self) -> usize {
        self.sign_bits + self.scalar_bits + self.mask_bits + self.index_bits + self.container_overhead_bits
    }

    fn add(&mut self, o: &BitCounts) {
        self.sign_bits += o.sign_bits;
        self.scalar_bits += o.scalar_bits;
        self.mask_bits += o.mask_bits;
        self.index_bits += o.index_bits;
        self.container_overhead_bits += o.container_overhead_bits;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitReport {
    #[serde(flatten)]
    pub counts: BitCounts,
    pub total_bits: usize,
    pub total_weights: usize,
    pub avg_bits_per_weight: f64,
}

impl BitReport {
    fn from_counts(counts: BitCounts, total_weights: usize) -> Self {
        let total_bits = counts.total();
        Self {
            counts,
            total_bits,
            total_weights,
            avg_bits_per_weight: total_bits as f64 / total_weights.max(1) as f64,
        }
    }
}

fn padding(bits: usize) -> usize {
    bits.div_ceil(8) * 8 - bits
}

fn line_counts(line: &LinePlan) -> BitCounts {
    let len = line.len();
    BitCounts {
        sign_bits: len,
        scalar_bits: line
            .bands
            .iter()
            .map(|b| SCALAR_BITS * (2 + b.means.count()))
            .sum(),
        mask_bits: len,
        index_bits: INDEX_BITS * line.bands.len(),
        container_overhead_bits: 2 * padding(len),
    }
}

/// Bits one block occupies in the container, including its width field and padding.
pub fn block_bit_counts(block: &QuantizedBlock) -> BitCounts {
    let mut c = BitCounts {
        mask_bits: block.width,
        container_overhead_bits: 32 + padding(block.width),
        ..BitCounts::default()
    };
    for line in block.lines.iter().chain(&block.salient_lines) {
        c.add(&line_counts(line));
    }
    c
}

pub fn block_bit_report(block: &QuantizedBlock) -> BitReport {
    BitReport::from_counts(block_bit_counts(block), block.rows * block.width)
}

/// Storage of the whole encoded layer; `total_bits` equals the file size in bits.
pub fn bit_report(q: &QuantizedLayer) -> BitReport {
    let mut c = BitCounts {
        container_overhead_bits: 8 * (header_bytes(&q.cfg) + CRC_BYTES),
        ..BitCounts::default()
    };
    for block in &q.blocks {
        c.add(&block_bit_counts(block));
    }
    BitReport::from_counts(c, q.n * q.m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{hbllm_quantize, QuantConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    fn layer(cfg: &QuantConfig, n: usize, m: usize, seed: u64) -> QuantizedLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = gaussian(n, m, &mut rng);
        let x = gaussian(m, 2 * m, &mut rng);
        hbllm_quantize(&mut w, &x, cfg).unwrap().layer
    }

    #[test]
    fn sign_packing_examples() {
        assert_eq!(pack_signs(&[1, -1, -1, 1]), vec![0x09]);
        assert_eq!(pack_signs(&[1; 8]), vec![0xFF]);
        assert_eq!(pack_signs(&[1; 9]), vec![0xFF, 0x01]);
        assert!(pack_signs(&[]).is_empty());
    }

    #[test]
    fn sign_roundtrip_1000() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<i8> = (0..1000).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        assert_eq!(unpack_signs(&pack_signs(&s), s.len()), s);
    }

    #[test]
    fn rts_roundtrip_and_errors() {
        let m = DenseMatrix::from_rows(&[[1.0, -2.5, 3.0], [0.0, 4.0, -0.125]]);
        let bytes = encode_rts(&m);
        assert_eq!(&bytes[..4], b"RTS1");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 16 + 24);
        assert_eq!(decode_rts(&bytes).unwrap(), m);
        assert!(decode_rts(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_rts(&bad).is_err());
        let mut nan = bytes;
        nan[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_rts(&nan).is_err());
    }

    /// Frozen encoding of a 2x4 row-mode layer with an empty mask.
    #[test]
    fn golden_toy_layer() {
        let mut w = DenseMatrix::from_rows(&[[1.75, 1.25, 0.25, 0.75], [0.5, -0.5, 1.0, 2.0]]);
        let x = DenseMatrix::identity(4);
        let cfg = QuantConfig {
            beta: 4,
            k_candidates: vec![0],
            ..QuantConfig::default()
        };
        let q = hbllm_quantize(&mut w, &x, &cfg).unwrap().layer;
        let bytes = encode_layer(&q).unwrap();
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, GOLDEN_TOY_LAYER);
        assert_eq!(bit_report(&q).total_bits, bytes.len() * 8);
    }

    const GOLDEN_TOY_LAYER: &str = "4842513101000000070028000200000004000000040000000ad7a33c01000000010000040000000000003c00380000000000003400000f0500003a003a0000000000003800000f06fe702ea3";

    #[test]
    fn any_byte_flip_is_a_checksum_error() {
        let q = layer(&QuantConfig { beta: 16, k_candidates: vec![0, 2], ..QuantConfig::default() }, 8, 32, 3);
        let bytes = encode_layer(&q).unwrap();
        for i in (0..bytes.len()).step_by(7) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            let err = decode_layer(&bad).unwrap_err();
            assert!(matches!(err, HbllmError::Checksum { .. }), "byte {i}: {err}");
        }
        let err = decode_layer(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.is_integrity());
        assert!(decode_layer(&bytes[..10]).unwrap_err().is_integrity());
    }

    #[test]
    fn roundtrip_all_flag_combinations() {
        for mode in [Mode::Row, Mode::Col] {
            for share_mean in [true, false] {
                for haar_enabled in [true, false] {
                    let cfg = QuantConfig {
                        mode,
                        beta: 8,
                        grouping: GroupingConfig { n_candidates: 10, share_mean, haar_enabled },
                        norm: ScoreNorm::L1,
                        score_source: ScoreSource::Weight,
                        k_candidates: vec![0, 2],
                        compensate: false,
                        ..QuantConfig::default()
                    };
                    let q = layer(&cfg, 6, 20, 4);
                    let bytes = encode_layer(&q).unwrap();
                    let back = decode_layer(&bytes).unwrap();
                    assert_eq!(back, q);
                    assert_eq!(encode_layer(&back).unwrap(), bytes);
                    assert_eq!(bit_report(&q).total_bits, bytes.len() * 8);
                }
            }
        }
    }

    #[test]
    fn shared_mean_saves_a_quarter_bit() {
        let run = |share_mean| {
            let cfg = QuantConfig {
                grouping: GroupingConfig { share_mean, ..GroupingConfig::default() },
                k_candidates: vec![0],
                ..QuantConfig::default()
            };
            bit_report(&layer(&cfg, 16, 256, 5))
        };
        let (on, off) = (run(true), run(false));
        let delta = (off.total_bits - on.total_bits) as f64 / on.total_weights as f64;
        assert_eq!(delta, 0.25);
        assert_eq!(off.avg_bits_per_weight - on.avg_bits_per_weight, 0.25);
    }

    #[test]
    fn col_mode_scalar_overhead() {
        // per column line of length n: 2 bands x (3 scalars x 16 + 8 index bits)
        let n = 4096;
        let per_line = (6 * 16 + 2 * 8) as f64 / n as f64;
        assert!((per_line - 0.02734375).abs() < 1e-12);
        let cfg = QuantConfig { mode: Mode::Col, beta: 4, k_candidates: vec![0], ..QuantConfig::default() };
        let q = layer(&cfg, 64, 8, 6);
        let c = bit_report(&q).counts;
        assert_eq!(c.sign_bits, 64 * 8);
        assert_eq!(c.scalar_bits + c.index_bits, 8 * (6 * 16 + 2 * 8));
    }

    #[test]
    fn salient_columns_cost_extra_sign_bits_in_row_mode() {
        let cfg = QuantConfig { beta: 16, k_candidates: vec![2], ..QuantConfig::default() };
        let q = layer(&cfg, 8, 32, 7);
        assert_eq!(bit_report(&q).counts.sign_bits, 8 * 32 + 2 * 8 * 2);
        let cfg = QuantConfig { beta: 16, k_candidates: vec![0], ..QuantConfig::default() };
        assert_eq!(bit_report(&layer(&cfg, 8, 32, 7)).counts.sign_bits, 8 * 32);
    }

    proptest! {
        #[test]
        fn bit_roundtrip(bits in prop::collection::vec(any::<bool>(), 0..200)) {
            prop_assert_eq!(unpack_bits(&pack_bits(&bits), bits.len()), bits);
        }

        #[test]
        fn rts_roundtrip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = gaussian(rows, cols, &mut rng);
            prop_assert_eq!(decode_rts(&encode_rts(&m)).unwrap(), m);
        }
    }
}
