//! Command-line front end: `quantize`, `dequantize`, `inspect`, `ab`, `gen`.
//!
//! Settings come from an optional `key = value` file (`--config`) and are then
//! overridden by flags. Exit codes: 0 ok, 2 validation or I/O, 3 integrity,
//! 4 numeric failure.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::calib::{CalibStats, Damping};
use crate::error::{HbllmError, Result};
use crate::format::{bit_report, block_bit_report, read_layer, read_rts, write_layer, write_rts, BitReport};
use crate::grouping::{compute_ciq, DEFAULT_CIQ_TOLERANCE};
use crate::pipeline::{dequantize_layer, quantize_with_stats, LayerDiagnostics, Mode, QuantConfig};
use crate::salient::{ScoreNorm, ScoreSource};
use crate::tensor::{frobenius_error, matmul, DenseMatrix};

/// Version tag written into every report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "hbllm", version, about = "1-bit Haar-domain post-training quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize an RTS1 weight matrix with RTS1 calibration activations.
    Quantize {
        /// Weights, `n x m`.
        weights: PathBuf,
        /// Calibration activations, `m x samples`.
        calib: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Reconstruct an HBQ1 layer into an RTS1 matrix.
    Dequantize {
        hbq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print storage, CIQ and per-block error of an HBQ1 layer.
    Inspect {
        hbq: PathBuf,
        /// Diagnostics sidecar; defaults to `<hbq>.diag.json` when present.
        #[arg(long)]
        diag: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Compare reconstruction error across ablation switches.
    Ab {
        weights: PathBuf,
        calib: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Write a seeded standard-normal RTS1 matrix.
    Gen {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[command(flatten)]
        knobs: Knobs,
    },
}

#[derive(Debug, Args)]
struct Knobs {
    /// Plain-text `key = value` settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// row | col
    #[arg(long)]
    mode: Option<String>,
    /// Block width (even).
    #[arg(long)]
    beta: Option<String>,
    /// Number of percentile threshold candidates (1..=256).
    #[arg(long)]
    candidates: Option<String>,
    /// on | off
    #[arg(long)]
    share_mean: Option<String>,
    /// l2 | l1
    #[arg(long)]
    norm: Option<String>,
    /// Comma-separated even salient column counts, e.g. `0,2,4,8`.
    #[arg(long)]
    k_candidates: Option<String>,
    /// auto | non-negative number
    #[arg(long)]
    lambda: Option<String>,
    /// saliency | weight
    #[arg(long)]
    score_source: Option<String>,
    /// on | off
    #[arg(long)]
    haar: Option<String>,
    /// on | off
    #[arg(long)]
    compensate: Option<String>,
    /// Seed for `gen`.
    #[arg(long)]
    seed: Option<String>,
    /// csv | jsonl
    #[arg(long)]
    report: Option<String>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub quant: QuantConfig,
    pub seed: u64,
    pub report: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            quant: QuantConfig::default(),
            seed: 0,
            report: ReportFormat::Csv,
        }
    }
}

fn parse_switch(field: &'static str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(HbllmError::config(field, format!("expected on|off, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| HbllmError::config(field, format!("expected a non-negative integer, got `{v}`")))
}

impl RunConfig {
    /// Applies one setting; `key` accepts `-` or `_` separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let q = &mut self.quant;
        match key.trim().replace('-', "_").as_str() {
            "mode" => {
                q.mode = match v {
                    "row" => Mode::Row,
                    "col" => Mode::Col,
                    _ => return Err(HbllmError::config("mode", format!("expected row|col, got `{v}`"))),
                }
            }
            "beta" => q.beta = parse_num("beta", v)?,
            "candidates" => q.grouping.n_candidates = parse_num("candidates", v)?,
            "share_mean" => q.grouping.share_mean = parse_switch("share_mean", v)?,
            "haar" => q.grouping.haar_enabled = parse_switch("haar", v)?,
            "compensate" => q.compensate = parse_switch("compensate", v)?,
            "norm" => {
                q.norm = match v {
                    "l1" => ScoreNorm::L1,
                    "l2" => ScoreNorm::L2,
                    _ => return Err(HbllmError::config("norm", format!("expected l1|l2, got `{v}`"))),
                }
            }
            "score_source" => {
                q.score_source = match v {
                    "saliency" => ScoreSource::Saliency,
                    "weight" => ScoreSource::Weight,
                    _ => {
                        return Err(HbllmError::config(
                            "score_source",
                            format!("expected saliency|weight, got `{v}`"),
                        ))
                    }
                }
            }
            "k_candidates" => {
                q.k_candidates = v
                    .split(',')
                    .map(|s| parse_num("k_candidates", s.trim()))
                    .collect::<Result<_>>()?
            }
            "lambda" => {
                q.damping = if v == "auto" {
                    Damping::Auto
                } else {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| HbllmError::config("lambda", format!("expected auto or a number, got `{v}`")))?;
                    Damping::Value(x)
                }
            }
            "seed" => self.seed = parse_num("seed", v)?,
            "report" => {
                self.report = match v {
                    "csv" => ReportFormat::Csv,
                    "jsonl" => ReportFormat::Jsonl,
                    _ => return Err(HbllmError::config("report", format!("expected csv|jsonl, got `{v}`"))),
                }
            }
            other => return Err(HbllmError::config("config", format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HbllmError::config("config", format!("line {}: expected `key = value`, got `{line}`", no + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    fn from_knobs(k: &Knobs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &k.config {
            let text = std::fs::read_to_string(path).map_err(|e| HbllmError::Io {
                context: format!("cannot read config {}", path.display()),
                source: e,
            })?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("mode", &k.mode),
            ("beta", &k.beta),
            ("candidates", &k.candidates),
            ("share_mean", &k.share_mean),
            ("norm", &k.norm),
            ("k_candidates", &k.k_candidates),
            ("lambda", &k.lambda),
            ("score_source", &k.score_source),
            ("haar", &k.haar),
            ("compensate", &k.compensate),
            ("seed", &k.seed),
            ("report", &k.report),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.quant.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Quantize { weights, calib, knobs } => {
            let out = required_out(&knobs)?;
            cmd_quantize(&weights, &calib, &out, &RunConfig::from_knobs(&knobs)?)
        }
        Command::Dequantize { hbq, out } => cmd_dequantize(&hbq, &out),
        Command::Inspect { hbq, diag, knobs } => {
            let cfg = RunConfig::from_knobs(&knobs)?;
            let mut stdout = io::stdout().lock();
            cmd_inspect(&hbq, diag.as_deref(), cfg.report, &mut stdout)
        }
        Command::Ab { weights, calib, knobs } => {
            let cfg = RunConfig::from_knobs(&knobs)?;
            let mut stdout = io::stdout().lock();
            cmd_ab(&weights, &calib, &cfg, &mut stdout)
        }
        Command::Gen { rows, cols, knobs } => {
            let out = required_out(&knobs)?;
            let cfg = RunConfig::from_knobs(&knobs)?;
            write_rts(&out, &gaussian_matrix(rows, cols, cfg.seed))
        }
    }
}

fn required_out(k: &Knobs) -> Result<PathBuf> {
    k.out.clone().ok_or_else(|| HbllmError::config("out", "--out is required"))
}

/// Seeded standard-normal matrix (ChaCha8).
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DenseMatrix::new(rows, cols, data).expect("length matches")
}

fn load_input(path: &Path, what: &str) -> Result<DenseMatrix> {
    if !path.exists() {
        return Err(HbllmError::Io {
            context: format!("{what} file not found: {}", path.display()),
            source: io::Error::from(io::ErrorKind::NotFound),
        });
    }
    read_rts(path)
}

/// `<out>.diag.json`
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".diag.json");
    PathBuf::from(s)
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

struct Evaluation {
    report: BitReport,
    weight_rel_error: f64,
    output_rel_error: f64,
}

fn evaluate(w: &DenseMatrix, x: &DenseMatrix, stats: &CalibStats, cfg: &QuantConfig) -> Result<(Evaluation, crate::pipeline::QuantizeOutcome)> {
    let mut target = w.clone();
    let outcome = quantize_with_stats(&mut target, stats, cfg)?;
    let recon = dequantize_layer(&outcome.layer)?;
    let weight_rel_error = relative(frobenius_error(w, &recon)?, w.frobenius_norm());
    let wx = matmul(w, x)?;
    let rx = matmul(&recon, x)?;
    let output_rel_error = relative(frobenius_error(&wx, &rx)?, wx.frobenius_norm());
    let eval = Evaluation {
        report: bit_report(&outcome.layer),
        weight_rel_error,
        output_rel_error,
    };
    Ok((eval, outcome))
}

fn load_pair(weights: &Path, calib: &Path, cfg: &QuantConfig) -> Result<(DenseMatrix, DenseMatrix, CalibStats)> {
    let w = load_input(weights, "weights")?;
    let x = load_input(calib, "calibration")?;
    cfg.validate_for(w.rows(), w.cols())?;
    if x.rows() != w.cols() {
        return Err(HbllmError::shape(format!(
            "calibration activations have {} features, weights have {} columns",
            x.rows(),
            w.cols()
        )));
    }
    let stats = CalibStats::build(&x, cfg.damping)?;
    Ok((w, x, stats))
}

fn cmd_quantize(weights: &Path, calib: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let (w, x, stats) = load_pair(weights, calib, &cfg.quant)?;
    let (eval, outcome) = evaluate(&w, &x, &stats, &cfg.quant)?;
    write_layer(out, &outcome.layer)?;
    let sidecar = sidecar_path(out);
    let json = serde_json::to_string_pretty(&outcome.diagnostics).expect("diagnostics serialize");
    std::fs::write(&sidecar, json).map_err(|e| HbllmError::Io {
        context: format!("cannot write {}", sidecar.display()),
        source: e,
    })?;
    println!(
        "shape={}x{} mode={} beta={} avg_bits={:.6} rel_error={:.6} output_rel_error={:.6} wall_ms={:.1}",
        w.rows(),
        w.cols(),
        cfg.quant.mode,
        cfg.quant.beta,
        eval.report.avg_bits_per_weight,
        eval.weight_rel_error,
        eval.output_rel_error,
        start.elapsed().as_secs_f64() * 1e3,
    );
    Ok(())
}

fn cmd_dequantize(hbq: &Path, out: &Path) -> Result<()> {
    let q = read_layer(hbq)?;
    write_rts(out, &dequantize_layer(&q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CiqStats {
    pub min: usize,
    pub median: usize,
    pub max: usize,
}

/// Min, lower median and max of per-row CIQ.
pub fn ciq_stats(m: &DenseMatrix) -> CiqStats {
    let mut v: Vec<usize> = (0..m.rows()).map(|r| compute_ciq(m.row(r), DEFAULT_CIQ_TOLERANCE)).collect();
    v.sort_unstable();
    if v.is_empty() {
        return CiqStats { min: 0, median: 0, max: 0 };
    }
    CiqStats {
        min: v[0],
        median: v[(v.len() - 1) / 2],
        max: v[v.len() - 1],
    }
}

#[derive(Serialize)]
struct LayerRecord {
    schema_version: u32,
    record: &'static str,
    n: usize,
    m: usize,
    beta: usize,
    mode: Mode,
    lambda: f32,
    blocks: usize,
    #[serde(flatten)]
    bits: BitReport,
    ciq: CiqStats,
}

#[derive(Serialize)]
struct BlockRecord {
    schema_version: u32,
    record: &'static str,
    block: usize,
    col_offset: usize,
    width: usize,
    k: usize,
    #[serde(flatten)]
    bits: BitReport,
    error: Option<f64>,
    ciq: CiqStats,
}

fn io_out(e: io::Error) -> HbllmError {
    HbllmError::Io {
        context: "cannot write report".into(),
        source: e,
    }
}

fn cmd_inspect(hbq: &Path, diag: Option<&Path>, format: ReportFormat, out: &mut dyn Write) -> Result<()> {
    let q = read_layer(hbq)?;
    let diag_path = diag.map(Path::to_path_buf).unwrap_or_else(|| sidecar_path(hbq));
    let diagnostics: Option<LayerDiagnostics> = match std::fs::read_to_string(&diag_path) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| {
            HbllmError::corrupt(format!("diagnostics sidecar {}: {e}", diag_path.display()))
        })?),
        Err(e) if diag.is_none() && e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => {
            return Err(HbllmError::Io {
                context: format!("cannot read {}", diag_path.display()),
                source: e,
            })
        }
    };
    let errors: Vec<Option<f64>> = match &diagnostics {
        Some(d) if d.blocks.len() == q.blocks.len() => d.blocks.iter().map(|b| Some(b.error)).collect(),
        Some(_) => return Err(HbllmError::corrupt("diagnostics sidecar does not match the layer's blocks")),
        None => vec![None; q.blocks.len()],
    };

    let recon = dequantize_layer(&q)?;
    let layer = LayerRecord {
        schema_version: REPORT_SCHEMA_VERSION,
        record: "layer",
        n: q.n,
        m: q.m,
        beta: q.beta,
        mode: q.mode,
        lambda: q.lambda,
        blocks: q.blocks.len(),
        bits: bit_report(&q),
        ciq: ciq_stats(&recon),
    };
    let blocks: Vec<BlockRecord> = q
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| BlockRecord {
            schema_version: REPORT_SCHEMA_VERSION,
            record: "block",
            block: i,
            col_offset: b.col_offset,
            width: b.width,
            k: b.mask.count(),
            bits: block_bit_report(b),
            error: errors[i],
            ciq: ciq_stats(&recon.column_block(b.col_offset, b.width)),
        })
        .collect();

    match format {
        ReportFormat::Jsonl => {
            writeln!(out, "{}", serde_json::to_string(&layer).expect("serialize")).map_err(io_out)?;
            for b in &blocks {
                writeln!(out, "{}", serde_json::to_string(b).expect("serialize")).map_err(io_out)?;
            }
        }
        ReportFormat::Csv => {
            let l = &layer;
            eprintln!(
                "layer n={} m={} mode={} beta={} sign_bits={} scalar_bits={} mask_bits={} index_bits={} container_overhead_bits={} total_bits={} avg_bits_per_weight={:.6} ciq_min={} ciq_median={} ciq_max={}",
                l.n, l.m, l.mode, l.beta, l.bits.counts.sign_bits, l.bits.counts.scalar_bits, l.bits.counts.mask_bits,
                l.bits.counts.index_bits, l.bits.counts.container_overhead_bits, l.bits.total_bits,
                l.bits.avg_bits_per_weight, l.ciq.min, l.ciq.median, l.ciq.max,
            );
            writeln!(
                out,
                "schema_version,block,col_offset,width,k,sign_bits,scalar_bits,mask_bits,index_bits,container_overhead_bits,total_bits,avg_bits_per_weight,error,ciq_min,ciq_median,ciq_max"
            )
            .map_err(io_out)?;
            for b in &blocks {
                let c = &b.bits.counts;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{},{},{}",
                    b.schema_version,
                    b.block,
                    b.col_offset,
                    b.width,
                    b.k,
                    c.sign_bits,
                    c.scalar_bits,
                    c.mask_bits,
                    c.index_bits,
                    c.container_overhead_bits,
                    b.bits.total_bits,
                    b.bits.avg_bits_per_weight,
                    b.error.map(|e| format!("{e:.9}")).unwrap_or_default(),
                    b.ciq.min,
                    b.ciq.median,
                    b.ciq.max,
                )
                .map_err(io_out)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AbRecord {
    schema_version: u32,
    variant: String,
    haar: bool,
    share_mean: bool,
    norm: ScoreNorm,
    candidates: usize,
    avg_bits_per_weight: f64,
    weight_rel_error: f64,
    output_rel_error: f64,
}

/// The configured run plus one single-switch variant per ablation.
pub fn ab_variants(base: &QuantConfig) -> Vec<(String, QuantConfig)> {
    let mut v = vec![("configured".to_string(), base.clone())];
    let mut c = base.clone();
    c.grouping.haar_enabled = false;
    v.push(("haar=off".into(), c));
    let mut c = base.clone();
    c.grouping.share_mean = false;
    v.push(("share_mean=off".into(), c));
    let mut c = base.clone();
    c.norm = ScoreNorm::L1;
    v.push(("norm=l1".into(), c));
    for n in [10, 20, 40, 80] {
        let mut c = base.clone();
        c.grouping.n_candidates = n;
        v.push((format!("candidates={n}"), c));
    }
    v
}

fn cmd_ab(weights: &Path, calib: &Path, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (w, x, stats) = load_pair(weights, calib, &cfg.quant)?;
    let mut rows = Vec::new();
    for (name, qc) in ab_variants(&cfg.quant) {
        let (eval, _) = evaluate(&w, &x, &stats, &qc)?;
        rows.push(AbRecord {
            schema_version: REPORT_SCHEMA_VERSION,
            variant: name,
            haar: qc.grouping.haar_enabled,
            share_mean: qc.grouping.share_mean,
            norm: qc.norm,
            candidates: qc.grouping.n_candidates,
            avg_bits_per_weight: eval.report.avg_bits_per_weight,
            weight_rel_error: eval.weight_rel_error,
            output_rel_error: eval.output_rel_error,
        });
    }
    match cfg.report {
        ReportFormat::Jsonl => {
            for r in &rows {
                writeln!(out, "{}", serde_json::to_string(r).expect("serialize")).map_err(io_out)?;
            }
        }
        ReportFormat::Csv => {
            writeln!(
                out,
                "schema_version,variant,haar,share_mean,norm,candidates,avg_bits_per_weight,weight_rel_error,output_rel_error"
            )
            .map_err(io_out)?;
            for r in &rows {
                let norm = match r.norm {
                    ScoreNorm::L1 => "l1",
                    ScoreNorm::L2 => "l2",
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{:.6},{:.9},{:.9}",
                    r.schema_version,
                    r.variant,
                    r.haar,
                    r.share_mean,
                    norm,
                    r.candidates,
                    r.avg_bits_per_weight,
                    r.weight_rel_error,
                    r.output_rel_error
                )
                .map_err(io_out)?;
            }
        }
    }
    Ok(())
}
