//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p hbllm --test acceptance`.

use std::time::{Duration, Instant};

use hbllm::format::{bit_report, decode_layer, encode_layer};
use hbllm::grouping::{
    binarize_group, candidate_thresholds, compute_ciq, plan_band_with_thresholds, quantize_lines, quantize_lines_split,
    DEFAULT_CIQ_TOLERANCE,
};
use hbllm::haar::{haar_forward_1d, haar_inverse_1d, haar_matrix, inverse_haar_matrix};
use hbllm::pipeline::{row_haarquant, QuantizeOutcome};
use hbllm::{
    dequantize_layer, frobenius_error, hbllm_quantize, matmul, Axis, DenseMatrix, GroupingConfig, HaarCoeffs, HbllmError,
    Mode, QuantConfig, SalientMask,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_vec(len: usize, r: &mut ChaCha8Rng) -> Vec<f32> {
    (0..len).map(|_| r.sample(StandardNormal)).collect()
}

fn gaussian(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::new(rows, cols, gaussian_vec(rows * cols, r)).unwrap()
}

fn quantize(w: &DenseMatrix, x: &DenseMatrix, cfg: &QuantConfig) -> QuantizeOutcome {
    let mut target = w.clone();
    hbllm_quantize(&mut target, x, cfg).unwrap()
}

fn output_error(w: &DenseMatrix, recon: &DenseMatrix, x: &DenseMatrix) -> f64 {
    frobenius_error(&matmul(w, x).unwrap(), &matmul(recon, x).unwrap()).unwrap()
}

/// 1. Haar perfect reconstruction and energy identity.
fn haar_exactness() -> Outcome {
    let mut r = rng(1);
    let (mut max_err, mut max_rel) = (0f64, 0f64);
    for _ in 0..1000 {
        let v = gaussian_vec(128, &mut r);
        let (l, h) = haar_forward_1d(&v).unwrap();
        let back = haar_inverse_1d(&l, &h).unwrap();
        for (a, b) in v.iter().zip(&back) {
            max_err = max_err.max(f64::from((a - b).abs()));
        }
        let sq = |s: &[f32]| s.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>();
        let energy = sq(&v);
        max_rel = max_rel.max((energy - 2.0 * (sq(&l) + sq(&h))).abs() / energy);
    }
    Outcome {
        pass: max_err <= 1e-6 && max_rel <= 1e-6,
        detail: format!("max |v - inv(fwd(v))| = {max_err:.2e} (<= 1e-6), energy rel err = {max_rel:.2e} (<= 1e-6)"),
    }
}

/// 2. Analytic alpha against a 1e-4 grid search.
fn binarizer_optimality() -> Outcome {
    let mut r = rng(2);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..500 {
        let size = r.gen_range(1..=12);
        let g: Vec<f32> = (0..size).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let mu = g.iter().map(|&v| f64::from(v)).sum::<f64>() / size as f64;
        let fit = binarize_group(&g, mu).unwrap();
        let dev: Vec<f64> = g.iter().map(|&v| (f64::from(v) - mu).abs()).collect();
        let top = dev.iter().cloned().fold(0.0, f64::max);
        let mut grid_best = f64::INFINITY;
        let mut a = 0.0;
        while a <= top + 1e-4 {
            let sse: f64 = dev.iter().map(|d| (d - a).powi(2)).sum();
            grid_best = grid_best.min(sse);
            a += 1e-4;
        }
        worst = worst.max(fit.sse - grid_best);
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max(analytic - grid) SSE = {worst:.2e} (<= 1e-6)"),
    }
}

/// Coefficient-domain SSE of a row's two Haar bands planned over `thresholds` per band.
fn nested_sse(low: &[f32], high: &[f32], counts: &[usize]) -> f64 {
    [low, high]
        .iter()
        .map(|band| {
            let union: Vec<f32> = counts.iter().flat_map(|&n| candidate_thresholds(band, n)).collect();
            plan_band_with_thresholds(band, &union, true).unwrap().sse
        })
        .sum()
}

fn row_error(row: &[f32], cfg: &GroupingConfig) -> f64 {
    let m = DenseMatrix::new(1, row.len(), row.to_vec()).unwrap();
    let recon = if cfg.haar_enabled {
        let c = haar_matrix(&m, Axis::Row).unwrap();
        let (_, rc) = quantize_lines(&c, cfg).unwrap();
        inverse_haar_matrix(&HaarCoeffs::new(rc, Axis::Row).unwrap())
    } else {
        quantize_lines_split(&m, Axis::Row, None, cfg).unwrap().1
    };
    frobenius_error(&m, &recon).unwrap().powi(2)
}

/// 3. Nested candidate sets never hurt; 4-group Haar beats 2-group plain on >= 90% of rows.
fn grouping_dominance() -> Outcome {
    let mut r = rng(3);
    let ladder = [10, 20, 40, 80];
    let mut monotone_violations = 0;
    let mut wins = 0;
    let rows = 200;
    let haar = GroupingConfig::default();
    let plain = GroupingConfig {
        haar_enabled: false,
        ..GroupingConfig::default()
    };
    for _ in 0..rows {
        let row = gaussian_vec(128, &mut r);
        let (low, high) = haar_forward_1d(&row).unwrap();
        let sses: Vec<f64> = (1..=ladder.len()).map(|i| nested_sse(&low, &high, &ladder[..i])).collect();
        if sses.windows(2).any(|w| w[1] > w[0]) {
            monotone_violations += 1;
        }
        if row_error(&row, &haar) <= row_error(&row, &plain) {
            wins += 1;
        }
    }
    let share = wins as f64 / rows as f64;
    Outcome {
        pass: monotone_violations == 0 && share >= 0.90,
        detail: format!(
            "nested 10->20->40->80 increases: {monotone_violations}/{rows} (== 0); \
             Haar 4-group <= plain 2-group on {wins}/{rows} = {:.1}% (>= 90%)",
            100.0 * share
        ),
    }
}

/// 4. Shared mean saves exactly 0.25 bits per weight.
fn shared_mean_delta() -> Outcome {
    let mut r = rng(4);
    let w = gaussian(32, 256, &mut r);
    let x = gaussian(256, 512, &mut r);
    let run = |share_mean| {
        let cfg = QuantConfig {
            mode: Mode::Row,
            beta: 128,
            grouping: GroupingConfig {
                share_mean,
                ..GroupingConfig::default()
            },
            k_candidates: vec![0],
            ..QuantConfig::default()
        };
        bit_report(&quantize(&w, &x, &cfg).layer)
    };
    let (on, off) = (run(true), run(false));
    let delta_bits = off.total_bits as i64 - on.total_bits as i64;
    let delta = off.avg_bits_per_weight - on.avg_bits_per_weight;
    Outcome {
        pass: delta == 0.25 && 4 * delta_bits == on.total_weights as i64,
        detail: format!(
            "avg bits on {:.6}, off {:.6}, delta {delta} (== 0.25 exactly)",
            on.avg_bits_per_weight, off.avg_bits_per_weight
        ),
    }
}

/// 5. Compensation lowers output error.
fn compensation_benefit() -> Outcome {
    let seeds = 200;
    let mut wins = 0;
    for seed in 0..seeds {
        let mut r = rng(5000 + seed);
        let w = gaussian(64, 64, &mut r);
        let x = gaussian(64, 256, &mut r);
        let run = |compensate| {
            let cfg = QuantConfig {
                beta: 16,
                compensate,
                ..QuantConfig::default()
            };
            let q = quantize(&w, &x, &cfg);
            output_error(&w, &dequantize_layer(&q.layer).unwrap(), &x)
        };
        if run(true) <= run(false) {
            wins += 1;
        }
    }
    let share = wins as f64 / seeds as f64;
    Outcome {
        pass: share >= 0.95,
        detail: format!("beta = 16: compensated <= uncompensated on {wins}/{seeds} = {:.1}% (>= 95%)", 100.0 * share),
    }
}

fn max_row_ciq(m: &DenseMatrix) -> usize {
    (0..m.rows()).map(|i| compute_ciq(m.row(i), DEFAULT_CIQ_TOLERANCE)).max().unwrap_or(0)
}

/// 6. CIQ bounds per block and per layer.
fn ciq_bounds() -> Outcome {
    let mut r = rng(6);
    let g = GroupingConfig::default();
    let mut block_max = 0;
    for _ in 0..50 {
        let w = gaussian(64, 128, &mut r);
        let bq = row_haarquant(&w, &SalientMask::empty(128), &g).unwrap();
        block_max = block_max.max(max_row_ciq(&bq.recon));
    }
    let w = gaussian(64, 4096, &mut r);
    let x = gaussian(4096, 256, &mut r);
    let cfg = QuantConfig {
        k_candidates: vec![0],
        ..QuantConfig::default()
    };
    let q = quantize(&w, &x, &cfg);
    let layer_max = max_row_ciq(&dequantize_layer(&q.layer).unwrap());
    Outcome {
        pass: block_max <= 32 && layer_max <= 1024 && q.layer.blocks.len() == 32,
        detail: format!("max block-row CIQ {block_max} (<= 32), max 64x4096 layer-row CIQ {layer_max} (<= 1024)"),
    }
}

/// 7. A matrix built from dequantization levels is a fixed point with X = I.
fn fixed_point() -> Outcome {
    let mut r = rng(7);
    let (n, m) = (8, 256);
    let levels = [0.25f32, 0.5, 0.75, 1.0, 1.5, 2.0];
    let mut w = DenseMatrix::zeros(n, m);
    for i in 0..n {
        for b in 0..m / 128 {
            let band = |r: &mut ChaCha8Rng| {
                let mu = levels[r.gen_range(0..levels.len())] * if r.gen() { 1.0 } else { -1.0 };
                let alpha = levels[r.gen_range(0..levels.len())];
                let mut signs: Vec<f32> = (0..64).map(|k| if k < 32 { 1.0 } else { -1.0 }).collect();
                signs.shuffle(r);
                signs.into_iter().map(|s| mu + s * alpha).collect::<Vec<f32>>()
            };
            let low = band(&mut r);
            let high = band(&mut r);
            let row = haar_inverse_1d(&low, &high).unwrap();
            for (k, v) in row.into_iter().enumerate() {
                w.set(i, b * 128 + k, v);
            }
        }
    }
    let q = quantize(&w, &DenseMatrix::identity(m), &QuantConfig::default());
    let err = frobenius_error(&w, &dequantize_layer(&q.layer).unwrap()).unwrap();
    Outcome {
        pass: err <= 1e-4,
        detail: format!("final Frobenius error {err:.2e} (<= 1e-4)"),
    }
}

/// 8. Encode/decode idempotence, corruption detection, size accounting.
fn format_integrity() -> Outcome {
    let mut r = rng(8);
    let (mut not_idempotent, mut undetected, mut flips, mut worst_size) = (0, 0, 0, 0f64);
    for i in 0..100 {
        let n = 2 * r.gen_range(2..=8);
        let beta = [8, 16, 32][r.gen_range(0..3)];
        let m = beta * r.gen_range(1..=3) + if r.gen_bool(0.3) { 4 } else { 0 };
        let cfg = QuantConfig {
            mode: if r.gen() { Mode::Row } else { Mode::Col },
            beta,
            grouping: GroupingConfig {
                n_candidates: r.gen_range(1..=80),
                share_mean: r.gen(),
                haar_enabled: r.gen_bool(0.8),
            },
            k_candidates: vec![0, 2, 4],
            compensate: r.gen(),
            ..QuantConfig::default()
        };
        let w = gaussian(n, m, &mut r);
        let x = gaussian(m, 2 * m, &mut r);
        let layer = quantize(&w, &x, &cfg).layer;
        let bytes = encode_layer(&layer).unwrap();
        let again = encode_layer(&decode_layer(&bytes).unwrap()).unwrap();
        if again != bytes {
            not_idempotent += 1;
        }
        let positions: Vec<usize> = if i < 5 {
            (0..bytes.len()).collect()
        } else {
            (0..20).map(|_| r.gen_range(0..bytes.len())).collect()
        };
        for p in positions {
            let mut bad = bytes.clone();
            bad[p] ^= r.gen_range(1..=255u8);
            flips += 1;
            if !matches!(decode_layer(&bad), Err(HbllmError::Checksum { .. })) {
                undetected += 1;
            }
        }
        let file_bits = (bytes.len() * 8) as f64;
        worst_size = worst_size.max((bit_report(&layer).total_bits as f64 - file_bits).abs() / file_bits);
    }
    Outcome {
        pass: not_idempotent == 0 && undetected == 0 && worst_size <= 0.01,
        detail: format!(
            "non-idempotent {not_idempotent}/100 (== 0), corruptions without CRC error {undetected}/{flips} (== 0), \
             max |report - file| / file = {worst_size:.2e} (<= 1%)"
        ),
    }
}

/// 9. Identical inputs give identical bytes.
fn determinism() -> Outcome {
    let mut r = rng(9);
    let w = gaussian(64, 256, &mut r);
    let x = gaussian(256, 512, &mut r);
    let cfg = QuantConfig::default();
    let a = encode_layer(&quantize(&w, &x, &cfg).layer).unwrap();
    let b = encode_layer(&quantize(&w, &x, &cfg).layer).unwrap();
    Outcome {
        pass: a == b,
        detail: format!("two runs: {} and {} bytes, identical = {}", a.len(), b.len(), a == b),
    }
}

/// 10. An injected outlier column is picked up by the salient search.
fn salient_efficacy() -> Outcome {
    let seeds = 100;
    let mut good = 0;
    for seed in 0..seeds {
        let mut r = rng(10_000 + seed);
        let mut w = gaussian(64, 128, &mut r);
        let col = r.gen_range(0..128);
        for i in 0..64 {
            w.set(i, col, 50.0 * w.get(i, col));
        }
        let x = gaussian(128, 256, &mut r);
        let q = quantize(&w, &x, &QuantConfig::default());
        let d = &q.diagnostics.blocks[0];
        let k0 = d.trials.iter().find(|t| t.0 == 0).unwrap().1;
        if d.k >= 2 && d.error <= k0 && d.salient_columns.contains(&col) {
            good += 1;
        }
    }
    let share = good as f64 / seeds as f64;
    Outcome {
        pass: share >= 0.95,
        detail: format!("K >= 2, outlier selected and error <= K=0 on {good}/{seeds} = {:.1}% (>= 95%)", 100.0 * share),
    }
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        ("1  haar exactness", haar_exactness, Duration::from_secs(1)),
        ("2  binarizer optimality", binarizer_optimality, Duration::from_secs(5)),
        ("3  grouping search dominance", grouping_dominance, Duration::from_secs(30)),
        ("4  shared-mean storage delta", shared_mean_delta, Duration::from_secs(1)),
        ("5  compensation benefit", compensation_benefit, Duration::from_secs(120)),
        ("6  CIQ bounds", ciq_bounds, Duration::from_secs(60)),
        ("7  end-to-end fixed point", fixed_point, Duration::from_secs(5)),
        ("8  format integrity", format_integrity, Duration::from_secs(30)),
        ("9  determinism", determinism, Duration::from_secs(10)),
        ("10 salient selection efficacy", salient_efficacy, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {}; runtime {:.2}s (< {}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
