//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use turbo_core::attention::{
    error_metrics, quantized_attention, reference_attention, reference_attention_counted,
    sla_attention, sla_attention_counted, AttnInputs, MacCounter, QuantAttnConfig, SLAConfig,
};
use turbo_core::bench::{speedup_ratio, LatencyReport, PUBLISHED_LATENCIES};
use turbo_core::blockquant::{
    compression_ratio, dequantize_blockwise, quantize_blockwise, w8a8_matmul, BlockQuantConfig,
};
use turbo_core::linalg::Mat;
use turbo_core::merge::{
    extract_delta, max_scaled_ulp_error, max_ulp_distance, merge_deltas, ulp, WeightDelta,
};
use turbo_core::model::{consistency_sample, make_schedule, two_expert_sample, TwoExpertConfig};
use turbo_core::rng::gaussian_vec;
use turbo_core::tensor_store::{read_tensor, ModelManifest, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within_time(o: Outcome, elapsed: Duration, limit_s: f64) -> Outcome {
    let t = elapsed.as_secs_f64();
    outcome(
        o.passed && t < limit_s,
        format!("{}; runtime {t:.2}s (limit {limit_s}s)", o.detail),
    )
}

fn gauss(r: usize, c: usize, seed: u64) -> Mat {
    Mat::from_vec(r, c, gaussian_vec(r * c, seed)).unwrap()
}

fn c1_published_speedups() -> Outcome {
    let start = Instant::now();
    let quoted = [
        (184.0, 1.9, 96.84),
        (4549.0, 38.0, 119.71),
        (4767.0, 24.0, 198.63),
        (1676.0, 9.9, 169.29),
        (4767.0, 72.6, 65.66),
        (1676.0, 26.3, 63.73),
        (184.0, 5.3, 34.72),
    ];
    let mut worst = 0f64;
    let mut used = 0;
    for p in PUBLISHED_LATENCIES {
        for fast in [Some(p.turbo_s), p.fastvideo_s].into_iter().flatten() {
            let (_, _, want) = quoted
                .iter()
                .find(|(o, f, _)| *o == p.original_s && *f == fast)
                .expect("fixture pair is quoted");
            let got = speedup_ratio(p.original_s, fast).unwrap();
            worst = worst.max((got / want - 1.0).abs());
            used += 1;
        }
    }
    within_time(
        outcome(used == quoted.len() && worst < 0.005, format!("{used} quotients, max relative deviation {worst:.2e} (< 5e-3)")),
        start.elapsed(),
        1.0,
    )
}

fn c3_round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = BlockQuantConfig::default();
    let mut worst = 0f64;
    let mut violations = 0usize;
    for seed in 0..100 {
        let m = gauss(256, 256, 3000 + seed);
        let bq = quantize_blockwise(&m, cfg).unwrap();
        let d = dequantize_blockwise(&bq);
        for i in 0..256 {
            for j in 0..256 {
                let x = m.get(i, j);
                let bound = bq.scale_at(i, j) / 2.0 + ulp(x);
                let err = (x - d.get(i, j)).abs();
                violations += usize::from(err > bound);
                worst = worst.max(f64::from(err / bound));
            }
        }
    }
    let mut inexact = 0usize;
    let mut blocks = 0usize;
    for seed in 0..50u64 {
        let c = gaussian_vec(1, 9000 + seed)[0];
        for v in [0.0f32, 127.0 * c] {
            let m = Mat::from_vec(128, 128, vec![v; 128 * 128]).unwrap();
            let d = dequantize_blockwise(&quantize_blockwise(&m, cfg).unwrap());
            inexact += d.data.iter().zip(&m.data).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
            blocks += 1;
        }
    }
    within_time(
        outcome(
            violations == 0 && inexact == 0,
            format!(
                "100 matrices, {violations} bound violations, max err/bound {worst:.6}; {blocks} zero/127c blocks, {inexact} inexact elements"
            ),
        ),
        start.elapsed(),
        5.0,
    )
}

fn c4_w8a8() -> Outcome {
    let start = Instant::now();
    let cfg = BlockQuantConfig::default();
    let mut worst = 0f32;
    for seed in 0..5 {
        let a = quantize_blockwise(&gauss(256, 256, 400 + 2 * seed), cfg).unwrap();
        let b = quantize_blockwise(&gauss(256, 256, 401 + 2 * seed), cfg).unwrap();
        let got = w8a8_matmul(&a, &b).unwrap();
        let want = dequantize_blockwise(&a).matmul(&dequantize_blockwise(&b)).unwrap();
        worst = got.data.iter().zip(&want.data).map(|(x, y)| (x - y).abs()).fold(worst, f32::max);
    }
    within_time(
        outcome(worst <= 1e-3, format!("5 Gaussian 256x256 pairs, max abs diff {worst:.3e} (<= 1e-3)")),
        start.elapsed(),
        5.0,
    )
}

fn c5_compression() -> Outcome {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (r, c) in [(128, 128), (256, 256), (128, 1024), (512, 384), (1024, 1024)] {
        let bq = quantize_blockwise(&gauss(r, c, 5), BlockQuantConfig::default()).unwrap();
        let ratio = compression_ratio(&bq, 2.0).unwrap();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    outcome(
        lo >= 0.499 && hi <= 0.501,
        format!("ratio vs 2-byte baseline in [{lo:.6}, {hi:.6}] over 5 shapes (need [0.499, 0.501])"),
    )
}

fn c6_sla_exact_limit() -> Outcome {
    let start = Instant::now();
    let mut worst = 0f64;
    for i in 0..20u64 {
        let g = gaussian_vec(4, 600 + i);
        let heads = 1 + (g[0].abs() * 2.0) as usize % 4;
        let seq = 16 + ((g[1].abs() * 97.0) as usize % 300);
        let dim = [8, 16, 32, 64][i as usize % 4];
        let block = [16, 32, 64][(g[2].abs() * 10.0) as usize % 3];
        let inp = AttnInputs::gaussian(heads, seq, dim, 700 + i);
        let cfg = SLAConfig {
            q_block: block,
            kv_block: block,
            topk_ratio: 1.0,
            quantized_sparse_branch: false,
            ..SLAConfig::default()
        };
        let got = sla_attention(&inp, &cfg);
        let want = reference_attention(&inp);
        worst = worst.max(error_metrics(&got.data, &want.data).unwrap().rel_l2);
    }
    within_time(
        outcome(worst <= 1e-5, format!("20 random shapes, max rel-L2 {worst:.3e} (<= 1e-5)")),
        start.elapsed(),
        30.0,
    )
}

fn c7_quantized_attention() -> Outcome {
    let mut min = f64::INFINITY;
    for seed in 0..10 {
        let inp = AttnInputs::gaussian(4, 256, 64, 800 + seed);
        let q = quantized_attention(&inp, &QuantAttnConfig::default());
        min = min.min(error_metrics(&q.data, &reference_attention(&inp).data).unwrap().cosine);
    }
    outcome(min >= 0.98, format!("h=4 s=256 d=64 over 10 seeds, min cosine {min:.6} (>= 0.98)"))
}

fn c8_sparsity_accounting() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (heads, seq, dim) in [(2, 640, 16), (1, 1280, 32), (4, 1920, 8)] {
        let inp = AttnInputs::gaussian(heads, seq, dim, 11);
        let cfg = SLAConfig::default();
        let sparse = MacCounter::new();
        sla_attention_counted(&inp, &cfg, &sparse);
        let dense = MacCounter::new();
        reference_attention_counted(&inp, Some(&dense));
        let (s, d) = (sparse.snapshot().sparse, dense.snapshot().dense);
        ok &= s * 10 == d;
        details.push(format!("s={seq}: {s}/{d}"));
    }
    outcome(ok, format!("topk 0.1 sparse MACs x10 == dense MACs exactly ({})", details.join(", ")))
}

fn c9_step_contract() -> Outcome {
    let mut ok = true;
    let mut seen = Vec::new();
    for n in [1usize, 3, 4, 100] {
        let mut calls = 0;
        let mut m = |x: &Mat, _: f32| {
            calls += 1;
            Ok(x.clone())
        };
        let s = consistency_sample(&mut m, &make_schedule(n, 80.0, 0.5).unwrap(), (4, 8), 2).unwrap();
        ok &= calls == n && s.model_calls == n;
        seen.push(format!("{n}->{calls}"));
    }
    let sched = make_schedule(3, 80.0, 0.5).unwrap();
    let sig = sched.sigmas().to_vec();
    let konst = |c: f32| move |x: &Mat, _: f32| Mat::from_vec(x.rows, x.cols, vec![c; x.rows * x.cols]);
    let (mut hi, mut lo) = (konst(1.0), konst(2.0));
    let s = two_expert_sample::<dyn FnMut(&Mat, f32) -> turbo_core::Result<Mat>>(
        TwoExpertConfig {
            boundary_sigma: 0.5 * (sig[1] + sig[2]),
            high_noise_model: &mut hi,
            low_noise_model: &mut lo,
        },
        &sched,
        (4, 8),
        2,
    )
    .unwrap();
    ok &= s.switch_count == 1 && s.x.data.iter().all(|&v| v == 2.0);
    outcome(ok, format!("calls {}; mid-boundary switch_count {}", seen.join(" "), s.switch_count))
}

fn random_manifest(seed: u64, scale: f32) -> ModelManifest {
    let mut m = ModelManifest::new("acc");
    for (i, dims) in [vec![128, 256], vec![256], vec![3, 40, 17], vec![129, 65]].into_iter().enumerate() {
        let n = dims.iter().product();
        let v = gaussian_vec(n, seed * 1000 + i as u64).into_iter().map(|x| x * scale).collect();
        m.insert(format!("layer.{i}"), Tensor::from_f32(dims, v).unwrap()).unwrap();
    }
    m
}

fn c11_merge_algebra() -> Outcome {
    let (mut recon, mut recon_raw, mut perm, mut empty) = (0f64, 0u32, 0f64, 0u32);
    for seed in 0..10u64 {
        let base = random_manifest(seed, 1.0);
        let ft = random_manifest(seed + 50, 1.0 + seed as f32 * 0.3);
        let merged = merge_deltas(&base, &[extract_delta(&ft, &base).unwrap()]).unwrap();
        recon = recon.max(max_scaled_ulp_error(&merged, &ft, &[&base]).unwrap());
        recon_raw = recon_raw.max(max_ulp_distance(&merged, &ft).unwrap());
        empty = empty.max(max_ulp_distance(&merge_deltas(&base, &[]).unwrap(), &base).unwrap());

        let ms: Vec<_> = (0..3).map(|k| random_manifest(seed * 10 + 200 + k, 0.05)).collect();
        let ds: Vec<_> = ms.iter().map(WeightDelta::from_manifest).collect();
        let a = merge_deltas(&base, &ds).unwrap();
        let mut refs = vec![&base];
        refs.extend(ms.iter());
        for order in [[1, 0, 2], [2, 1, 0], [0, 2, 1]] {
            let b = merge_deltas(&base, &order.map(|k| ds[k].clone())).unwrap();
            perm = perm.max(max_scaled_ulp_error(&a, &b, &refs).unwrap());
        }
    }
    outcome(
        recon <= 1.0 && empty == 0 && perm <= 2.0,
        format!(
            "reconstruction {recon:.3} ULP at operand scale (raw ULP distance {recon_raw}); empty-list ULP {empty}; permutations {perm:.3} ULP"
        ),
    )
}

struct E2eRun {
    report: LatencyReport,
    wall: Duration,
    baseline: Vec<u32>,
    fast: Vec<u32>,
}

fn run_e2e(threads: usize, dir: &Path) -> Result<E2eRun, String> {
    let out = dir.join(format!("report_{threads}.json"));
    let samples = dir.join(format!("samples_{threads}"));
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_turbobench"))
        .args(["bench", "e2e", "--seed", "17", "--out"])
        .arg(&out)
        .arg("--save-sample")
        .arg(&samples)
        .env("TURBOBENCH_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    let wall = start.elapsed();
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let report = LatencyReport::from_json(&std::fs::read_to_string(&out).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let bits = |name: &str| -> Result<Vec<u32>, String> {
        let t = read_tensor(samples.join(name)).map_err(|e| e.to_string())?;
        Ok(t.as_f32().unwrap().iter().map(|v| v.to_bits()).collect())
    };
    Ok(E2eRun {
        report,
        wall,
        baseline: bits("baseline.tbt")?,
        fast: bits("fast.tbt")?,
    })
}

fn c10_e2e_speedup(run: &Result<E2eRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("benchmark failed: {e}")),
    };
    let r = &run.report;
    let c = &r.config;
    let shape_ok = (c.seq, c.model_dim, c.heads, c.num_layers, c.steps_baseline, c.steps_fast) == (1024, 256, 4, 2, 100, 3)
        && c.topk_ratio == 0.1
        && c.quantize_linear
        && c.quantize_attention;
    let attn_b = r.baseline.stages.attention / r.baseline.steps as f64;
    let attn_f = r.fast.stages.attention / r.fast.steps as f64;
    let wall = run.wall.as_secs_f64();
    outcome(
        shape_ok && r.speedup >= 30.0 && r.speedup >= 0.8 * r.step_ratio && attn_f < attn_b && wall < 180.0,
        format!(
            "speedup {:.2}x (>= 30 and >= 0.8 x {:.2} = {:.2}); per-step attention {:.4}s vs dense {:.4}s; benchmark runtime {wall:.1}s (< 180s)",
            r.speedup,
            r.step_ratio,
            0.8 * r.step_ratio,
            attn_f,
            attn_b
        ),
    )
}

fn c12_determinism(a: &Result<E2eRun, String>, b: &Result<E2eRun, String>) -> Outcome {
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let same_hash = a.report.hash == b.report.hash;
            let same_out = a.baseline == b.baseline && a.fast == b.fast;
            outcome(
                same_hash && same_out,
                format!(
                    "threads {} vs {}: hashes {} / {}; sampled outputs bit-identical: {same_out}",
                    a.report.threads,
                    b.report.threads,
                    &a.report.hash[..16],
                    &b.report.hash[..16]
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("benchmark failed: {e}")),
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a filter
    // argument that matches nothing here skips the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "published latency quotients", c1_published_speedups()),
        (3, "quantization round-trip", c3_round_trip()),
        (4, "W8A8 exactness", c4_w8a8()),
        (5, "compression ratio", c5_compression()),
        (6, "SLA exactness at topk 1", c6_sla_exact_limit()),
        (7, "quantized attention fidelity", c7_quantized_attention()),
        (8, "sparsity accounting", c8_sparsity_accounting()),
        (9, "step-count contract", c9_step_contract()),
        (11, "merge algebra", c11_merge_algebra()),
    ];
    let one = run_e2e(1, dir.path());
    let four = run_e2e(4, dir.path());
    results.push((10, "end-to-end desk-scale speedup", c10_e2e_speedup(&one)));
    results.push((12, "determinism across thread counts", c12_determinism(&one, &four)));
    let others_pass = results.iter().all(|(_, _, o)| o.passed);
    results.push((
        2,
        "GPU headline substituted by property suite",
        outcome(others_pass, "desk-scale substitute: criteria 1 and 3-12 must all pass"),
    ));
    results.sort_by_key(|(n, _, _)| *n);

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} criterion {n:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
