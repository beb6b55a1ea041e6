use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_flop_report, error_metrics, quantized_attention, reference_attention,
    select_topk_blocks, selected_block_count, sla_attention_counted, sla_attention_with,
    AttnInputs, MacCounter, QuantAttnConfig, SLAConfig, TopkSelector,
};
use crate::blockquant::{
    compression_ratio, dequantize_blockwise, quantize_blockwise, w8a8_matmul, BlockQuantConfig,
};
use crate::error::Result;
use crate::linalg::Mat;
use crate::merge::{
    extract_delta, max_scaled_ulp_error, max_ulp_distance, merge_deltas, quantize_manifest, ulp,
    WeightDelta,
};
use crate::model::{
    consistency_sample, make_schedule, two_expert_sample, Schedule, TwoExpertConfig,
    DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use crate::rng::gaussian_vec;
use crate::tensor_store::{ModelManifest, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Quant,
    Attention,
    Sampler,
    Merge,
    All,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Quant => "quant",
            Scope::Attention => "attention",
            Scope::Sampler => "sampler",
            Scope::Merge => "merge",
            Scope::All => "all",
        }
    }

    fn covers(self, s: Scope) -> bool {
        self == Scope::All || self == s
    }
}

/// Deliberate defects for checking that the suite notices them.
#[derive(Default)]
pub struct Faults {
    /// Replaces the block selector used by the sparse-attention checks.
    pub selector: Option<Box<TopkSelector>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub scope: Scope,
    pub name: String,
    pub measured: f64,
    /// Human-readable pass condition on `measured`.
    pub bound: String,
    pub passed: bool,
}

impl fmt::Display for InvariantResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} measured {:.6e}  bound {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub scope: Scope,
    pub results: Vec<InvariantResult>,
}

impl VerifySummary {
    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.results.len() - self.passed()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }
}

impl fmt::Display for VerifySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        write!(
            f,
            "{}: {} passed, {} failed, {} total",
            self.scope.name(),
            self.passed(),
            self.failed(),
            self.results.len()
        )
    }
}

enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Equals(f64),
}

impl Bound {
    fn check(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Equals(b) => v == b,
        }
    }

    fn describe(&self) -> String {
        match *self {
            Bound::AtMost(b) => format!("<= {b}"),
            Bound::AtLeast(b) => format!(">= {b}"),
            Bound::Equals(b) => format!("== {b}"),
        }
    }
}

type Check = fn(&Faults) -> Result<f64>;

struct Invariant {
    scope: Scope,
    name: &'static str,
    bound: Bound,
    check: Check,
}

const fn inv(scope: Scope, name: &'static str, bound: Bound, check: Check) -> Invariant {
    Invariant { scope, name, bound, check }
}

/// Every registered invariant, in execution order.
static REGISTRY: [Invariant; 18] = [
    inv(Scope::Quant, "quant.round_trip_half_scale", Bound::AtMost(1.0), quant_round_trip),
    inv(Scope::Quant, "quant.zero_and_127c_blocks_exact", Bound::Equals(0.0), quant_exact_blocks),
    inv(Scope::Quant, "quant.requantize_idempotent", Bound::Equals(0.0), quant_idempotent),
    inv(Scope::Quant, "quant.w8a8_vs_dequantized_gemm", Bound::AtMost(1e-3), quant_w8a8),
    inv(Scope::Quant, "quant.compression_vs_16bit", Bound::AtMost(0.001), quant_compression),
    inv(Scope::Attention, "attention.sla_topk1_equals_reference", Bound::AtMost(1e-5), attn_topk1),
    inv(Scope::Attention, "attention.topk_block_count", Bound::Equals(0.0), attn_topk_count),
    inv(Scope::Attention, "attention.sparse_macs_at_topk_0.1", Bound::Equals(0.1), attn_sparse_ratio),
    inv(Scope::Attention, "attention.flop_report_matches_counter", Bound::Equals(0.0), attn_flops),
    inv(Scope::Attention, "attention.quantized_cosine", Bound::AtLeast(0.98), attn_quant_cosine),
    inv(Scope::Sampler, "sampler.model_calls_equal_steps", Bound::Equals(0.0), sampler_calls),
    inv(Scope::Sampler, "sampler.constant_model_fixed_point", Bound::Equals(0.0), sampler_constant),
    inv(Scope::Sampler, "sampler.mid_boundary_switches_once", Bound::Equals(1.0), sampler_switch),
    inv(Scope::Sampler, "sampler.seeded_output_reproducible", Bound::Equals(0.0), sampler_repro),
    inv(Scope::Merge, "merge.extract_then_merge_reconstructs", Bound::AtMost(1.0), merge_reconstruct),
    inv(Scope::Merge, "merge.empty_list_identity", Bound::Equals(0.0), merge_empty),
    inv(Scope::Merge, "merge.delta_permutation", Bound::AtMost(2.0), merge_permutation),
    inv(Scope::Merge, "merge.quantize_commutes", Bound::Equals(0.0), merge_quantize),
];

/// `(scope, name)` of every invariant the suite runs.
pub fn invariant_inventory() -> Vec<(Scope, &'static str)> {
    REGISTRY.iter().map(|i| (i.scope, i.name)).collect()
}

pub fn run_verify_suite(scope: Scope) -> VerifySummary {
    run_verify_suite_with(scope, &Faults::default())
}

/// Runs the selected invariants; a check that errors counts as a failure with
/// a NaN measurement.
pub fn run_verify_suite_with(scope: Scope, faults: &Faults) -> VerifySummary {
    let results = REGISTRY
        .iter()
        .filter(|i| scope.covers(i.scope))
        .map(|i| {
            let measured = (i.check)(faults).unwrap_or(f64::NAN);
            InvariantResult {
                scope: i.scope,
                name: i.name.to_string(),
                measured,
                bound: i.bound.describe(),
                passed: i.bound.check(measured),
            }
        })
        .collect();
    VerifySummary { scope, results }
}

fn gauss(rows: usize, cols: usize, seed: u64) -> Mat {
    Mat::from_vec(rows, cols, gaussian_vec(rows * cols, seed)).unwrap()
}

fn quant_round_trip(_: &Faults) -> Result<f64> {
    let mut worst = 0f64;
    for seed in 0..8 {
        let m = gauss(256, 256, 100 + seed);
        let bq = quantize_blockwise(&m, BlockQuantConfig::default())?;
        let d = dequantize_blockwise(&bq);
        for i in 0..m.rows {
            for j in 0..m.cols {
                let x = m.get(i, j);
                let bound = bq.scale_at(i, j) / 2.0 + ulp(x);
                worst = worst.max(f64::from((x - d.get(i, j)).abs() / bound));
            }
        }
    }
    Ok(worst)
}

fn quant_exact_blocks(_: &Faults) -> Result<f64> {
    let mut bad = 0;
    for (k, c) in [0.0f32, 1.0, 0.37, 2.5e-3, 13.75].into_iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let m = Mat::from_vec(128, 128, vec![sign * 127.0 * c; 128 * 128])?;
        let d = dequantize_blockwise(&quantize_blockwise(&m, BlockQuantConfig::default())?);
        bad += d.data.iter().zip(&m.data).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    Ok(bad as f64)
}

fn quant_idempotent(_: &Faults) -> Result<f64> {
    let cfg = BlockQuantConfig::default();
    let q1 = quantize_blockwise(&gauss(200, 300, 7), cfg)?;
    let q2 = quantize_blockwise(&dequantize_blockwise(&q1), cfg)?;
    let diff = q1.q.iter().zip(&q2.q).filter(|(a, b)| a != b).count()
        + q1.scales.iter().zip(&q2.scales).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    Ok(diff as f64)
}

fn quant_w8a8(_: &Faults) -> Result<f64> {
    let cfg = BlockQuantConfig::default();
    let a = quantize_blockwise(&gauss(256, 256, 11), cfg)?;
    let b = quantize_blockwise(&gauss(256, 256, 12), cfg)?;
    let got = w8a8_matmul(&a, &b)?;
    let want = dequantize_blockwise(&a).matmul(&dequantize_blockwise(&b))?;
    Ok(got
        .data
        .iter()
        .zip(&want.data)
        .map(|(x, y)| f64::from((x - y).abs()))
        .fold(0.0, f64::max))
}

fn quant_compression(_: &Faults) -> Result<f64> {
    let mut worst = 0f64;
    for (r, c) in [(128, 128), (256, 384), (1024, 128)] {
        let bq = quantize_blockwise(&gauss(r, c, 3), BlockQuantConfig::default())?;
        worst = worst.max((compression_ratio(&bq, 2.0)? - 0.5).abs());
    }
    Ok(worst)
}

fn selector(f: &Faults) -> &TopkSelector {
    f.selector.as_deref().unwrap_or(&select_topk_blocks)
}

fn attn_topk1(f: &Faults) -> Result<f64> {
    let mut worst = 0f64;
    for (i, (h, s, d)) in [(2, 96, 16), (1, 200, 8), (3, 64, 32)].into_iter().enumerate() {
        let inp = AttnInputs::gaussian(h, s, d, 40 + i as u64);
        let cfg = SLAConfig {
            q_block: 32,
            kv_block: 32,
            topk_ratio: 1.0,
            quantized_sparse_branch: false,
            ..SLAConfig::default()
        };
        let got = sla_attention_with(&inp, &cfg, selector(f), None);
        let want = reference_attention(&inp);
        worst = worst.max(error_metrics(&got.data, &want.data)?.rel_l2);
    }
    Ok(worst)
}

fn attn_topk_count(f: &Faults) -> Result<f64> {
    let mut wrong = 0usize;
    for ratio in [0.1f32, 0.25, 0.5, 1.0] {
        let inp = AttnInputs::gaussian(2, 320, 16, 9);
        let cfg = SLAConfig {
            q_block: 32,
            kv_block: 32,
            topk_ratio: ratio,
            ..SLAConfig::default()
        };
        let qp = crate::attention::pool_block_means(&inp.q, 32);
        let kp = crate::attention::pool_block_means(&inp.k, 32);
        let mask = selector(f)(&qp, &kp, &cfg);
        let want = selected_block_count(ratio, mask.num_kv_blocks);
        for h in 0..mask.heads {
            for qb in 0..mask.num_q_blocks {
                wrong += usize::from(mask.selected(h, qb).len() != want);
            }
        }
    }
    Ok(wrong as f64)
}

fn attn_sparse_ratio(_: &Faults) -> Result<f64> {
    let inp = AttnInputs::gaussian(2, 640, 16, 5);
    let cfg = SLAConfig::default();
    let c = MacCounter::new();
    sla_attention_counted(&inp, &cfg, &c);
    let d = MacCounter::new();
    crate::attention::reference_attention_counted(&inp, Some(&d));
    Ok(c.snapshot().sparse as f64 / d.snapshot().dense as f64)
}

fn attn_flops(_: &Faults) -> Result<f64> {
    let mut mismatches = 0;
    for (s, d) in [(640, 16), (256, 32)] {
        let inp = AttnInputs::gaussian(2, s, d, 6);
        let cfg = SLAConfig::default();
        let c = MacCounter::new();
        sla_attention_counted(&inp, &cfg, &c);
        let m = c.snapshot();
        let r = attention_flop_report(s, d, 2, Some(&cfg));
        mismatches += usize::from(r.sparse != Some(2 * m.sparse));
        mismatches += usize::from(r.selection != Some(2 * m.selection));
    }
    Ok(mismatches as f64)
}

fn attn_quant_cosine(_: &Faults) -> Result<f64> {
    let mut worst = 1f64;
    for seed in 0..3 {
        let inp = AttnInputs::gaussian(4, 256, 64, 70 + seed);
        let q = quantized_attention(&inp, &QuantAttnConfig::default());
        worst = worst.min(error_metrics(&q.data, &reference_attention(&inp).data)?.cosine);
    }
    Ok(worst)
}

fn constant_model(c: f32) -> impl FnMut(&Mat, f32) -> Result<Mat> {
    move |x: &Mat, _| Mat::from_vec(x.rows, x.cols, vec![c; x.rows * x.cols])
}

fn schedule(n: usize) -> Result<Schedule> {
    make_schedule(n, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN)
}

fn sampler_calls(_: &Faults) -> Result<f64> {
    let mut off = 0usize;
    for n in [1, 3, 4, 100] {
        let mut calls = 0usize;
        let mut m = |x: &Mat, _: f32| {
            calls += 1;
            Ok(x.clone())
        };
        let s = consistency_sample(&mut m, &schedule(n)?, (4, 4), 1)?;
        off += s.model_calls.abs_diff(n) + calls.abs_diff(n);
    }
    Ok(off as f64)
}

fn sampler_constant(_: &Faults) -> Result<f64> {
    let s = consistency_sample(&mut constant_model(0.3), &schedule(4)?, (3, 3), 2)?;
    Ok(s.x.data.iter().filter(|&&v| v != 0.3).count() as f64)
}

fn sampler_switch(_: &Faults) -> Result<f64> {
    let sched = schedule(3)?;
    let sig = sched.sigmas();
    let mut hi = constant_model(1.0);
    let mut lo = constant_model(-1.0);
    let s = two_expert_sample::<dyn FnMut(&Mat, f32) -> Result<Mat>>(
        TwoExpertConfig {
            boundary_sigma: 0.5 * (sig[1] + sig[2]),
            high_noise_model: &mut hi,
            low_noise_model: &mut lo,
        },
        &sched,
        (2, 2),
        3,
    )?;
    if s.x.data.iter().any(|&v| v != -1.0) {
        return Ok(f64::NAN);
    }
    Ok(s.switch_count as f64)
}

fn sampler_repro(_: &Faults) -> Result<f64> {
    let mut m = |x: &Mat, sigma: f32| {
        let k = 1.0 / (1.0 + sigma * sigma);
        Mat::from_vec(x.rows, x.cols, x.data.iter().map(|v| v * k).collect())
    };
    let a = consistency_sample(&mut m, &schedule(4)?, (8, 8), 17)?;
    let b = consistency_sample(&mut m, &schedule(4)?, (8, 8), 17)?;
    Ok(a.x.data.iter().zip(&b.x.data).filter(|(x, y)| x.to_bits() != y.to_bits()).count() as f64)
}

fn random_manifest(seed: u64, scale: f32) -> Result<ModelManifest> {
    let mut m = ModelManifest::new("verify");
    for (i, dims) in [vec![64, 96], vec![33], vec![130, 140]].into_iter().enumerate() {
        let n = dims.iter().product();
        let v = gaussian_vec(n, seed.wrapping_mul(7919).wrapping_add(i as u64))
            .into_iter()
            .map(|x| x * scale)
            .collect();
        m.insert(format!("p{i}"), Tensor::from_f32(dims, v)?)?;
    }
    Ok(m)
}

fn merge_reconstruct(_: &Faults) -> Result<f64> {
    let mut worst = 0f64;
    for seed in 0..4 {
        let base = random_manifest(seed, 1.0)?;
        let ft = random_manifest(seed + 100, 1.5)?;
        let merged = merge_deltas(&base, &[extract_delta(&ft, &base)?])?;
        worst = worst.max(max_scaled_ulp_error(&merged, &ft, &[&base])?);
    }
    Ok(worst)
}

fn merge_empty(_: &Faults) -> Result<f64> {
    let base = random_manifest(5, 1.0)?;
    Ok(f64::from(max_ulp_distance(&merge_deltas(&base, &[])?, &base)?))
}

fn merge_permutation(_: &Faults) -> Result<f64> {
    let base = random_manifest(6, 1.0)?;
    let ms: Vec<ModelManifest> = (0..3).map(|i| random_manifest(60 + i, 0.1)).collect::<Result<_>>()?;
    let ds: Vec<WeightDelta> = ms.iter().map(WeightDelta::from_manifest).collect();
    let a = merge_deltas(&base, &ds)?;
    let b = merge_deltas(&base, &[ds[2].clone(), ds[0].clone(), ds[1].clone()])?;
    let mut refs = vec![&base];
    refs.extend(ms.iter());
    max_scaled_ulp_error(&a, &b, &refs)
}

fn merge_quantize(_: &Faults) -> Result<f64> {
    let base = random_manifest(8, 1.0)?;
    let dm = random_manifest(9, 0.1)?;
    let merged = merge_deltas(&base, &[WeightDelta::from_manifest(&dm)])?;
    let cfg = BlockQuantConfig::default();
    let q = quantize_manifest(&merged, cfg, &[])?;
    let mut bad = 0usize;
    for name in ["p0", "p2"] {
        let dims = base.params[name].dims();
        let sum: Vec<f32> = base.params[name]
            .as_f32()
            .unwrap()
            .iter()
            .zip(dm.params[name].as_f32().unwrap())
            .map(|(a, b)| a + b)
            .collect();
        let (codes, scales) = quantize_blockwise(&Mat::from_vec(dims[0], dims[1], sum)?, cfg)?.to_tensors();
        bad += usize::from(!q.params[&format!("{name}.q")].bit_eq(&codes));
        bad += usize::from(!q.params[&format!("{name}.scales")].bit_eq(&scales));
    }
    Ok(bad as f64)
}
