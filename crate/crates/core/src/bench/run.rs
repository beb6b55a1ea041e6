use std::time::{Duration, Instant};

use super::config::{AttnPlan, BenchConfig, BenchKind};
use super::report::{LatencyReport, RunSummary, StageTimes};
use crate::attention::{
    attention_flop_report, error_metrics, quantized_attention, reference_attention, sla_attention,
    AttnInputs, HeadArray, QuantAttnConfig,
};
use crate::blockquant::{quantize_blockwise, quantized_linear_forward, BlockQuantConfig};
use crate::error::Result;
use crate::linalg::Mat;
use crate::model::{
    consistency_sample, layernorm, layernorm_unfused, make_schedule, rmsnorm, rmsnorm_unfused,
    two_expert_sample, BlockOptions, Sample, StageClock, ToyModel, TwoExpertConfig,
    DEFAULT_EPS, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use crate::rng::gaussian_vec;

/// One warm-up run, then `repeats` timed runs; returns the output and stage
/// times of the run with the median total.
fn median_run<T>(repeats: usize, mut f: impl FnMut() -> Result<(T, StageTimes)>) -> Result<(T, StageTimes)> {
    f()?;
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        runs.push(f()?);
    }
    runs.sort_by(|a, b| a.1.total().total_cmp(&b.1.total()));
    Ok(runs.swap_remove(repeats / 2))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Activations `[seq, model_dim]` and a `[model_dim, model_dim]` weight with
/// N(0, 1/model_dim) entries.
pub fn linear_bench_inputs(cfg: &BenchConfig) -> (Mat, Mat) {
    let (s, d) = (cfg.seq, cfg.model_dim);
    let x = Mat::from_vec(s, d, gaussian_vec(s * d, cfg.seed)).unwrap();
    let std = 1.0 / (d as f32).sqrt();
    let w = gaussian_vec(d * d, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)
        .into_iter()
        .map(|v| v * std)
        .collect();
    (x, Mat::from_vec(d, d, w).unwrap())
}

/// Activations `[seq, model_dim]`, gain and offset vectors.
pub fn norm_bench_inputs(cfg: &BenchConfig) -> (Mat, Vec<f32>, Vec<f32>) {
    let (s, d) = (cfg.seq, cfg.model_dim);
    let x = Mat::from_vec(s, d, gaussian_vec(s * d, cfg.seed)).unwrap();
    let gain = gaussian_vec(d, cfg.seed.wrapping_add(1)).into_iter().map(|v| 1.0 + 0.1 * v).collect();
    let offset = gaussian_vec(d, cfg.seed.wrapping_add(2)).into_iter().map(|v| 0.1 * v).collect();
    (x, gain, offset)
}

fn timed<T>(stage: impl Fn(&mut StageTimes) -> &mut f64, f: impl FnOnce() -> Result<T>) -> Result<(T, StageTimes)> {
    let t = Instant::now();
    let out = f()?;
    let mut st = StageTimes::default();
    *stage(&mut st) = secs(t.elapsed());
    Ok((out, st))
}

fn fast_attention(inp: &AttnInputs, plan: AttnPlan) -> HeadArray {
    match plan {
        AttnPlan::Dense => reference_attention(inp),
        AttnPlan::Quantized => quantized_attention(inp, &QuantAttnConfig::default()),
        AttnPlan::Sla(sla) => sla_attention(inp, &sla),
    }
}

/// Times one primitive dense (F32) against its accelerated variant.
///
/// Attention compares the reference kernel with the configured sparse and/or
/// quantized kernel; linear compares an F32 GEMM with W8A8 (weight quantized
/// ahead of time, activation quantization timed); norms compare unfused
/// elementwise RMSNorm + LayerNorm with the fused row kernels.
pub fn run_component_bench(cfg: &BenchConfig, kind: BenchKind) -> Result<LatencyReport> {
    cfg.validate()?;
    let threads = rayon::current_num_threads();
    let n = cfg.repeats;
    let (base, fast, flops, errors) = match kind {
        BenchKind::Attention => {
            let inp = AttnInputs::gaussian(cfg.heads, cfg.seq, cfg.head_dim, cfg.seed);
            let plan = cfg.attn_plan();
            let (b, bt) = median_run(n, || timed(|s| &mut s.attention, || Ok(reference_attention(&inp))))?;
            let (f, ft) = median_run(n, || timed(|s| &mut s.attention, || Ok(fast_attention(&inp, plan))))?;
            let sla = match plan {
                AttnPlan::Sla(s) => Some(s),
                _ => None,
            };
            let flops = attention_flop_report(cfg.seq, cfg.head_dim, cfg.heads, sla.as_ref());
            let err = error_metrics(&f.data, &b.data)?;
            ((b.data, bt), (f.data, ft), Some(flops), Some(err))
        }
        BenchKind::Linear => {
            let (x, w) = linear_bench_inputs(cfg);
            let (b, bt) = median_run(n, || timed(|s| &mut s.linear, || x.matmul(&w)))?;
            let (f, ft) = if cfg.quantize_linear {
                let wq = quantize_blockwise(&w, BlockQuantConfig::default())?;
                median_run(n, || timed(|s| &mut s.linear, || quantized_linear_forward(&x, &wq, None)))?
            } else {
                median_run(n, || timed(|s| &mut s.linear, || x.matmul(&w)))?
            };
            let err = error_metrics(&f.data, &b.data)?;
            ((b.data, bt), (f.data, ft), None, Some(err))
        }
        BenchKind::Norms => {
            let (x, g, o) = norm_bench_inputs(cfg);
            let both = |fused: bool| -> Result<Vec<f32>> {
                let (a, b) = if fused {
                    (rmsnorm(&x, &g, DEFAULT_EPS), layernorm(&x, &g, &o, DEFAULT_EPS))
                } else {
                    (rmsnorm_unfused(&x, &g, DEFAULT_EPS), layernorm_unfused(&x, &g, &o, DEFAULT_EPS))
                };
                Ok([a.data, b.data].concat())
            };
            let (b, bt) = median_run(n, || timed(|s| &mut s.norms, || both(false)))?;
            let (f, ft) = median_run(n, || timed(|s| &mut s.norms, || both(true)))?;
            let err = error_metrics(&f, &b)?;
            ((b, bt), (f, ft), None, Some(err))
        }
        BenchKind::E2e => return run_e2e_bench(cfg),
    };
    LatencyReport::assemble(
        kind,
        cfg,
        threads,
        RunSummary::new("baseline", base.1, 1, 1, 0, n, &base.0),
        RunSummary::new("fast", fast.1, 1, 1, 0, n, &fast.0),
        flops,
        errors,
    )
}

struct Experts {
    high: ToyModel,
    low: Option<ToyModel>,
}

impl Experts {
    fn new(cfg: &BenchConfig) -> Result<Self> {
        let tc = cfg.toy_config()?;
        Ok(Experts {
            high: ToyModel::random(tc, cfg.seed),
            low: cfg
                .two_expert
                .then(|| ToyModel::random(tc, cfg.seed.wrapping_add(1))),
        })
    }

    fn quantized(&self) -> Result<Self> {
        let q = BlockQuantConfig::default();
        Ok(Experts {
            high: self.high.quantized(q)?,
            low: self.low.as_ref().map(|m| m.quantized(q)).transpose()?,
        })
    }
}

fn sample_once(cfg: &BenchConfig, experts: &Experts, steps: usize, opts: &BlockOptions) -> Result<(Sample, StageTimes)> {
    let sched = make_schedule(steps, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN)?;
    let shape = (cfg.seq, cfg.model_dim);
    let mut clock = StageClock::default();
    let start = Instant::now();
    let sample = match &experts.low {
        None => {
            let mut f = |x: &Mat, sigma: f32| experts.high.forward(x, sigma, opts, &mut clock);
            consistency_sample(&mut f, &sched, shape, cfg.seed)?
        }
        Some(low) => {
            // Both experts share one clock; only one runs at a time.
            let clock = std::cell::RefCell::new(&mut clock);
            let mut hi = |x: &Mat, sigma: f32| experts.high.forward(x, sigma, opts, &mut clock.borrow_mut());
            let mut lo = |x: &Mat, sigma: f32| low.forward(x, sigma, opts, &mut clock.borrow_mut());
            two_expert_sample::<dyn FnMut(&Mat, f32) -> Result<Mat>>(
                TwoExpertConfig {
                    boundary_sigma: cfg.boundary(),
                    high_noise_model: &mut hi,
                    low_noise_model: &mut lo,
                },
                &sched,
                shape,
                cfg.seed,
            )?
        }
    };
    let wall = secs(start.elapsed());
    let modeled = secs(clock.total());
    let stages = StageTimes {
        attention: secs(clock.attention),
        linear: secs(clock.linear),
        norms: secs(clock.norms),
        sampler_overhead: (wall - modeled).max(0.0),
        expert_switch: sample.switch_count as f64 * f64::from(cfg.switch_latency_s),
        other: secs(clock.other),
    };
    Ok((sample, stages))
}

/// Dense F32 sampling with `steps_baseline` steps against `steps_fast` steps
/// with the configured attention acceleration and W8A8 linears.
///
/// The accelerated configuration reports the median of `repeats` timed runs
/// after a warm-up; the baseline, whose single run already spans
/// `steps_baseline` model calls, is timed once. Switch latency is charged
/// (`switch_count * switch_latency_s`), not slept.
pub fn run_e2e_bench(cfg: &BenchConfig) -> Result<LatencyReport> {
    Ok(run_e2e_bench_with_samples(cfg)?.0)
}

/// [`run_e2e_bench`] that also returns the baseline and accelerated samples.
pub fn run_e2e_bench_with_samples(cfg: &BenchConfig) -> Result<(LatencyReport, Mat, Mat)> {
    cfg.validate()?;
    let threads = rayon::current_num_threads();
    let dense = Experts::new(cfg)?;
    let fast_models = if cfg.quantize_linear { dense.quantized()? } else { Experts::new(cfg)? };
    let fast_opts = cfg.fast_block_options();
    let dense_opts = BlockOptions::default();

    let (fast, fast_t) = median_run(cfg.repeats, || sample_once(cfg, &fast_models, cfg.steps_fast, &fast_opts))?;
    let (base, base_t) = sample_once(cfg, &dense, cfg.steps_baseline, &dense_opts)?;

    // Fidelity of one accelerated model call against the dense call on the
    // same noisy input.
    let x = Mat::from_vec(cfg.seq, cfg.model_dim, gaussian_vec(cfg.seq * cfg.model_dim, cfg.seed ^ 0x5eed))?;
    let sigma = 1.0;
    let mut clock = StageClock::default();
    let d = dense.high.forward(&x, sigma, &dense_opts, &mut clock)?;
    let f = fast_models.high.forward(&x, sigma, &fast_opts, &mut clock)?;
    let errors = error_metrics(&f.data, &d.data)?;

    let flops = match cfg.attn_plan() {
        AttnPlan::Sla(s) => attention_flop_report(cfg.seq, cfg.head_dim, cfg.heads, Some(&s)),
        _ => attention_flop_report(cfg.seq, cfg.head_dim, cfg.heads, None),
    };
    let report = LatencyReport::assemble(
        BenchKind::E2e,
        cfg,
        threads,
        RunSummary::new("baseline", base_t, cfg.steps_baseline, base.model_calls, base.switch_count, 1, &base.x.data),
        RunSummary::new("fast", fast_t, cfg.steps_fast, fast.model_calls, fast.switch_count, cfg.repeats, &fast.x.data),
        Some(flops),
        Some(errors),
    )?;
    Ok((report, base.x, fast.x))
}
