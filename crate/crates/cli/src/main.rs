use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use turbo_core::bench::{
    configure_threads, emit_report, run_component_bench, run_e2e_bench_with_samples, run_verify_suite,
    BenchConfig, BenchKind, LatencyReport, ReportFormat, Scope, STAGES,
};
use turbo_core::blockquant::BlockQuantConfig;
use turbo_core::merge::{extract_delta, merge_deltas_weighted, quantize_manifest, WeightDelta};
use turbo_core::tensor_store::{load_manifest, save_manifest, write_tensor};
use turbo_core::Error;

#[derive(Parser)]
#[command(name = "turbobench", version, about = "Quantize, merge, benchmark and verify toy diffusion models")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block-quantize every rank-2 F32 parameter of a manifest to INT8.
    Quantize {
        manifest: PathBuf,
        #[arg(long, default_value_t = 128)]
        block: usize,
        #[arg(long)]
        out: PathBuf,
        /// Parameters to keep in F32.
        #[arg(long)]
        exclude: Vec<String>,
    },
    /// Add one or more delta manifests onto a base manifest.
    Merge {
        base: PathBuf,
        #[arg(required = true)]
        deltas: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-delta coefficients (default 1 each).
        #[arg(long = "coef", num_args = 1..)]
        coefficients: Option<Vec<f32>>,
    },
    /// Write `finetuned - base` as a delta manifest.
    Delta {
        finetuned: PathBuf,
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time a primitive or end-to-end sampling, dense against accelerated.
    Bench {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        opts: BenchOpts,
    },
    /// Run the invariant suite.
    Verify {
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
    },
    /// Render a saved JSON report.
    Report {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Svg)]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Attn,
    Linear,
    Norms,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Quant,
    Attention,
    Sampler,
    Merge,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Svg,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Svg => ReportFormat::Svg,
        }
    }
}

#[derive(Args)]
struct BenchOpts {
    #[arg(long)]
    seq: Option<usize>,
    /// Model width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    steps_baseline: Option<usize>,
    #[arg(long)]
    steps_fast: Option<usize>,
    #[arg(long)]
    topk: Option<f32>,
    #[arg(long)]
    no_quant_linear: bool,
    #[arg(long)]
    no_quant_attn: bool,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds charged per expert switch.
    #[arg(long)]
    switch_latency: Option<f32>,
    /// Sample with separate high- and low-noise experts.
    #[arg(long)]
    two_expert: bool,
    #[arg(long)]
    boundary_sigma: Option<f32>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Directory for the baseline and accelerated samples (e2e only).
    #[arg(long)]
    save_sample: Option<PathBuf>,
}

impl BenchOpts {
    fn config(&self) -> anyhow::Result<BenchConfig> {
        let d = BenchConfig::default();
        let model_dim = self.dim.unwrap_or(d.model_dim);
        let heads = self.heads.unwrap_or(d.heads);
        if heads == 0 || model_dim % heads != 0 {
            bail!(Error::InvalidConfig(format!("--dim {model_dim} is not divisible by --heads {heads}")));
        }
        let cfg = BenchConfig {
            seq: self.seq.unwrap_or(d.seq),
            model_dim,
            heads,
            head_dim: model_dim / heads,
            num_layers: self.layers.unwrap_or(d.num_layers),
            steps_baseline: self.steps_baseline.unwrap_or(d.steps_baseline),
            steps_fast: self.steps_fast.unwrap_or(d.steps_fast),
            topk_ratio: self.topk.unwrap_or(d.topk_ratio),
            quantize_linear: !self.no_quant_linear,
            quantize_attention: !self.no_quant_attn,
            repeats: self.repeats.unwrap_or(d.repeats),
            seed: self.seed.unwrap_or(d.seed),
            switch_latency_s: self.switch_latency.unwrap_or(d.switch_latency_s),
            two_expert: self.two_expert,
            boundary_sigma: self.boundary_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(r: &LatencyReport) {
    println!("bench {} (threads {})", r.kind.name(), r.threads);
    println!("{:<18}{:>14}{:>14}", "stage", "baseline_s", "fast_s");
    let (b, f) = (r.baseline.stages.values(), r.fast.stages.values());
    for (i, name) in STAGES.iter().enumerate() {
        println!("{name:<18}{:>14.6}{:>14.6}", b[i], f[i]);
    }
    println!("{:<18}{:>14.6}{:>14.6}", "total", r.baseline.total_s, r.fast.total_s);
    println!("steps             {:>14}{:>14}", r.baseline.steps, r.fast.steps);
    println!("model calls       {:>14}{:>14}", r.baseline.model_calls, r.fast.model_calls);
    println!("speedup {:.3}  step ratio {:.3}  per-step ratio {:.3}", r.speedup, r.step_ratio, r.per_step_ratio);
    if let Some(e) = r.errors {
        println!("accuracy cosine {:.6}  rel_l2 {:.6}", e.cosine, e.rel_l2);
    }
    if let Some(fl) = &r.flops {
        println!("attention flops dense {}  accelerated {}", fl.dense, fl.accelerated_total());
    }
    println!("baseline output {}", r.baseline.output_digest);
    println!("fast output {}", r.fast.output_digest);
    println!("hash {}", r.hash);
}

fn write_outputs(r: &LatencyReport, opts: &BenchOpts) -> anyhow::Result<()> {
    for (path, format) in [
        (&opts.out, ReportFormat::Json),
        (&opts.csv, ReportFormat::Csv),
        (&opts.svg, ReportFormat::Svg),
    ] {
        if let Some(p) = path {
            emit_report(r, format, p)?;
        }
    }
    Ok(())
}

fn bench(target: Target, opts: &BenchOpts) -> anyhow::Result<()> {
    let cfg = opts.config()?;
    let report = match target {
        Target::E2e => {
            let (r, base, fast) = run_e2e_bench_with_samples(&cfg)?;
            if let Some(dir) = &opts.save_sample {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                write_tensor(&base.to_tensor(), dir.join("baseline.tbt"))?;
                write_tensor(&fast.to_tensor(), dir.join("fast.tbt"))?;
            }
            r
        }
        other => {
            if opts.save_sample.is_some() {
                bail!(Error::InvalidConfig("--save-sample applies to e2e only".into()));
            }
            let kind = match other {
                Target::Attn => BenchKind::Attention,
                Target::Linear => BenchKind::Linear,
                _ => BenchKind::Norms,
            };
            run_component_bench(&cfg, kind)?
        }
    };
    print_report(&report);
    write_outputs(&report, opts)
}

fn verify(scope: ScopeArg) -> bool {
    let scope = match scope {
        ScopeArg::Quant => Scope::Quant,
        ScopeArg::Attention => Scope::Attention,
        ScopeArg::Sampler => Scope::Sampler,
        ScopeArg::Merge => Scope::Merge,
        ScopeArg::All => Scope::All,
    };
    let s = run_verify_suite(scope);
    println!("{s}");
    s.all_passed()
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn run(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Quantize { manifest, block, out, exclude } => {
            let m = load_manifest(&manifest)?;
            let ex: Vec<&str> = exclude.iter().map(String::as_str).collect();
            let q = quantize_manifest(&m, BlockQuantConfig::new(block)?, &ex)?;
            save_manifest(&q, &out)?;
            println!("quantized {} parameters into {}", q.params.len(), out.display());
        }
        Command::Merge { base, deltas, out, coefficients } => {
            let b = load_manifest(&base)?;
            let ds = deltas
                .iter()
                .map(|p| load_manifest(p).map(|m| WeightDelta::from_manifest(&m)))
                .collect::<Result<Vec<_>, _>>()?;
            let merged = merge_deltas_weighted(&b, &ds, coefficients.as_deref())?;
            save_manifest(&merged, &out)?;
            println!("merged {} deltas into {}", ds.len(), out.display());
        }
        Command::Delta { finetuned, base, out } => {
            let d = extract_delta(&load_manifest(&finetuned)?, &load_manifest(&base)?)?;
            save_manifest(&d.to_manifest(&dir_name(&out))?, &out)?;
            println!("wrote delta of {} parameters to {}", d.entries.len(), out.display());
        }
        Command::Bench { target, opts } => bench(target, &opts)?,
        Command::Verify { scope } => return Ok(verify(scope)),
        Command::Report { input, format, out } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let r = LatencyReport::from_json(&text)?;
            r.validate()?;
            emit_report(&r, format.into(), &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
