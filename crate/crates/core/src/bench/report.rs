use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BenchConfig, BenchKind};
use crate::attention::{ErrorMetrics, FlopReport};
use crate::error::{Error, Result};

/// Stage names in report order.
pub const STAGES: [&str; 6] = [
    "attention",
    "linear",
    "norms",
    "sampler_overhead",
    "expert_switch",
    "other",
];

/// Seconds spent per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub attention: f64,
    pub linear: f64,
    pub norms: f64,
    pub sampler_overhead: f64,
    pub expert_switch: f64,
    pub other: f64,
}

impl StageTimes {
    pub fn values(&self) -> [f64; 6] {
        [
            self.attention,
            self.linear,
            self.norms,
            self.sampler_overhead,
            self.expert_switch,
            self.other,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }
}

/// One timed configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub stages: StageTimes,
    /// Sum of `stages`.
    pub total_s: f64,
    /// Sampling steps (1 for component benchmarks).
    pub steps: usize,
    pub model_calls: usize,
    pub switch_count: usize,
    pub per_step_s: f64,
    /// Timed runs behind the reported median.
    pub timed_runs: usize,
    /// SHA-256 over the output's F32 bit patterns.
    pub output_digest: String,
}

impl RunSummary {
    pub(crate) fn new(
        label: &str,
        stages: StageTimes,
        steps: usize,
        model_calls: usize,
        switch_count: usize,
        timed_runs: usize,
        output: &[f32],
    ) -> Self {
        let total_s = stages.total();
        RunSummary {
            label: label.to_string(),
            stages,
            total_s,
            steps,
            model_calls,
            switch_count,
            per_step_s: total_s / steps.max(1) as f64,
            timed_runs,
            output_digest: digest_f32(output),
        }
    }
}

pub(crate) fn digest_f32(x: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub kind: BenchKind,
    pub config: BenchConfig,
    pub seed: u64,
    /// Worker threads in effect (recorded, not hashed).
    pub threads: usize,
    pub baseline: RunSummary,
    pub fast: RunSummary,
    /// Per attention call of the accelerated configuration.
    pub flops: Option<FlopReport>,
    /// Accelerated output against the dense output on identical inputs.
    pub errors: Option<ErrorMetrics>,
    pub speedup: f64,
    pub step_ratio: f64,
    pub per_step_ratio: f64,
    /// `step_ratio * per_step_ratio`.
    pub decomposition_estimate: f64,
    /// SHA-256 over the deterministic fields (everything except timings and
    /// the thread count).
    pub hash: String,
}

#[derive(Serialize)]
struct HashedRun<'a> {
    label: &'a str,
    steps: usize,
    model_calls: usize,
    switch_count: usize,
    output_digest: &'a str,
}

#[derive(Serialize)]
struct Hashed<'a> {
    kind: BenchKind,
    config: &'a BenchConfig,
    seed: u64,
    flops: &'a Option<FlopReport>,
    errors: &'a Option<ErrorMetrics>,
    baseline: HashedRun<'a>,
    fast: HashedRun<'a>,
}

impl LatencyReport {
    pub(crate) fn assemble(
        kind: BenchKind,
        config: &BenchConfig,
        threads: usize,
        baseline: RunSummary,
        fast: RunSummary,
        flops: Option<FlopReport>,
        errors: Option<ErrorMetrics>,
    ) -> Result<Self> {
        let speedup = super::speedup_ratio(baseline.total_s, fast.total_s)?;
        let step_ratio = baseline.steps as f64 / fast.steps as f64;
        let per_step_ratio = baseline.per_step_s / fast.per_step_s;
        let mut r = LatencyReport {
            kind,
            config: config.clone(),
            seed: config.seed,
            threads,
            baseline,
            fast,
            flops,
            errors,
            speedup,
            step_ratio,
            per_step_ratio,
            decomposition_estimate: step_ratio * per_step_ratio,
            hash: String::new(),
        };
        r.hash = r.compute_hash();
        Ok(r)
    }

    pub fn compute_hash(&self) -> String {
        fn run(r: &RunSummary) -> HashedRun<'_> {
            HashedRun {
                label: &r.label,
                steps: r.steps,
                model_calls: r.model_calls,
                switch_count: r.switch_count,
                output_digest: &r.output_digest,
            }
        }
        let view = Hashed {
            kind: self.kind,
            config: &self.config,
            seed: self.seed,
            flops: &self.flops,
            errors: &self.errors,
            baseline: run(&self.baseline),
            fast: run(&self.fast),
        };
        let v = serde_json::to_value(&view).expect("report fields serialize");
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }

    /// Checks the structural invariants: non-negative stages, totals equal to
    /// stage sums, speedup equal to the total ratio and a current hash.
    pub fn validate(&self) -> Result<()> {
        for r in [&self.baseline, &self.fast] {
            if r.stages.values().iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!("`{}` has a negative or non-finite stage time", r.label)));
            }
            if (r.stages.total() - r.total_s).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("`{}` total does not match its stages", r.label)));
            }
        }
        let s = self.baseline.total_s / self.fast.total_s;
        if (s - self.speedup).abs() > 1e-9 * s.abs().max(1.0) {
            return Err(Error::InvalidConfig("speedup does not match the totals".into()));
        }
        if self.hash != self.compute_hash() {
            return Err(Error::InvalidConfig("report hash does not match its contents".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("not a latency report: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

pub fn render_report(r: &LatencyReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => render_json(r),
        ReportFormat::Csv => render_csv(r),
        ReportFormat::Svg => render_svg(r),
    })
}

pub fn emit_report(r: &LatencyReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(r, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keys sorted at every level.
fn render_json(r: &LatencyReport) -> String {
    let v = serde_json::to_value(r).expect("report fields serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

fn render_csv(r: &LatencyReport) -> String {
    let mut s = format!("stage,{}_s,{}_s\n", r.baseline.label, r.fast.label);
    let (b, f) = (r.baseline.stages.values(), r.fast.stages.values());
    for (i, name) in STAGES.iter().enumerate() {
        let _ = writeln!(s, "{name},{:.9},{:.9}", b[i], f[i]);
    }
    s
}

const COLORS: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#b07aa1", "#e15759", "#9c9c9c"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal stacked bar per configuration, one `rect` per nonzero stage.
fn render_svg(r: &LatencyReport) -> String {
    let (left, bar_w, bar_h, gap, top) = (120.0, 560.0, 36.0, 28.0, 48.0);
    let runs = [&r.baseline, &r.fast];
    let max_total = runs.iter().map(|x| x.total_s).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let height = top + runs.len() as f64 * (bar_h + gap) + 40.0;
    let width = left + bar_w + 140.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="14">{} latency: {:.1}x speedup ({} vs {} steps)</text>"#,
        r.kind.name(),
        r.speedup,
        r.baseline.steps,
        r.fast.steps
    );
    for (row, run) in runs.iter().enumerate() {
        let y = top + row as f64 * (bar_h + gap);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + bar_h / 2.0 + 4.0,
            xml_escape(&run.label)
        );
        let mut x = left;
        for (i, (&v, name)) in run.stages.values().iter().zip(STAGES).enumerate() {
            if v <= 0.0 {
                continue;
            }
            let w = v / max_total * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.3}" y="{y}" width="{w:.3}" height="{bar_h}" fill="{}"><title>{name}: {v:.6} s</title></rect>"#,
                COLORS[i]
            );
            x += w;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{}">{:.3} s</text>"#,
            x + 6.0,
            y + bar_h / 2.0 + 4.0,
            run.total_s
        );
    }
    let ly = height - 16.0;
    let mut lx = left;
    for (i, name) in STAGES.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{lx}" y="{ly}" fill="{}">{name}</text>"#, COLORS[i]);
        lx += 8.0 * name.len() as f64 + 16.0;
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_report() -> LatencyReport {
        let stages = |a: f64, l: f64| StageTimes {
            attention: a,
            linear: l,
            norms: 0.01,
            sampler_overhead: 0.002,
            expert_switch: 0.0,
            other: 0.05,
        };
        let cfg = BenchConfig::default();
        LatencyReport::assemble(
            BenchKind::E2e,
            &cfg,
            1,
            RunSummary::new("baseline", stages(10.0, 12.0), 100, 100, 0, 1, &[1.0, 2.0]),
            RunSummary::new("fast", stages(0.1, 0.2), 3, 3, 0, 5, &[1.5, 2.5]),
            None,
            Some(ErrorMetrics { cosine: 0.99, rel_l2: 0.1 }),
        )
        .unwrap()
    }

    #[test]
    fn json_is_reproducible_and_round_trips() {
        let r = sample_report();
        let a = render_report(&r, ReportFormat::Json).unwrap();
        let b = render_report(&sample_report(), ReportFormat::Json).unwrap();
        assert_eq!(a, b);
        let back = LatencyReport::from_json(&a).unwrap();
        assert_eq!(back, r);
        back.validate().unwrap();
        // Sorted keys: "baseline" precedes "config" precedes "decomposition_estimate".
        let (i, j, k) = (a.find("\"baseline\"").unwrap(), a.find("\"config\"").unwrap(), a.find("\"decomposition_estimate\"").unwrap());
        assert!(i < j && j < k);
    }

    #[test]
    fn hash_ignores_timings_and_threads() {
        let r = sample_report();
        let mut t = r.clone();
        t.threads = 8;
        t.baseline.stages.attention = 99.0;
        t.fast.total_s = 1.0;
        assert_eq!(t.compute_hash(), r.hash);
        let mut t = r.clone();
        t.fast.output_digest = digest_f32(&[0.0]);
        assert_ne!(t.compute_hash(), r.hash);
        assert!(t.validate().is_err());
    }

    #[test]
    fn report_invariants() {
        let r = sample_report();
        assert!((r.baseline.total_s - r.baseline.stages.total()).abs() <= 1e-9);
        assert_eq!(r.speedup, r.baseline.total_s / r.fast.total_s);
        assert!((r.decomposition_estimate - r.speedup).abs() <= 1e-9 * r.speedup);
    }

    #[test]
    fn csv_has_header_plus_one_row_per_stage() {
        let csv = render_report(&sample_report(), ReportFormat::Csv).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), STAGES.len() + 1);
        assert_eq!(lines[0], "stage,baseline_s,fast_s");
        assert!(lines[5].starts_with("expert_switch,0.000000000,"));
    }

    #[test]
    fn svg_is_well_formed_with_one_rect_per_nonzero_stage() {
        let r = sample_report();
        let svg = render_report(&r, ReportFormat::Svg).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let rects = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
        let nonzero = [&r.baseline, &r.fast]
            .iter()
            .flat_map(|x| x.stages.values())
            .filter(|&v| v > 0.0)
            .count();
        assert_eq!(rects, nonzero);
        assert_eq!(rects, 10);
        assert!(svg.contains("22.062 s"));
    }
}
