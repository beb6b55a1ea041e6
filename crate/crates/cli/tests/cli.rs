use std::path::Path;
use std::process::{Command, Output};

use turbo_core::bench::LatencyReport;
use turbo_core::rng::gaussian_vec;
use turbo_core::tensor_store::{load_manifest, save_manifest, ModelManifest, Tensor};

fn turbobench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turbobench"))
        .args(args)
        .env("TURBOBENCH_THREADS", "2")
        .output()
        .expect("spawn turbobench")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn model(seed: u64, scale: f32) -> ModelManifest {
    let mut m = ModelManifest::new("toy");
    for (name, dims) in [("blk.0.w", vec![128, 256]), ("blk.0.b", vec![256]), ("out.w", vec![256, 64])] {
        let n = dims.iter().product();
        let v = gaussian_vec(n, seed + n as u64).into_iter().map(|x| x * scale).collect();
        m.insert(name, Tensor::from_f32(dims, v).unwrap()).unwrap();
    }
    m
}

#[test]
fn delta_then_merge_reconstructs_finetuned() {
    let dir = tempfile::tempdir().unwrap();
    let (base, ft) = (dir.path().join("base"), dir.path().join("ft"));
    save_manifest(&model(1, 1.0), &base).unwrap();
    save_manifest(&model(2, 1.0), &ft).unwrap();
    let (delta, merged) = (dir.path().join("delta"), dir.path().join("merged"));

    let o = turbobench(&["delta", s(&ft), s(&base), "--out", s(&delta)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = turbobench(&["merge", s(&base), s(&delta), "--out", s(&merged)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (got, want) = (load_manifest(&merged).unwrap(), load_manifest(&ft).unwrap());
    for (name, t) in &want.params {
        let (a, b) = (got.get(name).unwrap().as_f32().unwrap(), t.as_f32().unwrap());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 4.0 * f32::EPSILON * (x.abs() + 1.0), "{name}: {x} vs {y}");
        }
    }
}

#[test]
fn merge_with_zero_coefficient_returns_base() {
    let dir = tempfile::tempdir().unwrap();
    let (base, d, out) = (dir.path().join("base"), dir.path().join("d"), dir.path().join("out"));
    save_manifest(&model(1, 1.0), &base).unwrap();
    save_manifest(&model(3, 0.1), &d).unwrap();
    let o = turbobench(&["merge", s(&base), s(&d), "--out", s(&out), "--coef", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_manifest(&out).unwrap().params, model(1, 1.0).params);
}

#[test]
fn quantize_splits_matrices_and_honours_exclusions() {
    let dir = tempfile::tempdir().unwrap();
    let (src, out) = (dir.path().join("src"), dir.path().join("q"));
    save_manifest(&model(1, 1.0), &src).unwrap();
    let o = turbobench(&["quantize", s(&src), "--block", "64", "--out", s(&out), "--exclude", "out.w"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let q = load_manifest(&out).unwrap();
    assert_eq!(q.metadata.quantized, Some(true));
    assert!(q.get("blk.0.w.q").is_some() && q.get("blk.0.w.scales").is_some());
    assert!(q.get("blk.0.b").is_some() && q.get("out.w").is_some());
    assert!(q.get("blk.0.w").is_none());
}

#[test]
fn merge_rejects_unknown_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (base, d, out) = (dir.path().join("base"), dir.path().join("d"), dir.path().join("out"));
    save_manifest(&model(1, 1.0), &base).unwrap();
    let mut extra = ModelManifest::new("extra");
    extra.insert("ghost", Tensor::from_f32(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    save_manifest(&extra, &d).unwrap();
    let o = turbobench(&["merge", s(&base), s(&d), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost"));
}

#[test]
fn verify_quant_scope_passes() {
    let o = turbobench(&["verify", "--scope", "quant"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn bench_report_round_trip_to_svg_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let o = turbobench(&[
        "bench", "attn", "--seq", "256", "--dim", "64", "--heads", "2", "--repeats", "3", "--out", s(&json),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = LatencyReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(r.config.seq, 256);
    assert_eq!(r.threads, 2);

    let svg = dir.path().join("r.svg");
    let o = turbobench(&["report", s(&json), "--format", "svg", "--out", s(&svg)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let csv = dir.path().join("r.csv");
    let o = turbobench(&["report", s(&json), "--format", "csv", "--out", s(&csv)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("stage,baseline_s,fast_s"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(turbobench(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(turbobench(&["bench", "attn", "--topk", "2"]).status.code(), Some(2));
    assert_eq!(turbobench(&["bench", "attn", "--dim", "100", "--heads", "3"]).status.code(), Some(2));
    assert_eq!(turbobench(&["bench", "attn", "--save-sample", "x"]).status.code(), Some(2));
    assert_eq!(turbobench(&["quantize", "/nonexistent/m", "--out", "/tmp/x"]).status.code(), Some(2));
}

#[test]
fn invalid_thread_env_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_turbobench"))
        .args(["verify", "--scope", "quant"])
        .env("TURBOBENCH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
