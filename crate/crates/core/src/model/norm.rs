use rayon::prelude::*;

use crate::linalg::Mat;

pub const DEFAULT_EPS: f32 = 1e-6;

/// Per row: `x / sqrt(mean(x^2) + eps) * gain`. Row statistics are
/// accumulated in f64.
pub fn rmsnorm(x: &Mat, gain: &[f32], eps: f32) -> Mat {
    assert_eq!(gain.len(), x.cols, "rmsnorm gain length");
    let mut out = Mat::zeros(x.rows, x.cols);
    if x.cols == 0 {
        return out;
    }
    out.data
        .par_chunks_mut(x.cols)
        .zip(x.data.par_chunks(x.cols))
        .for_each(|(orow, row)| {
            let ms = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / row.len() as f64;
            let inv = (1.0 / (ms + f64::from(eps)).sqrt()) as f32;
            for ((o, &v), &g) in orow.iter_mut().zip(row).zip(gain) {
                *o = v * inv * g;
            }
        });
    out
}

/// Per row: `(x - mean) / sqrt(var + eps) * gain + offset` with population
/// variance. Row statistics are accumulated in f64.
pub fn layernorm(x: &Mat, gain: &[f32], offset: &[f32], eps: f32) -> Mat {
    assert_eq!(gain.len(), x.cols, "layernorm gain length");
    assert_eq!(offset.len(), x.cols, "layernorm offset length");
    let n = x.cols as f64;
    let mut out = Mat::zeros(x.rows, x.cols);
    if x.cols == 0 {
        return out;
    }
    out.data
        .par_chunks_mut(x.cols)
        .zip(x.data.par_chunks(x.cols))
        .for_each(|(orow, row)| {
            let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            let var = row
                .iter()
                .map(|&v| (f64::from(v) - mean).powi(2))
                .sum::<f64>()
                / n;
            let inv = (1.0 / (var + f64::from(eps)).sqrt()) as f32;
            let mean = mean as f32;
            for (((o, &v), &g), &b) in orow.iter_mut().zip(row).zip(gain).zip(offset) {
                *o = (v - mean) * inv * g + b;
            }
        });
    out
}

fn map(x: &Mat, f: impl Fn(usize, usize, f32) -> f32) -> Mat {
    Mat::from_fn(x.rows, x.cols, |i, j| f(i, j, x.get(i, j)))
}

fn row_means(x: &Mat) -> Vec<f32> {
    (0..x.rows)
        .map(|i| x.row(i).iter().sum::<f32>() / x.cols as f32)
        .collect()
}

/// RMSNorm evaluated one elementwise op at a time with F32 intermediates, the
/// way an unfused framework graph runs it. Baseline for the fused kernel.
pub fn rmsnorm_unfused(x: &Mat, gain: &[f32], eps: f32) -> Mat {
    let sq = map(x, |_, _, v| v * v);
    let ms = row_means(&sq);
    let inv: Vec<f32> = ms.iter().map(|m| 1.0 / (m + eps).sqrt()).collect();
    let normed = map(x, |i, _, v| v * inv[i]);
    map(&normed, |_, j, v| v * gain[j])
}

/// LayerNorm evaluated one elementwise op at a time with F32 intermediates.
pub fn layernorm_unfused(x: &Mat, gain: &[f32], offset: &[f32], eps: f32) -> Mat {
    let mean = row_means(x);
    let centered = map(x, |i, _, v| v - mean[i]);
    let sq = map(&centered, |_, _, v| v * v);
    let var = row_means(&sq);
    let inv: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let normed = map(&centered, |i, _, v| v * inv[i]);
    let scaled = map(&normed, |_, j, v| v * gain[j]);
    map(&scaled, |_, j, v| v + offset[j])
}
