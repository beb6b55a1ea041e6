use rayon::prelude::*;

use super::array::{AttnInputs, HeadArray};
use super::softmax_row;
use crate::blockquant::{block_scale, quantize_value};
use crate::linalg::{dot_i8, gemm_acc};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantAttnConfig {
    /// Rows per quantization block along the sequence axis; each block spans
    /// the whole head dimension.
    pub token_block: usize,
    pub smooth_k: bool,
}

impl Default for QuantAttnConfig {
    fn default() -> Self {
        QuantAttnConfig {
            token_block: 64,
            smooth_k: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedKeys {
    pub centered: HeadArray,
    /// `[heads x head_dim]` per-channel mean over the sequence.
    pub mean: Vec<f32>,
}

/// Subtracts the per-(head, channel) mean over the sequence from `k`.
///
/// `Q K^T = Q K_c^T + (Q k_mean^T)` broadcast along each row, so the mean can
/// be restored exactly after the centered product is computed at low precision.
pub fn smooth_keys(k: &HeadArray) -> SmoothedKeys {
    let (s, d) = (k.seq, k.dim);
    let mut centered = k.clone();
    let mut mean = vec![0f32; k.heads * d];
    for h in 0..k.heads {
        let m = &mut mean[h * d..(h + 1) * d];
        let mut acc = vec![0f64; d];
        for i in 0..s {
            for (a, &x) in acc.iter_mut().zip(k.row(h, i)) {
                *a += f64::from(x);
            }
        }
        for (mv, a) in m.iter_mut().zip(&acc) {
            *mv = (a / s as f64) as f32;
        }
        let head = centered.head_mut(h);
        for row in head.chunks_mut(d) {
            for (x, &mv) in row.iter_mut().zip(m.iter()) {
                *x -= mv;
            }
        }
    }
    SmoothedKeys { centered, mean }
}

/// Symmetric INT8 codes for a `rows x cols` matrix with one scale per
/// `block` consecutive rows.
#[derive(Clone, Debug)]
pub(crate) struct RowBlockQuant {
    pub cols: usize,
    pub block: usize,
    pub q: Vec<i8>,
    pub scales: Vec<f32>,
}

impl RowBlockQuant {
    pub fn new(x: &[f32], rows: usize, cols: usize, block: usize) -> Self {
        let block = block.max(1);
        let nb = rows.div_ceil(block);
        let mut q = vec![0i8; rows * cols];
        let mut scales = vec![0f32; nb];
        for (b, scale_out) in scales.iter_mut().enumerate() {
            let r0 = b * block;
            let r1 = (r0 + block).min(rows);
            let src = &x[r0 * cols..r1 * cols];
            let absmax = src.iter().fold(0f32, |m, v| m.max(v.abs()));
            if absmax == 0.0 {
                continue;
            }
            let s = block_scale(absmax);
            *scale_out = s;
            for (d, &v) in q[r0 * cols..r1 * cols].iter_mut().zip(src) {
                *d = quantize_value(v, s);
            }
        }
        RowBlockQuant {
            cols,
            block,
            q,
            scales,
        }
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.q[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&self, i: usize) -> f32 {
        self.scales[i / self.block]
    }
}

/// Per-head INT8 operands for `Q K_c^T` plus the F32 mean-correction term.
pub(crate) struct QuantizedHead {
    pub q: RowBlockQuant,
    pub k: RowBlockQuant,
    /// `q_i . k_mean` for every query row.
    pub correction: Vec<f32>,
}

impl QuantizedHead {
    pub fn new(
        inp: &AttnInputs,
        smoothed: Option<&SmoothedKeys>,
        h: usize,
        cfg: &QuantAttnConfig,
    ) -> Self {
        let (s, d) = (inp.seq(), inp.dim());
        let qh = inp.q.head(h);
        let (kh, correction) = match smoothed {
            Some(sk) => {
                let mean = &sk.mean[h * d..(h + 1) * d];
                let corr = qh
                    .chunks(d)
                    .map(|qi| qi.iter().zip(mean).fold(0f32, |acc, (a, b)| acc + a * b))
                    .collect();
                (sk.centered.head(h), corr)
            }
            None => (inp.k.head(h), vec![0f32; s]),
        };
        QuantizedHead {
            q: RowBlockQuant::new(qh, s, d, cfg.token_block),
            k: RowBlockQuant::new(kh, s, d, cfg.token_block),
            correction,
        }
    }

    /// `scale * (q_i . k_j)` reconstructed from integer dots and the correction.
    #[inline]
    pub fn logit(&self, i: usize, j: usize, scale: f32) -> f32 {
        let dot = dot_i8(self.q.row(i), self.k.row(j)) as f32;
        (dot * (self.q.scale(i) * self.k.scale(j)) + self.correction[i]) * scale
    }
}

/// INT8 `Q K^T` (with optional key smoothing and exact mean correction),
/// F32 softmax and F32 `PV`.
pub fn quantized_attention(inp: &AttnInputs, cfg: &QuantAttnConfig) -> HeadArray {
    let (s, d) = (inp.seq(), inp.dim());
    let smoothed = cfg.smooth_k.then(|| smooth_keys(&inp.k));
    let heads: Vec<Vec<f32>> = (0..inp.heads())
        .into_par_iter()
        .map(|h| {
            let qh = QuantizedHead::new(inp, smoothed.as_ref(), h, cfg);
            let mut p = vec![0f32; s * s];
            for (i, row) in p.chunks_mut(s).enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = qh.logit(i, j, inp.scale);
                }
                softmax_row(row);
            }
            let mut out = vec![0f32; s * d];
            gemm_acc(s, s, d, &p, inp.v.head(h), &mut out);
            out
        })
        .collect();
    HeadArray::from_heads(s, d, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{error_metrics, reference_attention};

    #[test]
    fn zero_mean_keys_are_untouched() {
        // Mirror rows so every channel sums to exactly zero.
        let base = HeadArray::gaussian(2, 4, 3, 1);
        let mut k = HeadArray::zeros(2, 8, 3);
        for h in 0..2 {
            for i in 0..4 {
                for c in 0..3 {
                    let x = base.data[(h * 4 + i) * 3 + c];
                    k.data[(h * 8 + i) * 3 + c] = x;
                    k.data[(h * 8 + 4 + i) * 3 + c] = -x;
                }
            }
        }
        let sk = smooth_keys(&k);
        assert!(sk.mean.iter().all(|&m| m == 0.0));
        assert_eq!(sk.centered, k);
    }

    #[test]
    fn constant_keys_center_to_zero() {
        let k = HeadArray::from_vec(1, 5, 2, [1.5f32, -0.25].repeat(5)).unwrap();
        let sk = smooth_keys(&k);
        assert_eq!(sk.mean, vec![1.5, -0.25]);
        assert!(sk.centered.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn smoothing_identity_reconstructs_qk() {
        let inp = AttnInputs::gaussian(2, 64, 16, 8);
        // Give keys a large common offset, the case smoothing exists for.
        let mut k = inp.k.clone();
        for (i, x) in k.data.iter_mut().enumerate() {
            *x += 3.0 + (i % 16) as f32 * 0.1;
        }
        let sk = smooth_keys(&k);
        let (s, d) = (64, 16);
        let (mut direct, mut rebuilt) = (Vec::new(), Vec::new());
        for h in 0..2 {
            let mean = &sk.mean[h * d..(h + 1) * d];
            for i in 0..s {
                let qi = inp.q.row(h, i);
                let corr: f64 = qi.iter().zip(mean).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                for j in 0..s {
                    let dot = |x: &[f32]| -> f64 {
                        qi.iter().zip(x).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
                    };
                    direct.push(dot(k.row(h, j)) as f32);
                    rebuilt.push((dot(sk.centered.row(h, j)) + corr) as f32);
                }
            }
        }
        let m = error_metrics(&rebuilt, &direct).unwrap();
        assert!(m.rel_l2 <= 1e-5, "rel-L2 {}", m.rel_l2);
    }

    #[test]
    fn single_token_returns_v() {
        let inp = AttnInputs::gaussian(4, 1, 16, 2);
        assert_eq!(quantized_attention(&inp, &QuantAttnConfig::default()).data, inp.v.data);
    }

    #[test]
    fn zero_queries_or_keys_give_value_means() {
        for zero_q in [true, false] {
            let mut inp = AttnInputs::gaussian(2, 20, 8, 3);
            let target = if zero_q { &mut inp.q } else { &mut inp.k };
            target.data.iter_mut().for_each(|x| *x = 0.0);
            let out = quantized_attention(&inp, &QuantAttnConfig::default());
            for h in 0..2 {
                for c in 0..8 {
                    let mean = (0..20).map(|j| inp.v.row(h, j)[c]).sum::<f32>() / 20.0;
                    for i in 0..20 {
                        assert!((out.row(h, i)[c] - mean).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_fidelity() {
        let inp = AttnInputs::gaussian(4, 256, 64, 5);
        let got = quantized_attention(&inp, &QuantAttnConfig::default());
        let m = error_metrics(&got.data, &reference_attention(&inp).data).unwrap();
        eprintln!("quantized attention seed 5: {m:?}");
        assert!(m.cosine >= 0.99 && m.rel_l2 <= 5e-2, "{m:?}");
    }
}
