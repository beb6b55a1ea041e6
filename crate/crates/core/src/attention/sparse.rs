//! Block top-k selection, linear attention and the sparse-linear combination.
//!
//! Queries and keys are split into blocks and mean-pooled; each query block
//! keeps the `ceil(topk_ratio * num_kv_blocks)` key blocks with the highest
//! pooled score (ties go to the lower index) and attends to them with exact
//! softmax. The remaining key blocks are covered by linear attention with the
//! positive feature map `phi(x) = x + 1` for `x >= 0`, `exp(x)` otherwise.
//! Both branches share one normalization:
//!
//! ```text
//! O_i = (sum_{j in S} e^{l_ij} v_j + mix * phi(q_i) H_C) / (sum_{j in S} e^{l_ij} + mix * phi(q_i) z_C)
//! ```
//!
//! evaluated with the softmax row max factored out.

use rayon::prelude::*;

use super::array::{AttnInputs, HeadArray};
use super::counter::MacCounter;
use super::exp_row;
use super::quant::{smooth_keys, QuantAttnConfig, QuantizedHead};
use crate::linalg::{gemm_acc, transpose_into};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SLAConfig {
    pub q_block: usize,
    pub kv_block: usize,
    /// Fraction of key blocks each query block attends to exactly.
    pub topk_ratio: f32,
    /// Weight of the linear branch; 0 gives pure block-sparse attention.
    pub linear_mix: f32,
    /// Run the softmax branch on INT8 `QK^T` (the smoothed quantized kernel).
    pub quantized_sparse_branch: bool,
    pub quant: QuantAttnConfig,
}

impl Default for SLAConfig {
    fn default() -> Self {
        SLAConfig {
            q_block: 64,
            kv_block: 64,
            topk_ratio: 0.1,
            linear_mix: 1.0,
            quantized_sparse_branch: true,
            quant: QuantAttnConfig::default(),
        }
    }
}

impl SLAConfig {
    /// Block sizes clamped to `1..=seq`.
    pub fn effective(&self, seq: usize) -> SLAConfig {
        SLAConfig {
            q_block: self.q_block.clamp(1, seq.max(1)),
            kv_block: self.kv_block.clamp(1, seq.max(1)),
            ..*self
        }
    }
}

/// `ceil(ratio * blocks)` clamped to `1..=blocks`. A 1e-6 slack absorbs the
/// binary representation error of decimal ratios, so 0.1 of 10 blocks is 1.
pub fn selected_block_count(ratio: f32, blocks: usize) -> usize {
    let raw = f64::from(ratio) * blocks as f64 - 1e-6;
    (raw.ceil().max(1.0) as usize).min(blocks.max(1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMask {
    pub heads: usize,
    pub num_q_blocks: usize,
    pub num_kv_blocks: usize,
    pub q_block: usize,
    pub kv_block: usize,
    /// `heads * num_q_blocks` ascending kv-block index lists.
    pub sets: Vec<Vec<usize>>,
}

impl BlockMask {
    pub fn selected(&self, h: usize, qb: usize) -> &[usize] {
        &self.sets[h * self.num_q_blocks + qb]
    }

    /// Every `(head, q-block)` keeps the kv-blocks it did not select.
    pub fn complement(&self) -> BlockMask {
        let sets = self
            .sets
            .iter()
            .map(|sel| {
                let mut keep = vec![true; self.num_kv_blocks];
                for &j in sel {
                    keep[j] = false;
                }
                (0..self.num_kv_blocks).filter(|&j| keep[j]).collect()
            })
            .collect();
        BlockMask {
            sets,
            ..self.clone()
        }
    }

    pub fn selected_positions(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// Mean over consecutive `block`-row groups of every head; the final group
/// averages over its actual extent.
pub fn pool_block_means(x: &HeadArray, block: usize) -> HeadArray {
    let block = block.max(1);
    let nb = x.seq.div_ceil(block);
    let d = x.dim;
    let mut out = HeadArray::zeros(x.heads, nb, d);
    for h in 0..x.heads {
        for b in 0..nb {
            let r0 = b * block;
            let r1 = (r0 + block).min(x.seq);
            let mut acc = vec![0f64; d];
            for i in r0..r1 {
                for (a, &v) in acc.iter_mut().zip(x.row(h, i)) {
                    *a += f64::from(v);
                }
            }
            let n = (r1 - r0) as f64;
            let dst = &mut out.head_mut(h)[b * d..(b + 1) * d];
            for (o, a) in dst.iter_mut().zip(&acc) {
                *o = (a / n) as f32;
            }
        }
    }
    out
}

/// Per head and query block, the top `ceil(topk_ratio * num_kv_blocks)`
/// kv-blocks by pooled score `qp . kp`, lowest index first on ties, returned
/// in ascending order.
pub fn select_topk_blocks(qp: &HeadArray, kp: &HeadArray, cfg: &SLAConfig) -> BlockMask {
    let (nq, nkv, d) = (qp.seq, kp.seq, qp.dim);
    let k = selected_block_count(cfg.topk_ratio, nkv);
    let mut sets = Vec::with_capacity(qp.heads * nq);
    let mut order: Vec<(f32, usize)> = Vec::with_capacity(nkv);
    for h in 0..qp.heads {
        for a in 0..nq {
            let qa = qp.row(h, a);
            order.clear();
            for b in 0..nkv {
                let s = qa
                    .iter()
                    .zip(kp.row(h, b))
                    .fold(0f32, |acc, (x, y)| acc + x * y);
                order.push((s, b));
            }
            debug_assert_eq!(d, kp.dim);
            order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            let mut sel: Vec<usize> = order[..k].iter().map(|&(_, b)| b).collect();
            sel.sort_unstable();
            sets.push(sel);
        }
    }
    BlockMask {
        heads: qp.heads,
        num_q_blocks: nq,
        num_kv_blocks: nkv,
        q_block: cfg.q_block,
        kv_block: cfg.kv_block,
        sets,
    }
}

pub type TopkSelector = dyn Fn(&HeadArray, &HeadArray, &SLAConfig) -> BlockMask + Sync;

/// Positive feature map for linear attention.
#[inline]
pub fn feature_map(x: f32) -> f32 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Unnormalized linear-attention terms: `num = phi(Q) (phi(K)^T V)` of shape
/// `[heads, seq, head_dim]` and `den = phi(Q) (phi(K)^T 1)` of `heads * seq`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTerms {
    pub num: HeadArray,
    pub den: Vec<f32>,
}

/// Linear attention over the kv positions listed in `mask` (per head and
/// query block), or over every position when `mask` is `None`.
pub fn linear_attention(inp: &AttnInputs, mask: Option<&BlockMask>) -> LinearTerms {
    linear_attention_counted(inp, mask, None)
}

pub(crate) fn linear_attention_counted(
    inp: &AttnInputs,
    mask: Option<&BlockMask>,
    counter: Option<&MacCounter>,
) -> LinearTerms {
    let (s, d) = (inp.seq(), inp.dim());
    let (q_block, kv_block) = match mask {
        Some(m) => (m.q_block.clamp(1, s), m.kv_block.clamp(1, s)),
        None => (s, s),
    };
    let nq = s.div_ceil(q_block);
    let nkv = s.div_ceil(kv_block);

    let per_head: Vec<(Vec<f32>, Vec<f32>)> = (0..inp.heads())
        .into_par_iter()
        .map(|h| {
            let mut num = vec![0f32; s * d];
            let mut den = vec![0f32; s];
            let wanted = |qb: usize| -> Vec<usize> {
                match mask {
                    Some(m) => m.selected(h, qb).to_vec(),
                    None => (0..nkv).collect(),
                }
            };
            if (0..nq).all(|qb| wanted(qb).is_empty()) {
                return (num, den);
            }

            // Per kv-block summaries phi(K_j)^T V_j and phi(K_j)^T 1.
            let phi_k: Vec<f32> = inp.k.head(h).iter().map(|&x| feature_map(x)).collect();
            let v = inp.v.head(h);
            let mut kv_sum = vec![0f32; nkv * d * d];
            let mut k_sum = vec![0f32; nkv * d];
            let mut phi_kt = vec![0f32; kv_block * d];
            for j in 0..nkv {
                let r0 = j * kv_block;
                let r1 = (r0 + kv_block).min(s);
                let len = r1 - r0;
                transpose_into(len, d, &phi_k[r0 * d..r1 * d], &mut phi_kt[..len * d]);
                gemm_acc(
                    d,
                    len,
                    d,
                    &phi_kt[..len * d],
                    &v[r0 * d..r1 * d],
                    &mut kv_sum[j * d * d..(j + 1) * d * d],
                );
                MacCounter::add_linear(counter, (len * d * d) as u64);
                let z = &mut k_sum[j * d..(j + 1) * d];
                for row in phi_k[r0 * d..r1 * d].chunks(d) {
                    for (zc, &x) in z.iter_mut().zip(row) {
                        *zc += x;
                    }
                }
                MacCounter::add_linear_norm(counter, (len * d) as u64);
            }

            let mut h_c = vec![0f32; d * d];
            let mut z_c = vec![0f32; d];
            let mut phi_q = vec![0f32; q_block * d];
            for qb in 0..nq {
                let blocks = wanted(qb);
                if blocks.is_empty() {
                    continue;
                }
                h_c.iter_mut().for_each(|x| *x = 0.0);
                z_c.iter_mut().for_each(|x| *x = 0.0);
                for &j in &blocks {
                    for (a, &b) in h_c.iter_mut().zip(&kv_sum[j * d * d..(j + 1) * d * d]) {
                        *a += b;
                    }
                    for (a, &b) in z_c.iter_mut().zip(&k_sum[j * d..(j + 1) * d]) {
                        *a += b;
                    }
                }
                let r0 = qb * q_block;
                let r1 = (r0 + q_block).min(s);
                let rows = r1 - r0;
                for (p, &x) in phi_q.iter_mut().zip(&inp.q.head(h)[r0 * d..r1 * d]) {
                    *p = feature_map(x);
                }
                gemm_acc(rows, d, d, &phi_q[..rows * d], &h_c, &mut num[r0 * d..r1 * d]);
                MacCounter::add_linear(counter, (rows * d * d) as u64);
                for (i, row) in phi_q[..rows * d].chunks(d).enumerate() {
                    den[r0 + i] = row.iter().zip(&z_c).fold(0f32, |acc, (a, b)| acc + a * b);
                }
                MacCounter::add_linear_norm(counter, (rows * d) as u64);
            }
            (num, den)
        })
        .collect();

    let mut num = Vec::with_capacity(inp.heads() * s * d);
    let mut den = Vec::with_capacity(inp.heads() * s);
    for (n, z) in per_head {
        num.extend(n);
        den.extend(z);
    }
    LinearTerms {
        num: HeadArray::from_vec(inp.heads(), s, d, num).unwrap(),
        den,
    }
}

pub fn sla_attention(inp: &AttnInputs, cfg: &SLAConfig) -> HeadArray {
    sla_attention_with(inp, cfg, &select_topk_blocks, None)
}

pub fn sla_attention_counted(inp: &AttnInputs, cfg: &SLAConfig, counter: &MacCounter) -> HeadArray {
    sla_attention_with(inp, cfg, &select_topk_blocks, Some(counter))
}

/// Sparse-linear attention with a caller-supplied block selector.
pub fn sla_attention_with(
    inp: &AttnInputs,
    cfg: &SLAConfig,
    selector: &TopkSelector,
    counter: Option<&MacCounter>,
) -> HeadArray {
    let (s, d) = (inp.seq(), inp.dim());
    let cfg = cfg.effective(s);
    let qp = pool_block_means(&inp.q, cfg.q_block);
    let kp = pool_block_means(&inp.k, cfg.kv_block);
    let mask = selector(&qp, &kp, &cfg);
    MacCounter::add_selection(
        counter,
        (inp.heads() * mask.num_q_blocks * mask.num_kv_blocks * d) as u64,
    );

    let linear = if cfg.linear_mix != 0.0 {
        Some(linear_attention_counted(inp, Some(&mask.complement()), counter))
    } else {
        None
    };
    let smoothed = (cfg.quantized_sparse_branch && cfg.quant.smooth_k).then(|| smooth_keys(&inp.k));
    let mix = f64::from(cfg.linear_mix);

    let heads: Vec<Vec<f32>> = (0..inp.heads())
        .into_par_iter()
        .map(|h| {
            let quant = cfg
                .quantized_sparse_branch
                .then(|| QuantizedHead::new(inp, smoothed.as_ref(), h, &cfg.quant));
            let (qh, kh, vh) = (inp.q.head(h), inp.k.head(h), inp.v.head(h));
            let mut out = vec![0f32; s * d];
            let mut keys: Vec<usize> = Vec::new();
            for qb in 0..mask.num_q_blocks {
                let r0 = qb * cfg.q_block;
                let r1 = (r0 + cfg.q_block).min(s);
                let rows = r1 - r0;
                keys.clear();
                for &j in mask.selected(h, qb) {
                    let c0 = j * cfg.kv_block;
                    keys.extend(c0..(c0 + cfg.kv_block).min(s));
                }
                let len = keys.len();

                let mut logits = vec![0f32; rows * len];
                let mut vsel = vec![0f32; len * d];
                for (c, &j) in keys.iter().enumerate() {
                    vsel[c * d..(c + 1) * d].copy_from_slice(&vh[j * d..(j + 1) * d]);
                }
                if let Some(qz) = &quant {
                    for (r, row) in logits.chunks_mut(len.max(1)).enumerate().take(rows) {
                        for (x, &j) in row.iter_mut().zip(&keys) {
                            *x = qz.logit(r0 + r, j, inp.scale);
                        }
                    }
                } else if len > 0 {
                    let mut kt = vec![0f32; d * len];
                    for (c, &j) in keys.iter().enumerate() {
                        for (t, &x) in kh[j * d..(j + 1) * d].iter().enumerate() {
                            kt[t * len + c] = x;
                        }
                    }
                    gemm_acc(rows, d, len, &qh[r0 * d..r1 * d], &kt, &mut logits);
                    logits.iter_mut().for_each(|x| *x *= inp.scale);
                }
                MacCounter::add_sparse(counter, (rows * len * d) as u64);

                let mut stats = vec![(0f32, 0f32); rows];
                if len > 0 {
                    for (st, row) in stats.iter_mut().zip(logits.chunks_mut(len)) {
                        *st = exp_row(row);
                    }
                }
                let num = &mut out[r0 * d..r1 * d];
                gemm_acc(rows, len, d, &logits, &vsel, num);
                MacCounter::add_sparse(counter, (rows * len * d) as u64);

                for (r, orow) in num.chunks_mut(d).enumerate() {
                    let (max, sum) = stats[r];
                    let i = r0 + r;
                    let (lin_num, lin_den) = match &linear {
                        Some(l) => (l.num.row(h, i), f64::from(l.den[h * s + i])),
                        None => (&[][..], 0.0),
                    };
                    // Linear terms rescaled into the softmax branch's exp(-max) frame.
                    let w = if len > 0 { mix * (-f64::from(max)).exp() } else { mix };
                    if !w.is_finite() {
                        for (o, &ln) in orow.iter_mut().zip(lin_num) {
                            *o = (f64::from(ln) / lin_den) as f32;
                        }
                        continue;
                    }
                    let den = f64::from(sum) + w * lin_den;
                    if den == 0.0 {
                        orow.iter_mut().for_each(|o| *o = 0.0);
                        continue;
                    }
                    if lin_num.is_empty() || lin_den == 0.0 {
                        let inv = 1.0 / sum;
                        orow.iter_mut().for_each(|o| *o *= inv);
                    } else {
                        for (o, &ln) in orow.iter_mut().zip(lin_num) {
                            *o = ((f64::from(*o) + w * f64::from(ln)) / den) as f32;
                        }
                    }
                }
            }
            out
        })
        .collect();
    HeadArray::from_heads(s, d, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{error_metrics, reference_attention};
    use proptest::prelude::*;

    fn pooled(scores: &[Vec<f32>]) -> (HeadArray, HeadArray) {
        // qp = identity rows, kp columns = scores, so qp . kp = scores.
        let nq = scores.len();
        let nkv = scores[0].len();
        let mut qp = HeadArray::zeros(1, nq, nq);
        for a in 0..nq {
            qp.data[a * nq + a] = 1.0;
        }
        let mut kp = HeadArray::zeros(1, nkv, nq);
        for b in 0..nkv {
            for a in 0..nq {
                kp.data[b * nq + a] = scores[a][b];
            }
        }
        (qp, kp)
    }

    /// Brute force: rank every (score, index) pair by counting how many
    /// others beat it.
    fn brute_topk(row: &[f32], k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..row.len())
            .filter(|&b| {
                let better = (0..row.len())
                    .filter(|&c| row[c] > row[b] || (row[c] == row[b] && c < b))
                    .count();
                better < k
            })
            .collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn block_count_rounding() {
        assert_eq!(selected_block_count(0.1, 10), 1);
        assert_eq!(selected_block_count(0.1, 16), 2);
        assert_eq!(selected_block_count(0.1, 64), 7);
        assert_eq!(selected_block_count(0.1, 1), 1);
        assert_eq!(selected_block_count(0.5, 4), 2);
        assert_eq!(selected_block_count(1.0, 13), 13);
        assert_eq!(selected_block_count(1e-9, 13), 1);
    }

    #[test]
    fn pooling_edge_cases() {
        let x = HeadArray::gaussian(2, 5, 3, 1);
        assert_eq!(pool_block_means(&x, 1), x);
        let all = pool_block_means(&x, 5);
        assert_eq!(all.seq, 1);
        for h in 0..2 {
            for c in 0..3 {
                let m = (0..5).map(|i| f64::from(x.row(h, i)[c])).sum::<f64>() / 5.0;
                assert_eq!(all.row(h, 0)[c], m as f32);
            }
        }
        let p = pool_block_means(&x, 2);
        assert_eq!(p.seq, 3);
        for h in 0..2 {
            for c in 0..3 {
                let first = ((f64::from(x.row(h, 0)[c]) + f64::from(x.row(h, 1)[c])) / 2.0) as f32;
                assert_eq!(p.row(h, 0)[c], first);
                assert_eq!(p.row(h, 2)[c], x.row(h, 4)[c]);
            }
        }
    }

    #[test]
    fn topk_examples() {
        let cfg = SLAConfig {
            topk_ratio: 0.5,
            ..SLAConfig::default()
        };
        let scores = vec![vec![3.0, 1.0, 2.0, 0.0], vec![0.0, 0.0, 1.0, 5.0]];
        let (qp, kp) = pooled(&scores);
        let m = select_topk_blocks(&qp, &kp, &cfg);
        assert_eq!(m.sets, vec![vec![0, 2], vec![2, 3]]);
        for (a, row) in scores.iter().enumerate() {
            assert_eq!(m.selected(0, a), brute_topk(row, 2).as_slice());
        }

        let cfg = SLAConfig {
            topk_ratio: 0.25,
            ..SLAConfig::default()
        };
        let (qp, kp) = pooled(&[vec![1.0; 8]]);
        assert_eq!(select_topk_blocks(&qp, &kp, &cfg).sets, vec![vec![0, 1]]);

        let cfg = SLAConfig {
            topk_ratio: 1.0,
            ..SLAConfig::default()
        };
        let (qp, kp) = pooled(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 0.0]]);
        let m = select_topk_blocks(&qp, &kp, &cfg);
        assert!(m.sets.iter().all(|s| s == &[0, 1, 2]));
        assert!(m.complement().sets.iter().all(Vec::is_empty));
    }

    #[test]
    fn linear_empty_complement_is_zero() {
        let inp = AttnInputs::gaussian(2, 32, 8, 1);
        let cfg = SLAConfig {
            q_block: 8,
            kv_block: 8,
            topk_ratio: 1.0,
            ..SLAConfig::default()
        };
        let mask = select_topk_blocks(
            &pool_block_means(&inp.q, 8),
            &pool_block_means(&inp.k, 8),
            &cfg,
        );
        let lin = linear_attention(&inp, Some(&mask.complement()));
        assert!(lin.num.data.iter().all(|&x| x == 0.0));
        assert!(lin.den.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_single_token_returns_v() {
        let inp = AttnInputs::gaussian(3, 1, 8, 2);
        let lin = linear_attention(&inp, None);
        for h in 0..3 {
            for (c, &v) in inp.v.row(h, 0).iter().enumerate() {
                let o = lin.num.row(h, 0)[c] / lin.den[h];
                assert!((o - v).abs() <= 1e-6 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn linear_matches_direct_evaluation() {
        let inp = AttnInputs::gaussian(2, 128, 16, 3);
        let lin = linear_attention(&inp, None);
        for h in 0..2 {
            for i in [0usize, 17, 127] {
                let phi_q: Vec<f64> = inp.q.row(h, i).iter().map(|&x| f64::from(feature_map(x))).collect();
                let mut den = 0f64;
                let mut num = vec![0f64; 16];
                for j in 0..128 {
                    let w: f64 = phi_q
                        .iter()
                        .zip(inp.k.row(h, j))
                        .map(|(a, &b)| a * f64::from(feature_map(b)))
                        .sum();
                    den += w;
                    for (n, &v) in num.iter_mut().zip(inp.v.row(h, j)) {
                        *n += w * f64::from(v);
                    }
                }
                assert!(den > 0.0);
                assert!((f64::from(lin.den[h * 128 + i]) - den).abs() <= 1e-5 * den);
                let got: Vec<f32> = lin.num.row(h, i).to_vec();
                let want: Vec<f32> = num.iter().map(|&x| x as f32).collect();
                assert!(error_metrics(&got, &want).unwrap().rel_l2 < 1e-5);
            }
        }
    }

    #[test]
    fn full_topk_equals_reference() {
        let inp = AttnInputs::gaussian(2, 96, 16, 4);
        let reference = reference_attention(&inp);
        for mix in [0.0f32, 1.0, 7.5] {
            let cfg = SLAConfig {
                q_block: 32,
                kv_block: 16,
                topk_ratio: 1.0,
                linear_mix: mix,
                quantized_sparse_branch: false,
                ..SLAConfig::default()
            };
            let m = error_metrics(&sla_attention(&inp, &cfg).data, &reference.data).unwrap();
            assert!(m.rel_l2 <= 1e-5, "mix {mix}: {m:?}");
        }
    }

    #[test]
    fn sparse_counts_are_topk_fraction() {
        // 10 kv blocks at ratio 0.1: exactly one block per query block.
        let inp = AttnInputs::gaussian(1, 640, 8, 5);
        let cfg = SLAConfig::default();
        let c = MacCounter::new();
        sla_attention_counted(&inp, &cfg, &c);
        let counts = c.snapshot();
        let dense = 2 * 640 * 640 * 8;
        assert_eq!(counts.sparse * 10, dense);
        assert_eq!(counts.selection, 10 * 10 * 8);
        assert_eq!(counts.linear, 2 * 640 * 8 * 8);
    }

    /// Inputs whose tokens share a latent direction per 64-token block, the
    /// regime block selection is built for.
    pub(crate) fn clustered_inputs(heads: usize, seq: usize, dim: usize, seed: u64) -> AttnInputs {
        let latent = HeadArray::gaussian(heads, seq.div_ceil(64), dim, seed ^ 0xc1u64);
        let mut inp = AttnInputs::gaussian(heads, seq, dim, seed);
        for h in 0..heads {
            for i in 0..seq {
                for c in 0..dim {
                    let l = latent.row(h, i / 64)[c];
                    let at = (h * seq + i) * dim + c;
                    inp.q.data[at] = 2.0 * l + 0.5 * inp.q.data[at];
                    inp.k.data[at] = 2.0 * l + 0.5 * inp.k.data[at];
                }
            }
        }
        inp
    }

    #[test]
    fn iid_gaussian_sla_fidelity_floor() {
        // i.i.d. Gaussian q/k have no block structure for top-k to find, and
        // phi(q).phi(k) cannot follow exp(q.k) fluctuations. Measured cosine
        // 0.59635 (rel-L2 0.8048) at ratio 0.1, mix 1.0.
        let inp = AttnInputs::gaussian(4, 512, 64, 9);
        let m = error_metrics(&sla_attention(&inp, &SLAConfig::default()).data, &reference_attention(&inp).data)
            .unwrap();
        assert!(m.cosine >= 0.59, "{m:?}");
    }

    #[test]
    fn clustered_sla_fidelity() {
        // Measured cosine 0.99954.
        let inp = clustered_inputs(4, 512, 64, 9);
        let m = error_metrics(&sla_attention(&inp, &SLAConfig::default()).data, &reference_attention(&inp).data)
            .unwrap();
        assert!(m.cosine >= 0.95, "{m:?}");
    }

    proptest! {
        #[test]
        fn topk_matches_brute_force(nq in 1usize..5, nkv in 1usize..12, ratio in 0.01f32..1.0, seed in any::<u64>()) {
            let mut r = crate::rng::rng(seed);
            // Small integer scores force plenty of ties.
            let scores: Vec<Vec<f32>> = (0..nq)
                .map(|_| (0..nkv).map(|_| rand::Rng::gen_range(&mut r, -2i32..3) as f32).collect())
                .collect();
            let (qp, kp) = pooled(&scores);
            let cfg = SLAConfig { topk_ratio: ratio, ..SLAConfig::default() };
            let m = select_topk_blocks(&qp, &kp, &cfg);
            let k = selected_block_count(ratio, nkv);
            for (a, row) in scores.iter().enumerate() {
                let want = brute_topk(row, k);
                prop_assert_eq!(m.selected(0, a), want.as_slice());
            }
        }

        #[test]
        fn topk_invariant_under_positive_scaling(seed in any::<u64>(), e in -10i32..10, scale_q in any::<bool>()) {
            let qp = HeadArray::gaussian(2, 4, 8, seed);
            let kp = HeadArray::gaussian(2, 9, 8, seed ^ 1);
            let cfg = SLAConfig { topk_ratio: 0.3, ..SLAConfig::default() };
            let base = select_topk_blocks(&qp, &kp, &cfg);
            let c = 2f32.powi(e);
            let scale = |x: &HeadArray| HeadArray { data: x.data.iter().map(|v| v * c).collect(), ..x.clone() };
            let scaled = if scale_q {
                select_topk_blocks(&scale(&qp), &kp, &cfg)
            } else {
                select_topk_blocks(&qp, &scale(&kp), &cfg)
            };
            prop_assert_eq!(base, scaled);
        }

        #[test]
        fn linear_denominator_positive(seed in any::<u64>(), ratio in 0.05f32..0.9) {
            let inp = AttnInputs::gaussian(1, 64, 8, seed);
            let cfg = SLAConfig { q_block: 16, kv_block: 16, topk_ratio: ratio, ..SLAConfig::default() };
            let mask = select_topk_blocks(&pool_block_means(&inp.q, 16), &pool_block_means(&inp.k, 16), &cfg);
            let comp = mask.complement();
            let lin = linear_attention(&inp, Some(&comp));
            for qb in 0..4 {
                if !comp.selected(0, qb).is_empty() {
                    for i in qb * 16..(qb + 1) * 16 {
                        prop_assert!(lin.den[i] > 0.0);
                    }
                }
            }
        }

        #[test]
        fn full_topk_equals_reference_random_shapes(
            heads in 1usize..3, seq in 1usize..80, dim in 1usize..24,
            qb in 1usize..40, kvb in 1usize..40, mix in 0f32..10.0, seed in any::<u64>()
        ) {
            let inp = AttnInputs::gaussian(heads, seq, dim, seed);
            let cfg = SLAConfig {
                q_block: qb, kv_block: kvb, topk_ratio: 1.0, linear_mix: mix,
                quantized_sparse_branch: false, ..SLAConfig::default()
            };
            let m = error_metrics(&sla_attention(&inp, &cfg).data, &reference_attention(&inp).data).unwrap();
            prop_assert!(m.rel_l2 <= 1e-5, "{:?}", m);
        }
    }
}
