use serde::{Deserialize, Serialize};

use super::sparse::{selected_block_count, SLAConfig};

/// Analytic attention FLOPs (one multiply-add = 2 FLOPs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub heads: usize,
    pub seq: usize,
    pub head_dim: usize,
    /// `4 * heads * seq^2 * head_dim`.
    pub dense: u64,
    /// Softmax branch over the selected blocks.
    pub sparse: Option<u64>,
    /// `4 * heads * seq * head_dim^2`.
    pub linear: Option<u64>,
    /// `2 * heads * q_blocks * kv_blocks * head_dim`.
    pub selection: Option<u64>,
    pub selected_blocks: Option<usize>,
    pub num_kv_blocks: Option<usize>,
    /// `dense / sparse`.
    pub dense_over_sparse: Option<f64>,
}

impl FlopReport {
    pub fn accelerated_total(&self) -> u64 {
        match self.sparse {
            Some(s) => s + self.linear.unwrap_or(0) + self.selection.unwrap_or(0),
            None => self.dense,
        }
    }
}

/// Exact when `seq` is a multiple of `kv_block`; on ragged shapes the sparse
/// term assumes every selected block is full (an upper bound).
pub fn attention_flop_report(
    seq: usize,
    head_dim: usize,
    heads: usize,
    cfg: Option<&SLAConfig>,
) -> FlopReport {
    let (s, d, h) = (seq as u64, head_dim as u64, heads as u64);
    let dense = 4 * h * s * s * d;
    let mut r = FlopReport {
        heads,
        seq,
        head_dim,
        dense,
        sparse: None,
        linear: None,
        selection: None,
        selected_blocks: None,
        num_kv_blocks: None,
        dense_over_sparse: None,
    };
    if let Some(cfg) = cfg {
        let cfg = cfg.effective(seq);
        let nq = seq.div_ceil(cfg.q_block) as u64;
        let nkv = seq.div_ceil(cfg.kv_block);
        let k = selected_block_count(cfg.topk_ratio, nkv);
        let keys = ((k * cfg.kv_block) as u64).min(s);
        let sparse = 4 * h * d * s * keys;
        r.sparse = Some(sparse);
        r.linear = Some(4 * h * s * d * d);
        r.selection = Some(2 * h * nq * nkv as u64 * d);
        r.selected_blocks = Some(k);
        r.num_kv_blocks = Some(nkv);
        r.dense_over_sparse = Some(dense as f64 / sparse as f64);
    }
    r
}
