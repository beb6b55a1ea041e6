//! Attention kernels: dense reference, INT8 attention with key smoothing,
//! block top-k selection, linear attention and their sparse-linear
//! combination, plus FLOP accounting and accuracy metrics.
//!
//! All arrays are `[heads, seq, head_dim]` row-major. Heads are processed in
//! parallel; every reduction runs in a fixed ascending order, so results do
//! not depend on the thread count.

mod array;
mod counter;
mod flops;
mod metrics;
mod quant;
mod reference;
mod sparse;

pub use array::{AttnInputs, HeadArray};
pub use counter::{MacCounter, MacCounts};
pub use flops::{attention_flop_report, FlopReport};
pub use metrics::{error_metrics, ErrorMetrics};
pub use quant::{quantized_attention, smooth_keys, QuantAttnConfig, SmoothedKeys};
pub use reference::{reference_attention, reference_attention_counted, reference_probabilities};
pub use sparse::{
    feature_map, linear_attention, pool_block_means, select_topk_blocks, selected_block_count,
    sla_attention, sla_attention_counted, sla_attention_with, BlockMask, LinearTerms, SLAConfig,
    TopkSelector,
};

/// Numerically stable in-place softmax of one row; returns the row max and
/// the sum of exponentials.
pub(crate) fn softmax_row(row: &mut [f32]) -> (f32, f32) {
    let (max, sum) = exp_row(row);
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|x| *x *= inv);
    (max, sum)
}

/// Replaces each entry by `exp(x - max)`; returns `(max, sum)`.
pub(crate) fn exp_row(row: &mut [f32]) -> (f32, f32) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f32;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    (max, sum)
}
