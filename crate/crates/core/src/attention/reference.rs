use rayon::prelude::*;

use super::array::{AttnInputs, HeadArray};
use super::counter::MacCounter;
use super::softmax_row;
use crate::linalg::{gemm_acc, transpose_into, Mat};

/// `softmax(scale * Q K^T)` for one head, row-major `seq x seq`.
fn head_probabilities(inp: &AttnInputs, h: usize, counter: Option<&MacCounter>) -> Vec<f32> {
    let (s, d) = (inp.seq(), inp.dim());
    let mut kt = vec![0f32; s * d];
    transpose_into(s, d, inp.k.head(h), &mut kt);
    let mut p = vec![0f32; s * s];
    gemm_acc(s, d, s, inp.q.head(h), &kt, &mut p);
    MacCounter::add_dense(counter, (s * s * d) as u64);
    for row in p.chunks_mut(s) {
        row.iter_mut().for_each(|x| *x *= inp.scale);
        softmax_row(row);
    }
    p
}

fn head_output(inp: &AttnInputs, h: usize, counter: Option<&MacCounter>) -> Vec<f32> {
    let (s, d) = (inp.seq(), inp.dim());
    let p = head_probabilities(inp, h, counter);
    let mut out = vec![0f32; s * d];
    gemm_acc(s, s, d, &p, inp.v.head(h), &mut out);
    MacCounter::add_dense(counter, (s * s * d) as u64);
    out
}

/// Dense softmax attention, per head `softmax(scale * Q K^T) V` in F32.
pub fn reference_attention(inp: &AttnInputs) -> HeadArray {
    reference_attention_counted(inp, None)
}

pub fn reference_attention_counted(inp: &AttnInputs, counter: Option<&MacCounter>) -> HeadArray {
    let heads: Vec<Vec<f32>> = (0..inp.heads())
        .into_par_iter()
        .map(|h| head_output(inp, h, counter))
        .collect();
    HeadArray::from_heads(inp.seq(), inp.dim(), heads)
}

/// Debug hook: the per-head probability matrices used by the reference path.
pub fn reference_probabilities(inp: &AttnInputs) -> Vec<Mat> {
    let s = inp.seq();
    (0..inp.heads())
        .map(|h| Mat::from_vec(s, s, head_probabilities(inp, h, None)).unwrap())
        .collect()
}
