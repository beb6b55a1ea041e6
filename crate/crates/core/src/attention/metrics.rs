use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub cosine: f64,
    pub rel_l2: f64,
}

/// Cosine similarity and `||a - b|| / ||b||` over the flattened arrays,
/// accumulated in f64.
pub fn error_metrics(a: &[f32], b: &[f32]) -> Result<ErrorMetrics> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs have {} and {} elements",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut aa, mut bb, mut diff) = (0f64, 0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        aa += x * x;
        bb += y * y;
        diff += (x - y) * (x - y);
    }
    if aa == 0.0 {
        return Err(Error::ZeroNorm("first operand"));
    }
    if bb == 0.0 {
        return Err(Error::ZeroNorm("reference operand"));
    }
    Ok(ErrorMetrics {
        cosine: dot / (aa.sqrt() * bb.sqrt()),
        rel_l2: diff.sqrt() / bb.sqrt(),
    })
}
