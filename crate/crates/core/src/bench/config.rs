use serde::{Deserialize, Serialize};

use crate::attention::SLAConfig;
use crate::error::{Error, Result};
use crate::model::{AttnMode, BlockOptions, ToyConfig, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Attention,
    Linear,
    Norms,
    E2e,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Attention => "attention",
            BenchKind::Linear => "linear",
            BenchKind::Norms => "norms",
            BenchKind::E2e => "e2e",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seq: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub num_layers: usize,
    pub steps_baseline: usize,
    pub steps_fast: usize,
    pub topk_ratio: f32,
    pub quantize_linear: bool,
    pub quantize_attention: bool,
    pub repeats: usize,
    pub seed: u64,
    /// Seconds charged per expert switch; only two-expert runs switch.
    pub switch_latency_s: f32,
    pub two_expert: bool,
    /// Defaults to the midpoint of the sigma range.
    pub boundary_sigma: Option<f32>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seq: 1024,
            model_dim: 256,
            heads: 4,
            head_dim: 64,
            num_layers: 2,
            steps_baseline: 100,
            steps_fast: 3,
            topk_ratio: 0.1,
            quantize_linear: true,
            quantize_attention: true,
            repeats: 5,
            seed: 0,
            switch_latency_s: 0.0,
            two_expert: false,
            boundary_sigma: None,
        }
    }
}

/// Attention kernel used by the accelerated configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttnPlan {
    Dense,
    Quantized,
    Sla(SLAConfig),
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("seq", self.seq),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("num_layers", self.num_layers),
            ("steps_baseline", self.steps_baseline),
            ("steps_fast", self.steps_fast),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.heads * self.head_dim != self.model_dim {
            return bad(format!(
                "heads ({}) x head_dim ({}) must equal model_dim ({})",
                self.heads, self.head_dim, self.model_dim
            ));
        }
        if self.steps_fast > self.steps_baseline {
            return bad(format!(
                "steps_fast ({}) exceeds steps_baseline ({})",
                self.steps_fast, self.steps_baseline
            ));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return bad(format!("topk_ratio must lie in (0, 1], got {}", self.topk_ratio));
        }
        if self.repeats < 3 {
            return bad(format!("repeats must be at least 3, got {}", self.repeats));
        }
        if !(self.switch_latency_s >= 0.0 && self.switch_latency_s.is_finite()) {
            return bad(format!("switch latency must be >= 0, got {}", self.switch_latency_s));
        }
        if let Some(b) = self.boundary_sigma {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("boundary sigma must be positive, got {b}"));
            }
        }
        Ok(())
    }

    pub fn toy_config(&self) -> Result<ToyConfig> {
        ToyConfig::new(self.model_dim, self.heads, self.num_layers)
    }

    /// Top-k 1 without quantization means no attention acceleration at all.
    pub fn attn_plan(&self) -> AttnPlan {
        if self.topk_ratio >= 1.0 {
            if self.quantize_attention {
                AttnPlan::Quantized
            } else {
                AttnPlan::Dense
            }
        } else {
            AttnPlan::Sla(SLAConfig {
                topk_ratio: self.topk_ratio,
                quantized_sparse_branch: self.quantize_attention,
                ..SLAConfig::default()
            })
        }
    }

    pub fn fast_block_options(&self) -> BlockOptions {
        match self.attn_plan() {
            AttnPlan::Dense => BlockOptions::default(),
            AttnPlan::Quantized => BlockOptions {
                mode: AttnMode::Quantized,
                ..BlockOptions::default()
            },
            AttnPlan::Sla(sla) => BlockOptions {
                mode: AttnMode::Sla,
                sla,
                ..BlockOptions::default()
            },
        }
    }

    pub fn boundary(&self) -> f32 {
        self.boundary_sigma
            .unwrap_or(0.5 * (DEFAULT_SIGMA_MAX + DEFAULT_SIGMA_MIN))
    }
}
