use std::time::{Duration, Instant};

use super::norm::{layernorm, rmsnorm, DEFAULT_EPS};
use super::weights::{Linear, ToyBlockWeights, ToyConfig};
use crate::attention::{
    quantized_attention, reference_attention, sla_attention, AttnInputs, HeadArray,
    QuantAttnConfig, SLAConfig,
};
use crate::blockquant::{quantized_linear_forward, BlockQuantConfig};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor_store::ModelManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnMode {
    Dense,
    Quantized,
    Sla,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOptions {
    pub mode: AttnMode,
    pub sla: SLAConfig,
    pub quant: QuantAttnConfig,
    pub eps: f32,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            mode: AttnMode::Dense,
            sla: SLAConfig::default(),
            quant: QuantAttnConfig::default(),
            eps: DEFAULT_EPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Attention,
    Linear,
    Norms,
    Other,
}

/// Wall-clock accumulated per stage of the block forward.
#[derive(Clone, Debug, Default)]
pub struct StageClock {
    pub attention: Duration,
    pub linear: Duration,
    pub norms: Duration,
    pub other: Duration,
}

impl StageClock {
    pub fn time<R>(&mut self, stage: Stage, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        let dt = t.elapsed();
        match stage {
            Stage::Attention => self.attention += dt,
            Stage::Linear => self.linear += dt,
            Stage::Norms => self.norms += dt,
            Stage::Other => self.other += dt,
        }
        r
    }

    pub fn total(&self) -> Duration {
        self.attention + self.linear + self.norms + self.other
    }
}

fn apply_linear(x: &Mat, w: &Linear) -> Result<Mat> {
    match w {
        Linear::Dense(m) => x.matmul(m),
        Linear::Quantized(q) => quantized_linear_forward(x, q, None),
    }
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Noise-level embedding scale, `ln(sigma) / 4`.
fn sigma_feature(sigma: f32) -> f32 {
    if sigma > 0.0 {
        0.25 * sigma.ln()
    } else {
        0.0
    }
}

fn split_heads(qkv: &Mat, heads: usize, which: usize) -> HeadArray {
    let d = qkv.cols / 3;
    let hd = d / heads;
    let seq = qkv.rows;
    let mut out = HeadArray::zeros(heads, seq, hd);
    for h in 0..heads {
        let dst = out.head_mut(h);
        for i in 0..seq {
            let src = &qkv.row(i)[which * d + h * hd..which * d + (h + 1) * hd];
            dst[i * hd..(i + 1) * hd].copy_from_slice(src);
        }
    }
    out
}

fn merge_heads(a: &HeadArray) -> Mat {
    let d = a.heads * a.dim;
    let mut out = Mat::zeros(a.seq, d);
    for h in 0..a.heads {
        for i in 0..a.seq {
            out.row_mut(i)[h * a.dim..(h + 1) * a.dim].copy_from_slice(a.row(h, i));
        }
    }
    out
}

/// One residual block:
///
/// ```text
/// e  = ln(sigma)/4 * sigma_embed
/// x1 = x  + out(attn(rmsnorm(x + e)))
/// x2 = x1 + down(gelu(up(layernorm(x1 + e))))
/// ```
///
/// Linears run through the W8A8 path when their weights are quantized.
pub fn toy_block_forward(
    x: &Mat,
    sigma: f32,
    w: &ToyBlockWeights,
    cfg: &ToyConfig,
    opts: &BlockOptions,
    clock: &mut StageClock,
) -> Result<Mat> {
    if x.cols != cfg.model_dim {
        return Err(Error::ShapeMismatch(format!(
            "block input has {} features, model_dim is {}",
            x.cols, cfg.model_dim
        )));
    }
    w.check(cfg)?;
    let e = sigma_feature(sigma);
    let embed = |m: &Mat| -> Mat {
        let mut h = m.clone();
        if e != 0.0 {
            for row in h.data.chunks_mut(m.cols) {
                for (v, &s) in row.iter_mut().zip(&w.sigma_embed) {
                    *v += e * s;
                }
            }
        }
        h
    };

    let h = clock.time(Stage::Other, || embed(x));
    let normed = clock.time(Stage::Norms, || rmsnorm(&h, &w.rms_gain, opts.eps));
    let qkv = clock.time(Stage::Linear, || apply_linear(&normed, &w.qkv))?;
    let attn = clock.time(Stage::Attention, || -> Result<Mat> {
        let inp = AttnInputs::new(
            split_heads(&qkv, cfg.heads, 0),
            split_heads(&qkv, cfg.heads, 1),
            split_heads(&qkv, cfg.heads, 2),
        )?;
        let o = match opts.mode {
            AttnMode::Dense => reference_attention(&inp),
            AttnMode::Quantized => quantized_attention(&inp, &opts.quant),
            AttnMode::Sla => sla_attention(&inp, &opts.sla),
        };
        Ok(merge_heads(&o))
    })?;
    let proj = clock.time(Stage::Linear, || apply_linear(&attn, &w.out))?;
    let x1 = clock.time(Stage::Other, || {
        let mut x1 = x.clone();
        x1.data.iter_mut().zip(&proj.data).for_each(|(a, b)| *a += b);
        x1
    });

    let h2 = clock.time(Stage::Other, || embed(&x1));
    let normed = clock.time(Stage::Norms, || layernorm(&h2, &w.ln_gain, &w.ln_offset, opts.eps));
    let mut up = clock.time(Stage::Linear, || apply_linear(&normed, &w.mlp_up))?;
    clock.time(Stage::Other, || up.data.iter_mut().for_each(|v| *v = gelu(*v)));
    let down = clock.time(Stage::Linear, || apply_linear(&up, &w.mlp_down))?;
    Ok(clock.time(Stage::Other, || {
        let mut x2 = x1;
        x2.data.iter_mut().zip(&down.data).for_each(|(a, b)| *a += b);
        x2
    }))
}

/// A stack of toy blocks; its output is used directly as the clean-sample
/// estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub cfg: ToyConfig,
    pub layers: Vec<ToyBlockWeights>,
}

impl ToyModel {
    pub fn random(cfg: ToyConfig, seed: u64) -> Self {
        let layers = (0..cfg.num_layers)
            .map(|l| ToyBlockWeights::random(&cfg, seed.wrapping_add(1000 * l as u64)))
            .collect();
        ToyModel { cfg, layers }
    }

    pub fn zeros(cfg: ToyConfig) -> Self {
        ToyModel {
            cfg,
            layers: vec![ToyBlockWeights::zeros(&cfg); cfg.num_layers],
        }
    }

    pub fn quantized(&self, qcfg: BlockQuantConfig) -> Result<Self> {
        Ok(ToyModel {
            cfg: self.cfg,
            layers: self
                .layers
                .iter()
                .map(|l| l.quantized(qcfg))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward(&self, x: &Mat, sigma: f32, opts: &BlockOptions, clock: &mut StageClock) -> Result<Mat> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = toy_block_forward(&h, sigma, layer, &self.cfg, opts, clock)?;
        }
        Ok(h)
    }

    pub fn to_manifest(&self, name: &str) -> Result<ModelManifest> {
        let mut m = ModelManifest::new(name);
        m.metadata.extra.insert("heads".into(), self.cfg.heads.to_string());
        let quantized = self.layers.iter().any(|l| l.qkv.is_quantized());
        m.metadata.quantized = Some(quantized);
        if let (true, Linear::Quantized(q)) = (quantized, &self.layers[0].qkv) {
            m.metadata.block = Some(q.block);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.export(i, &mut m)?;
        }
        Ok(m)
    }

    /// Reads layers `layer0..` until one is missing; `meta.heads` gives the
    /// head count.
    pub fn from_manifest(m: &ModelManifest) -> Result<Self> {
        let heads: usize = m
            .metadata
            .extra
            .get("heads")
            .ok_or_else(|| Error::BadMetadata {
                key: "heads".into(),
                value: String::new(),
                msg: "toy model manifests need meta.heads".into(),
            })?
            .parse()
            .map_err(|_| Error::BadMetadata {
                key: "heads".into(),
                value: m.metadata.extra["heads"].clone(),
                msg: "expected an integer".into(),
            })?;
        let mut layers = Vec::new();
        while m.get(&format!("layer{}.rms_gain", layers.len())).is_some() {
            layers.push(ToyBlockWeights::import(layers.len(), m)?);
        }
        if layers.is_empty() {
            return Err(Error::ParameterSetMismatch("manifest has no toy layers".into()));
        }
        let cfg = ToyConfig {
            model_dim: layers[0].rms_gain.len(),
            heads,
            mlp_hidden: layers[0].mlp_up.dims().1,
            num_layers: layers.len(),
        };
        cfg.validate()?;
        for l in &layers {
            l.check(&cfg)?;
        }
        Ok(ToyModel { cfg, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::error_metrics;
    use crate::rng::gaussian_vec;

    fn input(seq: usize, d: usize, seed: u64) -> Mat {
        Mat::from_vec(seq, d, gaussian_vec(seq * d, seed)).unwrap()
    }

    #[test]
    fn zero_weights_are_identity_bit_exactly() {
        let cfg = ToyConfig::new(32, 4, 2).unwrap();
        let x = input(48, 32, 1);
        for quantize in [false, true] {
            let mut model = ToyModel::zeros(cfg);
            if quantize {
                model = model.quantized(BlockQuantConfig::default()).unwrap();
            }
            for mode in [AttnMode::Dense, AttnMode::Quantized, AttnMode::Sla] {
                let opts = BlockOptions { mode, ..Default::default() };
                let y = model.forward(&x, 3.0, &opts, &mut StageClock::default()).unwrap();
                assert!(y.data.iter().zip(&x.data).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn sla_full_ratio_matches_dense_block() {
        let cfg = ToyConfig::new(64, 4, 1).unwrap();
        let w = ToyBlockWeights::random(&cfg, 3);
        let x = input(96, 64, 2);
        let dense = toy_block_forward(&x, 1.5, &w, &cfg, &BlockOptions::default(), &mut StageClock::default()).unwrap();
        let opts = BlockOptions {
            mode: AttnMode::Sla,
            sla: SLAConfig {
                topk_ratio: 1.0,
                quantized_sparse_branch: false,
                q_block: 32,
                kv_block: 32,
                ..SLAConfig::default()
            },
            ..Default::default()
        };
        let sla = toy_block_forward(&x, 1.5, &w, &cfg, &opts, &mut StageClock::default()).unwrap();
        assert!(error_metrics(&sla.data, &dense.data).unwrap().rel_l2 <= 1e-5);
    }

    #[test]
    fn fully_quantized_block_tracks_dense() {
        let cfg = ToyConfig::new(128, 4, 1).unwrap();
        let w = ToyBlockWeights::random(&cfg, 13);
        let x = input(128, 128, 13);
        let mut clock = StageClock::default();
        let dense = toy_block_forward(&x, 2.0, &w, &cfg, &BlockOptions::default(), &mut clock).unwrap();
        let wq = w.quantized(BlockQuantConfig::default()).unwrap();
        let opts = BlockOptions {
            mode: AttnMode::Quantized,
            ..Default::default()
        };
        let fast = toy_block_forward(&x, 2.0, &wq, &cfg, &opts, &mut clock).unwrap();
        let m = error_metrics(&fast.data, &dense.data).unwrap();
        assert!(m.cosine >= 0.999, "{m:?}");
        assert!(clock.linear > Duration::ZERO && clock.attention > Duration::ZERO);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = ToyConfig::new(32, 4, 1).unwrap();
        let w = ToyBlockWeights::random(&cfg, 1);
        let x = input(8, 31, 1);
        assert!(matches!(
            toy_block_forward(&x, 1.0, &w, &cfg, &BlockOptions::default(), &mut StageClock::default()),
            Err(Error::ShapeMismatch(_))
        ));
        let bad = ToyConfig { mlp_hidden: 64, ..cfg };
        assert!(toy_block_forward(&input(8, 32, 1), 1.0, &w, &bad, &BlockOptions::default(), &mut StageClock::default()).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = ToyConfig::new(32, 2, 2).unwrap();
        let model = ToyModel::random(cfg, 9);
        let back = ToyModel::from_manifest(&model.to_manifest("toy").unwrap()).unwrap();
        assert_eq!(back, model);
        let q = model.quantized(BlockQuantConfig { block: 16 }).unwrap();
        let m = q.to_manifest("toyq").unwrap();
        assert_eq!(m.metadata.block, Some(16));
        assert!(m.get("layer1.mlp_down.q").is_some());
        assert_eq!(ToyModel::from_manifest(&m).unwrap(), q);
    }
}
