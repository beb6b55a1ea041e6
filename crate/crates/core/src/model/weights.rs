use crate::blockquant::{quantize_blockwise, BlockQuantConfig, BlockQuantized};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::gaussian_vec;
use crate::tensor_store::{ModelManifest, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub num_layers: usize,
}

impl ToyConfig {
    pub fn new(model_dim: usize, heads: usize, num_layers: usize) -> Result<Self> {
        let cfg = ToyConfig {
            model_dim,
            heads,
            mlp_hidden: 4 * model_dim,
            num_layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.mlp_hidden == 0 || self.num_layers == 0 {
            return Err(Error::InvalidConfig("model dims must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// A linear layer's weight `[in, out]`, dense or block-quantized.
#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    Dense(Mat),
    Quantized(BlockQuantized),
}

impl Linear {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Linear::Dense(m) => (m.rows, m.cols),
            Linear::Quantized(q) => (q.rows, q.cols),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Linear::Quantized(_))
    }

    pub fn quantize(&self, cfg: BlockQuantConfig) -> Result<Linear> {
        Ok(match self {
            Linear::Dense(m) => Linear::Quantized(quantize_blockwise(m, cfg)?),
            Linear::Quantized(q) => Linear::Quantized(q.clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyBlockWeights {
    pub rms_gain: Vec<f32>,
    pub ln_gain: Vec<f32>,
    pub ln_offset: Vec<f32>,
    /// `[dim, 3 * dim]`, output columns ordered q | k | v, heads contiguous.
    pub qkv: Linear,
    pub out: Linear,
    pub mlp_up: Linear,
    pub mlp_down: Linear,
    pub sigma_embed: Vec<f32>,
}

const LINEARS: [&str; 4] = ["qkv", "out", "mlp_up", "mlp_down"];
const VECTORS: [&str; 4] = ["rms_gain", "ln_gain", "ln_offset", "sigma_embed"];

impl ToyBlockWeights {
    /// Scaled Gaussian init: linears ~ N(0, 1/fan_in), unit gains, small
    /// offsets and sigma embedding.
    pub fn random(cfg: &ToyConfig, seed: u64) -> Self {
        let (d, hid) = (cfg.model_dim, cfg.mlp_hidden);
        let lin = |rows: usize, cols: usize, s: u64| {
            let std = 1.0 / (rows as f32).sqrt();
            let data = gaussian_vec(rows * cols, seed.wrapping_mul(31).wrapping_add(s))
                .into_iter()
                .map(|x| x * std)
                .collect();
            Linear::Dense(Mat::from_vec(rows, cols, data).unwrap())
        };
        let small = |s: u64| -> Vec<f32> {
            gaussian_vec(d, seed.wrapping_mul(31).wrapping_add(s))
                .into_iter()
                .map(|x| 0.1 * x)
                .collect()
        };
        ToyBlockWeights {
            rms_gain: vec![1.0; d],
            ln_gain: vec![1.0; d],
            ln_offset: small(5),
            qkv: lin(d, 3 * d, 1),
            out: lin(d, d, 2),
            mlp_up: lin(d, hid, 3),
            mlp_down: lin(hid, d, 4),
            sigma_embed: small(6),
        }
    }

    pub fn zeros(cfg: &ToyConfig) -> Self {
        let (d, hid) = (cfg.model_dim, cfg.mlp_hidden);
        ToyBlockWeights {
            rms_gain: vec![0.0; d],
            ln_gain: vec![0.0; d],
            ln_offset: vec![0.0; d],
            qkv: Linear::Dense(Mat::zeros(d, 3 * d)),
            out: Linear::Dense(Mat::zeros(d, d)),
            mlp_up: Linear::Dense(Mat::zeros(d, hid)),
            mlp_down: Linear::Dense(Mat::zeros(hid, d)),
            sigma_embed: vec![0.0; d],
        }
    }

    pub fn quantized(&self, cfg: BlockQuantConfig) -> Result<Self> {
        Ok(ToyBlockWeights {
            qkv: self.qkv.quantize(cfg)?,
            out: self.out.quantize(cfg)?,
            mlp_up: self.mlp_up.quantize(cfg)?,
            mlp_down: self.mlp_down.quantize(cfg)?,
            ..self.clone()
        })
    }

    pub fn check(&self, cfg: &ToyConfig) -> Result<()> {
        let (d, hid) = (cfg.model_dim, cfg.mlp_hidden);
        let want = [(d, 3 * d), (d, d), (d, hid), (hid, d)];
        for ((name, lin), w) in LINEARS.iter().zip(self.linears()).zip(want) {
            if lin.dims() != w {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {:?}, expected {w:?}",
                    lin.dims()
                )));
            }
        }
        for (name, v) in VECTORS.iter().zip(self.vectors()) {
            if v.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has length {}, expected {d}",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    fn linears(&self) -> [&Linear; 4] {
        [&self.qkv, &self.out, &self.mlp_up, &self.mlp_down]
    }

    fn vectors(&self) -> [&Vec<f32>; 4] {
        [&self.rms_gain, &self.ln_gain, &self.ln_offset, &self.sigma_embed]
    }

    /// Adds this layer's parameters as `layer{idx}.<name>`; quantized
    /// linears become `<name>.q` (I8) and `<name>.scales` (F32).
    pub fn export(&self, idx: usize, m: &mut ModelManifest) -> Result<()> {
        for (name, v) in VECTORS.iter().zip(self.vectors()) {
            m.insert(
                format!("layer{idx}.{name}"),
                Tensor::from_f32(vec![v.len()], v.clone())?,
            )?;
        }
        for (name, lin) in LINEARS.iter().zip(self.linears()) {
            let key = format!("layer{idx}.{name}");
            match lin {
                Linear::Dense(w) => m.insert(key, w.to_tensor())?,
                Linear::Quantized(q) => {
                    let (codes, scales) = q.to_tensors();
                    m.insert(format!("{key}.q"), codes)?;
                    m.insert(format!("{key}.scales"), scales)?;
                }
            }
        }
        Ok(())
    }

    pub fn import(idx: usize, m: &ModelManifest) -> Result<Self> {
        let missing = |k: &str| Error::ParameterSetMismatch(format!("missing parameter `{k}`"));
        let vector = |name: &str| -> Result<Vec<f32>> {
            let key = format!("layer{idx}.{name}");
            let t = m.get(&key).ok_or_else(|| missing(&key))?;
            t.as_f32()
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::InvalidTensor(format!("`{key}` must be F32")))
        };
        let linear = |name: &str| -> Result<Linear> {
            let key = format!("layer{idx}.{name}");
            if let Some(t) = m.get(&key) {
                return Ok(Linear::Dense(Mat::from_tensor(t)?));
            }
            let q = m
                .get(&format!("{key}.q"))
                .ok_or_else(|| missing(&key))?;
            let s = m
                .get(&format!("{key}.scales"))
                .ok_or_else(|| missing(&format!("{key}.scales")))?;
            let block = m.metadata.block.unwrap_or(crate::blockquant::DEFAULT_BLOCK);
            Ok(Linear::Quantized(BlockQuantized::from_tensors(q, s, block)?))
        };
        Ok(ToyBlockWeights {
            rms_gain: vector("rms_gain")?,
            ln_gain: vector("ln_gain")?,
            ln_offset: vector("ln_offset")?,
            qkv: linear("qkv")?,
            out: linear("out")?,
            mlp_up: linear("mlp_up")?,
            mlp_down: linear("mlp_down")?,
            sigma_embed: vector("sigma_embed")?,
        })
    }
}
