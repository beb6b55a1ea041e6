use crate::error::{Error, Result};
use crate::rng::gaussian_vec;

/// `[heads, seq, dim]` row-major F32 array.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadArray {
    pub heads: usize,
    pub seq: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl HeadArray {
    pub fn zeros(heads: usize, seq: usize, dim: usize) -> Self {
        HeadArray {
            heads,
            seq,
            dim,
            data: vec![0.0; heads * seq * dim],
        }
    }

    pub fn from_vec(heads: usize, seq: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != heads * seq * dim {
            return Err(Error::ShapeMismatch(format!(
                "[{heads}, {seq}, {dim}] needs {} elements, got {}",
                heads * seq * dim,
                data.len()
            )));
        }
        Ok(HeadArray {
            heads,
            seq,
            dim,
            data,
        })
    }

    pub fn gaussian(heads: usize, seq: usize, dim: usize, seed: u64) -> Self {
        HeadArray {
            heads,
            seq,
            dim,
            data: gaussian_vec(heads * seq * dim, seed),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.heads, self.seq, self.dim]
    }

    pub fn head(&self, h: usize) -> &[f32] {
        let n = self.seq * self.dim;
        &self.data[h * n..(h + 1) * n]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut [f32] {
        let n = self.seq * self.dim;
        &mut self.data[h * n..(h + 1) * n]
    }

    pub fn row(&self, h: usize, i: usize) -> &[f32] {
        let off = (h * self.seq + i) * self.dim;
        &self.data[off..off + self.dim]
    }

    pub(crate) fn from_heads(seq: usize, dim: usize, heads: Vec<Vec<f32>>) -> Self {
        let n = heads.len();
        HeadArray {
            heads: n,
            seq,
            dim,
            data: heads.concat(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnInputs {
    pub q: HeadArray,
    pub k: HeadArray,
    pub v: HeadArray,
    pub scale: f32,
}

impl AttnInputs {
    /// Validates shapes and sets `scale = 1/sqrt(head_dim)`.
    pub fn new(q: HeadArray, k: HeadArray, v: HeadArray) -> Result<Self> {
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(Error::ShapeMismatch(format!(
                "q {:?}, k {:?}, v {:?} must match",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        if q.heads == 0 || q.seq == 0 || q.dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "heads, seq and head_dim must be >= 1, got {:?}",
                q.shape()
            )));
        }
        let scale = 1.0 / (q.dim as f32).sqrt();
        Ok(AttnInputs { q, k, v, scale })
    }

    pub fn with_scale(mut self, scale: f32) -> Self {
        self.scale = scale;
        self
    }

    /// Independent standard-normal q, k, v drawn from `seed`.
    pub fn gaussian(heads: usize, seq: usize, dim: usize, seed: u64) -> Self {
        let n = heads * seq * dim;
        let all = gaussian_vec(3 * n, seed);
        let q = HeadArray::from_vec(heads, seq, dim, all[..n].to_vec()).unwrap();
        let k = HeadArray::from_vec(heads, seq, dim, all[n..2 * n].to_vec()).unwrap();
        let v = HeadArray::from_vec(heads, seq, dim, all[2 * n..].to_vec()).unwrap();
        AttnInputs::new(q, k, v).expect("gaussian shapes are valid")
    }

    pub fn heads(&self) -> usize {
        self.q.heads
    }

    pub fn seq(&self) -> usize {
        self.q.seq
    }

    pub fn dim(&self) -> usize {
        self.q.dim
    }
}
