//! Row-major F32 matrices and the GEMM kernels shared by the dense and
//! accelerated paths.
//!
//! Every output element is accumulated in ascending inner-index order starting
//! from its initial value, whatever the tiling or thread count, so results are
//! bit-reproducible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_store::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        transpose_into(self.rows, self.cols, &self.data, &mut out.data);
        out
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        gemm_acc(self.rows, self.cols, rhs.cols, &self.data, &rhs.data, &mut out.data);
        Ok(out)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.rows, self.cols], self.data.clone())
            .expect("matrix dims are consistent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Mat> {
        let data = t
            .as_f32()
            .ok_or_else(|| Error::ShapeMismatch("expected an F32 tensor".into()))?;
        match *t.dims() {
            [r, c] => Mat::from_vec(r, c, data.to_vec()),
            [n] => Mat::from_vec(1, n, data.to_vec()),
            ref d => Err(Error::ShapeMismatch(format!(
                "expected a rank-2 tensor, got dims {d:?}"
            ))),
        }
    }
}

pub fn transpose_into(rows: usize, cols: usize, src: &[f32], dst: &mut [f32]) {
    const T: usize = 32;
    for i0 in (0..rows).step_by(T) {
        for j0 in (0..cols).step_by(T) {
            for i in i0..(i0 + T).min(rows) {
                for j in j0..(j0 + T).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

const MR: usize = 4;
const NR: usize = 16;
const ROW_CHUNK: usize = 64;

/// `c[m x n] += a[m x k] * b[k x n]`, all row-major.
pub fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let work = m * k * n;
    if work < (1 << 18) || m <= ROW_CHUNK {
        gemm_rows(0, m, k, n, a, b, c);
        return;
    }
    c.par_chunks_mut(ROW_CHUNK * n)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let rows = chunk.len() / n;
            let r0 = ci * ROW_CHUNK;
            gemm_rows(0, rows, k, n, &a[r0 * k..(r0 + rows) * k], b, chunk);
        });
}

fn gemm_rows(r0: usize, r1: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let full_n = n - n % NR;
    for j0 in (0..full_n).step_by(NR) {
        let mut i = r0;
        while i + MR <= r1 {
            tile_4x16(i, j0, k, n, a, b, c);
            i += MR;
        }
        for ii in i..r1 {
            tile_1xw(ii, j0, NR, k, n, a, b, c);
        }
    }
    if full_n < n {
        for ii in r0..r1 {
            tile_1xw(ii, full_n, n - full_n, k, n, a, b, c);
        }
    }
}

#[inline(always)]
fn tile_4x16(i: usize, j0: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let mut acc = [[0f32; NR]; MR];
    for (r, acc_r) in acc.iter_mut().enumerate() {
        acc_r.copy_from_slice(&c[(i + r) * n + j0..(i + r) * n + j0 + NR]);
    }
    let a0 = &a[i * k..(i + 1) * k];
    let a1 = &a[(i + 1) * k..(i + 2) * k];
    let a2 = &a[(i + 2) * k..(i + 3) * k];
    let a3 = &a[(i + 3) * k..(i + 4) * k];
    for p in 0..k {
        let brow: &[f32; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
        for j in 0..NR {
            acc[0][j] += x0 * brow[j];
            acc[1][j] += x1 * brow[j];
            acc[2][j] += x2 * brow[j];
            acc[3][j] += x3 * brow[j];
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        c[(i + r) * n + j0..(i + r) * n + j0 + NR].copy_from_slice(acc_r);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile_1xw(i: usize, j0: usize, w: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let crow = &mut c[i * n + j0..i * n + j0 + w];
    for p in 0..k {
        let x = a[i * k + p];
        let brow = &b[p * n + j0..p * n + j0 + w];
        for (cv, &bv) in crow.iter_mut().zip(brow) {
            *cv += x * bv;
        }
    }
}

/// Signed 8-bit dot product with exact 32-bit accumulation.
#[inline]
pub fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| i32::from(x) * i32::from(y))
        .sum()
}
