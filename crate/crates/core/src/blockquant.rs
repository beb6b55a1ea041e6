//! Block-wise symmetric INT8 quantization and the W8A8 matmul.
//!
//! Each `block x block` tile gets one F32 scale `absmax / 127`; codes are
//! `round_ties_even(x / scale)` clamped to `[-127, 127]`. An all-zero tile has
//! scale 0 and all-zero codes. Edge tiles use their actual extent.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor_store::Tensor;

pub const DEFAULT_BLOCK: usize = 128;
pub const QMAX: f32 = 127.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockQuantConfig {
    pub block: usize,
}

impl Default for BlockQuantConfig {
    fn default() -> Self {
        BlockQuantConfig {
            block: DEFAULT_BLOCK,
        }
    }
}

impl BlockQuantConfig {
    pub fn new(block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::InvalidConfig("block must be >= 1".into()));
        }
        Ok(BlockQuantConfig { block })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockQuantized {
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
    /// Row-major `rows x cols` codes in `[-127, 127]`.
    pub q: Vec<i8>,
    /// Row-major `ceil(rows/block) x ceil(cols/block)` scales.
    pub scales: Vec<f32>,
}

impl BlockQuantized {
    pub fn block_rows(&self) -> usize {
        self.rows.div_ceil(self.block)
    }

    pub fn block_cols(&self) -> usize {
        self.cols.div_ceil(self.block)
    }

    pub fn num_blocks(&self) -> usize {
        self.scales.len()
    }

    pub fn scale_at(&self, i: usize, j: usize) -> f32 {
        self.scales[(i / self.block) * self.block_cols() + j / self.block]
    }

    /// Storage bytes: one per code plus four per scale.
    pub fn storage_bytes(&self) -> usize {
        self.q.len() + 4 * self.scales.len()
    }

    /// `(q as I8 [rows, cols], scales as F32 [block_rows, block_cols])`.
    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        let q = Tensor::from_i8(vec![self.rows, self.cols], self.q.clone())
            .expect("consistent dims");
        let s = Tensor::from_f32(
            vec![self.block_rows(), self.block_cols()],
            self.scales.clone(),
        )
        .expect("consistent dims");
        (q, s)
    }

    pub fn from_tensors(q: &Tensor, scales: &Tensor, block: usize) -> Result<Self> {
        let bad = |msg: String| Error::InvalidTensor(msg);
        let codes = q
            .as_i8()
            .ok_or_else(|| bad("quantized codes must be I8".into()))?;
        let sc = scales
            .as_f32()
            .ok_or_else(|| bad("quantization scales must be F32".into()))?;
        let (rows, cols) = match *q.dims() {
            [r, c] => (r, c),
            ref d => return Err(bad(format!("codes must be rank 2, got {d:?}"))),
        };
        if block == 0 {
            return Err(bad("block must be >= 1".into()));
        }
        let want = [rows.div_ceil(block), cols.div_ceil(block)];
        if scales.dims() != want {
            return Err(bad(format!(
                "scales dims {:?} do not match {want:?} for {rows}x{cols} at block {block}",
                scales.dims()
            )));
        }
        let bq = BlockQuantized {
            rows,
            cols,
            block,
            q: codes.to_vec(),
            scales: sc.to_vec(),
        };
        bq.validate()?;
        Ok(bq)
    }

    fn validate(&self) -> Result<()> {
        if let Some(&c) = self.q.iter().find(|&&c| c == i8::MIN) {
            return Err(Error::InvalidTensor(format!("code {c} outside [-127, 127]")));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidTensor(format!("invalid scale {s}")));
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.scale_at(i, j) == 0.0 && self.q[i * self.cols + j] != 0 {
                    return Err(Error::InvalidTensor(
                        "non-zero code inside a zero-scale block".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `absmax / 127`, nudged to a fixed point of `s -> (127 s) / 127` so that
/// re-quantizing a dequantized block reproduces the same scale bit-exactly.
pub(crate) fn block_scale(absmax: f32) -> f32 {
    let mut s = absmax / QMAX;
    for _ in 0..4 {
        let again = (s * QMAX) / QMAX;
        if again == s {
            break;
        }
        s = again;
    }
    s
}

#[inline]
pub(crate) fn quantize_value(x: f32, scale: f32) -> i8 {
    (x / scale).round_ties_even().clamp(-QMAX, QMAX) as i8
}

pub fn quantize_blockwise(m: &Mat, cfg: BlockQuantConfig) -> Result<BlockQuantized> {
    if let Some(index) = m.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let b = cfg.block;
    if b == 0 {
        return Err(Error::InvalidConfig("block must be >= 1".into()));
    }
    let (br, bc) = (m.rows.div_ceil(b), m.cols.div_ceil(b));
    let mut scales = vec![0f32; br * bc];
    let mut q = vec![0i8; m.rows * m.cols];

    // One band of block rows per task; bands are disjoint in both outputs.
    q.par_chunks_mut(b * m.cols)
        .zip(scales.par_chunks_mut(bc))
        .enumerate()
        .for_each(|(bi, (qband, sband))| {
            let r0 = bi * b;
            let rows = qband.len() / m.cols;
            for (bj, scale_out) in sband.iter_mut().enumerate() {
                let c0 = bj * b;
                let c1 = (c0 + b).min(m.cols);
                let mut absmax = 0f32;
                for r in r0..r0 + rows {
                    for &x in &m.row(r)[c0..c1] {
                        absmax = absmax.max(x.abs());
                    }
                }
                if absmax == 0.0 {
                    continue;
                }
                let s = block_scale(absmax);
                *scale_out = s;
                for r in 0..rows {
                    let src = &m.row(r0 + r)[c0..c1];
                    let dst = &mut qband[r * m.cols + c0..r * m.cols + c1];
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d = quantize_value(x, s);
                    }
                }
            }
        });

    Ok(BlockQuantized {
        rows: m.rows,
        cols: m.cols,
        block: b,
        q,
        scales,
    })
}

pub fn dequantize_blockwise(bq: &BlockQuantized) -> Mat {
    let mut out = Mat::zeros(bq.rows, bq.cols);
    let bc = bq.block_cols();
    for i in 0..bq.rows {
        let srow = &bq.scales[(i / bq.block) * bc..(i / bq.block + 1) * bc];
        let qrow = &bq.q[i * bq.cols..(i + 1) * bq.cols];
        for (j, (o, &c)) in out.row_mut(i).iter_mut().zip(qrow).enumerate() {
            *o = f32::from(c) * srow[j / bq.block];
        }
    }
    out
}

/// INT8 x INT8 matmul with exact per-block integer partial sums.
///
/// For each output element the inner dimension is walked one block segment at
/// a time in ascending order: the segment dot product is accumulated in `i32`
/// (at most `128 * 127^2 < 2^31` for blocks up to 128), converted to F32,
/// multiplied by `scale_a * scale_b` and added to an F32 accumulator.
pub fn w8a8_matmul(a: &BlockQuantized, b: &BlockQuantized) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "w8a8 {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.block != b.block {
        return Err(Error::BlockMismatch {
            left: a.block,
            right: b.block,
        });
    }
    let (m, k, n, blk) = (a.rows, a.cols, b.cols, a.block);
    debug_assert!(
        (blk.min(k) as i64) * 127 * 127 <= i32::MAX as i64,
        "block {blk} can overflow i32 segment sums"
    );
    let packed = pack_pairs(&b.q, k, n);
    let kb = k.div_ceil(blk);
    let (a_bc, b_bc) = (a.block_cols(), b.block_cols());
    let mut out = Mat::zeros(m, n);
    if m == 0 || n == 0 {
        return Ok(out);
    }
    // Row bands aligned to the block edge so every row in a band shares its
    // activation scales.
    let band = blk.max(1) * (64 / blk).max(1);
    out.data
        .par_chunks_mut(band * n)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let r0 = ci * band;
            let rows = chunk.len() / n;
            let mut seg = vec![0i32; blk];
            for jb in 0..b_bc {
                let j0 = jb * blk;
                let w = blk.min(n - j0);
                for s in 0..kb {
                    let p0 = s * blk;
                    let p1 = (p0 + blk).min(k);
                    let sb = b.scales[s * b_bc + jb];
                    for r in 0..rows {
                        let i = r0 + r;
                        let arow = &a.q[i * k + p0..i * k + p1];
                        let seg = &mut seg[..w];
                        seg.fill(0);
                        segment_sums(arow, &packed[p0 * n + 2 * j0..], n, seg);
                        let sc = a.scales[(i / blk) * a_bc + s] * sb;
                        let orow = &mut chunk[r * n + j0..r * n + j0 + w];
                        for (o, &v) in orow.iter_mut().zip(seg.iter()) {
                            *o += v as f32 * sc;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Rows `2t` and `2t + 1` of `b [k x n]` interleaved as
/// `[b[2t][0], b[2t+1][0], b[2t][1], b[2t+1][1], ...]`, widened to `i16`; an
/// odd final row is paired with zeros.
fn pack_pairs(b: &[i8], k: usize, n: usize) -> Vec<i16> {
    let pairs = k.div_ceil(2);
    let mut out = vec![0i16; pairs * 2 * n];
    for t in 0..pairs {
        let dst = &mut out[t * 2 * n..(t + 1) * 2 * n];
        let r0 = &b[2 * t * n..(2 * t + 1) * n];
        for (d, &v) in dst.chunks_exact_mut(2).zip(r0) {
            d[0] = i16::from(v);
        }
        if 2 * t + 1 < k {
            let r1 = &b[(2 * t + 1) * n..(2 * t + 2) * n];
            for (d, &v) in dst.chunks_exact_mut(2).zip(r1) {
                d[1] = i16::from(v);
            }
        }
    }
    out
}

/// `seg[j] += sum_p a[p] * b[p][j]` exactly, with `b` in the layout of
/// [`pack_pairs`] starting at an even row and row length `n`.
#[inline]
fn segment_sums(a: &[i8], b: &[i16], n: usize, seg: &mut [i32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if seg.len() % 8 == 0 && std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 availability checked above; slice bounds are
            // asserted inside.
            unsafe { avx2::segment_sums(a, b, n, seg) };
            return;
        }
    }
    segment_sums_portable(a, b, n, seg);
}

fn segment_sums_portable(a: &[i8], b: &[i16], n: usize, seg: &mut [i32]) {
    let w = seg.len();
    for (t, pair) in a.chunks(2).enumerate() {
        // |x0*u + x1*v| <= 2 * 127^2 fits in i16.
        let x0 = i16::from(pair[0]);
        let x1 = pair.get(1).map_or(0, |&v| i16::from(v));
        let row = &b[t * 2 * n..t * 2 * n + 2 * w];
        for (j, s) in seg.iter_mut().enumerate() {
            *s += i32::from(x0 * row[2 * j] + x1 * row[2 * j + 1]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn segment_sums(a: &[i8], b: &[i16], n: usize, seg: &mut [i32]) {
        let w = seg.len();
        let pairs = a.len().div_ceil(2);
        if pairs == 0 {
            return;
        }
        assert!(w % 8 == 0 && w <= n);
        assert!(b.len() >= (pairs - 1) * 2 * n + 2 * w);
        let mut c0 = 0;
        while c0 < w {
            let cols = (w - c0).min(64);
            let mut acc = [_mm256_setzero_si256(); 8];
            let nv = cols / 8;
            for t in 0..pairs {
                let x0 = a[2 * t] as i16 as u16 as u32;
                let x1 = a.get(2 * t + 1).map_or(0, |&v| v as i16 as u16 as u32);
                let x = _mm256_set1_epi32((x0 | (x1 << 16)) as i32);
                let row = b.as_ptr().add(t * 2 * n + 2 * c0);
                for (v, acc) in acc.iter_mut().enumerate().take(nv) {
                    let bv = _mm256_loadu_si256(row.add(16 * v) as *const __m256i);
                    *acc = _mm256_add_epi32(*acc, _mm256_madd_epi16(x, bv));
                }
            }
            for (v, acc) in acc.iter().enumerate().take(nv) {
                let dst = seg.as_mut_ptr().add(c0 + 8 * v) as *mut __m256i;
                _mm256_storeu_si256(dst, _mm256_add_epi32(_mm256_loadu_si256(dst), *acc));
            }
            c0 += cols;
        }
    }
}

/// `x [m x k]` quantized on the fly with the weight's block edge, times the
/// pre-quantized `w [k x n]`, plus an optional broadcast bias of length `n`.
pub fn quantized_linear_forward(x: &Mat, w: &BlockQuantized, bias: Option<&[f32]>) -> Result<Mat> {
    if x.cols != w.rows {
        return Err(Error::ShapeMismatch(format!(
            "linear input has {} features, weight expects {}",
            x.cols, w.rows
        )));
    }
    if let Some(b) = bias {
        if b.len() != w.cols {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} vs {} outputs",
                b.len(),
                w.cols
            )));
        }
    }
    let xq = quantize_blockwise(x, BlockQuantConfig { block: w.block })?;
    let mut out = w8a8_matmul(&xq, w)?;
    if let Some(b) = bias {
        for row in out.data.chunks_mut(w.cols) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    Ok(out)
}

/// Quantized storage bytes over `baseline_bytes_per_element * rows * cols`.
pub fn compression_ratio(bq: &BlockQuantized, baseline_bytes_per_element: f64) -> Result<f64> {
    if !(baseline_bytes_per_element > 0.0) {
        return Err(Error::InvalidConfig(
            "baseline bytes per element must be positive".into(),
        ));
    }
    let elems = (bq.rows * bq.cols) as f64;
    Ok(bq.storage_bytes() as f64 / (baseline_bytes_per_element * elems))
}
