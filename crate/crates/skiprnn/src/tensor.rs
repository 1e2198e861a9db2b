//! Dense rank-1/2 tensors of 64-bit reals, row-major, plus the raw compute
//! kernels shared by the tape and the inference paths.
//!
//! Every kernel accumulates in a fixed order, so results are bit-identical
//! across repeated calls and across thread counts (parallelism only splits
//! output rows between threads; per-row arithmetic never changes).

use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "shape {rows}x{cols} does not match {} elements",
            data.len()
        );
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Tensor { rows, cols, data }
    }

    /// 1 x n row vector.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::from_vec(1, n, data)
    }

    /// n x 1 column vector.
    pub fn col(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::from_vec(n, 1, data)
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::from_vec(1, 1, vec![x])
    }

    pub fn full(rows: usize, cols: usize, x: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![x; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.data[r * self.cols + c] = x;
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rejects NaN/Inf entries; `where_` names the producing operation.
    pub fn check_finite(&self, where_: &str) -> Result<()> {
        for (i, &x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {x} at index {i} produced by {where_}"
                )));
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

// ── raw kernels ─────────────────────────────────────────────────────

/// Work threshold (MACs) below which matmuls stay single-threaded.
const PAR_THRESHOLD: usize = 1 << 16;

/// out[m x n] = a[m x k] . b[k x n]
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row_job = |i: usize, orow: &mut [f64]| {
        orow.fill(0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (l, &al) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += al * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, orow)| row_job(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            row_job(i, orow);
        }
    }
}

/// out[m x n] = a[m x k] . b[n x k]^T   (dot-product form)
pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let row_job = |i: usize, orow: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(arow, &b[j * k..(j + 1) * k]);
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, orow)| row_job(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            row_job(i, orow);
        }
    }
}

/// out[m x n] = a[k x m]^T . b[k x n]
pub fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Chunk output rows so threads write disjoint regions while the
    // k-loop accumulation order per output element stays fixed.
    let chunk_job = |i0: usize, ochunk: &mut [f64]| {
        ochunk.fill(0.0);
        let rows_here = ochunk.len() / n;
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            for ir in 0..rows_here {
                let al = a[l * m + i0 + ir];
                if al == 0.0 {
                    continue;
                }
                let orow = &mut ochunk[ir * n..(ir + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += al * bv;
                }
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        let nthreads = rayon::current_num_threads().max(1);
        let rows_per = m.div_ceil(nthreads);
        out.par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(ci, ochunk)| chunk_job(ci * rows_per, ochunk));
    } else {
        chunk_job(0, out);
    }
}

/// out[m x n] = x[m x k] . w[k x n] + bias[1 x n] broadcast over rows.
pub fn affine_raw(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    matmul(x, w, out, m, k, n);
    for row in out.chunks_mut(n) {
        for (o, &bv) in row.iter_mut().zip(bias) {
            *o += bv;
        }
    }
}

/// out[m x n] = x1[m x k1] . w1 + x2[m x k2] . w2 + bias, accumulated in a
/// fixed order shared by the tape op and the inference paths.
#[allow(clippy::too_many_arguments)]
pub fn dual_affine_raw(
    x1: &[f64],
    w1: &[f64],
    x2: &[f64],
    w2: &[f64],
    bias: &[f64],
    out: &mut [f64],
    m: usize,
    k1: usize,
    k2: usize,
    n: usize,
) {
    matmul(x1, w1, out, m, k1, n);
    let mut second = vec![0.0; m * n];
    matmul(x2, w2, &mut second, m, k2, n);
    for (row, srow) in out.chunks_mut(n).zip(second.chunks(n)) {
        for ((o, &s), &bv) in row.iter_mut().zip(srow).zip(bias) {
            *o += s + bv;
        }
    }
}

/// Four-accumulator dot product: fixed association order, vectorizable.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let n4 = n - n % 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < n4 {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Round half up: 0.5 goes to 1, -0.5 goes to 0.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    let f = x.floor();
    if x - f >= 0.5 {
        f + 1.0
    } else {
        f
    }
}
