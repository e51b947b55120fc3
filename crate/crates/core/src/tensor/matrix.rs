use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::flops;

/// Dense row-major matrix of `f64`.
///
/// Row-major layout is part of the contract: the weight and feature file
/// formats write `data` verbatim.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Rows per micro-kernel block. Each output element still accumulates over
/// the inner dimension in ascending order, so blocking never changes bits.
const ROW_BLOCK: usize = 4;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "Matrix::new",
                format!("data length {} does not equal {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy with a single entry replaced. Used by finite-difference probes.
    pub fn with_entry(&self, i: usize, j: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.data[i * self.cols + j] = value;
        out
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Appends rows in place. Only the KV cache grows matrices.
    pub(crate) fn append_rows(&mut self, other: &Matrix) -> Result<()> {
        if self.cols != other.cols && !self.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "append_rows",
                left: self.shape(),
                right: other.shape(),
            });
        }
        self.cols = other.cols;
        self.rows += other.rows;
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        matmul(self, rhs)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Frobenius inner product `sum(self ∘ rhs)`.
    pub fn dot(&self, rhs: &Matrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "dot",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum())
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row slice out of range");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols, "column slice out of range");
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Writes `block` into columns starting at `col`.
    pub(crate) fn set_cols(&mut self, col: usize, block: &Matrix) {
        assert_eq!(self.rows, block.rows);
        assert!(col + block.cols <= self.cols);
        for i in 0..self.rows {
            let dst = i * self.cols + col;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(i));
        }
    }

    /// Sequence-dimension concatenation `[top; bottom]`.
    ///
    /// An empty operand (zero rows) is accepted regardless of its width.
    pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
        if top.rows == 0 {
            return Ok(bottom.clone());
        }
        if bottom.rows == 0 {
            return Ok(top.clone());
        }
        if top.cols != bottom.cols {
            return Err(Error::ShapeMismatch {
                op: "vstack",
                left: top.shape(),
                right: bottom.shape(),
            });
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

fn check_matmul(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Output columns held in registers per tile.
const TILE_COLS: usize = 8;

/// Products with fewer rows than this skip packing and stream `b` row by row.
const PACK_MIN_ROWS: usize = 2 * ROW_BLOCK;

/// Copies the first `p - p % TILE_COLS` columns of `b` into column panels:
/// panel `t` holds `b[k][t·TILE_COLS..(t+1)·TILE_COLS]` for `k = 0..inner`
/// contiguously.
fn pack_panels(b: &[f64], inner: usize, p: usize) -> Vec<f64> {
    let full = p - p % TILE_COLS;
    let mut packed = Vec::with_capacity(inner * full);
    for j0 in (0..full).step_by(TILE_COLS) {
        for k in 0..inner {
            packed.extend_from_slice(&b[k * p + j0..k * p + j0 + TILE_COLS]);
        }
    }
    packed
}

// Every kernel below accumulates each output entry from zero over
// `k = 0..inner` in ascending order, so which one runs never changes bits.

/// `ROW_BLOCK` rows against packed panels, with the leftover columns read
/// from `b` directly.
#[inline(always)]
fn tile_block(a_rows: &[f64], inner: usize, b: &[f64], packed: &[f64], out: &mut [f64], p: usize) {
    let full = p - p % TILE_COLS;
    for (t, panel) in packed.chunks_exact(inner * TILE_COLS).enumerate() {
        let j0 = t * TILE_COLS;
        let mut acc = [[0.0f64; TILE_COLS]; ROW_BLOCK];
        for (k, bt) in panel.chunks_exact(TILE_COLS).enumerate() {
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let x = a_rows[r * inner + k];
                for j in 0..TILE_COLS {
                    acc_r[j] += x * bt[j];
                }
            }
        }
        for (r, acc_r) in acc.iter().enumerate() {
            out[r * p + j0..r * p + j0 + TILE_COLS].copy_from_slice(acc_r);
        }
    }
    for j in full..p {
        for r in 0..ROW_BLOCK {
            let mut acc = 0.0;
            for k in 0..inner {
                acc += a_rows[r * inner + k] * b[k * p + j];
            }
            out[r * p + j] = acc;
        }
    }
}

/// Row-at-a-time kernel reading `b` in storage order.
#[inline(always)]
fn stream_rows(a_rows: &[f64], inner: usize, b: &[f64], out: &mut [f64], p: usize) {
    for (r, o) in out.chunks_mut(p).enumerate() {
        o.fill(0.0);
        for (k, &x) in a_rows[r * inner..(r + 1) * inner].iter().enumerate() {
            for (oj, &bj) in o.iter_mut().zip(&b[k * p..(k + 1) * p]) {
                *oj += x * bj;
            }
        }
    }
}

#[inline(always)]
fn kernel_body(a_rows: &[f64], inner: usize, b: &[f64], packed: Option<&[f64]>, out: &mut [f64], p: usize) {
    match packed {
        Some(pk) if out.len() == ROW_BLOCK * p => tile_block(a_rows, inner, b, pk, out, p),
        _ => stream_rows(a_rows, inner, b, out, p),
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn kernel_avx512(a_rows: &[f64], inner: usize, b: &[f64], packed: Option<&[f64]>, out: &mut [f64], p: usize) {
    kernel_body(a_rows, inner, b, packed, out, p)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_avx2(a_rows: &[f64], inner: usize, b: &[f64], packed: Option<&[f64]>, out: &mut [f64], p: usize) {
    kernel_body(a_rows, inner, b, packed, out, p)
}

/// Computes a block of up to `ROW_BLOCK` output rows, overwriting `out`.
/// Wider vector units are used when the CPU has them; without fused
/// multiply-add the rounding is the same either way.
fn kernel_rows(a_rows: &[f64], inner: usize, b: &[f64], packed: Option<&[f64]>, out: &mut [f64], p: usize) {
    if p == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was just detected on this CPU.
        unsafe { kernel_avx512(a_rows, inner, b, packed, out, p) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was just detected on this CPU.
        unsafe { kernel_avx2(a_rows, inner, b, packed, out, p) };
        return;
    }
    kernel_body(a_rows, inner, b, packed, out, p)
}

fn packed_for(a: &Matrix, b: &Matrix) -> Option<Vec<f64>> {
    (a.rows >= PACK_MIN_ROWS && a.cols > 0 && b.cols >= TILE_COLS).then(|| pack_panels(&b.data, b.rows, b.cols))
}

/// Writes `a · b` into `out` (`m·p` entries) on the calling thread. Does not
/// touch the FLOP counter.
fn fill_seq(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    let (inner, p) = (a.cols, b.cols);
    if p == 0 {
        return;
    }
    let packed = packed_for(a, b);
    for (blk, o) in out.chunks_mut(ROW_BLOCK * p).enumerate() {
        let r0 = blk * ROW_BLOCK;
        let nrows = o.len() / p;
        kernel_rows(
            &a.data[r0 * inner..(r0 + nrows) * inner],
            inner,
            &b.data,
            packed.as_deref(),
            o,
            p,
        );
    }
}

/// Like [`fill_seq`] with row blocks spread over the rayon pool.
#[cfg(feature = "parallel")]
fn fill_par(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    use rayon::prelude::*;

    let (m, inner, p) = (a.rows, a.cols, b.cols);
    // Small products are not worth the fork/join.
    if m * inner * p < 1 << 15 || p == 0 {
        return fill_seq(a, b, out);
    }
    let packed = packed_for(a, b);
    out.par_chunks_mut(ROW_BLOCK * p).enumerate().for_each(|(blk, o)| {
        let r0 = blk * ROW_BLOCK;
        let nrows = o.len() / p;
        kernel_rows(
            &a.data[r0 * inner..(r0 + nrows) * inner],
            inner,
            &b.data,
            packed.as_deref(),
            o,
            p,
        );
    });
}

fn fill(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    fill_par(a, b, out);
    #[cfg(not(feature = "parallel"))]
    fill_seq(a, b, out);
}

fn record_matmul(a: &Matrix, b: &Matrix) {
    flops::record(2 * (a.rows as u64) * (a.cols as u64) * (b.cols as u64));
}

/// Matrix product `a · b`, recording `2·m·n·p` FLOPs when counting is on.
///
/// Uses the row-parallel kernel when the `parallel` feature is enabled. Both
/// kernels produce bitwise-identical results.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul(a, b)?;
    record_matmul(a, b);
    let mut out = Matrix::zeros(a.rows, b.cols);
    fill(a, b, &mut out.data);
    Ok(out)
}

/// [`matmul`] into an existing matrix, reusing its allocation.
pub(crate) fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) -> Result<()> {
    check_matmul(a, b)?;
    record_matmul(a, b);
    out.rows = a.rows;
    out.cols = b.cols;
    out.data.resize(a.rows * b.cols, 0.0);
    fill(a, b, &mut out.data);
    Ok(())
}

/// Always-sequential product; counted like [`matmul`].
pub fn matmul_seq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul(a, b)?;
    record_matmul(a, b);
    let mut out = Matrix::zeros(a.rows, b.cols);
    fill_seq(a, b, &mut out.data);
    Ok(out)
}

/// Always-parallel product; counted like [`matmul`].
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul(a, b)?;
    record_matmul(a, b);
    let mut out = Matrix::zeros(a.rows, b.cols);
    fill_par(a, b, &mut out.data);
    Ok(out)
}

/// Largest entrywise absolute difference and whether it is within `atol`.
pub fn approx_equal(a: &Matrix, b: &Matrix, atol: f64) -> Result<(f64, bool)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "approx_equal",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok((diff, diff <= atol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_product() {
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[19.0, 22.0], &[43.0, 50.0]]));
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let err = matmul(&a, &a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(
            err,
            Error::ShapeMismatch {
                left: (2, 3),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn approx_equal_cases() {
        let a = m(&[&[1.0, -2.0]]);
        assert_eq!(approx_equal(&a, &a, 0.0).unwrap(), (0.0, true));
        let (d, ok) = approx_equal(&m(&[&[1.0]]), &m(&[&[1.0 + 1e-7]]), 1e-9).unwrap();
        assert!((d - 1e-7).abs() < 1e-15);
        assert!(!ok);
        assert!(approx_equal(&a, &Matrix::zeros(2, 1), 1.0).is_err());
    }

    #[test]
    fn vstack_with_empty() {
        let t = m(&[&[1.0, 2.0]]);
        assert_eq!(Matrix::vstack(&Matrix::zeros(0, 2), &t).unwrap(), t);
        assert_eq!(Matrix::vstack(&Matrix::zeros(0, 0), &t).unwrap(), t);
        assert!(Matrix::vstack(&t, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn empty_products() {
        let a = Matrix::zeros(0, 3);
        let b = Matrix::zeros(3, 4);
        assert_eq!(matmul(&a, &b).unwrap().shape(), (0, 4));
        let c = Matrix::zeros(2, 0);
        let d = Matrix::zeros(0, 5);
        assert_eq!(matmul(&c, &d).unwrap(), Matrix::zeros(2, 5));
    }

    #[test]
    fn slices_and_transpose() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.slice_cols(1, 3).row(2), &[9.0, 10.0]);
        assert_eq!(a.slice_rows(1, 2).row(0), a.row(1));
    }
}
