//! Straight-line reference implementations used as oracles.
//!
//! Nothing here calls the production kernels: every product is an explicit
//! scalar loop over `Matrix::get`, every softmax is recomputed per row, and
//! masks are predicates rather than [`AttentionMask`](crate::attention::AttentionMask)
//! values. These functions are slow and only meant for small shapes.

use crate::attention::AttentionWeights;
use crate::layers::{gelu, LayerWeights};
use crate::tensor::Matrix;

/// Triple-loop product.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows(), "naive_matmul shape");
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut acc = 0.0;
        for k in 0..a.cols() {
            acc += a.get(i, k) * b.get(k, j);
        }
        acc
    })
}

fn naive_add(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + b.get(i, j))
}

/// Multi-head attention for query rows `q_src` over key/value rows `kv_src`,
/// with `permit(query, key)` deciding visibility.
pub fn naive_attention(
    q_src: &Matrix,
    kv_src: &Matrix,
    w: &AttentionWeights,
    permit: impl Fn(usize, usize) -> bool,
) -> Matrix {
    let h = w.hidden();
    let heads = w.heads();
    let dh = h / heads;
    let q = naive_matmul(q_src, &w.wq);
    let k = naive_matmul(kv_src, &w.wk);
    let v = naive_matmul(kv_src, &w.wv);
    let mut merged = Matrix::zeros(q_src.rows(), h);
    let mut buf = merged.data().to_vec();
    for head in 0..heads {
        let off = head * dh;
        for r in 0..q_src.rows() {
            let keys: Vec<usize> = (0..kv_src.rows()).filter(|&j| permit(r, j)).collect();
            assert!(!keys.is_empty(), "query {r} sees nothing");
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| {
                    let dot: f64 = (0..dh).map(|c| q.get(r, off + c) * k.get(j, off + c)).sum();
                    dot / (dh as f64).sqrt()
                })
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..dh {
                let val: f64 = keys.iter().zip(&exps).map(|(&j, e)| e / z * v.get(j, off + c)).sum();
                buf[r * h + off + c] = val;
            }
        }
    }
    merged = Matrix::new(q_src.rows(), h, buf).expect("shape");
    naive_matmul(&merged, &w.wo)
}

/// Causal multi-head self-attention.
pub fn naive_causal_self_attention(x: &Matrix, w: &AttentionWeights) -> Matrix {
    naive_attention(x, x, w, |i, j| j <= i)
}

/// Text queries over `[visual; text]`, text row `r` seeing every visual key
/// and text keys `0..=r`.
pub fn naive_composite_attention(visual: &Matrix, text: &Matrix, w: &AttentionWeights) -> Matrix {
    let k = visual.rows();
    let kv = stack(visual, text);
    naive_attention(text, &kv, w, |r, j| j < k || j - k <= r)
}

fn stack(top: &Matrix, bottom: &Matrix) -> Matrix {
    let cols = bottom.cols();
    Matrix::from_fn(top.rows() + bottom.rows(), cols, |i, j| {
        if i < top.rows() {
            top.get(i, j)
        } else {
            bottom.get(i - top.rows(), j)
        }
    })
}

/// `gelu(x·w1)·w2`.
pub fn naive_mlp(x: &Matrix, w1: &Matrix, w2: &Matrix) -> Matrix {
    naive_matmul(&naive_matmul(x, w1).map(gelu), w2)
}

pub fn naive_ffn(x: &Matrix, layer: &LayerWeights) -> Matrix {
    naive_mlp(x, &layer.ffn_w1, &layer.ffn_w2)
}

/// `H = I·Wv·Wo + I`, `O = FFN(H) + H`, with the products taken left to right.
pub fn naive_aligner(visual: &Matrix, layer: &LayerWeights) -> Matrix {
    let hidden = naive_add(
        &naive_matmul(&naive_matmul(visual, &layer.attn.wv), &layer.attn.wo),
        visual,
    );
    naive_add(&naive_ffn(&hidden, layer), &hidden)
}

/// Composite decoder layer recomputed from the naive pieces.
pub fn naive_composite_layer(visual: &Matrix, text: &Matrix, layer: &LayerWeights) -> (Matrix, Matrix) {
    let mid = naive_add(text, &naive_composite_attention(visual, text, &layer.attn));
    let text_out = naive_add(&naive_ffn(&mid, layer), &mid);
    (naive_aligner(visual, layer), text_out)
}

/// Central differences of a scalar function of one matrix argument.
pub fn central_difference(x: &Matrix, eps: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let v = x.get(i, j);
        let plus = f(&x.with_entry(i, j, v + eps));
        let minus = f(&x.with_entry(i, j, v - eps));
        (plus - minus) / (2.0 * eps)
    })
}

/// `max|a−b| / max(max|a|, max|b|, floor)`; the floor keeps an all-zero
/// gradient pair from dividing by zero.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "relative_error shape");
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-8);
    diff / scale
}
