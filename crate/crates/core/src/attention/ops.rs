use crate::attention::mask::{build_causal_mask, build_trapezoidal_mask, AttentionMask};
use crate::error::{Error, Result};
use crate::tensor::{
    gaussian_init, matmul, matmul_into, record_flops, softmax_row_in_place, softmax_rows_masked, Matrix, Prng,
};

/// Projection weights of one attention block. All four are `h×h`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    heads: usize,
}

impl AttentionWeights {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix, heads: usize) -> Result<Self> {
        let h = wq.rows();
        for (name, m) in [("Wq", &wq), ("Wk", &wk), ("Wv", &wv), ("Wo", &wo)] {
            if m.shape() != (h, h) {
                return Err(Error::invalid(
                    "AttentionWeights::new",
                    format!("{name} is {:?}, expected {h}x{h}", m.shape()),
                ));
            }
        }
        validate_heads(h, heads)?;
        Ok(Self { wq, wk, wv, wo, heads })
    }

    pub fn zeros(h: usize, heads: usize) -> Result<Self> {
        let z = Matrix::zeros(h, h);
        Self::new(z.clone(), z.clone(), z.clone(), z, heads)
    }

    pub fn random(rng: &mut Prng, h: usize, heads: usize, stddev: f64) -> Result<Self> {
        let wq = gaussian_init(rng, h, h, stddev)?;
        let wk = gaussian_init(rng, h, h, stddev)?;
        let wv = gaussian_init(rng, h, h, stddev)?;
        let wo = gaussian_init(rng, h, h, stddev)?;
        Self::new(wq, wk, wv, wo, heads)
    }

    pub fn hidden(&self) -> usize {
        self.wq.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.hidden() / self.heads
    }
}

pub(crate) fn validate_heads(h: usize, heads: usize) -> Result<()> {
    if heads == 0 || h == 0 || !h.is_multiple_of(heads) {
        return Err(Error::invalid(
            "attention",
            format!("head count {heads} must be >= 1 and divide hidden size {h}"),
        ));
    }
    Ok(())
}

/// `softmax(mask(Xq·Xkᵀ / √scale_dim))·Xv`.
pub fn scaled_dot_attention(
    xq: &Matrix,
    xk: &Matrix,
    xv: &Matrix,
    mask: &AttentionMask,
    scale_dim: usize,
) -> Result<Matrix> {
    check_attention_shapes(xq, xk, xv, mask, scale_dim)?;
    scaled_dot_attention_blocked(xq, xk, xv, mask, scale_dim)
}

/// Query rows per block in the forward-only path.
const QUERY_BLOCK: usize = 64;

/// Forward-only attention computed `QUERY_BLOCK` query rows at a time, so the
/// full score matrix is never materialised. Bitwise equal to
/// [`scaled_dot_attention_probs`] because every row is computed by the same
/// operations in the same order.
fn scaled_dot_attention_blocked(
    xq: &Matrix,
    xk: &Matrix,
    xv: &Matrix,
    mask: &AttentionMask,
    scale_dim: usize,
) -> Result<Matrix> {
    let scale = (scale_dim as f64).sqrt();
    let kt = xk.transpose();
    let cols = xk.rows();
    if cols == 0 && xq.rows() > 0 {
        return Err(Error::FullyMaskedRow { row: 0 });
    }
    let mut out = Matrix::zeros(0, xv.cols());
    let mut scores = Matrix::zeros(0, 0);
    let mut block_out = Matrix::zeros(0, 0);
    for r0 in (0..xq.rows()).step_by(QUERY_BLOCK) {
        let r1 = (r0 + QUERY_BLOCK).min(xq.rows());
        matmul_into(&xq.slice_rows(r0, r1), &kt, &mut scores)?;
        for (i, row) in scores.data_mut().chunks_mut(cols).enumerate() {
            for s in row.iter_mut() {
                *s /= scale;
            }
            if !softmax_row_in_place(row, mask.row(r0 + i)) {
                return Err(Error::FullyMaskedRow { row: r0 + i });
            }
        }
        matmul_into(&scores, xv, &mut block_out)?;
        out.append_rows(&block_out)?;
    }
    Ok(out)
}

/// One query row against columns `c0..c0 + width` of `keys` and `values`,
/// read in place. Each score and output entry is accumulated from zero in
/// the same order as the blocked path, so results are bitwise equal to
/// slicing the head out and calling [`scaled_dot_attention`]; the FLOPs of
/// both products are recorded.
fn single_query_head(
    query: &[f64],
    keys: &Matrix,
    values: &Matrix,
    permit: &[bool],
    c0: usize,
    width: usize,
) -> Result<Vec<f64>> {
    let scale = (width as f64).sqrt();
    let n = keys.rows();
    let mut scores: Vec<f64> = (0..n)
        .map(|j| {
            let k = &keys.row(j)[c0..c0 + width];
            let mut acc = 0.0;
            for (a, b) in query.iter().zip(k) {
                acc += a * b;
            }
            acc / scale
        })
        .collect();
    if !softmax_row_in_place(&mut scores, permit) {
        return Err(Error::FullyMaskedRow { row: 0 });
    }
    let mut out = vec![0.0; width];
    for (j, &p) in scores.iter().enumerate() {
        let v = &values.row(j)[c0..c0 + width];
        for (o, &x) in out.iter_mut().zip(v) {
            *o += p * x;
        }
    }
    record_flops(4 * (n as u64) * (width as u64));
    Ok(out)
}

/// Like [`scaled_dot_attention`] but also returns the attention probabilities.
pub(crate) fn scaled_dot_attention_probs(
    xq: &Matrix,
    xk: &Matrix,
    xv: &Matrix,
    mask: &AttentionMask,
    scale_dim: usize,
) -> Result<(Matrix, Matrix)> {
    check_attention_shapes(xq, xk, xv, mask, scale_dim)?;
    let scale = (scale_dim as f64).sqrt();
    let scores = matmul(xq, &xk.transpose())?.map(|s| s / scale);
    let probs = softmax_rows_masked(&scores, mask)?;
    let out = matmul(&probs, xv)?;
    Ok((out, probs))
}

fn check_attention_shapes(xq: &Matrix, xk: &Matrix, xv: &Matrix, mask: &AttentionMask, scale_dim: usize) -> Result<()> {
    if scale_dim == 0 {
        return Err(Error::invalid("scaled_dot_attention", "scale_dim must be positive"));
    }
    if xq.cols() != xk.cols() {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention (queries vs keys)",
            left: xq.shape(),
            right: xk.shape(),
        });
    }
    if xk.rows() != xv.rows() {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention (keys vs values)",
            left: xk.shape(),
            right: xv.shape(),
        });
    }
    if mask.shape() != (xq.rows(), xk.rows()) {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention (mask)",
            left: mask.shape(),
            right: (xq.rows(), xk.rows()),
        });
    }
    Ok(())
}

/// Projected queries, keys and values plus everything the backward pass needs.
pub(crate) struct AttentionTrace {
    pub out: Matrix,
    /// Concatenated head outputs before `Wo`.
    pub merged: Matrix,
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
    /// Per-head attention probabilities; empty unless requested.
    pub probs: Vec<Matrix>,
}

/// Multi-head attention of projected queries against keys/values followed by
/// the output projection. Returns `(output, merged heads, per-head probs)`;
/// the probabilities are only kept when `keep_probs` is set.
pub(crate) fn attend_heads(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    mask: &AttentionMask,
    w: &AttentionWeights,
    keep_probs: bool,
) -> Result<(Matrix, Matrix, Vec<Matrix>)> {
    let heads = w.heads();
    let dh = w.head_dim();
    let mut merged = Matrix::zeros(queries.rows(), w.hidden());
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let (c0, c1) = (head * dh, (head + 1) * dh);
        let single = queries.rows() == 1 && keys.rows() > 0 && values.rows() == keys.rows();
        if single && !keep_probs && mask.shape() == (1, keys.rows()) && queries.cols() == keys.cols() {
            let o = single_query_head(&queries.row(0)[c0..c1], keys, values, mask.row(0), c0, dh)?;
            merged.data_mut()[c0..c1].copy_from_slice(&o);
            continue;
        }
        let (q, k, v) = (
            queries.slice_cols(c0, c1),
            keys.slice_cols(c0, c1),
            values.slice_cols(c0, c1),
        );
        if keep_probs {
            let (o, p) = scaled_dot_attention_probs(&q, &k, &v, mask, dh)?;
            merged.set_cols(c0, &o);
            probs.push(p);
        } else {
            merged.set_cols(c0, &scaled_dot_attention(&q, &k, &v, mask, dh)?);
        }
    }
    let out = matmul(&merged, &w.wo)?;
    Ok((out, merged, probs))
}

pub(crate) fn attend(
    queries: Matrix,
    keys: Matrix,
    values: Matrix,
    mask: &AttentionMask,
    w: &AttentionWeights,
    keep_probs: bool,
) -> Result<AttentionTrace> {
    let (out, merged, probs) = attend_heads(&queries, &keys, &values, mask, w, keep_probs)?;
    Ok(AttentionTrace {
        out,
        merged,
        queries,
        keys,
        values,
        probs,
    })
}

fn check_hidden(op: &'static str, x: &Matrix, w: &AttentionWeights) -> Result<()> {
    if x.cols() != w.hidden() {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape(),
            right: w.wq.shape(),
        });
    }
    Ok(())
}

pub(crate) fn self_attention_trace(
    x: &Matrix,
    w: &AttentionWeights,
    mask: &AttentionMask,
    keep_probs: bool,
) -> Result<AttentionTrace> {
    check_hidden("self_attention_forward", x, w)?;
    if mask.shape() != (x.rows(), x.rows()) {
        return Err(Error::ShapeMismatch {
            op: "self_attention_forward (mask)",
            left: mask.shape(),
            right: (x.rows(), x.rows()),
        });
    }
    let q = matmul(x, &w.wq)?;
    let k = matmul(x, &w.wk)?;
    let v = matmul(x, &w.wv)?;
    attend(q, k, v, mask, w, keep_probs)
}

/// Multi-head self-attention over one token sequence.
///
/// `mask` must be square with one row per token; the baseline decoder passes
/// a causal mask, oracles may pass any pattern.
pub fn self_attention_forward(x: &Matrix, w: &AttentionWeights, mask: &AttentionMask) -> Result<Matrix> {
    self_attention_trace(x, w, mask, false).map(|t| t.out)
}

/// Text-query attention over `[visual; text]` keys and values.
///
/// `visual_values` may carry a precomputed `visual·Wv`; the composite decoder
/// layer shares that product with the aligner.
pub(crate) fn composite_attention_trace(
    visual: &Matrix,
    text: &Matrix,
    w: &AttentionWeights,
    visual_values: Option<&Matrix>,
    keep_probs: bool,
) -> Result<AttentionTrace> {
    if text.rows() == 0 {
        return Err(Error::invalid(
            "composite_attention_forward",
            "at least one text token is required",
        ));
    }
    check_hidden("composite_attention_forward (text)", text, w)?;
    if visual.rows() > 0 {
        check_hidden("composite_attention_forward (visual)", visual, w)?;
    }
    let k = visual.rows();
    let n = text.rows();
    let mask = build_trapezoidal_mask(k, n)?;

    // Visual rows never form queries.
    let q = matmul(text, &w.wq)?;
    let keys = Matrix::vstack(&visual_keys(visual, w)?, &matmul(text, &w.wk)?)?;
    let vis_v = match visual_values {
        Some(v) => {
            if v.shape() != (k, w.hidden()) && k > 0 {
                return Err(Error::ShapeMismatch {
                    op: "composite_attention_forward (shared visual values)",
                    left: v.shape(),
                    right: (k, w.hidden()),
                });
            }
            v.clone()
        }
        None => visual_value_projection(visual, w)?,
    };
    let values = Matrix::vstack(&vis_v, &matmul(text, &w.wv)?)?;
    attend(q, keys, values, &mask, w, keep_probs)
}

pub(crate) fn visual_keys(visual: &Matrix, w: &AttentionWeights) -> Result<Matrix> {
    if visual.rows() == 0 {
        return Ok(Matrix::zeros(0, w.hidden()));
    }
    matmul(visual, &w.wk)
}

pub(crate) fn visual_value_projection(visual: &Matrix, w: &AttentionWeights) -> Result<Matrix> {
    if visual.rows() == 0 {
        return Ok(Matrix::zeros(0, w.hidden()));
    }
    matmul(visual, &w.wv)
}

/// Composite attention: text tokens query the concatenation of visual and
/// text tokens under a trapezoidal mask. Returns one row per text token.
pub fn composite_attention_forward(visual: &Matrix, text: &Matrix, w: &AttentionWeights) -> Result<Matrix> {
    composite_attention_trace(visual, text, w, None, false).map(|t| t.out)
}

/// Causal self-attention, with mask built for `x`.
pub fn causal_self_attention(x: &Matrix, w: &AttentionWeights) -> Result<Matrix> {
    self_attention_forward(x, w, &build_causal_mask(x.rows())?)
}
