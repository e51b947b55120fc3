use crate::attention::ops::{composite_attention_trace, AttentionTrace, AttentionWeights};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Matrix};

/// Gradients of composite attention with respect to every input.
#[derive(Clone, Debug)]
pub struct CompositeAttentionGrads {
    pub visual: Matrix,
    pub text: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

/// Gradients flowing out of one attention block, before they are split back
/// onto the token sequences that produced the queries and keys/values.
pub(crate) struct AttendGrads {
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
    pub wo: Matrix,
}

/// Backward through the per-head softmax attention and the output projection.
pub(crate) fn attend_backward(trace: &AttentionTrace, w: &AttentionWeights, upstream: &Matrix) -> Result<AttendGrads> {
    let dh = w.head_dim();
    let scale = (dh as f64).sqrt();
    let d_wo = matmul(&trace.merged.transpose(), upstream)?;
    let d_merged = matmul(upstream, &w.wo.transpose())?;

    let mut d_q = Matrix::zeros(trace.queries.rows(), w.hidden());
    let mut d_k = Matrix::zeros(trace.keys.rows(), w.hidden());
    let mut d_v = Matrix::zeros(trace.values.rows(), w.hidden());
    for (head, probs) in trace.probs.iter().enumerate() {
        let (c0, c1) = (head * dh, (head + 1) * dh);
        let q = trace.queries.slice_cols(c0, c1);
        let k = trace.keys.slice_cols(c0, c1);
        let v = trace.values.slice_cols(c0, c1);
        let d_out = d_merged.slice_cols(c0, c1);

        let d_probs = matmul(&d_out, &v.transpose())?;
        d_v.set_cols(c0, &matmul(&probs.transpose(), &d_out)?);

        // Softmax Jacobian row by row; masked entries have zero probability
        // and therefore zero gradient.
        let mut d_scores = Matrix::zeros(probs.rows(), probs.cols());
        let cols = probs.cols();
        for (i, dst) in d_scores
            .data_mut()
            .chunks_mut(cols.max(1))
            .enumerate()
            .take(probs.rows())
        {
            let p = probs.row(i);
            let g = d_probs.row(i);
            let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for ((d, &pj), &gj) in dst.iter_mut().zip(p).zip(g) {
                *d = pj * (gj - inner) / scale;
            }
        }
        d_q.set_cols(c0, &matmul(&d_scores, &k)?);
        d_k.set_cols(c0, &matmul(&d_scores.transpose(), &q)?);
    }
    Ok(AttendGrads {
        queries: d_q,
        keys: d_k,
        values: d_v,
        wo: d_wo,
    })
}

/// Analytic gradients of `composite_attention_forward` contracted with
/// `upstream` (shape `n×h`).
pub fn composite_attention_backward(
    visual: &Matrix,
    text: &Matrix,
    w: &AttentionWeights,
    upstream: &Matrix,
) -> Result<CompositeAttentionGrads> {
    let trace = composite_attention_trace(visual, text, w, None, true)?;
    if upstream.shape() != trace.out.shape() {
        return Err(Error::ShapeMismatch {
            op: "composite_attention_backward",
            left: upstream.shape(),
            right: trace.out.shape(),
        });
    }
    let g = attend_backward(&trace, w, upstream)?;
    let k = visual.rows();
    let h = w.hidden();
    let tokens = Matrix::vstack(&if k == 0 { Matrix::zeros(0, h) } else { visual.clone() }, text)?;
    let tokens_t = tokens.transpose();

    let d_wq = matmul(&text.transpose(), &g.queries)?;
    let d_wk = matmul(&tokens_t, &g.keys)?;
    let d_wv = matmul(&tokens_t, &g.values)?;
    let d_tokens = matmul(&g.keys, &w.wk.transpose())?.add(&matmul(&g.values, &w.wv.transpose())?)?;
    let d_text = matmul(&g.queries, &w.wq.transpose())?.add(&d_tokens.slice_rows(k, k + text.rows()))?;
    Ok(CompositeAttentionGrads {
        visual: if k == 0 {
            Matrix::zeros(0, visual.cols())
        } else {
            d_tokens.slice_rows(0, k)
        },
        text: d_text,
        wq: d_wq,
        wk: d_wk,
        wv: d_wv,
        wo: g.wo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::composite_attention_forward;
    use crate::tensor::Prng;

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Prng::new(2);
        let w = AttentionWeights::random(&mut rng, 4, 2, 0.5).unwrap();
        let i = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let t = rng.uniform_matrix(2, 4, -1.0, 1.0);
        let g = composite_attention_backward(&i, &t, &w, &Matrix::zeros(2, 4)).unwrap();
        for m in [&g.visual, &g.text, &g.wq, &g.wk, &g.wv, &g.wo] {
            assert!(m.data().iter().all(|&x| x == 0.0));
        }
        assert_eq!(g.visual.shape(), (3, 4));
        assert_eq!(g.text.shape(), (2, 4));
    }

    #[test]
    fn upstream_shape_checked() {
        let w = AttentionWeights::zeros(4, 1).unwrap();
        let t = Matrix::zeros(2, 4);
        assert!(composite_attention_backward(&Matrix::zeros(0, 4), &t, &w, &Matrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn directional_derivative_matches() {
        let mut rng = Prng::new(17);
        let w = AttentionWeights::random(&mut rng, 4, 2, 0.6).unwrap();
        let i = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let t = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let g_up = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let d_i = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let d_t = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let eps = 1e-5;
        let f = |s: f64| {
            let ii = i.add(&d_i.scale(s)).unwrap();
            let tt = t.add(&d_t.scale(s)).unwrap();
            composite_attention_forward(&ii, &tt, &w).unwrap().dot(&g_up).unwrap()
        };
        let numeric = (f(eps) - f(-eps)) / (2.0 * eps);
        let g = composite_attention_backward(&i, &t, &w, &g_up).unwrap();
        let analytic = g.visual.dot(&d_i).unwrap() + g.text.dot(&d_t).unwrap();
        let rel = (numeric - analytic).abs() / analytic.abs().max(1e-12);
        assert!(rel < 1e-4, "numeric {numeric} analytic {analytic}");
    }
}
