use crate::attention::{
    attend_backward, build_causal_mask, composite_attention_trace, self_attention_trace, visual_value_projection,
    AttentionWeights,
};
use crate::error::{Error, Result};
use crate::layers::aligner::{aligner_backward, aligner_from_values};
use crate::layers::ffn::{ffn_backward, ffn_forward};
use crate::tensor::{gaussian_init, matmul, Matrix, Prng};

/// Parameters of one decoder layer. The FFN inner width is fixed at `4h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub attn: AttentionWeights,
    pub ffn_w1: Matrix,
    pub ffn_w2: Matrix,
}

impl LayerWeights {
    pub fn new(attn: AttentionWeights, ffn_w1: Matrix, ffn_w2: Matrix) -> Result<Self> {
        let h = attn.hidden();
        if ffn_w1.shape() != (h, 4 * h) || ffn_w2.shape() != (4 * h, h) {
            return Err(Error::invalid(
                "LayerWeights::new",
                format!(
                    "FFN weights {:?} and {:?} do not match hidden size {h} with inner width {}",
                    ffn_w1.shape(),
                    ffn_w2.shape(),
                    4 * h
                ),
            ));
        }
        Ok(Self { attn, ffn_w1, ffn_w2 })
    }

    pub fn zeros(h: usize, heads: usize) -> Result<Self> {
        Self::new(
            AttentionWeights::zeros(h, heads)?,
            Matrix::zeros(h, 4 * h),
            Matrix::zeros(4 * h, h),
        )
    }

    /// Draws Wq, Wk, Wv, Wo, W1, W2 in that order.
    pub fn random(rng: &mut Prng, h: usize, heads: usize, stddev: f64) -> Result<Self> {
        let attn = AttentionWeights::random(rng, h, heads, stddev)?;
        let w1 = gaussian_init(rng, h, 4 * h, stddev)?;
        let w2 = gaussian_init(rng, 4 * h, h, stddev)?;
        Self::new(attn, w1, w2)
    }

    pub fn hidden(&self) -> usize {
        self.attn.hidden()
    }
}

/// Output of a composite layer plus the per-layer keys and values the KV cache
/// keeps (visual rows first).
pub(crate) struct CompositeLayerOut {
    pub visual: Matrix,
    pub text: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
}

pub(crate) fn composite_layer_full(visual: &Matrix, text: &Matrix, layer: &LayerWeights) -> Result<CompositeLayerOut> {
    // `visual·Wv` feeds both the attention values and the aligner.
    let vis_values = visual_value_projection(visual, &layer.attn)?;
    let trace = composite_attention_trace(visual, text, &layer.attn, Some(&vis_values), false)?;
    let mid = text.add(&trace.out)?;
    let text_out = ffn_forward(&mid, layer)?.add(&mid)?;
    let visual_out = aligner_from_values(visual, &vis_values, layer)?;
    Ok(CompositeLayerOut {
        visual: visual_out,
        text: text_out,
        keys: trace.keys,
        values: trace.values,
    })
}

/// One composite decoder layer: text goes through composite attention and the
/// FFN, visual tokens go through the aligner. Keys and values are taken from
/// the layer-input visual state.
pub fn composite_decoder_layer(visual: &Matrix, text: &Matrix, layer: &LayerWeights) -> Result<(Matrix, Matrix)> {
    composite_layer_full(visual, text, layer).map(|o| (o.visual, o.text))
}

pub(crate) struct BaselineLayerOut {
    pub out: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
}

pub(crate) fn baseline_layer_full(x: &Matrix, layer: &LayerWeights) -> Result<BaselineLayerOut> {
    let mask = build_causal_mask(x.rows())?;
    let trace = self_attention_trace(x, &layer.attn, &mask, false)?;
    let mid = x.add(&trace.out)?;
    let out = ffn_forward(&mid, layer)?.add(&mid)?;
    Ok(BaselineLayerOut {
        out,
        keys: trace.keys,
        values: trace.values,
    })
}

/// Baseline layer over the concatenated sequence: residual causal
/// self-attention followed by a residual FFN.
pub fn baseline_decoder_layer(x: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    baseline_layer_full(x, layer).map(|o| o.out)
}

/// Gradients of a composite decoder layer with respect to its inputs and every
/// weight. Shared weights collect contributions from both the attention/FFN
/// path and the aligner path.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub visual: Matrix,
    pub text: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_w2: Matrix,
}

pub fn composite_decoder_layer_backward(
    visual: &Matrix,
    text: &Matrix,
    layer: &LayerWeights,
    upstream_visual: &Matrix,
    upstream_text: &Matrix,
) -> Result<LayerGrads> {
    let k = visual.rows();
    let h = layer.hidden();
    if upstream_text.shape() != text.shape() {
        return Err(Error::ShapeMismatch {
            op: "composite_decoder_layer_backward (text)",
            left: upstream_text.shape(),
            right: text.shape(),
        });
    }
    if k > 0 && upstream_visual.shape() != visual.shape() {
        return Err(Error::ShapeMismatch {
            op: "composite_decoder_layer_backward (visual)",
            left: upstream_visual.shape(),
            right: visual.shape(),
        });
    }

    let trace = composite_attention_trace(visual, text, &layer.attn, None, true)?;
    let mid = text.add(&trace.out)?;

    let ffn = ffn_backward(&mid, layer, upstream_text)?;
    let d_mid = upstream_text.add(&ffn.input)?;

    let attn = attend_backward(&trace, &layer.attn, &d_mid)?;
    let tokens = Matrix::vstack(&if k == 0 { Matrix::zeros(0, h) } else { visual.clone() }, text)?;
    let tokens_t = tokens.transpose();
    let d_tokens =
        matmul(&attn.keys, &layer.attn.wk.transpose())?.add(&matmul(&attn.values, &layer.attn.wv.transpose())?)?;
    let d_text = d_mid
        .add(&matmul(&attn.queries, &layer.attn.wq.transpose())?)?
        .add(&d_tokens.slice_rows(k, k + text.rows()))?;

    let wq = matmul(&text.transpose(), &attn.queries)?;
    let wk = matmul(&tokens_t, &attn.keys)?;
    let mut wv = matmul(&tokens_t, &attn.values)?;
    let mut wo = attn.wo;
    let mut ffn_w1 = ffn.w1;
    let mut ffn_w2 = ffn.w2;

    let d_visual = if k == 0 {
        Matrix::zeros(0, h)
    } else {
        let al = aligner_backward(visual, layer, upstream_visual)?;
        wv = wv.add(&al.wv)?;
        wo = wo.add(&al.wo)?;
        ffn_w1 = ffn_w1.add(&al.w1)?;
        ffn_w2 = ffn_w2.add(&al.w2)?;
        al.input.add(&d_tokens.slice_rows(0, k))?
    };

    Ok(LayerGrads {
        visual: d_visual,
        text: d_text,
        wq,
        wk,
        wv,
        wo,
        ffn_w1,
        ffn_w2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::count_flops;

    #[test]
    fn zero_weights_are_pure_residual() {
        let layer = LayerWeights::zeros(4, 2).unwrap();
        let mut rng = Prng::new(8);
        let i = rng.uniform_matrix(3, 4, -1.0, 1.0);
        let t = rng.uniform_matrix(2, 4, -1.0, 1.0);
        let (i2, t2) = composite_decoder_layer(&i, &t, &layer).unwrap();
        assert_eq!((i2, t2), (i, t.clone()));
        assert_eq!(baseline_decoder_layer(&t, &layer).unwrap(), t);
    }

    #[test]
    fn no_visual_reduces_to_baseline() {
        let mut rng = Prng::new(9);
        let layer = LayerWeights::random(&mut rng, 8, 2, 0.2).unwrap();
        let t = rng.uniform_matrix(5, 8, -1.0, 1.0);
        let (i2, t2) = composite_decoder_layer(&Matrix::zeros(0, 8), &t, &layer).unwrap();
        assert_eq!(i2.rows(), 0);
        assert_eq!(t2, baseline_decoder_layer(&t, &layer).unwrap());
    }

    #[test]
    fn single_token_baseline_by_hand() {
        let mut rng = Prng::new(10);
        let layer = LayerWeights::random(&mut rng, 3, 1, 0.4).unwrap();
        let x = rng.uniform_matrix(1, 3, -1.0, 1.0);
        let got = baseline_decoder_layer(&x, &layer).unwrap();
        // Scalar recomputation: one token attends only to itself.
        let h = 3;
        let dot = |a: &[f64], m: &Matrix, col: usize| (0..a.len()).map(|r| a[r] * m.get(r, col)).sum::<f64>();
        let v: Vec<f64> = (0..h).map(|c| dot(x.row(0), &layer.attn.wv, c)).collect();
        let a: Vec<f64> = (0..h).map(|c| dot(&v, &layer.attn.wo, c)).collect();
        let mid: Vec<f64> = (0..h).map(|c| x.get(0, c) + a[c]).collect();
        let inner: Vec<f64> = (0..4 * h)
            .map(|c| crate::layers::gelu(dot(&mid, &layer.ffn_w1, c)))
            .collect();
        for (c, m) in mid.iter().enumerate() {
            let want = m + dot(&inner, &layer.ffn_w2, c);
            assert!((got.get(0, c) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn baseline_flops_per_layer() {
        for (rows, h, heads) in [(1, 4, 1), (5, 8, 2), (7, 6, 3)] {
            let layer = LayerWeights::random(&mut Prng::new(1), h, heads, 0.1).unwrap();
            let x = Prng::new(2).uniform_matrix(rows, h, -1.0, 1.0);
            let (_, n) = count_flops(|| baseline_decoder_layer(&x, &layer).unwrap());
            assert_eq!(n, (24 * rows * h * h + 4 * rows * rows * h) as u64);
        }
    }

    #[test]
    fn ffn_weight_shapes_checked() {
        let attn = AttentionWeights::zeros(2, 1).unwrap();
        assert!(LayerWeights::new(attn, Matrix::zeros(2, 4), Matrix::zeros(4, 2)).is_err());
    }
}
