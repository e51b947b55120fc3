use crate::attention::visual_value_projection;
use crate::error::{Error, Result};
use crate::layers::ffn::{ffn_backward, ffn_forward};
use crate::layers::LayerWeights;
use crate::tensor::{matmul, Matrix};

/// Borrowed view of the layer weights the aligner runs on.
///
/// It has no storage of its own, so it always sees the current `Wv`, `Wo`
/// and FFN of the layer it was taken from.
#[derive(Clone, Copy)]
pub struct Aligner<'a> {
    layer: &'a LayerWeights,
}

impl<'a> Aligner<'a> {
    pub fn of(layer: &'a LayerWeights) -> Self {
        Self { layer }
    }

    pub fn value(&self) -> &'a Matrix {
        &self.layer.attn.wv
    }

    pub fn output(&self) -> &'a Matrix {
        &self.layer.attn.wo
    }

    pub fn forward(&self, visual: &Matrix) -> Result<Matrix> {
        aligner_forward(visual, self.layer)
    }
}

fn check(op: &'static str, visual: &Matrix, layer: &LayerWeights) -> Result<()> {
    if visual.rows() > 0 && visual.cols() != layer.hidden() {
        return Err(Error::ShapeMismatch {
            op,
            left: visual.shape(),
            right: layer.attn.wv.shape(),
        });
    }
    Ok(())
}

/// `H = I·Wv·Wo + I`, `O = FFN(H) + H`, given `I·Wv` already computed.
pub(crate) fn aligner_from_values(visual: &Matrix, values: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    if visual.rows() == 0 {
        return Ok(Matrix::zeros(0, layer.hidden()));
    }
    let hidden = matmul(values, &layer.attn.wo)?.add(visual)?;
    ffn_forward(&hidden, layer)?.add(&hidden)
}

/// Carries visual tokens through one layer without attention, reusing the
/// layer's value/output projections and FFN.
pub fn aligner_forward(visual: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    check("aligner_forward", visual, layer)?;
    let values = visual_value_projection(visual, &layer.attn)?;
    aligner_from_values(visual, &values, layer)
}

#[derive(Clone, Debug)]
pub struct AlignerGrads {
    pub input: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

pub fn aligner_backward(visual: &Matrix, layer: &LayerWeights, upstream: &Matrix) -> Result<AlignerGrads> {
    check("aligner_backward", visual, layer)?;
    let h = layer.hidden();
    if visual.rows() == 0 {
        return Ok(AlignerGrads {
            input: Matrix::zeros(0, h),
            wv: Matrix::zeros(h, h),
            wo: Matrix::zeros(h, h),
            w1: Matrix::zeros(h, 4 * h),
            w2: Matrix::zeros(4 * h, h),
        });
    }
    if upstream.shape() != visual.shape() {
        return Err(Error::ShapeMismatch {
            op: "aligner_backward",
            left: upstream.shape(),
            right: visual.shape(),
        });
    }
    let values = matmul(visual, &layer.attn.wv)?;
    let hidden = matmul(&values, &layer.attn.wo)?.add(visual)?;
    let ffn = ffn_backward(&hidden, layer, upstream)?;
    let d_hidden = upstream.add(&ffn.input)?;
    let wo = matmul(&values.transpose(), &d_hidden)?;
    let d_values = matmul(&d_hidden, &layer.attn.wo.transpose())?;
    let wv = matmul(&visual.transpose(), &d_values)?;
    let input = matmul(&d_values, &layer.attn.wv.transpose())?.add(&d_hidden)?;
    Ok(AlignerGrads {
        input,
        wv,
        wo,
        w1: ffn.w1,
        w2: ffn.w2,
    })
}
