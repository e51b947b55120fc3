use crate::error::{Error, Result};
use crate::layers::LayerWeights;
use crate::tensor::{matmul, Matrix};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact Gaussian-error gate `x·Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

/// `d/dx x·Φ(x) = Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

/// Two-layer gated MLP `gelu(x·w1)·w2`, the shape shared by the FFN and the
/// projector.
pub(crate) fn mlp(x: &Matrix, w1: &Matrix, w2: &Matrix) -> Result<Matrix> {
    let pre = matmul(x, w1)?;
    matmul(&pre.map(gelu), w2)
}

/// `gelu(X·W1)·W2` with the layer's `h → 4h → h` weights.
pub fn ffn_forward(x: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    if x.cols() != layer.hidden() {
        return Err(Error::ShapeMismatch {
            op: "ffn_forward",
            left: x.shape(),
            right: layer.ffn_w1.shape(),
        });
    }
    mlp(x, &layer.ffn_w1, &layer.ffn_w2)
}

#[derive(Clone, Debug)]
pub struct FfnGrads {
    pub input: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

pub fn ffn_backward(x: &Matrix, layer: &LayerWeights, upstream: &Matrix) -> Result<FfnGrads> {
    if x.cols() != layer.hidden() || upstream.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "ffn_backward",
            left: x.shape(),
            right: upstream.shape(),
        });
    }
    let pre = matmul(x, &layer.ffn_w1)?;
    let act = pre.map(gelu);
    let w2 = matmul(&act.transpose(), upstream)?;
    let d_pre = matmul(upstream, &layer.ffn_w2.transpose())?.hadamard(&pre.map(gelu_grad))?;
    let w1 = matmul(&x.transpose(), &d_pre)?;
    let input = matmul(&d_pre, &layer.ffn_w1.transpose())?;
    Ok(FfnGrads { input, w1, w2 })
}
