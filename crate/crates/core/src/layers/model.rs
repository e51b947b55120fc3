use std::fmt;
use std::str::FromStr;

use crate::attention::validate_heads;
use crate::error::{Error, Result};
use crate::layers::decoder::{baseline_decoder_layer, composite_decoder_layer, LayerWeights};
use crate::layers::ffn::mlp;
use crate::tensor::{gaussian_init, matmul, Matrix, Prng};

/// Standard deviation used for every weight of a seeded model.
pub const INIT_STDDEV: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Visual and text tokens concatenated through causal self-attention.
    Baseline,
    /// Text-query composite attention plus per-layer aligner.
    Composite,
}

impl Mode {
    pub fn code(self) -> u32 {
        match self {
            Mode::Baseline => 0,
            Mode::Composite => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Mode::Baseline),
            1 => Ok(Mode::Composite),
            other => Err(Error::Format(format!("unknown mode code {other}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Composite => "composite",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "composite" => Ok(Mode::Composite),
            other => Err(Error::invalid(
                "mode",
                format!("expected `baseline` or `composite`, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub vocab: usize,
    pub feat_dim: usize,
    pub mode: Mode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("ModelConfig", "layer count must be at least 1"));
        }
        validate_heads(self.hidden, self.heads)?;
        if self.vocab < 2 {
            return Err(Error::invalid("ModelConfig", "vocabulary needs at least 2 tokens"));
        }
        if self.feat_dim == 0 {
            return Err(Error::invalid("ModelConfig", "visual feature width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embed: Matrix,
    pub unembed: Matrix,
    pub projector_w1: Matrix,
    pub projector_w2: Matrix,
    pub layers: Vec<LayerWeights>,
}

impl Model {
    /// Seeded Gaussian initialisation with [`INIT_STDDEV`].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_stddev(config, seed, INIT_STDDEV)
    }

    /// Weights are drawn in file order: embed, unembed, projector W1, W2, then
    /// each layer's Wq, Wk, Wv, Wo, W1, W2.
    pub fn with_stddev(config: ModelConfig, seed: u64, stddev: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = Prng::new(seed);
        let h = config.hidden;
        let embed = gaussian_init(&mut rng, config.vocab, h, stddev)?;
        let unembed = gaussian_init(&mut rng, h, config.vocab, stddev)?;
        let projector_w1 = gaussian_init(&mut rng, config.feat_dim, h, stddev)?;
        let projector_w2 = gaussian_init(&mut rng, h, h, stddev)?;
        let layers = (0..config.layers)
            .map(|_| LayerWeights::random(&mut rng, h, config.heads, stddev))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            embed,
            unembed,
            projector_w1,
            projector_w2,
            layers,
        })
    }

    /// All-zero weights; every decoder layer is then the identity.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        Ok(Self {
            config,
            embed: Matrix::zeros(config.vocab, h),
            unembed: Matrix::zeros(h, config.vocab),
            projector_w1: Matrix::zeros(config.feat_dim, h),
            projector_w2: Matrix::zeros(h, h),
            layers: (0..config.layers)
                .map(|_| LayerWeights::zeros(h, config.heads))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// Same weights wired in a different mode.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut m = self.clone();
        m.config.mode = mode;
        m
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let h = c.hidden;
        let expect = [
            ("embed", &self.embed, (c.vocab, h)),
            ("unembed", &self.unembed, (h, c.vocab)),
            ("projector_w1", &self.projector_w1, (c.feat_dim, h)),
            ("projector_w2", &self.projector_w2, (h, h)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::invalid(
                    "Model",
                    format!("{name} is {:?}, expected {shape:?}", m.shape()),
                ));
            }
        }
        if self.layers.len() != c.layers {
            return Err(Error::invalid(
                "Model",
                format!("{} layers present, config says {}", self.layers.len(), c.layers),
            ));
        }
        for layer in &self.layers {
            if layer.hidden() != h || layer.attn.heads() != c.heads {
                return Err(Error::invalid("Model", "layer shape disagrees with config"));
            }
        }
        Ok(())
    }
}

/// Maps raw visual features (`k×feat_dim`) into the hidden space through the
/// two-layer gated MLP.
pub fn projector_forward(features: &Matrix, model: &Model) -> Result<Matrix> {
    let h = model.hidden();
    if features.rows() == 0 {
        return Ok(Matrix::zeros(0, h));
    }
    if features.cols() != model.config.feat_dim {
        return Err(Error::ShapeMismatch {
            op: "projector_forward",
            left: features.shape(),
            right: model.projector_w1.shape(),
        });
    }
    mlp(features, &model.projector_w1, &model.projector_w2)
}

/// Embedding rows for `ids`.
pub fn embed_tokens(model: &Model, ids: &[usize]) -> Result<Matrix> {
    let h = model.hidden();
    let vocab = model.config.vocab;
    let mut data = Vec::with_capacity(ids.len() * h);
    for &id in ids {
        if id >= vocab {
            return Err(Error::UnknownToken { id, vocab });
        }
        data.extend_from_slice(model.embed.row(id));
    }
    Matrix::new(ids.len(), h, data)
}

/// Runs the decoder stack on projected visual tokens and embedded text and
/// returns the final text hidden states (`n×h`).
///
/// Only decoder-layer matmuls happen here; the cost model counts exactly this.
pub fn decoder_stack(model: &Model, visual: &Matrix, text: &Matrix) -> Result<Matrix> {
    if text.rows() == 0 {
        return Err(Error::invalid("model_forward", "text must contain at least one token"));
    }
    let n = text.rows();
    match model.mode() {
        Mode::Composite => {
            let mut i = visual.clone();
            let mut t = text.clone();
            for layer in &model.layers {
                let (i_next, t_next) = composite_decoder_layer(&i, &t, layer)?;
                i = i_next;
                t = t_next;
            }
            Ok(t)
        }
        Mode::Baseline => {
            let mut x = Matrix::vstack(visual, text)?;
            for layer in &model.layers {
                x = baseline_decoder_layer(&x, layer)?;
            }
            Ok(x.slice_rows(x.rows() - n, x.rows()))
        }
    }
}

/// Full forward pass: features and token ids to `n×vocab` logits.
pub fn model_forward(model: &Model, visual_features: &Matrix, text_ids: &[usize]) -> Result<Matrix> {
    if text_ids.is_empty() {
        return Err(Error::invalid("model_forward", "text must contain at least one token"));
    }
    let visual = projector_forward(visual_features, model)?;
    let text = embed_tokens(model, text_ids)?;
    let hidden = decoder_stack(model, &visual, &text)?;
    matmul(&hidden, &model.unembed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gelu;

    fn cfg(mode: Mode) -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            vocab: 11,
            feat_dim: 5,
            mode,
        }
    }

    #[test]
    fn projector_cases() {
        let model = Model::new(cfg(Mode::Composite), 1).unwrap();
        assert_eq!(projector_forward(&Matrix::zeros(0, 5), &model).unwrap().shape(), (0, 8));
        assert_eq!(
            projector_forward(&Matrix::zeros(3, 5), &model).unwrap(),
            Matrix::zeros(3, 8)
        );
        assert!(projector_forward(&Matrix::zeros(3, 4), &model).is_err());

        let f = Prng::new(2).uniform_matrix(3, 5, -1.0, 1.0);
        let got = projector_forward(&f, &model).unwrap();
        for r in 0..3 {
            let inner: Vec<f64> = (0..8)
                .map(|c| gelu((0..5).map(|q| f.get(r, q) * model.projector_w1.get(q, c)).sum()))
                .collect();
            for c in 0..8 {
                let want: f64 = (0..8).map(|q| inner[q] * model.projector_w2.get(q, c)).sum();
                assert!((got.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let model = Model::new(cfg(Mode::Composite), 7).unwrap();
        let f = Prng::new(3).uniform_matrix(4, 5, -1.0, 1.0);
        let ids = [1, 4, 2, 9, 0];
        let a = model_forward(&model, &f, &ids).unwrap();
        assert_eq!(a.shape(), (5, 11));
        assert!(a.is_finite());
        let again = model_forward(&Model::new(cfg(Mode::Composite), 7).unwrap(), &f, &ids).unwrap();
        assert_eq!(a.data(), again.data());
        let base = model_forward(&model.with_mode(Mode::Baseline), &f, &ids).unwrap();
        assert_eq!(base.shape(), (5, 11));
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = Model::new(cfg(Mode::Baseline), 0).unwrap();
        let f = Matrix::zeros(0, 5);
        assert!(matches!(
            model_forward(&model, &f, &[11]),
            Err(Error::UnknownToken { id: 11, vocab: 11 })
        ));
        assert!(model_forward(&model, &f, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(Mode::Baseline);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = cfg(Mode::Baseline);
        c.vocab = 1;
        assert!(c.validate().is_err());
        let mut c = cfg(Mode::Baseline);
        c.layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_model_decoder_is_identity() {
        let model = Model::zeros(cfg(Mode::Composite)).unwrap();
        let mut rng = Prng::new(4);
        let i = rng.uniform_matrix(3, 8, -1.0, 1.0);
        let t = rng.uniform_matrix(2, 8, -1.0, 1.0);
        assert_eq!(decoder_stack(&model, &i, &t).unwrap(), t);
        assert_eq!(decoder_stack(&model.with_mode(Mode::Baseline), &i, &t).unwrap(), t);
    }
}
