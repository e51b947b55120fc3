use crate::attention::{attend_heads, build_trapezoidal_mask};
use crate::error::{Error, Result};
use crate::layers::{
    baseline_layer_full, composite_layer_full, embed_tokens, ffn_forward, projector_forward, Mode, Model,
};
use crate::tensor::{matmul, Matrix};

/// Keys and values of every cached position for one layer, visual rows first.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCache {
    pub keys: Matrix,
    pub values: Matrix,
}

impl LayerCache {
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer attention state for one generation session.
#[derive(Clone, Debug, PartialEq)]
pub struct KVCache {
    mode: Mode,
    k_visual: usize,
    n_text: usize,
    layers: Vec<LayerCache>,
}

impl KVCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn visual_len(&self) -> usize {
        self.k_visual
    }

    pub fn text_len(&self) -> usize {
        self.n_text
    }

    /// Cached positions per layer (`visual + text`).
    pub fn positions(&self) -> usize {
        self.k_visual + self.n_text
    }

    pub fn layers(&self) -> &[LayerCache] {
        &self.layers
    }
}

/// Processes the image and prompt, filling the cache and returning the logits
/// of the last prompt token (`1×vocab`).
///
/// In composite mode the visual keys/values of layer `l` are computed from the
/// aligner output of layer `l-1`; no visual token ever forms a query.
pub fn prefill(model: &Model, visual_features: &Matrix, prompt_ids: &[usize]) -> Result<(KVCache, Matrix)> {
    if prompt_ids.is_empty() {
        return Err(Error::invalid("prefill", "prompt must contain at least one token"));
    }
    let visual = projector_forward(visual_features, model)?;
    let text = embed_tokens(model, prompt_ids)?;
    let k = visual.rows();
    let n = text.rows();
    let mut layers = Vec::with_capacity(model.layers.len());
    let last = match model.mode() {
        Mode::Composite => {
            let mut i = visual;
            let mut t = text;
            for layer in &model.layers {
                let out = composite_layer_full(&i, &t, layer)?;
                layers.push(LayerCache {
                    keys: out.keys,
                    values: out.values,
                });
                i = out.visual;
                t = out.text;
            }
            t.slice_rows(n - 1, n)
        }
        Mode::Baseline => {
            let mut x = Matrix::vstack(&visual, &text)?;
            for layer in &model.layers {
                let out = baseline_layer_full(&x, layer)?;
                layers.push(LayerCache {
                    keys: out.keys,
                    values: out.values,
                });
                x = out.out;
            }
            x.slice_rows(k + n - 1, k + n)
        }
    };
    let logits = matmul(&last, &model.unembed)?;
    let cache = KVCache {
        mode: model.mode(),
        k_visual: k,
        n_text: n,
        layers,
    };
    Ok((cache, logits))
}

/// Feeds one token through every layer against the cache, appending one
/// position per layer, and returns its logits (`1×vocab`).
///
/// Cached visual entries are only read. The step is identical in both modes:
/// the new token is a text token attending to everything before it.
pub fn decode_step(model: &Model, cache: &mut KVCache, token_id: usize) -> Result<Matrix> {
    if cache.mode != model.mode() || cache.layers.len() != model.layers.len() {
        return Err(Error::invalid("decode_step", "cache was not produced for this model"));
    }
    let mut x = embed_tokens(model, &[token_id])?;
    let prior = cache.positions();
    let mask = build_trapezoidal_mask(prior, 1)?;
    for (layer, lc) in model.layers.iter().zip(cache.layers.iter_mut()) {
        let w = &layer.attn;
        let q = matmul(&x, &w.wq)?;
        lc.keys.append_rows(&matmul(&x, &w.wk)?)?;
        lc.values.append_rows(&matmul(&x, &w.wv)?)?;
        let (attn, _, _) = attend_heads(&q, &lc.keys, &lc.values, &mask, w, false)?;
        let mid = x.add(&attn)?;
        x = ffn_forward(&mid, layer)?.add(&mid)?;
    }
    cache.n_text += 1;
    matmul(&x, &model.unembed)
}
