use crate::error::{Error, Result};
use crate::inference::cache::{decode_step, prefill};
use crate::layers::{model_forward, Model};
use crate::tensor::Matrix;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Generated ids together with the logits each one was chosen from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub ids: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

fn check_n_new(n_new: usize) -> Result<()> {
    if n_new == 0 {
        return Err(Error::invalid("generate_greedy", "n_new must be at least 1"));
    }
    Ok(())
}

/// Greedy decoding through the KV cache.
pub fn generate_greedy_traced(
    model: &Model,
    visual_features: &Matrix,
    prompt_ids: &[usize],
    n_new: usize,
) -> Result<Generation> {
    check_n_new(n_new)?;
    let (mut cache, mut logits) = prefill(model, visual_features, prompt_ids)?;
    let mut out = Generation {
        ids: Vec::with_capacity(n_new),
        logits: Vec::with_capacity(n_new),
    };
    loop {
        let next = argmax_lowest(logits.data());
        out.ids.push(next);
        out.logits.push(logits.into_data());
        if out.ids.len() == n_new {
            return Ok(out);
        }
        logits = decode_step(model, &mut cache, next)?;
    }
}

pub fn generate_greedy(
    model: &Model,
    visual_features: &Matrix,
    prompt_ids: &[usize],
    n_new: usize,
) -> Result<Vec<usize>> {
    generate_greedy_traced(model, visual_features, prompt_ids, n_new).map(|g| g.ids)
}

/// Greedy decoding that reruns the full forward pass for every token. Used as
/// the oracle for the cached path.
pub fn generate_greedy_recompute(
    model: &Model,
    visual_features: &Matrix,
    prompt_ids: &[usize],
    n_new: usize,
) -> Result<Generation> {
    check_n_new(n_new)?;
    let mut seq = prompt_ids.to_vec();
    let mut out = Generation {
        ids: Vec::with_capacity(n_new),
        logits: Vec::with_capacity(n_new),
    };
    for _ in 0..n_new {
        let logits = model_forward(model, visual_features, &seq)?;
        let last = logits.row(seq.len() - 1).to_vec();
        let next = argmax_lowest(&last);
        out.ids.push(next);
        out.logits.push(last);
        seq.push(next);
    }
    Ok(out)
}
