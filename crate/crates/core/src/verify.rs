//! Seeded property suites: oracle equivalences, reductions, identities, cache
//! agreement, FLOP accounting and finite-difference gradient checks.
//!
//! Trials are independent and run through an order-preserving parallel map,
//! so reports are byte-identical for a given seed whether or not the
//! `parallel` feature is on.

use std::fmt::Write as _;

use crate::attention::{
    build_causal_mask, build_trapezoidal_mask, composite_attention_backward, composite_attention_forward,
    self_attention_forward, AttentionMask, AttentionWeights,
};
use crate::costmodel::{flops_baseline_total, instrumented_flops, measure_delta, CostConfig, DeltaPolynomial};
use crate::error::Result;
use crate::inference::{generate_greedy_recompute, generate_greedy_traced};
use crate::layers::{
    aligner_backward, aligner_forward, baseline_decoder_layer, composite_decoder_layer,
    composite_decoder_layer_backward, ffn_backward, ffn_forward, model_forward, LayerWeights, Mode, Model, ModelConfig,
};
use crate::par;
use crate::reference::{
    central_difference, naive_aligner, naive_causal_self_attention, naive_composite_attention, naive_composite_layer,
    naive_ffn, naive_matmul, relative_error,
};
use crate::tensor::{approx_equal, matmul, softmax_rows_masked, Matrix, Prng};

/// One failed case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseFailure {
    pub trial: usize,
    pub config: String,
    pub max_diff: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    /// Largest discrepancy seen over all cases.
    pub worst: f64,
    pub tolerance: f64,
    pub failures: Vec<CaseFailure>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn failures(&self) -> usize {
        self.suites.iter().map(|s| s.failures.len()).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for suite in &self.suites {
            let _ = writeln!(
                s,
                "{:<5} {:<28} cases={:<5} worst={:.3e} tol={:.0e}",
                if suite.passed() { "PASS" } else { "FAIL" },
                suite.name,
                suite.cases,
                suite.worst,
                suite.tolerance
            );
            for f in &suite.failures {
                let _ = writeln!(
                    s,
                    "      trial {} [{}] max_diff={:.3e} tol={:.0e}",
                    f.trial, f.config, f.max_diff, f.tolerance
                );
            }
        }
        let _ = writeln!(s, "failures: {}", self.failures());
        s
    }
}

/// Outcome of one trial: a description and a discrepancy to compare against
/// the suite tolerance. Errors count as infinite discrepancy.
type Trial = (String, f64);

fn collect(name: &'static str, tolerance: f64, trials: Vec<Result<Trial>>) -> SuiteResult {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let cases = trials.len();
    for (i, t) in trials.into_iter().enumerate() {
        let (config, diff) = match t {
            Ok(x) => x,
            Err(e) => (format!("error: {e}"), f64::INFINITY),
        };
        worst = worst.max(diff);
        if diff.is_nan() || diff > tolerance {
            failures.push(CaseFailure {
                trial: i,
                config,
                max_diff: diff,
                tolerance,
            });
        }
    }
    SuiteResult {
        name,
        cases,
        worst,
        tolerance,
        failures,
    }
}

fn trial_rng(seed: u64, suite: u64, trial: usize) -> Prng {
    Prng::new(seed ^ suite.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (trial as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn run_trials(
    name: &'static str,
    suite_id: u64,
    tolerance: f64,
    seed: u64,
    trials: usize,
    f: impl Fn(&mut Prng) -> Result<Trial> + Sync + Send,
) -> SuiteResult {
    let results = par::map_collect((0..trials).collect(), |t| f(&mut trial_rng(seed, suite_id, t)));
    collect(name, tolerance, results)
}

fn max_diff(a: &Matrix, b: &Matrix) -> Result<f64> {
    approx_equal(a, b, 0.0).map(|(d, _)| d)
}

/// Random composite-attention problem with `k ≤ 12`, `n ≤ 12`, `h ∈ {4, 8}`,
/// `heads ∈ {1, 2}`.
pub fn random_attention_case(rng: &mut Prng) -> Result<(Matrix, Matrix, AttentionWeights)> {
    let h = [4, 8][rng.below(2)];
    let heads = 1 + rng.below(2);
    let k = rng.between(0, 12);
    let n = rng.between(1, 12);
    let w = AttentionWeights::random(rng, h, heads, 0.5)?;
    let i = rng.uniform_matrix(k, h, -1.0, 1.0);
    let t = rng.uniform_matrix(n, h, -1.0, 1.0);
    Ok((i, t, w))
}

/// Mask over `[visual; text]` rows: visual rows see only themselves, text
/// rows follow the trapezoid (which on the full sequence is causal).
pub fn extended_slice_mask(k: usize, n: usize) -> AttentionMask {
    AttentionMask::from_fn(
        k + n,
        k + n,
        |i, j| if i < k { i == j } else { j < k || j - k <= i - k },
    )
}

/// Composite attention against the text-row slice of full self-attention run
/// over `[I; T]` with [`extended_slice_mask`].
pub fn slice_equivalence_diff(i: &Matrix, t: &Matrix, w: &AttentionWeights) -> Result<f64> {
    let k = i.rows();
    let n = t.rows();
    let composite = composite_attention_forward(i, t, w)?;
    let full = self_attention_forward(&Matrix::vstack(i, t)?, w, &extended_slice_mask(k, n))?;
    max_diff(&composite, &full.slice_rows(k, k + n))
}

fn describe(i: &Matrix, t: &Matrix, w: &AttentionWeights) -> String {
    format!("k={} n={} h={} heads={}", i.rows(), t.rows(), w.hidden(), w.heads())
}

pub fn suite_mask_laws() -> SuiteResult {
    let mut trials = Vec::new();
    for k in 0..=32 {
        for n in 1..=32 {
            trials.push((|| -> Result<Trial> {
                let m = build_trapezoidal_mask(k, n)?;
                let bad = (0..n).filter(|&i| m.permitted_in_row(i) != k + i + 1).count();
                let mut miss = bad as f64;
                if k == 0 && !m.same_pattern(&build_causal_mask(n)?) {
                    miss += 1.0;
                }
                Ok((format!("k={k} n={n}"), miss))
            })());
        }
    }
    collect("mask_laws", 0.0, trials)
}

pub fn suite_kernels(seed: u64, trials: usize) -> SuiteResult {
    run_trials("matmul_softmax", 1, 1e-9, seed, trials, |rng| {
        let dims: Vec<usize> = (0..4).map(|_| rng.between(1, 16)).collect();
        let a = rng.uniform_matrix(dims[0], dims[1], -1.0, 1.0);
        let b = rng.uniform_matrix(dims[1], dims[2], -1.0, 1.0);
        let c = rng.uniform_matrix(dims[2], dims[3], -1.0, 1.0);
        let left = matmul(&matmul(&a, &b)?, &c)?;
        let right = matmul(&a, &matmul(&b, &c)?)?;
        let assoc = max_diff(&left, &right)?;
        let oracle = max_diff(&matmul(&a, &b)?, &naive_matmul(&a, &b))?;

        let rows = dims[0];
        let cols = dims[1];
        let scores = rng.uniform_matrix(rows, cols, -30.0, 30.0);
        let keep: Vec<usize> = (0..rows).map(|_| rng.below(cols)).collect();
        let mask = AttentionMask::from_fn(rows, cols, |i, j| j == keep[i] || (i + j) % 3 == 0);
        let p = softmax_rows_masked(&scores, &mask)?;
        let mut sm = 0.0f64;
        for i in 0..rows {
            let row_sum: f64 = p.row(i).iter().sum();
            sm = sm.max((row_sum - 1.0).abs());
            for j in 0..cols {
                if !mask.permits(i, j) && p.get(i, j) != 0.0 {
                    sm = f64::INFINITY;
                }
            }
        }
        Ok((format!("dims={dims:?}"), assoc.max(oracle).max(sm * 1e3)))
    })
}

pub fn suite_slice_equivalence(seed: u64, trials: usize) -> SuiteResult {
    run_trials("slice_equivalence", 2, 1e-9, seed, trials, |rng| {
        let (i, t, w) = random_attention_case(rng)?;
        let slice = slice_equivalence_diff(&i, &t, &w)?;
        let naive = max_diff(
            &composite_attention_forward(&i, &t, &w)?,
            &naive_composite_attention(&i, &t, &w),
        )?;
        Ok((describe(&i, &t, &w), slice.max(naive)))
    })
}

pub fn suite_self_attention_oracle(seed: u64, trials: usize) -> SuiteResult {
    run_trials("self_attention_oracle", 3, 1e-12, seed, trials, |rng| {
        let (_, t, w) = random_attention_case(rng)?;
        let rows = 1 + rng.below(8);
        let x = rng.uniform_matrix(rows, w.hidden(), -1.0, 1.0);
        let got = self_attention_forward(&x, &w, &build_causal_mask(x.rows())?)?;
        let d = max_diff(&got, &naive_causal_self_attention(&x, &w))?;
        Ok((describe(&Matrix::zeros(0, 0), &t, &w), d))
    })
}

fn random_model(rng: &mut Prng, layers: usize, mode: Mode) -> Result<Model> {
    let hidden = [4, 8][rng.below(2)];
    let cfg = ModelConfig {
        layers,
        hidden,
        heads: [1, 2][rng.below(2)],
        vocab: rng.between(2, 24),
        feat_dim: rng.between(1, 6),
        mode,
    };
    Model::with_stddev(cfg, rng.next_u64(), 0.3)
}

pub fn suite_reductions(seed: u64, trials: usize) -> SuiteResult {
    run_trials("k0_reductions", 4, 1e-12, seed, trials, |rng| {
        let (_, t, w) = random_attention_case(rng)?;
        let h = w.hidden();
        let empty = Matrix::zeros(0, h);
        // Attention and layers must agree bit for bit.
        let attn_exact = composite_attention_forward(&empty, &t, &w)?
            == self_attention_forward(&t, &w, &build_causal_mask(t.rows())?)?;
        let layer = LayerWeights::random(rng, h, w.heads(), 0.3)?;
        let (vis, txt) = composite_decoder_layer(&empty, &t, &layer)?;
        let layer_exact = vis.rows() == 0 && txt == baseline_decoder_layer(&t, &layer)?;

        let depth = rng.between(1, 4);
        let model = random_model(rng, depth, Mode::Composite)?;
        let n = rng.between(1, 8);
        let ids: Vec<usize> = (0..n).map(|_| rng.below(model.config.vocab)).collect();
        let features = Matrix::zeros(0, model.config.feat_dim);
        let a = model_forward(&model, &features, &ids)?;
        let b = model_forward(&model.with_mode(Mode::Baseline), &features, &ids)?;
        let mut d = max_diff(&a, &b)?;
        if !attn_exact || !layer_exact {
            d = f64::INFINITY;
        }
        Ok((format!("n={} h={h} heads={} depth={depth}", t.rows(), w.heads()), d))
    })
}

pub fn suite_aligner(seed: u64, trials: usize) -> SuiteResult {
    run_trials("aligner_identities", 5, 1e-12, seed, trials, |rng| {
        let h = [4, 8][rng.below(2)];
        let k = rng.between(0, 10);
        let i = rng.uniform_matrix(k, h, -2.0, 2.0);
        let zero = LayerWeights::zeros(h, 1)?;
        let mut bad = aligner_forward(&i, &zero)? != i;

        let attn = AttentionWeights::new(
            Matrix::zeros(h, h),
            Matrix::zeros(h, h),
            Matrix::identity(h),
            Matrix::identity(h),
            1,
        )?;
        let ident = LayerWeights::new(attn, Matrix::zeros(h, 4 * h), Matrix::zeros(4 * h, h))?;
        bad |= aligner_forward(&i, &ident)? != i.scale(2.0);

        let layer = LayerWeights::random(rng, h, 1, 0.3)?;
        let mut d = if k > 0 {
            max_diff(&aligner_forward(&i, &layer)?, &naive_aligner(&i, &layer))?
        } else {
            0.0
        };
        let x = rng.uniform_matrix(1 + k, h, -1.0, 1.0);
        d = d.max(max_diff(&ffn_forward(&x, &layer)?, &naive_ffn(&x, &layer))?);
        if bad {
            d = f64::INFINITY;
        }
        Ok((format!("k={k} h={h}"), d))
    })
}

pub fn suite_layer_oracle(seed: u64, trials: usize) -> SuiteResult {
    run_trials("composite_layer_oracle", 6, 1e-11, seed, trials, |rng| {
        let (i, t, w) = random_attention_case(rng)?;
        let layer = LayerWeights::random(rng, w.hidden(), w.heads(), 0.3)?;
        let (vi, vt) = composite_decoder_layer(&i, &t, &layer)?;
        let (ni, nt) = naive_composite_layer(&i, &t, &layer);
        let mut d = max_diff(&vt, &nt)?;
        if i.rows() > 0 {
            d = d.max(max_diff(&vi, &ni)?);
        }
        Ok((describe(&i, &t, &w), d))
    })
}

pub fn suite_cache(seed: u64, trials: usize) -> SuiteResult {
    run_trials("cache_vs_recompute", 7, 1e-9, seed, trials, |rng| {
        let mode = if rng.below(2) == 0 {
            Mode::Baseline
        } else {
            Mode::Composite
        };
        let depth = rng.between(1, 3);
        let model = random_model(rng, depth, mode)?;
        let k = rng.between(0, 8);
        let features = rng.uniform_matrix(k, model.config.feat_dim, -1.0, 1.0);
        let prompt: Vec<usize> = (0..rng.between(1, 6)).map(|_| rng.below(model.config.vocab)).collect();
        let n_new = 8;
        let cached = generate_greedy_traced(&model, &features, &prompt, n_new)?;
        let oracle = generate_greedy_recompute(&model, &features, &prompt, n_new)?;
        let mut d = 0.0f64;
        for (a, b) in cached.logits.iter().zip(&oracle.logits) {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        }
        if cached.ids != oracle.ids {
            d = f64::INFINITY;
        }
        Ok((format!("mode={mode} k={k} n={} d={depth}", prompt.len()), d))
    })
}

/// Random toy config for FLOP instrumentation: `h ≤ 32`, `k, n ≤ 16`, `d ≤ 3`.
pub fn random_flops_case(rng: &mut Prng) -> Result<(Model, usize, usize)> {
    let heads = [1, 2, 4][rng.below(3)];
    let hidden = heads * rng.between(1, 32 / heads);
    let cfg = ModelConfig {
        layers: rng.between(1, 3),
        hidden,
        heads,
        vocab: 8,
        feat_dim: 3,
        mode: Mode::Baseline,
    };
    let model = Model::new(cfg, rng.next_u64())?;
    Ok((model, rng.between(0, 16), rng.between(1, 16)))
}

/// Measured-minus-closed-form composite delta: `(2T + 2V)·d·h²`.
pub const EXPECTED_DELTA: DeltaPolynomial = DeltaPolynomial {
    per_text: 2,
    per_visual: 2,
    residual: 0,
};

pub fn suite_flops(seed: u64, trials: usize) -> SuiteResult {
    run_trials("instrumented_flops", 8, 0.0, seed, trials, |rng| {
        let (model, k, n) = random_flops_case(rng)?;
        let cfg = CostConfig::new(
            n as u64,
            k as u64,
            model.config.hidden as u64,
            model.config.layers as u64,
        )?;
        let (base, _) = instrumented_flops(&model, k, n)?;
        let gap = (base as i128 - flops_baseline_total(&cfg) as i128).unsigned_abs() as f64;
        let delta = measure_delta(&model, k, n, 0)?;
        let off = if delta == EXPECTED_DELTA { 0.0 } else { 1.0 };
        Ok((
            format!("k={k} n={n} h={} d={} delta={delta:?}", cfg.hidden, cfg.layers),
            gap + off,
        ))
    })
}

/// Runs every forward-side suite with `trials` random trials each.
pub fn verify_all(seed: u64, trials: usize) -> VerifyReport {
    let small = trials.div_ceil(10).max(1);
    VerifyReport {
        seed,
        suites: vec![
            suite_mask_laws(),
            suite_kernels(seed, trials),
            suite_self_attention_oracle(seed, trials),
            suite_slice_equivalence(seed, trials),
            suite_reductions(seed, trials),
            suite_aligner(seed, trials),
            suite_layer_oracle(seed, trials),
            suite_cache(seed, small),
            suite_flops(seed, small),
        ],
    }
}

// ---------------------------------------------------------------------------
// Gradient checks

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Layer shapes `(k, n, h, heads)` the gradient checks cycle through.
pub const GRADCHECK_SHAPES: [(usize, usize, usize, usize); 3] = [(3, 4, 8, 2), (0, 5, 8, 1), (6, 2, 4, 1)];

/// Worst relative error per named gradient.
pub type GradErrors = Vec<(&'static str, f64)>;

fn check(
    name: &'static str,
    analytic: &Matrix,
    x: &Matrix,
    eps: f64,
    f: impl Fn(&Matrix) -> f64,
) -> (&'static str, f64) {
    if x.is_empty() {
        return (name, 0.0);
    }
    (name, relative_error(analytic, &central_difference(x, eps, f)))
}

fn gc_inputs(rng: &mut Prng, shape: (usize, usize, usize, usize)) -> Result<(Matrix, Matrix, LayerWeights)> {
    let (k, n, h, heads) = shape;
    let layer = LayerWeights::random(rng, h, heads, 0.4)?;
    Ok((
        rng.uniform_matrix(k, h, -1.0, 1.0),
        rng.uniform_matrix(n, h, -1.0, 1.0),
        layer,
    ))
}

fn with_attn(w: &AttentionWeights, which: usize, m: &Matrix) -> AttentionWeights {
    let mut w = w.clone();
    *match which {
        0 => &mut w.wq,
        1 => &mut w.wk,
        2 => &mut w.wv,
        _ => &mut w.wo,
    } = m.clone();
    w
}

fn with_layer(l: &LayerWeights, which: usize, m: &Matrix) -> LayerWeights {
    let mut l = l.clone();
    match which {
        0..=3 => l.attn = with_attn(&l.attn, which, m),
        4 => l.ffn_w1 = m.clone(),
        _ => l.ffn_w2 = m.clone(),
    }
    l
}

pub fn gradcheck_attention(rng: &mut Prng, shape: (usize, usize, usize, usize), eps: f64) -> Result<GradErrors> {
    let (i, t, layer) = gc_inputs(rng, shape)?;
    let w = layer.attn;
    let g = rng.uniform_matrix(t.rows(), w.hidden(), -1.0, 1.0);
    let grads = composite_attention_backward(&i, &t, &w, &g)?;
    let loss = |i: &Matrix, t: &Matrix, w: &AttentionWeights| {
        composite_attention_forward(i, t, w)
            .and_then(|o| o.dot(&g))
            .unwrap_or(f64::NAN)
    };
    let mut out = vec![
        check("attn.visual", &grads.visual, &i, eps, |x| loss(x, &t, &w)),
        check("attn.text", &grads.text, &t, eps, |x| loss(&i, x, &w)),
    ];
    let names = ["attn.wq", "attn.wk", "attn.wv", "attn.wo"];
    let analytic = [&grads.wq, &grads.wk, &grads.wv, &grads.wo];
    let primal = [&w.wq, &w.wk, &w.wv, &w.wo];
    for idx in 0..4 {
        out.push(check(names[idx], analytic[idx], primal[idx], eps, |x| {
            loss(&i, &t, &with_attn(&w, idx, x))
        }));
    }
    Ok(out)
}

pub fn gradcheck_ffn(rng: &mut Prng, shape: (usize, usize, usize, usize), eps: f64) -> Result<GradErrors> {
    let (_, t, layer) = gc_inputs(rng, shape)?;
    let g = rng.uniform_matrix(t.rows(), layer.hidden(), -1.0, 1.0);
    let grads = ffn_backward(&t, &layer, &g)?;
    let loss = |x: &Matrix, l: &LayerWeights| ffn_forward(x, l).and_then(|o| o.dot(&g)).unwrap_or(f64::NAN);
    Ok(vec![
        check("ffn.input", &grads.input, &t, eps, |x| loss(x, &layer)),
        check("ffn.w1", &grads.w1, &layer.ffn_w1, eps, |x| {
            loss(&t, &with_layer(&layer, 4, x))
        }),
        check("ffn.w2", &grads.w2, &layer.ffn_w2, eps, |x| {
            loss(&t, &with_layer(&layer, 5, x))
        }),
    ])
}

pub fn gradcheck_aligner(rng: &mut Prng, shape: (usize, usize, usize, usize), eps: f64) -> Result<GradErrors> {
    let (k, _, h, heads) = shape;
    // The aligner needs visual tokens to have anything to check.
    let (i, _, layer) = gc_inputs(rng, (k.max(2), 1, h, heads))?;
    let g = rng.uniform_matrix(i.rows(), h, -1.0, 1.0);
    let grads = aligner_backward(&i, &layer, &g)?;
    let loss = |x: &Matrix, l: &LayerWeights| aligner_forward(x, l).and_then(|o| o.dot(&g)).unwrap_or(f64::NAN);
    Ok(vec![
        check("aligner.input", &grads.input, &i, eps, |x| loss(x, &layer)),
        check("aligner.wv", &grads.wv, &layer.attn.wv, eps, |x| {
            loss(&i, &with_layer(&layer, 2, x))
        }),
        check("aligner.wo", &grads.wo, &layer.attn.wo, eps, |x| {
            loss(&i, &with_layer(&layer, 3, x))
        }),
        check("aligner.w1", &grads.w1, &layer.ffn_w1, eps, |x| {
            loss(&i, &with_layer(&layer, 4, x))
        }),
        check("aligner.w2", &grads.w2, &layer.ffn_w2, eps, |x| {
            loss(&i, &with_layer(&layer, 5, x))
        }),
    ])
}

pub fn gradcheck_layer(rng: &mut Prng, shape: (usize, usize, usize, usize), eps: f64) -> Result<GradErrors> {
    let (i, t, layer) = gc_inputs(rng, shape)?;
    let h = layer.hidden();
    let gi = rng.uniform_matrix(i.rows(), h, -1.0, 1.0);
    let gt = rng.uniform_matrix(t.rows(), h, -1.0, 1.0);
    let grads = composite_decoder_layer_backward(&i, &t, &layer, &gi, &gt)?;
    let loss = |i: &Matrix, t: &Matrix, l: &LayerWeights| {
        composite_decoder_layer(i, t, l)
            .and_then(|(oi, ot)| {
                let vis = if oi.rows() == 0 { 0.0 } else { oi.dot(&gi)? };
                Ok(vis + ot.dot(&gt)?)
            })
            .unwrap_or(f64::NAN)
    };
    let mut out = vec![
        check("layer.visual", &grads.visual, &i, eps, |x| loss(x, &t, &layer)),
        check("layer.text", &grads.text, &t, eps, |x| loss(&i, x, &layer)),
    ];
    let names = [
        "layer.wq",
        "layer.wk",
        "layer.wv",
        "layer.wo",
        "layer.ffn_w1",
        "layer.ffn_w2",
    ];
    let analytic = [&grads.wq, &grads.wk, &grads.wv, &grads.wo, &grads.ffn_w1, &grads.ffn_w2];
    let primal = [
        &layer.attn.wq,
        &layer.attn.wk,
        &layer.attn.wv,
        &layer.attn.wo,
        &layer.ffn_w1,
        &layer.ffn_w2,
    ];
    for idx in 0..6 {
        out.push(check(names[idx], analytic[idx], primal[idx], eps, |x| {
            loss(&i, &t, &with_layer(&layer, idx, x))
        }));
    }
    Ok(out)
}

/// Finite-difference checks of every hand-written backward pass over `seeds`
/// consecutive seeds starting at `seed`, cycling through [`GRADCHECK_SHAPES`].
pub fn gradcheck_all(seed: u64, seeds: usize, eps: f64) -> VerifyReport {
    type Check = fn(&mut Prng, (usize, usize, usize, usize), f64) -> Result<GradErrors>;
    let checks: [(&'static str, Check); 4] = [
        ("grad_composite_attention", gradcheck_attention),
        ("grad_aligner", gradcheck_aligner),
        ("grad_ffn", gradcheck_ffn),
        ("grad_composite_layer", gradcheck_layer),
    ];
    let suites = checks
        .iter()
        .enumerate()
        .map(|(cid, &(name, f))| {
            let results = par::map_collect((0..seeds).collect(), |s| {
                let shape = GRADCHECK_SHAPES[s % GRADCHECK_SHAPES.len()];
                let mut rng = trial_rng(seed.wrapping_add(s as u64), 100 + cid as u64, 0);
                f(&mut rng, shape, eps).map(|errs| {
                    let (worst_name, worst) =
                        errs.iter()
                            .copied()
                            .fold(("-", 0.0f64), |a, b| if b.1.is_nan() || b.1 > a.1 { b } else { a });
                    (
                        format!(
                            "seed={} (k,n,h,heads)={shape:?} worst={worst_name}",
                            seed.wrapping_add(s as u64)
                        ),
                        worst,
                    )
                })
            });
            collect(name, GRADCHECK_TOL, results)
        })
        .collect();
    VerifyReport { seed, suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_small_run_passes() {
        let r = verify_all(0, 10);
        assert!(r.passed(), "{}", r.render());
        assert_eq!(r.suites.len(), 9);
    }

    #[test]
    fn gradcheck_small_run_passes() {
        let r = gradcheck_all(0, 3, GRADCHECK_EPS);
        assert!(r.passed(), "{}", r.render());
    }

    #[test]
    fn failing_case_is_reported() {
        let s = collect(
            "demo",
            1e-9,
            vec![Ok(("a".into(), 0.0)), Ok(("b".into(), 1.0)), Ok(("c".into(), f64::NAN))],
        );
        assert_eq!(s.failures.len(), 2);
        assert_eq!(s.failures[0].trial, 1);
        let report = VerifyReport {
            seed: 3,
            suites: vec![s],
        };
        let text = report.render();
        assert!(text.contains("FAIL") && text.contains("[b]") && text.contains("failures: 2"));
    }

    #[test]
    fn extended_mask_text_rows_are_causal() {
        let m = extended_slice_mask(3, 4);
        for i in 3..7 {
            for j in 0..7 {
                assert_eq!(m.permits(i, j), j <= i);
            }
        }
        assert_eq!(m.permitted_in_row(1), 1);
    }
}
