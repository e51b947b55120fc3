use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::inference::cache::{decode_step, prefill};
use crate::inference::generate::argmax_lowest;
use crate::layers::{Mode, Model};
use crate::tensor::{Matrix, Prng};

pub const BENCH_CSV_HEADER: &str = "mode,V,T,gen,prefill_s,decode_s_total,tok_per_s";

/// Timing of one (mode, generation length) cell, taken from the median repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub mode: Mode,
    pub visual_tokens: usize,
    pub text_tokens: usize,
    pub gen: usize,
    pub prefill_seconds: f64,
    /// Wall-clock of each decode step; `gen - 1` entries since the first new
    /// token comes from the prefill logits.
    pub decode_seconds: Vec<f64>,
    pub tokens_per_second: f64,
}

impl BenchReport {
    pub fn decode_total(&self) -> f64 {
        self.decode_seconds.iter().sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.prefill_seconds + self.decode_total()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.9},{:.9},{:.3}",
            self.mode,
            self.visual_tokens,
            self.text_tokens,
            self.gen,
            self.prefill_seconds,
            self.decode_total(),
            self.tokens_per_second
        )
    }
}

#[derive(Clone, Debug)]
pub struct BenchTable {
    pub baseline: Vec<BenchReport>,
    pub composite: Vec<BenchReport>,
    /// `(gen, composite tok/s ÷ baseline tok/s)`, one row per requested length.
    pub ratios: Vec<(usize, f64)>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(BENCH_CSV_HEADER);
        s.push('\n');
        for r in self.baseline.iter().chain(&self.composite) {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn ratio_table(&self) -> String {
        let mut s = String::from("gen,baseline_tok_per_s,composite_tok_per_s,speed_ratio\n");
        for ((b, c), (g, r)) in self.baseline.iter().zip(&self.composite).zip(&self.ratios) {
            let _ = writeln!(s, "{g},{:.3},{:.3},{r:.3}", b.tokens_per_second, c.tokens_per_second);
        }
        s
    }
}

/// One timed session: prefill then `steps` decode steps.
struct Run {
    prefill: f64,
    steps: Vec<f64>,
}

fn timed_run(model: &Model, features: &Matrix, prompt: &[usize], steps: usize) -> Result<Run> {
    let start = Instant::now();
    let (mut cache, mut logits) = prefill(model, features, prompt)?;
    let prefill_s = start.elapsed().as_secs_f64();
    let mut times = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = argmax_lowest(logits.data());
        let t = Instant::now();
        logits = decode_step(model, &mut cache, next)?;
        times.push(t.elapsed().as_secs_f64());
    }
    black_box(&logits);
    Ok(Run {
        prefill: prefill_s.max(f64::MIN_POSITIVE),
        steps: times,
    })
}

fn median_report(runs: &[Run], mode: Mode, v: usize, t: usize, gen: usize) -> BenchReport {
    let total = |r: &Run| r.prefill + r.steps[..gen - 1].iter().sum::<f64>();
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| total(&runs[a]).total_cmp(&total(&runs[b])));
    let pick = &runs[order[(runs.len() - 1) / 2]];
    let decode_seconds = pick.steps[..gen - 1].to_vec();
    let elapsed = total(pick);
    BenchReport {
        mode,
        visual_tokens: v,
        text_tokens: t,
        gen,
        prefill_seconds: pick.prefill,
        decode_seconds,
        tokens_per_second: gen as f64 / elapsed,
    }
}

/// Times prefill plus greedy decoding for both wirings of the same weights.
///
/// Each repeat runs one session per mode up to the longest requested length;
/// the time for `gen` tokens is the prefill plus the first `gen - 1` decode
/// steps of that session. One warm-up session per mode is discarded and each
/// cell reports the repeat with the median total time. Sessions run serially,
/// alternating modes.
pub fn bench_prefill_decode(
    baseline: &Model,
    composite: &Model,
    visual_tokens: usize,
    text_tokens: usize,
    gen_lengths: &[usize],
    repeats: usize,
) -> Result<BenchTable> {
    const OP: &str = "bench_prefill_decode";
    if repeats < 3 {
        return Err(Error::invalid(OP, format!("repeats must be at least 3, got {repeats}")));
    }
    if gen_lengths.is_empty() || gen_lengths.contains(&0) {
        return Err(Error::invalid(
            OP,
            "generation lengths must be a non-empty list of positive counts",
        ));
    }
    if text_tokens == 0 {
        return Err(Error::invalid(OP, "prompt length must be at least 1"));
    }
    if baseline.mode() != Mode::Baseline || composite.mode() != Mode::Composite {
        return Err(Error::invalid(
            OP,
            "expected a baseline-mode and a composite-mode model",
        ));
    }
    let mut cb = baseline.config;
    cb.mode = Mode::Composite;
    if cb != composite.config {
        return Err(Error::invalid(OP, "models must share every config field except mode"));
    }

    let cfg = baseline.config;
    let mut rng = Prng::new(0);
    let features = rng.uniform_matrix(visual_tokens, cfg.feat_dim, -1.0, 1.0);
    let prompt: Vec<usize> = (0..text_tokens).map(|_| rng.below(cfg.vocab)).collect();
    let steps = gen_lengths.iter().copied().max().unwrap_or(1) - 1;

    timed_run(baseline, &features, &prompt, steps)?;
    timed_run(composite, &features, &prompt, steps)?;
    let mut base_runs = Vec::with_capacity(repeats);
    let mut comp_runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        base_runs.push(timed_run(baseline, &features, &prompt, steps)?);
        comp_runs.push(timed_run(composite, &features, &prompt, steps)?);
    }

    let mut table = BenchTable {
        baseline: Vec::new(),
        composite: Vec::new(),
        ratios: Vec::new(),
    };
    for &gen in gen_lengths {
        let b = median_report(&base_runs, Mode::Baseline, visual_tokens, text_tokens, gen);
        let c = median_report(&comp_runs, Mode::Composite, visual_tokens, text_tokens, gen);
        table.ratios.push((gen, c.tokens_per_second / b.tokens_per_second));
        table.baseline.push(b);
        table.composite.push(c);
    }
    Ok(table)
}
