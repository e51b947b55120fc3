//! KV-cache prefill and decode, greedy generation and the prefill/decode
//! wall-clock benchmark.

mod bench;
mod cache;
mod generate;

pub use bench::{bench_prefill_decode, BenchReport, BenchTable, BENCH_CSV_HEADER};
pub use cache::{decode_step, prefill, KVCache, LayerCache};
pub use generate::{argmax_lowest, generate_greedy, generate_greedy_recompute, generate_greedy_traced, Generation};
