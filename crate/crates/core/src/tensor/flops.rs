//! Thread-confined matmul FLOP counter.
//!
//! Counting is attached to the thread that calls [`matmul`](super::matmul),
//! before any work is handed to worker threads, so a forward pass measured
//! inside [`count_flops`] sees every product it issues and nothing issued by
//! concurrent passes on other threads.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn record(flops: u64) {
    COUNTER.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(n + flops));
        }
    });
}

/// Runs `f` with counting enabled and returns its result plus the number of
/// matmul FLOPs it issued on this thread. Nested scopes also add into the
/// enclosing scope.
pub fn count_flops<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = COUNTER.with(|c| c.replace(Some(0)));
    let result = f();
    let inner = COUNTER.with(|c| c.get()).unwrap_or(0);
    COUNTER.with(|c| c.set(outer.map(|n| n + inner)));
    (result, inner)
}
