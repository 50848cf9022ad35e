//! Thread budget and determinism-safe parallel helpers.
//!
//! The thread budget comes only from the DELOC_THREADS environment variable
//! (default: all available cores). Every parallel construct in this crate
//! either writes disjoint outputs or reduces over fixed-size chunks folded in
//! a fixed serial order, so numeric results are identical for any budget.

use rayon::prelude::*;
use rayon::ThreadPool;
use std::sync::OnceLock;

pub const THREADS_ENV: &str = "DELOC_THREADS";

static POOL: OnceLock<ThreadPool> = OnceLock::new();

pub fn thread_count() -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n > 0).unwrap_or(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// Process-wide pool sized by DELOC_THREADS. Work spawned through the helpers
/// below runs on whichever pool is ambient (so tests can install their own).
pub fn pool() -> &'static ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count())
            .build()
            .expect("thread pool construction")
    })
}

/// Fixed chunk size for deterministic slicing; independent of thread count.
pub const CHUNK: usize = 8192;

/// Run on the DELOC_THREADS pool unless already inside a rayon worker (in
/// which case the ambient pool is kept, e.g. a test-installed one).
fn run_on_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    if rayon::current_thread_index().is_some() {
        f()
    } else {
        pool().install(f)
    }
}

/// Apply f to disjoint fixed-size chunks of out, in parallel. f receives the
/// chunk's starting element index.
pub fn for_chunks_mut<T: Send, F: Fn(usize, &mut [T]) + Sync>(out: &mut [T], f: F) {
    run_on_pool(|| {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(ci, chunk)| f(ci * CHUNK, chunk));
    })
}

/// Like for_chunks_mut, but chunk boundaries are aligned to rows of length
/// row_len; f receives the first row index of its chunk.
pub fn for_row_chunks_mut<T: Send, F: Fn(usize, &mut [T]) + Sync>(
    out: &mut [T],
    row_len: usize,
    f: F,
) {
    let rows_per_chunk = (CHUNK / row_len).max(1);
    let elems = rows_per_chunk * row_len;
    run_on_pool(|| {
        out.par_chunks_mut(elems)
            .enumerate()
            .for_each(|(ci, chunk)| f(ci * rows_per_chunk, chunk));
    })
}

/// Sum f over fixed-size chunks; chunk partials are computed in parallel but
/// folded serially in index order, so the result is thread-count independent.
pub fn sum_chunks<F: Fn(usize, usize) -> f64 + Sync>(len: usize, f: F) -> f64 {
    let n_chunks = len.div_ceil(CHUNK);
    let partials: Vec<f64> = run_on_pool(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|ci| f(ci * CHUNK, (ci * CHUNK + CHUNK).min(len)))
            .collect()
    });
    partials.iter().sum()
}
