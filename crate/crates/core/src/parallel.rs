//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction here splits its index range into fixed-size chunks, reduces
//! each chunk left to right, then folds the chunk results in order. The chunk
//! boundaries do not depend on the worker count, so sequential and parallel
//! execution produce bit-identical floating-point results.

use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "COULOMB2D_THREADS";

/// Chunk length used by the deterministic reductions.
pub const REDUCE_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` degrades to `Sequential` when the crate is built without the
    /// `parallel` feature.
    pub fn effective(self) -> Self {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        self.effective() == Execution::Parallel
    }
}

/// Sum of `f(i)` over `range`, reduced in fixed chunks.
pub fn map_sum<F>(exec: Execution, range: Range<usize>, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partials = chunk_partials(exec, range, |r| r.map(&f).sum::<f64>());
    partials.into_iter().sum()
}

/// Like [`map_sum`] but stops at the first error.
pub fn try_map_sum<F, E>(exec: Execution, range: Range<usize>, f: F) -> Result<f64, E>
where
    F: Fn(usize) -> Result<f64, E> + Sync + Send,
    E: Send,
{
    let partials = chunk_partials(exec, range, |r| {
        let mut acc = 0.0;
        for i in r {
            acc += f(i)?;
        }
        Ok(acc)
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total)
}

fn chunk_partials<T, F>(exec: Execution, range: Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let start = range.start;
    let len = range.end.saturating_sub(range.start);
    let n_chunks = len.div_ceil(REDUCE_CHUNK);
    let chunk = |c: usize| {
        let lo = start + c * REDUCE_CHUNK;
        lo..(lo + REDUCE_CHUNK).min(start + len)
    };
    map_collect(exec, 0..n_chunks, |c| f(chunk(c)))
}

/// Collect `f(i)` for every index, preserving order.
pub fn map_collect<T, F>(exec: Execution, range: Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            range.into_par_iter().map(f).collect()
        }
        _ => range.map(f).collect(),
    }
}

/// Apply `f(chunk_index, chunk)` to consecutive `chunk_len` pieces of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0);
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        }
        _ => data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// Worker count requested by `COULOMB2D_THREADS`, if set and valid.
pub fn env_thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Run `f` on a pool of `threads` workers (capped by `COULOMB2D_THREADS`).
///
/// Without the `parallel` feature this simply calls `f`.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        let mut n = threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        if let Some(cap) = env_thread_cap() {
            n = n.min(cap);
        }
        match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions_match_across_modes() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = map_sum(Execution::Sequential, 3..10_001, f);
        let b = map_sum(Execution::Parallel, 3..10_001, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let pool = with_threads(Some(3), || map_sum(Execution::Parallel, 3..10_001, f));
        assert_eq!(a.to_bits(), pool.to_bits());
    }

    #[test]
    fn empty_range_sums_to_zero() {
        assert_eq!(map_sum(Execution::Parallel, 5..5, |_| 1.0), 0.0);
    }

    #[test]
    fn try_sum_propagates_error() {
        let r: Result<f64, usize> =
            try_map_sum(Execution::Parallel, 0..500, |i| if i == 321 { Err(i) } else { Ok(1.0) });
        assert_eq!(r, Err(321));
    }

    #[test]
    fn chunks_are_visited_once() {
        let mut v = vec![0u32; 1000];
        for_each_chunk_mut(Execution::Parallel, &mut v, 7, |c, s| {
            for x in s.iter_mut() {
                *x += c as u32 + 1;
            }
        });
        assert_eq!(v[0], 1);
        assert_eq!(v[999], (999 / 7) as u32 + 1);
    }
}
