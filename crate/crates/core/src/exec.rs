//! Data-parallel execution helpers.
//!
//! Every hot loop in the crate (per-slice attention, per-channel convolution,
//! per-clip batch work, per-utterance data generation) goes through the two
//! helpers here. With the `parallel` feature they fan out over rayon unless the
//! process-wide mode has been switched to [`Execution::Sequential`]; without
//! the feature they always run sequentially. Each work item writes only to its
//! own output slot, so both paths produce bit-identical results.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

static MODE: AtomicU8 = AtomicU8::new(0);

/// Select how subsequent work is scheduled. Has no effect on results.
pub fn set_execution(mode: Execution) {
    let v = match mode {
        Execution::Parallel => 0,
        Execution::Sequential => 1,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 0 {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Run `f(index, chunk)` over consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if execution() == Execution::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Like [`for_each_chunk`] over two buffers split into the same number of chunks.
pub fn for_each_chunk_pair<A, B, F>(a: &mut [A], chunk_a: usize, b: &mut [B], chunk_b: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    assert!(chunk_a > 0 && chunk_b > 0);
    assert_eq!(a.len().div_ceil(chunk_a), b.len().div_ceil(chunk_b), "chunk counts differ");
    #[cfg(feature = "parallel")]
    if execution() == Execution::Parallel {
        use rayon::prelude::*;
        a.par_chunks_mut(chunk_a)
            .zip(b.par_chunks_mut(chunk_b))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
        return;
    }
    a.chunks_mut(chunk_a)
        .zip(b.chunks_mut(chunk_b))
        .enumerate()
        .for_each(|(i, (x, y))| f(i, x, y));
}

/// Evaluate `f` on `0..n`, returning results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution() == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
