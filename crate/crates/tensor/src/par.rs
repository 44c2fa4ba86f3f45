//! Thin switch between rayon and sequential iteration.
//!
//! Every helper hands each closure call exclusive ownership of one output
//! chunk or index, so the result never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(i, chunk)` for every `chunk_len`-sized chunk of `data`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Calls `f(i, chunk)` for every `chunk_len`-sized chunk of `data`.
#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maps a slice element-wise, preserving order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// True when kernels are compiled with data parallelism.
pub const fn enabled() -> bool {
    cfg!(feature = "parallel")
}
