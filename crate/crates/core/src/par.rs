//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the work is spread over the rayon pool; without
//! it the same chunking runs on the calling thread. Reductions always produce
//! one partial per fixed-size chunk and fold the partials in index order, so
//! results are bit-identical between the two builds and between runs.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of elements handled by one task.
pub const CHUNK: usize = 4096;

/// Evaluates `f` on consecutive index ranges of length `chunk` covering `0..len`
/// and returns the per-range results in order.
pub fn map_ranges<A, F>(len: usize, chunk: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let range = move |i: usize| i * chunk..((i + 1) * chunk).min(len);

    #[cfg(feature = "parallel")]
    {
        (0..n_chunks).into_par_iter().map(|i| f(range(i))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(|i| f(range(i))).collect()
    }
}

/// Sums fixed-width partial vectors produced per chunk.
pub fn sum_ranges<const N: usize, F>(len: usize, f: F) -> [f64; N]
where
    F: Fn(Range<usize>) -> [f64; N] + Sync + Send,
{
    map_ranges(len, CHUNK, f)
        .into_iter()
        .fold([0.0; N], |mut acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
            acc
        })
}

/// Runs `f(offset, chunk)` over mutable chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);

    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
    }
}

/// Runs `f(offset, r, g, b)` over aligned mutable chunks of three planes.
pub fn for_each_chunk_mut3<F>(planes: [&mut [f64]; 3], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    let [r, g, b] = planes;
    debug_assert!(r.len() == g.len() && g.len() == b.len());

    #[cfg(feature = "parallel")]
    {
        r.par_chunks_mut(chunk)
            .zip(g.par_chunks_mut(chunk))
            .zip(b.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, ((r, g), b))| f(i * chunk, r, g, b));
    }
    #[cfg(not(feature = "parallel"))]
    {
        r.chunks_mut(chunk)
            .zip(g.chunks_mut(chunk))
            .zip(b.chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, ((r, g), b))| f(i * chunk, r, g, b));
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_items<T, A, F>(items: &[T], f: F) -> Vec<A>
where
    T: Sync,
    A: Send,
    F: Fn(&T) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
