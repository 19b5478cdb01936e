//! Data-parallel helpers with a sequential fallback when the `parallel`
//! feature is off. Work splitting never depends on the thread count, so
//! results are bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f(index, chunk)` to consecutive `chunk`-sized pieces of `data`
/// and collects the results in chunk order.
pub fn map_chunks_mut<T, R, F>(data: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return data.par_chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect();
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Order-preserving map.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
