//! Data-parallel map helpers backed by rayon, with a sequential fallback when
//! the `parallel` feature is disabled.
//!
//! Both implementations preserve input order, so callers get identical output
//! either way. Reductions that are sensitive to floating-point summation order
//! must go through [`map_chunks`], which fixes the chunk boundaries
//! independently of the worker count.

/// Order-preserving map over a slice.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Order-preserving map over a slice.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Order-preserving indexed map.
#[cfg(feature = "parallel")]
pub fn par_map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Order-preserving indexed map.
#[cfg(not(feature = "parallel"))]
pub fn par_map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Map fixed-size chunks of `items` to partial results, in chunk order.
///
/// Chunk boundaries depend only on `chunk_size`, never on the worker count,
/// so a later ordered fold over the returned vector is bit-reproducible.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, U, F>(items: &[T], chunk_size: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_chunks(chunk_size.max(1)).map(f).collect()
}

/// Map fixed-size chunks of `items` to partial results, in chunk order.
#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, U, F>(items: &[T], chunk_size: usize, f: F) -> Vec<U>
where
    F: Fn(&[T]) -> U,
{
    items.chunks(chunk_size.max(1)).map(f).collect()
}
