//! Data-parallel helpers. With the `parallel` feature these dispatch to
//! rayon; without it they run sequentially. Both paths return results in
//! input order, so callers see identical output either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Splits `items` into chunks, folds each chunk with `fold` and combines the
/// partial results with `merge` in chunk order.
#[cfg(feature = "parallel")]
pub fn fold_chunks<T, A, F, M>(items: &[T], chunk: usize, fold: F, merge: M) -> Option<A>
where
    T: Sync,
    A: Send,
    F: Fn(&[T]) -> A + Sync + Send,
    M: Fn(A, A) -> A,
{
    let parts: Vec<A> = items.par_chunks(chunk.max(1)).map(fold).collect();
    parts.into_iter().reduce(merge)
}

#[cfg(not(feature = "parallel"))]
pub fn fold_chunks<T, A, F, M>(items: &[T], chunk: usize, fold: F, merge: M) -> Option<A>
where
    F: Fn(&[T]) -> A,
    M: Fn(A, A) -> A,
{
    items.chunks(chunk.max(1)).map(fold).reduce(merge)
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
