//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the maps run on the rayon
//! global pool. Every helper preserves input order, so results are identical
//! to the sequential path element for element.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fallible order-preserving map. Sequential variant.
pub fn try_map_seq<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    F: Fn(&T) -> Result<U, E>,
{
    items.iter().map(f).collect()
}

/// Fallible order-preserving map on the rayon pool.
#[cfg(feature = "parallel")]
pub fn try_map_par<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Fallible map using whichever backend this build was compiled with.
pub fn try_map<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        try_map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        try_map_seq(items, f)
    }
}

/// Sort with a total comparator; stable, so ties keep input order.
pub fn sort_by<T, F>(items: &mut [T], cmp: F)
where
    T: Send,
    F: Fn(&T, &T) -> std::cmp::Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_sort_by(cmp)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.sort_by(cmp)
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
