//! Data-parallel execution over independent work items.
//!
//! Every batch operation in the crate (phantom rendering, copy/paste
//! synthesis, mask sampling, per-image inference) funnels through these
//! helpers. Work items are indexed and each derives its own RNG from
//! `(seed, index)`, so results are identical in both modes. Without the
//! `parallel` feature, [`Parallelism::Parallel`] runs sequentially.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// Whether work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// `(0..n).map(f)` in index order.
pub fn map_indexed<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Fallible [`map_indexed`]; returns the error of the lowest failing index.
pub fn try_map_indexed<T, F>(n: usize, mode: Parallelism, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, mode, f).into_iter().collect()
}

pub fn map_slice<T, U, F>(items: &[T], mode: Parallelism, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_indexed(items.len(), mode, |i| f(&items[i]))
}

pub fn try_map_slice<T, U, F>(items: &[T], mode: Parallelism, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    map_slice(items, mode, f).into_iter().collect()
}
