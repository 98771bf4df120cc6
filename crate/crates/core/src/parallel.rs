//! Order-preserving data parallelism with a sequential fallback.

use serde::{Deserialize, Serialize};

/// Whether per-subject work may use the thread pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    #[default]
    Parallel,
    Sequential,
}

impl Parallelism {
    /// Apply `f` to `0..n`, collecting results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Parallelism::Parallel && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`map`](Self::map) over a slice of items.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.map(items.len(), |k| f(&items[k]))
    }

    /// Mutate each element in place.
    pub fn for_each_mut<I, F>(self, items: &mut [I], f: F)
    where
        I: Send,
        F: Fn(usize, &mut I) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Parallelism::Parallel && items.len() > 1 {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(k, x)| f(k, x));
            return;
        }
        items.iter_mut().enumerate().for_each(|(k, x)| f(k, x));
    }
}

/// Sum in fixed index order so results do not depend on scheduling.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().sum()
}
