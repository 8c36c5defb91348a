//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on the
//! rayon pool; without it every call runs sequentially. Results are always
//! returned in input order, so callers that reduce them in order get
//! bitwise-identical results from both paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// `Sequential` when `LLMPROP_DETERMINISTIC` is set to a truthy value.
    pub fn from_env() -> Execution {
        match std::env::var("LLMPROP_DETERMINISTIC") {
            Ok(v) if matches!(v.as_str(), "1" | "true" | "yes") => Execution::Sequential,
            _ => Execution::Parallel,
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over fixed-size chunks. Chunk boundaries depend
    /// only on `chunk_size`, never on the thread count.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk_size: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk_size = chunk_size.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items
                .par_chunks(chunk_size)
                .enumerate()
                .map(|(i, c)| f(i * chunk_size, c))
                .collect();
        }
        items
            .chunks(chunk_size)
            .enumerate()
            .map(|(i, c)| f(i * chunk_size, c))
            .collect()
    }
}
