//! Data-parallel helpers.
//!
//! Work items are indexed and results come back in index order, so the
//! output never depends on scheduling. With the `parallel` feature the
//! items run on a rayon pool; without it (or with one thread) they run in a
//! plain loop.
//!
//! The default thread count comes from `EXLAB_THREADS` (default 1).

pub const THREADS_ENV: &str = "EXLAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Threads(usize),
}

impl Parallelism {
    /// Reads `EXLAB_THREADS`; unset, unparsable, or `1` means sequential.
    pub fn from_env() -> Self {
        match std::env::var(THREADS_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
        {
            Some(n) if n > 1 => Parallelism::Threads(n),
            _ => Parallelism::Sequential,
        }
    }

    pub fn threads(self) -> usize {
        match self {
            Parallelism::Sequential => 1,
            Parallelism::Threads(n) => n.max(1),
        }
    }

    /// Whether this build can actually run work on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self.threads() > 1
    }
}

/// `f(0), f(1), ..., f(n-1)` using the environment's parallelism.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    map_indexed_with(Parallelism::from_env(), n, f)
}

pub fn map_indexed_with<R, F>(par: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if par.is_parallel() && n > 1 {
        #[cfg(feature = "parallel")]
        return pool::map(par.threads(), n, f);
    }
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] for fallible work; the first error by index wins.
pub fn try_map_indexed<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
mod pool {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    use rayon::prelude::*;

    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();

    fn get(threads: usize) -> Arc<rayon::ThreadPool> {
        let pools = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut pools = pools.lock().unwrap_or_else(|e| e.into_inner());
        pools
            .entry(threads)
            .or_insert_with(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .expect("failed to build rayon pool"),
                )
            })
            .clone()
    }

    pub(super) fn map<R, F>(threads: usize, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        get(threads).install(|| (0..n).into_par_iter().map(&f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_in_index_order() {
        let seq = map_indexed_with(Parallelism::Sequential, 100, |i| i * i);
        let par = map_indexed_with(Parallelism::Threads(4), 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn first_error_by_index() {
        let r: Result<Vec<usize>, usize> =
            map_indexed_with(Parallelism::Threads(3), 10, |i| if i % 4 == 3 { Err(i) } else { Ok(i) })
                .into_iter()
                .collect();
        assert_eq!(r, Err(3));
    }
}
