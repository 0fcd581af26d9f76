//! Data-parallel execution with an index-ordered, bit-reproducible result.
//!
//! Every parallel site in the crate goes through [`Execution::map`]: items
//! are computed independently and returned in index order, and all
//! reductions happen sequentially over that vector afterwards. Output is
//! therefore identical whether it ran on one thread or many.
//!
//! Without the `parallel` feature only [`Execution::Sequential`] exists.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Execution {
    /// Parallel when compiled in, unless [`force_sequential`] was set.
    pub fn auto() -> Self {
        #[cfg(feature = "parallel")]
        {
            if !FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
                return Execution::Parallel;
            }
        }
        Execution::Sequential
    }

    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
        }
    }

    /// Like [`Execution::map`] but stops at the first error (by index).
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

/// Routes [`Execution::auto`] to the sequential path process-wide.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// Caps the global worker pool. Must run before the first parallel call;
/// later calls are ignored.
pub fn set_jobs(jobs: usize) {
    if jobs <= 1 {
        force_sequential(true);
        return;
    }
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_index_order() {
        let out = Execution::auto().map(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn try_map_reports_error() {
        let r: Result<Vec<usize>, String> =
            Execution::auto().try_map(10, |i| if i == 7 { Err(format!("bad {i}")) } else { Ok(i) });
        assert_eq!(r.unwrap_err(), "bad 7");
    }
}
