//! Ordered parallel map used by the sweep drivers.
//!
//! With the `parallel` feature (default) work runs on a rayon pool; without
//! it every executor degrades to a plain sequential loop. Results are always
//! returned in input order, so outputs do not depend on the thread count.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

#[derive(Clone, Debug, Default)]
pub enum Executor {
    #[default]
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(Arc<rayon::ThreadPool>),
}

impl Executor {
    pub fn sequential() -> Self {
        Executor::Sequential
    }

    /// Executor with `threads` workers; `0` means one per available core.
    /// A single thread (or a build without `parallel`) runs sequentially.
    pub fn with_threads(threads: usize) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            if threads == 1 {
                return Ok(Executor::Sequential);
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(Executor::Pool(Arc::new(pool)))
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Ok(Executor::Sequential)
        }
    }

    pub fn threads(&self) -> usize {
        match self {
            Executor::Sequential => 1,
            #[cfg(feature = "parallel")]
            Executor::Pool(p) => p.current_num_threads(),
        }
    }

    pub fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            Executor::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().map(f).collect())
            }
        }
    }

    /// Like [`Executor::map`]; the first error in input order is returned.
    pub fn try_map<T, U, F>(&self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn ordered_results_independent_of_threads() {
        let xs: Vec<u64> = (0..257).collect();
        let seq = Executor::sequential().map(&xs, |x| x * x + 1);
        for t in [1, 2, 4, 7] {
            let ex = Executor::with_threads(t).unwrap();
            assert_eq!(ex.map(&xs, |x| x * x + 1), seq);
        }
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs: Vec<i32> = (0..10).collect();
        let ex = Executor::with_threads(3).unwrap();
        let r = ex.try_map(&xs, |&x| {
            if x >= 4 {
                Err(Error::Config(format!("bad {x}")))
            } else {
                Ok(x)
            }
        });
        match r {
            Err(Error::Config(m)) => assert_eq!(m, "bad 4"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
