//! Replica fan-out. With the `parallel` feature, work runs on a rayon pool;
//! without it (or with [`Execution::Sequential`]) it runs in a plain loop.
//! Either way results come back in index order, so callers reduce them
//! identically.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Dedicated pool with this many workers, or the ambient (global) pool
    /// when `None`.
    #[cfg(feature = "parallel")]
    Parallel(Option<usize>),
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel(None);
        #[cfg(not(feature = "parallel"))]
        return Execution::Sequential;
    }
}

impl Execution {
    /// Maps a `--jobs` value: `1` is sequential, anything else parallel
    /// when the feature is compiled in.
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(1) => Execution::Sequential,
            #[cfg(feature = "parallel")]
            other => Execution::Parallel(other),
            #[cfg(not(feature = "parallel"))]
            _ => Execution::Sequential,
        }
    }

    /// `f(0), …, f(n−1)` in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match *self {
            Execution::Sequential => Ok((0..n).map(f).collect()),
            #[cfg(feature = "parallel")]
            Execution::Parallel(threads) => {
                use rayon::prelude::*;
                let Some(t) = threads else {
                    return Ok((0..n).into_par_iter().map(f).collect());
                };
                if t == 0 {
                    return Err(crate::Error::InvalidParameter(
                        "--jobs must be positive".into(),
                    ));
                }
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| crate::Error::InvalidParameter(format!("thread pool: {e}")))?;
                Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
            }
        }
    }
}

/// Index-ordered map on the ambient pool (or sequentially without the
/// `parallel` feature).
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = Execution::Sequential.map(100, |i| i * i).unwrap();
        assert_eq!(seq, (0..100).map(|i| i * i).collect::<Vec<_>>());
        #[cfg(feature = "parallel")]
        {
            let par = Execution::Parallel(Some(4)).map(100, |i| i * i).unwrap();
            assert_eq!(seq, par);
            assert!(Execution::Parallel(Some(0)).map(1, |i| i).is_err());
        }
        assert_eq!(map_indexed(5, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn jobs_mapping() {
        assert_eq!(Execution::from_jobs(Some(1)), Execution::Sequential);
        #[cfg(feature = "parallel")]
        assert_eq!(Execution::from_jobs(Some(3)), Execution::Parallel(Some(3)));
    }
}
