//! Execution strategy for the data-parallel loops (τ grids, sweep points,
//! quadrature rows).
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on the
//! rayon pool; without it every strategy runs sequentially. Results are
//! always returned in index order, so output does not depend on the strategy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work actually fans out on this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `(0..len).map(f).collect()`, possibly in parallel.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
            _ => (0..len).map(f).collect(),
        }
    }

    /// Like [`map_indexed`](Self::map_indexed) but short-circuits on the first error.
    pub fn try_map_indexed<T, E, F>(self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
            _ => (0..len).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_keep_order() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Execution::Sequential.map_indexed(1000, f);
        let b = Execution::Parallel.map_indexed(1000, f);
        assert_eq!(a, b);
        let err: Result<Vec<usize>, usize> =
            Execution::Parallel.try_map_indexed(10, |i| if i == 7 { Err(i) } else { Ok(i) });
        assert_eq!(err, Err(7));
    }
}
