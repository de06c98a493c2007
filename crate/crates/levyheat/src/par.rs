//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature, [`Exec::Parallel`] runs on rayon; without it
//! every mode runs sequentially. Results always come back in index order, so
//! any reduction over them is independent of the worker count.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// `workers = None` uses the global pool.
    #[default]
    Parallel,
    Workers(usize),
}

impl Exec {
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            None => Exec::Parallel,
            Some(1) => Exec::Sequential,
            Some(n) => Exec::Workers(n),
        }
    }
}

pub fn available_workers() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

pub fn map_indexed<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        #[cfg(feature = "parallel")]
        Exec::Workers(w) => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .expect("thread pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        for exec in [Exec::Sequential, Exec::Parallel, Exec::Workers(3)] {
            let v = map_indexed(exec, 100, |i| i * i);
            assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
