//! Data-parallel helpers over independent samples.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out on a
//! rayon pool; without it every mode runs sequentially. Output order always
//! matches input order.

/// How to run per-sample work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Worker count; 0 uses the global pool.
    Parallel(usize),
    /// Parallel on the global pool when the feature is enabled.
    #[default]
    Auto,
}

impl Execution {
    /// Maps a `--parallelism N` setting: 1 is sequential, more uses N workers.
    pub fn with_workers(n: usize) -> Self {
        if n <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel(n)
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Execution::Sequential)
    }

    /// How many independent jobs this mode runs at once.
    pub fn width(self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Parallel(n) if n > 0 => n,
            #[cfg(feature = "parallel")]
            _ => rayon::current_num_threads(),
            #[cfg(not(feature = "parallel"))]
            _ => 1,
        }
    }
}

/// Applies `f` to every item, preserving order.
pub fn map<T, U, F>(mode: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match mode {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Auto | Execution::Parallel(0) => items.par_iter().map(f).collect(),
            Execution::Parallel(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => items.iter().map(f).collect(),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = mode;
        items.iter().map(f).collect()
    }
}
