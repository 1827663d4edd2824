//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the closures run on rayon's pool; without it
//! (or when a run asks for [`Execution::Sequential`]) they run in order on
//! the calling thread. Results are always collected in index order, so the
//! choice never changes what a run produces.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Whether this build can honour `Parallel`.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// `f(i, &mut items[i])` for every index, results in index order.
pub fn map_mut<T, U, F>(exec: Execution, items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().map(|(i, x)| f(i, x)).collect()
        }
        _ => items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

/// `f(&items[i])` for every index, results in index order.
pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let mut a: Vec<u64> = (0..1000).collect();
        let mut b = a.clone();
        let fa = map_mut(Execution::Parallel, &mut a, |i, x| {
            *x *= 3;
            *x + i as u64
        });
        let fb = map_mut(Execution::Sequential, &mut b, |i, x| {
            *x *= 3;
            *x + i as u64
        });
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        assert_eq!(map(Execution::Parallel, &a, |x| x + 1), map(Execution::Sequential, &a, |x| x + 1));
    }
}
