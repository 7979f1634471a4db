//! Execution-mode switch for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) enabled, [`ExecMode::Parallel`]
//! fans work out over rayon; [`ExecMode::Sequential`] runs the same loop
//! in order on one thread. Without the feature the crate compiles with no
//! rayon dependency and both modes run sequentially.
//!
//! Every parallel site maps independent tasks and collects results in
//! input order, so outputs are bit-identical across modes and schedules.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        ExecMode::Parallel
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecMode::Sequential => write!(f, "sequential"),
            ExecMode::Parallel => write!(f, "parallel"),
        }
    }
}

/// Map `f` over `items`, preserving input order in the output.
pub fn map_ordered<T, U, F>(mode: ExecMode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == ExecMode::Parallel {
            return items.par_iter().map(f).collect();
        }
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Map `f` over an index range, preserving order.
pub fn map_indices<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == ExecMode::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_ordered(ExecMode::Sequential, &items, |x| x * x);
        let par = map_ordered(ExecMode::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn index_map_matches() {
        let seq = map_indices(ExecMode::Sequential, 64, |i| i as f64 * 0.5);
        let par = map_indices(ExecMode::Parallel, 64, |i| i as f64 * 0.5);
        assert_eq!(seq, par);
    }
}
