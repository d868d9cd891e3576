//! Execution backends for the per-path work.
//!
//! Simulation results must not depend on how paths are scheduled, so the
//! contract here is narrow: a step's per-path work is split into contiguous
//! groups, each group task writes only to its own output rows and consumes
//! only its own per-path RNG streams, and the call returns after every group
//! has finished (the step barrier). Randomness is keyed by path id, never by
//! worker, which makes the sequential backend and any pool size produce
//! bitwise-identical results.

use std::ops::Range;
use std::time::Instant;

use crate::{Error, Result};

/// Where per-path group tasks run.
pub enum Backend {
    /// Runs every group on the calling thread.
    Sequential,
    /// A reusable worker pool with a fixed number of threads. The pool is
    /// built once and reused across time steps.
    Pool(rayon::ThreadPool),
}

impl Backend {
    /// Builds a pool backend with `workers` threads.
    pub fn pool(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("pool requires at least one worker".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Backend::Pool(pool))
    }

    /// Number of workers the backend schedules onto.
    pub fn workers(&self) -> usize {
        match self {
            Backend::Sequential => 1,
            Backend::Pool(pool) => pool.current_num_threads(),
        }
    }

    /// Short descriptor for reports, e.g. `seq` or `pool(8)`.
    pub fn describe(&self) -> String {
        match self {
            Backend::Sequential => "seq".to_string(),
            Backend::Pool(pool) => format!("pool({})", pool.current_num_threads()),
        }
    }

    /// Runs `task` once per group, in parallel on a pool backend.
    ///
    /// Each group value owns the mutable state its task may touch; the
    /// caller builds the groups by splitting output buffers into disjoint
    /// chunks. Returns after all groups completed. On failure the first
    /// error in group order is surfaced with its group index.
    pub fn for_each_group<G, F>(&self, groups: &mut [G], task: &F) -> Result<()>
    where
        G: Send,
        F: Fn(&mut G) -> Result<()> + Sync,
    {
        match self {
            Backend::Sequential => {
                for (index, group) in groups.iter_mut().enumerate() {
                    task(group).map_err(|e| Error::TaskFailed {
                        group: index,
                        source: Box::new(e),
                    })?;
                }
                Ok(())
            }
            Backend::Pool(pool) => {
                use rayon::prelude::*;
                let outcomes: Vec<(usize, Result<()>)> = pool.install(|| {
                    groups
                        .par_iter_mut()
                        .enumerate()
                        .map(|(index, group)| (index, task(group)))
                        .collect()
                });
                let first_failure = outcomes
                    .into_iter()
                    .filter_map(|(index, r)| r.err().map(|e| (index, e)))
                    .min_by_key(|(index, _)| *index);
                match first_failure {
                    Some((group, source)) => Err(Error::TaskFailed {
                        group,
                        source: Box::new(source),
                    }),
                    None => Ok(()),
                }
            }
        }
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Contiguous, balanced split of path indices over workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub groups: Vec<Range<usize>>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Splits `n_paths` into at most `n_workers` contiguous groups whose sizes
/// differ by at most one. Only non-empty groups are emitted, so the result
/// has exactly `min(n_workers, n_paths)` groups.
pub fn partition_paths(n_paths: usize, n_workers: usize) -> Partition {
    assert!(n_paths >= 1, "partition_paths requires at least one path");
    assert!(n_workers >= 1, "partition_paths requires at least one worker");
    let n_groups = n_workers.min(n_paths);
    let base = n_paths / n_groups;
    let remainder = n_paths % n_groups;
    let mut groups = Vec::with_capacity(n_groups);
    let mut start = 0;
    for g in 0..n_groups {
        let size = base + usize::from(g < remainder);
        groups.push(start..start + size);
        start += size;
    }
    debug_assert_eq!(start, n_paths);
    Partition { groups }
}

/// Runs a closure and returns its result with the wall-clock seconds it
/// took. No warm-up is performed here; callers discard warm-up runs.
pub fn timed<R>(run: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let result = run();
    (result, start.elapsed().as_secs_f64())
}
