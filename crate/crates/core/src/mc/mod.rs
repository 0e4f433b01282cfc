//! Monte Carlo estimation of sojourn ruin probabilities and of the Berman
//! and sojourn Piterbarg constants.
//!
//! Work is split into fixed chunks of path indices. Each chunk is folded
//! sequentially and chunk summaries are merged in index order, so an estimate
//! depends only on `(seed, configuration, chunk size)` and never on the
//! number of threads.

mod constants;
mod paths;
mod sojourn;

pub use constants::{
    berman_lower_tail_bound, estimate_berman_constant, estimate_berman_constants,
    estimate_piterbarg_sojourn, estimate_piterbarg_sojourns, piterbarg_integrability, BermanMethod,
    BermanSettings, ConstantEstimate, ConstantKind, PiterbargSettings,
};
pub use paths::{run_ensemble, EnsembleResult, EnsembleSpec, LineSet, Target, TargetSummary, Tilt};
pub use sojourn::{
    default_horizon, default_two_dim_tilt, estimate_one_dim_sojourn,
    estimate_one_dim_sojourn_tilted, estimate_two_dim_sojourn, estimate_two_dim_sojourn_tilted,
    sojourn_time_lines, sojourn_time_two_dim, AppliedTilt, MCEstimate, SimSettings, TiltSpec,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Execution knobs; they never change a result except through `chunk_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exec {
    /// Worker threads; `None` means `RUN_THREADS` or all cores.
    pub threads: Option<usize>,
    /// Path units per chunk.
    pub chunk_size: u64,
}

impl Default for Exec {
    fn default() -> Self {
        Exec {
            threads: None,
            chunk_size: 1024,
        }
    }
}

/// Resolved worker count: explicit request, then `RUN_THREADS`, then all cores.
pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| {
            std::env::var("RUN_THREADS")
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub(crate) trait Merge {
    fn merge(&mut self, other: &Self);
}

/// Folds `work(acc, scratch, unit)` over `0..n_units` in parallel chunks and
/// merges the chunk accumulators in chunk order.
pub(crate) fn fold_chunks<A, W>(
    n_units: u64,
    exec: &Exec,
    init: impl Fn() -> A + Sync,
    scratch: impl Fn() -> W + Sync,
    work: impl Fn(&mut A, &mut W, u64) + Sync,
) -> A
where
    A: Merge + Send,
{
    let chunk = exec.chunk_size.max(1);
    let n_chunks = n_units.div_ceil(chunk);
    let run_chunk = |c: u64| {
        let mut acc = init();
        let mut ws = scratch();
        for unit in c * chunk..((c + 1) * chunk).min(n_units) {
            work(&mut acc, &mut ws, unit);
        }
        acc
    };
    let threads = thread_count(exec.threads);
    let parts: Vec<A> = if threads <= 1 || n_chunks <= 1 {
        (0..n_chunks).map(run_chunk).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| (0..n_chunks).into_par_iter().map(run_chunk).collect()),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); running sequentially");
                (0..n_chunks).map(run_chunk).collect()
            }
        }
    };
    let mut total = init();
    for p in &parts {
        total.merge(p);
    }
    total
}
