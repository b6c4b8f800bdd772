//! Monte Carlo replicates on a rayon pool. Outcomes are aggregated in replicate order, so the
//! report does not depend on the number of threads.

use changeplane_core::simlab::{aggregate, run_replicate, Fitter, MCReport, ReplicateOutcome, SimDesign};
use changeplane_core::Error;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CHANGEPLANE_THREADS";

/// Worker count: `CHANGEPLANE_THREADS` if set to a positive integer, otherwise the available
/// parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_parallel(design: &SimDesign, replicates: usize, fitter: &Fitter, threads: usize) -> Result<MCReport, Error> {
    design.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        use rayon::prelude::*;
        (0..replicates as u64)
            .into_par_iter()
            .map(|rep| run_replicate(design, rep, fitter))
            .collect()
    });
    Ok(aggregate(design, &outcomes))
}
