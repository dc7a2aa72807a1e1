//! Parallel scenario generation. Every scenario draws from its own substream
//! and results are collected in index order, so the output does not depend on
//! the thread count.

use longbasis_core::scenario::{ScenarioEngine, ScenarioSet};
use rayon::prelude::*;

use crate::error::{PipelineError, Result, StageExt};

/// Run all scenarios on `threads` workers (`None`: rayon's default).
pub fn run_parallel(engine: &ScenarioEngine, threads: Option<usize>) -> Result<ScenarioSet> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    let n = engine.config.n_scenarios;
    let results = pool.install(|| (0..n).into_par_iter().map(|s| engine.run_one(s)).collect::<Vec<_>>());
    engine.collect(results).stage("simulate")
}
