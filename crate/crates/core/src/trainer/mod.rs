//! Optimisation loop, checkpoints, evaluation, inference and ablations.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{lr_schedule, EvalConfig, ExperimentConfig, OptimizerKind, TrainConfig};
pub use eval::{
    ablation_run, collect_results, detect, evaluate, train_and_evaluate, AblationReport,
    AblationRun, VideoDetections, WindowAttention,
};
pub use optim::Optimizer;
pub use train::{epoch_order, prepare_samples, train, EpochMetrics, TrainOutcome, TrainSample};

use crate::error::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SRF_TAD_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] if set. Results do not
/// depend on the thread count. Returns the cap applied, if any.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // Already initialised (e.g. by an earlier call): keep the existing pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}
