//! Multimodal sentiment analysis toolkit: feature bundles, reference feature
//! extraction, a zoo of fusion models trained on a shared pipeline, metric and
//! representation analysis, and robustness testing under modality noise and
//! missing modalities.

pub mod analysis;
mod binfmt;
pub mod bundle;
mod error;
pub mod extract;
pub mod models;
pub mod robustness;
pub mod synthetic;
pub mod train;

pub use error::{Error, ErrorClass, Result};

use std::sync::OnceLock;

/// Environment variable that caps worker parallelism.
pub const THREADS_ENV: &str = "MSA_FORGE_THREADS";

/// Global worker pool sized by [`THREADS_ENV`] (all cores when unset).
pub fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build worker pool")
    })
}
