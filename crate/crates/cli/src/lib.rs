//! Library surface of the CLI: configuration, the single-run pipeline,
//! sweep orchestration, artifact schemas, and manifest verification.

pub mod config;
pub mod report;
pub mod runner;
pub mod sweep;
pub mod verify;

/// Applies the configured thread budget unless the environment already
/// overrides it. Must run before the worker pool is first used.
pub fn apply_thread_budget(threads: Option<usize>) {
    if let Some(t) = threads {
        if std::env::var(deloc_core::par::THREADS_ENV).is_err() {
            std::env::set_var(deloc_core::par::THREADS_ENV, t.to_string());
        }
    }
}
