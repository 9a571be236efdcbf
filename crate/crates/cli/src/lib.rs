//! Command-line pipeline: training, simulation, monitoring, model checking
//! and discriminative formula search over annotated beat traces.

pub mod app;
pub mod config;
pub mod report;

/// Invalid invocation or input text; mapped to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.is::<UsageError>() {
        2
    } else {
        1
    }
}
