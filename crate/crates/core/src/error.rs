//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("inner 6x6 system of the rank-3 formula is singular beyond tolerance")]
    DegenerateInversion,

    #[error("iterative solver did not reach tolerance {tol:e} in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("MMA subproblem failed to converge")]
    SubproblemFailure,

    #[error("no seed element with all widths in [0.05, 0.95]")]
    NoSeed,

    #[error("design contains no solid voxels")]
    EmptyDesign,

    #[error("unknown problem preset: {0}")]
    UnknownPreset(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt or incompatible file `{path}`: {reason}")]
    BadFile { path: String, reason: String },
}

impl Error {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }

    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
