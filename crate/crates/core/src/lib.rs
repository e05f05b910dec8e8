//! Homogenization-based 3D compliance minimization over orthogonal rank-3
//! laminates, followed by de-homogenization of the multi-scale result into a
//! high-resolution single-scale voxel design.
//!
//! The crate is organized along the stages of the method:
//!
//! - [`material`]: closed-form rank-3 laminate elasticity tensors and their
//!   analytic gradients.
//! - [`fields`]: density filtering, width projection with continuation, and
//!   the face-based angle-regularization objective.
//! - [`fem`]: structured-grid tri-linear hexahedral finite elements with a
//!   matrix-free multigrid-preconditioned CG solver.
//! - [`optimize`]: the nested compliance minimization loop driven by MMA.
//! - [`combing`]: conversion of hierarchical layer widths to single-scale
//!   widths and global frame-field combing.
//! - [`dehomog`]: per-layer mapping fields and projection onto a fine voxel
//!   grid with prescribed unit-cell spacing.
//! - [`postprocess`]: minimum feature size enforcement, connected-component
//!   and strain-energy cleanup, and fine-mesh metrics.
//! - [`pipeline`]: problem presets, configuration, orchestration and export.

pub mod combing;
pub mod dehomog;
pub mod error;
pub mod fem;
pub mod fields;
pub mod grid;
pub mod material;
pub mod optimize;
pub mod pipeline;
pub mod postprocess;

pub use error::{Error, Result};
pub use grid::Grid3;
