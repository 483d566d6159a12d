//! Carved, adaptively refined linear octrees with matrix-free finite elements.

pub mod balance;
pub mod error;
pub mod femops;
pub mod geometry;
pub mod io;
pub mod nodes;
pub mod partition;
pub mod pipeline;
pub mod sfc;
pub mod solve;
pub mod tree_build;

pub use error::{Error, Result, Stage, StageExt};
pub use sfc::{sfc_cmp, treesort, unique_finest, Curve, LinearOctree, OctantKey, SfcOracle, MAX_LEVEL};
