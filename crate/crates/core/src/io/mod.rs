//! Configuration, VTU output and checkpoints.

mod checkpoint;
mod config;
pub mod grammar;
mod vtu;

pub use checkpoint::{
    checkpoint_path, decode_piece, encode_piece, load_checkpoint, write_checkpoint, CheckpointHeader, CheckpointPiece,
    Restored, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION,
};
pub use config::{Config, DomainConfig, GeometryConfig, HeatConfig, IoConfig, RunConfig, ShapeConfig, ShapeKind};
pub use vtu::{mesh_piece, pvtu_document, vtu_document, write_parallel, write_vtu, ArrayData, DataArray, VtuPiece};
