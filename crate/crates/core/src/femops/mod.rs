//! Matrix-free operators and assembly on distributed incomplete octrees.

pub mod basis;
mod csr;
mod dirichlet;
mod elemental;
mod ops;
mod traversal;

pub use csr::CsrMatrix;
pub use dirichlet::{boundary_mask, DirichletMode, DirichletOperator};
pub use elemental::{
    elemental_diffusion, elemental_load, elemental_mass, DenseMatrix, ElementalOperator, OperatorKind,
};
pub use ops::{assemble_load, traversal_assemble, traversal_diagonal, traversal_matvec};
pub use traversal::{traverse, LeafStencil};
