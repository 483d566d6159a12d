//! Dirichlet conditions on flagged nodes for matrix-free operators.

use crate::error::{Error, Result};
use crate::nodes::{NodeRecord, RankMesh};
use crate::partition::RankContext;

use super::elemental::ElementalOperator;
use super::ops::{traversal_diagonal, traversal_matvec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DirichletMode {
    /// Eliminate constrained rows and columns; keeps the operator symmetric.
    #[default]
    Symmetric,
    /// Replace constrained rows by identity rows only.
    RowsOnly,
}

/// A diffusion-type operator with constrained nodes eliminated.
pub struct DirichletOperator<'a> {
    pub mesh: &'a RankMesh,
    pub op: &'a ElementalOperator,
    pub mode: DirichletMode,
    /// Per owned node.
    pub constrained: Vec<bool>,
}

/// Owned-node mask from a predicate on node records.
pub fn boundary_mask(mesh: &RankMesh, select: impl Fn(&NodeRecord) -> bool) -> Vec<bool> {
    mesh.owned.iter().map(|&k| select(&mesh.nodes[k as usize])).collect()
}

impl<'a> DirichletOperator<'a> {
    pub fn new(mesh: &'a RankMesh, op: &'a ElementalOperator, constrained: Vec<bool>, mode: DirichletMode) -> Result<Self> {
        if constrained.len() != mesh.owned_len() {
            return Err(Error::Contract(format!(
                "mask has {} entries, rank owns {}",
                constrained.len(),
                mesh.owned_len()
            )));
        }
        Ok(DirichletOperator {
            mesh,
            op,
            mode,
            constrained,
        })
    }

    pub fn apply(&self, ctx: &RankContext, x: &[f64]) -> Result<Vec<f64>> {
        let input: Vec<f64> = match self.mode {
            DirichletMode::Symmetric => x
                .iter()
                .zip(&self.constrained)
                .map(|(&v, &c)| if c { 0.0 } else { v })
                .collect(),
            DirichletMode::RowsOnly => x.to_vec(),
        };
        let mut y = traversal_matvec(ctx, self.mesh, self.op, &input)?;
        for ((yi, &xi), &c) in y.iter_mut().zip(x).zip(&self.constrained) {
            if c {
                *yi = xi;
            }
        }
        Ok(y)
    }

    /// Right-hand side for load `b` and boundary values `g` (both owned).
    pub fn rhs(&self, ctx: &RankContext, b: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let mut out = b.to_vec();
        if self.mode == DirichletMode::Symmetric {
            let lifted: Vec<f64> = g
                .iter()
                .zip(&self.constrained)
                .map(|(&v, &c)| if c { v } else { 0.0 })
                .collect();
            let ag = traversal_matvec(ctx, self.mesh, self.op, &lifted)?;
            for (o, a) in out.iter_mut().zip(ag) {
                *o -= a;
            }
        }
        for ((o, &gi), &c) in out.iter_mut().zip(g).zip(&self.constrained) {
            if c {
                *o = gi;
            }
        }
        Ok(out)
    }

    pub fn diagonal(&self, ctx: &RankContext) -> Result<Vec<f64>> {
        let mut d = traversal_diagonal(ctx, self.mesh, self.op)?;
        for (di, &c) in d.iter_mut().zip(&self.constrained) {
            if c {
                *di = 1.0;
            }
        }
        Ok(d)
    }
}
