//! Steady heat conduction `-Δu = f` on the retained part of the root cube,
//! with fixed temperatures on carved surfaces and chosen outer faces.

use std::f64::consts::PI;

use crate::error::{Error, Result, Stage, StageExt};
use crate::femops::basis::{gauss_legendre, lagrange, split_index};
use crate::femops::{
    assemble_load, traversal_assemble, traverse, DirichletMode, DirichletOperator, ElementalOperator,
};
use crate::geometry::SubdomainClassifier;
use crate::nodes::{NodeRecord, RankMesh};
use crate::partition::{global_sum, RankContext};

use super::krylov::{krylov_solve_with, SolveReport, SolveSetup, SolverOptions};

/// A face of the (masked) root box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub const NAMES: [&'static str; 6] = ["x-", "x+", "y-", "y+", "z-", "z+"];

    pub fn parse(s: &str) -> Option<Face> {
        Face::NAMES.iter().position(|n| *n == s).map(|i| Face {
            axis: i / 2,
            upper: i % 2 == 1,
        })
    }

    pub fn name(&self) -> &'static str {
        Face::NAMES[2 * self.axis + self.upper as usize]
    }

    pub fn all(dim: usize) -> Vec<Face> {
        (0..2 * dim)
            .map(|i| Face {
                axis: i / 2,
                upper: i % 2 == 1,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeatModel {
    /// Constant source; nodes on the listed faces take the face value,
    /// remaining carved-surface nodes take `surface_temperature` when set.
    Constant {
        forcing: f64,
        surface_temperature: Option<f64>,
        faces: Vec<(Face, f64)>,
    },
    /// `u = Π sin(π x_i)` with matching source and boundary data on every
    /// boundary node.
    Manufactured,
}

impl HeatModel {
    pub fn exact(&self, dim: usize) -> Option<impl Fn([f64; 3]) -> f64> {
        match self {
            HeatModel::Manufactured => Some(move |x: [f64; 3]| (0..dim).map(|i| (PI * x[i]).sin()).product()),
            HeatModel::Constant { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SolvePath {
    #[default]
    MatrixFree,
    Assembled,
}

#[derive(Clone, Debug)]
pub struct HeatProblem {
    pub model: HeatModel,
    pub solver: SolverOptions,
    pub dirichlet: DirichletMode,
    pub path: SolvePath,
}

#[derive(Clone, Debug)]
pub struct HeatSolution {
    /// Temperatures of the owned nodes, in id order.
    pub u: Vec<f64>,
    pub report: SolveReport,
    /// L2 error against the exact solution, when the model has one.
    pub l2_error: Option<f64>,
    pub constrained: u64,
}

/// Dirichlet value for a node, if it is constrained.
fn boundary_value(
    model: &HeatModel,
    classifier: &SubdomainClassifier,
    rec: &NodeRecord,
    x: [f64; 3],
) -> Option<f64> {
    let dim = classifier.dim();
    match model {
        HeatModel::Manufactured => {
            (!rec.flags.is_interior()).then(|| (0..dim).map(|i| (PI * x[i]).sin()).product())
        }
        HeatModel::Constant {
            surface_temperature,
            faces,
            ..
        } => {
            let map = classifier.map();
            let tol = 1e-12 * map.side;
            for (face, value) in faces {
                let ext = classifier.extent().map_or(map.side, |e| e[face.axis].min(map.side));
                let at = map.origin[face.axis] + if face.upper { ext } else { 0.0 };
                if (x[face.axis] - at).abs() <= tol {
                    return Some(*value);
                }
            }
            if rec.flags.subdomain_boundary {
                return *surface_temperature;
            }
            None
        }
    }
}

/// Assemble and solve. `setup` may carry an initial guess, an iteration
/// offset and a monitor; its diagonal is filled in here.
pub fn solve_heat(
    ctx: &RankContext,
    mesh: &RankMesh,
    classifier: &SubdomainClassifier,
    problem: &HeatProblem,
    mut setup: SolveSetup<'_>,
) -> Result<HeatSolution> {
    let dim = mesh.dim;
    let op = ElementalOperator::diffusion(dim, mesh.p).stage(Stage::Assembly)?;
    let values: Vec<Option<f64>> = mesh
        .owned
        .iter()
        .map(|&k| {
            let rec = &mesh.nodes[k as usize];
            boundary_value(&problem.model, classifier, rec, mesh.node_point(k as usize))
        })
        .collect();
    let constrained: Vec<bool> = values.iter().map(Option::is_some).collect();
    let g: Vec<f64> = values.iter().map(|v| v.unwrap_or(0.0)).collect();
    let n_constrained = ctx.sum_u64(constrained.iter().filter(|&&c| c).count() as u64)?;

    let load = match &problem.model {
        HeatModel::Constant { forcing, .. } => {
            let f = *forcing;
            assemble_load(ctx, mesh, &move |_| f)
        }
        HeatModel::Manufactured => {
            let d = dim as f64;
            assemble_load(ctx, mesh, &move |x: [f64; 3]| {
                d * PI * PI * (0..dim).map(|i| (PI * x[i]).sin()).product::<f64>()
            })
        }
    }
    .stage(Stage::Assembly)?;

    let (u, report) = match problem.path {
        SolvePath::MatrixFree => {
            let system = DirichletOperator::new(mesh, &op, constrained, problem.dirichlet).stage(Stage::Assembly)?;
            let rhs = system.rhs(ctx, &load, &g).stage(Stage::Assembly)?;
            setup.diagonal = Some(system.diagonal(ctx).stage(Stage::Assembly)?);
            krylov_solve_with(ctx, |x| system.apply(ctx, x), &rhs, &problem.solver, setup).stage(Stage::Solve)?
        }
        SolvePath::Assembled => {
            let a = traversal_assemble(ctx, mesh, &op).stage(Stage::Assembly)?;
            let mask_by_id: Vec<bool> = mesh
                .gather_by_id(ctx, &constrained.iter().map(|&c| c as u8 as f64).collect::<Vec<_>>())?
                .into_iter()
                .map(|v| v != 0.0)
                .collect();
            let (system, mut rhs) = match problem.dirichlet {
                DirichletMode::Symmetric => {
                    let g_by_id = mesh.gather_by_id(ctx, &g)?;
                    let (m, corr) = a.eliminate(&mask_by_id, &g_by_id);
                    (m, load.iter().zip(corr).map(|(b, c)| b + c).collect::<Vec<_>>())
                }
                DirichletMode::RowsOnly => (a.identity_rows(&mask_by_id), load.clone()),
            };
            for (k, r) in rhs.iter_mut().enumerate() {
                if constrained[k] {
                    *r = g[k];
                }
            }
            setup.diagonal = Some(system.diagonal());
            krylov_solve_with(ctx, |x| system.apply(ctx, mesh, x), &rhs, &problem.solver, setup).stage(Stage::Solve)?
        }
    };
    if !report.converged() {
        log::warn!("heat solve did not converge: {report}");
    }
    let l2_error = match problem.model.exact(dim) {
        Some(exact) => Some(l2_error(ctx, mesh, &u, &exact).stage(Stage::Solve)?),
        None => None,
    };
    Ok(HeatSolution {
        u,
        report,
        l2_error,
        constrained: n_constrained,
    })
}

/// `‖u_h − exact‖` in L2 over the retained leaves, with hanging positions
/// interpolated as in the operators.
pub fn l2_error(ctx: &RankContext, mesh: &RankMesh, u: &[f64], exact: &dyn Fn([f64; 3]) -> f64) -> Result<f64> {
    if u.len() != mesh.owned_len() {
        return Err(Error::Contract("solution length differs from the owned node count".into()));
    }
    let (dim, p) = (mesh.dim, mesh.p);
    let local = mesh.owned_to_local(ctx, u)?;
    let (qp, qw) = gauss_legendre(p + 3);
    let nq = qp.len();
    let basis: Vec<[f64; 3]> = qp.iter().map(|&t| lagrange(p, t)).collect();
    let npe = (p + 1).pow(dim as u32);
    let mut parts = Vec::with_capacity(mesh.leafs.len());
    traverse(mesh, &local, 0u8, |leaf, st, _| {
        let ue: Vec<f64> = (0..npe).map(|a| st.position(a).iter().map(|&(_, v, w)| w * v).sum()).collect();
        let b = mesh.map.octant_box(leaf);
        let h = mesh.map.octant_size(leaf.level());
        let mut acc = 0.0;
        for q in 0..nq.pow(dim as u32) {
            let qi = [q % nq, (q / nq) % nq, q / (nq * nq)];
            let mut x = b.lo;
            let mut w = 1.0;
            for ax in 0..dim {
                x[ax] = b.lo[ax] + h * qp[qi[ax]];
                w *= qw[qi[ax]];
            }
            let mut uh = 0.0;
            for (a, &ua) in ue.iter().enumerate() {
                let idx = split_index(dim, p, a);
                uh += ua * (0..dim).map(|ax| basis[qi[ax]][idx[ax]]).product::<f64>();
            }
            acc += w * (uh - exact(x)).powi(2);
        }
        parts.push(acc * h.powi(dim as i32));
        Ok(())
    })?;
    Ok(global_sum(ctx, &parts)?.sqrt())
}
