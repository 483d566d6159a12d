//! End-to-end runs: configuration to mesh, heat solve, output and restart.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result, Stage, StageExt};
use crate::geometry::SubdomainClassifier;
use crate::io::{load_checkpoint, write_checkpoint, write_parallel, Config};
use crate::nodes::RankMesh;
use crate::partition::{distributed_construct_2to1_balanced, distributed_refine_to_geometry, DistTree, RankContext};
use crate::solve::{solve_heat, HeatModel, HeatSolution, SolveSetup};

/// Refine to the carved geometry, balance 2:1 and partition.
pub fn build_tree(ctx: &RankContext, cfg: &Config, classifier: &SubdomainClassifier) -> Result<DistTree> {
    let (curve, tol) = (cfg.domain.curve, cfg.run.load_tolerance);
    let refined =
        distributed_refine_to_geometry(ctx, classifier, curve, cfg.domain.base_level, tol).stage(Stage::Mesh)?;
    distributed_construct_2to1_balanced(ctx, classifier, curve, refined.local.leafs().to_vec(), tol).stage(Stage::Mesh)
}

/// Build the balanced tree and enumerate its nodes.
pub fn build_mesh(ctx: &RankContext, cfg: &Config, classifier: &SubdomainClassifier) -> Result<RankMesh> {
    let tree = build_tree(ctx, cfg, classifier)?;
    RankMesh::build(ctx, tree, cfg.run.p, classifier).stage(Stage::Nodes)
}

/// Global and per-rank sizes of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshStats {
    pub leafs: u64,
    pub nodes: u64,
    pub rank_leafs: Vec<u64>,
    pub rank_nodes: Vec<u64>,
}

impl MeshStats {
    pub fn gather(ctx: &RankContext, mesh: &RankMesh) -> Result<MeshStats> {
        Ok(MeshStats {
            leafs: mesh.leaf_count(),
            nodes: mesh.global_nodes,
            rank_leafs: mesh.leaf_counts.clone(),
            rank_nodes: ctx.all_gather(mesh.owned_len() as u64)?,
        })
    }
}

impl fmt::Display for MeshStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        write!(
            f,
            "leafs={} nodes={} per-rank-leafs=[{}] per-rank-nodes=[{}]",
            self.leafs,
            self.nodes,
            list(&self.rank_leafs),
            list(&self.rank_nodes)
        )
    }
}

/// Split a restart argument into directory and base name. Accepts the
/// base (`out/carve`) or any one of the rank files (`out/carve_0.ckpt`).
pub fn checkpoint_location(path: &Path) -> (PathBuf, String) {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let base = name
        .strip_suffix(".ckpt")
        .and_then(|stem| {
            let (head, rank) = stem.rsplit_once('_')?;
            rank.parse::<usize>().ok().map(|_| head.to_string())
        })
        .unwrap_or(name);
    (dir, base)
}

/// The constant every node should take when the model fixes one value on
/// every boundary and has no source.
pub fn uniform_value(model: &HeatModel) -> Option<f64> {
    match model {
        HeatModel::Constant {
            forcing,
            surface_temperature,
            faces,
        } if *forcing == 0.0 => {
            let mut values = faces.iter().map(|(_, v)| *v).chain(*surface_temperature);
            let first = values.next()?;
            values.all(|v| v == first).then_some(first)
        }
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct SolveRun {
    pub mesh: RankMesh,
    pub solution: HeatSolution,
    pub stats: MeshStats,
    /// Iteration the solve resumed from, if it was restarted.
    pub resumed_at: Option<u64>,
    pub files: Vec<PathBuf>,
}

impl SolveRun {
    /// `max |u - c|` over all nodes.
    pub fn max_deviation(&self, ctx: &RankContext, c: f64) -> Result<f64> {
        let local = self.solution.u.iter().fold(0.0f64, |m, v| m.max((v - c).abs()));
        ctx.max_f64(local)
    }
}

/// Solve the configured heat problem, writing VTU and checkpoint files at
/// the configured intervals into `output` and a final VTU at the end.
/// With `restart`, the mesh and initial guess come from a checkpoint.
pub fn run_solve(
    ctx: &RankContext,
    cfg: &Config,
    classifier: &SubdomainClassifier,
    output: &Path,
    restart: Option<&Path>,
) -> Result<SolveRun> {
    std::fs::create_dir_all(output).map_err(Error::from).stage(Stage::Output)?;
    let (mesh, guess, start) = match restart {
        Some(path) => {
            let (dir, base) = checkpoint_location(path);
            let restored = load_checkpoint(ctx, &dir, &base, cfg.run.load_tolerance).stage(Stage::Checkpoint)?;
            if restored.p != cfg.run.p {
                log::warn!("checkpoint uses p={}, overriding the configured p={}", restored.p, cfg.run.p);
            }
            let mesh = RankMesh::build(ctx, restored.tree.clone(), restored.p, classifier).stage(Stage::Nodes)?;
            let u0 = restored.owned_values(&mesh).stage(Stage::Checkpoint)?;
            (mesh, Some(u0), Some(restored.step))
        }
        None => (build_mesh(ctx, cfg, classifier)?, None, None),
    };
    let stats = MeshStats::gather(ctx, &mesh)?;
    let base = cfg.io.basename.as_str();
    let (vtu_every, ckpt_every) = (cfg.io.vtu_interval, cfg.io.checkpoint_interval);
    let mut files = Vec::new();
    let solution = {
        let mesh = &mesh;
        let files = &mut files;
        let monitor = move |it: usize, x: &[f64]| -> Result<()> {
            if ckpt_every > 0 && it % ckpt_every == 0 {
                write_checkpoint(ctx, mesh, x, it as u64, output, base).stage(Stage::Checkpoint)?;
            }
            if vtu_every > 0 && it % vtu_every == 0 {
                let name = format!("{base}_it{it:06}");
                files.extend(write_parallel(ctx, mesh, &[("u", x)], output, &name).stage(Stage::Output)?);
            }
            Ok(())
        };
        let setup = SolveSetup {
            initial_guess: guess,
            diagonal: None,
            start_iteration: start.unwrap_or(0) as usize,
            monitor: Some(Box::new(monitor)),
        };
        solve_heat(ctx, mesh, classifier, &cfg.heat_problem(), setup)?
    };
    files.extend(write_parallel(ctx, &mesh, &[("u", &solution.u)], output, base).stage(Stage::Output)?);
    Ok(SolveRun {
        mesh,
        solution,
        stats,
        resumed_at: start,
        files,
    })
}
