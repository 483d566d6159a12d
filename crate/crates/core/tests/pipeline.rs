use std::collections::BTreeMap;
use std::path::Path;

use carve_core::geometry::{write_binary_stl, shapes::axis_box};
use carve_core::io::{decode_piece, Config};
use carve_core::partition::Runtime;
use carve_core::pipeline::{build_mesh, run_solve, MeshStats};
use carve_core::{Error, Stage};

const QUADRANT: &str = r#"
# closed quadrant carved from the unit square
domain = { dim = 2; base_level = 2; curve = "morton"; };
shapes = ( { type = "box"; lo = [0.0, 0.0, -1.0]; hi = [0.5, 0.5, 1.0]; refine_lvl = 2; } );
heat = { forcing = 0.0; surface_temperature = 4.0; faces = ( { face = "x+"; temperature = 4.0; } ); };
solver_options_ht = { ksp_atol = 1e-10; ksp_rtol = 1e-10; };
io = { basename = "quad"; };
"#;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn carved_quadrant_mesh_stats() {
    let cfg = Config::parse(QUADRANT).unwrap();
    let c = cfg.classifier().unwrap();
    let stats = Runtime::run(2, |ctx| {
        let mesh = build_mesh(ctx, &cfg, &c)?;
        MeshStats::gather(ctx, &mesh)
    })
    .unwrap();
    let s = &stats[0];
    assert_eq!(s.leafs, 12);
    // 5x5 lattice minus the 4 points touched only by carved cells
    assert_eq!(s.nodes, 21);
    assert_eq!(s.rank_leafs.iter().sum::<u64>(), 12);
    assert_eq!(s.rank_nodes.iter().sum::<u64>(), 21);
    assert!(s.to_string().starts_with("leafs=12 nodes=21 "));
}

#[test]
fn constant_boundary_solution_and_outputs() {
    let cfg = Config::parse(QUADRANT).unwrap();
    let c = cfg.classifier().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_path_buf();
    let dev = Runtime::run(3, |ctx| run_solve(ctx, &cfg, &c, &out, None)?.max_deviation(ctx, 4.0)).unwrap();
    assert!(dev[0] <= 1e-8, "{}", dev[0]);
    let names: Vec<_> = files(dir.path()).into_keys().collect();
    assert_eq!(names, ["quad.pvtu", "quad_0.vtu", "quad_1.vtu", "quad_2.vtu"]);
}

#[test]
fn checkpoints_are_byte_deterministic() {
    let mut cfg = Config::parse(QUADRANT).unwrap();
    cfg.io.checkpoint_interval = 1;
    cfg.solver.max_iterations = 2;
    if let carve_core::solve::HeatModel::Constant { forcing, .. } = &mut cfg.heat.model {
        *forcing = 1.0;
    }
    let c = cfg.classifier().unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = d.path().to_path_buf();
        Runtime::run(2, |ctx| run_solve(ctx, &cfg, &c, &out, None).map(|_| ())).unwrap();
    }
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    assert_eq!(a, b);
    let piece = decode_piece(&a["quad_1.ckpt"]).unwrap();
    assert_eq!((piece.header.rank, piece.header.nranks, piece.header.step), (1, 2, 2));
}

#[test]
fn stl_geometry_from_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_binary_stl(&dir.path().join("block.stl"), &axis_box([0.3, 0.3, 0.3], [0.6, 0.6, 0.6])).unwrap();
    let text = r#"
domain = { dim = 3; base_level = 2; };
geometries = ( { mesh_path = "block.stl"; displacements = ( { position = [0.0, 0.0, 0.0] } ); refine_lvl = 4; } );
"#;
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = Config::load(&cfg_path).unwrap();
    let c = cfg.classifier().unwrap();
    let mesh = Runtime::run(1, |ctx| build_mesh(ctx, &cfg, &c)).unwrap().remove(0);
    assert!(mesh.leafs.leafs().iter().any(|k| k.level() == 4));
    assert!(mesh.leaf_count() < 8u64.pow(4));

    std::fs::remove_file(dir.path().join("block.stl")).unwrap();
    let e = cfg.classifier().unwrap_err();
    assert!(matches!(e, Error::Stage { stage: Stage::Geometry, .. }), "{e}");
}
