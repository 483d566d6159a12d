use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carve_core::geometry::SubdomainClassifier;
use carve_core::io::{write_parallel, Config};
use carve_core::partition::Runtime;
use carve_core::pipeline::{build_mesh, run_solve, uniform_value, MeshStats};
use carve_core::{Error, Result, Stage, StageExt};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "carve", version, about = "Carved-octree meshing and heat solves")]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of logical ranks; defaults to `run.nranks` from the config.
    #[arg(long, global = true, env = "CARVE_NRANKS")]
    nranks: Option<usize>,
    /// Output directory; defaults to `io.output` from the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and balance the mesh, write VTU and print its sizes.
    Mesh,
    /// Solve the configured heat problem.
    Solve {
        /// Resume from a checkpoint: `DIR/BASE` or any `DIR/BASE_<rank>.ckpt`.
        #[arg(long)]
        restart: Option<PathBuf>,
    },
    /// Print configuration and mesh diagnostics.
    Info,
    /// Signed distance to the carved solids for each point of a query file
    /// (one `x y z` per line); negative inside.
    SignedDistance {
        /// Query points.
        #[arg(long)]
        points: PathBuf,
    },
}

fn load(cli: &Cli) -> Result<Config> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))
        .stage(Stage::Config)?;
    let (cfg, warnings) = Config::load_with_warnings(path).stage(Stage::Config)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn nranks(cli: &Cli, cfg: &Config) -> Result<usize> {
    let n = cli.nranks.unwrap_or(cfg.run.nranks);
    if n == 0 {
        return Err(Error::Config("nranks must be at least 1".into())).stage(Stage::Config);
    }
    Ok(n)
}

fn output_dir(cli: &Cli, cfg: &Config) -> PathBuf {
    cli.output.clone().unwrap_or_else(|| PathBuf::from(&cfg.io.output))
}

fn mesh(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let classifier = cfg.classifier()?;
    let out = output_dir(cli, &cfg);
    std::fs::create_dir_all(&out).map_err(Error::from).stage(Stage::Output)?;
    let stats = Runtime::run(nranks(cli, &cfg)?, |ctx| {
        let mesh = build_mesh(ctx, &cfg, &classifier)?;
        let boundary = mesh.owned_from_fn(|r, _| if r.flags.is_interior() { 0.0 } else { 1.0 });
        write_parallel(ctx, &mesh, &[("boundary", &boundary)], &out, &cfg.io.basename).stage(Stage::Output)?;
        MeshStats::gather(ctx, &mesh)
    })?;
    println!("{}", stats[0]);
    println!("wrote {}", out.join(format!("{}.pvtu", cfg.io.basename)).display());
    Ok(())
}

fn solve(cli: &Cli, restart: Option<&Path>) -> Result<bool> {
    let cfg = load(cli)?;
    let classifier = cfg.classifier()?;
    let out = output_dir(cli, &cfg);
    let uniform = uniform_value(&cfg.heat.model);
    let results = Runtime::run(nranks(cli, &cfg)?, |ctx| {
        let run = run_solve(ctx, &cfg, &classifier, &out, restart)?;
        let dev = uniform.map(|c| run.max_deviation(ctx, c)).transpose()?;
        Ok((run.stats, run.solution.report, run.solution.l2_error, run.resumed_at, dev, run.solution.constrained))
    })?;
    let (stats, report, l2, resumed, dev, constrained) = &results[0];
    println!("{stats}");
    if let Some(step) = resumed {
        println!("resumed from iteration {step}");
    }
    println!("constrained nodes: {constrained}");
    if cfg.solver.report_convergence {
        let verb = if report.converged() { "converged" } else { "diverged" };
        println!("Linear solve {verb} due to {} iterations {}", report.reason, report.iterations);
    }
    println!("{report}");
    if let Some(e) = l2 {
        println!("l2-error={e:.6e}");
    }
    if let (Some(c), Some(d)) = (uniform, dev) {
        println!("max|u-{c}|={d:.3e}");
    }
    println!("wrote {}", out.join(format!("{}.pvtu", cfg.io.basename)).display());
    Ok(report.converged())
}

fn info(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let classifier = cfg.classifier()?;
    let n = nranks(cli, &cfg)?;
    let d = &cfg.domain;
    println!("config: {}", cli.config.as_deref().unwrap_or(Path::new("-")).display());
    println!("domain.dim: {}", d.dim);
    println!("domain.origin: {:?}", d.origin);
    println!("domain.side: {}", d.side);
    match d.extent {
        Some(e) => println!("domain.extent: {e:?}"),
        None => println!("domain.extent: none"),
    }
    println!("domain.base_level: {}", d.base_level);
    println!("domain.curve: {}", d.curve.name());
    println!("geometries: {}", cfg.geometries.len());
    for (i, g) in cfg.geometries.iter().enumerate() {
        println!(
            "geometries[{i}]: {} placements={} refine_lvl={}",
            g.mesh_path,
            g.displacements.len(),
            g.refine_lvl
        );
    }
    println!("shapes: {}", cfg.shapes.len());
    println!("carved regions: {}", classifier.regions().len());
    let s = &cfg.solver;
    println!(
        "solver: {} pc={:?} max_it={} atol={:e} rtol={:e}",
        s.method.name(),
        s.preconditioner,
        s.max_iterations,
        s.abs_tolerance,
        s.rel_tolerance
    );
    println!("heat.model: {:?}", cfg.heat.model);
    println!("heat.path: {:?} dirichlet={:?}", cfg.heat.path, cfg.heat.dirichlet);
    println!("run: nranks={n} p={} load_tolerance={}", cfg.run.p, cfg.run.load_tolerance);
    let imbalance = Runtime::run(n, |ctx| {
        let mesh = build_mesh(ctx, &cfg, &classifier)?;
        let stats = MeshStats::gather(ctx, &mesh)?;
        let levels = ctx.all_gather(mesh.leafs.leafs().iter().map(|k| k.level()).fold((u8::MAX, 0), |(a, b), l| (a.min(l), b.max(l))))?;
        Ok((stats, levels))
    })?;
    let (stats, levels) = &imbalance[0];
    let lo = levels.iter().map(|l| l.0).min().unwrap_or(0);
    let hi = levels.iter().map(|l| l.1).max().unwrap_or(0);
    let ideal = stats.leafs as f64 / n as f64;
    let worst = stats.rank_leafs.iter().map(|&c| (c as f64 - ideal).abs() / ideal.max(1.0)).fold(0.0, f64::max);
    println!("mesh: {stats}");
    println!("mesh.levels: {lo}..{hi}");
    println!("mesh.imbalance: {worst:.4}");
    Ok(())
}

fn parse_points(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        match vals[..] {
            [x, y] => out.push([x, y, 0.0]),
            [x, y, z] => out.push([x, y, z]),
            _ => return Err(Error::parse(format!("line {}", i + 1), "expected 2 or 3 coordinates")),
        }
    }
    Ok(out)
}

fn signed_distance(cli: &Cli, points: &Path) -> Result<()> {
    let cfg = load(cli)?;
    let classifier: SubdomainClassifier = cfg.classifier()?;
    let text = std::fs::read_to_string(points)
        .map_err(|e| Error::parse(points.display().to_string(), format!("cannot read points: {e}")))
        .stage(Stage::Config)?;
    let pts = parse_points(&text).stage(Stage::Config)?;
    for p in pts {
        let d = classifier
            .signed_distance(p)
            .stage(Stage::Geometry)?
            .ok_or_else(|| Error::Config("no carved geometry in the configuration".into()))
            .stage(Stage::Config)?;
        println!("{} {} {} {d:.12e}", p[0], p[1], p[2]);
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match (e.stage(), e.root()) {
        (_, Error::Parse { .. } | Error::Config(_)) | (Some(Stage::Config), _) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Mesh => mesh(&cli).map(|_| true),
        Command::Solve { restart } => solve(&cli, restart.as_deref()),
        Command::Info => info(&cli).map(|_| true),
        Command::SignedDistance { points } => signed_distance(&cli, points).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: [solve] the linear solve did not converge");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
