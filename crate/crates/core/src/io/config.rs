//! Typed run configuration on top of the settings grammar.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result, Stage, StageExt};
use crate::femops::DirichletMode;
use crate::geometry::{CarvedRegion, DomainMap, GeometryInstance, Solid, SubdomainClassifier, TriangleSurface, Vec3};
use crate::partition::DEFAULT_LOAD_TOLERANCE;
use crate::sfc::{Curve, MAX_LEVEL};
use crate::solve::{Face, HeatModel, Method, Preconditioner, SolvePath, SolverOptions};

use super::grammar::{parse_document, write_document, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct DomainConfig {
    pub dim: usize,
    pub origin: Vec3,
    pub side: f64,
    /// Retained box `[origin, origin + extent]` inside the root cube.
    pub extent: Option<Vec3>,
    pub base_level: u8,
    /// Upper bound on every refinement level.
    pub max_level: u8,
    pub curve: Curve,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            dim: 3,
            origin: [0.0; 3],
            side: 1.0,
            extent: None,
            base_level: 2,
            max_level: MAX_LEVEL,
            curve: Curve::Hilbert,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryConfig {
    pub mesh_path: String,
    pub displacements: Vec<Vec3>,
    pub refine_lvl: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ShapeKind {
    Ball { center: Vec3, radius: f64 },
    Box { lo: Vec3, hi: Vec3 },
}

/// An analytic carved solid.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeConfig {
    pub kind: ShapeKind,
    pub refine_lvl: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatConfig {
    pub model: HeatModel,
    pub path: SolvePath,
    pub dirichlet: DirichletMode,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            model: HeatModel::Constant {
                forcing: 0.0,
                surface_temperature: Some(1.0),
                faces: Vec::new(),
            },
            path: SolvePath::MatrixFree,
            dirichlet: DirichletMode::Symmetric,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoConfig {
    pub output: String,
    pub basename: String,
    /// Write VTU every this many iterations; 0 writes only the result.
    pub vtu_interval: usize,
    /// Checkpoint every this many iterations; 0 disables checkpoints.
    pub checkpoint_interval: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            output: "output".into(),
            basename: "carve".into(),
            vtu_interval: 0,
            checkpoint_interval: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub nranks: usize,
    pub p: usize,
    pub seed: u64,
    pub load_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nranks: 1,
            p: 1,
            seed: 0,
            load_tolerance: DEFAULT_LOAD_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub domain: DomainConfig,
    pub geometries: Vec<GeometryConfig>,
    pub shapes: Vec<ShapeConfig>,
    pub solver: SolverOptions,
    pub heat: HeatConfig,
    pub io: IoConfig,
    pub run: RunConfig,
    /// Directory that relative mesh paths resolve against.
    pub base_dir: Option<PathBuf>,
}

/// Key-path aware accessors over one group.
struct Group<'a, 'w> {
    path: String,
    items: &'a [(String, Value)],
    warnings: &'w mut Vec<String>,
    known: Vec<&'static str>,
}

fn type_error(path: &str, want: &str, got: &Value) -> Error {
    Error::Config(format!("{path}: expected {want}, found {}", got.kind()))
}

impl<'a, 'w> Group<'a, 'w> {
    fn new(path: impl Into<String>, items: &'a [(String, Value)], warnings: &'w mut Vec<String>) -> Self {
        Group {
            path: path.into(),
            items,
            warnings,
            known: Vec::new(),
        }
    }

    fn key_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.known.push(key);
        self.items.iter().find(|(n, _)| n == key).map(|(_, v)| v)
    }

    fn f64(&mut self, key: &'static str) -> Result<Option<f64>> {
        let p = self.key_path(key);
        self.get(key)
            .map(|v| v.as_f64().ok_or_else(|| type_error(&p, "a number", v)))
            .transpose()
    }

    fn int(&mut self, key: &'static str, lo: i64, hi: i64) -> Result<Option<i64>> {
        let p = self.key_path(key);
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let i = v.as_i64().ok_or_else(|| type_error(&p, "an integer", v))?;
                if i < lo || i > hi {
                    return Err(Error::Config(format!("{p}: {i} is outside [{lo}, {hi}]")));
                }
                Ok(Some(i))
            }
        }
    }

    fn str(&mut self, key: &'static str) -> Result<Option<&'a str>> {
        let p = self.key_path(key);
        self.get(key)
            .map(|v| v.as_str().ok_or_else(|| type_error(&p, "a string", v)))
            .transpose()
    }

    fn vec3(&mut self, key: &'static str) -> Result<Option<Vec3>> {
        let p = self.key_path(key);
        match self.get(key) {
            None => Ok(None),
            Some(v) => vec3_of(&p, v).map(Some),
        }
    }

    fn seq(&mut self, key: &'static str) -> Result<Option<&'a [Value]>> {
        let p = self.key_path(key);
        self.get(key)
            .map(|v| v.as_seq().ok_or_else(|| type_error(&p, "a list", v)))
            .transpose()
    }

    fn group(&mut self, key: &'static str) -> Result<Option<&'a [(String, Value)]>> {
        let p = self.key_path(key);
        self.get(key)
            .map(|v| v.as_group().ok_or_else(|| type_error(&p, "a group", v)))
            .transpose()
    }

    fn finish(self) {
        for (n, _) in self.items {
            if !self.known.contains(&n.as_str()) {
                let p = if self.path.is_empty() {
                    n.clone()
                } else {
                    format!("{}.{n}", self.path)
                };
                log::warn!("unknown config key '{p}' ignored");
                self.warnings.push(format!("unknown key '{p}'"));
            }
        }
    }
}

fn vec3_of(path: &str, v: &Value) -> Result<Vec3> {
    let items = v.as_seq().ok_or_else(|| type_error(path, "a coordinate array", v))?;
    if items.is_empty() || items.len() > 3 {
        return Err(Error::Config(format!("{path}: expected 1 to 3 coordinates, found {}", items.len())));
    }
    let mut out = [0.0; 3];
    for (i, x) in items.iter().enumerate() {
        out[i] = x.as_f64().ok_or_else(|| type_error(path, "numeric coordinates", x))?;
    }
    Ok(out)
}

fn level(path: &str, v: i64) -> u8 {
    debug_assert!((0..=MAX_LEVEL as i64).contains(&v), "{path}");
    v as u8
}

fn curve_of(s: &str) -> Result<Curve> {
    match s.to_ascii_lowercase().as_str() {
        "morton" | "z" => Ok(Curve::Morton),
        "hilbert" => Ok(Curve::Hilbert),
        _ => Err(Error::Config(format!("domain.curve: unknown curve '{s}'"))),
    }
}

impl Config {
    /// Parse configuration text; unknown keys are returned as warnings.
    pub fn parse_with_warnings(text: &str) -> Result<(Config, Vec<String>)> {
        let doc = parse_document(text)?;
        let mut warnings = Vec::new();
        let mut cfg = Config::default();
        let mut top = Group::new("", &doc, &mut warnings);
        let domain = top.group("domain")?;
        let geometries = top.seq("geometries")?;
        let shapes = top.seq("shapes")?;
        let solver = top.group("solver_options_ht")?;
        let heat = top.group("heat")?;
        let io = top.group("io")?;
        let run = top.group("run")?;
        top.finish();

        if let Some(items) = domain {
            let mut g = Group::new("domain", items, &mut warnings);
            let d = &mut cfg.domain;
            d.dim = g.int("dim", 2, 3)?.map_or(d.dim, |v| v as usize);
            d.origin = g.vec3("origin")?.unwrap_or(d.origin);
            d.side = g.f64("side")?.unwrap_or(d.side);
            d.extent = g.vec3("extent")?;
            d.base_level = g.int("base_level", 0, MAX_LEVEL as i64)?.map_or(d.base_level, |v| level("domain.base_level", v));
            d.max_level = g.int("max_level", 0, MAX_LEVEL as i64)?.map_or(d.max_level, |v| level("domain.max_level", v));
            if let Some(c) = g.str("curve")? {
                d.curve = curve_of(c)?;
            }
            g.finish();
        }
        for (i, v) in geometries.unwrap_or_default().iter().enumerate() {
            let path = format!("geometries[{i}]");
            let items = v.as_group().ok_or_else(|| type_error(&path, "a group", v))?;
            let mut g = Group::new(path.clone(), items, &mut warnings);
            let mesh_path = g
                .str("mesh_path")?
                .ok_or_else(|| Error::Config(format!("{path}.mesh_path is required")))?
                .to_string();
            let mut displacements = Vec::new();
            for (j, d) in g.seq("displacements")?.unwrap_or_default().iter().enumerate() {
                let dp = format!("{path}.displacements[{j}]");
                let items = d.as_group().ok_or_else(|| type_error(&dp, "a group", d))?;
                let mut dg = Group::new(dp.clone(), items, g.warnings);
                let pos = dg.vec3("position")?.ok_or_else(|| Error::Config(format!("{dp}.position is required")))?;
                dg.finish();
                displacements.push(pos);
            }
            if displacements.is_empty() {
                displacements.push([0.0; 3]);
            }
            let refine_lvl = g
                .int("refine_lvl", 0, MAX_LEVEL as i64)?
                .ok_or_else(|| Error::Config(format!("{path}.refine_lvl is required")))?;
            g.finish();
            cfg.geometries.push(GeometryConfig {
                mesh_path,
                displacements,
                refine_lvl: level(&path, refine_lvl),
            });
        }
        for (i, v) in shapes.unwrap_or_default().iter().enumerate() {
            let path = format!("shapes[{i}]");
            let items = v.as_group().ok_or_else(|| type_error(&path, "a group", v))?;
            let mut g = Group::new(path.clone(), items, &mut warnings);
            let kind = g.str("type")?.ok_or_else(|| Error::Config(format!("{path}.type is required")))?;
            let kind = match kind {
                "ball" | "sphere" | "disk" => ShapeKind::Ball {
                    center: g.vec3("center")?.ok_or_else(|| Error::Config(format!("{path}.center is required")))?,
                    radius: g.f64("radius")?.ok_or_else(|| Error::Config(format!("{path}.radius is required")))?,
                },
                "box" => ShapeKind::Box {
                    lo: g.vec3("lo")?.ok_or_else(|| Error::Config(format!("{path}.lo is required")))?,
                    hi: g.vec3("hi")?.ok_or_else(|| Error::Config(format!("{path}.hi is required")))?,
                },
                other => return Err(Error::Config(format!("{path}.type: unknown shape '{other}'"))),
            };
            let refine_lvl = g
                .int("refine_lvl", 0, MAX_LEVEL as i64)?
                .ok_or_else(|| Error::Config(format!("{path}.refine_lvl is required")))?;
            g.finish();
            cfg.shapes.push(ShapeConfig {
                kind,
                refine_lvl: level(&path, refine_lvl),
            });
        }
        if let Some(items) = solver {
            let mut g = Group::new("solver_options_ht", items, &mut warnings);
            let s = &mut cfg.solver;
            s.max_iterations = g.int("ksp_max_it", 1, i64::MAX)?.map_or(s.max_iterations, |v| v as usize);
            if let Some(t) = g.str("ksp_type")? {
                s.method = match t {
                    "cg" => Method::Cg,
                    "bcgs" | "bicgstab" => Method::BiCgStab,
                    other => return Err(Error::Config(format!("solver_options_ht.ksp_type: unsupported '{other}'"))),
                };
            }
            if let Some(t) = g.str("pc_type")? {
                s.preconditioner = match t {
                    "none" => Preconditioner::None,
                    "jacobi" => Preconditioner::Jacobi,
                    "asm" => {
                        log::warn!("pc_type \"asm\" is not available; using jacobi");
                        g.warnings.push("pc_type asm replaced by jacobi".into());
                        Preconditioner::Jacobi
                    }
                    other => return Err(Error::Config(format!("solver_options_ht.pc_type: unsupported '{other}'"))),
                };
            }
            s.abs_tolerance = g.f64("ksp_atol")?.unwrap_or(s.abs_tolerance);
            s.rel_tolerance = g.f64("ksp_rtol")?.unwrap_or(s.rel_tolerance);
            // present with any value turns reporting on, as the original option does
            s.report_convergence = match g.get("ksp_converged_reason") {
                None => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => true,
            };
            g.finish();
            s.validate()?;
        }
        if let Some(items) = heat {
            let mut g = Group::new("heat", items, &mut warnings);
            let h = &mut cfg.heat;
            let model = g.str("model")?.unwrap_or("constant");
            let forcing = g.f64("forcing")?;
            let surface = g.f64("surface_temperature")?;
            let faces = g.seq("faces")?;
            h.model = match model {
                "manufactured" => HeatModel::Manufactured,
                "constant" => {
                    let mut list = Vec::new();
                    for (i, f) in faces.unwrap_or_default().iter().enumerate() {
                        let fp = format!("heat.faces[{i}]");
                        let items = f.as_group().ok_or_else(|| type_error(&fp, "a group", f))?;
                        let mut fg = Group::new(fp.clone(), items, g.warnings);
                        let name = fg.str("face")?.ok_or_else(|| Error::Config(format!("{fp}.face is required")))?;
                        let face = match name {
                            "all" => None,
                            n => Some(Face::parse(n).ok_or_else(|| Error::Config(format!("{fp}.face: unknown face '{n}'")))?),
                        };
                        let t = fg
                            .f64("temperature")?
                            .ok_or_else(|| Error::Config(format!("{fp}.temperature is required")))?;
                        fg.finish();
                        match face {
                            Some(face) => list.push((face, t)),
                            None => list.extend(Face::all(cfg.domain.dim).into_iter().map(|f| (f, t))),
                        }
                    }
                    HeatModel::Constant {
                        forcing: forcing.unwrap_or(0.0),
                        surface_temperature: surface,
                        faces: list,
                    }
                }
                other => return Err(Error::Config(format!("heat.model: unknown model '{other}'"))),
            };
            if let Some(p) = g.str("path")? {
                h.path = match p {
                    "matrix_free" => SolvePath::MatrixFree,
                    "assembled" => SolvePath::Assembled,
                    other => return Err(Error::Config(format!("heat.path: unknown path '{other}'"))),
                };
            }
            if let Some(d) = g.str("dirichlet")? {
                h.dirichlet = match d {
                    "symmetric" => DirichletMode::Symmetric,
                    "rows" => DirichletMode::RowsOnly,
                    other => return Err(Error::Config(format!("heat.dirichlet: unknown mode '{other}'"))),
                };
            }
            g.finish();
        }
        if let Some(items) = io {
            let mut g = Group::new("io", items, &mut warnings);
            let o = &mut cfg.io;
            if let Some(s) = g.str("output")? {
                o.output = s.to_string();
            }
            if let Some(s) = g.str("basename")? {
                o.basename = s.to_string();
            }
            o.vtu_interval = g.int("vtu_interval", 0, i64::MAX)?.map_or(o.vtu_interval, |v| v as usize);
            o.checkpoint_interval = g.int("checkpoint_interval", 0, i64::MAX)?.map_or(o.checkpoint_interval, |v| v as usize);
            g.finish();
        }
        if let Some(items) = run {
            let mut g = Group::new("run", items, &mut warnings);
            let r = &mut cfg.run;
            r.nranks = g.int("nranks", 1, 4096)?.map_or(r.nranks, |v| v as usize);
            r.p = g.int("p", 1, 2)?.map_or(r.p, |v| v as usize);
            r.seed = g.int("seed", 0, i64::MAX)?.map_or(r.seed, |v| v as u64);
            r.load_tolerance = g.f64("load_tolerance")?.unwrap_or(r.load_tolerance);
            g.finish();
        }
        cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn parse(text: &str) -> Result<Config> {
        Ok(Config::parse_with_warnings(text)?.0)
    }

    /// Read and parse a file; relative mesh paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Config> {
        Ok(Config::load_with_warnings(path)?.0)
    }

    pub fn load_with_warnings(path: &Path) -> Result<(Config, Vec<String>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(path.display().to_string(), format!("cannot read config: {e}")))?;
        let (mut cfg, warnings) = Config::parse_with_warnings(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok((cfg, warnings))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.side > 0.0 && d.side.is_finite()) {
            return Err(Error::Config("domain.side must be positive".into()));
        }
        if d.base_level > d.max_level {
            return Err(Error::Config(format!(
                "domain.base_level {} exceeds domain.max_level {}",
                d.base_level, d.max_level
            )));
        }
        if let Some(e) = d.extent {
            if e.iter().take(d.dim).any(|&v| !(v > 0.0)) {
                return Err(Error::Config("domain.extent must be positive".into()));
            }
        }
        let levels = self
            .geometries
            .iter()
            .map(|g| ("geometries", g.refine_lvl))
            .chain(self.shapes.iter().map(|s| ("shapes", s.refine_lvl)));
        for (what, l) in levels {
            if l < d.base_level {
                return Err(Error::Config(format!(
                    "{what}: refine_lvl {l} is below domain.base_level {}",
                    d.base_level
                )));
            }
            if l > d.max_level {
                return Err(Error::Config(format!(
                    "{what}: refine_lvl {l} exceeds domain.max_level {}",
                    d.max_level
                )));
            }
        }
        for g in &self.geometries {
            if g.mesh_path.is_empty() {
                return Err(Error::Config("geometries: mesh_path must not be empty".into()));
            }
        }
        if !self.geometries.is_empty() && d.dim != 3 {
            return Err(Error::Config("triangle-mesh geometries need domain.dim = 3".into()));
        }
        for s in &self.shapes {
            match &s.kind {
                ShapeKind::Ball { radius, .. } if !(*radius > 0.0) => {
                    return Err(Error::Config("shapes: radius must be positive".into()))
                }
                ShapeKind::Box { lo, hi } if (0..d.dim).any(|a| !(lo[a] < hi[a])) => {
                    return Err(Error::Config("shapes: box needs lo < hi on every axis".into()))
                }
                _ => {}
            }
        }
        if self.io.output.is_empty() || self.io.basename.is_empty() {
            return Err(Error::Config("io.output and io.basename must not be empty".into()));
        }
        if !(self.run.load_tolerance > 0.0 && self.run.load_tolerance <= 1.0) {
            return Err(Error::Config("run.load_tolerance must be in (0, 1]".into()));
        }
        self.solver.validate()
    }

    /// Render back into the grammar; parsing the result gives an equal
    /// config (apart from `base_dir`).
    pub fn to_text(&self) -> String {
        let f = Value::Float;
        let int = |v: i64| Value::Int(v);
        let s = |v: &str| Value::Str(v.to_string());
        let v3 = |v: &Vec3| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        let d = &self.domain;
        let mut domain = vec![
            ("dim".to_string(), int(d.dim as i64)),
            ("origin".into(), v3(&d.origin)),
            ("side".into(), f(d.side)),
            ("base_level".into(), int(d.base_level as i64)),
            ("max_level".into(), int(d.max_level as i64)),
            ("curve".into(), s(d.curve.name())),
        ];
        if let Some(e) = &d.extent {
            domain.push(("extent".into(), v3(e)));
        }
        let geometries = self
            .geometries
            .iter()
            .map(|g| {
                Value::Group(vec![
                    ("mesh_path".into(), s(&g.mesh_path)),
                    (
                        "displacements".into(),
                        Value::List(
                            g.displacements
                                .iter()
                                .map(|p| Value::Group(vec![("position".into(), v3(p))]))
                                .collect(),
                        ),
                    ),
                    ("refine_lvl".into(), int(g.refine_lvl as i64)),
                ])
            })
            .collect();
        let shapes = self
            .shapes
            .iter()
            .map(|sh| {
                let mut items = match &sh.kind {
                    ShapeKind::Ball { center, radius } => vec![
                        ("type".to_string(), s("ball")),
                        ("center".into(), v3(center)),
                        ("radius".into(), f(*radius)),
                    ],
                    ShapeKind::Box { lo, hi } => vec![
                        ("type".to_string(), s("box")),
                        ("lo".into(), v3(lo)),
                        ("hi".into(), v3(hi)),
                    ],
                };
                items.push(("refine_lvl".into(), int(sh.refine_lvl as i64)));
                Value::Group(items)
            })
            .collect();
        let so = &self.solver;
        let solver = vec![
            ("ksp_max_it".to_string(), int(so.max_iterations as i64)),
            ("ksp_type".into(), s(so.method.name())),
            ("pc_type".into(), s(so.preconditioner.name())),
            ("ksp_atol".into(), f(so.abs_tolerance)),
            ("ksp_rtol".into(), f(so.rel_tolerance)),
            ("ksp_converged_reason".into(), Value::Bool(so.report_convergence)),
        ];
        let h = &self.heat;
        let mut heat = match &h.model {
            HeatModel::Manufactured => vec![("model".to_string(), s("manufactured"))],
            HeatModel::Constant {
                forcing,
                surface_temperature,
                faces,
            } => {
                let mut items = vec![("model".to_string(), s("constant")), ("forcing".into(), f(*forcing))];
                if let Some(t) = surface_temperature {
                    items.push(("surface_temperature".into(), f(*t)));
                }
                items.push((
                    "faces".into(),
                    Value::List(
                        faces
                            .iter()
                            .map(|(face, t)| {
                                Value::Group(vec![("face".into(), s(face.name())), ("temperature".into(), f(*t))])
                            })
                            .collect(),
                    ),
                ));
                items
            }
        };
        heat.push((
            "path".into(),
            s(match h.path {
                SolvePath::MatrixFree => "matrix_free",
                SolvePath::Assembled => "assembled",
            }),
        ));
        heat.push((
            "dirichlet".into(),
            s(match h.dirichlet {
                DirichletMode::Symmetric => "symmetric",
                DirichletMode::RowsOnly => "rows",
            }),
        ));
        let io = vec![
            ("output".to_string(), s(&self.io.output)),
            ("basename".into(), s(&self.io.basename)),
            ("vtu_interval".into(), int(self.io.vtu_interval as i64)),
            ("checkpoint_interval".into(), int(self.io.checkpoint_interval as i64)),
        ];
        let run = vec![
            ("nranks".to_string(), int(self.run.nranks as i64)),
            ("p".into(), int(self.run.p as i64)),
            ("seed".into(), int(self.run.seed as i64)),
            ("load_tolerance".into(), f(self.run.load_tolerance)),
        ];
        write_document(&[
            ("domain".into(), Value::Group(domain)),
            ("geometries".into(), Value::List(geometries)),
            ("shapes".into(), Value::List(shapes)),
            ("solver_options_ht".into(), Value::Group(solver)),
            ("heat".into(), Value::Group(heat)),
            ("io".into(), Value::Group(io)),
            ("run".into(), Value::Group(run)),
        ])
    }

    /// Resolve a mesh path against the config's directory.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        match (&self.base_dir, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p,
        }
    }

    /// Build the carved-set classifier, loading every mesh once.
    pub fn classifier(&self) -> Result<SubdomainClassifier> {
        let d = &self.domain;
        let mut c = SubdomainClassifier::new(
            d.dim,
            DomainMap {
                origin: d.origin,
                side: d.side,
            },
        )
        .stage(Stage::Config)?;
        if let Some(e) = d.extent {
            c = c.with_extent(e).stage(Stage::Config)?;
        }
        for g in &self.geometries {
            let surface = Arc::new(TriangleSurface::load(&self.resolve(&g.mesh_path)).stage(Stage::Geometry)?);
            for &displacement in &g.displacements {
                c = c
                    .with_region(CarvedRegion {
                        solid: Solid::Mesh(GeometryInstance {
                            surface: surface.clone(),
                            displacement,
                        }),
                        refine_level: g.refine_lvl,
                    })
                    .stage(Stage::Config)?;
            }
        }
        for s in &self.shapes {
            let solid = match &s.kind {
                ShapeKind::Ball { center, radius } => Solid::Ball {
                    center: *center,
                    radius: *radius,
                },
                ShapeKind::Box { lo, hi } => Solid::Cuboid { lo: *lo, hi: *hi },
            };
            c = c
                .with_region(CarvedRegion {
                    solid,
                    refine_level: s.refine_lvl,
                })
                .stage(Stage::Config)?;
        }
        Ok(c)
    }

    pub fn heat_problem(&self) -> crate::solve::HeatProblem {
        crate::solve::HeatProblem {
            model: self.heat.model.clone(),
            solver: self.solver.clone(),
            dirichlet: self.heat.dirichlet,
            path: self.heat.path,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEOMETRIES: &str = r#"
  geometries = (
  {
  mesh_path = "stl/human.stl"
  displacements = (
  {position = [0.65,0.0,0.8125]},
  {position = [1.625,0.0,0.73125]},
  )
  refine_lvl = 9
})
"#;

    const SOLVER: &str = r#"
solver_options_ht = {
  ksp_max_it = 500
  ksp_type = "bcgs"
  pc_type = "asm"
  ksp_atol = 1e-15
  ksp_rtol = 1e-15
  ksp_converged_reason = ""
}
"#;

    #[test]
    fn geometry_listing() {
        let c = Config::parse(GEOMETRIES).unwrap();
        assert_eq!(c.geometries.len(), 1);
        let g = &c.geometries[0];
        assert_eq!(g.mesh_path, "stl/human.stl");
        assert_eq!(g.displacements, vec![[0.65, 0.0, 0.8125], [1.625, 0.0, 0.73125]]);
        assert_eq!(g.refine_lvl, 9);
    }

    #[test]
    fn solver_listing() {
        let (c, warnings) = Config::parse_with_warnings(SOLVER).unwrap();
        let s = &c.solver;
        assert_eq!(s.max_iterations, 500);
        assert_eq!(s.method, Method::BiCgStab);
        assert_eq!(s.preconditioner, Preconditioner::Jacobi);
        assert_eq!(s.abs_tolerance, 1e-15);
        assert_eq!(s.rel_tolerance, 1e-15);
        assert!(s.report_convergence);
        assert!(warnings.iter().any(|w| w.contains("asm")));
    }

    #[test]
    fn defaults_and_empty_geometries() {
        let c = Config::parse("geometries = ()").unwrap();
        assert!(c.geometries.is_empty());
        assert_eq!(c.solver.abs_tolerance, 1e-6);
        assert_eq!(c.solver.rel_tolerance, 1e-6);
        assert_eq!(c, Config::default());
    }

    #[test]
    fn unknown_keys_warn() {
        let (_, w) = Config::parse_with_warnings("frobnicate = 3\nrun = { p = 2 colour = \"red\" }").unwrap();
        assert_eq!(w, vec!["unknown key 'frobnicate'".to_string(), "unknown key 'run.colour'".to_string()]);
    }

    #[test]
    fn errors() {
        for text in [
            "run = { p = 3 }",
            "run = { p = \"one\" }",
            "domain = { base_level = 5 }\nshapes = ({ type = \"ball\" center = [0.5,0.5,0.5] radius = 0.1 refine_lvl = 4 })",
            "geometries = ({ mesh_path = \"\" refine_lvl = 9 })",
            "solver_options_ht = { ksp_type = \"gmres\" }",
            "solver_options_ht = { ksp_atol = 0 }",
            "domain = { max_level = 31 }",
        ] {
            assert!(matches!(Config::parse(text), Err(Error::Config(_))), "{text}");
        }
        assert!(matches!(Config::parse("run = {"), Err(Error::Parse { .. })));
    }

    #[test]
    fn reserialized_config_reparses_equal() {
        let text = format!(
            "{GEOMETRIES}{SOLVER}\ndomain = {{ dim = 3 extent = [2.0, 1.0, 1.5] side = 4.0 curve = \"morton\" }}\n\
             shapes = ({{ type = \"box\" lo = [0.1,0.1,0.1] hi = [0.2,0.3,0.4] refine_lvl = 5 }})\n\
             heat = {{ surface_temperature = 1.0 faces = ({{ face = \"all\" temperature = 0.0 }}) path = \"assembled\" }}\n\
             io = {{ vtu_interval = 10 checkpoint_interval = 5 }}\nrun = {{ nranks = 4 p = 2 seed = 7 }}"
        );
        let a = Config::parse(&text).unwrap();
        let b = Config::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_text(), a.to_text());
        if let HeatModel::Constant { faces, .. } = &a.heat.model {
            assert_eq!(faces.len(), 6);
        } else {
            panic!("constant model expected");
        }
    }

    #[test]
    fn missing_file_is_a_parse_error() {
        assert!(matches!(
            Config::load(Path::new("/nonexistent/carve.cfg")),
            Err(Error::Parse { .. })
        ));
    }
}
