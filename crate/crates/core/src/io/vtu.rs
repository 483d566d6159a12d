//! VTK XML unstructured-grid output: one `.vtu` piece per rank, joined by a
//! `.pvtu` written on rank 0. Array payloads are appended, base64 encoded,
//! little-endian and uncompressed, each prefixed by a `UInt32` byte count.
//!
//! Each leaf is written as a quad or hexahedron through its corners, with
//! interface points duplicated so no rank needs its neighbours' numbering.
//! Corner values come from the same hanging-node interpolation as the
//! operators.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;

use crate::error::{Error, Result};
use crate::femops::traverse;
use crate::nodes::RankMesh;
use crate::partition::RankContext;

const VTK_QUAD: u8 = 9;
const VTK_HEXAHEDRON: u8 = 12;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    Float64(Vec<f64>),
    Int64(Vec<i64>),
    Int32(Vec<i32>),
    UInt8(Vec<u8>),
}

impl ArrayData {
    fn type_name(&self) -> &'static str {
        match self {
            ArrayData::Float64(_) => "Float64",
            ArrayData::Int64(_) => "Int64",
            ArrayData::Int32(_) => "Int32",
            ArrayData::UInt8(_) => "UInt8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::Float64(v) => v.len(),
            ArrayData::Int64(v) => v.len(),
            ArrayData::Int32(v) => v.len(),
            ArrayData::UInt8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::Float64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::Int64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::Int32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::UInt8(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataArray {
    pub name: String,
    pub components: usize,
    pub data: ArrayData,
}

/// One rank's piece of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VtuPiece {
    pub points: Vec<[f64; 3]>,
    pub connectivity: Vec<i64>,
    pub offsets: Vec<i64>,
    pub types: Vec<u8>,
    pub point_data: Vec<DataArray>,
    pub cell_data: Vec<DataArray>,
}

impl VtuPiece {
    pub fn cell_count(&self) -> usize {
        self.types.len()
    }
}

/// Corner positions of an element in VTK's quad / hexahedron order, as
/// element-local node indices (axis 0 fastest).
fn vtk_corners(dim: usize, p: usize) -> Vec<usize> {
    let n = p + 1;
    let idx = |i: usize, j: usize, k: usize| i * p + j * p * n + k * p * n * n;
    let ring = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let mut out: Vec<usize> = ring.iter().map(|&(i, j)| idx(i, j, 0)).collect();
    if dim == 3 {
        out.extend(ring.iter().map(|&(i, j)| idx(i, j, 1)));
    }
    out
}

/// Build this rank's piece. Fields hold owned-node values; their ghost
/// copies are read first.
pub fn mesh_piece(ctx: &RankContext, mesh: &RankMesh, fields: &[(&str, &[f64])]) -> Result<VtuPiece> {
    let mut locals = Vec::with_capacity(fields.len());
    for (name, f) in fields {
        if f.len() != mesh.owned_len() {
            return Err(Error::Contract(format!(
                "field '{name}' has {} values, rank owns {} nodes",
                f.len(),
                mesh.owned_len()
            )));
        }
        locals.push(mesh.owned_to_local(ctx, f)?);
    }
    let (dim, p) = (mesh.dim, mesh.p);
    let corners = vtk_corners(dim, p);
    let nf = fields.len();
    // payload per node: its local index, so one traversal serves every field
    let ids: Vec<u32> = (0..mesh.local_len() as u32).collect();
    let mut points = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); nf];
    let mut levels = Vec::new();
    traverse(mesh, &ids, 0u8, |leaf, st, _| {
        let b = mesh.map.octant_box(leaf);
        for (c, &a) in corners.iter().enumerate() {
            let mut x = b.lo;
            // VTK ring order: (0,0) (1,0) (1,1) (0,1)
            let ring = c & 3;
            x[0] = if ring == 1 || ring == 2 { b.hi[0] } else { b.lo[0] };
            x[1] = if ring >= 2 { b.hi[1] } else { b.lo[1] };
            if dim == 3 {
                x[2] = if c >= 4 { b.hi[2] } else { b.lo[2] };
            }
            points.push(x);
            for (fi, local) in locals.iter().enumerate() {
                values[fi].push(st.position(a).iter().map(|&(_, k, w)| w * local[k as usize]).sum());
            }
        }
        levels.push(leaf.level() as i32);
        Ok(())
    })?;
    let npc = corners.len();
    let ncells = levels.len();
    let mut point_data = Vec::new();
    for ((name, _), v) in fields.iter().zip(values) {
        point_data.push(DataArray {
            name: name.to_string(),
            components: 1,
            data: ArrayData::Float64(v),
        });
    }
    Ok(VtuPiece {
        points,
        connectivity: (0..(ncells * npc) as i64).collect(),
        offsets: (1..=ncells).map(|c| (c * npc) as i64).collect(),
        types: vec![if dim == 3 { VTK_HEXAHEDRON } else { VTK_QUAD }; ncells],
        point_data,
        cell_data: vec![
            DataArray {
                name: "rank".into(),
                components: 1,
                data: ArrayData::Int32(vec![mesh.rank as i32; ncells]),
            },
            DataArray {
                name: "level".into(),
                components: 1,
                data: ArrayData::Int32(levels),
            },
        ],
    })
}

struct Appended {
    encoded: String,
}

impl Appended {
    /// Append one array; returns its offset into the encoded stream.
    fn push(&mut self, data: &ArrayData) -> usize {
        let offset = self.encoded.len();
        let bytes = data.bytes();
        let mut block = (bytes.len() as u32).to_le_bytes().to_vec();
        block.extend_from_slice(&bytes);
        self.encoded.push_str(&BASE64.encode(block));
        offset
    }
}

fn array_tag(xml: &mut String, a: &DataArray, offset: usize) {
    writeln!(
        xml,
        "        <DataArray type=\"{}\" Name=\"{}\" NumberOfComponents=\"{}\" format=\"appended\" offset=\"{offset}\"/>",
        a.data.type_name(),
        xml_escape(&a.name),
        a.components
    )
    .unwrap();
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Serialise a piece as a `.vtu` document.
pub fn vtu_document(piece: &VtuPiece) -> Result<String> {
    let np = piece.points.len();
    let nc = piece.cell_count();
    for a in &piece.point_data {
        if a.data.len() != np * a.components {
            return Err(Error::Contract(format!("point array '{}' has the wrong length", a.name)));
        }
    }
    for a in &piece.cell_data {
        if a.data.len() != nc * a.components {
            return Err(Error::Contract(format!("cell array '{}' has the wrong length", a.name)));
        }
    }
    let mut app = Appended { encoded: String::new() };
    let mut xml = String::new();
    xml.push_str("<?xml version=\"1.0\"?>\n");
    xml.push_str(
        "<VTKFile type=\"UnstructuredGrid\" version=\"1.0\" byte_order=\"LittleEndian\" header_type=\"UInt32\">\n",
    );
    xml.push_str("  <UnstructuredGrid>\n");
    writeln!(xml, "    <Piece NumberOfPoints=\"{np}\" NumberOfCells=\"{nc}\">").unwrap();
    xml.push_str("      <PointData>\n");
    for a in &piece.point_data {
        let off = app.push(&a.data);
        array_tag(&mut xml, a, off);
    }
    xml.push_str("      </PointData>\n      <CellData>\n");
    for a in &piece.cell_data {
        let off = app.push(&a.data);
        array_tag(&mut xml, a, off);
    }
    xml.push_str("      </CellData>\n      <Points>\n");
    let pts = DataArray {
        name: "Points".into(),
        components: 3,
        data: ArrayData::Float64(piece.points.iter().flatten().copied().collect()),
    };
    let off = app.push(&pts.data);
    array_tag(&mut xml, &pts, off);
    xml.push_str("      </Points>\n      <Cells>\n");
    for a in [
        DataArray {
            name: "connectivity".into(),
            components: 1,
            data: ArrayData::Int64(piece.connectivity.clone()),
        },
        DataArray {
            name: "offsets".into(),
            components: 1,
            data: ArrayData::Int64(piece.offsets.clone()),
        },
        DataArray {
            name: "types".into(),
            components: 1,
            data: ArrayData::UInt8(piece.types.clone()),
        },
    ] {
        let off = app.push(&a.data);
        array_tag(&mut xml, &a, off);
    }
    xml.push_str("      </Cells>\n    </Piece>\n  </UnstructuredGrid>\n");
    xml.push_str("  <AppendedData encoding=\"base64\">\n   _");
    xml.push_str(&app.encoded);
    xml.push_str("\n  </AppendedData>\n</VTKFile>\n");
    Ok(xml)
}

pub fn write_vtu(piece: &VtuPiece, path: &Path) -> Result<()> {
    std::fs::write(path, vtu_document(piece)?)?;
    Ok(())
}

/// The `.pvtu` index over `sources` (paths relative to the index file).
pub fn pvtu_document(sources: &[String], piece: &VtuPiece) -> String {
    let mut xml = String::new();
    xml.push_str("<?xml version=\"1.0\"?>\n");
    xml.push_str(
        "<VTKFile type=\"PUnstructuredGrid\" version=\"1.0\" byte_order=\"LittleEndian\" header_type=\"UInt32\">\n",
    );
    xml.push_str("  <PUnstructuredGrid GhostLevel=\"0\">\n    <PPointData>\n");
    for a in &piece.point_data {
        writeln!(
            xml,
            "      <PDataArray type=\"{}\" Name=\"{}\" NumberOfComponents=\"{}\"/>",
            a.data.type_name(),
            xml_escape(&a.name),
            a.components
        )
        .unwrap();
    }
    xml.push_str("    </PPointData>\n    <PCellData>\n");
    for a in &piece.cell_data {
        writeln!(
            xml,
            "      <PDataArray type=\"{}\" Name=\"{}\" NumberOfComponents=\"{}\"/>",
            a.data.type_name(),
            xml_escape(&a.name),
            a.components
        )
        .unwrap();
    }
    xml.push_str("    </PCellData>\n    <PPoints>\n");
    xml.push_str("      <PDataArray type=\"Float64\" NumberOfComponents=\"3\"/>\n    </PPoints>\n");
    for s in sources {
        writeln!(xml, "    <Piece Source=\"{}\"/>", xml_escape(s)).unwrap();
    }
    xml.push_str("  </PUnstructuredGrid>\n</VTKFile>\n");
    xml
}

/// Every rank writes `<base>_<rank>.vtu` into `dir`; rank 0 then writes
/// `<base>.pvtu`. Returns the paths written by this rank.
pub fn write_parallel(
    ctx: &RankContext,
    mesh: &RankMesh,
    fields: &[(&str, &[f64])],
    dir: &Path,
    base: &str,
) -> Result<Vec<PathBuf>> {
    let piece = mesh_piece(ctx, mesh, fields)?;
    let name = format!("{base}_{}.vtu", ctx.rank());
    let path = dir.join(&name);
    let written = write_vtu(&piece, &path);
    // every rank reaches the barrier so one failure cannot hang the others
    let ok = ctx.all_gather(written.is_ok())?;
    written?;
    if ok.iter().any(|v| !v) {
        return Err(Error::Rank {
            rank: ok.iter().position(|v| !v).unwrap_or(0),
            message: "writing a vtu piece failed".into(),
        });
    }
    let mut out = vec![path];
    if ctx.is_root() {
        let sources: Vec<String> = (0..ctx.size()).map(|r| format!("{base}_{r}.vtu")).collect();
        let index = dir.join(format!("{base}.pvtu"));
        std::fs::write(&index, pvtu_document(&sources, &piece))?;
        out.push(index);
    }
    ctx.barrier()?;
    Ok(out)
}
