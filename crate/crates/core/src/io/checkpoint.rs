//! Binary checkpoints: each rank writes `<base>_<rank>.ckpt` holding its
//! leaves and its owned solution values. Nodes are re-enumerated on load.
//!
//! Layout, little-endian:
//!
//! | field        | type        |
//! |--------------|-------------|
//! | magic        | `CRVOCT01`  |
//! | version      | u32         |
//! | dim          | u8          |
//! | max level    | u8          |
//! | order p      | u8          |
//! | curve        | u8          |
//! | nranks       | u32         |
//! | rank         | u32         |
//! | octants      | u64         |
//! | nodes        | u64         |
//! | solve step   | u64         |
//! | octants      | `(u32 x3, u8)` each |
//! | solution     | `(u64 id, f64)` each |
//! | checksum     | SHA-256 of everything above |

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nodes::RankMesh;
use crate::partition::{assume_partitioned, redistribute_leafs, DistTree, RankContext};
use crate::sfc::{Curve, OctantKey, MAX_LEVEL};

pub const MAGIC: &[u8; 8] = b"CRVOCT01";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 4 + 8 + 8 + 8;
const KEY_LEN: usize = 13;
const VALUE_LEN: usize = 16;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dim: usize,
    pub max_level: u8,
    pub p: usize,
    pub curve: Curve,
    pub nranks: usize,
    pub rank: usize,
    pub octants: u64,
    pub nodes: u64,
    pub step: u64,
}

/// The contents of one rank's file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointPiece {
    pub header: CheckpointHeader,
    pub leafs: Vec<OctantKey>,
    /// `(global node id, value)` for the nodes the rank owned.
    pub values: Vec<(u64, f64)>,
}

pub fn checkpoint_path(dir: &Path, base: &str, rank: usize) -> PathBuf {
    dir.join(format!("{base}_{rank}.ckpt"))
}

pub fn encode_piece(piece: &CheckpointPiece) -> Vec<u8> {
    let h = &piece.header;
    let mut out = Vec::with_capacity(HEADER_LEN + piece.leafs.len() * KEY_LEN + piece.values.len() * VALUE_LEN + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.push(h.dim as u8);
    out.push(h.max_level);
    out.push(h.p as u8);
    out.push(match h.curve {
        Curve::Morton => 0,
        Curve::Hilbert => 1,
    });
    out.extend_from_slice(&(h.nranks as u32).to_le_bytes());
    out.extend_from_slice(&(h.rank as u32).to_le_bytes());
    out.extend_from_slice(&(piece.leafs.len() as u64).to_le_bytes());
    out.extend_from_slice(&(piece.values.len() as u64).to_le_bytes());
    out.extend_from_slice(&h.step.to_le_bytes());
    for k in &piece.leafs {
        for a in k.anchor() {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.push(k.level());
    }
    for (id, v) in &piece.values {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

pub fn decode_piece(bytes: &[u8]) -> Result<CheckpointPiece> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != sum {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32();
    if version != VERSION {
        return Err(Error::Checkpoint(format!("version mismatch: file has {version}, expected {VERSION}")));
    }
    let dim = r.u8() as usize;
    let max_level = r.u8();
    let p = r.u8() as usize;
    let curve = match r.u8() {
        0 => Curve::Morton,
        1 => Curve::Hilbert,
        c => return Err(Error::Checkpoint(format!("unknown curve code {c}"))),
    };
    if max_level != MAX_LEVEL {
        return Err(Error::Checkpoint(format!(
            "file uses maximum level {max_level}, this build uses {MAX_LEVEL}"
        )));
    }
    let nranks = r.u32() as usize;
    let rank = r.u32() as usize;
    let octants = r.u64();
    let nodes = r.u64();
    let step = r.u64();
    let expected = HEADER_LEN as u64 + octants * KEY_LEN as u64 + nodes * VALUE_LEN as u64;
    if body.len() as u64 != expected {
        return Err(bad("counts do not match the file length"));
    }
    let mut leafs = Vec::with_capacity(octants as usize);
    for _ in 0..octants {
        let anchor = [r.u32(), r.u32(), r.u32()];
        let level = r.u8();
        leafs.push(OctantKey::new(dim, anchor, level).map_err(|e| Error::Checkpoint(format!("bad octant: {e}")))?);
    }
    let values = (0..nodes).map(|_| (r.u64(), f64::from_bits(r.u64()))).collect();
    Ok(CheckpointPiece {
        header: CheckpointHeader {
            version,
            dim,
            max_level,
            p,
            curve,
            nranks,
            rank,
            octants,
            nodes,
            step,
        },
        leafs,
        values,
    })
}

/// Write this rank's file. `u` holds owned values in id order.
pub fn write_checkpoint(ctx: &RankContext, mesh: &RankMesh, u: &[f64], step: u64, dir: &Path, base: &str) -> Result<PathBuf> {
    if u.len() != mesh.owned_len() {
        return Err(Error::Contract("solution length differs from the owned node count".into()));
    }
    let values: Vec<(u64, f64)> = mesh.owned.iter().zip(u).map(|(&k, &v)| (mesh.nodes[k as usize].id, v)).collect();
    let piece = CheckpointPiece {
        header: CheckpointHeader {
            version: VERSION,
            dim: mesh.dim,
            max_level: MAX_LEVEL,
            p: mesh.p,
            curve: mesh.curve,
            nranks: ctx.size(),
            rank: ctx.rank(),
            octants: mesh.leafs.len() as u64,
            nodes: values.len() as u64,
            step,
        },
        leafs: mesh.leafs.leafs().to_vec(),
        values,
    };
    let path = checkpoint_path(dir, base, ctx.rank());
    // write then rename so a crash never leaves a torn file behind
    let tmp = path.with_extension("ckpt.tmp");
    let written = std::fs::write(&tmp, encode_piece(&piece)).and_then(|_| std::fs::rename(&tmp, &path));
    let ok = ctx.all_gather(written.is_ok())?;
    written?;
    if let Some(r) = ok.iter().position(|v| !v) {
        return Err(Error::Rank {
            rank: r,
            message: "writing a checkpoint failed".into(),
        });
    }
    Ok(path)
}

/// A checkpoint loaded onto the current ranks.
#[derive(Clone, Debug)]
pub struct Restored {
    pub tree: DistTree,
    pub p: usize,
    pub step: u64,
    pub saved_ranks: usize,
    /// Every saved value, indexed by global node id.
    pub by_id: Vec<f64>,
}

impl Restored {
    /// Owned values for a mesh enumerated on the restored tree.
    pub fn owned_values(&self, mesh: &RankMesh) -> Result<Vec<f64>> {
        if mesh.global_nodes as usize != self.by_id.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} node values, the re-enumerated mesh has {}",
                self.by_id.len(),
                mesh.global_nodes
            )));
        }
        Ok(mesh.owned.iter().map(|&k| self.by_id[mesh.nodes[k as usize].id as usize]).collect())
    }
}

/// Load the files written by `write_checkpoint` onto `ctx.size()` ranks,
/// which must be at least the number that wrote them. With the same count
/// each rank keeps its old leaves; with more, the leaves are repartitioned.
pub fn load_checkpoint(ctx: &RankContext, dir: &Path, base: &str, tol: f64) -> Result<Restored> {
    let read = |rank: usize| -> Result<CheckpointPiece> {
        let path = checkpoint_path(dir, base, rank);
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        decode_piece(&bytes)
    };
    // every rank checks the first file so all agree on the outcome
    let first = read(0)?;
    let saved = first.header.nranks;
    if ctx.size() < saved {
        return Err(Error::Unsupported(format!(
            "decreased ranks unsupported: checkpoint was written by {saved} ranks, loading on {}",
            ctx.size()
        )));
    }
    let mine = if ctx.rank() < saved {
        let piece = if ctx.rank() == 0 { first.clone() } else { read(ctx.rank())? };
        let h = &piece.header;
        let f = &first.header;
        if h.rank != ctx.rank() || h.nranks != saved || h.dim != f.dim || h.p != f.p || h.curve != f.curve || h.step != f.step {
            return Err(Error::Checkpoint(format!("file of rank {} does not match the file of rank 0", ctx.rank())));
        }
        Some(piece)
    } else {
        None
    };
    let (leafs, values) = mine.map_or((Vec::new(), Vec::new()), |p| (p.leafs, p.values));
    let h = first.header;
    let tree = if ctx.size() == saved {
        assume_partitioned(ctx, h.dim, h.curve, leafs, tol)?
    } else {
        redistribute_leafs(ctx, h.dim, h.curve, leafs, tol)?
    };
    let all: Vec<(u64, f64)> = ctx.all_gather(values)?.into_iter().flatten().collect();
    let n = all.len();
    let mut by_id = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for (id, v) in all {
        let i = id as usize;
        if i >= n || seen[i] {
            return Err(Error::Checkpoint(format!("node id {id} is out of range or repeated")));
        }
        seen[i] = true;
        by_id[i] = v;
    }
    Ok(Restored {
        tree,
        p: h.p,
        step: h.step,
        saved_ranks: saved,
        by_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SubdomainClassifier;
    use crate::partition::{distributed_construct_uniform, Runtime};

    fn sample() -> CheckpointPiece {
        CheckpointPiece {
            header: CheckpointHeader {
                version: VERSION,
                dim: 2,
                max_level: MAX_LEVEL,
                p: 1,
                curve: Curve::Hilbert,
                nranks: 1,
                rank: 0,
                octants: 4,
                nodes: 2,
                step: 9,
            },
            leafs: OctantKey::root(2).children().collect(),
            values: vec![(0, 1.5), (1, -0.25)],
        }
    }

    #[test]
    fn round_trip_and_corruption() {
        let p = sample();
        let bytes = encode_piece(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode_piece(&bytes).unwrap(), p);
        assert_eq!(encode_piece(&decode_piece(&bytes).unwrap()), bytes);
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 3] ^= 1;
        assert!(matches!(decode_piece(&flipped), Err(Error::Checkpoint(m)) if m.contains("checksum")));
        let mut wrong_version = p.clone();
        wrong_version.header.version = 7;
        assert!(matches!(decode_piece(&encode_piece(&wrong_version)), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(decode_piece(b"CRVOCT0").is_err());
        assert!(decode_piece(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn decreased_rank_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_path_buf();
        let c = SubdomainClassifier::retain_all(2);
        Runtime::run(2, |ctx| {
            let tree = distributed_construct_uniform(ctx, &c, Curve::Morton, 2, 0.1)?;
            let mesh = RankMesh::build(ctx, tree, 1, &c)?;
            let u = mesh.owned_from_fn(|r, _| r.id as f64);
            write_checkpoint(ctx, &mesh, &u, 3, &d, "ck")
        })
        .unwrap();
        let err = load_checkpoint(&RankContext::single(), dir.path(), "ck", 0.1).unwrap_err();
        assert!(err.to_string().contains("decreased ranks unsupported"), "{err}");
        for n in [2, 3] {
            let out = Runtime::run(n, |ctx| {
                let r = load_checkpoint(ctx, &d, "ck", 0.1)?;
                let mesh = RankMesh::build(ctx, r.tree.clone(), r.p, &c)?;
                let u = r.owned_values(&mesh)?;
                assert_eq!(r.step, 3);
                Ok(mesh.owned.iter().zip(&u).all(|(&k, &v)| mesh.nodes[k as usize].id as f64 == v))
            })
            .unwrap();
            assert!(out.iter().all(|&b| b));
        }
    }
}
