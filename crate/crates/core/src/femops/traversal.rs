//! Top-down traversal over the local leaves of a rank.
//!
//! Node payloads travel from the root towards the leaves in buckets: each
//! cell keeps the nodes inside its closed box, sorted by coordinate. A leaf
//! is handled in its parent's frame, where every position is either a node
//! in the bucket or hangs and is interpolated from the parent's grid.
//! Per-slot outputs flow back up through the same bucket maps.

use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::nodes::{element_node, hanging_dependencies, NodeCoord, RankMesh};
use crate::sfc::{OctantKey, SfcOracle};

use super::basis::{nodes_per_element, split_index};

/// For each element position, the bucket slots it draws from and their
/// weights (a single weight-one entry for real nodes).
#[derive(Clone, Debug, Default)]
pub struct LeafStencil<P> {
    pub entries: Vec<(u32, P, f64)>,
    pub offsets: Vec<usize>,
}

impl<P> LeafStencil<P> {
    #[inline]
    pub fn position(&self, a: usize) -> &[(u32, P, f64)] {
        &self.entries[self.offsets[a]..self.offsets[a + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Engine<'m, V> {
    mesh: &'m RankMesh,
    visit: V,
    npe: usize,
}

fn find(bucket: &[NodeCoord], c: &NodeCoord) -> Option<u32> {
    bucket.binary_search(c).ok().map(|i| i as u32)
}

fn inside_closed(cell: &OctantKey, p: usize, c: &NodeCoord) -> bool {
    let a = cell.anchor();
    let s = cell.side() as u64;
    (0..cell.dim()).all(|ax| {
        let lo = p as u64 * a[ax] as u64;
        let x = c[ax] as u64;
        lo <= x && x <= lo + p as u64 * s
    })
}

/// Visit every local leaf. `visit(leaf, stencil, out)` may add to `out`,
/// which is indexed like the stencil slots; the per-node sums come back
/// indexed by local node.
pub fn traverse<P, A, V>(mesh: &RankMesh, payload: &[P], zero: A, visit: V) -> Result<Vec<A>>
where
    P: Copy,
    A: Copy + AddAssign,
    V: FnMut(&OctantKey, &LeafStencil<P>, &mut [A]) -> Result<()>,
{
    if payload.len() != mesh.local_len() {
        return Err(Error::Contract(format!(
            "payload has {} entries, mesh has {} local nodes",
            payload.len(),
            mesh.local_len()
        )));
    }
    let mut order: Vec<u32> = (0..mesh.local_len() as u32).collect();
    order.sort_unstable_by_key(|&k| mesh.nodes[k as usize].coord);
    let coords: Vec<NodeCoord> = order.iter().map(|&k| mesh.nodes[k as usize].coord).collect();
    let values: Vec<P> = order.iter().map(|&k| payload[k as usize]).collect();
    let mut out = vec![zero; coords.len()];
    let leafs = mesh.leafs.leafs();
    let mut engine = Engine {
        mesh,
        visit,
        npe: nodes_per_element(mesh.dim, mesh.p),
    };
    if !leafs.is_empty() {
        let root = OctantKey::root(mesh.dim);
        if leafs.len() == 1 && leafs[0] == root {
            engine.leaf(&root, None, &coords, &values, &mut out)?;
        } else {
            let oracle = SfcOracle::root(mesh.curve, mesh.dim);
            engine.cell(root, oracle, leafs, &coords, &values, &mut out, zero)?;
        }
    }
    let mut by_local = vec![zero; mesh.local_len()];
    for (slot, &k) in order.iter().enumerate() {
        by_local[k as usize] = out[slot];
    }
    Ok(by_local)
}

impl<V> Engine<'_, V> {
    #[allow(clippy::too_many_arguments)]
    fn cell<P, A>(
        &mut self,
        cell: OctantKey,
        oracle: SfcOracle,
        leafs: &[OctantKey],
        coords: &[NodeCoord],
        values: &[P],
        out: &mut [A],
        zero: A,
    ) -> Result<()>
    where
        P: Copy,
        A: Copy + AddAssign,
        V: FnMut(&OctantKey, &LeafStencil<P>, &mut [A]) -> Result<()>,
    {
        let p = self.mesh.p;
        let mut start = 0;
        for c in 0..(1u8 << cell.dim()) {
            if start == leafs.len() {
                break;
            }
            let child = cell.child_unchecked(oracle.sfc_to_morton(c));
            let n = leafs[start..].partition_point(|l| child.contains(l));
            if n == 0 {
                continue;
            }
            let sub = &leafs[start..start + n];
            start += n;
            if n == 1 && sub[0] == child {
                self.leaf(&child, Some(&cell), coords, values, out)?;
                continue;
            }
            let mut map = Vec::new();
            let mut child_coords = Vec::new();
            let mut child_values = Vec::new();
            for (slot, c) in coords.iter().enumerate() {
                if inside_closed(&child, p, c) {
                    map.push(slot);
                    child_coords.push(*c);
                    child_values.push(values[slot]);
                }
            }
            let mut child_out = vec![zero; map.len()];
            self.cell(child, oracle.child(c), sub, &child_coords, &child_values, &mut child_out, zero)?;
            for (k, slot) in map.into_iter().enumerate() {
                out[slot] += child_out[k];
            }
        }
        if start != leafs.len() {
            return Err(Error::Contract(format!(
                "local leaves are not sorted along the {} curve",
                self.mesh.curve.name()
            )));
        }
        Ok(())
    }

    /// `coords` is the bucket of `parent` (or of the leaf itself at the root).
    fn leaf<P, A>(
        &mut self,
        leaf: &OctantKey,
        parent: Option<&OctantKey>,
        coords: &[NodeCoord],
        values: &[P],
        out: &mut [A],
    ) -> Result<()>
    where
        P: Copy,
        A: Copy + AddAssign,
        V: FnMut(&OctantKey, &LeafStencil<P>, &mut [A]) -> Result<()>,
    {
        let p = self.mesh.p;
        let mut st = LeafStencil {
            entries: Vec::with_capacity(self.npe),
            offsets: Vec::with_capacity(self.npe + 1),
        };
        st.offsets.push(0);
        for a in 0..self.npe {
            let idx = split_index(self.mesh.dim, p, a);
            let c = element_node(leaf, p, idx);
            if let Some(slot) = find(coords, &c) {
                st.entries.push((slot, values[slot as usize], 1.0));
            } else {
                if parent.is_none() {
                    return Err(Error::Contract(format!("position {c:?} of the root element is not a node")));
                }
                for (dep, w) in hanging_dependencies(leaf, p, idx) {
                    let slot = find(coords, &dep).ok_or_else(|| {
                        Error::Contract(format!(
                            "hanging position {c:?} of {leaf:?} needs {dep:?}, which is not a node"
                        ))
                    })?;
                    st.entries.push((slot, values[slot as usize], w));
                }
            }
            st.offsets.push(st.entries.len());
        }
        (self.visit)(leaf, &st, out)
    }
}
