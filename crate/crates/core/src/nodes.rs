//! FEM nodes of order-`p` elements on an incomplete octree.
//!
//! Every leaf proposes its tensor-grid points as candidates and marks the
//! points a one-level-finer neighbour would add on its boundary as
//! cancellations. After a distributed sort of the coordinates, a point is a
//! node iff it has a candidate and no cancellation. Coordinates live on a
//! lattice of pitch `side / (p * 2^MAX_LEVEL)`, so all comparisons are exact.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::femops::basis::child_weights;
use crate::geometry::{Classification, DomainMap, SubdomainClassifier};
use crate::partition::{dist_treesort_by, DistTree, GhostPattern, RankContext, RankLayout};
use crate::sfc::{find_containing, Curve, LinearOctree, OctantKey, SfcPos, SfcSpace, MAX_LEVEL};

pub type NodeCoord = [u32; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NodeFlags {
    /// On a face of the root cube.
    pub domain_boundary: bool,
    /// In the closed carved set.
    pub subdomain_boundary: bool,
}

impl NodeFlags {
    pub fn is_interior(&self) -> bool {
        !self.domain_boundary && !self.subdomain_boundary
    }

    fn to_bits(self) -> u8 {
        self.domain_boundary as u8 | (self.subdomain_boundary as u8) << 1
    }

    fn from_bits(b: u8) -> Self {
        NodeFlags {
            domain_boundary: b & 1 != 0,
            subdomain_boundary: b & 2 != 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRecord {
    pub coord: NodeCoord,
    pub id: u64,
    pub flags: NodeFlags,
    pub owner: u32,
}

/// A complete node enumeration gathered on one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    pub dim: usize,
    pub p: usize,
    /// Ordered by id, which is SFC order of the coordinates.
    pub records: Vec<NodeRecord>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn coords(&self) -> impl Iterator<Item = NodeCoord> + '_ {
        self.records.iter().map(|r| r.coord)
    }
}

pub fn check_order(p: usize) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("element order {p} is not supported (use 1 or 2)")))
    }
}

/// Node-lattice coordinate of tensor position `idx` of `leaf`.
#[inline]
pub fn element_node(leaf: &OctantKey, p: usize, idx: [usize; 3]) -> NodeCoord {
    let a = leaf.anchor();
    let s = leaf.side();
    let mut c = [0u32; 3];
    for ax in 0..leaf.dim() {
        c[ax] = p as u32 * a[ax] + idx[ax] as u32 * s;
    }
    c
}

fn tensor_points(dim: usize, n: usize) -> impl Iterator<Item = [usize; 3]> {
    let total = n.pow(dim as u32);
    (0..total).map(move |mut k| {
        let mut idx = [0usize; 3];
        for v in idx.iter_mut().take(dim) {
            *v = k % n;
            k /= n;
        }
        idx
    })
}

/// All `(p+1)^dim` tensor points of every leaf, duplicates included.
pub fn generate_candidate_nodes(leafs: &[OctantKey], p: usize) -> Result<Vec<NodeCoord>> {
    check_order(p)?;
    let mut out = Vec::new();
    for leaf in leafs {
        out.extend(tensor_points(leaf.dim(), p + 1).map(|i| element_node(leaf, p, i)));
    }
    Ok(out)
}

fn leaf_cancellations(leaf: &OctantKey, p: usize, out: &mut Vec<NodeCoord>) {
    if leaf.level() >= MAX_LEVEL {
        return;
    }
    let dim = leaf.dim();
    let n = 2 * p;
    let a = leaf.anchor();
    let half = leaf.side() / 2;
    for idx in tensor_points(dim, n + 1) {
        let on_boundary = (0..dim).any(|ax| idx[ax] == 0 || idx[ax] == n);
        let off_grid = (0..dim).any(|ax| idx[ax] % 2 == 1);
        if on_boundary && off_grid {
            let mut c = [0u32; 3];
            for ax in 0..dim {
                c[ax] = p as u32 * a[ax] + idx[ax] as u32 * half;
            }
            out.push(c);
        }
    }
}

/// Points a one-level-finer neighbour would add on each leaf's boundary and
/// that are not on the leaf's own grid. Duplicates included.
pub fn generate_cancellation_nodes(leafs: &[OctantKey], p: usize) -> Result<Vec<NodeCoord>> {
    check_order(p)?;
    let mut out = Vec::new();
    for leaf in leafs {
        leaf_cancellations(leaf, p, &mut out);
    }
    Ok(out)
}

/// Parent-grid points a hanging position of `leaf` at `idx` depends on,
/// with their interpolation weights.
pub fn hanging_dependencies(leaf: &OctantKey, p: usize, idx: [usize; 3]) -> Vec<(NodeCoord, f64)> {
    let dim = leaf.dim();
    let parent = leaf.ancestor_at(leaf.level() - 1);
    let shift = MAX_LEVEL - leaf.level();
    let mut axis_w = [[0.0; 3]; 3];
    for ax in 0..dim {
        let bit = (leaf.anchor()[ax] >> shift) & 1;
        axis_w[ax] = child_weights(p, bit, idx[ax]);
    }
    let mut out = Vec::new();
    for pidx in tensor_points(dim, p + 1) {
        let w: f64 = (0..dim).map(|ax| axis_w[ax][pidx[ax]]).product();
        if w != 0.0 {
            out.push((element_node(&parent, p, pidx), w));
        }
    }
    out
}

const KIND_CANDIDATE: u8 = 0;
const KIND_CANCEL: u8 = 1;
const KIND_REFERENCE: u8 = 2;
const NO_ID: u64 = u64::MAX;

#[derive(Clone, Copy, Debug)]
struct Rec {
    coord: NodeCoord,
    kind: u8,
    rank: u32,
}

#[derive(Clone, Copy, Debug)]
struct Info {
    coord: NodeCoord,
    id: u64,
    flags: u8,
    owner: u32,
}

fn node_pos(c: &NodeCoord) -> SfcPos {
    SfcPos {
        coords: *c,
        level: 32,
    }
}

/// One rank's view of the mesh: its leaves, the nodes they touch (owned
/// and ghost) and the exchange pattern between them.
#[derive(Clone, Debug)]
pub struct RankMesh {
    pub dim: usize,
    pub p: usize,
    pub curve: Curve,
    pub map: DomainMap,
    pub rank: usize,
    pub nranks: usize,
    pub leafs: LinearOctree,
    pub layout: RankLayout,
    pub leaf_counts: Vec<u64>,
    /// Nodes touched by local leaves, including interpolation sources of
    /// hanging positions, ordered by id.
    pub nodes: Vec<NodeRecord>,
    /// Local indices of owned nodes, ordered by id.
    pub owned: Vec<u32>,
    /// `owned_slot[local]` is the position in `owned`, or `u32::MAX`.
    pub owned_slot: Vec<u32>,
    pub ghost: GhostPattern,
    pub global_nodes: u64,
    index: HashMap<NodeCoord, u32>,
}

impl RankMesh {
    /// Enumerate nodes for a distributed tree. The tree must be 2:1 balanced
    /// in the sense that no leaf strictly contains a same-level neighbour of
    /// another leaf's parent; the output of the balancing constructions is.
    pub fn build(
        ctx: &RankContext,
        tree: DistTree,
        p: usize,
        classifier: &SubdomainClassifier,
    ) -> Result<RankMesh> {
        check_order(p)?;
        let dim = tree.local.dim();
        let curve = tree.local.curve();
        if dim != classifier.dim() {
            return Err(Error::Contract(format!(
                "tree has dimension {dim}, classifier {}",
                classifier.dim()
            )));
        }
        check_strong_balance(ctx, &tree)?;
        let me = ctx.rank() as u32;
        let leafs = tree.local.leafs();

        // Candidate, cancellation and reference records, deduplicated locally.
        let mut seen: HashSet<(NodeCoord, u8)> = HashSet::new();
        let mut recs = Vec::new();
        let mut push = |coord: NodeCoord, kind: u8, recs: &mut Vec<Rec>| {
            if seen.insert((coord, kind)) {
                recs.push(Rec { coord, kind, rank: me });
            }
        };
        let mut scratch = Vec::new();
        for leaf in leafs {
            for idx in tensor_points(dim, p + 1) {
                push(element_node(leaf, p, idx), KIND_CANDIDATE, &mut recs);
            }
            scratch.clear();
            leaf_cancellations(leaf, p, &mut scratch);
            for &c in &scratch {
                push(c, KIND_CANCEL, &mut recs);
            }
            if leaf.level() > 0 {
                let parent = leaf.ancestor_at(leaf.level() - 1);
                for idx in tensor_points(dim, p + 1) {
                    push(element_node(&parent, p, idx), KIND_REFERENCE, &mut recs);
                }
            }
        }

        let space = SfcSpace::nodes(dim, curve);
        let (sorted, _, _) = dist_treesort_by(ctx, recs, space, |r: &Rec| node_pos(&r.coord), tree.layout.load_tolerance)?;

        // Resolve each coordinate on the rank that received it.
        struct Group {
            coord: NodeCoord,
            kept: bool,
            owner: u32,
            holders: Vec<u32>,
        }
        let mut groups = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let coord = sorted[i].coord;
            let mut j = i;
            let mut cand = false;
            let mut cancel = false;
            let mut owner = u32::MAX;
            let mut holders = Vec::new();
            while j < sorted.len() && sorted[j].coord == coord {
                let r = sorted[j];
                match r.kind {
                    KIND_CANDIDATE => {
                        cand = true;
                        owner = owner.min(r.rank);
                        holders.push(r.rank);
                    }
                    KIND_CANCEL => cancel = true,
                    _ => holders.push(r.rank),
                }
                j += 1;
            }
            holders.sort_unstable();
            holders.dedup();
            groups.push(Group {
                coord,
                kept: cand && !cancel,
                owner,
                holders,
            });
            i = j;
        }
        let kept_here = groups.iter().filter(|g| g.kept).count() as u64;
        let mut next_id = ctx.exclusive_scan_u64(kept_here)?;
        let global_nodes = ctx.sum_u64(kept_here)?;

        let n = ctx.size();
        let mut infos: Vec<Vec<Info>> = vec![Vec::new(); n];
        let mut sharers: Vec<Vec<(u64, u32)>> = vec![Vec::new(); n];
        for g in &groups {
            let (id, flags) = if g.kept {
                let id = next_id;
                next_id += 1;
                let x = classifier.map().node_point(dim, p, g.coord);
                let mut f = NodeFlags {
                    domain_boundary: (0..dim).any(|ax| g.coord[ax] == 0 || g.coord[ax] == (p as u32) << MAX_LEVEL),
                    subdomain_boundary: false,
                };
                f.subdomain_boundary = classifier.classify_point(x)? == Classification::Carved;
                for &h in &g.holders {
                    if h != g.owner {
                        sharers[g.owner as usize].push((id, h));
                    }
                }
                (id, f.to_bits())
            } else {
                (NO_ID, 0)
            };
            for &h in &g.holders {
                infos[h as usize].push(Info {
                    coord: g.coord,
                    id,
                    flags,
                    owner: g.owner,
                });
            }
        }
        let infos = ctx.all_to_all(infos)?;
        let sharers = ctx.all_to_all(sharers)?;

        let mut nodes: Vec<NodeRecord> = infos
            .into_iter()
            .flatten()
            .filter(|i| i.id != NO_ID)
            .map(|i| NodeRecord {
                coord: i.coord,
                id: i.id,
                flags: NodeFlags::from_bits(i.flags),
                owner: i.owner,
            })
            .collect();
        nodes.sort_unstable_by_key(|r| r.id);
        let index: HashMap<NodeCoord, u32> = nodes.iter().enumerate().map(|(k, r)| (r.coord, k as u32)).collect();
        let mut owned = Vec::new();
        let mut owned_slot = vec![u32::MAX; nodes.len()];
        let mut recv_by_owner: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (k, r) in nodes.iter().enumerate() {
            if r.owner == me {
                owned_slot[k] = owned.len() as u32;
                owned.push(k as u32);
            } else {
                recv_by_owner[r.owner as usize].push(k as u32);
            }
        }
        let id_index: HashMap<u64, u32> = nodes.iter().enumerate().map(|(k, r)| (r.id, k as u32)).collect();
        let mut send_to: Vec<Vec<(u64, u32)>> = vec![Vec::new(); n];
        for (id, sharer) in sharers.into_iter().flatten() {
            let local = *id_index.get(&id).ok_or_else(|| {
                Error::Contract(format!("rank {me} owns node {id} but does not hold it"))
            })?;
            send_to[sharer as usize].push((id, local));
        }
        let mut ghost = GhostPattern::default();
        for (peer, mut list) in send_to.into_iter().enumerate() {
            if !list.is_empty() {
                list.sort_unstable();
                ghost.sends.push((peer, list.into_iter().map(|(_, l)| l).collect()));
            }
        }
        for (peer, list) in recv_by_owner.into_iter().enumerate() {
            if !list.is_empty() {
                ghost.recvs.push((peer, list));
            }
        }
        ghost.verify(ctx, |s| nodes[s as usize].id, owned.len() as u64, global_nodes)?;

        let mesh = RankMesh {
            dim,
            p,
            curve,
            map: *classifier.map(),
            rank: ctx.rank(),
            nranks: n,
            leaf_counts: tree.report.counts.clone(),
            layout: tree.layout,
            leafs: tree.local,
            nodes,
            owned,
            owned_slot,
            ghost,
            global_nodes,
            index,
        };
        mesh.check_hanging_sources()?;
        Ok(mesh)
    }

    /// Every position of a local leaf is a node or interpolates from nodes.
    fn check_hanging_sources(&self) -> Result<()> {
        for leaf in self.leafs.leafs() {
            for idx in tensor_points(self.dim, self.p + 1) {
                let c = element_node(leaf, self.p, idx);
                if self.index.contains_key(&c) {
                    continue;
                }
                if leaf.level() == 0 {
                    return Err(Error::Contract(format!("root element position {c:?} is not a node")));
                }
                for (dep, _) in hanging_dependencies(leaf, self.p, idx) {
                    if !self.index.contains_key(&dep) {
                        return Err(Error::Contract(format!(
                            "hanging position {c:?} of {leaf:?} depends on {dep:?}, which is not a node; the tree is not 2:1 balanced"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn local_len(&self) -> usize {
        self.nodes.len()
    }

    pub fn owned_len(&self) -> usize {
        self.owned.len()
    }

    pub fn local_index(&self, coord: &NodeCoord) -> Option<u32> {
        self.index.get(coord).copied()
    }

    pub fn leaf_count(&self) -> u64 {
        self.leaf_counts.iter().sum()
    }

    /// Physical position of local node `k`.
    pub fn node_point(&self, k: usize) -> [f64; 3] {
        self.map.node_point(self.dim, self.p, self.nodes[k].coord)
    }

    /// Owned values spread to a local vector with ghosts filled.
    pub fn owned_to_local(&self, ctx: &RankContext, owned: &[f64]) -> Result<Vec<f64>> {
        if owned.len() != self.owned.len() {
            return Err(Error::Contract(format!(
                "vector has {} entries, rank owns {}",
                owned.len(),
                self.owned.len()
            )));
        }
        let mut local = vec![0.0; self.nodes.len()];
        for (&k, &v) in self.owned.iter().zip(owned) {
            local[k as usize] = v;
        }
        self.ghost.read(ctx, &mut local)?;
        Ok(local)
    }

    /// Owned entries of a local vector.
    pub fn local_to_owned<T: Copy>(&self, local: &[T]) -> Vec<T> {
        self.owned.iter().map(|&k| local[k as usize]).collect()
    }

    /// An owned vector from a function of the node record and position.
    pub fn owned_from_fn(&self, f: impl Fn(&NodeRecord, [f64; 3]) -> f64) -> Vec<f64> {
        self.owned
            .iter()
            .map(|&k| f(&self.nodes[k as usize], self.node_point(k as usize)))
            .collect()
    }

    /// Every owned value on every rank, ordered by global id.
    pub fn gather_by_id(&self, ctx: &RankContext, owned: &[f64]) -> Result<Vec<f64>> {
        let mine: Vec<(u64, f64)> = self
            .owned
            .iter()
            .zip(owned)
            .map(|(&k, &v)| (self.nodes[k as usize].id, v))
            .collect();
        let all = ctx.all_gather(mine)?;
        let mut out = vec![f64::NAN; self.global_nodes as usize];
        for (id, v) in all.into_iter().flatten() {
            out[id as usize] = v;
        }
        Ok(out)
    }

    /// Owned node records of every rank, ordered by id.
    pub fn gather_node_set(&self, ctx: &RankContext) -> Result<NodeSet> {
        let mine: Vec<NodeRecord> = self.owned.iter().map(|&k| self.nodes[k as usize]).collect();
        let mut records: Vec<NodeRecord> = ctx.all_gather(mine)?.into_iter().flatten().collect();
        records.sort_unstable_by_key(|r| r.id);
        Ok(NodeSet {
            dim: self.dim,
            p: self.p,
            records,
        })
    }
}

/// No leaf may strictly contain a same-level neighbour of another leaf's
/// parent. In a complete tree this is plain 2:1 balance; in a carved tree it
/// also rules out hanging positions whose sources are themselves hanging.
fn check_strong_balance(ctx: &RankContext, tree: &DistTree) -> Result<()> {
    let leafs = tree.local.leafs();
    let curve = tree.local.curve();
    let mut parents = HashSet::new();
    let mut queries: Vec<Vec<OctantKey>> = vec![Vec::new(); ctx.size()];
    let mut asked = HashSet::new();
    for leaf in leafs {
        if leaf.level() < 2 || !parents.insert(leaf.ancestor_at(leaf.level() - 1)) {
            continue;
        }
        for nb in leaf.ancestor_at(leaf.level() - 1).same_level_neighbors() {
            if asked.insert(nb) {
                queries[tree.layout.rank_of_key(&nb)].push(nb);
            }
        }
    }
    let received = ctx.all_to_all(queries)?;
    let mut bad: Option<(OctantKey, OctantKey)> = None;
    for q in received.iter().flatten() {
        if let Some(i) = find_containing(leafs, q, curve) {
            if leafs[i].level() < q.level() {
                bad.get_or_insert((leafs[i], *q));
            }
        }
    }
    let any_bad = ctx.any(bad.is_some())?;
    if let Some((leaf, q)) = bad {
        return Err(Error::Contract(format!(
            "leaf {leaf:?} is more than one level coarser than a neighbour of the parent {q:?}; the tree is not 2:1 balanced"
        )));
    }
    if any_bad {
        return Err(Error::Contract("tree is not 2:1 balanced".into()));
    }
    Ok(())
}

/// Sequential enumeration on a complete tree held by one rank.
pub fn enumerate_unique_nodes(
    tree: &LinearOctree,
    p: usize,
    classifier: &SubdomainClassifier,
) -> Result<NodeSet> {
    let ctx = RankContext::single();
    let space = SfcSpace::octants(tree.dim(), tree.curve());
    let dist = DistTree {
        local: tree.clone(),
        layout: RankLayout::single(space, crate::partition::DEFAULT_LOAD_TOLERANCE),
        report: crate::partition::SortReport {
            counts: vec![tree.len() as u64],
            max_imbalance: 0.0,
            coarse_split_exception: false,
        },
    };
    let mesh = RankMesh::build(&ctx, dist, p, classifier)?;
    mesh.gather_node_set(&ctx)
}
