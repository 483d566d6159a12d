//! Octant keys, space-filling-curve ordering and TreeSort.
//!
//! Octants live on an integer lattice `[0, 2^MAX_LEVEL)^dim`. Child numbers
//! interleave one bit per axis with axis 0 in the least significant bit, so
//! child `m` of a level-`l` octant sits at offset `bit_a(m) * side/2` along
//! axis `a`.
//!
//! Ordering is pre-order: an ancestor sorts immediately before its
//! descendants. The same machinery orders node coordinates (see
//! [`SfcSpace`]), which live on a finer lattice than octant anchors.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Deepest refinement level. Anchors are stored as `u32`.
pub const MAX_LEVEL: u8 = 30;

/// Which space-filling curve orders the children of each octant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Curve {
    #[default]
    Morton,
    Hilbert,
}

impl Curve {
    pub fn name(self) -> &'static str {
        match self {
            Curve::Morton => "morton",
            Curve::Hilbert => "hilbert",
        }
    }
}

/// Child-order state of one curve segment.
///
/// For Hilbert this is the entry-corner / principal-direction pair of the
/// Gray-code construction; Morton is stateless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SfcOracle {
    curve: Curve,
    dim: u8,
    entry: u8,
    dir: u8,
}

#[inline]
fn gray(i: u8) -> u8 {
    i ^ (i >> 1)
}

#[inline]
fn gray_inverse(g: u8) -> u8 {
    let mut i = g;
    let mut shift = 1;
    while shift < 8 {
        i ^= i >> shift;
        shift <<= 1;
    }
    i
}

#[inline]
fn rotl(x: u8, r: u8, n: u8) -> u8 {
    let mask = ((1u16 << n) - 1) as u8;
    let r = r % n;
    if r == 0 {
        return x & mask;
    }
    (((x as u16) << r | (x as u16) >> (n - r)) as u8) & mask
}

#[inline]
fn rotr(x: u8, r: u8, n: u8) -> u8 {
    rotl(x, n - (r % n), n)
}

/// Entry corner of the `w`-th sub-cube of the Gray-code Hilbert curve.
fn hilbert_entry(w: u8) -> u8 {
    if w == 0 {
        0
    } else {
        gray(2 * ((w - 1) / 2))
    }
}

/// Intra-sub-cube direction of the `w`-th sub-cube.
fn hilbert_direction(w: u8, n: u8) -> u8 {
    if w == 0 {
        0
    } else if w % 2 == 0 {
        (w - 1).trailing_ones() as u8 % n
    } else {
        w.trailing_ones() as u8 % n
    }
}

impl SfcOracle {
    pub fn root(curve: Curve, dim: usize) -> Self {
        SfcOracle {
            curve,
            dim: dim as u8,
            entry: 0,
            dir: 0,
        }
    }

    pub fn curve(&self) -> Curve {
        self.curve
    }

    /// Morton child number visited at position `c_sfc` of this segment.
    #[inline]
    pub fn sfc_to_morton(&self, c_sfc: u8) -> u8 {
        match self.curve {
            Curve::Morton => c_sfc,
            Curve::Hilbert => rotl(gray(c_sfc), self.dir + 1, self.dim) ^ self.entry,
        }
    }

    /// Position along this segment of Morton child `m`.
    #[inline]
    pub fn morton_to_sfc(&self, m: u8) -> u8 {
        match self.curve {
            Curve::Morton => m,
            Curve::Hilbert => gray_inverse(rotr(m ^ self.entry, self.dir + 1, self.dim)),
        }
    }

    /// Oracle for the child at SFC position `c_sfc`.
    #[inline]
    pub fn child(&self, c_sfc: u8) -> Self {
        match self.curve {
            Curve::Morton => *self,
            Curve::Hilbert => SfcOracle {
                curve: self.curve,
                dim: self.dim,
                entry: self.entry ^ rotl(hilbert_entry(c_sfc), self.dir + 1, self.dim),
                dir: (self.dir + hilbert_direction(c_sfc, self.dim) + 1) % self.dim,
            },
        }
    }
}

/// One octant: a `dim`-dimensional anchor on the level-`MAX_LEVEL` lattice
/// plus its refinement level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OctantKey {
    anchor: [u32; 3],
    level: u8,
    dim: u8,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::Domain(format!("dimension {dim} not in {{2, 3}}")))
    }
}

impl OctantKey {
    pub fn root(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dimension {dim} not in {{2, 3}}");
        OctantKey {
            anchor: [0; 3],
            level: 0,
            dim: dim as u8,
        }
    }

    /// Validating constructor; `anchor` is in finest-lattice units.
    pub fn new(dim: usize, anchor: [u32; 3], level: u8) -> Result<Self> {
        check_dim(dim)?;
        if level > MAX_LEVEL {
            return Err(Error::Domain(format!("level {level} exceeds {MAX_LEVEL}")));
        }
        let side = 1u64 << (MAX_LEVEL - level);
        for (a, &x) in anchor.iter().enumerate() {
            if a >= dim {
                if x != 0 {
                    return Err(Error::Domain(format!("axis {a} unused in {dim}D")));
                }
                continue;
            }
            if (x as u64) % side != 0 {
                return Err(Error::Domain(format!(
                    "anchor {x} on axis {a} not aligned to level {level}"
                )));
            }
            if (x as u64) + side > (1u64 << MAX_LEVEL) {
                return Err(Error::Domain(format!("anchor {x} outside the root cube")));
            }
        }
        Ok(OctantKey {
            anchor,
            level,
            dim: dim as u8,
        })
    }

    /// Octant given by integer cell coordinates on the level-`level` grid.
    pub fn from_cell(dim: usize, level: u8, cell: [u32; 3]) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::Domain(format!("level {level} exceeds {MAX_LEVEL}")));
        }
        let shift = MAX_LEVEL - level;
        let mut anchor = [0u32; 3];
        for a in 0..3 {
            let c = cell[a] as u64;
            if c >= (1u64 << level) && a < dim {
                return Err(Error::Domain(format!("cell {c} outside level {level} grid")));
            }
            anchor[a] = (c << shift) as u32;
        }
        OctantKey::new(dim, anchor, level)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn level(&self) -> u8 {
        self.level
    }

    #[inline]
    pub fn anchor(&self) -> [u32; 3] {
        self.anchor
    }

    /// Side length in finest-lattice units.
    #[inline]
    pub fn side(&self) -> u32 {
        1u32 << (MAX_LEVEL - self.level)
    }

    #[inline]
    pub fn pos(&self) -> SfcPos {
        SfcPos {
            coords: self.anchor,
            level: self.level as u32,
        }
    }

    /// Morton child number of the level-`at_level` ancestor within its parent.
    pub fn morton_index(&self, at_level: u8) -> Result<u8> {
        if at_level > self.level {
            return Err(Error::Domain(format!(
                "level {at_level} is finer than the octant's level {}",
                self.level
            )));
        }
        if at_level == 0 {
            return Ok(0);
        }
        Ok(self.morton_digit(at_level))
    }

    #[inline]
    pub(crate) fn morton_digit(&self, at_level: u8) -> u8 {
        digit(&self.anchor, self.dim(), MAX_LEVEL as u32, at_level as u32)
    }

    pub fn parent(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(Error::Domain("the root has no parent".into()));
        }
        Ok(self.ancestor_at(self.level - 1))
    }

    /// The ancestor (or self) at a coarser or equal `level`.
    pub fn ancestor_at(&self, level: u8) -> Self {
        debug_assert!(level <= self.level);
        let mask = !((1u64 << (MAX_LEVEL - level)) - 1) as u32;
        let mut anchor = self.anchor;
        for x in anchor.iter_mut().take(self.dim()) {
            *x &= mask;
        }
        OctantKey {
            anchor,
            level,
            dim: self.dim,
        }
    }

    pub fn child(&self, morton: u8) -> Result<Self> {
        if self.level >= MAX_LEVEL {
            return Err(Error::Domain("octant is already at MAX_LEVEL".into()));
        }
        if (morton as usize) >= (1 << self.dim) {
            return Err(Error::Domain(format!("child number {morton} out of range")));
        }
        Ok(self.child_unchecked(morton))
    }

    #[inline]
    pub(crate) fn child_unchecked(&self, morton: u8) -> Self {
        let half = 1u32 << (MAX_LEVEL - self.level - 1);
        let mut anchor = self.anchor;
        for (a, x) in anchor.iter_mut().enumerate().take(self.dim()) {
            if morton >> a & 1 == 1 {
                *x += half;
            }
        }
        OctantKey {
            anchor,
            level: self.level + 1,
            dim: self.dim,
        }
    }

    /// Children in Morton order.
    pub fn children(&self) -> impl Iterator<Item = OctantKey> + '_ {
        (0..(1u8 << self.dim)).map(move |m| self.child_unchecked(m))
    }

    /// Face, edge and corner neighbors at the same level inside the root cube.
    pub fn same_level_neighbors(&self) -> Vec<OctantKey> {
        let dim = self.dim();
        let side = self.side() as i64;
        let extent = 1i64 << MAX_LEVEL;
        let mut out = Vec::with_capacity(3usize.pow(dim as u32) - 1);
        let count = 3usize.pow(dim as u32);
        'outer: for code in 0..count {
            let mut c = code;
            let mut anchor = [0u32; 3];
            let mut all_zero = true;
            for a in 0..dim {
                let off = (c % 3) as i64 - 1;
                c /= 3;
                if off != 0 {
                    all_zero = false;
                }
                let x = self.anchor[a] as i64 + off * side;
                if x < 0 || x + side > extent {
                    continue 'outer;
                }
                anchor[a] = x as u32;
            }
            if all_zero {
                continue;
            }
            out.push(OctantKey {
                anchor,
                level: self.level,
                dim: self.dim,
            });
        }
        out
    }

    /// Ancestor-or-self test.
    #[inline]
    pub fn contains(&self, other: &OctantKey) -> bool {
        other.level >= self.level && other.ancestor_at(self.level).anchor == self.anchor
    }

    /// Strict ancestor test.
    #[inline]
    pub fn is_ancestor_of(&self, other: &OctantKey) -> bool {
        other.level > self.level && self.contains(other)
    }

    /// Do the closed regions of the two octants intersect?
    pub fn touches(&self, other: &OctantKey) -> bool {
        for a in 0..self.dim() {
            let lo0 = self.anchor[a] as u64;
            let hi0 = lo0 + self.side() as u64;
            let lo1 = other.anchor[a] as u64;
            let hi1 = lo1 + other.side() as u64;
            if hi0 < lo1 || hi1 < lo0 {
                return false;
            }
        }
        true
    }

    /// Do the open regions overlap (one contains the other)?
    #[inline]
    pub fn overlaps(&self, other: &OctantKey) -> bool {
        self.contains(other) || other.contains(self)
    }
}

/// Morton digit of `coords` at `level` on a lattice of `depth` bits.
#[inline]
pub(crate) fn digit(coords: &[u32; 3], dim: usize, depth: u32, level: u32) -> u8 {
    let shift = depth - level;
    let mut m = 0u8;
    for (a, &x) in coords.iter().enumerate().take(dim) {
        m |= ((((x as u64) >> shift) & 1) as u8) << a;
    }
    m
}

/// A cell or point addressed on a `depth`-bit lattice: `coords` is the anchor
/// and `level` the depth of the cell (`level == depth` for points).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SfcPos {
    pub coords: [u32; 3],
    pub level: u32,
}

/// A lattice plus a curve: everything needed to order [`SfcPos`] values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SfcSpace {
    pub dim: usize,
    pub depth: u32,
    pub curve: Curve,
}

impl SfcSpace {
    /// The octant lattice.
    pub fn octants(dim: usize, curve: Curve) -> Self {
        SfcSpace {
            dim,
            depth: MAX_LEVEL as u32,
            curve,
        }
    }

    /// Node coordinates: `p * 2^MAX_LEVEL + 1` points per axis need 32 bits.
    pub fn nodes(dim: usize, curve: Curve) -> Self {
        SfcSpace {
            dim,
            depth: 32,
            curve,
        }
    }

    /// Ancestor-or-equal test on the lattice.
    pub fn contains(&self, a: &SfcPos, b: &SfcPos) -> bool {
        if b.level < a.level {
            return false;
        }
        let shift = self.depth - a.level;
        (0..self.dim).all(|ax| ((a.coords[ax] as u64) >> shift) == ((b.coords[ax] as u64) >> shift))
    }

    /// Curve state inside the cell `pos`.
    pub fn oracle_at(&self, pos: &SfcPos) -> SfcOracle {
        let mut o = SfcOracle::root(self.curve, self.dim);
        if self.curve == Curve::Hilbert {
            for l in 1..=pos.level {
                o = o.child(o.morton_to_sfc(digit(&pos.coords, self.dim, self.depth, l)));
            }
        }
        o
    }

    /// Child of `pos` at SFC rank `c_sfc` within it, given its oracle.
    pub fn child(&self, pos: &SfcPos, oracle: &SfcOracle, c_sfc: u8) -> SfcPos {
        let m = oracle.sfc_to_morton(c_sfc);
        let half = 1u64 << (self.depth - pos.level - 1);
        let mut coords = pos.coords;
        for (ax, x) in coords.iter_mut().enumerate().take(self.dim) {
            if (m >> ax) & 1 == 1 {
                *x = (*x as u64 + half) as u32;
            }
        }
        SfcPos {
            coords,
            level: pos.level + 1,
        }
    }

    /// The SFC-last finest-level descendant of `pos`.
    pub fn last_descendant(&self, pos: &SfcPos) -> SfcPos {
        let mut o = self.oracle_at(pos);
        let mut p = *pos;
        let last = ((1u16 << self.dim) - 1) as u8;
        while p.level < self.depth {
            p = self.child(&p, &o, last);
            o = o.child(last);
        }
        p
    }

    /// Pre-order SFC comparison.
    pub fn cmp(&self, a: &SfcPos, b: &SfcPos) -> Ordering {
        let maxl = a.level.min(b.level);
        // Deepest level at which the two share an ancestor.
        let mut diff = 0u64;
        for ax in 0..self.dim {
            diff |= (a.coords[ax] ^ b.coords[ax]) as u64;
        }
        let first_diff = if diff == 0 {
            u32::MAX
        } else {
            let msb = 63 - diff.leading_zeros();
            self.depth - msb
        };
        if first_diff > maxl {
            return a.level.cmp(&b.level);
        }
        let da = digit(&a.coords, self.dim, self.depth, first_diff);
        let db = digit(&b.coords, self.dim, self.depth, first_diff);
        match self.curve {
            Curve::Morton => da.cmp(&db),
            Curve::Hilbert => {
                let mut o = SfcOracle::root(self.curve, self.dim);
                for l in 1..first_diff {
                    let m = digit(&a.coords, self.dim, self.depth, l);
                    o = o.child(o.morton_to_sfc(m));
                }
                o.morton_to_sfc(da).cmp(&o.morton_to_sfc(db))
            }
        }
    }

    /// TreeSort: stable MSD radix sort whose buckets are permuted by the
    /// curve at every level. Items that *are* the current region (same
    /// level) go first, which yields the ancestor-before-descendant order.
    pub fn treesort_by<T: Copy, F: Fn(&T) -> SfcPos>(&self, items: &mut [T], pos: F) {
        if items.len() < 2 {
            return;
        }
        let mut scratch = items.to_vec();
        let root = SfcOracle::root(self.curve, self.dim);
        self.radix(items, &mut scratch, 0, root, &pos);
    }

    fn radix<T: Copy, F: Fn(&T) -> SfcPos>(
        &self,
        items: &mut [T],
        scratch: &mut [T],
        level: u32,
        oracle: SfcOracle,
        pos: &F,
    ) {
        let n = items.len();
        if n < 2 || level >= self.depth {
            return;
        }
        let nchild = 1usize << self.dim;
        // bucket 0: items equal to this region; 1 + c_sfc for the children.
        let bucket_of = |t: &T| -> usize {
            let p = pos(t);
            if p.level <= level {
                0
            } else {
                1 + oracle.morton_to_sfc(digit(&p.coords, self.dim, self.depth, level + 1)) as usize
            }
        };
        let mut counts = [0usize; 9];
        for t in items.iter() {
            counts[bucket_of(t)] += 1;
        }
        let mut offsets = [0usize; 10];
        for b in 0..=nchild {
            offsets[b + 1] = offsets[b] + counts[b];
        }
        let mut cursor = offsets;
        for t in items.iter() {
            let b = bucket_of(t);
            scratch[cursor[b]] = *t;
            cursor[b] += 1;
        }
        items.copy_from_slice(&scratch[..n]);
        for c in 0..nchild {
            let (lo, hi) = (offsets[c + 1], offsets[c + 2]);
            if hi - lo > 1 {
                self.radix(
                    &mut items[lo..hi],
                    &mut scratch[lo..hi],
                    level + 1,
                    oracle.child(c as u8),
                    pos,
                );
            }
        }
    }
}

/// Pre-order SFC comparison of two octants.
pub fn sfc_cmp(a: &OctantKey, b: &OctantKey, curve: Curve) -> Ordering {
    SfcSpace::octants(a.dim(), curve).cmp(&a.pos(), &b.pos())
}

/// Sort octants into SFC order with TreeSort.
pub fn treesort(mut keys: Vec<OctantKey>, curve: Curve) -> Result<Vec<OctantKey>> {
    let Some(first) = keys.first() else {
        return Ok(keys);
    };
    let dim = first.dim();
    if keys.iter().any(|k| k.dim() != dim) {
        return Err(Error::Domain("treesort input mixes 2D and 3D keys".into()));
    }
    SfcSpace::octants(dim, curve).treesort_by(&mut keys, |k| k.pos());
    Ok(keys)
}

/// Remove duplicates and every octant that has a descendant in the list.
///
/// Input must already be SFC-sorted.
pub fn unique_finest(sorted: &[OctantKey], curve: Curve) -> Result<Vec<OctantKey>> {
    for w in sorted.windows(2) {
        if sfc_cmp(&w[0], &w[1], curve) == Ordering::Greater {
            return Err(Error::Contract("unique_finest input is not SFC-sorted".into()));
        }
    }
    let mut out: Vec<OctantKey> = Vec::with_capacity(sorted.len());
    for k in sorted {
        while let Some(last) = out.last() {
            if last.contains(k) {
                out.pop();
            } else {
                break;
            }
        }
        out.push(*k);
    }
    Ok(out)
}

/// SFC-sorted list of leaf octants with no duplicates and no ancestor pairs.
///
/// The tree may be incomplete: carved regions simply have no leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearOctree {
    dim: usize,
    curve: Curve,
    leafs: Vec<OctantKey>,
}

impl LinearOctree {
    pub fn empty(dim: usize, curve: Curve) -> Self {
        LinearOctree {
            dim,
            curve,
            leafs: Vec::new(),
        }
    }

    /// Wrap leaves already known to be sorted and unique. Checked in debug builds.
    pub(crate) fn from_sorted_unchecked(dim: usize, curve: Curve, leafs: Vec<OctantKey>) -> Self {
        let tree = LinearOctree { dim, curve, leafs };
        debug_assert!(tree.validate().is_ok());
        tree
    }

    /// Sort and deduplicate arbitrary keys (finer octants win).
    pub fn from_keys(dim: usize, curve: Curve, keys: Vec<OctantKey>) -> Result<Self> {
        if keys.iter().any(|k| k.dim() != dim) {
            return Err(Error::Domain("key dimension does not match the tree".into()));
        }
        let sorted = treesort(keys, curve)?;
        let leafs = unique_finest(&sorted, curve)?;
        Ok(LinearOctree { dim, curve, leafs })
    }

    /// Check the sorted / unique / no-ancestor invariants.
    pub fn validate(&self) -> Result<()> {
        for w in self.leafs.windows(2) {
            if sfc_cmp(&w[0], &w[1], self.curve) != Ordering::Less {
                return Err(Error::Contract("leafs not strictly SFC-increasing".into()));
            }
            if w[0].contains(&w[1]) {
                return Err(Error::Contract("leaf list contains an ancestor pair".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curve(&self) -> Curve {
        self.curve
    }

    pub fn leafs(&self) -> &[OctantKey] {
        &self.leafs
    }

    pub fn into_leafs(self) -> Vec<OctantKey> {
        self.leafs
    }

    pub fn len(&self) -> usize {
        self.leafs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leafs.is_empty()
    }

    /// Index of the leaf equal to or containing `key`, if any.
    pub fn find_containing(&self, key: &OctantKey) -> Option<usize> {
        find_containing(&self.leafs, key, self.curve)
    }
}

/// Index of the leaf of a sorted, unique leaf list that equals or contains `key`.
///
/// A containing leaf is always the SFC-predecessor-or-equal of `key`.
pub fn find_containing(leafs: &[OctantKey], key: &OctantKey, curve: Curve) -> Option<usize> {
    let idx = leafs.partition_point(|l| sfc_cmp(l, key, curve) != Ordering::Greater);
    if idx == 0 {
        return None;
    }
    let cand = idx - 1;
    leafs[cand].contains(key).then_some(cand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key2(level: u8, x: u32, y: u32) -> OctantKey {
        OctantKey::from_cell(2, level, [x, y, 0]).unwrap()
    }

    /// Interleaved Morton code with axis 0 least significant, used as an
    /// independent ordering oracle.
    fn morton_code(k: &OctantKey) -> u128 {
        let mut code = 0u128;
        for bit in (0..MAX_LEVEL as u32).rev() {
            for a in 0..k.dim() {
                code = (code << 1) | ((k.anchor()[k.dim() - 1 - a] >> bit) & 1) as u128;
            }
        }
        code
    }

    #[test]
    fn morton_index_examples() {
        assert_eq!(key2(1, 1, 0).morton_index(1).unwrap(), 1);
        assert_eq!(key2(1, 0, 1).morton_index(1).unwrap(), 2);
        let k3 = OctantKey::from_cell(3, 1, [1, 1, 1]).unwrap();
        assert_eq!(k3.morton_index(1).unwrap(), 7);
        assert!(matches!(key2(1, 1, 0).morton_index(2), Err(Error::Domain(_))));
    }

    #[test]
    fn parent_child_roundtrip() {
        let root = OctantKey::root(2);
        let c = root.child(3).unwrap();
        assert_eq!(c.parent().unwrap(), root);
        assert!(root.parent().is_err());
        let deepest = OctantKey::new(2, [0; 3], MAX_LEVEL).unwrap();
        assert!(deepest.child(0).is_err());
        assert!(root.child(4).is_err());
    }

    #[test]
    fn neighbor_counts() {
        // Corner cell on a 3-level grid: only 3 neighbours fit.
        assert_eq!(key2(3, 0, 0).same_level_neighbors().len(), 3);
        assert_eq!(key2(2, 1, 1).same_level_neighbors().len(), 8);
        let k3 = OctantKey::from_cell(3, 2, [1, 1, 1]).unwrap();
        assert_eq!(k3.same_level_neighbors().len(), 26);
        assert!(OctantKey::root(3).same_level_neighbors().is_empty());
    }

    #[test]
    fn misaligned_anchor_rejected() {
        assert!(OctantKey::new(2, [1, 0, 0], 3).is_err());
        assert!(OctantKey::new(2, [0, 0, 5], 3).is_err());
    }

    #[test]
    fn treesort_small_examples() {
        assert!(treesort(vec![], Curve::Morton).unwrap().is_empty());
        let input = vec![key2(3, 1, 1), key2(3, 0, 0), key2(3, 1, 0)];
        let out = treesort(input, Curve::Morton).unwrap();
        assert_eq!(out, vec![key2(3, 0, 0), key2(3, 1, 0), key2(3, 1, 1)]);
        let mixed = vec![OctantKey::root(2), OctantKey::root(3)];
        assert!(treesort(mixed, Curve::Morton).is_err());
    }

    #[test]
    fn ancestor_precedes_descendants() {
        let root = OctantKey::root(2);
        let c0 = root.child(0).unwrap();
        let g = c0.child(0).unwrap();
        let out = treesort(vec![g, root, c0], Curve::Hilbert).unwrap();
        assert_eq!(out, vec![root, c0, g]);
    }

    #[test]
    fn unique_finest_examples() {
        let root = OctantKey::root(2);
        assert_eq!(unique_finest(&[root, root], Curve::Morton).unwrap(), vec![root]);
        let c0 = root.child(0).unwrap();
        assert_eq!(unique_finest(&[root, c0], Curve::Morton).unwrap(), vec![c0]);
        let c1 = root.child(1).unwrap();
        assert!(unique_finest(&[c1, c0], Curve::Morton).is_err());
    }

    fn all_keys_2d(max_level: u8) -> Vec<OctantKey> {
        let mut out = vec![];
        for l in 0..=max_level {
            for x in 0..(1u32 << l) {
                for y in 0..(1u32 << l) {
                    out.push(key2(l, x, y));
                }
            }
        }
        out
    }

    #[test]
    fn morton_order_matches_interleaved_codes_exhaustively() {
        let keys = all_keys_2d(3);
        let mut expected = keys.clone();
        expected.sort_by_key(|k| (morton_code(k), k.level()));
        let got = treesort(keys, Curve::Morton).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn hilbert_consecutive_cells_are_face_adjacent() {
        for level in 1..=4u8 {
            let n = 1u32 << level;
            let mut cells = vec![];
            for x in 0..n {
                for y in 0..n {
                    cells.push(key2(level, x, y));
                }
            }
            let sorted = treesort(cells, Curve::Hilbert).unwrap();
            for w in sorted.windows(2) {
                let d: u32 = (0..2)
                    .map(|a| w[0].anchor()[a].abs_diff(w[1].anchor()[a]))
                    .sum();
                assert_eq!(d, w[0].side(), "level {level}: {:?} -> {:?}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn hilbert_3d_consecutive_cells_are_face_adjacent() {
        let level = 3u8;
        let n = 1u32 << level;
        let mut cells = vec![];
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    cells.push(OctantKey::from_cell(3, level, [x, y, z]).unwrap());
                }
            }
        }
        let sorted = treesort(cells, Curve::Hilbert).unwrap();
        for w in sorted.windows(2) {
            let d: u32 = (0..3)
                .map(|a| w[0].anchor()[a].abs_diff(w[1].anchor()[a]))
                .sum();
            assert_eq!(d, w[0].side());
        }
    }

    #[test]
    fn oracle_is_a_bijection_in_every_state() {
        for dim in [2usize, 3] {
            let mut frontier = vec![SfcOracle::root(Curve::Hilbert, dim)];
            let mut seen = std::collections::HashSet::new();
            while let Some(o) = frontier.pop() {
                if !seen.insert(o) {
                    continue;
                }
                let mut hit = vec![false; 1 << dim];
                for c in 0..(1u8 << dim) {
                    let m = o.sfc_to_morton(c);
                    assert!(!hit[m as usize]);
                    hit[m as usize] = true;
                    assert_eq!(o.morton_to_sfc(m), c);
                    frontier.push(o.child(c));
                }
            }
        }
    }

    #[test]
    fn find_containing_leaf() {
        let root = OctantKey::root(2);
        let leafs: Vec<_> = root.children().collect();
        let tree = LinearOctree::from_keys(2, Curve::Morton, leafs).unwrap();
        let deep = key2(4, 13, 2);
        let i = tree.find_containing(&deep).unwrap();
        assert!(tree.leafs()[i].contains(&deep));
        assert_eq!(tree.find_containing(&root), None);
    }

    fn arb_key(dim: usize, max_level: u8) -> impl Strategy<Value = OctantKey> {
        (0..=max_level, any::<[u32; 3]>()).prop_map(move |(level, raw)| {
            let mut cell = [0u32; 3];
            for a in 0..dim {
                cell[a] = if level == 0 { 0 } else { raw[a] % (1u32 << level) };
            }
            OctantKey::from_cell(dim, level, cell).unwrap()
        })
    }

    fn code_oracle(curve: Curve, k: &OctantKey) -> (u128, u8) {
        // Curve index of the key's first descendant at MAX_LEVEL, computed by
        // walking the oracle from the root, then depth as tiebreak.
        let mut o = SfcOracle::root(curve, k.dim());
        let mut code = 0u128;
        for l in 1..=k.level() {
            let c = o.morton_to_sfc(k.morton_digit(l));
            code = (code << k.dim()) | c as u128;
            o = o.child(c);
        }
        code <<= k.dim() * (MAX_LEVEL - k.level()) as usize;
        (code, k.level())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn treesort_matches_encoding_sort(
            dim in 2usize..=3,
            hilbert in any::<bool>(),
            seeds in proptest::collection::vec((0u8..=8, any::<[u32; 3]>()), 0..200),
        ) {
            let curve = if hilbert { Curve::Hilbert } else { Curve::Morton };
            let keys: Vec<OctantKey> = seeds.iter().map(|(l, raw)| {
                let mut cell = [0u32; 3];
                for a in 0..dim { cell[a] = if *l == 0 { 0 } else { raw[a] % (1u32 << l) }; }
                OctantKey::from_cell(dim, *l, cell).unwrap()
            }).collect();
            let mut expected = keys.clone();
            expected.sort_by_key(|k| code_oracle(curve, k));
            let got = treesort(keys.clone(), curve).unwrap();
            prop_assert_eq!(&got, &expected);
            // comparison function agrees with the sort
            for w in got.windows(2) {
                prop_assert_ne!(sfc_cmp(&w[0], &w[1], curve), Ordering::Greater);
            }
        }

        #[test]
        fn unique_finest_is_idempotent_and_ancestor_free(
            keys in proptest::collection::vec(arb_key(2, 6), 0..120),
        ) {
            let sorted = treesort(keys, Curve::Morton).unwrap();
            let once = unique_finest(&sorted, Curve::Morton).unwrap();
            for (i, a) in once.iter().enumerate() {
                for (j, b) in once.iter().enumerate() {
                    if i != j { prop_assert!(!a.contains(b)); }
                }
            }
            let twice = unique_finest(&once, Curve::Morton).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
