//! Top-down construction of incomplete linear octrees. Subtrees classified
//! as carved are pruned before they are expanded.

use crate::error::{Error, Result};
use crate::geometry::{Classification, SubdomainClassifier};
use crate::sfc::{Curve, LinearOctree, OctantKey, SfcOracle, MAX_LEVEL};

/// All non-carved level-`level` octants, in SFC order.
pub fn construct_uniform(
    classifier: &SubdomainClassifier,
    curve: Curve,
    level: u8,
) -> Result<LinearOctree> {
    if level > MAX_LEVEL {
        return Err(Error::Domain(format!("level {level} exceeds {MAX_LEVEL}")));
    }
    let dim = classifier.dim();
    let mut out = Vec::new();
    uniform_rec(
        classifier,
        OctantKey::root(dim),
        SfcOracle::root(curve, dim),
        level,
        &mut out,
    )?;
    Ok(LinearOctree::from_sorted_unchecked(dim, curve, out))
}

fn uniform_rec(
    classifier: &SubdomainClassifier,
    cell: OctantKey,
    oracle: SfcOracle,
    level: u8,
    out: &mut Vec<OctantKey>,
) -> Result<()> {
    if classifier.classify_box(&cell)? == Classification::Carved {
        return Ok(());
    }
    if cell.level() == level {
        out.push(cell);
        return Ok(());
    }
    for c in 0..(1u8 << cell.dim()) {
        let child = cell.child_unchecked(oracle.sfc_to_morton(c));
        uniform_rec(classifier, child, oracle.child(c), level, out)?;
    }
    Ok(())
}

/// The part of [`construct_uniform`] whose curve positions among all
/// `4^level` (or `8^level`) cells fall in `range`.
pub(crate) fn construct_uniform_range(
    classifier: &SubdomainClassifier,
    curve: Curve,
    level: u8,
    range: std::ops::Range<u128>,
) -> Result<Vec<OctantKey>> {
    if level > MAX_LEVEL {
        return Err(Error::Domain(format!("level {level} exceeds {MAX_LEVEL}")));
    }
    let dim = classifier.dim();
    let mut out = Vec::new();
    uniform_range_rec(
        classifier,
        OctantKey::root(dim),
        SfcOracle::root(curve, dim),
        level,
        0,
        &range,
        &mut out,
    )?;
    Ok(out)
}

fn uniform_range_rec(
    classifier: &SubdomainClassifier,
    cell: OctantKey,
    oracle: SfcOracle,
    level: u8,
    index: u128,
    range: &std::ops::Range<u128>,
    out: &mut Vec<OctantKey>,
) -> Result<()> {
    let span_bits = cell.dim() as u32 * (level - cell.level()) as u32;
    let lo = index << span_bits;
    let hi = (index + 1) << span_bits;
    if hi <= range.start || lo >= range.end {
        return Ok(());
    }
    if classifier.classify_box(&cell)? == Classification::Carved {
        return Ok(());
    }
    if cell.level() == level {
        out.push(cell);
        return Ok(());
    }
    let nchild = 1u8 << cell.dim();
    for c in 0..nchild {
        let child = cell.child_unchecked(oracle.sfc_to_morton(c));
        let child_index = index * nchild as u128 + c as u128;
        uniform_range_rec(classifier, child, oracle.child(c), level, child_index, range, out)?;
    }
    Ok(())
}

/// Predicate on subtrees: `false` skips the subtree entirely. Used to
/// restrict construction to one rank's curve segment.
pub(crate) type SubtreeFilter<'a> = &'a dyn Fn(&OctantKey) -> bool;

/// The coarsest tree, no coarser than `seeds`, covering the retained region.
pub fn construct_constrained(
    classifier: &SubdomainClassifier,
    curve: Curve,
    seeds: &[OctantKey],
) -> Result<LinearOctree> {
    let leafs = construct_constrained_filtered(classifier, curve, seeds, &|_| true)?;
    Ok(LinearOctree::from_sorted_unchecked(
        classifier.dim(),
        curve,
        leafs,
    ))
}

pub(crate) fn construct_constrained_filtered(
    classifier: &SubdomainClassifier,
    curve: Curve,
    seeds: &[OctantKey],
    keep: SubtreeFilter<'_>,
) -> Result<Vec<OctantKey>> {
    let dim = classifier.dim();
    if let Some(bad) = seeds.iter().find(|s| s.dim() != dim) {
        return Err(Error::Domain(format!(
            "seed {bad:?} has dimension {}, tree has {dim}",
            bad.dim()
        )));
    }
    let root = OctantKey::root(dim);
    let mut bucket: Vec<OctantKey> = seeds.iter().copied().filter(|s| s.level() > 0).collect();
    let mut scratch = vec![root; bucket.len()];
    let mut out = Vec::new();
    constrained_rec(
        classifier,
        root,
        SfcOracle::root(curve, dim),
        &mut bucket,
        &mut scratch,
        keep,
        &mut out,
    )?;
    Ok(out)
}

/// `bucket` holds the seeds strictly finer than `cell` and inside it.
fn constrained_rec(
    classifier: &SubdomainClassifier,
    cell: OctantKey,
    oracle: SfcOracle,
    bucket: &mut [OctantKey],
    scratch: &mut [OctantKey],
    keep: SubtreeFilter<'_>,
    out: &mut Vec<OctantKey>,
) -> Result<()> {
    if !keep(&cell) {
        return Ok(());
    }
    if classifier.classify_box(&cell)? == Classification::Carved {
        return Ok(());
    }
    if bucket.is_empty() || cell.level() >= MAX_LEVEL {
        out.push(cell);
        return Ok(());
    }
    let nchild = 1usize << cell.dim();
    let child_level = cell.level() + 1;
    // Histogram by SFC child rank; seeds equal to the child are dropped.
    let mut counts = [0usize; 8];
    for s in bucket.iter() {
        if s.level() > child_level {
            counts[oracle.morton_to_sfc(s.morton_digit(child_level)) as usize] += 1;
        }
    }
    let mut offsets = [0usize; 9];
    for c in 0..nchild {
        offsets[c + 1] = offsets[c] + counts[c];
    }
    let total = offsets[nchild];
    let mut cursor = offsets;
    for s in bucket.iter() {
        if s.level() > child_level {
            let c = oracle.morton_to_sfc(s.morton_digit(child_level)) as usize;
            scratch[cursor[c]] = *s;
            cursor[c] += 1;
        }
    }
    bucket[..total].copy_from_slice(&scratch[..total]);
    for c in 0..nchild {
        let (lo, hi) = (offsets[c], offsets[c + 1]);
        let child = cell.child_unchecked(oracle.sfc_to_morton(c as u8));
        constrained_rec(
            classifier,
            child,
            oracle.child(c as u8),
            &mut bucket[lo..hi],
            &mut scratch[lo..hi],
            keep,
            out,
        )?;
    }
    Ok(())
}

/// One refinement round: boundary leaves below their target level are
/// replaced by their children, everything else is kept. Returns `None`
/// when nothing needs refining.
pub(crate) fn refinement_seeds(
    classifier: &SubdomainClassifier,
    leafs: &[OctantKey],
) -> Result<Option<Vec<OctantKey>>> {
    let mut seeds = Vec::with_capacity(leafs.len());
    let mut changed = false;
    for leaf in leafs {
        match classifier.boundary_refine_target(leaf)? {
            Some(target) if target > leaf.level() && leaf.level() < MAX_LEVEL => {
                seeds.extend(leaf.children());
                changed = true;
            }
            _ => seeds.push(*leaf),
        }
    }
    Ok(changed.then_some(seeds))
}

pub(crate) fn check_refine_levels(classifier: &SubdomainClassifier, base_level: u8) -> Result<()> {
    if base_level > MAX_LEVEL {
        return Err(Error::Domain(format!("base level {base_level} exceeds {MAX_LEVEL}")));
    }
    if let Some(r) = classifier.regions().iter().find(|r| r.refine_level < base_level) {
        return Err(Error::Config(format!(
            "refine level {} is below the base level {base_level}",
            r.refine_level
        )));
    }
    Ok(())
}

/// Build at `base_level`, then refine leaves cut by a carved boundary until
/// each reaches its region's refine level.
pub fn refine_to_geometry(
    classifier: &SubdomainClassifier,
    curve: Curve,
    base_level: u8,
) -> Result<LinearOctree> {
    check_refine_levels(classifier, base_level)?;
    let mut tree = construct_uniform(classifier, curve, base_level)?;
    for _ in 0..=MAX_LEVEL {
        match refinement_seeds(classifier, tree.leafs())? {
            None => return Ok(tree),
            Some(seeds) => tree = construct_constrained(classifier, curve, &seeds)?,
        }
    }
    Err(Error::Domain(format!(
        "geometry refinement did not converge within {MAX_LEVEL} rounds"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CarvedRegion, Solid};
    use crate::sfc::treesort;
    use proptest::prelude::*;

    fn quadrant() -> SubdomainClassifier {
        SubdomainClassifier::retain_all(2)
            .with_region(CarvedRegion {
                solid: Solid::Cuboid {
                    lo: [0.0; 3],
                    hi: [0.5, 0.5, 0.0],
                },
                refine_level: 2,
            })
            .unwrap()
    }

    fn disk(center: [f64; 3], radius: f64, level: u8) -> CarvedRegion {
        CarvedRegion {
            solid: Solid::Ball { center, radius },
            refine_level: level,
        }
    }

    fn all_cells(dim: usize, level: u8) -> Vec<OctantKey> {
        let n = 1u32 << level;
        let mut out = vec![];
        for x in 0..n {
            for y in 0..n {
                for z in 0..if dim == 3 { n } else { 1 } {
                    out.push(OctantKey::from_cell(dim, level, [x, y, z]).unwrap());
                }
            }
        }
        out
    }

    /// Refine a cell iff a strictly finer seed lies inside it.
    fn naive_constrained(
        c: &SubdomainClassifier,
        curve: Curve,
        seeds: &[OctantKey],
    ) -> Vec<OctantKey> {
        fn rec(c: &SubdomainClassifier, cell: OctantKey, seeds: &[OctantKey], out: &mut Vec<OctantKey>) {
            if c.classify_box(&cell).unwrap() == Classification::Carved {
                return;
            }
            if seeds.iter().any(|s| cell.is_ancestor_of(s)) {
                for ch in cell.children() {
                    rec(c, ch, seeds, out);
                }
            } else {
                out.push(cell);
            }
        }
        let mut out = vec![];
        rec(c, OctantKey::root(c.dim()), seeds, &mut out);
        treesort(out, curve).unwrap()
    }

    #[test]
    fn uniform_counts() {
        let all = SubdomainClassifier::retain_all(2);
        let t = construct_uniform(&all, Curve::Morton, 2).unwrap();
        assert_eq!(t.len(), 16);
        t.validate().unwrap();
        let q = construct_uniform(&quadrant(), Curve::Hilbert, 2).unwrap();
        assert_eq!(q.len(), 12);
        q.validate().unwrap();
        // flush cells are kept
        let flush = OctantKey::from_cell(2, 2, [2, 0, 0]).unwrap();
        assert!(q.leafs().contains(&flush));
    }

    #[test]
    fn carve_everything() {
        let c = SubdomainClassifier::retain_all(3)
            .with_region(CarvedRegion {
                solid: Solid::Cuboid {
                    lo: [-1.0; 3],
                    hi: [2.0; 3],
                },
                refine_level: 0,
            })
            .unwrap();
        assert!(construct_uniform(&c, Curve::Morton, 3).unwrap().is_empty());
    }

    #[test]
    fn uniform_matches_exhaustive_classification() {
        for curve in [Curve::Morton, Curve::Hilbert] {
            let c = SubdomainClassifier::retain_all(2)
                .with_region(disk([0.4, 0.55, 0.0], 0.3, 5))
                .unwrap();
            for level in 0..=5u8 {
                let got = construct_uniform(&c, curve, level).unwrap();
                let cells = all_cells(2, level);
                let carved = cells
                    .iter()
                    .filter(|k| c.classify_box(k).unwrap() == Classification::Carved)
                    .count();
                assert_eq!(got.len() + carved, cells.len());
                let expected: Vec<_> = cells
                    .into_iter()
                    .filter(|k| c.classify_box(k).unwrap() != Classification::Carved)
                    .collect();
                assert_eq!(got.leafs(), treesort(expected, curve).unwrap().as_slice());
            }
        }
    }

    #[test]
    fn constrained_examples() {
        let all = SubdomainClassifier::retain_all(2);
        let root = OctantKey::root(2);
        assert_eq!(
            construct_constrained(&all, Curve::Morton, &[root]).unwrap().leafs(),
            &[root]
        );
        let seed = OctantKey::from_cell(2, 2, [0, 0, 0]).unwrap();
        let t = construct_constrained(&all, Curve::Morton, &[seed]).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.leafs()[0], seed);
        assert_eq!(t.leafs(), naive_constrained(&all, Curve::Morton, &[seed]).as_slice());
    }

    #[test]
    fn seeds_in_carved_region_are_pruned() {
        let q = quadrant();
        let deep = OctantKey::from_cell(2, 4, [1, 1, 0]).unwrap(); // inside C
        let other = OctantKey::from_cell(2, 3, [7, 7, 0]).unwrap();
        let with = construct_constrained(&q, Curve::Morton, &[deep, other]).unwrap();
        let without = construct_constrained(&q, Curve::Morton, &[other]).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn refine_noop_when_targets_equal_base() {
        let c = SubdomainClassifier::retain_all(2)
            .with_region(disk([0.5, 0.5, 0.0], 0.25, 3))
            .unwrap();
        assert_eq!(
            refine_to_geometry(&c, Curve::Morton, 3).unwrap(),
            construct_uniform(&c, Curve::Morton, 3).unwrap()
        );
    }

    #[test]
    fn refine_disk() {
        let c = SubdomainClassifier::retain_all(2)
            .with_region(disk([0.5, 0.5, 0.0], 0.25, 5))
            .unwrap();
        let t = refine_to_geometry(&c, Curve::Hilbert, 2).unwrap();
        t.validate().unwrap();
        for leaf in t.leafs() {
            match c.classify_box(leaf).unwrap() {
                Classification::RetainBoundary => assert_eq!(leaf.level(), 5),
                Classification::RetainInternal => assert!(leaf.level() >= 2),
                Classification::Carved => panic!("carved leaf emitted"),
            }
        }
    }

    #[test]
    fn refine_two_instances_to_their_targets() {
        let c = SubdomainClassifier::retain_all(2)
            .with_region(disk([0.25, 0.25, 0.0], 0.1, 4))
            .unwrap()
            .with_region(disk([0.7, 0.7, 0.0], 0.15, 6))
            .unwrap();
        let t = refine_to_geometry(&c, Curve::Morton, 2).unwrap();
        let mut seen = [false; 2];
        for leaf in t.leafs() {
            if let Some(target) = c.boundary_refine_target(leaf).unwrap() {
                assert_eq!(leaf.level(), target);
                seen[(target == 6) as usize] = true;
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn refine_level_below_base_rejected() {
        let c = SubdomainClassifier::retain_all(2)
            .with_region(disk([0.5, 0.5, 0.0], 0.25, 1))
            .unwrap();
        assert!(matches!(
            refine_to_geometry(&c, Curve::Morton, 2),
            Err(Error::Config(_))
        ));
    }

    fn arb_seeds(dim: usize) -> impl Strategy<Value = Vec<OctantKey>> {
        proptest::collection::vec((0u8..=6, any::<[u32; 3]>()), 0..12).prop_map(move |v| {
            v.into_iter()
                .map(|(l, raw)| {
                    let mut c = [0u32; 3];
                    for a in 0..dim {
                        c[a] = if l == 0 { 0 } else { raw[a] % (1 << l) };
                    }
                    OctantKey::from_cell(dim, l, c).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn constrained_matches_naive_recursion(
            dim in 2usize..=3,
            hilbert in any::<bool>(),
            carve in any::<bool>(),
            seeds in arb_seeds(3),
        ) {
            let curve = if hilbert { Curve::Hilbert } else { Curve::Morton };
            let mut c = SubdomainClassifier::retain_all(dim);
            if carve {
                c = c.with_region(disk([0.5, 0.45, 0.5], 0.3, 6)).unwrap();
            }
            let seeds: Vec<OctantKey> = seeds
                .into_iter()
                .map(|s| {
                    let a = s.anchor();
                    OctantKey::new(dim, [a[0], a[1], if dim == 3 { a[2] } else { 0 }], s.level()).unwrap()
                })
                .collect();
            let t = construct_constrained(&c, curve, &seeds).unwrap();
            t.validate().unwrap();
            let oracle = naive_constrained(&c, curve, &seeds);
            prop_assert_eq!(t.leafs(), oracle.as_slice());
        }
    }
}
