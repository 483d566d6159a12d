//! 2:1 balancing: leaves whose closed regions touch differ by at most one level.

use std::collections::HashSet;

use crate::error::Result;
use crate::geometry::SubdomainClassifier;
use crate::sfc::{find_containing, Curve, LinearOctree, OctantKey, MAX_LEVEL};
use crate::tree_build::construct_constrained;

/// Seeds whose constrained construction is 2:1 balanced.
///
/// Works level by level from the finest: every octant's parent contributes
/// its same-level neighbours (inside the root cube) to the next coarser
/// stratum. Neighbours in carved regions are kept on purpose; the classifier
/// decides later.
pub fn bottom_up_constrain_neighbors(leafs: &[OctantKey]) -> Vec<OctantKey> {
    let mut strata: Vec<Vec<OctantKey>> = vec![Vec::new(); MAX_LEVEL as usize + 1];
    let mut seen: Vec<HashSet<OctantKey>> = vec![HashSet::new(); MAX_LEVEL as usize + 1];
    for leaf in leafs {
        let l = leaf.level() as usize;
        if seen[l].insert(*leaf) {
            strata[l].push(*leaf);
        }
    }
    for l in (1..=MAX_LEVEL as usize).rev() {
        let (coarser, finer) = strata.split_at_mut(l);
        let (seen_coarser, _) = seen.split_at_mut(l);
        for t in &finer[0] {
            let parent = t.ancestor_at(l as u8 - 1);
            for n in parent.same_level_neighbors() {
                if seen_coarser[l - 1].insert(n) {
                    coarser[l - 1].push(n);
                }
            }
        }
    }
    strata.into_iter().rev().flatten().collect()
}

/// Constrained construction followed by neighbour seeding and a second
/// constrained construction.
pub fn construct_2to1_balanced(
    classifier: &SubdomainClassifier,
    curve: Curve,
    seeds: &[OctantKey],
) -> Result<LinearOctree> {
    let first = construct_constrained(classifier, curve, seeds)?;
    let balanced_seeds = bottom_up_constrain_neighbors(first.leafs());
    construct_constrained(classifier, curve, &balanced_seeds)
}

/// Every pair of touching leaves whose levels differ by two or more.
/// Quadratic; meant as a test oracle.
pub fn check_balance(tree: &LinearOctree) -> Vec<(OctantKey, OctantKey)> {
    let leafs = tree.leafs();
    let mut out = Vec::new();
    for (i, a) in leafs.iter().enumerate() {
        for b in &leafs[i + 1..] {
            if a.level().abs_diff(b.level()) >= 2 && a.touches(b) {
                out.push((*a, *b));
            }
        }
    }
    out
}

/// Coarse leaves (from `leafs`, sorted and unique) violating 2:1 balance
/// against `fine`. A coarse leaf touching `fine` must contain a same-level
/// neighbour of `fine`'s parent, so only those positions are searched.
pub(crate) fn coarse_violators(
    leafs: &[OctantKey],
    curve: Curve,
    fine: &OctantKey,
) -> Vec<OctantKey> {
    let mut out = Vec::new();
    if fine.level() < 2 {
        return out;
    }
    let parent = fine.ancestor_at(fine.level() - 1);
    for n in parent.same_level_neighbors() {
        if let Some(i) = find_containing(leafs, &n, curve) {
            let c = leafs[i];
            if c.level() + 2 <= fine.level() && c.touches(fine) && !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

/// Fast balance test using containment search; agrees with [`check_balance`].
pub fn is_balanced(tree: &LinearOctree) -> bool {
    tree.leafs()
        .iter()
        .all(|m| coarse_violators(tree.leafs(), tree.curve(), m).is_empty())
}
