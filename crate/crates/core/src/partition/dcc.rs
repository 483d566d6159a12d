//! Distributed tree construction: constrained, uniform, geometry-refined
//! and 2:1 balanced, each with the sequential result split over ranks.

use crate::balance::bottom_up_constrain_neighbors;
use crate::error::Result;
use crate::geometry::SubdomainClassifier;
use crate::sfc::{unique_finest, Curve, LinearOctree, OctantKey, SfcPos, SfcSpace, MAX_LEVEL};
use crate::tree_build::{
    check_refine_levels, construct_constrained_filtered, construct_uniform_range, refinement_seeds,
};

use super::distsort::{dist_treesort_by, SortReport};
use super::layout::RankLayout;
use super::runtime::RankContext;

/// One rank's share of a distributed linear octree.
#[derive(Clone, Debug)]
pub struct DistTree {
    /// Leaves owned here, SFC sorted. Concatenated in rank order they form
    /// the global tree.
    pub local: LinearOctree,
    /// Segments starting at each rank's first leaf.
    pub layout: RankLayout,
    pub report: SortReport,
}

impl DistTree {
    pub fn global_len(&self) -> u64 {
        self.report.counts.iter().sum()
    }
}

fn octant_pos(k: &OctantKey) -> SfcPos {
    k.pos()
}

/// Sort the leaves across ranks, drop duplicates and record the layout.
/// The input must already be a subset of one valid linear octree.
fn finish(
    ctx: &RankContext,
    dim: usize,
    curve: Curve,
    leafs: Vec<OctantKey>,
    tol: f64,
) -> Result<DistTree> {
    let space = SfcSpace::octants(dim, curve);
    let (sorted, _, mut report) = dist_treesort_by(ctx, leafs, space, octant_pos, tol)?;
    let unique = unique_finest(&sorted, curve)?;
    report.counts = ctx.all_gather(unique.len() as u64)?;
    let firsts = ctx.all_gather(unique.first().map(|k| k.pos()))?;
    let layout = RankLayout::from_first_items(space, &firsts, tol);
    Ok(DistTree {
        local: LinearOctree::from_sorted_unchecked(dim, curve, unique),
        layout,
        report,
    })
}

/// Repartition the leaves of a valid linear octree, held on any ranks, by
/// the distributed sort.
pub fn redistribute_leafs(
    ctx: &RankContext,
    dim: usize,
    curve: Curve,
    leafs: Vec<OctantKey>,
    tol: f64,
) -> Result<DistTree> {
    finish(ctx, dim, curve, leafs, tol)
}

/// Wrap leaves that are already partitioned in curve order across ranks.
pub fn assume_partitioned(
    ctx: &RankContext,
    dim: usize,
    curve: Curve,
    leafs: Vec<OctantKey>,
    tol: f64,
) -> Result<DistTree> {
    let space = SfcSpace::octants(dim, curve);
    let local = LinearOctree::from_keys(dim, curve, leafs)?;
    let counts = ctx.all_gather(local.len() as u64)?;
    let firsts = ctx.all_gather(local.leafs().first().map(|k| k.pos()))?;
    let total: u64 = counts.iter().sum();
    let ideal = total as f64 / ctx.size() as f64;
    let max_imbalance = if total == 0 {
        0.0
    } else {
        counts.iter().map(|&c| (c as f64 - ideal).abs() / ideal).fold(0.0, f64::max)
    };
    Ok(DistTree {
        local,
        layout: RankLayout::from_first_items(space, &firsts, tol),
        report: SortReport {
            counts,
            max_imbalance,
            coarse_split_exception: false,
        },
    })
}

/// Distributed constrained construction. Seeds may start on any rank.
///
/// After sorting the seeds, each rank builds the leaves overlapping its
/// seed segment. Besides its own seeds it needs the last seed before and
/// the first seed after its segment: together those decide every split of
/// a cell that straddles a segment boundary.
pub fn distributed_construct_constrained(
    ctx: &RankContext,
    classifier: &SubdomainClassifier,
    curve: Curve,
    seeds: Vec<OctantKey>,
    tol: f64,
) -> Result<DistTree> {
    let dim = classifier.dim();
    let space = SfcSpace::octants(dim, curve);
    let (mut sorted, _, _) = dist_treesort_by(ctx, seeds, space, octant_pos, tol)?;
    let ends = ctx.all_gather((sorted.first().copied(), sorted.last().copied()))?;
    let mut firsts: Vec<Option<SfcPos>> = ends.iter().map(|(f, _)| f.map(|k| k.pos())).collect();
    // the first rank holding seeds also owns the curve before them
    if let Some(f) = firsts.iter_mut().find(|f| f.is_some()) {
        *f = Some(OctantKey::root(dim).pos());
    }
    let segments = RankLayout::from_first_items(space, &firsts, tol);
    let r = ctx.rank();
    let owns_segment = !sorted.is_empty() || (r == 0 && firsts.iter().all(Option::is_none));
    let mut leafs = Vec::new();
    if owns_segment {
        if let Some(prev) = ends[..r].iter().rev().find_map(|(_, l)| *l) {
            sorted.push(prev);
        }
        if let Some(next) = ends[r + 1..].iter().find_map(|(f, _)| *f) {
            sorted.push(next);
        }
        let keep = |cell: &OctantKey| segments.ranks_of_subtree(&cell.pos()).contains(&r);
        leafs = construct_constrained_filtered(classifier, curve, &sorted, &keep)?;
    }
    finish(ctx, dim, curve, leafs, tol)
}

/// Distributed [`construct_uniform`](crate::tree_build::construct_uniform):
/// each rank starts from an equal slice of the level's curve positions.
pub fn distributed_construct_uniform(
    ctx: &RankContext,
    classifier: &SubdomainClassifier,
    curve: Curve,
    level: u8,
    tol: f64,
) -> Result<DistTree> {
    let dim = classifier.dim();
    let total: u128 = 1u128 << (dim as u32 * level.min(MAX_LEVEL) as u32);
    let p = ctx.size() as u128;
    let r = ctx.rank() as u128;
    let range = (total * r / p)..(total * (r + 1) / p);
    let leafs = construct_uniform_range(classifier, curve, level, range)?;
    finish(ctx, dim, curve, leafs, tol)
}

/// Distributed [`refine_to_geometry`](crate::tree_build::refine_to_geometry).
pub fn distributed_refine_to_geometry(
    ctx: &RankContext,
    classifier: &SubdomainClassifier,
    curve: Curve,
    base_level: u8,
    tol: f64,
) -> Result<DistTree> {
    check_refine_levels(classifier, base_level)?;
    let mut tree = distributed_construct_uniform(ctx, classifier, curve, base_level, tol)?;
    for _ in 0..=MAX_LEVEL {
        let seeds = refinement_seeds(classifier, tree.local.leafs())?;
        if !ctx.any(seeds.is_some())? {
            return Ok(tree);
        }
        let seeds = seeds.unwrap_or_else(|| tree.local.leafs().to_vec());
        tree = distributed_construct_constrained(ctx, classifier, curve, seeds, tol)?;
    }
    Err(crate::error::Error::Domain(format!(
        "geometry refinement did not converge within {MAX_LEVEL} rounds"
    )))
}

/// Distributed [`construct_2to1_balanced`](crate::balance::construct_2to1_balanced).
/// The neighbour closure of a union is the union of the closures, so each
/// rank seeds from its own leaves.
pub fn distributed_construct_2to1_balanced(
    ctx: &RankContext,
    classifier: &SubdomainClassifier,
    curve: Curve,
    seeds: Vec<OctantKey>,
    tol: f64,
) -> Result<DistTree> {
    let first = distributed_construct_constrained(ctx, classifier, curve, seeds, tol)?;
    let balanced_seeds = bottom_up_constrain_neighbors(first.local.leafs());
    distributed_construct_constrained(ctx, classifier, curve, balanced_seeds, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::construct_2to1_balanced;
    use crate::geometry::{CarvedRegion, Solid};
    use crate::partition::Runtime;
    use crate::tree_build::{construct_constrained, construct_uniform, refine_to_geometry};
    use proptest::prelude::*;

    fn disk() -> SubdomainClassifier {
        SubdomainClassifier::retain_all(2)
            .with_region(CarvedRegion {
                solid: Solid::Ball {
                    center: [0.5, 0.5, 0.0],
                    radius: 0.25,
                },
                refine_level: 6,
            })
            .unwrap()
    }

    fn gather(trees: Vec<DistTree>) -> Vec<OctantKey> {
        trees.into_iter().flat_map(|t| t.local.into_leafs()).collect()
    }

    /// Seeds dealt round-robin so every rank starts with scattered input.
    fn deal<T: Copy>(items: &[T], rank: usize, n: usize) -> Vec<T> {
        items.iter().copied().skip(rank).step_by(n).collect()
    }

    #[test]
    fn constrained_matches_sequential_for_any_rank_count() {
        let c = disk();
        let seq = refine_to_geometry(&c, Curve::Hilbert, 2).unwrap();
        for n in [1, 2, 4, 8] {
            let seeds = seq.leafs().to_vec();
            let out = Runtime::run(n, |ctx| {
                distributed_construct_constrained(ctx, &c, Curve::Hilbert, deal(&seeds, ctx.rank(), n), 0.1)
            })
            .unwrap();
            assert_eq!(gather(out), seq.leafs());
        }
    }

    #[test]
    fn seeds_on_one_rank_still_cover() {
        let c = SubdomainClassifier::retain_all(2);
        let seed = OctantKey::from_cell(2, 5, [3, 17, 0]).unwrap();
        let seq = construct_constrained(&c, Curve::Morton, &[seed]).unwrap();
        let out = Runtime::run(4, |ctx| {
            let s = if ctx.rank() == 2 { vec![seed] } else { vec![] };
            distributed_construct_constrained(ctx, &c, Curve::Morton, s, 0.1)
        })
        .unwrap();
        assert!(out.iter().filter(|t| !t.local.is_empty()).count() > 1);
        assert_eq!(gather(out), seq.leafs());
    }

    #[test]
    fn nothing_retained() {
        let c = SubdomainClassifier::retain_all(2)
            .with_region(CarvedRegion {
                solid: Solid::Cuboid {
                    lo: [-1.0; 3],
                    hi: [2.0; 3],
                },
                refine_level: 3,
            })
            .unwrap();
        let out = Runtime::run(3, |ctx| {
            distributed_construct_constrained(ctx, &c, Curve::Morton, vec![OctantKey::root(2)], 0.1)
        })
        .unwrap();
        assert!(out.iter().all(|t| t.local.is_empty()));
    }

    #[test]
    fn uniform_and_refine_match_sequential() {
        let c = disk();
        let uni = construct_uniform(&c, Curve::Hilbert, 4).unwrap();
        let seq = refine_to_geometry(&c, Curve::Hilbert, 3).unwrap();
        for n in [1, 3, 4] {
            let out = Runtime::run(n, |ctx| distributed_construct_uniform(ctx, &c, Curve::Hilbert, 4, 0.1)).unwrap();
            assert_eq!(gather(out), uni.leafs());
            let out = Runtime::run(n, |ctx| distributed_refine_to_geometry(ctx, &c, Curve::Hilbert, 3, 0.1)).unwrap();
            let layout = out[0].layout.clone();
            for (r, t) in out.iter().enumerate() {
                for k in t.local.leafs() {
                    assert_eq!(layout.rank_of_key(k), r);
                }
            }
            assert_eq!(gather(out), seq.leafs());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn balanced_matches_sequential(
            raw in proptest::collection::vec((0u8..=6, any::<[u32; 2]>()), 0..12),
            n in 1usize..=5,
            hilbert in any::<bool>(),
        ) {
            let curve = if hilbert { Curve::Hilbert } else { Curve::Morton };
            let seeds: Vec<OctantKey> = raw
                .into_iter()
                .map(|(l, r)| {
                    let m = if l == 0 { 1 } else { 1u32 << l };
                    OctantKey::from_cell(2, l, [r[0] % m, r[1] % m, 0]).unwrap()
                })
                .collect();
            let c = disk();
            let seq = construct_2to1_balanced(&c, curve, &seeds).unwrap();
            let out = Runtime::run(n, |ctx| {
                distributed_construct_2to1_balanced(ctx, &c, curve, deal(&seeds, ctx.rank(), n), 0.1)
            })
            .unwrap();
            prop_assert_eq!(gather(out), seq.leafs().to_vec());
        }
    }
}
