//! DistTreeSort: splitters from an exact global histogram of curve
//! prefixes, then one all-to-all and a local TreeSort.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::sfc::{SfcOracle, SfcPos, SfcSpace};

use super::layout::{RankLayout, Splitter};
use super::runtime::RankContext;

/// Load statistics of one distributed sort.
#[derive(Clone, Debug, PartialEq)]
pub struct SortReport {
    pub counts: Vec<u64>,
    /// Largest `|count - ideal| / ideal`.
    pub max_imbalance: f64,
    /// Some cut landed inside a run of identical keys (or a finest-level
    /// cell) and could not meet the tolerance.
    pub coarse_split_exception: bool,
}

struct Target {
    goal: u64,
    bucket: SfcPos,
    oracle: SfcOracle,
    before: u64,
    cut: Option<Splitter>,
}

/// Range of sorted `items` inside the subtree of `cell`.
fn subtree_range<T>(
    space: &SfcSpace,
    items: &[T],
    pos: &impl Fn(&T) -> SfcPos,
    cell: &SfcPos,
) -> (usize, usize) {
    let lo = items.partition_point(|t| space.cmp(&pos(t), cell) == Ordering::Less);
    let hi = lo
        + items[lo..].partition_point(|t| {
            let p = pos(t);
            space.contains(cell, &p)
        });
    (lo, hi)
}

/// Sort items across ranks. Afterwards the concatenation of every rank's
/// items in rank order equals a stable TreeSort of the concatenated input,
/// and equal keys share a rank.
pub fn dist_treesort_by<T, F>(
    ctx: &RankContext,
    mut items: Vec<T>,
    space: SfcSpace,
    pos: F,
    load_tolerance: f64,
) -> Result<(Vec<T>, RankLayout, SortReport)>
where
    T: Copy + Send + 'static,
    F: Fn(&T) -> SfcPos,
{
    if !(load_tolerance > 0.0 && load_tolerance <= 1.0) {
        return Err(Error::Config(format!(
            "load tolerance {load_tolerance} not in (0, 1]"
        )));
    }
    space.treesort_by(&mut items, &pos);
    let p = ctx.size();
    let total = ctx.sum_u64(items.len() as u64)?;
    if p == 1 {
        let report = SortReport {
            counts: vec![total],
            max_imbalance: 0.0,
            coarse_split_exception: false,
        };
        return Ok((items, RankLayout::single(space, load_tolerance), report));
    }
    let ideal = total as f64 / p as f64;
    // each rank's count is the gap between two cuts
    let slack = load_tolerance * ideal / 2.0;
    let root = SfcPos {
        coords: [0; 3],
        level: 0,
    };
    let mut targets: Vec<Target> = (1..p as u64)
        .map(|k| Target {
            goal: k * total / p as u64,
            bucket: root,
            oracle: SfcOracle::root(space.curve, space.dim),
            before: 0,
            cut: None,
        })
        .collect();
    let nchild = 1usize << space.dim;
    let mut exception = false;

    while targets.iter().any(|t| t.cut.is_none()) {
        // Histogram: [self, children in curve order] per open target.
        let open: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].cut.is_none()).collect();
        let mut local = Vec::with_capacity(open.len() * (nchild + 1));
        for &i in &open {
            let t = &targets[i];
            let (lo, hi) = subtree_range(&space, &items, &pos, &t.bucket);
            let slice = &items[lo..hi];
            let own = slice.partition_point(|x| pos(x).level == t.bucket.level);
            local.push(own as u64);
            let mut start = own;
            for c in 0..nchild {
                if t.bucket.level >= space.depth {
                    local.push(0);
                    continue;
                }
                let child = space.child(&t.bucket, &t.oracle, c as u8);
                let n = slice[start..].partition_point(|x| space.contains(&child, &pos(x)));
                local.push(n as u64);
                start += n;
            }
            debug_assert_eq!(start, slice.len());
        }
        let global = ctx.all_reduce(local, |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        })?;
        for (slot, &i) in open.iter().enumerate() {
            let counts = &global[slot * (nchild + 1)..(slot + 1) * (nchild + 1)];
            let t = &mut targets[i];
            let mut bounds = Vec::with_capacity(nchild + 2);
            let mut acc = t.before;
            bounds.push(acc);
            for &c in counts {
                acc += c;
                bounds.push(acc);
            }
            let cut_at = |j: usize| -> Splitter {
                if j == 0 {
                    Splitter::Before(t.bucket)
                } else if j <= nchild {
                    Splitter::Before(space.child(&t.bucket, &t.oracle, (j - 1) as u8))
                } else {
                    Splitter::After(t.bucket)
                }
            };
            let closest = (0..bounds.len())
                .min_by_key(|&j| bounds[j].abs_diff(t.goal))
                .expect("nonempty");
            let dev = bounds[closest].abs_diff(t.goal) as f64;
            if dev <= slack {
                t.cut = Some(cut_at(closest));
                continue;
            }
            // goal lies strictly inside one bucket
            let j = (0..bounds.len() - 1)
                .find(|&j| bounds[j] < t.goal && t.goal < bounds[j + 1])
                .expect("goal inside the bucket range");
            let indivisible = j == 0 || t.bucket.level + 1 >= space.depth;
            if indivisible {
                let pick = if t.goal - bounds[j] <= bounds[j + 1] - t.goal { j } else { j + 1 };
                exception = true;
                t.cut = Some(cut_at(pick));
                continue;
            }
            let c = (j - 1) as u8;
            t.bucket = space.child(&t.bucket, &t.oracle, c);
            t.oracle = t.oracle.child(c);
            t.before = bounds[j];
        }
    }

    let splitters: Vec<Splitter> = targets.into_iter().map(|t| t.cut.unwrap()).collect();
    let layout = RankLayout {
        nranks: p,
        space,
        splitters,
        load_tolerance,
    };

    let mut parts: Vec<Vec<T>> = (0..p).map(|_| Vec::new()).collect();
    let mut last_rank = 0;
    for it in items {
        let r = layout.rank_of(&pos(&it));
        debug_assert!(r >= last_rank, "splitters out of order");
        last_rank = r;
        parts[r].push(it);
    }
    let received = ctx.all_to_all(parts)?;
    let mut mine: Vec<T> = received.into_iter().flatten().collect();
    space.treesort_by(&mut mine, &pos);

    let counts = ctx.all_gather(mine.len() as u64)?;
    let max_imbalance = if total == 0 {
        0.0
    } else {
        counts
            .iter()
            .map(|&c| (c as f64 - ideal).abs() / ideal)
            .fold(0.0, f64::max)
    };
    let report = SortReport {
        counts,
        max_imbalance,
        coarse_split_exception: ctx.any(exception)?,
    };
    Ok((mine, layout, report))
}
