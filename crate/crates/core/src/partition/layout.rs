//! Curve segments owned by each rank.

use std::cmp::Ordering;

use crate::sfc::{Curve, OctantKey, SfcPos, SfcSpace};

/// A cut point along the curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Splitter {
    /// Just before the cell (the cell and its subtree come after).
    Before(SfcPos),
    /// Just after the cell's whole subtree.
    After(SfcPos),
    /// After everything.
    End,
}

impl Splitter {
    /// Is `pos` at or past this cut?
    pub fn admits(&self, space: &SfcSpace, pos: &SfcPos) -> bool {
        match self {
            Splitter::Before(x) => space.cmp(pos, x) != Ordering::Less,
            Splitter::After(x) => space.cmp(pos, x) == Ordering::Greater && !space.contains(x, pos),
            Splitter::End => false,
        }
    }
}

/// `nranks - 1` nondecreasing splitters; rank `r` owns the segment between
/// splitter `r - 1` and splitter `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankLayout {
    pub nranks: usize,
    pub space: SfcSpace,
    pub splitters: Vec<Splitter>,
    pub load_tolerance: f64,
}

impl RankLayout {
    pub fn single(space: SfcSpace, load_tolerance: f64) -> Self {
        RankLayout {
            nranks: 1,
            space,
            splitters: vec![],
            load_tolerance,
        }
    }

    /// Layout whose segments start at each rank's first item; empty ranks
    /// own nothing.
    pub fn from_first_items(space: SfcSpace, firsts: &[Option<SfcPos>], load_tolerance: f64) -> Self {
        let n = firsts.len();
        let mut splitters = vec![Splitter::End; n.saturating_sub(1)];
        let mut next = Splitter::End;
        for r in (1..n).rev() {
            if let Some(p) = firsts[r] {
                next = Splitter::Before(p);
            }
            splitters[r - 1] = next;
        }
        RankLayout {
            nranks: n,
            space,
            splitters,
            load_tolerance,
        }
    }

    pub fn rank_of(&self, pos: &SfcPos) -> usize {
        // counted rather than bisected: cuts with equal load may sit in
        // either order along the curve
        self.splitters
            .iter()
            .filter(|s| s.admits(&self.space, pos))
            .count()
    }

    pub fn rank_of_key(&self, key: &OctantKey) -> usize {
        self.rank_of(&key.pos())
    }

    /// Ranks whose segments intersect the subtree of `pos`.
    pub fn ranks_of_subtree(&self, pos: &SfcPos) -> std::ops::RangeInclusive<usize> {
        let first = self.rank_of(pos);
        let last = self.rank_of(&self.space.last_descendant(pos));
        first..=last
    }

    pub fn curve(&self) -> Curve {
        self.space.curve
    }
}
