//! Logical ranks, distributed sorting and construction, ghost exchange and
//! reproducible reductions.

mod dcc;
mod distsort;
mod ghost;
mod layout;
mod repro;
mod runtime;

pub use dcc::{
    distributed_construct_2to1_balanced, distributed_construct_constrained,
    distributed_construct_uniform, distributed_refine_to_geometry, redistribute_leafs, assume_partitioned, DistTree,
};
pub use distsort::{dist_treesort_by, SortReport};
pub use ghost::GhostPattern;
pub use layout::{RankLayout, Splitter};
pub use repro::{exact_order_sum, global_dot, global_sum, FixedScale};
pub use runtime::{RankContext, Runtime};

/// Default load-balance tolerance of the distributed sort.
pub const DEFAULT_LOAD_TOLERANCE: f64 = 0.1;
