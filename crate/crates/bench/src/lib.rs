//! Shared fixtures for the benchmarks.

use carve_core::balance::construct_2to1_balanced;
use carve_core::geometry::{CarvedRegion, Solid, SubdomainClassifier};
use carve_core::tree_build::refine_to_geometry;
use carve_core::{Curve, LinearOctree};

/// Unit box with a centred ball (disk in 2D) refined to `level`.
pub fn carved_ball(dim: usize, level: u8) -> SubdomainClassifier {
    SubdomainClassifier::retain_all(dim)
        .with_region(CarvedRegion {
            solid: Solid::Ball {
                center: [0.5; 3],
                radius: 0.25,
            },
            refine_level: level,
        })
        .expect("valid region")
}

/// Geometry-refined, 2:1 balanced tree for `classifier`.
pub fn balanced_tree(classifier: &SubdomainClassifier, curve: Curve) -> LinearOctree {
    let refined = refine_to_geometry(classifier, curve, 2).expect("refinement");
    construct_2to1_balanced(classifier, curve, refined.leafs()).expect("balance")
}

#[cfg(test)]
mod tests {
    use super::*;
    use carve_core::balance::is_balanced;

    #[test]
    fn fixtures_are_balanced() {
        let t = balanced_tree(&carved_ball(2, 6), Curve::Hilbert);
        assert!(is_balanced(&t));
        assert!(t.leafs().iter().any(|k| k.level() == 6));
    }
}
