//! Matrix-free products, assembly, diagonals and load vectors over a
//! distributed mesh. Per-node sums are accumulated in 128-bit fixed point,
//! so results do not depend on the number of ranks or the traversal order.

use crate::error::{Error, Result};
use crate::nodes::RankMesh;
use crate::partition::{FixedScale, RankContext};

use super::csr::CsrMatrix;
use super::elemental::{elemental_load, ElementalOperator};
use super::traversal::traverse;

/// Headroom factor on a priori bounds: hanging weights can amplify values
/// by up to `1.25^dim`, and sums over elements need a few more bits.
const BOUND_SLACK: f64 = 256.0;

fn check_operator(mesh: &RankMesh, op: &ElementalOperator) -> Result<()> {
    if op.dim != mesh.dim || op.p != mesh.p {
        return Err(Error::Contract(format!(
            "operator is for dim {} order {}, mesh is dim {} order {}",
            op.dim, op.p, mesh.dim, mesh.p
        )));
    }
    Ok(())
}

/// Largest elemental matrix norm over every rank's leaves.
fn max_element_norm(ctx: &RankContext, mesh: &RankMesh, op: &ElementalOperator) -> Result<f64> {
    let rn = op.reference().norm_inf();
    let local = mesh
        .leafs
        .leafs()
        .iter()
        .map(|l| l.level())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|l| rn * op.scale(mesh.map.octant_size(l)).abs())
        .fold(0.0, f64::max);
    ctx.max_f64(local)
}

fn finish_fixed(ctx: &RankContext, mesh: &RankMesh, mut acc: Vec<i128>, scale: FixedScale) -> Result<Vec<f64>> {
    mesh.ghost.accumulate(ctx, &mut acc, |a, b| a + b)?;
    Ok(mesh.owned.iter().map(|&k| scale.from_fixed(acc[k as usize])).collect())
}

/// `y = A x` for owned vectors, through the tree traversal.
pub fn traversal_matvec(
    ctx: &RankContext,
    mesh: &RankMesh,
    op: &ElementalOperator,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_operator(mesh, op)?;
    let local = mesh.owned_to_local(ctx, x)?;
    let xmax = ctx.max_f64(x.iter().fold(0.0f64, |m, v| m.max(v.abs())))?;
    if !xmax.is_finite() {
        return Err(Error::Solver("non-finite entry in matvec input".into()));
    }
    let scale = FixedScale::for_bound(xmax * max_element_norm(ctx, mesh, op)? * BOUND_SLACK);
    let npe = op.nodes_per_element();
    let mut xe = vec![0.0; npe];
    let mut ye = vec![0.0; npe];
    let reference = op.reference();
    let acc = traverse(mesh, &local, 0i128, |leaf, st, out| {
        for (a, v) in xe.iter_mut().enumerate() {
            *v = st.position(a).iter().map(|&(_, x, w)| w * x).sum();
        }
        reference.mul_vec(&xe, &mut ye);
        let s = op.scale(mesh.map.octant_size(leaf.level()));
        for (a, &y) in ye.iter().enumerate() {
            for &(slot, _, w) in st.position(a) {
                out[slot as usize] += scale.to_fixed(w * (s * y));
            }
        }
        Ok(())
    })?;
    finish_fixed(ctx, mesh, acc, scale)
}

/// Diagonal of the assembled operator, without assembling it.
pub fn traversal_diagonal(ctx: &RankContext, mesh: &RankMesh, op: &ElementalOperator) -> Result<Vec<f64>> {
    check_operator(mesh, op)?;
    let scale = FixedScale::for_bound(max_element_norm(ctx, mesh, op)? * BOUND_SLACK);
    let ids: Vec<u32> = (0..mesh.local_len() as u32).collect();
    let reference = op.reference();
    let npe = op.nodes_per_element();
    let acc = traverse(mesh, &ids, 0i128, |leaf, st, out| {
        let s = op.scale(mesh.map.octant_size(leaf.level()));
        for a in 0..npe {
            for b in 0..npe {
                let k = s * reference.get(a, b);
                if k == 0.0 {
                    continue;
                }
                for &(sa, ia, wa) in st.position(a) {
                    for &(_, ib, wb) in st.position(b) {
                        if ia == ib {
                            out[sa as usize] += scale.to_fixed(wa * k * wb);
                        }
                    }
                }
            }
        }
        Ok(())
    })?;
    finish_fixed(ctx, mesh, acc, scale)
}

/// Load vector `∫ f φ_i` for owned nodes.
pub fn assemble_load(
    ctx: &RankContext,
    mesh: &RankMesh,
    f: &(dyn Fn([f64; 3]) -> f64 + Sync),
) -> Result<Vec<f64>> {
    let (dim, p) = (mesh.dim, mesh.p);
    let element_load = |leaf: &crate::sfc::OctantKey| {
        let b = mesh.map.octant_box(leaf);
        elemental_load(f, b.lo, mesh.map.octant_size(leaf.level()), p, dim)
    };
    let local_max = mesh
        .leafs
        .leafs()
        .iter()
        .map(|l| element_load(l).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0, f64::max);
    let bound = ctx.max_f64(local_max)?;
    if !bound.is_finite() {
        return Err(Error::Solver("non-finite forcing".into()));
    }
    let scale = FixedScale::for_bound(bound * BOUND_SLACK);
    let ids: Vec<u32> = (0..mesh.local_len() as u32).collect();
    let acc = traverse(mesh, &ids, 0i128, |leaf, st, out| {
        for (a, v) in element_load(leaf).into_iter().enumerate() {
            for &(slot, _, w) in st.position(a) {
                out[slot as usize] += scale.to_fixed(w * v);
            }
        }
        Ok(())
    })?;
    finish_fixed(ctx, mesh, acc, scale)
}

/// Assemble the operator: leaves emit `Wᵀ K W` triples, which go to the
/// owner of the row and are summed there.
pub fn traversal_assemble(ctx: &RankContext, mesh: &RankMesh, op: &ElementalOperator) -> Result<CsrMatrix> {
    check_operator(mesh, op)?;
    let ids: Vec<u32> = (0..mesh.local_len() as u32).collect();
    let reference = op.reference();
    let npe = op.nodes_per_element();
    let mut outgoing: Vec<Vec<(u64, u64, f64)>> = vec![Vec::new(); ctx.size()];
    traverse(mesh, &ids, 0u8, |leaf, st, _| {
        let s = op.scale(mesh.map.octant_size(leaf.level()));
        for a in 0..npe {
            for b in 0..npe {
                let k = s * reference.get(a, b);
                if k == 0.0 {
                    continue;
                }
                for &(_, ia, wa) in st.position(a) {
                    let row = &mesh.nodes[ia as usize];
                    for &(_, ib, wb) in st.position(b) {
                        outgoing[row.owner as usize].push((row.id, mesh.nodes[ib as usize].id, k * (wa * wb)));
                    }
                }
            }
        }
        Ok(())
    })?;
    let triples: Vec<(u64, u64, f64)> = ctx.all_to_all(outgoing)?.into_iter().flatten().collect();
    let row_ids: Vec<u64> = mesh.owned.iter().map(|&k| mesh.nodes[k as usize].id).collect();
    CsrMatrix::from_triples(ctx, row_ids, mesh.global_nodes, triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::construct_2to1_balanced;
    use crate::femops::elemental::OperatorKind;
    use crate::geometry::{CarvedRegion, Solid, SubdomainClassifier};
    use crate::partition::{distributed_construct_2to1_balanced, DistTree, RankLayout, Runtime, SortReport};
    use crate::sfc::{Curve, LinearOctree, SfcSpace};
    use crate::tree_build::{construct_uniform, refine_to_geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_mesh(tree: &LinearOctree, p: usize, c: &SubdomainClassifier) -> (RankContext, RankMesh) {
        let ctx = RankContext::single();
        let dist = DistTree {
            local: tree.clone(),
            layout: RankLayout::single(SfcSpace::octants(tree.dim(), tree.curve()), 0.1),
            report: SortReport {
                counts: vec![tree.len() as u64],
                max_imbalance: 0.0,
                coarse_split_exception: false,
            },
        };
        let mesh = RankMesh::build(&ctx, dist, p, c).unwrap();
        (ctx, mesh)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_counts_multiplicity() {
        let all = SubdomainClassifier::retain_all(2);
        let t = construct_uniform(&all, Curve::Morton, 1).unwrap();
        let (ctx, mesh) = single_mesh(&t, 1, &all);
        let op = ElementalOperator::new(OperatorKind::Identity, 2, 1).unwrap();
        let x = mesh.owned_from_fn(|_, p| 1.0 + p[0] + 10.0 * p[1]);
        let y = traversal_matvec(&ctx, &mesh, &op, &x).unwrap();
        for (k, (&xi, &yi)) in x.iter().zip(&y).enumerate() {
            let pt = mesh.node_point(mesh.owned[k] as usize);
            let mult = [pt[0], pt[1]].iter().map(|&v| if v == 0.5 { 2.0 } else { 1.0 }).product::<f64>();
            assert_eq!(yi, mult * xi);
        }
    }

    #[test]
    fn single_element_matrix() {
        let all = SubdomainClassifier::retain_all(2);
        let t = construct_uniform(&all, Curve::Morton, 0).unwrap();
        let (ctx, mesh) = single_mesh(&t, 1, &all);
        let a = traversal_assemble(&ctx, &mesh, &ElementalOperator::diffusion(2, 1).unwrap()).unwrap();
        let dense = a.to_dense_global(&ctx).unwrap();
        // ids follow the Morton curve: (0,0) (1,0) (0,1) (1,1)
        let close = |x: f64, y: f64| (x - y).abs() < 1e-15;
        for i in 0..4 {
            assert!(close(dense[i][i], 2.0 / 3.0));
            assert!(close(dense[i][3 - i], -1.0 / 3.0));
        }
        assert!(close(dense[0][1], -1.0 / 6.0));
        assert!(close(dense[0][2], -1.0 / 6.0));
    }

    fn disk(dim: usize, level: u8) -> SubdomainClassifier {
        SubdomainClassifier::retain_all(dim)
            .with_region(CarvedRegion {
                solid: Solid::Ball {
                    center: [0.4, 0.55, 0.5],
                    radius: 0.23,
                },
                refine_level: level,
            })
            .unwrap()
    }

    #[test]
    fn matvec_matches_assembled_matrix_with_hanging_nodes() {
        for (dim, level) in [(2, 6), (3, 4)] {
            for p in [1, 2] {
                let c = disk(dim, level);
                let base = refine_to_geometry(&c, Curve::Hilbert, 2).unwrap();
                let t = construct_2to1_balanced(&c, Curve::Hilbert, base.leafs()).unwrap();
                let (ctx, mesh) = single_mesh(&t, p, &c);
                let op = ElementalOperator::diffusion(dim, p).unwrap();
                let a = traversal_assemble(&ctx, &mesh, &op).unwrap();
                assert!(a.is_symmetric(&ctx).unwrap());
                for seed in 0..3 {
                    let x = random_vec(mesh.owned_len(), seed);
                    let y1 = traversal_matvec(&ctx, &mesh, &op, &x).unwrap();
                    let y2 = a.apply(&ctx, &mesh, &x).unwrap();
                    let err = y1.iter().zip(&y2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err <= 1e-12, "dim {dim} p {p}: {err}");
                }
                // constants are in the kernel
                let ones = vec![1.0; mesh.owned_len()];
                let y = traversal_matvec(&ctx, &mesh, &op, &ones).unwrap();
                assert!(y.iter().all(|v| v.abs() < 1e-13));
                // diagonal agrees with the assembled one
                let d = traversal_diagonal(&ctx, &mesh, &op).unwrap();
                for (k, dk) in d.iter().enumerate() {
                    assert!((dk - a.diagonal()[k]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        // Mass matvec against a polynomial of degree p equals the load
        // vector of that polynomial exactly when hanging values interpolate
        // it exactly.
        for p in [1, 2] {
            let c = disk(2, 6);
            let base = refine_to_geometry(&c, Curve::Morton, 2).unwrap();
            let t = construct_2to1_balanced(&c, Curve::Morton, base.leafs()).unwrap();
            let (ctx, mesh) = single_mesh(&t, p, &c);
            let poly = move |x: [f64; 3]| if p == 1 { 1.0 + 2.0 * x[0] - x[1] } else { x[0] * x[0] - 3.0 * x[0] * x[1] + x[1] };
            let u = mesh.owned_from_fn(|_, x| poly(x));
            let mass = ElementalOperator::new(OperatorKind::Mass, 2, p).unwrap();
            let mu = traversal_matvec(&ctx, &mesh, &mass, &u).unwrap();
            // exact for degree ≤ p only with p+1-point rules on degree 2p
            let f = assemble_load(&ctx, &mesh, &poly).unwrap();
            let err = mu.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-13, "p={p}: {err}");
        }
    }

    #[test]
    fn mass_row_sums_total_retained_volume() {
        let c = disk(2, 5);
        let base = refine_to_geometry(&c, Curve::Hilbert, 2).unwrap();
        let t = construct_2to1_balanced(&c, Curve::Hilbert, base.leafs()).unwrap();
        let vol: f64 = t.leafs().iter().map(|l| c.map().octant_size(l.level()).powi(2)).sum();
        for p in [1, 2] {
            let (ctx, mesh) = single_mesh(&t, p, &c);
            let a = traversal_assemble(&ctx, &mesh, &ElementalOperator::new(OperatorKind::Mass, 2, p).unwrap()).unwrap();
            let total: f64 = a.values().iter().sum();
            assert!((total - vol).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_mismatch_rejected() {
        let all = SubdomainClassifier::retain_all(2);
        let t = construct_uniform(&all, Curve::Morton, 1).unwrap();
        let (ctx, mesh) = single_mesh(&t, 1, &all);
        let op = ElementalOperator::diffusion(2, 2).unwrap();
        assert!(matches!(traversal_matvec(&ctx, &mesh, &op, &vec![0.0; mesh.owned_len()]), Err(Error::Contract(_))));
    }

    #[test]
    fn matvec_is_rank_count_invariant() {
        let c = disk(2, 6);
        let base = refine_to_geometry(&c, Curve::Hilbert, 2).unwrap();
        let run = |n: usize| {
            Runtime::run(n, |ctx| {
                let seeds = if ctx.rank() == 0 { base.leafs().to_vec() } else { vec![] };
                let tree = distributed_construct_2to1_balanced(ctx, &c, Curve::Hilbert, seeds, 0.1)?;
                let mesh = RankMesh::build(ctx, tree, 2, &c)?;
                let op = ElementalOperator::diffusion(2, 2)?;
                let x = mesh.owned_from_fn(|r, _| ((r.id * 7919) % 101) as f64 / 50.0 - 1.0);
                let y = traversal_matvec(ctx, &mesh, &op, &x)?;
                let a = traversal_assemble(ctx, &mesh, &op)?;
                let y2 = a.apply(ctx, &mesh, &x)?;
                Ok((mesh.gather_by_id(ctx, &y)?, mesh.gather_by_id(ctx, &y2)?))
            })
            .unwrap()
            .remove(0)
        };
        let (one, one_csr) = run(1);
        for n in [2, 3, 4] {
            let (y, y_csr) = run(n);
            assert_eq!(y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), one.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(y_csr, one_csr);
        }
    }
}
