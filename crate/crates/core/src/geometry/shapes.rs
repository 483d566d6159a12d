//! Triangulated test solids.

use std::collections::HashMap;

use super::stl::Triangle;
use super::vec3::{add, normalize, scale, Vec3};

/// Closed, outward-oriented surface of the box `[lo, hi]` (12 triangles).
pub fn axis_box(lo: Vec3, hi: Vec3) -> Vec<Triangle> {
    let c = |i: usize| -> Vec3 {
        [
            if i & 1 == 0 { lo[0] } else { hi[0] },
            if i & 2 == 0 { lo[1] } else { hi[1] },
            if i & 4 == 0 { lo[2] } else { hi[2] },
        ]
    };
    // quads as corner indices, counter-clockwise seen from outside
    let quads = [
        [0, 2, 3, 1], // z = lo
        [4, 5, 7, 6], // z = hi
        [0, 1, 5, 4], // y = lo
        [2, 6, 7, 3], // y = hi
        [0, 4, 6, 2], // x = lo
        [1, 3, 7, 5], // x = hi
    ];
    let mut out = Vec::with_capacity(12);
    for q in quads {
        out.push([c(q[0]), c(q[1]), c(q[2])]);
        out.push([c(q[0]), c(q[2]), c(q[3])]);
    }
    out
}

/// Icosahedron subdivided `subdiv` times, vertices projected onto the sphere.
pub fn icosphere(center: Vec3, radius: f64, subdiv: u32) -> Vec<Triangle> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| normalize(v))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let k = (a.min(b), a.max(b));
            *mid.entry(k).or_insert_with(|| {
                verts.push(normalize(scale(add(verts[a], verts[b]), 0.5)));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    faces
        .iter()
        .map(|f| {
            let p = |i: usize| add(center, scale(verts[i], radius));
            [p(f[0]), p(f[1]), p(f[2])]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3::{cross, dot, norm, sub};

    fn signed_volume(tris: &[Triangle]) -> f64 {
        tris.iter()
            .map(|t| dot(t[0], cross(t[1], t[2])) / 6.0)
            .sum()
    }

    #[test]
    fn box_volume_and_orientation() {
        let tris = axis_box([0.0; 3], [2.0, 3.0, 4.0]);
        assert!((signed_volume(&tris) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_is_outward_and_on_sphere() {
        let tris = icosphere([0.0; 3], 2.0, 2);
        assert_eq!(tris.len(), 20 * 16);
        let v = signed_volume(&tris);
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
        assert!(v > 0.0 && v < ball && v > 0.9 * ball);
        for t in &tris {
            for p in t {
                assert!((norm(*p) - 2.0).abs() < 1e-12);
            }
            // outward normal
            let n = cross(sub(t[1], t[0]), sub(t[2], t[0]));
            assert!(dot(n, t[0]) > 0.0);
        }
    }
}
