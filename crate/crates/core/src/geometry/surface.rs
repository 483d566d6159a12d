//! Triangle surfaces with a uniform-grid index: ray-parity In/Out tests,
//! triangle/box overlap and nearest-point distance.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::stl::{read_stl, Triangle};
use super::vec3::{add, cross, dot, norm, scale, sub, Aabb, Vec3};

const RAY_SEED: u64 = 0x00c0_ffee_5eed;
const RAY_RETRIES: usize = 8;
/// Barycentric slack below which a ray hit counts as grazing an edge or vertex.
const GRAZE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InOut {
    In,
    Out,
}

/// Flat uniform grid over the surface bounding box; each cell lists the
/// triangles overlapping it.
#[derive(Clone, Debug)]
struct Grid {
    bounds: Aabb,
    dims: [usize; 3],
    cell: Vec3,
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl Grid {
    fn build(tris: &[Triangle], bbox: Aabb) -> Grid {
        let diag = bbox.diagonal().max(1e-300);
        let pad = 1e-9 * diag;
        let bounds = Aabb {
            lo: sub(bbox.lo, [pad; 3]),
            hi: add(bbox.hi, [pad; 3]),
        };
        let ext = sub(bounds.hi, bounds.lo);
        let vol = ext[0] * ext[1] * ext[2];
        let target = (2 * tris.len()).max(1) as f64;
        let h = (vol / target).cbrt();
        let mut dims = [1usize; 3];
        let mut cell = [0.0; 3];
        for a in 0..3 {
            dims[a] = ((ext[a] / h).ceil() as usize).clamp(1, 128);
            cell[a] = ext[a] / dims[a] as f64;
        }
        let mut grid = Grid {
            bounds,
            dims,
            cell,
            offsets: vec![],
            items: vec![],
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); ncell];
        for (i, t) in tris.iter().enumerate() {
            let mut tb = Aabb::empty();
            for &v in t {
                tb.grow(v);
            }
            let (lo, hi) = grid.cell_range(&tb);
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        // slightly inflated so boundary-plane triangles land in both cells
                        let cb = grid.cell_box([x, y, z]);
                        let slack = scale(grid.cell, 1e-9);
                        let cb = Aabb {
                            lo: sub(cb.lo, slack),
                            hi: add(cb.hi, slack),
                        };
                        if tri_box_overlap(t, &cb) {
                            lists[grid.flat([x, y, z])].push(i as u32);
                        }
                    }
                }
            }
        }
        grid.offsets.reserve(ncell + 1);
        grid.offsets.push(0);
        for l in &lists {
            grid.items.extend_from_slice(l);
            grid.offsets.push(grid.items.len() as u32);
        }
        grid
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.bounds.lo[a]) / self.cell[a]).floor();
            c[a] = (f.max(0.0) as usize).min(self.dims[a] - 1);
        }
        c
    }

    fn cell_range(&self, b: &Aabb) -> ([usize; 3], [usize; 3]) {
        (self.cell_of(b.lo), self.cell_of(b.hi))
    }

    fn cell_box(&self, c: [usize; 3]) -> Aabb {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.bounds.lo[a] + c[a] as f64 * self.cell[a];
            hi[a] = if c[a] + 1 == self.dims[a] {
                self.bounds.hi[a]
            } else {
                lo[a] + self.cell[a]
            };
        }
        Aabb { lo, hi }
    }

    #[inline]
    fn cell_items(&self, c: [usize; 3]) -> &[u32] {
        let f = self.flat(c);
        &self.items[self.offsets[f] as usize..self.offsets[f + 1] as usize]
    }

    /// Triangle ids from every cell overlapping `b` (deduplicated, sorted).
    fn candidates_in(&self, b: &Aabb, out: &mut Vec<u32>) {
        out.clear();
        if !self.bounds.intersects(b) {
            return;
        }
        let (lo, hi) = self.cell_range(b);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    out.extend_from_slice(self.cell_items([x, y, z]));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    /// Triangle ids from every cell a ray from `o` along `d` passes through.
    fn candidates_along(&self, o: Vec3, d: Vec3, out: &mut Vec<u32>) {
        out.clear();
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.bounds.lo[a] || o[a] > self.bounds.hi[a] {
                    return;
                }
            } else {
                let inv = 1.0 / d[a];
                let ta = (self.bounds.lo[a] - o[a]) * inv;
                let tb = (self.bounds.hi[a] - o[a]) * inv;
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t0 > t1 {
            return;
        }
        let start = add(o, scale(d, t0));
        let mut c = self.cell_of(start);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if d[a] > 0.0 {
                step[a] = 1;
                let edge = self.bounds.lo[a] + (c[a] + 1) as f64 * self.cell[a];
                t_max[a] = (edge - o[a]) / d[a];
                t_delta[a] = self.cell[a] / d[a];
            } else if d[a] < 0.0 {
                step[a] = -1;
                let edge = self.bounds.lo[a] + c[a] as f64 * self.cell[a];
                t_max[a] = (edge - o[a]) / d[a];
                t_delta[a] = -self.cell[a] / d[a];
            }
        }
        loop {
            out.extend_from_slice(self.cell_items(c));
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] > t1 || step[a] == 0 {
                break;
            }
            let next = c[a] as i64 + step[a];
            if next < 0 || next >= self.dims[a] as i64 {
                break;
            }
            c[a] = next as usize;
            t_max[a] += t_delta[a];
        }
        out.sort_unstable();
        out.dedup();
    }
}

/// An immutable triangle soup with a spatial index. The solid it bounds is
/// assumed closed and watertight.
#[derive(Clone, Debug)]
pub struct TriangleSurface {
    tris: Vec<Triangle>,
    bbox: Aabb,
    grid: Grid,
}

enum RayOutcome {
    Parity(bool),
    Degenerate,
}

impl TriangleSurface {
    pub fn new(tris: Vec<Triangle>) -> Result<Self> {
        if tris.is_empty() {
            return Err(Error::Domain("surface has no triangles".into()));
        }
        let mut bbox = Aabb::empty();
        for t in &tris {
            for &v in t {
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::Domain("non-finite vertex".into()));
                }
                bbox.grow(v);
            }
        }
        let grid = Grid::build(&tris, bbox);
        Ok(TriangleSurface { tris, bbox, grid })
    }

    pub fn load(path: &Path) -> Result<Self> {
        TriangleSurface::new(read_stl(path)?)
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.tris
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    /// Default on-surface tolerance relative to the surface size.
    pub fn default_eps(&self) -> f64 {
        1e-12 * self.bbox.diagonal()
    }

    /// Is there a triangle within `eps` of `p`?
    pub fn within(&self, p: Vec3, eps: f64) -> bool {
        let q = Aabb {
            lo: sub(p, [eps; 3]),
            hi: add(p, [eps; 3]),
        };
        if !self.bbox.intersects(&q) {
            return false;
        }
        let mut cand = Vec::new();
        self.grid.candidates_in(&q, &mut cand);
        cand.iter().any(|&i| {
            let c = closest_point_on_triangle(p, &self.tris[i as usize]);
            norm(sub(p, c)) <= eps
        })
    }

    /// Ray-parity In/Out test; points within `eps` of the surface are In.
    pub fn point_in_out_eps(&self, p: Vec3, eps: f64) -> Result<InOut> {
        if !self.bbox.contains(p) {
            return Ok(InOut::Out);
        }
        if self.within(p, eps) {
            return Ok(InOut::In);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(RAY_SEED);
        let mut cand = Vec::new();
        for _ in 0..=RAY_RETRIES {
            let d = random_direction(&mut rng);
            match self.cast(p, d, &mut cand) {
                RayOutcome::Parity(odd) => return Ok(if odd { InOut::In } else { InOut::Out }),
                RayOutcome::Degenerate => continue,
            }
        }
        Err(Error::Classification(format!(
            "ray casting from {p:?} stayed degenerate after {RAY_RETRIES} retries"
        )))
    }

    pub fn point_in_out(&self, p: Vec3) -> Result<InOut> {
        self.point_in_out_eps(p, self.default_eps())
    }

    fn cast(&self, o: Vec3, d: Vec3, cand: &mut Vec<u32>) -> RayOutcome {
        self.grid.candidates_along(o, d, cand);
        let plane_tol = 1e-9 * self.bbox.diagonal();
        let mut crossings = 0usize;
        for &i in cand.iter() {
            let t = &self.tris[i as usize];
            let e1 = sub(t[1], t[0]);
            let e2 = sub(t[2], t[0]);
            let n = cross(e1, e2);
            let nn = norm(n);
            if nn == 0.0 {
                continue;
            }
            let pvec = cross(d, e2);
            let det = dot(e1, pvec);
            let tvec = sub(o, t[0]);
            if det.abs() <= 1e-12 * nn {
                // Ray parallel to the plane: grazing if it lies in it.
                if (dot(n, tvec) / nn).abs() <= plane_tol {
                    return RayOutcome::Degenerate;
                }
                continue;
            }
            let inv = 1.0 / det;
            let u = dot(tvec, pvec) * inv;
            let qvec = cross(tvec, e1);
            let v = dot(d, qvec) * inv;
            let s = dot(e2, qvec) * inv;
            if s <= 0.0 || u < -GRAZE_TOL || v < -GRAZE_TOL || u + v > 1.0 + GRAZE_TOL {
                continue;
            }
            if u < GRAZE_TOL || v < GRAZE_TOL || u + v > 1.0 - GRAZE_TOL {
                return RayOutcome::Degenerate;
            }
            crossings += 1;
        }
        RayOutcome::Parity(crossings % 2 == 1)
    }

    /// Does any triangle overlap the closed box? Touching counts.
    pub fn box_intersects(&self, b: &Aabb) -> bool {
        if !self.bbox.intersects(b) {
            return false;
        }
        let mut cand = Vec::new();
        self.grid.candidates_in(b, &mut cand);
        cand.iter().any(|&i| tri_box_overlap(&self.tris[i as usize], b))
    }

    /// Unsigned distance from `p` to the nearest triangle.
    pub fn distance(&self, p: Vec3) -> f64 {
        let g = &self.grid;
        let q = g.bounds.clamp(p);
        let outside = norm(sub(p, q));
        let c0 = g.cell_of(q);
        let hmin = g.cell[0].min(g.cell[1]).min(g.cell[2]);
        let kmax = g.dims.iter().copied().max().unwrap();
        let mut best = f64::INFINITY;
        for k in 0..=kmax {
            let ring = (k as f64 - 1.0).max(0.0) * hmin;
            let bound = (outside * outside + ring * ring).sqrt();
            if bound > best {
                break;
            }
            let lo: Vec<i64> = (0..3).map(|a| c0[a] as i64 - k as i64).collect();
            let hi: Vec<i64> = (0..3).map(|a| c0[a] as i64 + k as i64).collect();
            for z in lo[2].max(0)..=hi[2].min(g.dims[2] as i64 - 1) {
                for y in lo[1].max(0)..=hi[1].min(g.dims[1] as i64 - 1) {
                    for x in lo[0].max(0)..=hi[0].min(g.dims[0] as i64 - 1) {
                        let on_shell = x == lo[0]
                            || x == hi[0]
                            || y == lo[1]
                            || y == hi[1]
                            || z == lo[2]
                            || z == hi[2];
                        if !on_shell {
                            continue;
                        }
                        let c = [x as usize, y as usize, z as usize];
                        if g.cell_box(c).distance(p) > best {
                            continue;
                        }
                        for &i in g.cell_items(c) {
                            let cp = closest_point_on_triangle(p, &self.tris[i as usize]);
                            best = best.min(norm(sub(p, cp)));
                        }
                    }
                }
            }
        }
        best
    }

    /// Negative inside, positive outside.
    pub fn signed_distance(&self, p: Vec3) -> Result<f64> {
        let d = self.distance(p);
        Ok(match self.point_in_out(p)? {
            InOut::In => -d,
            InOut::Out => d,
        })
    }
}

/// Signed distances for a batch of points.
pub fn signed_distance(surface: &TriangleSurface, points: &[Vec3]) -> Result<Vec<f64>> {
    points.iter().map(|&p| surface.signed_distance(p)).collect()
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = norm(v);
        if n > 0.1 && n <= 1.0 {
            return scale(v, 1.0 / n);
        }
    }
}

/// Closest point of a triangle to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: Vec3, t: &Triangle) -> Vec3 {
    let [a, b, c] = *t;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = va + vb + vc;
    if denom == 0.0 {
        // zero-area triangle: fall back to the nearest edge point
        let cands = [
            closest_on_segment(p, a, b),
            closest_on_segment(p, b, c),
            closest_on_segment(p, c, a),
        ];
        return cands
            .into_iter()
            .min_by(|x, y| norm(sub(p, *x)).total_cmp(&norm(sub(p, *y))))
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

fn closest_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let l = dot(ab, ab);
    if l == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / l).clamp(0.0, 1.0);
    add(a, scale(ab, t))
}

/// Separating-axis triangle/box overlap. Touching counts as overlap.
pub fn tri_box_overlap(t: &Triangle, b: &Aabb) -> bool {
    let c = b.center();
    let h = scale(sub(b.hi, b.lo), 0.5);
    let v = [sub(t[0], c), sub(t[1], c), sub(t[2], c)];

    // box face normals
    for a in 0..3 {
        let mn = v[0][a].min(v[1][a]).min(v[2][a]);
        let mx = v[0][a].max(v[1][a]).max(v[2][a]);
        if mn > h[a] || mx < -h[a] {
            return false;
        }
    }

    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    let n = cross(e[0], e[1]);
    let d = dot(n, v[0]);
    let r = h[0] * n[0].abs() + h[1] * n[1].abs() + h[2] * n[2].abs();
    if d.abs() > r {
        return false;
    }

    for edge in e {
        for a in 0..3 {
            let mut axis = [0.0; 3];
            axis[a] = 1.0;
            let ax = cross(axis, edge);
            let p0 = dot(ax, v[0]);
            let p1 = dot(ax, v[1]);
            let p2 = dot(ax, v[2]);
            let r = h[0] * ax[0].abs() + h[1] * ax[1].abs() + h[2] * ax[2].abs();
            let mn = p0.min(p1).min(p2);
            let mx = p0.max(p1).max(p2);
            if mn > r || mx < -r {
                return false;
            }
        }
    }
    true
}
