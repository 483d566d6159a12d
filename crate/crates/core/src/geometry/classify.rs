//! The carved-set classifier: maps closed octant boxes and points to
//! carved / retained labels.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sfc::{OctantKey, MAX_LEVEL};

use super::surface::{InOut, TriangleSurface};
use super::vec3::{sub, Aabb, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Classification {
    Carved,
    RetainInternal,
    RetainBoundary,
}

/// Affine map between the unit lattice cube and physical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainMap {
    pub origin: Vec3,
    pub side: f64,
}

impl Default for DomainMap {
    fn default() -> Self {
        DomainMap {
            origin: [0.0; 3],
            side: 1.0,
        }
    }
}

const LATTICE: f64 = (1u64 << MAX_LEVEL) as f64;

impl DomainMap {
    /// Physical box of an octant; unused axes collapse to `origin`.
    pub fn octant_box(&self, key: &OctantKey) -> Aabb {
        let mut lo = self.origin;
        let mut hi = self.origin;
        let a = key.anchor();
        let s = key.side() as f64;
        for ax in 0..key.dim() {
            lo[ax] = self.origin[ax] + self.side * (a[ax] as f64 / LATTICE);
            hi[ax] = self.origin[ax] + self.side * ((a[ax] as f64 + s) / LATTICE);
        }
        Aabb { lo, hi }
    }

    /// Physical position of a node-lattice point (pitch `side / (p * 2^MAX_LEVEL)`).
    pub fn node_point(&self, dim: usize, p: usize, coord: [u32; 3]) -> Vec3 {
        let mut x = self.origin;
        let denom = p as f64 * LATTICE;
        for ax in 0..dim {
            x[ax] = self.origin[ax] + self.side * (coord[ax] as f64 / denom);
        }
        x
    }

    /// Physical side length of an octant at `level`.
    pub fn octant_size(&self, level: u8) -> f64 {
        self.side / (1u64 << level) as f64
    }
}

/// One placement of a triangle surface.
#[derive(Clone, Debug)]
pub struct GeometryInstance {
    pub surface: Arc<TriangleSurface>,
    pub displacement: Vec3,
}

impl GeometryInstance {
    pub fn point_in_out(&self, p: Vec3, eps: f64) -> Result<InOut> {
        self.surface.point_in_out_eps(sub(p, self.displacement), eps)
    }

    pub fn box_intersects(&self, b: &Aabb) -> bool {
        let neg = [
            -self.displacement[0],
            -self.displacement[1],
            -self.displacement[2],
        ];
        self.surface.box_intersects(&b.translated(neg))
    }
}

/// A closed solid removed from the root cube.
#[derive(Clone, Debug)]
pub enum Solid {
    Mesh(GeometryInstance),
    /// Disk in 2D, ball in 3D.
    Ball { center: Vec3, radius: f64 },
    Cuboid { lo: Vec3, hi: Vec3 },
}

#[derive(Clone, Debug)]
pub struct CarvedRegion {
    pub solid: Solid,
    /// Level that leaves cut by this region's boundary are refined to.
    pub refine_level: u8,
}

/// The subdomain function: everything outside the union of carved solids
/// (and inside the optional extent mask) is retained.
#[derive(Clone, Debug)]
pub struct SubdomainClassifier {
    dim: usize,
    map: DomainMap,
    regions: Vec<CarvedRegion>,
    extent: Option<Vec3>,
    eps: f64,
}

impl SubdomainClassifier {
    pub fn new(dim: usize, map: DomainMap) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Domain(format!("dimension {dim} not in {{2, 3}}")));
        }
        if !(map.side > 0.0 && map.side.is_finite()) {
            return Err(Error::Domain("root side must be positive".into()));
        }
        Ok(SubdomainClassifier {
            dim,
            map,
            regions: Vec::new(),
            extent: None,
            eps: 1e-12 * map.side,
        })
    }

    /// Unit cube, nothing carved.
    pub fn retain_all(dim: usize) -> Self {
        SubdomainClassifier::new(dim, DomainMap::default()).expect("valid dimension")
    }

    pub fn with_region(mut self, region: CarvedRegion) -> Result<Self> {
        if region.refine_level > MAX_LEVEL {
            return Err(Error::Config(format!(
                "refine level {} exceeds {MAX_LEVEL}",
                region.refine_level
            )));
        }
        if matches!(region.solid, Solid::Mesh(_)) && self.dim != 3 {
            return Err(Error::Config("triangle-mesh geometry needs dim = 3".into()));
        }
        self.regions.push(region);
        Ok(self)
    }

    /// Keep only the box `[origin, origin + extent]` of the root cube.
    pub fn with_extent(mut self, extent: Vec3) -> Result<Self> {
        for &e in extent.iter().take(self.dim) {
            if !(e > 0.0) {
                return Err(Error::Config("extent must be positive".into()));
            }
        }
        self.extent = Some(extent);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn map(&self) -> &DomainMap {
        &self.map
    }

    pub fn regions(&self) -> &[CarvedRegion] {
        &self.regions
    }

    pub fn extent(&self) -> Option<Vec3> {
        self.extent
    }

    /// Upper mask bound per axis, for axes where the mask cuts the root cube.
    fn mask_faces(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let ext = self.extent;
        (0..self.dim).filter_map(move |a| {
            let e = ext?[a];
            (e < self.map.side).then(|| (a, self.map.origin[a] + e))
        })
    }

    pub fn classify_box(&self, key: &OctantKey) -> Result<Classification> {
        if key.dim() != self.dim {
            return Err(Error::Contract("octant dimension differs from classifier".into()));
        }
        self.classify_region(&self.map.octant_box(key))
    }

    /// Classify a closed physical box. Zero-volume boxes are points.
    pub fn classify_region(&self, b: &Aabb) -> Result<Classification> {
        if (0..self.dim).all(|a| b.lo[a] == b.hi[a]) {
            return self.classify_point(b.lo);
        }
        let mut boundary = false;
        for (a, face) in self.mask_faces() {
            if b.lo[a] >= face {
                return Ok(Classification::Carved);
            }
            if b.hi[a] > face {
                boundary = true;
            }
        }
        // Analytic solids first: they are cheap and may short-circuit.
        let mut order: Vec<&CarvedRegion> = self.regions.iter().collect();
        order.sort_by_key(|r| matches!(r.solid, Solid::Mesh(_)));
        for r in order {
            match self.region_box(r, b)? {
                Classification::Carved => return Ok(Classification::Carved),
                Classification::RetainBoundary => boundary = true,
                Classification::RetainInternal => {}
            }
        }
        Ok(if boundary {
            Classification::RetainBoundary
        } else {
            Classification::RetainInternal
        })
    }

    fn region_box(&self, r: &CarvedRegion, b: &Aabb) -> Result<Classification> {
        let d = self.dim;
        Ok(match &r.solid {
            Solid::Ball { center, radius } => {
                let (mut near, mut far) = (0.0f64, 0.0f64);
                for a in 0..d {
                    let n = (b.lo[a] - center[a]).max(center[a] - b.hi[a]).max(0.0);
                    let f = (center[a] - b.lo[a]).abs().max((b.hi[a] - center[a]).abs());
                    near += n * n;
                    far += f * f;
                }
                let r2 = radius * radius;
                if far <= r2 {
                    Classification::Carved
                } else if near > r2 {
                    Classification::RetainInternal
                } else {
                    Classification::RetainBoundary
                }
            }
            Solid::Cuboid { lo, hi } => {
                if (0..d).all(|a| lo[a] <= b.lo[a] && b.hi[a] <= hi[a]) {
                    Classification::Carved
                } else if (0..d).any(|a| b.hi[a] < lo[a] || b.lo[a] > hi[a]) {
                    Classification::RetainInternal
                } else {
                    Classification::RetainBoundary
                }
            }
            Solid::Mesh(inst) => {
                if inst.box_intersects(b) {
                    Classification::RetainBoundary
                } else if inst.point_in_out(b.center(), self.eps)? == InOut::In {
                    Classification::Carved
                } else {
                    Classification::RetainInternal
                }
            }
        })
    }

    /// Points are never boundary: on-surface points belong to the closed carved set.
    pub fn classify_point(&self, p: Vec3) -> Result<Classification> {
        for (a, face) in self.mask_faces() {
            if p[a] >= face - self.eps {
                return Ok(Classification::Carved);
            }
        }
        for r in &self.regions {
            let inside = match &r.solid {
                Solid::Ball { center, radius } => {
                    let d2: f64 = (0..self.dim).map(|a| (p[a] - center[a]).powi(2)).sum();
                    d2 <= radius * radius
                }
                Solid::Cuboid { lo, hi } => (0..self.dim).all(|a| lo[a] <= p[a] && p[a] <= hi[a]),
                Solid::Mesh(inst) => inst.point_in_out(p, self.eps)? == InOut::In,
            };
            if inside {
                return Ok(Classification::Carved);
            }
        }
        Ok(Classification::RetainInternal)
    }

    /// Signed distance to the union of carved solids, negative inside.
    /// `None` when nothing is carved. The extent mask is not a solid.
    pub fn signed_distance(&self, p: Vec3) -> Result<Option<f64>> {
        let dim = self.dim;
        let mut best: Option<f64> = None;
        for r in &self.regions {
            let d = match &r.solid {
                Solid::Ball { center, radius } => {
                    (0..dim).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>().sqrt() - radius
                }
                Solid::Cuboid { lo, hi } => {
                    let q: Vec<f64> = (0..dim).map(|a| (lo[a] - p[a]).max(p[a] - hi[a])).collect();
                    let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                    let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0);
                    outside + inside
                }
                Solid::Mesh(inst) => inst.surface.signed_distance(sub(p, inst.displacement))?,
            };
            best = Some(best.map_or(d, |b| b.min(d)));
        }
        Ok(best)
    }

    /// Finest refine level among regions whose boundary cuts the octant.
    pub fn boundary_refine_target(&self, key: &OctantKey) -> Result<Option<u8>> {
        let b = self.map.octant_box(key);
        let mut target: Option<u8> = None;
        for r in &self.regions {
            if self.region_box(r, &b)? == Classification::RetainBoundary {
                target = Some(target.map_or(r.refine_level, |t| t.max(r.refine_level)));
            }
        }
        Ok(target)
    }
}
