//! Carved geometry: STL surfaces, In/Out and overlap queries, and the
//! subdomain classifier built on them.

mod classify;
pub mod shapes;
mod stl;
mod surface;
pub mod vec3;

pub use classify::{
    CarvedRegion, Classification, DomainMap, GeometryInstance, Solid, SubdomainClassifier,
};
pub use stl::{encode_ascii_stl, encode_binary_stl, parse_stl, read_stl, write_binary_stl, Triangle};
pub use surface::{closest_point_on_triangle, signed_distance, tri_box_overlap, InOut, TriangleSurface};
pub use vec3::{Aabb, Vec3};
