//! Ground-truth geometry: meshes, occupancy oracle, surface sampling,
//! iso-surface extraction and surface metrics.

pub mod bvh;
pub mod field;
pub mod inside;
pub mod marching_cubes;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod sampling;
pub mod spatial;
pub mod vec3;

pub use bvh::Bvh;
pub use field::{ScalarField, UNIT_BOX};
pub use inside::{point_in_mesh, InsideTester};
pub use marching_cubes::marching_cubes;
pub use mesh::{cube, icosphere, TriangleMesh};
pub use metrics::{chamfer_distance, normal_consistency, point_to_surface, METRIC_SAMPLES};
pub use obj::{read_obj, write_obj};
pub use sampling::{sample_surface, SurfaceSampleSet};
pub use spatial::PointGrid;
pub use vec3::Vec3;
