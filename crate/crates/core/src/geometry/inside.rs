//! Inside/outside oracle for closed meshes by ray-crossing parity.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::bvh::{Bvh, RayCast};
use super::field::ScalarField;
use super::mesh::TriangleMesh;
use super::vec3::{self, Vec3};
use crate::error::Result;

const DIRECTION_COUNT: usize = 32;
/// Points closer than this to the surface count as outside.
const SURFACE_EPS: f64 = 1e-10;

/// Fixed pseudo-random ray directions, tried in order until one yields a
/// clean parity count.
fn directions() -> &'static [Vec3] {
    static DIRS: OnceLock<Vec<Vec3>> = OnceLock::new();
    DIRS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1e5);
        let mut out = Vec::with_capacity(DIRECTION_COUNT);
        while out.len() < DIRECTION_COUNT {
            let v = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let n = vec3::norm(v);
            if (0.2..=1.0).contains(&n) {
                out.push(vec3::scale(v, 1.0 / n));
            }
        }
        out
    })
}

/// Occupancy oracle bound to one closed mesh.
#[derive(Debug, Clone)]
pub struct InsideTester {
    bvh: Bvh,
}

impl InsideTester {
    /// Fails on meshes that are not closed 2-manifolds.
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        mesh.validate_closed()?;
        Ok(Self {
            bvh: Bvh::build(mesh),
        })
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// True iff `p` lies strictly inside the mesh.
    pub fn contains(&self, p: Vec3) -> bool {
        for &d in directions() {
            if let RayCast::Hits(h) = self.bvh.cast(p, d) {
                return h.len() % 2 == 1;
            }
        }
        // Every direction degenerate: only happens on the surface itself.
        match self.bvh.closest_point(p) {
            Some(c) if c.dist2.sqrt() <= SURFACE_EPS => false,
            _ => self.contains_slow(p),
        }
    }

    /// Majority vote over many random directions, ignoring degenerate ones.
    fn contains_slow(&self, p: Vec3) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(p[0].to_bits() ^ p[1].to_bits().rotate_left(21) ^ p[2].to_bits().rotate_left(42));
        let (mut inside, mut outside) = (0, 0);
        for _ in 0..256 {
            let d = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let Some(d) = vec3::normalize(d) else { continue };
            if let RayCast::Hits(h) = self.bvh.cast(p, d) {
                if h.len() % 2 == 1 {
                    inside += 1;
                } else {
                    outside += 1;
                }
            }
        }
        inside > outside
    }

    /// 0/1 occupancy at every cell center of an `R^3` grid.
    ///
    /// Each (x, y) column is resolved with a single ray along +z; columns
    /// whose ray grazes an edge fall back to per-point tests.
    pub fn occupancy_grid(&self, resolution: usize, bounds: (Vec3, Vec3)) -> Result<ScalarField> {
        let layout = ScalarField::constant(resolution, bounds, 0.0)?;
        let r = resolution;
        let below = bounds.0[2] - 1.0;
        let columns: Vec<Vec<f32>> = (0..r * r)
            .into_par_iter()
            .map(|col| {
                let (i, j) = (col / r, col % r);
                let (x, y) = (layout.coordinate(0, i), layout.coordinate(1, j));
                let zs: Vec<f64> = (0..r).map(|k| layout.coordinate(2, k)).collect();
                match self.bvh.cast([x, y, below], [0.0, 0.0, 1.0]) {
                    RayCast::Hits(h) => {
                        let crossings: Vec<f64> = h.iter().map(|hit| below + hit.t).collect();
                        zs.iter()
                            .map(|&z| {
                                if crossings.iter().any(|&c| (c - z).abs() < 1e-9) {
                                    return self.contains([x, y, z]) as u8 as f32;
                                }
                                let n = crossings.iter().take_while(|&&c| c < z).count();
                                (n % 2) as f32
                            })
                            .collect()
                    }
                    RayCast::Degenerate => zs
                        .iter()
                        .map(|&z| self.contains([x, y, z]) as u8 as f32)
                        .collect(),
                }
            })
            .collect();
        ScalarField::new(resolution, bounds, columns.concat())
    }
}

/// One-shot inside test; prefer [`InsideTester`] for many queries.
pub fn point_in_mesh(mesh: &TriangleMesh, p: Vec3) -> Result<bool> {
    Ok(InsideTester::new(mesh)?.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::field::UNIT_BOX;
    use crate::geometry::mesh::{cube, icosphere};

    #[test]
    fn cube_examples() {
        let c = cube(0.5);
        assert!(point_in_mesh(&c, [0.0, 0.0, 0.0]).unwrap());
        assert!(!point_in_mesh(&c, [2.0, 0.0, 0.0]).unwrap());
        // Axis-aligned positions hit edges along many directions.
        let t = InsideTester::new(&c).unwrap();
        assert!(t.contains([0.25, 0.25, 0.25]));
        assert!(!t.contains([0.5, 0.0, 0.0]));
        assert!(!t.contains([0.75, 0.0, 0.0]));
    }

    #[test]
    fn refuses_open_mesh() {
        let mut m = cube(0.5);
        m.triangles.pop();
        assert!(point_in_mesh(&m, [0.0; 3]).is_err());
    }

    #[test]
    fn sphere_agreement() {
        let s = icosphere(0.7, 3, [0.0; 3]);
        let t = InsideTester::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 2000 {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            // The inscribed polyhedron deviates from the sphere by < 0.002.
            let d = vec3::norm(p) - 0.7;
            if d.abs() < 0.003 {
                continue;
            }
            assert_eq!(t.contains(p), d < 0.0, "{p:?}");
            checked += 1;
        }
    }

    #[test]
    fn grid_matches_point_queries() {
        let s = icosphere(0.6, 2, [0.1, 0.0, -0.1]).rotated_y(0.3);
        let t = InsideTester::new(&s).unwrap();
        let g = t.occupancy_grid(12, UNIT_BOX).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    let want = t.contains(g.cell_center(i, j, k)) as u8 as f32;
                    assert_eq!(g.get(i, j, k), want);
                }
            }
        }
        // The center column runs along the split diagonals of the cube faces.
        let c = InsideTester::new(&cube(0.5)).unwrap();
        let g = c.occupancy_grid(8, UNIT_BOX).unwrap();
        assert_eq!(g.values().iter().filter(|&&v| v == 1.0).count(), 64);
    }

    #[test]
    fn invariant_to_triangle_order_and_rotation() {
        let s = icosphere(0.5, 2, [0.2, 0.1, 0.0]);
        let mut shuffled = s.clone();
        shuffled.triangles.reverse();
        shuffled.triangles.rotate_left(17);
        let a = InsideTester::new(&s).unwrap();
        let b = InsideTester::new(&shuffled).unwrap();
        let r = InsideTester::new(&s.rotated_y(1.1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            assert_eq!(a.contains(p), b.contains(p));
            assert_eq!(a.contains(p), r.contains(vec3::rotate_y(p, 1.1)));
        }
    }
}
