use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::mesh::TriangleMesh;
use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Points drawn on a mesh surface with the normal of their source triangle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSampleSet {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<usize>,
}

impl SurfaceSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `n` points uniformly by area.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> Result<SurfaceSampleSet> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    if mesh.triangles.is_empty() {
        return Err(Error::Geometry("cannot sample an empty mesh".into()));
    }
    mesh.validate_indices()?;
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let pick = WeightedIndex::new(&areas)
        .map_err(|e| Error::Geometry(format!("cannot sample surface: {e}")))?;
    let mut out = SurfaceSampleSet {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        triangles: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let t = pick.sample(rng);
        let mut u: f64 = rng.random();
        let mut v: f64 = rng.random();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.corners(t);
        let p = vec3::add(
            a,
            vec3::add(vec3::scale(vec3::sub(b, a), u), vec3::scale(vec3::sub(c, a), v)),
        );
        out.points.push(p);
        out.normals.push(mesh.face_normal(t));
        out.triangles.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bvh::closest_point_on_triangle;
    use crate::geometry::mesh::icosphere;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_triangle() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        );
        let s = sample_surface(&m, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.len(), 100);
        for p in &s.points {
            assert!(p[2] == 0.0 && p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12);
        }
        assert!(s.normals.iter().all(|&n| n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn area_proportional_counts() {
        // Areas 1 and 3.
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [5.0, 0.0, 1.0],
                [8.0, 0.0, 1.0],
                [5.0, 2.0, 1.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let n = 40_000;
        let s = sample_surface(&m, n, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let first = s.triangles.iter().filter(|&&t| t == 0).count() as f64;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((first - 10_000.0).abs() <= 3.0 * sigma, "{first}");
    }

    #[test]
    fn points_on_source_triangle_with_unit_normals() {
        let m = icosphere(0.5, 2, [0.1, 0.2, 0.3]);
        let s = sample_surface(&m, 2000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for i in 0..s.len() {
            let q = closest_point_on_triangle(s.points[i], &m.corners(s.triangles[i]));
            assert!(vec3::dist2(q, s.points[i]).sqrt() < 1e-6);
            assert!((vec3::norm(s.normals[i]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_empty_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_surface(&TriangleMesh::default(), 5, &mut rng).is_err());
        assert!(sample_surface(&icosphere(1.0, 0, [0.0; 3]), 0, &mut rng).is_err());
    }
}
