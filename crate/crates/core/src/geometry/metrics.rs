//! Surface comparison metrics. Distances are unsquared, in box units.

use rayon::prelude::*;

use super::bvh::Bvh;
use super::mesh::TriangleMesh;
use super::spatial::PointGrid;
use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Sample count per surface used by reconstruction reports.
pub const METRIC_SAMPLES: usize = 10_000;

fn nonempty(what: &str, n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::Geometry(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// Mean nearest-neighbour distance from every point of `from` to `to`.
pub fn mean_nearest_distance(from: &[Vec3], to: &PointGrid) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|&p| to.nearest(p).1.sqrt()).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Half the sum of the two directed mean nearest-neighbour distances.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty("first point set", a.len())?;
    nonempty("second point set", b.len())?;
    let ga = PointGrid::new(a).expect("nonempty");
    let gb = PointGrid::new(b).expect("nonempty");
    Ok(0.5 * (mean_nearest_distance(a, &gb) + mean_nearest_distance(b, &ga)))
}

fn surface_distances(points: &[Vec3], bvh: &Bvh) -> Vec<f64> {
    points
        .par_iter()
        .map(|&p| bvh.closest_point(p).expect("nonempty mesh").dist2.sqrt())
        .collect()
}

/// Mean exact distance from `points` to the triangles of `mesh`.
pub fn point_to_surface(points: &[Vec3], mesh: &TriangleMesh) -> Result<f64> {
    nonempty("point set", points.len())?;
    nonempty("mesh", mesh.triangles.len())?;
    let d = surface_distances(points, &Bvh::build(mesh));
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Largest distance from `points` to the triangles of `mesh`.
pub fn max_point_to_surface(points: &[Vec3], mesh: &TriangleMesh) -> Result<f64> {
    nonempty("point set", points.len())?;
    nonempty("mesh", mesh.triangles.len())?;
    Ok(surface_distances(points, &Bvh::build(mesh))
        .into_iter()
        .fold(0.0, f64::max))
}

/// Mean cosine between each normal and the face normal of the closest
/// triangle of `mesh`.
pub fn normal_consistency(points: &[Vec3], normals: &[Vec3], mesh: &TriangleMesh) -> Result<f64> {
    nonempty("point set", points.len())?;
    nonempty("mesh", mesh.triangles.len())?;
    if points.len() != normals.len() {
        return Err(Error::shape(
            "normal_consistency",
            format!("{} points but {} normals", points.len(), normals.len()),
        ));
    }
    if let Some(i) = normals.iter().position(|&n| vec3::norm(n) < 1e-9) {
        return Err(Error::Geometry(format!("normal {i} has zero length")));
    }
    let bvh = Bvh::build(mesh);
    let cos: Vec<f64> = points
        .par_iter()
        .zip(normals.par_iter())
        .map(|(&p, &n)| {
            let t = bvh.closest_point(p).expect("nonempty mesh").triangle;
            let n = vec3::scale(n, 1.0 / vec3::norm(n));
            vec3::dot(n, mesh.face_normal(t)).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(cos.iter().sum::<f64>() / cos.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::icosphere;
    use crate::geometry::sampling::sample_surface;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chamfer_examples() {
        let a = vec![[0.0, 0.0, 0.0]];
        let b = vec![[1.0, 0.0, 0.0]];
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 1.0);
        let s = sample_surface(&icosphere(0.5, 2, [0.0; 3]), 500, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let t = sample_surface(&icosphere(0.4, 1, [0.1; 3]), 300, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(chamfer_distance(&s.points, &s.points).unwrap(), 0.0);
        let st = chamfer_distance(&s.points, &t.points).unwrap();
        assert_eq!(st, chamfer_distance(&t.points, &s.points).unwrap());
        assert!(st > 0.0);
        assert!(chamfer_distance(&[], &a).is_err());
    }

    #[test]
    fn point_to_surface_examples() {
        let tri = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        );
        assert!((point_to_surface(&[[0.2, 0.2, 0.37]], &tri).unwrap() - 0.37).abs() < 1e-12);

        let sphere = icosphere(0.5, 3, [0.0; 3]);
        let own = sample_surface(&sphere, 2000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(point_to_surface(&own.points, &sphere).unwrap() < 1e-6);

        let dilated = icosphere(0.55, 3, [0.0; 3]);
        let d = point_to_surface(&own.points, &dilated).unwrap();
        assert!((d - 0.05).abs() < 0.005, "{d}");

        let gt = sample_surface(&dilated, 10_000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(d <= chamfer_distance(&own.points, &gt.points).unwrap());
        assert!(point_to_surface(&[], &sphere).is_err());
    }

    #[test]
    fn normal_consistency_examples() {
        let sphere = icosphere(0.5, 2, [0.0; 3]);
        let s = sample_surface(&sphere, 3000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let same = normal_consistency(&s.points, &s.normals, &sphere).unwrap();
        assert!((same - 1.0).abs() < 1e-6);
        let flipped: Vec<Vec3> = s.normals.iter().map(|&n| vec3::scale(n, -1.0)).collect();
        assert!((normal_consistency(&s.points, &flipped, &sphere).unwrap() + 1.0).abs() < 1e-6);
        // Tilt each normal by 60 degrees towards an arbitrary perpendicular.
        let tilted: Vec<Vec3> = s
            .normals
            .iter()
            .map(|&n| {
                let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let perp = vec3::normalize(vec3::cross(n, helper)).unwrap();
                let a = 60f64.to_radians();
                vec3::add(vec3::scale(n, a.cos()), vec3::scale(perp, a.sin()))
            })
            .collect();
        let c = normal_consistency(&s.points, &tilted, &sphere).unwrap();
        assert!((c - 0.5).abs() < 0.02, "{c}");
        assert!(normal_consistency(&s.points[..1], &[[0.0; 3]], &sphere).is_err());
    }
}
