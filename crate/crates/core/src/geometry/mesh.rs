use std::collections::HashMap;

use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Indexed triangle mesh in camera space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional unit per-vertex normals, parallel to `vertices`.
    pub normals: Option<Vec<Vec3>>,
}

/// Smallest triangle area accepted by [`TriangleMesh::validate_closed`].
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            normals: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    fn area_vector(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        vec3::cross(vec3::sub(b, a), vec3::sub(c, a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * vec3::norm(self.area_vector(t))
    }

    /// Unit normal following the right-hand rule on the index order.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        vec3::normalize(self.area_vector(t)).unwrap_or([0.0, 0.0, 0.0])
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
                [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
            )
        }))
    }

    pub fn validate_indices(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some((t, tri)) = self
            .triangles
            .iter()
            .enumerate()
            .find(|(_, tri)| tri.iter().any(|&i| i >= n))
        {
            return Err(Error::Geometry(format!(
                "triangle {} references vertex {:?} but mesh has {} vertices",
                t, tri, n
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.vertices.len() {
                return Err(Error::Geometry("normal count differs from vertex count".into()));
            }
        }
        Ok(())
    }

    /// Number of triangles incident to each undirected edge.
    pub fn edge_degrees(&self) -> HashMap<(u32, u32), usize> {
        let mut deg = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *deg.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        deg
    }

    /// True when every edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_degrees().values().all(|&d| d == 2)
    }

    /// Checks the closed 2-manifold contract used for ground-truth meshes:
    /// valid indices, every edge of degree two with opposite orientations,
    /// and no zero-area triangles.
    pub fn validate_closed(&self) -> Result<()> {
        self.validate_indices()?;
        if self.triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(Error::Geometry(format!(
                    "edge ({}, {}) is not shared by exactly two consistently oriented triangles",
                    a, b
                )));
            }
        }
        if let Some(t) = (0..self.triangles.len()).find(|&t| self.triangle_area(t) <= MIN_TRIANGLE_AREA) {
            return Err(Error::Geometry(format!("triangle {} is degenerate", t)));
        }
        Ok(())
    }

    /// Number of vertex-connected components among referenced vertices.
    pub fn component_count(&self) -> usize {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; n];
        for tri in &self.triangles {
            for &i in tri {
                used[i as usize] = true;
            }
            let a = find(&mut parent, tri[0] as usize);
            for &i in &tri[1..] {
                let b = find(&mut parent, i as usize);
                parent[b] = a;
            }
        }
        (0..n)
            .filter(|&i| used[i] && find(&mut parent, i) == i)
            .count()
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for t in 0..self.triangles.len() {
            let an = self.area_vector(t);
            for &i in &self.triangles[t] {
                acc[i as usize] = vec3::add(acc[i as usize], an);
            }
        }
        self.normals = Some(
            acc.into_iter()
                .map(|n| vec3::normalize(n).unwrap_or([0.0, 0.0, 1.0]))
                .collect(),
        );
    }

    /// Applies `f` to every vertex; normals are transformed by `g` when present.
    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3, g: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            triangles: self.triangles.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|&n| g(n)).collect()),
        }
    }

    pub fn rotated_y(&self, angle: f64) -> Self {
        self.map_points(|p| vec3::rotate_y(p, angle), |n| vec3::rotate_y(n, angle))
    }

    /// Reverses triangle winding (and vertex normals).
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|&n| vec3::scale(n, -1.0)).collect()),
        }
    }
}

/// Axis-aligned box `[-h, h]^3` as 12 outward-facing triangles.
pub fn cube(half: f64) -> TriangleMesh {
    let vertices = (0..8)
        .map(|c| {
            [
                if c & 1 != 0 { half } else { -half },
                if c & 2 != 0 { half } else { -half },
                if c & 4 != 0 { half } else { -half },
            ]
        })
        .collect();
    // Faces listed counter-clockwise seen from outside.
    let faces: [[u32; 4]; 6] = [
        [0, 4, 6, 2],
        [1, 3, 7, 5],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 2, 3, 1],
        [4, 5, 7, 6],
    ];
    let triangles = faces
        .iter()
        .flat_map(|f| [[f[0], f[1], f[2]], [f[0], f[2], f[3]]])
        .collect();
    TriangleMesh::new(vertices, triangles)
}

/// Subdivided icosahedron projected onto a sphere of `radius` around `center`.
pub fn icosphere(radius: f64, subdivisions: u32, center: Vec3) -> TriangleMesh {
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
    .map(|&v| vec3::normalize(v).unwrap())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let m = vec3::lerp(verts[a as usize], verts[b as usize], 0.5);
                verts.push(vec3::normalize(m).unwrap());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for &[a, b, c] in &tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let normals = verts.clone();
    let vertices = verts
        .iter()
        .map(|&v| vec3::add(center, vec3::scale(v, radius)))
        .collect();
    TriangleMesh {
        vertices,
        triangles: tris,
        normals: Some(normals),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_is_closed_and_outward() {
        let c = cube(0.5);
        c.validate_closed().unwrap();
        assert!((c.signed_volume() - 1.0).abs() < 1e-12);
        assert!((c.surface_area() - 6.0).abs() < 1e-12);
        assert_eq!(c.component_count(), 1);
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let s = icosphere(0.7, 3, [0.0; 3]);
        assert_eq!(s.triangles.len(), 20 * 64);
        s.validate_closed().unwrap();
        let v = s.signed_volume();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 0.343;
        assert!(v > 0.0 && (v - analytic).abs() / analytic < 0.02);
        for t in 0..s.triangles.len() {
            let [a, b, c] = s.corners(t);
            let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
            assert!(vec3::dot(s.face_normal(t), centroid) > 0.0);
        }
    }

    #[test]
    fn open_mesh_fails_validation() {
        let mut c = cube(1.0);
        c.triangles.pop();
        assert!(c.validate_closed().is_err());
        assert!(!c.is_watertight());
    }

    #[test]
    fn flipped_mesh_has_negative_volume() {
        let c = cube(0.5).flipped();
        assert!((c.signed_volume() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_index_is_reported() {
        let m = TriangleMesh::new(vec![[0.0; 3]; 2], vec![[0, 1, 2]]);
        assert!(m.validate_indices().is_err());
    }
}
