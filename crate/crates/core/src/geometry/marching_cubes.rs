//! Iso-surface extraction on a [`ScalarField`].
//!
//! The case table is generated rather than transcribed. Each cube face is
//! walked counter-clockwise as seen from outside the cell; every maximal run
//! of inside corners contributes one segment from the crossing where the walk
//! enters the run to the crossing where it leaves. A face shared by two cells
//! is walked in opposite directions from either side, so both cells pair the
//! same crossings (ambiguous faces always separate the inside corners) and
//! the resulting surface is closed with consistent orientation. Segments
//! chain into loops; triangles get the loop directly, longer loops are fanned
//! around their centroid.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::field::ScalarField;
use super::mesh::TriangleMesh;
use super::vec3::{self, Vec3};

/// Corner `c` of a cell sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const FACES: [[u8; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

/// Keeps interpolated vertices off the grid samples so no triangle collapses.
const T_MARGIN: f64 = 1e-4;

/// Cell edge as an ordered corner pair `(lo, hi)` differing in one bit.
type Edge = (u8, u8);

fn edge(a: u8, b: u8) -> Edge {
    (a.min(b), a.max(b))
}

fn case_loops(case: u8) -> Vec<Vec<Edge>> {
    let inside = |c: u8| case & (1 << c) != 0;
    let mut next: HashMap<Edge, Edge> = HashMap::new();
    let mut starts: Vec<Edge> = Vec::new();
    for face in FACES {
        for m in 0..4 {
            let (a, b) = (face[m], face[(m + 1) % 4]);
            if inside(a) || !inside(b) {
                continue;
            }
            // Walk the inside run starting at b.
            let mut n = (m + 1) % 4;
            while inside(face[(n + 1) % 4]) {
                n = (n + 1) % 4;
            }
            let entry = edge(a, b);
            let exit = edge(face[n], face[(n + 1) % 4]);
            next.insert(entry, exit);
            starts.push(entry);
        }
    }
    let mut loops = Vec::new();
    let mut used: Vec<Edge> = Vec::new();
    for s in starts {
        if used.contains(&s) {
            continue;
        }
        let mut lp = vec![s];
        used.push(s);
        let mut cur = next[&s];
        while cur != s {
            lp.push(cur);
            used.push(cur);
            cur = next[&cur];
        }
        loops.push(lp);
    }
    loops
}

fn table() -> &'static [Vec<Vec<Edge>>] {
    static TABLE: OnceLock<Vec<Vec<Vec<Edge>>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(case_loops).collect())
}

/// Extracts the `threshold` level set, treating samples `>= threshold` as
/// inside. Triangles face away from the inside region. A field without a
/// crossing yields an empty mesh.
pub fn marching_cubes(field: &ScalarField, threshold: f32) -> TriangleMesh {
    let r = field.resolution();
    let values = field.values();
    let table = table();
    let coords: Vec<[f64; 3]> = (0..r)
        .map(|i| [field.coordinate(0, i), field.coordinate(1, i), field.coordinate(2, i)])
        .collect();
    let mut vertex_of: HashMap<usize, u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    let sample = |i: usize, j: usize, k: usize| values[(i * r + j) * r + k];
    let position = |i: usize, j: usize, k: usize| [coords[i][0], coords[j][1], coords[k][2]];

    for i in 0..r - 1 {
        for j in 0..r - 1 {
            for k in 0..r - 1 {
                let mut corner = [0f32; 8];
                let mut case = 0u8;
                for (c, v) in corner.iter_mut().enumerate() {
                    *v = sample(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                    if *v >= threshold {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for lp in &table[case as usize] {
                    let ids: Vec<u32> = lp
                        .iter()
                        .map(|&(a, b)| {
                            let (a, b) = (a as usize, b as usize);
                            let (ai, aj, ak) = (i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                            let axis = (b ^ a).trailing_zeros() as usize;
                            let key = ((ai * r + aj) * r + ak) * 3 + axis;
                            *vertex_of.entry(key).or_insert_with(|| {
                                let (bi, bj, bk) = (i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                                let (va, vb) = (corner[a] as f64, corner[b] as f64);
                                let t = ((threshold as f64 - va) / (vb - va)).clamp(T_MARGIN, 1.0 - T_MARGIN);
                                vertices.push(vec3::lerp(position(ai, aj, ak), position(bi, bj, bk), t));
                                (vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    if ids.len() == 3 {
                        triangles.push([ids[0], ids[1], ids[2]]);
                        continue;
                    }
                    let centroid = ids
                        .iter()
                        .fold([0.0; 3], |acc, &v| vec3::add(acc, vertices[v as usize]));
                    vertices.push(vec3::scale(centroid, 1.0 / ids.len() as f64));
                    let c = (vertices.len() - 1) as u32;
                    for m in 0..ids.len() {
                        triangles.push([c, ids[m], ids[(m + 1) % ids.len()]]);
                    }
                }
            }
        }
    }
    let mut mesh = TriangleMesh::new(vertices, triangles);
    if !mesh.is_empty() {
        mesh.compute_vertex_normals();
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::field::UNIT_BOX;
    use proptest::prelude::*;

    fn corner_field(case: u8) -> ScalarField {
        let mut values = vec![0.0f32; 8];
        for c in 0..8usize {
            if case & (1 << c) != 0 {
                // Sample (x, y, z) lives at x*4 + y*2 + z.
                values[(c & 1) * 4 + ((c >> 1) & 1) * 2 + ((c >> 2) & 1)] = 1.0;
            }
        }
        ScalarField::new(2, UNIT_BOX, values).unwrap()
    }

    #[test]
    fn table_pairs_every_crossing_once() {
        for case in 1..255u8 {
            let loops = &table()[case as usize];
            let mut seen: Vec<Edge> = loops.iter().flatten().copied().collect();
            let n = seen.len();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), n, "case {case}");
            let crossing = (0..8u8)
                .flat_map(|a| [1u8, 2, 4].map(move |bit| (a, a | bit)))
                .filter(|&(a, b)| a != b && ((case >> a) & 1) != ((case >> b) & 1))
                .count();
            assert_eq!(n, crossing, "case {case}");
            assert!(loops.iter().all(|l| l.len() >= 3));
        }
    }

    #[test]
    fn single_corner_gives_one_outward_triangle() {
        let m = marching_cubes(&corner_field(1), 0.5);
        assert_eq!(m.triangles.len(), 1);
        let n = m.face_normal(0);
        assert!(n.iter().all(|&c| c > 0.0), "{n:?}");
    }

    #[test]
    fn constant_field_is_empty() {
        assert!(marching_cubes(&ScalarField::constant(4, UNIT_BOX, 0.7).unwrap(), 0.5).is_empty());
        assert!(marching_cubes(&ScalarField::constant(4, UNIT_BOX, 0.2).unwrap(), 0.5).is_empty());
    }

    #[test]
    fn sphere_vertices_near_level_set() {
        let f = ScalarField::from_fn(64, UNIT_BOX, |p| 1.0 - vec3::norm(p) / 0.6).unwrap();
        let m = marching_cubes(&f, 0.5);
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        let diag = f.cell_diagonal();
        for v in &m.vertices {
            assert!((vec3::norm(*v) - 0.3).abs() <= diag);
        }
    }

    /// Symmetric Hausdorff distance between an extracted mesh and the sphere
    /// of radius 0.3, estimated from dense samples on both surfaces.
    fn sphere_hausdorff(resolution: usize) -> f64 {
        use crate::geometry::{metrics::max_point_to_surface, mesh::icosphere, sampling::sample_surface};
        use rand::SeedableRng;
        let f = ScalarField::from_fn(resolution, UNIT_BOX, |p| 1.0 - vec3::norm(p) / 0.6).unwrap();
        let m = marching_cubes(&f, 0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let s = sample_surface(&m, 20_000, &mut rng).unwrap();
        let to_sphere = s
            .points
            .iter()
            .chain(&m.vertices)
            .map(|&p| (vec3::norm(p) - 0.3).abs())
            .fold(0.0, f64::max);
        let sphere = icosphere(1.0, 5, [0.0; 3]);
        let on_sphere: Vec<Vec3> = sphere.vertices.iter().map(|&v| vec3::scale(v, 0.3)).collect();
        to_sphere.max(max_point_to_surface(&on_sphere, &m).unwrap())
    }

    #[test]
    fn first_order_convergence() {
        let (h32, h64) = (sphere_hausdorff(32), sphere_hausdorff(64));
        assert!(h32 / h64 >= 1.8, "{h32} / {h64}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn boundary_clamped_fields_are_watertight(
            r in 3usize..9,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..r * r * r)
                .map(|_| if rng.random_bool(0.5) { rng.random_range(0.5..=1.0) } else { rng.random_range(0.0..0.5) })
                .collect();
            let mut f = ScalarField::new(r, UNIT_BOX, values).unwrap();
            f.clamp_boundary();
            let m = marching_cubes(&f, 0.5);
            if !m.is_empty() {
                prop_assert!(m.is_watertight());
                prop_assert!(m.validate_closed().is_ok());
                prop_assert!(m.signed_volume() > 0.0);
            }
        }
    }
}
