//! Bounding-volume hierarchy over mesh triangles: ray hit enumeration and
//! closest-point queries.

use super::mesh::TriangleMesh;
use super::vec3::{self, Vec3};

const LEAF_SIZE: usize = 4;
/// Barycentric slack below which a ray hit is treated as grazing an edge.
const EDGE_EPS: f64 = 1e-9;
/// Hits closer than this to the ray origin are treated as degenerate.
pub const ORIGIN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: Vec3) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn dist2(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Slab test for the half-line `origin + t dir`, `t >= 0`.
    fn hit_by_ray(&self, origin: Vec3, dir: Vec3) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = ((self.lo[k] - origin[k]) * inv, (self.hi[k] - origin[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..start+count` into `order`; inner: children at `left`, `left+1`.
    start: usize,
    count: usize,
    left: usize,
}

/// One ray/triangle intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: usize,
    /// Barycentric weights of corners 1 and 2.
    pub uv: (f64, f64),
}

/// Outcome of enumerating hits along a ray.
#[derive(Debug, Clone, PartialEq)]
pub enum RayCast {
    Hits(Vec<RayHit>),
    /// The ray grazed an edge/vertex or started on the surface.
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
}

/// Closest surface point to a query.
#[derive(Debug, Clone, Copy)]
pub struct ClosestPoint {
    pub dist2: f64,
    pub triangle: usize,
    pub point: Vec3,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.corners(t)).collect();
        let centroids: Vec<Vec3> = tris
            .iter()
            .map(|[a, b, c]| vec3::scale(vec3::add(vec3::add(*a, *b), *c), 1.0 / 3.0))
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            nodes.push(Node {
                bounds: Aabb::empty(),
                start: 0,
                count: tris.len(),
                left: 0,
            });
            let mut stack = vec![0usize];
            while let Some(ni) = stack.pop() {
                let (start, count) = (nodes[ni].start, nodes[ni].count);
                let mut bounds = Aabb::empty();
                let mut cb = Aabb::empty();
                for &t in &order[start..start + count] {
                    for p in tris[t] {
                        bounds.grow(p);
                    }
                    cb.grow(centroids[t]);
                }
                nodes[ni].bounds = bounds;
                if count <= LEAF_SIZE {
                    continue;
                }
                let ext = vec3::sub(cb.hi, cb.lo);
                let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
                    0
                } else if ext[1] >= ext[2] {
                    1
                } else {
                    2
                };
                let slice = &mut order[start..start + count];
                let mid = count / 2;
                slice.select_nth_unstable_by(mid, |&a, &b| {
                    centroids[a][axis]
                        .total_cmp(&centroids[b][axis])
                        .then(a.cmp(&b))
                });
                let left = nodes.len();
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    start,
                    count: mid,
                    left: 0,
                });
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    start: start + mid,
                    count: count - mid,
                    left: 0,
                });
                nodes[ni].left = left;
                nodes[ni].count = 0;
                stack.push(left);
                stack.push(left + 1);
            }
        }
        Self { nodes, order, tris }
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    /// Enumerates all triangle hits with `t > 0` along `origin + t dir`.
    pub fn cast(&self, origin: Vec3, dir: Vec3) -> RayCast {
        let mut hits = Vec::new();
        let mut degenerate = false;
        self.visit_hits(origin, dir, |hit, grazing| {
            if grazing || hit.t.abs() <= ORIGIN_EPS {
                degenerate = true;
                return false;
            }
            if hit.t > 0.0 {
                hits.push(hit);
            }
            true
        });
        if degenerate {
            return RayCast::Degenerate;
        }
        sort_hits(&mut hits);
        RayCast::Hits(hits)
    }

    /// All hits with `t > 0`, edge grazes included; a ray through a shared
    /// edge may report both neighbours. Suited to first/last-hit queries.
    pub fn cast_lenient(&self, origin: Vec3, dir: Vec3) -> Vec<RayHit> {
        let mut hits = Vec::new();
        self.visit_hits(origin, dir, |hit, _| {
            if hit.t > 0.0 {
                hits.push(hit);
            }
            true
        });
        sort_hits(&mut hits);
        hits
    }

    /// Calls `f(hit, grazing)` for candidate hits until it returns false.
    fn visit_hits(&self, origin: Vec3, dir: Vec3, mut f: impl FnMut(RayHit, bool) -> bool) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds.hit_by_ray(origin, dir) {
                continue;
            }
            if node.count == 0 {
                stack.push(node.left);
                stack.push(node.left + 1);
                continue;
            }
            for &t in &self.order[node.start..node.start + node.count] {
                let (th, u, v, grazing) = match intersect(&self.tris[t], origin, dir) {
                    Intersection::Miss => continue,
                    Intersection::Coplanar => (0.0, 0.0, 0.0, true),
                    Intersection::Hit { t, u, v, grazing } => (t, u, v, grazing),
                };
                let hit = RayHit {
                    t: th,
                    triangle: t,
                    uv: (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)),
                };
                if !f(hit, grazing) {
                    return;
                }
            }
        }
    }

    pub fn closest_point(&self, p: Vec3) -> Option<ClosestPoint> {
        let mut best: Option<ClosestPoint> = None;
        let mut stack = vec![0usize];
        if self.nodes.is_empty() {
            return None;
        }
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let bound = best.map_or(f64::INFINITY, |b| b.dist2);
            if node.bounds.dist2(p) > bound {
                continue;
            }
            if node.count == 0 {
                let (l, r) = (node.left, node.left + 1);
                let (dl, dr) = (self.nodes[l].bounds.dist2(p), self.nodes[r].bounds.dist2(p));
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
                continue;
            }
            for &t in &self.order[node.start..node.start + node.count] {
                let q = closest_point_on_triangle(p, &self.tris[t]);
                let d = vec3::dist2(p, q);
                let better = match best {
                    None => true,
                    Some(b) => d < b.dist2 || (d == b.dist2 && t < b.triangle),
                };
                if better {
                    best = Some(ClosestPoint {
                        dist2: d,
                        triangle: t,
                        point: q,
                    });
                }
            }
        }
        best
    }
}

fn sort_hits(hits: &mut [RayHit]) {
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.triangle.cmp(&b.triangle)));
}

enum Intersection {
    Miss,
    /// Ray lies in the triangle's plane.
    Coplanar,
    Hit { t: f64, u: f64, v: f64, grazing: bool },
}

/// Moller-Trumbore, flagging hits that graze an edge within `EDGE_EPS`.
fn intersect(tri: &[Vec3; 3], origin: Vec3, dir: Vec3) -> Intersection {
    let e1 = vec3::sub(tri[1], tri[0]);
    let e2 = vec3::sub(tri[2], tri[0]);
    let pv = vec3::cross(dir, e2);
    let det = vec3::dot(e1, pv);
    let scale = vec3::norm(e1) * vec3::norm(e2) * vec3::norm(dir);
    if det.abs() <= 1e-14 * scale {
        // Ray parallel to the plane: only a problem if it lies in it.
        let n = vec3::cross(e1, e2);
        let off = vec3::dot(n, vec3::sub(origin, tri[0]));
        return if off.abs() <= 1e-12 * vec3::norm(n).max(1e-300) {
            Intersection::Coplanar
        } else {
            Intersection::Miss
        };
    }
    let inv = 1.0 / det;
    let tv = vec3::sub(origin, tri[0]);
    let u = vec3::dot(tv, pv) * inv;
    if u < -EDGE_EPS || u > 1.0 + EDGE_EPS {
        return Intersection::Miss;
    }
    let qv = vec3::cross(tv, e1);
    let v = vec3::dot(dir, qv) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return Intersection::Miss;
    }
    let t = vec3::dot(e2, qv) * inv;
    let grazing = u < EDGE_EPS || v < EDGE_EPS || u + v > 1.0 - EDGE_EPS;
    // Grazing hits behind the origin never affect the count.
    if grazing && t < -ORIGIN_EPS {
        return Intersection::Miss;
    }
    Intersection::Hit { t, u, v, grazing }
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let d1 = vec3::dot(ab, ap);
    let d2 = vec3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = vec3::sub(p, b);
    let d3 = vec3::dot(ab, bp);
    let d4 = vec3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return vec3::add(a, vec3::scale(ab, v));
    }
    let cp = vec3::sub(p, c);
    let d5 = vec3::dot(ab, cp);
    let d6 = vec3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return vec3::add(a, vec3::scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return vec3::add(b, vec3::scale(vec3::sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::{cube, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closest_point_matches_brute_force() {
        let mesh = icosphere(0.5, 2, [0.1, -0.2, 0.05]);
        let bvh = Bvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let fast = bvh.closest_point(p).unwrap().dist2;
            let brute = (0..mesh.triangles.len())
                .map(|t| vec3::dist2(p, closest_point_on_triangle(p, &mesh.corners(t))))
                .fold(f64::INFINITY, f64::min);
            assert!((fast - brute).abs() < 1e-15, "{fast} vs {brute}");
        }
    }

    #[test]
    fn point_above_triangle_interior() {
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let q = closest_point_on_triangle([0.25, 0.25, 0.3], &tri);
        assert_eq!(q, [0.25, 0.25, 0.0]);
        let q = closest_point_on_triangle([2.0, 2.0, 0.0], &tri);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ray_through_cube_hits_twice() {
        let bvh = Bvh::build(&cube(0.5));
        match bvh.cast([0.1, 0.2, -3.0], [0.0, 0.0, 1.0]) {
            RayCast::Hits(h) => {
                assert_eq!(h.len(), 2);
                assert!((h[0].t - 2.5).abs() < 1e-12 && (h[1].t - 3.5).abs() < 1e-12);
            }
            RayCast::Degenerate => panic!("unexpected degenerate"),
        }
        // Through the face diagonal shared by two triangles.
        assert_eq!(bvh.cast([0.0, 0.0, -3.0], [0.0, 0.0, 1.0]), RayCast::Degenerate);
    }
}
