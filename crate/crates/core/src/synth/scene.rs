//! Procedural body-like shapes: a smooth union of simple primitives meshed
//! by marching cubes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{icosphere, marching_cubes, ScalarField, TriangleMesh};

/// Radius of the vertical cylinder every scene is fitted into, so any yaw
/// keeps the mesh inside `[-0.9, 0.9]^3`.
pub const FIT_RADIUS: f64 = 0.78;
pub const FIT_HALF_HEIGHT: f64 = 0.8;
pub const MAX_ATTEMPTS: u32 = 5;

const MESH_BOUNDS: (Vec3, Vec3) = ([-0.95; 3], [0.95; 3]);
const BLEND: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Capsule { a: Vec3, b: Vec3, radius: f64 },
    /// Box rotated by `yaw` about +y.
    Box { center: Vec3, half: Vec3, yaw: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => vec3::norm(vec3::sub(p, center)) - radius,
            Primitive::Capsule { a, b, radius } => {
                let ab = vec3::sub(b, a);
                let t = (vec3::dot(vec3::sub(p, a), ab) / vec3::dot(ab, ab)).clamp(0.0, 1.0);
                vec3::norm(vec3::sub(p, vec3::lerp(a, b, t))) - radius
            }
            Primitive::Box { center, half, yaw } => {
                let q = vec3::rotate_y(vec3::sub(p, center), -yaw);
                let d = [0, 1, 2].map(|k| q[k].abs() - half[k]);
                let outside = vec3::norm(d.map(|v| v.max(0.0)));
                outside + d[0].max(d[1]).max(d[2]).min(0.0)
            }
        }
    }

    /// Conservative (max radius in xz about the y axis, min y, max y).
    fn extent(&self) -> (f64, f64, f64) {
        let radial = |p: Vec3| (p[0] * p[0] + p[2] * p[2]).sqrt();
        match *self {
            Primitive::Sphere { center, radius } => (radial(center) + radius, center[1] - radius, center[1] + radius),
            Primitive::Capsule { a, b, radius } => (
                radial(a).max(radial(b)) + radius,
                a[1].min(b[1]) - radius,
                a[1].max(b[1]) + radius,
            ),
            Primitive::Box { center, half, .. } => {
                let r = (half[0] * half[0] + half[2] * half[2]).sqrt();
                (radial(center) + r, center[1] - half[1], center[1] + half[1])
            }
        }
    }

    fn transformed(&self, s: f64, shift: Vec3) -> Self {
        let m = |p: Vec3| vec3::add(vec3::scale(p, s), shift);
        match *self {
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: m(center),
                radius: radius * s,
            },
            Primitive::Capsule { a, b, radius } => Primitive::Capsule {
                a: m(a),
                b: m(b),
                radius: radius * s,
            },
            Primitive::Box { center, half, yaw } => Primitive::Box {
                center: m(center),
                half: vec3::scale(half, s),
                yaw,
            },
        }
    }
}

/// Polynomial smooth minimum; never exceeds `min(a, b)` by construction and
/// undershoots it by at most `k / 4`.
fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SceneKind {
    /// Torso, head and limbs.
    #[default]
    Body,
    /// A single sphere of random radius.
    Sphere,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Body => "body",
            SceneKind::Sphere => "sphere",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(SceneKind::Body),
            "sphere" => Ok(SceneKind::Sphere),
            other => Err(Error::Config(format!("unknown scene kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Seed actually used, after retries.
    pub seed: u64,
    pub kind: SceneKind,
    pub primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn sdf(&self, p: Vec3) -> f64 {
        let mut d = f64::INFINITY;
        for prim in &self.primitives {
            let v = prim.sdf(p);
            d = if d.is_finite() { smooth_min(d, v, BLEND) } else { v };
        }
        d
    }
}

fn body_primitives(rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let torso_r = rng.random_range(0.16..0.24);
    let hip_y = rng.random_range(-0.15..-0.05);
    let shoulder_y = hip_y + rng.random_range(0.35..0.5);
    let lean = rng.random_range(-0.05..0.05);
    let mut prims = vec![
        Primitive::Capsule {
            a: [0.0, hip_y, 0.0],
            b: [lean, shoulder_y, 0.0],
            radius: torso_r,
        },
        Primitive::Sphere {
            center: [lean, shoulder_y + torso_r + rng.random_range(0.08..0.14), rng.random_range(-0.03..0.03)],
            radius: rng.random_range(0.1..0.15),
        },
    ];
    let limb_count = rng.random_range(1..=4);
    for limb in 0..limb_count {
        let side = if limb % 2 == 0 { -1.0 } else { 1.0 };
        let radius = rng.random_range(0.06..0.09);
        let (a, b) = if limb < 2 {
            let a = [side * torso_r * 0.5, hip_y, 0.0];
            let b = [
                side * rng.random_range(0.1..0.3),
                hip_y - rng.random_range(0.45..0.6),
                rng.random_range(-0.15..0.15),
            ];
            (a, b)
        } else {
            let a = [lean + side * torso_r * 0.8, shoulder_y, 0.0];
            let b = [
                lean + side * rng.random_range(0.35..0.55),
                shoulder_y - rng.random_range(-0.25..0.35),
                rng.random_range(-0.25..0.25),
            ];
            (a, b)
        };
        prims.push(Primitive::Capsule { a, b, radius });
    }
    if rng.random_bool(0.5) {
        let y = rng.random_range(hip_y..shoulder_y);
        let z = rng.random_range(-0.5..0.5) * torso_r;
        prims.push(if rng.random_bool(0.5) {
            Primitive::Box {
                center: [lean * 0.5, y, z],
                half: [
                    rng.random_range(0.1..0.18),
                    rng.random_range(0.08..0.15),
                    rng.random_range(0.1..0.2),
                ],
                yaw: rng.random_range(-0.6..0.6),
            }
        } else {
            Primitive::Sphere {
                center: [lean * 0.5, y, z],
                radius: rng.random_range(0.15..0.22),
            }
        });
    }
    prims
}

/// Scales and recenters primitives into the fitting cylinder.
fn fit(prims: &[Primitive]) -> Vec<Primitive> {
    let (mut radial, mut lo, mut hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for p in prims {
        let (r, a, b) = p.extent();
        radial = radial.max(r);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    // Leave room for the smooth-union bulge and one grid cell.
    let s = ((FIT_RADIUS - BLEND) / radial).min(2.0 * (FIT_HALF_HEIGHT - BLEND) / (hi - lo));
    let shift = [0.0, -0.5 * (lo + hi) * s, 0.0];
    prims.iter().map(|p| p.transformed(s, shift)).collect()
}

fn mesh_scene(spec: &SceneSpec, resolution: usize) -> Result<TriangleMesh> {
    let h = (MESH_BOUNDS.1[0] - MESH_BOUNDS.0[0]) / resolution as f64;
    let field = ScalarField::from_fn(resolution, MESH_BOUNDS, |p| 0.5 - spec.sdf(p) / (4.0 * h))?;
    let mut field = field;
    field.clamp_boundary();
    let mesh = marching_cubes(&field, 0.5);
    mesh.validate_closed()?;
    if mesh.component_count() != 1 {
        return Err(Error::Geometry(format!("scene has {} components", mesh.component_count())));
    }
    Ok(mesh)
}

/// Seed for retry `attempt`; attempt 0 is the seed itself.
fn attempt_seed(seed: u64, attempt: u32) -> u64 {
    if attempt == 0 {
        seed
    } else {
        seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(attempt as u64))
    }
}

/// Deterministic closed mesh for `seed`, meshed on a `resolution^3` grid.
pub fn generate_scene_with(seed: u64, kind: SceneKind, resolution: usize) -> Result<(SceneSpec, TriangleMesh)> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let s = attempt_seed(seed, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let spec = match kind {
            SceneKind::Body => SceneSpec {
                seed: s,
                kind,
                primitives: fit(&body_primitives(&mut rng)),
            },
            SceneKind::Sphere => SceneSpec {
                seed: s,
                kind,
                primitives: vec![Primitive::Sphere {
                    center: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0],
                    radius: rng.random_range(0.4..0.65),
                }],
            },
        };
        let mesh = match kind {
            // Analytic spheres get an exact tessellation instead of a voxel mesh.
            SceneKind::Sphere => match spec.primitives[0] {
                Primitive::Sphere { center, radius } => Ok(icosphere(radius, 4, center)),
                _ => unreachable!(),
            },
            SceneKind::Body => mesh_scene(&spec, resolution),
        };
        match mesh {
            Ok(m) => return Ok((spec, m)),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Geometry(format!(
        "scene {seed} failed after {MAX_ATTEMPTS} attempts: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

pub const DEFAULT_MESH_RESOLUTION: usize = 64;

pub fn generate_scene(seed: u64) -> Result<(SceneSpec, TriangleMesh)> {
    generate_scene_with(seed, SceneKind::Body, DEFAULT_MESH_RESOLUTION)
}
