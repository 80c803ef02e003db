//! Orthographic renders along -z: pseudo-RGB shading plus front and back
//! normal maps at two linked resolutions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{Bvh, TriangleMesh};
use crate::nn::Tensor;

pub const ALBEDO: [f32; 3] = [0.85, 0.65, 0.45];
pub const AMBIENT: f64 = 0.2;
pub const BACKGROUND: f32 = 0.5;
pub const CAMERA: &str = "orthographic-negz";
/// Camera rays start above every scene.
const RAY_ORIGIN_Z: f64 = 4.0;

pub fn light_direction() -> Vec3 {
    vec3::normalize([0.3, 0.5, 1.0]).expect("nonzero")
}

/// Normalized image coordinate of the center of pixel `idx` in an `n`-pixel
/// axis. Pixel `idx` covers `[idx, idx + 1)` in continuous pixel units, so a
/// point's continuous coordinate at resolution `2n` is exactly twice the one
/// at `n`.
pub fn pixel_center(idx: usize, n: usize) -> f64 {
    (idx as f64 + 0.5) / n as f64 * 2.0 - 1.0
}

/// One view of one scene. Channel-first tensors; row index grows with y,
/// column index with x.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub img_hi: Tensor<f32>,
    pub img_lo: Tensor<f32>,
    pub fnml_hi: Tensor<f32>,
    pub fnml_lo: Tensor<f32>,
    pub bnml_hi: Tensor<f32>,
    pub bnml_lo: Tensor<f32>,
    pub mask: Tensor<f32>,
    /// Ground truth in camera space.
    pub mesh: TriangleMesh,
}

/// Which extra channels accompany the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalInput {
    #[default]
    WithNormals,
    NoNormals,
}

impl NormalInput {
    pub fn channels(self) -> usize {
        match self {
            NormalInput::WithNormals => 9,
            NormalInput::NoNormals => 3,
        }
    }
}

impl RenderedSample {
    pub fn resolution(&self) -> usize {
        self.img_hi.shape()[1]
    }

    fn stack(img: &Tensor<f32>, f: &Tensor<f32>, b: &Tensor<f32>, mode: NormalInput) -> Tensor<f32> {
        match mode {
            NormalInput::WithNormals => Tensor::concat_channels(&[img, f, b]).expect("matching planes"),
            NormalInput::NoNormals => img.clone(),
        }
    }

    /// Coarse-level input: `I_L` with `F_L`, `B_L` when requested.
    pub fn input_lo(&self, mode: NormalInput) -> Tensor<f32> {
        Self::stack(&self.img_lo, &self.fnml_lo, &self.bnml_lo, mode)
    }

    pub fn input_hi(&self, mode: NormalInput) -> Tensor<f32> {
        Self::stack(&self.img_hi, &self.fnml_hi, &self.bnml_hi, mode)
    }

    /// Replaces the back normals with a prediction at full resolution.
    pub fn with_back_normals(&self, bnml_hi: Tensor<f32>) -> Result<Self> {
        if bnml_hi.shape() != self.bnml_hi.shape() {
            return Err(Error::shape(
                "with_back_normals",
                format!("{:?} vs {:?}", bnml_hi.shape(), self.bnml_hi.shape()),
            ));
        }
        Ok(Self {
            bnml_lo: box_downsample(&bnml_hi)?,
            bnml_hi,
            ..self.clone()
        })
    }
}

/// 2x2 box average of a `[C, H, W]` tensor.
pub fn box_downsample(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = t.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("box_downsample", format!("odd size {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let src = t.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            for x in 0..wo {
                let (r0, r1) = (2 * y * w, (2 * y + 1) * w);
                let s = plane[r0 + 2 * x] + plane[r0 + 2 * x + 1] + plane[r1 + 2 * x] + plane[r1 + 2 * x + 1];
                out.push(s * 0.25);
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

fn surface_normal(mesh: &TriangleMesh, triangle: usize, uv: (f64, f64)) -> Vec3 {
    let face = mesh.face_normal(triangle);
    let Some(ns) = &mesh.normals else { return face };
    let [a, b, c] = mesh.triangles[triangle].map(|i| ns[i as usize]);
    let (u, v) = uv;
    let n = vec3::add(vec3::add(vec3::scale(a, 1.0 - u - v), vec3::scale(b, u)), vec3::scale(c, v));
    vec3::normalize(n).unwrap_or(face)
}

fn encode(n: Vec3) -> [f32; 3] {
    n.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0) as f32)
}

/// Renders `mesh` at `resolution` (even). Pixels whose ray misses keep the
/// background value in every channel and 0 in the mask.
pub fn render_orthographic(mesh: &TriangleMesh, resolution: usize) -> Result<RenderedSample> {
    if resolution < 2 || resolution % 2 != 0 {
        return Err(Error::Config(format!("render resolution {resolution} must be even and >= 2")));
    }
    let h = resolution;
    let bvh = Bvh::build(mesh);
    let light = light_direction();
    let rows: Vec<[Vec<f32>; 4]> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut img = vec![BACKGROUND; 3 * h];
            let mut fnml = vec![BACKGROUND; 3 * h];
            let mut bnml = vec![BACKGROUND; 3 * h];
            let mut mask = vec![0.0f32; h];
            let y = pixel_center(row, h);
            for col in 0..h {
                let x = pixel_center(col, h);
                let hits = bvh.cast_lenient([x, y, RAY_ORIGIN_Z], [0.0, 0.0, -1.0]);
                let (Some(first), Some(last)) = (hits.first(), hits.last()) else { continue };
                let nf = surface_normal(mesh, first.triangle, first.uv);
                let nb = surface_normal(mesh, last.triangle, last.uv);
                let shade = AMBIENT + (1.0 - AMBIENT) * vec3::dot(nf, light).max(0.0);
                let (ef, eb) = (encode(nf), encode(nb));
                for ch in 0..3 {
                    img[ch * h + col] = (ALBEDO[ch] as f64 * shade) as f32;
                    fnml[ch * h + col] = ef[ch];
                    bnml[ch * h + col] = eb[ch];
                }
                mask[col] = 1.0;
            }
            [img, fnml, bnml, mask]
        })
        .collect();
    let planar = |which: usize, channels: usize| -> Result<Tensor<f32>> {
        let mut data = vec![0.0f32; channels * h * h];
        for (row, r) in rows.iter().enumerate() {
            for ch in 0..channels {
                data[(ch * h + row) * h..(ch * h + row + 1) * h].copy_from_slice(&r[which][ch * h..(ch + 1) * h]);
            }
        }
        Tensor::from_vec(&[channels, h, h], data)
    };
    let img_hi = planar(0, 3)?;
    let fnml_hi = planar(1, 3)?;
    let bnml_hi = planar(2, 3)?;
    Ok(RenderedSample {
        img_lo: box_downsample(&img_hi)?,
        fnml_lo: box_downsample(&fnml_hi)?,
        bnml_lo: box_downsample(&bnml_hi)?,
        img_hi,
        fnml_hi,
        bnml_hi,
        mask: planar(3, 1)?,
        mesh: mesh.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    #[test]
    fn sphere_poles_and_background() {
        let r = render_orthographic(&icosphere(0.6, 4, [0.0; 3]), 64).unwrap();
        // The four pixels around the image center straddle the pole.
        for (row, col) in [(31, 31), (32, 32)] {
            let f = [0, 1, 2].map(|c| r.fnml_hi.data()[(c * 64 + row) * 64 + col]);
            let b = [0, 1, 2].map(|c| r.bnml_hi.data()[(c * 64 + row) * 64 + col]);
            assert!((f[0] - 0.5).abs() < 0.02 && (f[1] - 0.5).abs() < 0.02 && f[2] > 0.99, "{f:?}");
            assert!((b[0] - 0.5).abs() < 0.02 && (b[1] - 0.5).abs() < 0.02 && b[2] < 0.01, "{b:?}");
        }
        for c in 0..3 {
            assert_eq!(r.fnml_hi.data()[c * 64 * 64], BACKGROUND);
            assert_eq!(r.bnml_hi.data()[c * 64 * 64], BACKGROUND);
        }
        assert_eq!(r.mask.data()[0], 0.0);
    }

    #[test]
    fn mask_area_matches_projection() {
        let radius = 0.6;
        let r = render_orthographic(&icosphere(radius, 4, [0.0; 3]), 128).unwrap();
        let frac = r.mask.data().iter().sum::<f32>() as f64 / (128.0 * 128.0);
        let analytic = std::f64::consts::PI * radius * radius / 4.0;
        assert!((frac - analytic).abs() / analytic < 0.02, "{frac} vs {analytic}");
    }

    #[test]
    fn low_res_is_box_average() {
        let r = render_orthographic(&icosphere(0.5, 3, [0.1, -0.1, 0.0]), 32).unwrap();
        let hi = r.img_hi.data();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let at = |yy: usize, xx: usize| hi[(c * 32 + yy) * 32 + xx];
                    let want = (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1)) * 0.25;
                    assert_eq!(r.img_lo.data()[(c * 16 + y) * 16 + x], want);
                }
            }
        }
        assert_eq!(r.input_lo(NormalInput::WithNormals).shape(), &[9, 16, 16]);
        assert_eq!(r.input_hi(NormalInput::NoNormals).shape(), &[3, 32, 32]);
    }

    #[test]
    fn back_normals_face_away() {
        let r = render_orthographic(&icosphere(0.5, 3, [0.0; 3]), 32).unwrap();
        for p in 0..32 * 32 {
            if r.mask.data()[p] == 1.0 {
                // Encoded z below 0.5 means n_z < 0.
                assert!(r.bnml_hi.data()[2 * 32 * 32 + p] < 0.5);
            }
        }
    }

    #[test]
    fn rejects_odd_resolution() {
        assert!(render_orthographic(&icosphere(0.5, 1, [0.0; 3]), 13).is_err());
    }
}
