//! Orthographic projection and pixel-aligned feature lookup.
//!
//! Normalized image coordinates `x` lie in `[-1, 1]^2`; the continuous pixel
//! coordinate at resolution `n` is `(x + 1) / 2 * n`, so the same normalized
//! point sits at exactly twice the pixel coordinate at twice the resolution.
//! Feature cell `j` of a plane of width `w` is centered at normalized
//! `(j + 0.5) / w * 2 - 1`.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{Real, Tensor};

/// `(x, Z)` of a camera-space point.
pub fn project(p: Vec3) -> ([f64; 2], f64) {
    ([p[0], p[1]], p[2])
}

/// Square crop window in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    /// Full image resolution.
    pub full: usize,
}

impl CropWindow {
    pub fn full(resolution: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            size: resolution,
            full: resolution,
        }
    }

    pub fn new(x0: usize, y0: usize, size: usize, full: usize) -> Result<Self> {
        if size == 0 || x0 + size > full || y0 + size > full {
            return Err(Error::Config(format!(
                "crop {size} at ({x0}, {y0}) exceeds image {full}"
            )));
        }
        if size % 2 != 0 || x0 % 2 != 0 || y0 % 2 != 0 {
            return Err(Error::Config(format!(
                "crop {size} at ({x0}, {y0}) must be even-aligned"
            )));
        }
        Ok(Self { x0, y0, size, full })
    }

    pub fn is_full(&self) -> bool {
        self.size == self.full
    }

    /// Full-image normalized coordinate to crop-local normalized coordinate.
    /// Exact identity for a full-image window.
    pub fn to_local(&self, x: [f64; 2]) -> [f64; 2] {
        if self.is_full() {
            return x;
        }
        let n = self.full as f64;
        let c = self.size as f64;
        [
            ((x[0] + 1.0) * 0.5 * n - self.x0 as f64) / c * 2.0 - 1.0,
            ((x[1] + 1.0) * 0.5 * n - self.y0 as f64) / c * 2.0 - 1.0,
        ]
    }

    pub fn to_global(&self, x: [f64; 2]) -> [f64; 2] {
        if self.is_full() {
            return x;
        }
        let n = self.full as f64;
        let c = self.size as f64;
        [
            ((x[0] + 1.0) * 0.5 * c + self.x0 as f64) / n * 2.0 - 1.0,
            ((x[1] + 1.0) * 0.5 * c + self.y0 as f64) / n * 2.0 - 1.0,
        ]
    }

    /// Normalized bounds `([x_min, y_min], [x_max, y_max])` of the window.
    pub fn normalized_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let n = self.full as f64;
        let lo = |o: usize| o as f64 / n * 2.0 - 1.0;
        let hi = |o: usize| (o + self.size) as f64 / n * 2.0 - 1.0;
        ([lo(self.x0), lo(self.y0)], [hi(self.x0), hi(self.y0)])
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let (lo, hi) = self.normalized_bounds();
        x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1]
    }
}

/// Bilinear taps along one axis: two cell indices and their weights.
#[inline]
fn taps(x: f64, n: usize) -> ([usize; 2], [f64; 2]) {
    if n == 1 {
        return ([0, 0], [1.0, 0.0]);
    }
    let u = ((x + 1.0) * 0.5 * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    let f = u - i0 as f64;
    ([i0, i0 + 1], [1.0 - f, f])
}

/// Samples a `[C, H, W]` plane at each normalized point, giving `[N, C]`.
/// Points outside the image are clamped to the border cells.
pub fn index_bilinear<T: Real>(plane: &Tensor<T>, xs: &[[f64; 2]]) -> Result<Tensor<T>> {
    let (c, h, w) = plane.chw()?;
    let data = plane.data();
    let mut out = vec![T::zero(); xs.len() * c];
    for (n, x) in xs.iter().enumerate() {
        let (ix, wx) = taps(x[0], w);
        let (iy, wy) = taps(x[1], h);
        let row = &mut out[n * c..(n + 1) * c];
        for (a, &yy) in iy.iter().enumerate() {
            for (b, &xx) in ix.iter().enumerate() {
                let wt = T::from_f64(wy[a] * wx[b]);
                if wt == T::zero() {
                    continue;
                }
                let off = yy * w + xx;
                for (ch, r) in row.iter_mut().enumerate() {
                    *r += wt * data[ch * h * w + off];
                }
            }
        }
    }
    Tensor::from_vec(&[xs.len(), c], out)
}

/// Adjoint of [`index_bilinear`]: scatters `[N, C]` gradients into a plane.
pub fn index_bilinear_backward<T: Real>(grad: &Tensor<T>, xs: &[[f64; 2]], plane_shape: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = grad.rows_cols()?;
    if plane_shape.len() != 3 || plane_shape[0] != c || n != xs.len() {
        return Err(Error::shape(
            "index_bilinear_backward",
            format!("grad {:?}, {} points, plane {:?}", grad.shape(), xs.len(), plane_shape),
        ));
    }
    let (h, w) = (plane_shape[1], plane_shape[2]);
    let mut out = Tensor::zeros(plane_shape);
    let g = grad.data();
    let o = out.data_mut();
    for (i, x) in xs.iter().enumerate() {
        let (ix, wx) = taps(x[0], w);
        let (iy, wy) = taps(x[1], h);
        for (a, &yy) in iy.iter().enumerate() {
            for (b, &xx) in ix.iter().enumerate() {
                let wt = T::from_f64(wy[a] * wx[b]);
                if wt == T::zero() {
                    continue;
                }
                let off = yy * w + xx;
                for ch in 0..c {
                    o[ch * h * w + off] += wt * g[i * c + ch];
                }
            }
        }
    }
    Ok(out)
}
