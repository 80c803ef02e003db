use super::vec3::Vec3;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Occupancy probabilities sampled at the cell centers of a uniform grid.
///
/// Sample `(i, j, k)` sits at `min + (idx + 0.5) * (max - min) / R` along
/// x, y, z respectively and is stored at `i*R*R + j*R + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    resolution: usize,
    min: Vec3,
    max: Vec3,
    values: Tensor<f32>,
}

pub const UNIT_BOX: (Vec3, Vec3) = ([-1.0; 3], [1.0; 3]);

impl ScalarField {
    pub fn new(resolution: usize, bounds: (Vec3, Vec3), values: Vec<f32>) -> Result<Self> {
        let (min, max) = bounds;
        if resolution < 2 {
            return Err(Error::Config(format!("field resolution {resolution} < 2")));
        }
        if (0..3).any(|a| !(max[a] > min[a])) {
            return Err(Error::Config(format!("empty field bounds {min:?}..{max:?}")));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("field value {v} outside [0, 1]")));
        }
        let values = Tensor::from_vec(&[resolution; 3], values)?;
        Ok(Self {
            resolution,
            min,
            max,
            values,
        })
    }

    pub fn constant(resolution: usize, bounds: (Vec3, Vec3), value: f32) -> Result<Self> {
        Self::new(resolution, bounds, vec![value; resolution.pow(3)])
    }

    /// Samples `f` at every cell center; results are clamped to `[0, 1]`.
    pub fn from_fn(resolution: usize, bounds: (Vec3, Vec3), f: impl Fn(Vec3) -> f64) -> Result<Self> {
        let geometry = Self::constant(resolution, bounds, 0.0)?;
        let mut values = Vec::with_capacity(resolution.pow(3));
        for i in 0..resolution {
            for j in 0..resolution {
                for k in 0..resolution {
                    values.push(f(geometry.cell_center(i, j, k)).clamp(0.0, 1.0) as f32);
                }
            }
        }
        Self::new(resolution, bounds, values)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.min, self.max)
    }

    pub fn spacing(&self) -> Vec3 {
        let r = self.resolution as f64;
        [
            (self.max[0] - self.min[0]) / r,
            (self.max[1] - self.min[1]) / r,
            (self.max[2] - self.min[2]) / r,
        ]
    }

    pub fn cell_diagonal(&self) -> f64 {
        super::vec3::norm(self.spacing())
    }

    /// Coordinate of sample `idx` along `axis`.
    pub fn coordinate(&self, axis: usize, idx: usize) -> f64 {
        self.min[axis] + (idx as f64 + 0.5) * (self.max[axis] - self.min[axis]) / self.resolution as f64
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [self.coordinate(0, i), self.coordinate(1, j), self.coordinate(2, k)]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values.data()[self.index(i, j, k)]
    }

    pub fn values(&self) -> &[f32] {
        self.values.data()
    }

    pub fn as_tensor(&self) -> &Tensor<f32> {
        &self.values
    }

    /// Sets the outermost layer of samples to 0.
    pub fn clamp_boundary(&mut self) {
        let r = self.resolution;
        let data = self.values.data_mut();
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    if i == 0 || j == 0 || k == 0 || i == r - 1 || j == r - 1 || k == r - 1 {
                        data[(i * r + j) * r + k] = 0.0;
                    }
                }
            }
        }
    }

    /// Intersection-over-union of `{v >= threshold}` between two fields.
    pub fn iou(&self, other: &ScalarField, threshold: f32) -> Result<f64> {
        if self.resolution != other.resolution {
            return Err(Error::shape(
                "iou",
                format!("resolution {} vs {}", self.resolution, other.resolution),
            ));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.values().iter().zip(other.values()) {
            let (a, b) = (a >= threshold, b >= threshold);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_centers_and_layout() {
        let f = ScalarField::from_fn(4, UNIT_BOX, |p| if p[0] > 0.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(f.cell_center(0, 0, 0), [-0.75, -0.75, -0.75]);
        assert_eq!(f.cell_center(3, 1, 2), [0.75, -0.25, 0.25]);
        assert_eq!(f.get(3, 0, 0), 1.0);
        assert_eq!(f.get(1, 3, 3), 0.0);
        assert_eq!(f.index(1, 2, 3), 16 + 8 + 3);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ScalarField::new(2, UNIT_BOX, vec![1.5; 8]).is_err());
        assert!(ScalarField::new(2, UNIT_BOX, vec![0.5; 7]).is_err());
        assert!(ScalarField::new(1, UNIT_BOX, vec![0.5]).is_err());
    }

    #[test]
    fn boundary_clamp_and_iou() {
        let mut f = ScalarField::constant(4, UNIT_BOX, 1.0).unwrap();
        f.clamp_boundary();
        assert_eq!(f.values().iter().filter(|&&v| v == 1.0).count(), 8);
        let g = ScalarField::constant(4, UNIT_BOX, 1.0).unwrap();
        assert!((f.iou(&g, 0.5).unwrap() - 8.0 / 64.0).abs() < 1e-12);
        assert_eq!(f.iou(&f, 0.5).unwrap(), 1.0);
    }
}
