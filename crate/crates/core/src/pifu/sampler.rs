//! Training query points: Gaussian-perturbed surface samples mixed with
//! uniform samples in `[-1, 1]^3`, labelled by the occupancy oracle.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::loss::outside_ratio;
use super::projection::CropWindow;
use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Vec3};
use crate::kv::{parse_value, unknown_key, KeyValue};
use crate::geometry::{sample_surface, InsideTester, TriangleMesh};

/// Batches with an all-inside or all-outside label set are redrawn this many
/// times before giving up.
pub const MAX_RESAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_points: usize,
    pub sigma_coarse: f64,
    pub sigma_fine: f64,
    pub uniform_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_points: 512,
            sigma_coarse: 0.05,
            sigma_fine: 0.03,
            uniform_fraction: 0.125,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::Config("sampler needs at least 2 points".into()));
        }
        if !(self.sigma_coarse > 0.0 && self.sigma_fine > 0.0) {
            return Err(Error::Config("sampler sigmas must be positive".into()));
        }
        if !(self.uniform_fraction > 0.0 && self.uniform_fraction < 1.0) {
            return Err(Error::Config(format!(
                "uniform fraction {} outside (0, 1)",
                self.uniform_fraction
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, level: Level) -> f64 {
        match level {
            Level::Coarse => self.sigma_coarse,
            Level::Fine => self.sigma_fine,
        }
    }

    pub fn uniform_count(&self) -> usize {
        ((self.n_points as f64 * self.uniform_fraction).round() as usize).clamp(1, self.n_points - 1)
    }
}

impl KeyValue for SamplerConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("n_points".into(), self.n_points.to_string()),
            ("sigma_coarse".into(), self.sigma_coarse.to_string()),
            ("sigma_fine".into(), self.sigma_fine.to_string()),
            ("uniform_fraction".into(), self.uniform_fraction.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_points" => self.n_points = parse_value(key, value)?,
            "sigma_coarse" => self.sigma_coarse = parse_value(key, value)?,
            "sigma_fine" => self.sigma_fine = parse_value(key, value)?,
            "uniform_fraction" => self.uniform_fraction = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

/// Labelled camera-space query points.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub points: Vec<Vec3>,
    pub labels: Vec<f32>,
    /// Fraction of points with label 0.
    pub lambda: f64,
}

impl QueryBatch {
    pub fn label(points: Vec<Vec3>, oracle: &InsideTester) -> Self {
        let labels: Vec<f32> = points.iter().map(|&p| oracle.contains(p) as u8 as f32).collect();
        let lambda = if labels.is_empty() { 0.0 } else { outside_ratio(&labels) };
        Self { points, labels, lambda }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Image-plane coordinates (identical at both levels in normalized units).
    pub fn xs(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p[0], p[1]]).collect()
    }

    pub fn zs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[2]).collect()
    }

    /// Points in `self` followed by points in `other`.
    pub fn concat(&self, other: &QueryBatch) -> QueryBatch {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let lambda = outside_ratio(&labels);
        QueryBatch { points, labels, lambda }
    }
}

fn draw_points<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    config: &SamplerConfig,
    level: Level,
    window: Option<&CropWindow>,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let n_uniform = config.uniform_count();
    let n_surface = config.n_points - n_uniform;
    let noise = Normal::new(0.0, config.sigma(level)).map_err(|e| Error::Config(e.to_string()))?;
    let (lo, hi) = window.map_or(([-1.0, -1.0], [1.0, 1.0]), |w| w.normalized_bounds());
    let inside_xy = |p: &Vec3| p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1];

    let mut points = Vec::with_capacity(config.n_points);
    let mut rounds = 0;
    while points.len() < n_surface {
        rounds += 1;
        if rounds > 16 {
            return Err(Error::Geometry("sampling window contains too little surface".into()));
        }
        let s = sample_surface(mesh, n_surface, rng)?;
        for p in s.points {
            let q = vec3::add(p, [noise.sample(rng), noise.sample(rng), noise.sample(rng)]);
            if inside_xy(&q) && points.len() < n_surface {
                points.push(q);
            }
        }
    }
    for _ in 0..n_uniform {
        points.push([
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(-1.0..1.0),
        ]);
    }
    Ok(points)
}

/// Draws a labelled batch; with `window`, every point projects inside it.
pub fn sample_training_points<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    oracle: &InsideTester,
    config: &SamplerConfig,
    level: Level,
    window: Option<&CropWindow>,
    rng: &mut R,
) -> Result<QueryBatch> {
    config.validate()?;
    for _ in 0..MAX_RESAMPLES {
        let batch = QueryBatch::label(draw_points(mesh, config, level, window, rng)?, oracle);
        if batch.lambda > 0.0 && batch.lambda < 1.0 {
            return Ok(batch);
        }
    }
    Err(Error::Geometry(format!(
        "no batch with both inside and outside points after {MAX_RESAMPLES} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_is_exact_outside_fraction() {
        let s = icosphere(0.5, 3, [0.0; 3]);
        let t = InsideTester::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_training_points(&s, &t, &SamplerConfig::default(), Level::Coarse, None, &mut rng).unwrap();
        assert_eq!(b.len(), 512);
        let outside = b.labels.iter().filter(|&&f| f == 0.0).count();
        assert_eq!(b.lambda, outside as f64 / 512.0);
        assert!(b.lambda > 0.0 && b.lambda < 1.0);
    }

    #[test]
    fn crop_restricts_projection() {
        let s = icosphere(0.6, 3, [0.0; 3]);
        let t = InsideTester::new(&s).unwrap();
        let w = CropWindow::new(64, 32, 64, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_training_points(&s, &t, &SamplerConfig::default(), Level::Fine, Some(&w), &mut rng).unwrap();
        assert!(b.xs().iter().all(|&x| w.contains(x)));
        // A window with no surface below it.
        let empty = CropWindow::new(0, 0, 8, 128).unwrap();
        assert!(sample_training_points(&s, &t, &SamplerConfig::default(), Level::Fine, Some(&empty), &mut rng).is_err());
    }

    #[test]
    fn importance_samples_hug_the_surface() {
        let s = icosphere(0.5, 4, [0.0; 3]);
        let cfg = SamplerConfig { n_points: 4000, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = draw_points(&s, &cfg, Level::Coarse, None, &mut rng).unwrap();
        let n_surface = cfg.n_points - cfg.uniform_count();
        let near = pts[..n_surface]
            .iter()
            .filter(|&&p| (vec3::norm(p) - 0.5).abs() <= 2.0 * cfg.sigma_coarse)
            .count();
        assert!(near as f64 / n_surface as f64 >= 0.9, "{near}/{n_surface}");
    }

    #[test]
    fn uniform_inside_fraction_matches_volume() {
        let r = 0.5;
        let s = icosphere(r, 4, [0.0; 3]);
        let t = InsideTester::new(&s).unwrap();
        let cfg = SamplerConfig { n_points: 200_000, uniform_fraction: 0.5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = draw_points(&s, &cfg, Level::Coarse, None, &mut rng).unwrap();
        let uniform = &pts[cfg.n_points - cfg.uniform_count()..];
        assert_eq!(uniform.len(), 100_000);
        let inside = uniform.iter().filter(|&&p| t.contains(p)).count() as f64 / uniform.len() as f64;
        let expected = 4.0 / 3.0 * std::f64::consts::PI * r * r * r / 8.0;
        assert!((inside - expected).abs() <= 0.02, "{inside} vs {expected}");
    }

    #[test]
    fn vanishing_noise_splits_surface_samples_evenly() {
        let s = icosphere(0.5, 4, [0.0; 3]);
        let t = InsideTester::new(&s).unwrap();
        let cfg = SamplerConfig { n_points: 4000, sigma_coarse: 1e-4, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = draw_points(&s, &cfg, Level::Coarse, None, &mut rng).unwrap();
        let surf = &pts[..cfg.n_points - cfg.uniform_count()];
        let inside = surf.iter().filter(|&&p| t.contains(p)).count() as f64 / surf.len() as f64;
        assert!((inside - 0.5).abs() < 0.05, "{inside}");
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SamplerConfig { uniform_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig { sigma_fine: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
