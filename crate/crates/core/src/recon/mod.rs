//! Dense occupancy evaluation, sliding-window fine features, surface
//! extraction and evaluation against ground truth.

mod stitch;

pub use stitch::{min_overlap, stitch_fine_features};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    chamfer_distance, marching_cubes, normal_consistency, point_to_surface, sample_surface, InsideTester, ScalarField,
    TriangleMesh, Vec3, METRIC_SAMPLES, UNIT_BOX,
};
use crate::kv::{parse_value, unknown_key, KeyValue};
use crate::nn::Tensor;
use crate::synth::RenderedSample;
use crate::train::Models;

/// Iso-level of the reconstructed surface.
pub const THRESHOLD: f32 = 0.5;

/// Chamfer charged to a validation scene whose extraction is empty.
pub const EMPTY_CHAMFER: f64 = 1.0;

/// Environment variable bounding worker threads.
pub const THREADS_ENV: &str = "IRCN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Predictor {
    /// `f_L` alone.
    Coarse,
    /// `f_H` conditioned on the coarse level.
    #[default]
    MultiLevel,
}

impl Predictor {
    pub fn name(self) -> &'static str {
        match self {
            Predictor::Coarse => "coarse",
            Predictor::MultiLevel => "multi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Predictor::Coarse),
            "multi" => Ok(Predictor::MultiLevel),
            other => Err(Error::Config(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    /// Grid samples per axis over `[-1, 1]^3`.
    pub resolution: usize,
    pub level: Predictor,
    /// Fine-feature window side in high-resolution pixels; 0 encodes the
    /// whole image in one pass.
    pub window: usize,
    /// Margin discarded on each window side.
    pub overlap: usize,
    /// Query points per MLP batch.
    pub batch_size: usize,
    /// Replace ground-truth back normals with the back-normal net.
    pub predicted_normals: bool,
    /// Seed for the metric surface samples.
    pub metric_seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            level: Predictor::MultiLevel,
            window: 0,
            overlap: 8,
            batch_size: 4096,
            predicted_normals: false,
            metric_seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 {
            return Err(Error::Config(format!("grid resolution {} < 4", self.resolution)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

impl KeyValue for ReconConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("resolution".into(), self.resolution.to_string()),
            ("level".into(), self.level.name().into()),
            ("window".into(), self.window.to_string()),
            ("overlap".into(), self.overlap.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("predicted_normals".into(), self.predicted_normals.to_string()),
            ("metric_seed".into(), self.metric_seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "resolution" => self.resolution = parse_value(key, value)?,
            "level" => self.level = Predictor::parse(value)?,
            "window" => self.window = parse_value(key, value)?,
            "overlap" => self.overlap = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "predicted_normals" => self.predicted_normals = parse_value(key, value)?,
            "metric_seed" => self.metric_seed = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

/// Runs `f` on a pool bounded by `IRCN_THREADS` when it is set.
pub fn with_thread_limit<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = parse_value(THREADS_ENV, &v)?;
            if n == 0 {
                return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Cell centers of an `R^3` grid over `[-1, 1]^3`, in field order.
pub fn grid_points(resolution: usize) -> Result<Vec<Vec3>> {
    let layout = ScalarField::constant(resolution, UNIT_BOX, 0.0)?;
    let mut pts = Vec::with_capacity(resolution.pow(3));
    for i in 0..resolution {
        for j in 0..resolution {
            for k in 0..resolution {
                pts.push(layout.cell_center(i, j, k));
            }
        }
    }
    Ok(pts)
}

/// The sample the models actually see (with predicted back normals if asked).
pub fn prepare_sample(models: &Models, sample: &RenderedSample, config: &ReconConfig) -> Result<RenderedSample> {
    if !config.predicted_normals {
        return Ok(sample.clone());
    }
    models
        .normal
        .as_ref()
        .ok_or_else(|| Error::Config("predicted normals requested but the checkpoint has no normal net".into()))?
        .apply(sample)
}

/// Feature planes computed once per image.
struct Planes {
    coarse: Tensor<f32>,
    fine: Option<Tensor<f32>>,
}

fn encode(models: &Models, sample: &RenderedSample, config: &ReconConfig) -> Result<Planes> {
    let normals = models.config.normals;
    let res = sample.resolution();
    if res % 8 != 0 {
        return Err(Error::Config(format!("image resolution {res} must be a multiple of 8")));
    }
    let coarse = models.coarse.encode(&sample.input_lo(normals))?;
    let fine = match config.level {
        Predictor::Coarse => None,
        Predictor::MultiLevel => Some(stitch_fine_features(
            &models.fine,
            &sample.input_hi(normals),
            config.window,
            config.overlap,
        )?),
    };
    Ok(Planes { coarse, fine })
}

fn query(models: &Models, planes: &Planes, points: &[Vec3]) -> Result<Vec<f32>> {
    let xs: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    let zs: Vec<f64> = points.iter().map(|p| p[2]).collect();
    let out = models.coarse.query(&planes.coarse, &xs, &zs)?;
    match &planes.fine {
        None => Ok(out.probs),
        Some(fine) => {
            let cond = models.fine.condition(Some(&out.embedding), &zs)?;
            models.fine.query(fine, &xs, &cond)
        }
    }
}

/// Occupancy at every cell center; the outermost shell is forced to 0 so
/// the extracted surface is closed.
pub fn evaluate_grid(models: &Models, sample: &RenderedSample, config: &ReconConfig) -> Result<ScalarField> {
    config.validate()?;
    let sample = prepare_sample(models, sample, config)?;
    let planes = encode(models, &sample, config)?;
    let points = grid_points(config.resolution)?;
    let chunks: Vec<Vec<f32>> = with_thread_limit(|| {
        points
            .par_chunks(config.batch_size)
            .map(|c| query(models, &planes, c))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut field = ScalarField::new(config.resolution, UNIT_BOX, chunks.concat())?;
    field.clamp_boundary();
    Ok(field)
}

/// Occupancy of a ground-truth mesh on the same grid, shell forced to 0.
pub fn oracle_field(mesh: &TriangleMesh, resolution: usize) -> Result<ScalarField> {
    let mut field = with_thread_limit(|| InsideTester::new(mesh)?.occupancy_grid(resolution, UNIT_BOX))??;
    field.clamp_boundary();
    Ok(field)
}

/// Surface metrics of a reconstruction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMetrics {
    pub chamfer: f64,
    /// Mean distance from reconstructed samples to the true surface.
    pub point_to_surface: f64,
    /// Same, restricted to reconstructed samples facing away from the camera (`z < 0`).
    pub back_point_to_surface: f64,
    pub normal_consistency: f64,
}

pub fn surface_metrics(mesh: &TriangleMesh, truth: &TriangleMesh, seed: u64) -> Result<SurfaceMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sample_surface(mesh, METRIC_SAMPLES, &mut rng)?;
    let b = sample_surface(truth, METRIC_SAMPLES, &mut rng)?;
    let back: Vec<Vec3> = a.points.iter().copied().filter(|p| p[2] < 0.0).collect();
    let back_point_to_surface = if back.is_empty() { 0.0 } else { point_to_surface(&back, truth)? };
    Ok(SurfaceMetrics {
        chamfer: chamfer_distance(&a.points, &b.points)?,
        point_to_surface: point_to_surface(&a.points, truth)?,
        back_point_to_surface,
        normal_consistency: normal_consistency(&a.points, &a.normals, truth)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Marching cubes found no surface; surface metrics are absent.
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub status: Status,
    pub metrics: Option<SurfaceMetrics>,
    /// Thresholded field against the oracle occupancy grid.
    pub iou: f64,
    pub vertices: usize,
    pub triangles: usize,
    pub runtime_s: f64,
    pub config: ReconConfig,
}

impl EvalReport {
    /// `key=value` lines; absent metrics are written as `-`.
    pub fn to_text(&self) -> String {
        let m = |f: fn(&SurfaceMetrics) -> f64| self.metrics.as_ref().map_or_else(|| "-".to_string(), |v| f(v).to_string());
        let mut pairs = vec![
            ("status".to_string(), if self.status == Status::Ok { "ok" } else { "empty" }.to_string()),
            ("chamfer".into(), m(|v| v.chamfer)),
            ("point_to_surface".into(), m(|v| v.point_to_surface)),
            ("back_point_to_surface".into(), m(|v| v.back_point_to_surface)),
            ("normal_consistency".into(), m(|v| v.normal_consistency)),
            ("iou".into(), self.iou.to_string()),
            ("vertices".into(), self.vertices.to_string()),
            ("triangles".into(), self.triangles.to_string()),
            ("runtime_s".into(), format!("{:.3}", self.runtime_s)),
        ];
        pairs.extend(crate::kv::prefixed("recon", &self.config));
        crate::kv::to_text(&pairs)
    }

    /// Single-line form for metric logs.
    pub fn to_line(&self) -> String {
        self.to_text().lines().collect::<Vec<_>>().join(" ")
    }

    pub fn chamfer(&self) -> Option<f64> {
        self.metrics.map(|m| m.chamfer)
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: ScalarField,
    pub mesh: TriangleMesh,
    pub report: EvalReport,
}

/// Extracts the 0.5 level set of `field` and scores it against `truth`.
pub fn reconstruct_field(field: ScalarField, truth: &TriangleMesh, config: &ReconConfig, start: Instant) -> Result<Reconstruction> {
    let mesh = marching_cubes(&field, THRESHOLD);
    let iou = field.iou(&oracle_field(truth, field.resolution())?, THRESHOLD)?;
    let (status, metrics) = if mesh.is_empty() {
        (Status::Empty, None)
    } else {
        (Status::Ok, Some(surface_metrics(&mesh, truth, config.metric_seed)?))
    };
    if let Some(m) = &metrics {
        let all = [m.chamfer, m.point_to_surface, m.back_point_to_surface, m.normal_consistency, iou];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: "evaluation metrics".into() });
        }
    }
    let report = EvalReport {
        status,
        metrics,
        iou,
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        runtime_s: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok(Reconstruction { field, mesh, report })
}

/// Grid evaluation, extraction at 0.5 and metrics against the sample's mesh.
pub fn reconstruct(models: &Models, sample: &RenderedSample, config: &ReconConfig) -> Result<Reconstruction> {
    let start = Instant::now();
    let field = evaluate_grid(models, sample, config)?;
    reconstruct_field(field, &sample.mesh, config, start)
}

/// Reconstruction from the ground-truth occupancy itself (a perfect model).
pub fn reconstruct_oracle(sample: &RenderedSample, config: &ReconConfig) -> Result<Reconstruction> {
    config.validate()?;
    let start = Instant::now();
    let field = oracle_field(&sample.mesh, config.resolution)?;
    reconstruct_field(field, &sample.mesh, config, start)
}

/// Mean Chamfer over `samples`; empty extractions count as [`EMPTY_CHAMFER`].
pub fn validation_chamfer(models: &Models, samples: &[RenderedSample], resolution: usize, level: Predictor) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("no validation samples".into()));
    }
    let config = ReconConfig {
        resolution,
        level,
        ..Default::default()
    };
    let mut total = 0.0;
    for s in samples {
        let field = evaluate_grid(models, s, &config)?;
        let mesh = marching_cubes(&field, THRESHOLD);
        total += if mesh.is_empty() {
            EMPTY_CHAMFER
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.metric_seed);
            let a = sample_surface(&mesh, METRIC_SAMPLES, &mut rng)?;
            let b = sample_surface(&s.mesh, METRIC_SAMPLES, &mut rng)?;
            chamfer_distance(&a.points, &b.points)?
        };
    }
    Ok(total / samples.len() as f64)
}

/// Averages reports over a split; metrics average over non-empty scenes.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::Usage("no reports to aggregate".into()))?;
    let ok: Vec<&SurfaceMetrics> = reports.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mean = |f: fn(&SurfaceMetrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64;
    let metrics = (!ok.is_empty()).then(|| SurfaceMetrics {
        chamfer: mean(|m| m.chamfer),
        point_to_surface: mean(|m| m.point_to_surface),
        back_point_to_surface: mean(|m| m.back_point_to_surface),
        normal_consistency: mean(|m| m.normal_consistency),
    });
    Ok(EvalReport {
        status: if ok.len() == reports.len() { Status::Ok } else { Status::Empty },
        metrics,
        iou: reports.iter().map(|r| r.iou).sum::<f64>() / reports.len() as f64,
        vertices: reports.iter().map(|r| r.vertices).sum(),
        triangles: reports.iter().map(|r| r.triangles).sum(),
        runtime_s: reports.iter().map(|r| r.runtime_s).sum(),
        config: first.config.clone(),
    })
}
