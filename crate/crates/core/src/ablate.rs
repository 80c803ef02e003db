//! Directional ablations: each study trains two arms per seed on the same
//! data and compares mean validation Chamfer (lower is better). Arm 0 is the
//! configuration expected to win.

use crate::error::{Error, Result};
use crate::pifu::{CoarseModel, FineConditioning};
use crate::recon::{reconstruct, validation_chamfer, Predictor, ReconConfig};
use crate::synth::{generate_samples, DatasetConfig, NormalInput, RenderedSample, SceneKind, Split};
use crate::train::{Models, Schedule, TrainConfig, Trainer, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Embedding vs absolute-depth fine conditioning under crop training.
    Conditioning,
    /// Front/back normal channels vs image only.
    Normals,
    /// Alternate vs end-to-end schedule.
    Schedule,
}

impl Study {
    pub const ALL: [Study; 3] = [Study::Conditioning, Study::Normals, Study::Schedule];

    pub fn name(self) -> &'static str {
        match self {
            Study::Conditioning => "conditioning",
            Study::Normals => "normals",
            Study::Schedule => "schedule",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown study {s:?}")))
    }

    pub fn arms(self) -> [&'static str; 2] {
        match self {
            Study::Conditioning => ["embedding", "absolute_depth"],
            Study::Normals => ["with_normals", "no_normals"],
            Study::Schedule => ["alternate", "end_to_end"],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationSettings {
    pub data: DatasetConfig,
    /// Base training configuration; each arm overrides one axis.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Grid resolution for the back-hemisphere metric of the normals study.
    pub metric_resolution: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            data: DatasetConfig::default(),
            train: TrainConfig {
                coarse_epochs: 20,
                fine_epochs: 20,
                validate_every: 5,
                ..TrainConfig::default()
            },
            seeds: vec![1, 2, 3],
            metric_resolution: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    pub seed: u64,
    pub chamfer: [f64; 2],
    /// Mean back-hemisphere point-to-surface on the sphere fixture.
    pub back_point_to_surface: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub study: Study,
    pub rows: Vec<SeedRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl StudyResult {
    pub fn mean_chamfer(&self, arm: usize) -> f64 {
        mean(self.rows.iter().map(|r| r.chamfer[arm]))
    }

    pub fn mean_back(&self, arm: usize) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.back_point_to_surface.map(|b| b[arm])).collect();
        (!v.is_empty()).then(|| mean(v.into_iter()))
    }

    /// Arm 0 is no worse on Chamfer and, where measured, strictly better on
    /// the back hemisphere.
    pub fn holds(&self) -> bool {
        let chamfer = self.mean_chamfer(0) <= self.mean_chamfer(1);
        let back = match (self.mean_back(0), self.mean_back(1)) {
            (Some(a), Some(b)) => a < b,
            _ => true,
        };
        chamfer && back
    }

    pub fn to_table(&self) -> String {
        let [a, b] = self.study.arms();
        let mut out = format!("study {}: {a} vs {b}\n", self.study.name());
        out.push_str(&format!("  {:>6}  {:>14}  {:>14}  {:>12}  {:>12}\n", "seed", a, b, "back0", "back1"));
        let back = |v: Option<[f64; 2]>, i: usize| v.map_or_else(|| "-".to_string(), |b| format!("{:.5}", b[i]));
        for r in &self.rows {
            out.push_str(&format!(
                "  {:>6}  {:>14.5}  {:>14.5}  {:>12}  {:>12}\n",
                r.seed,
                r.chamfer[0],
                r.chamfer[1],
                back(r.back_point_to_surface, 0),
                back(r.back_point_to_surface, 1)
            ));
        }
        let mb = |i: usize| self.mean_back(i).map_or_else(|| "-".to_string(), |v| format!("{v:.5}"));
        out.push_str(&format!(
            "  {:>6}  {:>14.5}  {:>14.5}  {:>12}  {:>12}\n",
            "mean",
            self.mean_chamfer(0),
            self.mean_chamfer(1),
            mb(0),
            mb(1)
        ));
        out.push_str(&format!("  holds={}\n", self.holds()));
        out
    }
}

/// Train and validation splits generated in memory.
pub struct Fixture {
    pub train: Vec<RenderedSample>,
    pub test: Vec<RenderedSample>,
}

impl Fixture {
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (entry, sample) in generate_samples(config)? {
            match entry.split {
                Split::Train => train.push(sample),
                Split::Test => test.push(sample),
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("ablations need non-empty train and test splits".into()));
        }
        Ok(Self { train, test })
    }
}

fn fit(config: TrainConfig, models: Option<Models>, fixture: &Fixture) -> Result<Models> {
    let data = TrainingSet::new(fixture.train.clone(), config.model.normals)?;
    let mut trainer = match models {
        Some(m) => Trainer::with_models(config, m)?,
        None => Trainer::new(config)?,
    };
    trainer.fit(&data, Some(&fixture.test))?;
    Ok(trainer.into_models())
}

fn score(models: &Models, fixture: &Fixture, config: &TrainConfig) -> Result<f64> {
    validation_chamfer(models, &fixture.test, config.validation_resolution, Predictor::MultiLevel)
}

fn back_score(models: &Models, fixture: &Fixture, resolution: usize) -> Result<f64> {
    let config = ReconConfig {
        resolution,
        level: Predictor::MultiLevel,
        ..Default::default()
    };
    let mut total = 0.0;
    for s in &fixture.test {
        let r = reconstruct(models, s, &config)?;
        // An empty extraction has no back surface: score it as the worst case.
        total += r.report.metrics.map_or(1.0, |m| m.back_point_to_surface);
    }
    Ok(total / fixture.test.len() as f64)
}

/// Trained models for one arm of `study`. `coarse` is the shared pretrained
/// coarse model of the conditioning study.
fn train_arm(
    study: Study,
    arm: usize,
    config: TrainConfig,
    coarse: Option<&CoarseModel<f32>>,
    fixture: &Fixture,
) -> Result<Models> {
    let mut config = config;
    match study {
        Study::Conditioning => {
            config.model.conditioning = [FineConditioning::Embedding, FineConditioning::AbsoluteDepth][arm];
            let mut models = Models::new(&config.model, config.seed, false)?;
            models.coarse = coarse
                .ok_or_else(|| Error::Usage("conditioning arms need a pretrained coarse model".into()))?
                .clone();
            fit(TrainConfig { schedule: Schedule::FineOnly, ..config }, Some(models), fixture)
        }
        Study::Normals => {
            config.model.normals = [NormalInput::WithNormals, NormalInput::NoNormals][arm];
            fit(config, None, fixture)
        }
        Study::Schedule => {
            config.schedule = [Schedule::Alternate, Schedule::EndToEnd][arm];
            fit(config, None, fixture)
        }
    }
}

/// Runs one study over every seed. `on_arm` sees each finished arm.
pub fn run_study(study: Study, settings: &AblationSettings, on_arm: &mut dyn FnMut(Study, u64, usize, f64)) -> Result<StudyResult> {
    if settings.seeds.is_empty() {
        return Err(Error::Config("ablations need at least one seed".into()));
    }
    let fixture = Fixture::generate(&settings.data)?;
    let spheres = if study == Study::Normals {
        Some(Fixture::generate(&DatasetConfig {
            kind: SceneKind::Sphere,
            ..settings.data.clone()
        })?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &seed in &settings.seeds {
        let mut chamfer = [0.0; 2];
        let mut back = [0.0; 2];
        let config = TrainConfig {
            seed,
            ..settings.train.clone()
        };
        // Both conditioning arms fine-tune against the same coarse model.
        let coarse = if study == Study::Conditioning {
            let pre = TrainConfig {
                schedule: Schedule::CoarseOnly,
                validate_every: 0,
                ..config.clone()
            };
            Some(fit(pre, None, &fixture)?.coarse)
        } else {
            None
        };
        for arm in 0..2 {
            let models = train_arm(study, arm, config.clone(), coarse.as_ref(), &fixture)?;
            chamfer[arm] = score(&models, &fixture, &settings.train)?;
            on_arm(study, seed, arm, chamfer[arm]);
            if let Some(sph) = &spheres {
                let models = train_arm(study, arm, config.clone(), None, sph)?;
                back[arm] = back_score(&models, sph, settings.metric_resolution)?;
            }
        }
        rows.push(SeedRow {
            seed,
            chamfer,
            back_point_to_surface: spheres.as_ref().map(|_| back),
        });
    }
    Ok(StudyResult { study, rows })
}
