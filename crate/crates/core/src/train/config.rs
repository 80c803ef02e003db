use crate::error::{Error, Result};
use crate::kv::{parse_value, unknown_key, KeyValue};
use crate::nn::LrSchedule;
use crate::pifu::{ModelConfig, SamplerConfig};

/// Which modules are updated, and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Coarse epochs only.
    CoarseOnly,
    /// Fine epochs against a frozen, already trained coarse model.
    FineOnly,
    /// Blocks of coarse epochs and fine epochs, each updating one module.
    #[default]
    Alternate,
    /// Joint epochs updating both modules, fine gradients flowing into the
    /// coarse embedding.
    EndToEnd,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::CoarseOnly => "coarse_only",
            Schedule::FineOnly => "fine_only",
            Schedule::Alternate => "alternate",
            Schedule::EndToEnd => "end_to_end",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coarse_only" => Ok(Schedule::CoarseOnly),
            "fine_only" => Ok(Schedule::FineOnly),
            "alternate" => Ok(Schedule::Alternate),
            "end_to_end" => Ok(Schedule::EndToEnd),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

/// What a single epoch updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Coarse,
    Fine,
    Joint,
    Normal,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
            Phase::Joint => "joint",
            Phase::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Phase::Coarse),
            "fine" => Ok(Phase::Fine),
            "joint" => Ok(Phase::Joint),
            "normal" => Ok(Phase::Normal),
            other => Err(Error::Config(format!("unknown phase {other:?}"))),
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Phase::Coarse => 1,
            Phase::Fine => 2,
            Phase::Joint => 3,
            Phase::Normal => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub coarse_epochs: usize,
    pub fine_epochs: usize,
    /// Consecutive coarse epochs per block of the alternate schedule.
    pub alternate_coarse: usize,
    /// Consecutive fine epochs per block of the alternate schedule.
    pub alternate_fine: usize,
    /// Images whose gradients are averaged into one update.
    pub images_per_step: usize,
    /// Point batches drawn from each image per epoch.
    pub batches_per_image: usize,
    /// Fine-phase crop side in high-resolution pixels.
    pub crop: usize,
    /// Crop redraws before a fine step gives up on a window without surface.
    pub crop_attempts: usize,
    pub seed: u64,
    pub lr: LrSchedule,
    pub rms_alpha: f64,
    /// Validation Chamfer every this many epochs; 0 disables early stopping.
    pub validate_every: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    /// Grid resolution used for validation reconstructions.
    pub validation_resolution: usize,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub normal_epochs: usize,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::Alternate,
            coarse_epochs: 30,
            fine_epochs: 30,
            alternate_coarse: 5,
            alternate_fine: 5,
            images_per_step: 1,
            batches_per_image: 4,
            crop: 64,
            crop_attempts: 8,
            seed: 0,
            lr: LrSchedule {
                initial: 1e-3,
                factor: 0.5,
                every: 10,
            },
            rms_alpha: 0.99,
            validate_every: 0,
            patience: 2,
            validation_resolution: 32,
            checkpoint_every: 0,
            normal_epochs: 0,
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, resolution: usize) -> Result<()> {
        self.lr.validate()?;
        self.sampler.validate()?;
        if self.crop == 0 || self.crop > resolution || self.crop % 2 != 0 {
            return Err(Error::Config(format!(
                "crop {} must be even and within the image resolution {resolution}",
                self.crop
            )));
        }
        // The low-resolution image is H/2 and the coarse encoder divides by 4.
        if resolution % 8 != 0 {
            return Err(Error::Config(format!("resolution {resolution} must be a multiple of 8")));
        }
        if self.images_per_step == 0 || self.batches_per_image == 0 || self.crop_attempts == 0 {
            return Err(Error::Config("images_per_step, batches_per_image and crop_attempts must be positive".into()));
        }
        if self.schedule == Schedule::Alternate && (self.alternate_coarse == 0 || self.alternate_fine == 0) {
            return Err(Error::Config("alternate schedule needs positive block lengths".into()));
        }
        if !(0.0..1.0).contains(&self.rms_alpha) {
            return Err(Error::Config(format!("rms_alpha {} outside [0, 1)", self.rms_alpha)));
        }
        if self.validate_every > 0 && self.validation_resolution < 4 {
            return Err(Error::Config("validation resolution must be at least 4".into()));
        }
        self.model.fine_widths()?;
        Ok(())
    }

    /// Per-epoch phases in execution order. Back-normal epochs come first.
    pub fn plan(&self) -> Vec<Phase> {
        let mut plan = vec![Phase::Normal; self.normal_epochs];
        plan.extend(self.occupancy_plan());
        plan
    }

    fn occupancy_plan(&self) -> Vec<Phase> {
        match self.schedule {
            Schedule::CoarseOnly => vec![Phase::Coarse; self.coarse_epochs],
            Schedule::FineOnly => vec![Phase::Fine; self.fine_epochs],
            Schedule::EndToEnd => vec![Phase::Joint; self.coarse_epochs.max(self.fine_epochs)],
            Schedule::Alternate => {
                let (mut c, mut f) = (self.coarse_epochs, self.fine_epochs);
                let mut out = Vec::with_capacity(c + f);
                while c + f > 0 {
                    let nc = if f == 0 { c } else { c.min(self.alternate_coarse) };
                    out.extend(std::iter::repeat_n(Phase::Coarse, nc));
                    c -= nc;
                    let nf = if c == 0 { f } else { f.min(self.alternate_fine) };
                    out.extend(std::iter::repeat_n(Phase::Fine, nf));
                    f -= nf;
                }
                out
            }
        }
    }
}

impl KeyValue for TrainConfig {
    /// Scalar training keys; `model` and `sampler` are separate sections.
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("schedule".into(), self.schedule.name().into()),
            ("coarse_epochs".into(), self.coarse_epochs.to_string()),
            ("fine_epochs".into(), self.fine_epochs.to_string()),
            ("alternate_coarse".into(), self.alternate_coarse.to_string()),
            ("alternate_fine".into(), self.alternate_fine.to_string()),
            ("images_per_step".into(), self.images_per_step.to_string()),
            ("batches_per_image".into(), self.batches_per_image.to_string()),
            ("crop".into(), self.crop.to_string()),
            ("crop_attempts".into(), self.crop_attempts.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("lr".into(), self.lr.initial.to_string()),
            ("lr_factor".into(), self.lr.factor.to_string()),
            ("lr_every".into(), self.lr.every.to_string()),
            ("rms_alpha".into(), self.rms_alpha.to_string()),
            ("validate_every".into(), self.validate_every.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("validation_resolution".into(), self.validation_resolution.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("normal_epochs".into(), self.normal_epochs.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "schedule" => self.schedule = Schedule::parse(value)?,
            "coarse_epochs" => self.coarse_epochs = parse_value(key, value)?,
            "fine_epochs" => self.fine_epochs = parse_value(key, value)?,
            "alternate_coarse" => self.alternate_coarse = parse_value(key, value)?,
            "alternate_fine" => self.alternate_fine = parse_value(key, value)?,
            "images_per_step" => self.images_per_step = parse_value(key, value)?,
            "batches_per_image" => self.batches_per_image = parse_value(key, value)?,
            "crop" => self.crop = parse_value(key, value)?,
            "crop_attempts" => self.crop_attempts = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "lr" => self.lr.initial = parse_value(key, value)?,
            "lr_factor" => self.lr.factor = parse_value(key, value)?,
            "lr_every" => self.lr.every = parse_value(key, value)?,
            "rms_alpha" => self.rms_alpha = parse_value(key, value)?,
            "validate_every" => self.validate_every = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "validation_resolution" => self.validation_resolution = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "normal_epochs" => self.normal_epochs = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternate_plan_blocks() {
        let cfg = TrainConfig {
            coarse_epochs: 12,
            fine_epochs: 7,
            ..Default::default()
        };
        let plan = cfg.plan();
        assert_eq!(plan.len(), 19);
        let s: String = plan.iter().map(|p| if *p == Phase::Coarse { 'c' } else { 'f' }).collect();
        assert_eq!(s, "cccccfffffcccccffcc");
    }

    #[test]
    fn alternate_without_fine_is_coarse_only() {
        let alt = TrainConfig {
            fine_epochs: 0,
            ..Default::default()
        };
        let coarse = TrainConfig {
            schedule: Schedule::CoarseOnly,
            ..alt.clone()
        };
        assert_eq!(alt.plan(), coarse.plan());
    }

    #[test]
    fn pairs_round_trip() {
        let c = TrainConfig {
            schedule: Schedule::EndToEnd,
            lr: LrSchedule { initial: 3e-4, factor: 0.3, every: 7 },
            seed: 99,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        crate::kv::apply(&mut back, &c.pairs()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn crop_validation() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate(128).is_ok());
        assert!(TrainConfig { crop: 130, ..cfg.clone() }.validate(128).is_err());
        assert!(TrainConfig { crop: 31, ..cfg.clone() }.validate(128).is_err());
        assert!(cfg.validate(60).is_err());
    }
}
