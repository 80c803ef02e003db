//! Epoch loop for the coarse, fine, joint and back-normal phases.
//!
//! Every epoch draws from its own generator, seeded from
//! `(seed, phase, index of the epoch within that phase)`, so a resumed run
//! replays exactly the batches of an uninterrupted one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Phase, Schedule, TrainConfig};
use super::normal_net::{masked_l1, NormalNet};
use crate::error::{Error, Result};
use crate::geometry::InsideTester;
use crate::nn::{checkpoint::NamedTensors, Param, RmsProp, Tensor};
use crate::pifu::{
    loss_from_logits, sample_training_points, CoarseModel, CropWindow, FineConditioning, FineModel, Level,
    ModelConfig, QueryBatch,
};
use crate::synth::dataset::scene_seed;
use crate::synth::{NormalInput, RenderedSample};

pub(crate) fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    scene_seed(scene_seed(seed, tag), index)
}

/// Trained (or training) networks plus the architecture they follow.
#[derive(Debug, Clone)]
pub struct Models {
    pub config: ModelConfig,
    pub coarse: CoarseModel<f32>,
    pub fine: FineModel<f32>,
    pub normal: Option<NormalNet<f32>>,
}

impl Models {
    pub fn new(config: &ModelConfig, seed: u64, with_normal: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
        let coarse = CoarseModel::new(config, &mut rng)?;
        let fine = FineModel::new(config, &mut rng)?;
        let normal = if with_normal {
            Some(NormalNet::new(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, Phase::Normal.tag(), 0)))?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            coarse,
            fine,
            normal,
        })
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<f32>)) {
        self.coarse.visit_params(&mut |n, p| f(&format!("coarse.{n}"), p));
        self.fine.visit_params(&mut |n, p| f(&format!("fine.{n}"), p));
        if let Some(net) = &self.normal {
            net.visit_params(&mut |n, p| f(&format!("normal.{n}"), p));
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.coarse.visit_params_mut(&mut |n, p| f(&format!("coarse.{n}"), p));
        self.fine.visit_params_mut(&mut |n, p| f(&format!("fine.{n}"), p));
        if let Some(net) = &mut self.normal {
            net.visit_params_mut(&mut |n, p| f(&format!("normal.{n}"), p));
        }
    }

    pub fn to_tensors(&self) -> NamedTensors {
        let mut out = Vec::new();
        self.visit_params(&mut |n, p| out.push((n.to_string(), p.value.clone())));
        out
    }

    /// Rebuilds models from named tensors; every parameter must be present
    /// with its exact shape, and no stray model tensors are allowed.
    pub fn from_tensors(config: &ModelConfig, tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let with_normal = tensors.iter().any(|(n, _)| n.starts_with("normal."));
        let mut models = Self::new(config, 0, with_normal)?;
        let mut used = 0;
        let mut err = None;
        models.visit_params_mut(&mut |n, p| {
            if err.is_some() {
                return;
            }
            match crate::nn::checkpoint::find(tensors, n) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = t.clone();
                    used += 1;
                }
                Some(t) => {
                    err = Some(Error::Config(format!(
                        "checkpoint tensor {n} has shape {:?}, model expects {:?}",
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None => err = Some(Error::Config(format!("checkpoint lacks tensor {n}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let model_tensors = tensors
            .iter()
            .filter(|(n, _)| ["coarse.", "fine.", "normal."].iter().any(|p| n.starts_with(p)))
            .count();
        if model_tensors != used {
            return Err(Error::Config(format!(
                "checkpoint holds {model_tensors} model tensors, architecture uses {used}"
            )));
        }
        Ok(models)
    }

    /// Parameter values are bitwise equal.
    pub fn same_parameters(&self, other: &Models) -> bool {
        let (a, b) = (self.to_tensors(), other.to_tensors());
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One training view with its occupancy oracle and cached network inputs.
pub struct TrainingImage {
    pub sample: RenderedSample,
    pub oracle: InsideTester,
    pub input_lo: Tensor<f32>,
    pub input_hi: Tensor<f32>,
}

pub struct TrainingSet {
    pub images: Vec<TrainingImage>,
    resolution: usize,
}

impl TrainingSet {
    pub fn new(samples: Vec<RenderedSample>, normals: NormalInput) -> Result<Self> {
        let resolution = samples
            .first()
            .ok_or_else(|| Error::Usage("training set is empty".into()))?
            .resolution();
        let images = samples
            .into_iter()
            .map(|sample| {
                if sample.resolution() != resolution {
                    return Err(Error::Config(format!(
                        "mixed resolutions {resolution} and {}",
                        sample.resolution()
                    )));
                }
                Ok(TrainingImage {
                    oracle: InsideTester::new(&sample.mesh)?,
                    input_lo: sample.input_lo(normals),
                    input_hi: sample.input_hi(normals),
                    sample,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images, resolution })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }
}

/// Which loss a log record measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Coarse,
    Fine,
    Normal,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Coarse => "coarse",
            Target::Fine => "fine",
            Target::Normal => "normal",
        }
    }
}

/// One line of the step log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub phase: Phase,
    pub target: Target,
    pub loss: f64,
    /// Outside fraction of the batch labels; absent for the normal loss.
    pub lambda: Option<f64>,
    pub lr: f64,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        let lambda = self.lambda.map_or_else(|| "-".to_string(), |l| l.to_string());
        format!(
            "epoch={} step={} phase={} target={} loss={} lambda={} lr={}",
            self.epoch,
            self.step,
            self.phase.name(),
            self.target.name(),
            self.loss,
            lambda,
            self.lr
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub records: Vec<StepRecord>,
    /// Mean validation Chamfer, when validation ran after this epoch.
    pub validation: Option<f64>,
}

impl EpochReport {
    /// Mean loss of the records for `target`.
    pub fn mean_loss(&self, target: Target) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter(|r| r.target == target).map(|r| r.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Resumable training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) plan: Vec<Phase>,
    pub(crate) models: Models,
    pub(crate) opt_coarse: RmsProp<f32>,
    pub(crate) opt_fine: RmsProp<f32>,
    pub(crate) opt_normal: RmsProp<f32>,
    pub(crate) epochs_done: usize,
    pub(crate) stopped: bool,
    pub(crate) best: Option<(f64, Models)>,
    pub(crate) stale: usize,
}

fn check_finite(value: f64, epoch: usize, step: usize, phase: Phase, target: Target, lambda: Option<f64>, lr: f64) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    Err(Error::Divergence(format!(
        "{} loss is {value} at epoch {epoch}, step {step}, phase {}, lambda {lambda:?}, lr {lr}",
        target.name(),
        phase.name()
    )))
}

fn scale_in_place(t: &mut Tensor<f32>, s: f32) {
    for v in t.data_mut() {
        *v *= s;
    }
}

fn rows(t: &Tensor<f32>, from: usize, to: usize) -> Result<Tensor<f32>> {
    let (_, d) = t.rows_cols()?;
    Tensor::from_vec(&[to - from, d], t.data()[from * d..to * d].to_vec())
}

fn update(opt: &mut RmsProp<f32>, lr: f64, visit: &mut dyn FnMut(&mut dyn FnMut(&str, &mut Param<f32>))) -> Result<()> {
    let mut err = None;
    visit(&mut |n, p| {
        if err.is_none() {
            if let Err(e) = opt.update(lr, n, p) {
                err = Some(e);
            }
        }
    });
    err.map_or(Ok(()), Err)
}

/// A fine-level batch: crop window, labelled points, crop-local coordinates.
struct FineBatch {
    window: CropWindow,
    batch: QueryBatch,
    local: Vec<[f64; 2]>,
}

impl Trainer {
    /// Fresh models initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        if config.schedule == Schedule::FineOnly {
            return Err(Error::Config("fine_only training needs a trained coarse model".into()));
        }
        let models = Models::new(&config.model, config.seed, config.normal_epochs > 0)?;
        Self::with_models(config, models)
    }

    /// Continues from existing models (for instance a pretrained coarse model).
    pub fn with_models(config: TrainConfig, models: Models) -> Result<Self> {
        if models.config != config.model {
            return Err(Error::Config("models were built for a different architecture".into()));
        }
        if config.normal_epochs > 0 && models.normal.is_none() {
            return Err(Error::Config("normal epochs requested but the models have no normal net".into()));
        }
        Ok(Self {
            plan: config.plan(),
            opt_coarse: RmsProp::new(config.rms_alpha, 1e-8),
            opt_fine: RmsProp::new(config.rms_alpha, 1e-8),
            opt_normal: RmsProp::new(config.rms_alpha, 1e-8),
            config,
            models,
            epochs_done: 0,
            stopped: false,
            best: None,
            stale: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn total_epochs(&self) -> usize {
        self.plan.len()
    }

    pub fn is_done(&self) -> bool {
        self.stopped || self.epochs_done >= self.plan.len()
    }

    pub fn best_validation(&self) -> Option<f64> {
        self.best.as_ref().map(|(c, _)| *c)
    }

    /// Final models: the best validated snapshot when validation ran.
    pub fn into_models(self) -> Models {
        match self.best {
            Some((_, m)) => m,
            None => self.models,
        }
    }

    fn phase_index(&self, epoch: usize) -> usize {
        let phase = self.plan[epoch];
        self.plan[..epoch].iter().filter(|&&p| p == phase).count()
    }

    fn occupancy_epochs_done(&self) -> usize {
        self.plan[..self.epochs_done].iter().filter(|&&p| p != Phase::Normal).count()
    }

    /// Runs the next epoch of the plan.
    pub fn run_epoch(&mut self, data: &TrainingSet, validation: Option<&[RenderedSample]>) -> Result<EpochReport> {
        if self.is_done() {
            return Err(Error::Usage("training plan already finished".into()));
        }
        self.config.validate(data.resolution())?;
        let epoch = self.epochs_done;
        let phase = self.plan[epoch];
        let k = self.phase_index(epoch);
        let lr = self.config.lr.lr(k);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, phase.tag(), k as u64));
        let mut order = Vec::with_capacity(data.len() * self.config.batches_per_image);
        for _ in 0..self.config.batches_per_image {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            order.extend(idx);
        }
        // The coarse model is frozen during fine epochs: encode once.
        let planes = if phase == Phase::Fine && self.config.model.conditioning == FineConditioning::Embedding {
            data.images
                .iter()
                .map(|img| self.models.coarse.encode(&img.input_lo))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut records = Vec::new();
        for (step, group) in order.chunks(self.config.images_per_step).enumerate() {
            let ctx = StepCtx { epoch, step, phase, lr };
            match phase {
                Phase::Coarse => self.coarse_step(data, group, ctx, &mut rng, &mut records)?,
                Phase::Fine => self.fine_step(data, &planes, group, ctx, &mut rng, &mut records)?,
                Phase::Joint => self.joint_step(data, group, ctx, &mut rng, &mut records)?,
                Phase::Normal => self.normal_step(data, group, ctx, &mut records)?,
            }
        }
        self.epochs_done += 1;
        let validation = match validation {
            Some(v) if phase != Phase::Normal && self.validation_due() => Some(self.validate(v)?),
            _ => None,
        };
        Ok(EpochReport {
            epoch,
            phase,
            lr,
            records,
            validation,
        })
    }

    /// Runs the remaining plan, returning every epoch report.
    pub fn fit(&mut self, data: &TrainingSet, validation: Option<&[RenderedSample]>) -> Result<Vec<EpochReport>> {
        let mut out = Vec::new();
        while !self.is_done() {
            out.push(self.run_epoch(data, validation)?);
        }
        Ok(out)
    }

    fn validation_due(&self) -> bool {
        let every = self.config.validate_every;
        let n = self.occupancy_epochs_done();
        every > 0 && n > 0 && (n % every == 0 || self.epochs_done == self.plan.len())
    }

    fn validation_predictor(&self) -> crate::recon::Predictor {
        let fine_trained = self.plan[..self.epochs_done].iter().any(|&p| p == Phase::Fine || p == Phase::Joint);
        if fine_trained {
            crate::recon::Predictor::MultiLevel
        } else {
            crate::recon::Predictor::Coarse
        }
    }

    fn validate(&mut self, samples: &[RenderedSample]) -> Result<f64> {
        let chamfer = crate::recon::validation_chamfer(
            &self.models,
            samples,
            self.config.validation_resolution,
            self.validation_predictor(),
        )?;
        if self.best.as_ref().is_none_or(|(c, _)| chamfer < *c) {
            self.best = Some((chamfer, self.models.clone()));
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.config.patience.max(1) {
                self.stopped = true;
            }
        }
        Ok(chamfer)
    }

    fn record(&self, ctx: StepCtx, target: Target, loss: f64, lambda: Option<f64>) -> Result<StepRecord> {
        check_finite(loss, ctx.epoch, ctx.step, ctx.phase, target, lambda, ctx.lr)?;
        Ok(StepRecord {
            epoch: ctx.epoch,
            step: ctx.step,
            phase: ctx.phase,
            target,
            loss,
            lambda,
            lr: ctx.lr,
        })
    }

    fn coarse_step(&mut self, data: &TrainingSet, group: &[usize], ctx: StepCtx, rng: &mut ChaCha8Rng, out: &mut Vec<StepRecord>) -> Result<()> {
        let scale = 1.0 / group.len() as f32;
        self.models.coarse.zero_grad();
        let mut acc = Accum::default();
        for &i in group {
            let img = &data.images[i];
            let batch = sample_training_points(&img.sample.mesh, &img.oracle, &self.config.sampler, Level::Coarse, None, rng)?;
            let o = self.models.coarse.forward_train(&img.input_lo, &batch.xs(), &batch.zs())?;
            let (value, mut g) = loss_from_logits(&o.logits, &batch.labels)?;
            check_finite(value.loss, ctx.epoch, ctx.step, ctx.phase, Target::Coarse, Some(value.lambda), ctx.lr)?;
            scale_in_place(&mut g, scale);
            self.models.coarse.backward(&g, None)?;
            acc.add(value.loss, &batch.labels);
        }
        out.push(self.record(ctx, Target::Coarse, acc.loss(), Some(acc.lambda()))?);
        let coarse = &mut self.models.coarse;
        update(&mut self.opt_coarse, ctx.lr, &mut |f| coarse.visit_params_mut(f))
    }

    fn fine_batch(&self, img: &TrainingImage, rng: &mut ChaCha8Rng) -> Result<FineBatch> {
        let full = img.sample.resolution();
        let size = self.config.crop;
        let mut last = None;
        for _ in 0..self.config.crop_attempts {
            let window = if size == full {
                CropWindow::full(full)
            } else {
                let span = (full - size) / 2;
                CropWindow::new(2 * rng.random_range(0..=span), 2 * rng.random_range(0..=span), size, full)?
            };
            match sample_training_points(&img.sample.mesh, &img.oracle, &self.config.sampler, Level::Fine, Some(&window), rng) {
                Ok(batch) => {
                    let local = batch.xs().into_iter().map(|x| window.to_local(x)).collect();
                    return Ok(FineBatch { window, batch, local });
                }
                Err(e @ Error::Geometry(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Geometry("no crop attempts".into())))
    }

    fn crop_input(img: &TrainingImage, w: &CropWindow) -> Result<Tensor<f32>> {
        if w.is_full() {
            Ok(img.input_hi.clone())
        } else {
            img.input_hi.crop(w.y0, w.x0, w.size, w.size)
        }
    }

    fn fine_step(
        &mut self,
        data: &TrainingSet,
        planes: &[Tensor<f32>],
        group: &[usize],
        ctx: StepCtx,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<StepRecord>,
    ) -> Result<()> {
        let scale = 1.0 / group.len() as f32;
        self.models.fine.zero_grad();
        let mut acc = Accum::default();
        for &i in group {
            let img = &data.images[i];
            let fb = self.fine_batch(img, rng)?;
            let zs = fb.batch.zs();
            let embedding = match planes.get(i) {
                Some(plane) => Some(self.models.coarse.query(plane, &fb.batch.xs(), &zs)?.embedding),
                None => None,
            };
            let cond = self.models.fine.condition(embedding.as_ref(), &zs)?;
            let crop = Self::crop_input(img, &fb.window)?;
            let logits = self.models.fine.forward_train(&crop, &fb.local, &cond)?;
            let (value, mut g) = loss_from_logits(&logits, &fb.batch.labels)?;
            check_finite(value.loss, ctx.epoch, ctx.step, ctx.phase, Target::Fine, Some(value.lambda), ctx.lr)?;
            scale_in_place(&mut g, scale);
            self.models.fine.backward(&g)?;
            acc.add(value.loss, &fb.batch.labels);
        }
        out.push(self.record(ctx, Target::Fine, acc.loss(), Some(acc.lambda()))?);
        let fine = &mut self.models.fine;
        update(&mut self.opt_fine, ctx.lr, &mut |f| fine.visit_params_mut(f))
    }

    fn joint_step(&mut self, data: &TrainingSet, group: &[usize], ctx: StepCtx, rng: &mut ChaCha8Rng, out: &mut Vec<StepRecord>) -> Result<()> {
        let scale = 1.0 / group.len() as f32;
        self.models.coarse.zero_grad();
        self.models.fine.zero_grad();
        let (mut acc_c, mut acc_f) = (Accum::default(), Accum::default());
        for &i in group {
            let img = &data.images[i];
            let cb = sample_training_points(&img.sample.mesh, &img.oracle, &self.config.sampler, Level::Coarse, None, rng)?;
            let fb = self.fine_batch(img, rng)?;
            let both = cb.concat(&fb.batch);
            let (nc, n) = (cb.len(), both.len());
            let o = self.models.coarse.forward_train(&img.input_lo, &both.xs(), &both.zs())?;

            let (vc, gc) = loss_from_logits(&rows(&o.logits, 0, nc)?, &cb.labels)?;
            check_finite(vc.loss, ctx.epoch, ctx.step, ctx.phase, Target::Coarse, Some(vc.lambda), ctx.lr)?;
            let mut grad_logits = Tensor::zeros(&[n, 1]);
            grad_logits.data_mut()[..nc].copy_from_slice(gc.data());
            scale_in_place(&mut grad_logits, scale);

            let zs = fb.batch.zs();
            let embedding = rows(&o.embedding, nc, n)?;
            let cond = self.models.fine.condition(Some(&embedding), &zs)?;
            let crop = Self::crop_input(img, &fb.window)?;
            let logits = self.models.fine.forward_train(&crop, &fb.local, &cond)?;
            let (vf, mut gf) = loss_from_logits(&logits, &fb.batch.labels)?;
            check_finite(vf.loss, ctx.epoch, ctx.step, ctx.phase, Target::Fine, Some(vf.lambda), ctx.lr)?;
            scale_in_place(&mut gf, scale);
            let gcond = self.models.fine.backward(&gf)?;

            let d = self.models.coarse.embedding_width();
            let mut grad_emb = Tensor::zeros(&[n, d]);
            if self.config.model.conditioning == FineConditioning::Embedding {
                grad_emb.data_mut()[nc * d..].copy_from_slice(gcond.data());
            }
            self.models.coarse.backward(&grad_logits, Some(&grad_emb))?;
            acc_c.add(vc.loss, &cb.labels);
            acc_f.add(vf.loss, &fb.batch.labels);
        }
        out.push(self.record(ctx, Target::Coarse, acc_c.loss(), Some(acc_c.lambda()))?);
        out.push(self.record(ctx, Target::Fine, acc_f.loss(), Some(acc_f.lambda()))?);
        let coarse = &mut self.models.coarse;
        update(&mut self.opt_coarse, ctx.lr, &mut |f| coarse.visit_params_mut(f))?;
        let fine = &mut self.models.fine;
        update(&mut self.opt_fine, ctx.lr, &mut |f| fine.visit_params_mut(f))
    }

    fn normal_step(&mut self, data: &TrainingSet, group: &[usize], ctx: StepCtx, out: &mut Vec<StepRecord>) -> Result<()> {
        let net = self
            .models
            .normal
            .as_mut()
            .ok_or_else(|| Error::Usage("normal phase without a normal net".into()))?;
        let scale = 1.0 / group.len() as f32;
        net.zero_grad();
        let mut total = 0.0;
        for &i in group {
            let s = &data.images[i].sample;
            let pred = net.forward_train(&s.img_hi)?;
            let (l, mut g) = masked_l1(&pred, &s.bnml_hi, &s.mask)?;
            check_finite(l, ctx.epoch, ctx.step, ctx.phase, Target::Normal, None, ctx.lr)?;
            scale_in_place(&mut g, scale);
            net.backward(&g)?;
            total += l;
        }
        update(&mut self.opt_normal, ctx.lr, &mut |f| net.visit_params_mut(f))?;
        out.push(self.record(ctx, Target::Normal, total / group.len() as f64, None)?);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct StepCtx {
    epoch: usize,
    step: usize,
    phase: Phase,
    lr: f64,
}

/// Loss mean over images and the outside fraction over all their labels.
#[derive(Default)]
struct Accum {
    loss: f64,
    images: usize,
    outside: usize,
    labels: usize,
}

impl Accum {
    fn add(&mut self, loss: f64, labels: &[f32]) {
        self.loss += loss;
        self.images += 1;
        self.outside += labels.iter().filter(|&&f| f == 0.0).count();
        self.labels += labels.len();
    }

    fn loss(&self) -> f64 {
        self.loss / self.images as f64
    }

    fn lambda(&self) -> f64 {
        self.outside as f64 / self.labels as f64
    }
}

/// Coarse pretraining; returns the model and its per-epoch mean loss.
pub fn pretrain_coarse(data: &TrainingSet, config: &TrainConfig) -> Result<(CoarseModel<f32>, Vec<f64>)> {
    let cfg = TrainConfig {
        schedule: Schedule::CoarseOnly,
        normal_epochs: 0,
        ..config.clone()
    };
    let mut trainer = Trainer::new(cfg)?;
    let reports = trainer.fit(data, None)?;
    let curve = reports.iter().filter_map(|r| r.mean_loss(Target::Coarse)).collect();
    Ok((trainer.into_models().coarse, curve))
}

/// Fine training against a frozen coarse model.
pub fn train_fine(data: &TrainingSet, coarse: &CoarseModel<f32>, config: &TrainConfig) -> Result<FineModel<f32>> {
    let cfg = TrainConfig {
        schedule: Schedule::FineOnly,
        normal_epochs: 0,
        ..config.clone()
    };
    let mut models = Models::new(&cfg.model, cfg.seed, false)?;
    models.coarse = coarse.clone();
    let mut trainer = Trainer::with_models(cfg, models)?;
    trainer.fit(data, None)?;
    Ok(trainer.into_models().fine)
}

/// Alternate (or end-to-end, per `config.schedule`) training of both levels.
pub fn alternate_schedule(data: &TrainingSet, config: &TrainConfig) -> Result<(CoarseModel<f32>, FineModel<f32>)> {
    if !matches!(config.schedule, Schedule::Alternate | Schedule::EndToEnd) {
        return Err(Error::Config(format!(
            "alternate_schedule needs the alternate or end_to_end schedule, got {}",
            config.schedule.name()
        )));
    }
    let mut trainer = Trainer::new(TrainConfig {
        normal_epochs: 0,
        ..config.clone()
    })?;
    trainer.fit(data, None)?;
    let m = trainer.into_models();
    Ok((m.coarse, m.fine))
}

/// Trains only the back-normal predictor.
pub fn train_normal_net(data: &TrainingSet, config: &TrainConfig) -> Result<NormalNet<f32>> {
    let cfg = TrainConfig {
        schedule: Schedule::CoarseOnly,
        coarse_epochs: 0,
        normal_epochs: config.normal_epochs,
        ..config.clone()
    };
    let mut trainer = Trainer::new(cfg)?;
    trainer.fit(data, None)?;
    trainer
        .into_models()
        .normal
        .ok_or_else(|| Error::Config("no normal epochs requested".into()))
}
