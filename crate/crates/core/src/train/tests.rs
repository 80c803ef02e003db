use super::trainer::derive_seed;
use super::*;
use crate::geometry::icosphere;
use crate::pifu::{CropWindow, SamplerConfig};
use crate::synth::{render_orthographic, RenderedSample};

fn samples() -> Vec<RenderedSample> {
    [0.5, 0.6]
        .iter()
        .map(|&r| render_orthographic(&icosphere(r, 3, [0.05, -0.05, 0.0]), 32).unwrap())
        .collect()
}

fn small(schedule: Schedule) -> TrainConfig {
    TrainConfig {
        schedule,
        coarse_epochs: 2,
        fine_epochs: 2,
        alternate_coarse: 1,
        alternate_fine: 1,
        batches_per_image: 1,
        crop: 16,
        sampler: SamplerConfig { n_points: 64, ..Default::default() },
        seed: 3,
        ..Default::default()
    }
}

fn data(cfg: &TrainConfig) -> TrainingSet {
    TrainingSet::new(samples(), cfg.model.normals).unwrap()
}

#[test]
fn zero_epochs_leave_the_models_untouched() {
    let cfg = TrainConfig { coarse_epochs: 0, ..small(Schedule::CoarseOnly) };
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let before = t.models().clone();
    assert!(t.fit(&data(&cfg), None).unwrap().is_empty());
    assert!(t.models().same_parameters(&before));
}

#[test]
fn same_seed_same_curve_and_lambda_is_exact() {
    let cfg = small(Schedule::Alternate);
    let d = data(&cfg);
    let run = || {
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.fit(&d, None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.phase).collect::<Vec<_>>(), cfg.plan());
    for r in a.iter().flat_map(|e| &e.records) {
        let l = r.lambda.unwrap();
        // 64 labels per batch and one image per step.
        assert_eq!(l * 64.0, (l * 64.0).round());
        assert!(l > 0.0 && l < 1.0);
    }
}

#[test]
fn fine_phase_freezes_the_coarse_model() {
    let cfg = small(Schedule::Alternate);
    let d = data(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    let first = t.run_epoch(&d, None).unwrap();
    assert_eq!(first.phase, Phase::Coarse);
    let coarse = t.models().coarse.clone();
    let fine = t.models().fine.clone();
    let second = t.run_epoch(&d, None).unwrap();
    assert_eq!(second.phase, Phase::Fine);
    let bits = |m: &crate::pifu::CoarseModel<f32>| {
        let mut v = Vec::new();
        m.visit_params(&mut |_, p| v.extend(p.value.data().iter().map(|x| x.to_bits())));
        v
    };
    assert_eq!(bits(&coarse), bits(&t.models().coarse));
    let mut changed = false;
    let mut old = Vec::new();
    fine.visit_params(&mut |_, p| old.extend_from_slice(p.value.data()));
    let mut i = 0;
    t.models().fine.visit_params(&mut |_, p| {
        for v in p.value.data() {
            changed |= *v != old[i];
            i += 1;
        }
    });
    assert!(changed);
}

#[test]
fn end_to_end_updates_both_levels() {
    let cfg = TrainConfig { coarse_epochs: 1, fine_epochs: 1, ..small(Schedule::EndToEnd) };
    let d = data(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    let before = t.models().clone();
    let r = t.run_epoch(&d, None).unwrap();
    assert_eq!(r.phase, Phase::Joint);
    assert_eq!(r.records.len(), 2 * d.len());
    let after = t.models();
    assert!(!Models { fine: before.fine.clone(), ..after.clone() }.same_parameters(&before));
    assert!(!Models { coarse: before.coarse.clone(), ..after.clone() }.same_parameters(&before));
}

#[test]
fn full_crop_equals_uncropped_gradients() {
    let cfg = small(Schedule::Alternate);
    let d = data(&cfg);
    let img = &d.images[0];
    let models = Models::new(&cfg.model, 1, false).unwrap();
    let w = CropWindow::full(32);
    let xs = vec![[0.1, -0.2], [0.4, 0.3], [-0.7, 0.05]];
    let zs = [0.0, 0.2, -0.3];
    let local: Vec<[f64; 2]> = xs.iter().map(|&x| w.to_local(x)).collect();
    let emb = models.coarse.query(&models.coarse.encode(&img.input_lo).unwrap(), &xs, &zs).unwrap().embedding;
    let grads = |points: &[[f64; 2]], image: &crate::nn::Tensor<f32>| {
        let mut fine = models.fine.clone();
        let logits = fine.forward_train(image, points, &emb).unwrap();
        let (_, g) = crate::pifu::loss_from_logits(&logits, &[1.0, 0.0, 1.0]).unwrap();
        fine.backward(&g).unwrap();
        let mut v = Vec::new();
        fine.visit_params(&mut |_, p| v.extend(p.grad.data().iter().map(|x| x.to_bits())));
        v
    };
    let cropped = img.input_hi.crop(0, 0, 32, 32).unwrap();
    assert_eq!(grads(&xs, &img.input_hi), grads(&local, &cropped));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Schedule::Alternate);
    let d = data(&cfg);
    let mut full = Trainer::new(cfg.clone()).unwrap();
    let all = full.fit(&d, None).unwrap();

    let mut part = Trainer::new(cfg.clone()).unwrap();
    let mut logs = vec![part.run_epoch(&d, None).unwrap(), part.run_epoch(&d, None).unwrap()];
    let path = dir.path().join("ckpt.bin");
    part.save_checkpoint(&path).unwrap();
    let mut resumed = Trainer::resume(cfg.clone(), &path).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    logs.extend(resumed.fit(&d, None).unwrap());
    assert_eq!(logs, all);
    assert_eq!(resumed.checkpoint_bytes(), full.checkpoint_bytes());

    let other = TrainConfig { seed: 4, ..cfg };
    assert!(matches!(Trainer::resume(other, &path), Err(crate::Error::Config(_))));
    let loaded = load_models(&path).unwrap();
    assert!(loaded.same_parameters(part.models()));
}

#[test]
fn models_round_trip_and_reject_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let m = Models::new(&crate::pifu::ModelConfig::default(), 9, true).unwrap();
    let path = dir.path().join("m.bin");
    save_models(&m, &path).unwrap();
    assert!(load_models(&path).unwrap().same_parameters(&m));
    let mut t = m.to_tensors();
    t.pop();
    assert!(Models::from_tensors(&m.config, &t).is_err());
    let narrow = crate::pifu::ModelConfig { fine_channels: 4, ..m.config.clone() };
    assert!(Models::from_tensors(&narrow, &m.to_tensors()).is_err());
}

#[test]
fn coarse_loss_decreases() {
    let cfg = TrainConfig { coarse_epochs: 12, batches_per_image: 4, ..small(Schedule::CoarseOnly) };
    let (_, curve) = pretrain_coarse(&data(&cfg), &cfg).unwrap();
    assert_eq!(curve.len(), 12);
    let head = curve[..3].iter().sum::<f64>();
    let tail = curve[9..].iter().sum::<f64>();
    assert!(tail < head, "{curve:?}");
}

#[test]
fn normal_net_training_reduces_l1() {
    let cfg = TrainConfig { normal_epochs: 6, ..small(Schedule::CoarseOnly) };
    let d = data(&cfg);
    let mut t = Trainer::new(TrainConfig { coarse_epochs: 0, ..cfg }).unwrap();
    let reports = t.fit(&d, None).unwrap();
    let first = reports[0].mean_loss(Target::Normal).unwrap();
    let last = reports.last().unwrap().mean_loss(Target::Normal).unwrap();
    assert!(last < first, "{first} -> {last}");
    assert!(reports.iter().flat_map(|r| &r.records).all(|r| r.lambda.is_none()));
}

#[test]
fn fine_only_requires_models_and_schedule_wrappers_validate() {
    assert!(Trainer::new(small(Schedule::FineOnly)).is_err());
    let cfg = small(Schedule::CoarseOnly);
    assert!(alternate_schedule(&data(&cfg), &cfg).is_err());
}

#[test]
fn derived_seeds_differ_by_phase_and_epoch() {
    assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 2, 0));
    assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 1, 1));
}

#[test]
fn step_record_line_format() {
    let r = StepRecord { epoch: 1, step: 2, phase: Phase::Joint, target: Target::Fine, loss: 0.25, lambda: Some(0.5), lr: 0.001 };
    assert_eq!(r.to_line(), "epoch=1 step=2 phase=joint target=fine loss=0.25 lambda=0.5 lr=0.001");
}
