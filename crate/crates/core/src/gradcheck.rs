//! Finite-difference verification of every backward pass in 64-bit.
//!
//! Each subject exposes a scalar objective (a random projection of its
//! outputs) and analytic gradients for a list of slots (inputs and
//! parameters). Sampled coordinates are compared against central differences.
//! Near a kink of a piecewise-linear activation the second difference stops
//! scaling with the step; such coordinates are skipped and counted.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{sigmoid, Activation, LayerSpec, Param, Sequential, SkipMlp, Tensor};
use crate::pifu::{
    index_bilinear, index_bilinear_backward, loss_from_logits, occupancy_loss, CoarseModel, FineConditioning,
    FineModel, ModelConfig,
};
use crate::synth::NormalInput;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-5;
pub const SEEDS: u64 = 20;
/// Coordinates sampled per slot and seed.
const COORDS: usize = 8;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-4;
/// Allowed departure of `D(h/2)` from `D(h)/2`, relative, where `D` is the
/// second difference scaled by `1/h`.
const KINK: f64 = 0.25;
/// Absolute slack of the kink test, above round-off.
const KINK_FLOOR: f64 = 1e-7;

trait Subject {
    fn value(&self) -> Result<f64>;
    /// Analytic gradients, one vector per slot.
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>>;
    fn nudge(&mut self, slot: usize, idx: usize, delta: f64);
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn param_grads(visit: &dyn Fn(&mut dyn FnMut(&str, &Param<f64>))) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    visit(&mut |_, p| out.push(p.grad.data().to_vec()));
    out
}

fn nudge_param(visit: &mut dyn FnMut(&mut dyn FnMut(&str, &mut Param<f64>)), slot: usize, idx: usize, delta: f64) {
    let mut c = 0;
    visit(&mut |_, p| {
        if c == slot {
            p.value.data_mut()[idx] += delta;
        }
        c += 1;
    });
}

fn nudge_tensor(t: &mut Tensor<f64>, idx: usize, delta: f64) {
    t.data_mut()[idx] += delta;
}

/// A single layer (or layer stack): slot 0 is the input, then parameters.
struct StackSubject {
    net: Sequential<f64>,
    x: Tensor<f64>,
    w: Tensor<f64>,
}

impl Subject for StackSubject {
    fn value(&self) -> Result<f64> {
        Ok(dot(&self.net.forward(&self.x)?, &self.w))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        self.net.visit_params_mut(&mut |_, p| p.zero_grad());
        self.net.forward_train(&self.x)?;
        let gx = self.net.backward(&self.w)?;
        let mut out = vec![gx.into_data()];
        out.extend(param_grads(&|f| self.net.visit_params(f)));
        Ok(out)
    }

    fn nudge(&mut self, slot: usize, idx: usize, delta: f64) {
        if slot == 0 {
            nudge_tensor(&mut self.x, idx, delta);
        } else {
            nudge_param(&mut |f| self.net.visit_params_mut(f), slot - 1, idx, delta);
        }
    }
}

fn stack(specs: Vec<LayerSpec>, input: &[usize], seed: u64) -> Result<Box<dyn Subject>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::from_specs(&specs, &mut rng)?;
    // Nonzero biases and affine terms so every parameter matters.
    net.visit_params_mut(&mut |_, p| {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    });
    let x = random(input, &mut rng, -1.0, 1.0);
    let y = net.forward(&x)?;
    let w = random(y.shape(), &mut rng, -1.0, 1.0);
    Ok(Box::new(StackSubject { net, x, w }))
}

/// Class-balanced BCE with respect to the logits.
struct LossSubject {
    logits: Tensor<f64>,
    labels: Vec<f32>,
}

impl Subject for LossSubject {
    fn value(&self) -> Result<f64> {
        let p: Vec<f64> = self.logits.data().iter().map(|&z| sigmoid(z)).collect();
        Ok(occupancy_loss(&p, &self.labels)?.loss)
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![loss_from_logits(&self.logits, &self.labels)?.1.into_data()])
    }

    fn nudge(&mut self, _: usize, idx: usize, delta: f64) {
        nudge_tensor(&mut self.logits, idx, delta);
    }
}

/// Bilinear feature lookup with respect to the plane.
struct BilinearSubject {
    plane: Tensor<f64>,
    xs: Vec<[f64; 2]>,
    w: Tensor<f64>,
}

impl Subject for BilinearSubject {
    fn value(&self) -> Result<f64> {
        Ok(dot(&index_bilinear(&self.plane, &self.xs)?, &self.w))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![index_bilinear_backward(&self.w, &self.xs, self.plane.shape())?.into_data()])
    }

    fn nudge(&mut self, _: usize, idx: usize, delta: f64) {
        nudge_tensor(&mut self.plane, idx, delta);
    }
}

/// Skip MLP with an exported embedding: slot 0 input, then parameters.
struct MlpSubject {
    mlp: SkipMlp<f64>,
    x: Tensor<f64>,
    w: Tensor<f64>,
    we: Tensor<f64>,
}

impl Subject for MlpSubject {
    fn value(&self) -> Result<f64> {
        let o = self.mlp.forward(&self.x)?;
        Ok(dot(&o.logits, &self.w) + dot(o.embedding.as_ref().expect("embedding"), &self.we))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        self.mlp.visit_params_mut(&mut |_, p| p.zero_grad());
        self.mlp.forward_train(&self.x)?;
        let gx = self.mlp.backward(&self.w, Some(&self.we))?;
        let mut out = vec![gx.into_data()];
        out.extend(param_grads(&|f| self.mlp.visit_params(f)));
        Ok(out)
    }

    fn nudge(&mut self, slot: usize, idx: usize, delta: f64) {
        if slot == 0 {
            nudge_tensor(&mut self.x, idx, delta);
        } else {
            nudge_param(&mut |f| self.mlp.visit_params_mut(f), slot - 1, idx, delta);
        }
    }
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        coarse_channels: 6,
        fine_channels: 4,
        groups: 2,
        coarse_hidden: vec![12, 10, 8, 6],
        fine_hidden: vec![10, 8, 6],
        normals: NormalInput::NoNormals,
        ..ModelConfig::default()
    }
}

/// Rebuilds an encoder with sigmoids in place of leaky ReLUs. A full
/// encoder holds thousands of kinks; their summed effect on a central
/// difference scales like curvature and evades the kink test. The composite
/// checks verify wiring, and each activation kind is checked on its own.
fn smooth_encoder(encoder: &Sequential<f64>, rng: &mut ChaCha8Rng) -> Result<Sequential<f64>> {
    let specs: Vec<LayerSpec> = encoder
        .specs()
        .iter()
        .map(|s| match s {
            LayerSpec::Activation(Activation::LeakyRelu(_)) => LayerSpec::Activation(Activation::Sigmoid),
            other => other.clone(),
        })
        .collect();
    Sequential::from_specs(&specs, rng)
}

fn query_points(n: usize, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<f64>) {
    let xs = (0..n).map(|_| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)]).collect();
    let zs = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
    (xs, zs)
}

/// Encoder, lookup and MLP of the coarse level: parameters only.
struct CoarseSubject {
    model: CoarseModel<f64>,
    image: Tensor<f64>,
    xs: Vec<[f64; 2]>,
    zs: Vec<f64>,
    w: Tensor<f64>,
    we: Tensor<f64>,
}

impl Subject for CoarseSubject {
    fn value(&self) -> Result<f64> {
        let plane = self.model.encode(&self.image)?;
        let o = self.model.query(&plane, &self.xs, &self.zs)?;
        Ok(dot(&o.logits, &self.w) + dot(&o.embedding, &self.we))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        self.model.zero_grad();
        self.model.forward_train(&self.image, &self.xs, &self.zs)?;
        self.model.backward(&self.w, Some(&self.we))?;
        Ok(param_grads(&|f| self.model.visit_params(f)))
    }

    fn nudge(&mut self, slot: usize, idx: usize, delta: f64) {
        nudge_param(&mut |f| self.model.visit_params_mut(f), slot, idx, delta);
    }
}

/// Fine level: slot 0 is the conditioning input, then parameters.
struct FineSubject {
    model: FineModel<f64>,
    image: Tensor<f64>,
    xs: Vec<[f64; 2]>,
    cond: Tensor<f64>,
    w: Tensor<f64>,
}

impl Subject for FineSubject {
    fn value(&self) -> Result<f64> {
        let plane = self.model.encode(&self.image)?;
        let p = self.model.query(&plane, &self.xs, &self.cond)?;
        // `query` returns probabilities; recover logits for a linear objective.
        Ok(p.iter().zip(self.w.data()).map(|(&q, &w)| w * (q / (1.0 - q)).ln()).sum())
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        self.model.zero_grad();
        self.model.forward_train(&self.image, &self.xs, &self.cond)?;
        let gc = self.model.backward(&self.w)?;
        let mut out = vec![gc.into_data()];
        out.extend(param_grads(&|f| self.model.visit_params(f)));
        Ok(out)
    }

    fn nudge(&mut self, slot: usize, idx: usize, delta: f64) {
        if slot == 0 {
            nudge_tensor(&mut self.cond, idx, delta);
        } else {
            nudge_param(&mut |f| self.model.visit_params_mut(f), slot - 1, idx, delta);
        }
    }
}

/// Outcome of one named check over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub seeds: u64,
    pub coords: usize,
    pub kinks: usize,
    pub max_rel: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.coords > 0 && self.max_rel < REL_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<CheckRow>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<22} {:>5} {:>7} {:>6} {:>10}  result\n", "check", "seeds", "coords", "kinks", "max_rel");
        for r in &self.rows {
            s += &format!(
                "{:<22} {:>5} {:>7} {:>6} {:>10.2e}  {}\n",
                r.name,
                r.seeds,
                r.coords,
                r.kinks,
                r.max_rel,
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

fn run(name: &str, seeds: u64, make: &dyn Fn(u64) -> Result<Box<dyn Subject>>) -> Result<CheckRow> {
    let mut row = CheckRow {
        name: name.to_string(),
        seeds,
        coords: 0,
        kinks: 0,
        max_rel: 0.0,
    };
    for seed in 0..seeds {
        let mut s = make(seed)?;
        let grads = s.analytic()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let f0 = s.value()?;
        for (slot, g) in grads.iter().enumerate() {
            for idx in sample(&mut rng, g.len(), COORDS.min(g.len())) {
                let mut at = |d: f64| -> Result<f64> {
                    s.nudge(slot, idx, d);
                    let v = s.value();
                    s.nudge(slot, idx, -d);
                    v
                };
                let (fp, fm) = (at(STEP)?, at(-STEP)?);
                let (hp, hm) = (at(0.5 * STEP)?, at(-0.5 * STEP)?);
                let d_full = (fp - 2.0 * f0 + fm) / STEP;
                let d_half = (hp - 2.0 * f0 + hm) / (0.5 * STEP);
                if (d_half - 0.5 * d_full).abs() > KINK * (0.5 * d_full).abs() + KINK_FLOOR {
                    row.kinks += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * STEP);
                let rel = (numeric - g[idx]).abs() / numeric.abs().max(g[idx].abs()).max(FLOOR);
                row.max_rel = row.max_rel.max(rel);
                row.coords += 1;
            }
        }
    }
    Ok(row)
}

/// Runs every check with `seeds` seeds each.
pub fn run_all(seeds: u64) -> Result<GradcheckReport> {
    let lrelu = || LayerSpec::Activation(Activation::LEAKY);
    let mut rows = Vec::new();
    let layer = |name: &str, specs: Vec<LayerSpec>, input: Vec<usize>| -> Result<CheckRow> {
        run(name, seeds, &|seed| stack(specs.clone(), &input, seed))
    };
    rows.push(layer("conv2d k3 s1", vec![LayerSpec::conv(3, 4, 3, 1)], vec![3, 6, 6])?);
    rows.push(layer("conv2d k5 s2", vec![LayerSpec::conv(2, 3, 5, 2)], vec![2, 7, 7])?);
    rows.push(layer("linear", vec![LayerSpec::Linear { inputs: 5, outputs: 4 }], vec![6, 5])?);
    rows.push(layer("group_norm", vec![LayerSpec::GroupNorm { channels: 4, groups: 2 }], vec![4, 3, 3])?);
    rows.push(layer("relu", vec![LayerSpec::Activation(Activation::Relu)], vec![2, 4, 4])?);
    rows.push(layer("leaky_relu", vec![lrelu()], vec![2, 4, 4])?);
    rows.push(layer("sigmoid", vec![LayerSpec::Activation(Activation::Sigmoid)], vec![2, 4, 4])?);
    rows.push(layer("downsample", vec![LayerSpec::Downsample], vec![2, 4, 6])?);
    rows.push(layer("upsample", vec![LayerSpec::Upsample], vec![2, 3, 2])?);
    rows.push(layer(
        "conv-gn-lrelu stack",
        vec![
            LayerSpec::conv(2, 4, 3, 1),
            LayerSpec::GroupNorm { channels: 4, groups: 2 },
            lrelu(),
            LayerSpec::Downsample,
            LayerSpec::conv(4, 3, 3, 1),
        ],
        vec![2, 8, 8],
    )?);
    rows.push(run("occupancy loss", seeds, &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let mut labels: Vec<f32> = (0..n).map(|_| rng.random_range(0..2) as f32).collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        Ok(Box::new(LossSubject {
            logits: random(&[n, 1], &mut rng, -3.0, 3.0),
            labels,
        }))
    })?);
    rows.push(run("bilinear lookup", seeds, &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = random(&[3, 5, 4], &mut rng, -1.0, 1.0);
        let (xs, _) = query_points(7, &mut rng);
        let w = random(&[7, 3], &mut rng, -1.0, 1.0);
        Ok(Box::new(BilinearSubject { plane, xs, w }))
    })?);
    rows.push(run("skip mlp", seeds, &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = SkipMlp::new(&[5, 9, 8, 7, 6, 1], &[3, 4, 5], Some(3), &mut rng)?;
        let x = random(&[6, 5], &mut rng, -1.0, 1.0);
        let w = random(&[6, 1], &mut rng, -1.0, 1.0);
        let we = random(&[6, 7], &mut rng, -1.0, 1.0);
        Ok(Box::new(MlpSubject { mlp, x, w, we }))
    })?);
    rows.push(run("coarse model", seeds, &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = tiny_model_config();
        let mut model = CoarseModel::new(&cfg, &mut rng)?;
        model.encoder = smooth_encoder(&model.encoder, &mut rng)?;
        let image = random(&[3, 16, 16], &mut rng, 0.0, 1.0);
        let (xs, zs) = query_points(6, &mut rng);
        let w = random(&[6, 1], &mut rng, -1.0, 1.0);
        let we = random(&[6, model.embedding_width()], &mut rng, -1.0, 1.0);
        Ok(Box::new(CoarseSubject { model, image, xs, zs, w, we }))
    })?);
    rows.push(run("skip mlp, fine widths", seeds, &|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = SkipMlp::new(&[5, 10, 8, 6, 1], &[2, 3], Some(1), &mut rng)?;
        let x = random(&[6, 5], &mut rng, -1.0, 1.0);
        let w = random(&[6, 1], &mut rng, -1.0, 1.0);
        let we = Tensor::zeros(&[6, 10]);
        Ok(Box::new(MlpSubject { mlp, x, w, we }))
    })?);
    for conditioning in [FineConditioning::Embedding, FineConditioning::AbsoluteDepth] {
        rows.push(run(&format!("fine model {}", conditioning.name()), seeds, &|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = ModelConfig {
                conditioning,
                ..tiny_model_config()
            };
            let mut model = FineModel::new(&cfg, &mut rng)?;
            model.encoder = smooth_encoder(&model.encoder, &mut rng)?;
            let image = random(&[3, 12, 12], &mut rng, 0.0, 1.0);
            let (xs, _) = query_points(6, &mut rng);
            let cond = random(&[6, model.condition_width()], &mut rng, -1.0, 1.0);
            let w = random(&[6, 1], &mut rng, -1.0, 1.0);
            Ok(Box::new(FineSubject { model, image, xs, cond, w }))
        })?);
    }
    Ok(GradcheckReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_a_few_seeds() {
        let r = run_all(3).unwrap();
        assert!(r.all_passed(), "{}", r.to_table());
        assert!(r.rows.iter().all(|row| row.coords > 0));
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        struct Wrong(Tensor<f64>);
        impl Subject for Wrong {
            fn value(&self) -> Result<f64> {
                Ok(self.0.data().iter().map(|v| v * v).sum())
            }
            fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
                // Missing the factor 2.
                Ok(vec![self.0.data().to_vec()])
            }
            fn nudge(&mut self, _: usize, idx: usize, delta: f64) {
                self.0.data_mut()[idx] += delta;
            }
        }
        let row = run("wrong", 2, &|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Box::new(Wrong(random(&[4], &mut rng, 0.5, 1.0))))
        })
        .unwrap();
        assert!(!row.passed());
    }
}
