//! Coarse and fine pixel-aligned occupancy predictors.
//!
//! Coarse: `f_L = sigmoid(g_L([phi_L(x) ; Z]))`, also exporting the hidden
//! activation `Omega` of `g_L`. Fine: `f_H = sigmoid(g_H([phi_H(x) ; Omega]))`,
//! or `[phi_H(x) ; Z]` in the absolute-depth variant.

use rand::Rng;

use super::projection::{index_bilinear, index_bilinear_backward};
use crate::error::{Error, Result};
use crate::kv::{format_list, parse_list, parse_value, unknown_key, KeyValue};
use crate::nn::mlp::concat_rows;
use crate::nn::{receptive_field, sigmoid, Activation, LayerSpec, MlpOutput, Param, Real, Sequential, SkipMlp, Tensor};
use crate::synth::NormalInput;

/// What the fine MLP receives next to its image features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FineConditioning {
    /// The coarse embedding `Omega`.
    #[default]
    Embedding,
    /// The raw depth `Z`.
    AbsoluteDepth,
}

impl FineConditioning {
    pub fn name(self) -> &'static str {
        match self {
            FineConditioning::Embedding => "embedding",
            FineConditioning::AbsoluteDepth => "absolute_depth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(FineConditioning::Embedding),
            "absolute_depth" => Ok(FineConditioning::AbsoluteDepth),
            other => Err(Error::Config(format!("unknown fine conditioning {other:?}"))),
        }
    }
}

pub fn normal_input_name(n: NormalInput) -> &'static str {
    match n {
        NormalInput::WithNormals => "with_normals",
        NormalInput::NoNormals => "no_normals",
    }
}

pub fn parse_normal_input(s: &str) -> Result<NormalInput> {
    match s {
        "with_normals" => Ok(NormalInput::WithNormals),
        "no_normals" => Ok(NormalInput::NoNormals),
        other => Err(Error::Config(format!("unknown normal input {other:?}"))),
    }
}

/// Architecture table. [`ModelConfig::default`] is the desk-scale map;
/// [`ModelConfig::full_scale`] keeps the widths of the original system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub coarse_channels: usize,
    pub fine_channels: usize,
    pub groups: usize,
    /// Hidden widths of the coarse MLP (input and output widths implied).
    pub coarse_hidden: Vec<usize>,
    /// 1-based linear layers that also receive the MLP input.
    pub coarse_skip: Vec<usize>,
    /// 1-based linear layer whose activation is exported as `Omega`.
    pub embedding_layer: usize,
    pub fine_hidden: Vec<usize>,
    pub fine_skip: Vec<usize>,
    pub normals: NormalInput,
    pub conditioning: FineConditioning,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            coarse_channels: 32,
            fine_channels: 8,
            groups: 4,
            coarse_hidden: vec![128, 64, 32, 16],
            coarse_skip: vec![3, 4, 5],
            embedding_layer: 3,
            fine_hidden: vec![128, 64, 32],
            fine_skip: vec![2, 3],
            normals: NormalInput::WithNormals,
            conditioning: FineConditioning::Embedding,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        Self {
            coarse_channels: 256,
            fine_channels: 16,
            groups: 32,
            coarse_hidden: vec![1024, 512, 256, 128],
            fine_hidden: vec![512, 256, 128],
            ..Self::default()
        }
    }

    pub fn coarse_widths(&self) -> Vec<usize> {
        let mut w = vec![self.coarse_channels + 1];
        w.extend(&self.coarse_hidden);
        w.push(1);
        w
    }

    pub fn embedding_width(&self) -> Result<usize> {
        self.coarse_hidden
            .get(self.embedding_layer.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Config(format!("embedding layer {} is not hidden", self.embedding_layer)))
    }

    pub fn fine_widths(&self) -> Result<Vec<usize>> {
        let cond = match self.conditioning {
            FineConditioning::Embedding => self.embedding_width()?,
            FineConditioning::AbsoluteDepth => 1,
        };
        let mut w = vec![self.fine_channels + cond];
        w.extend(&self.fine_hidden);
        w.push(1);
        Ok(w)
    }
}

impl KeyValue for ModelConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("coarse_channels".into(), self.coarse_channels.to_string()),
            ("fine_channels".into(), self.fine_channels.to_string()),
            ("groups".into(), self.groups.to_string()),
            ("coarse_hidden".into(), format_list(&self.coarse_hidden)),
            ("coarse_skip".into(), format_list(&self.coarse_skip)),
            ("embedding_layer".into(), self.embedding_layer.to_string()),
            ("fine_hidden".into(), format_list(&self.fine_hidden)),
            ("fine_skip".into(), format_list(&self.fine_skip)),
            ("normals".into(), normal_input_name(self.normals).into()),
            ("conditioning".into(), self.conditioning.name().into()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "coarse_channels" => self.coarse_channels = parse_value(key, value)?,
            "fine_channels" => self.fine_channels = parse_value(key, value)?,
            "groups" => self.groups = parse_value(key, value)?,
            "coarse_hidden" => self.coarse_hidden = parse_list(key, value)?,
            "coarse_skip" => self.coarse_skip = parse_list(key, value)?,
            "embedding_layer" => self.embedding_layer = parse_value(key, value)?,
            "fine_hidden" => self.fine_hidden = parse_list(key, value)?,
            "fine_skip" => self.fine_skip = parse_list(key, value)?,
            "normals" => self.normals = parse_normal_input(value)?,
            "conditioning" => self.conditioning = FineConditioning::parse(value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

fn lrelu() -> LayerSpec {
    LayerSpec::Activation(Activation::LEAKY)
}

/// `/4` encoder with group normalization for the full low-resolution image.
pub fn coarse_encoder_specs(in_channels: usize, out_channels: usize, groups: usize) -> Vec<LayerSpec> {
    let gn = |c| LayerSpec::GroupNorm { channels: c, groups };
    vec![
        LayerSpec::conv(in_channels, 16, 3, 1),
        gn(16),
        lrelu(),
        LayerSpec::Downsample,
        LayerSpec::conv(16, 32, 3, 1),
        gn(32),
        lrelu(),
        LayerSpec::Downsample,
        LayerSpec::conv(32, 32, 5, 1),
        gn(32),
        lrelu(),
        LayerSpec::conv(32, 32, 5, 1),
        gn(32),
        lrelu(),
        LayerSpec::conv(32, out_channels, 3, 1),
    ]
}

/// `/2` encoder for high-resolution windows. It has no normalization layer,
/// so its output on an even-aligned window equals the matching region of the
/// full-image output away from the borders.
pub fn fine_encoder_specs(in_channels: usize, out_channels: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(in_channels, 16, 3, 1),
        lrelu(),
        LayerSpec::conv(16, 16, 3, 1),
        lrelu(),
        LayerSpec::Downsample,
        LayerSpec::conv(16, out_channels, 3, 1),
    ]
}

#[derive(Debug, Clone)]
struct LookupCache {
    xs: Vec<[f64; 2]>,
    plane_shape: Vec<usize>,
    feature_channels: usize,
}

/// Gathers pixel-aligned features and appends `extra` columns.
fn mlp_input<T: Real>(plane: &Tensor<T>, xs: &[[f64; 2]], extra: &Tensor<T>) -> Result<Tensor<T>> {
    let feats = index_bilinear(plane, xs)?;
    concat_rows(&feats, extra)
}

fn column<T: Real>(values: &[f64]) -> Tensor<T> {
    Tensor::from_vec(&[values.len(), 1], values.iter().map(|&v| T::from_f64(v)).collect()).expect("column shape")
}

fn check_channels(what: &str, image: &Tensor<impl Real>, expected: usize) -> Result<()> {
    let (c, _, _) = image.chw()?;
    if c != expected {
        return Err(Error::shape("encoder", format!("{what} expects {expected} input channels, got {c}")));
    }
    Ok(())
}

/// Splits `[N, a + b]` gradients and back-propagates the feature part
/// through the lookup and encoder. Returns the gradient of the extra columns.
fn backward_through_lookup<T: Real>(
    encoder: &mut Sequential<T>,
    cache: LookupCache,
    grad_input: Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d) = grad_input.rows_cols()?;
    let c = cache.feature_channels;
    let mut gf = Vec::with_capacity(n * c);
    let mut ge = Vec::with_capacity(n * (d - c));
    for row in grad_input.data().chunks(d) {
        gf.extend_from_slice(&row[..c]);
        ge.extend_from_slice(&row[c..]);
    }
    let gf = Tensor::from_vec(&[n, c], gf)?;
    let gplane = index_bilinear_backward(&gf, &cache.xs, &cache.plane_shape)?;
    encoder.backward(&gplane)?;
    Tensor::from_vec(&[n, d - c], ge)
}

/// Result of querying the coarse model.
#[derive(Debug, Clone)]
pub struct CoarseOutput<T: Real> {
    pub logits: Tensor<T>,
    pub probs: Vec<T>,
    /// `[N, d_Omega]`.
    pub embedding: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct CoarseModel<T: Real = f32> {
    pub encoder: Sequential<T>,
    pub mlp: SkipMlp<T>,
    normals: NormalInput,
    cache: Option<LookupCache>,
}

impl<T: Real> CoarseModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let specs = coarse_encoder_specs(config.normals.channels(), config.coarse_channels, config.groups);
        let encoder = Sequential::from_specs(&specs, rng)?;
        config.embedding_width()?;
        let mlp = SkipMlp::new(&config.coarse_widths(), &config.coarse_skip, Some(config.embedding_layer), rng)?;
        Ok(Self {
            encoder,
            mlp,
            normals: config.normals,
            cache: None,
        })
    }

    pub fn normals(&self) -> NormalInput {
        self.normals
    }

    pub fn embedding_width(&self) -> usize {
        self.mlp.embedding_width().expect("coarse mlp exports an embedding")
    }

    pub fn feature_channels(&self) -> usize {
        self.mlp.input_width() - 1
    }

    /// Feature plane of a low-resolution input stack.
    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("coarse encoder", image, self.normals.channels())?;
        self.encoder.forward(image)
    }

    /// Inference on a precomputed feature plane.
    pub fn query(&self, plane: &Tensor<T>, xs: &[[f64; 2]], zs: &[f64]) -> Result<CoarseOutput<T>> {
        let out = self.mlp.forward(&mlp_input(plane, xs, &column(zs))?)?;
        Ok(Self::finish(out))
    }

    fn finish(out: MlpOutput<T>) -> CoarseOutput<T> {
        let probs = out.logits.data().iter().map(|&z| sigmoid(z)).collect();
        CoarseOutput {
            logits: out.logits,
            probs,
            embedding: out.embedding.expect("coarse mlp exports an embedding"),
        }
    }

    /// Training forward pass over the whole image; records caches.
    pub fn forward_train(&mut self, image: &Tensor<T>, xs: &[[f64; 2]], zs: &[f64]) -> Result<CoarseOutput<T>> {
        check_channels("coarse encoder", image, self.normals.channels())?;
        let plane = self.encoder.forward_train(image)?;
        let input = mlp_input(&plane, xs, &column(zs))?;
        let out = self.mlp.forward_train(&input)?;
        self.cache = Some(LookupCache {
            xs: xs.to_vec(),
            plane_shape: plane.shape().to_vec(),
            feature_channels: self.feature_channels(),
        });
        Ok(Self::finish(out))
    }

    /// Accumulates parameter gradients from logit and embedding gradients.
    pub fn backward(&mut self, grad_logits: &Tensor<T>, grad_embedding: Option<&Tensor<T>>) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("coarse model: backward called without a recorded forward pass".into()))?;
        let g = self.mlp.backward(grad_logits, grad_embedding)?;
        backward_through_lookup(&mut self.encoder, cache, g)?;
        Ok(())
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit_params(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.mlp.visit_params(&mut |n, p| f(&format!("mlp.{n}"), p));
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_params_mut(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.mlp.visit_params_mut(&mut |n, p| f(&format!("mlp.{n}"), p));
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    pub fn encoder_receptive_field(&self) -> usize {
        receptive_field(self.encoder.specs()).0
    }
}

#[derive(Debug, Clone)]
pub struct FineModel<T: Real = f32> {
    pub encoder: Sequential<T>,
    pub mlp: SkipMlp<T>,
    normals: NormalInput,
    conditioning: FineConditioning,
    cache: Option<LookupCache>,
}

impl<T: Real> FineModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let specs = fine_encoder_specs(config.normals.channels(), config.fine_channels);
        let encoder = Sequential::from_specs(&specs, rng)?;
        let mlp = SkipMlp::new(&config.fine_widths()?, &config.fine_skip, None, rng)?;
        Ok(Self {
            encoder,
            mlp,
            normals: config.normals,
            conditioning: config.conditioning,
            cache: None,
        })
    }

    pub fn normals(&self) -> NormalInput {
        self.normals
    }

    pub fn conditioning(&self) -> FineConditioning {
        self.conditioning
    }

    pub fn feature_channels(&self) -> usize {
        self.encoder
            .specs()
            .iter()
            .rev()
            .find_map(|s| match s {
                LayerSpec::Conv2d { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .expect("fine encoder has a convolution")
    }

    pub fn condition_width(&self) -> usize {
        self.mlp.input_width() - self.feature_channels()
    }

    /// Receptive field of the encoder in input pixels.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.encoder.specs()).0
    }

    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("fine encoder", image, self.normals.channels())?;
        self.encoder.forward(image)
    }

    fn check_condition(&self, condition: &Tensor<T>, n: usize) -> Result<()> {
        let (rows, cols) = condition.rows_cols()?;
        if rows != n || cols != self.condition_width() {
            return Err(Error::shape(
                "fine model",
                format!(
                    "condition {:?} for {n} points, expected width {} ({})",
                    condition.shape(),
                    self.condition_width(),
                    self.conditioning.name()
                ),
            ));
        }
        Ok(())
    }

    /// Builds the conditioning columns from an embedding or depths.
    pub fn condition(&self, embedding: Option<&Tensor<T>>, zs: &[f64]) -> Result<Tensor<T>> {
        match self.conditioning {
            FineConditioning::AbsoluteDepth => Ok(column(zs)),
            FineConditioning::Embedding => embedding
                .cloned()
                .ok_or_else(|| Error::Usage("fine model conditioned on the embedding needs one".into())),
        }
    }

    /// Inference on a precomputed plane; `xs` are in that plane's frame.
    pub fn query(&self, plane: &Tensor<T>, xs: &[[f64; 2]], condition: &Tensor<T>) -> Result<Vec<T>> {
        self.check_condition(condition, xs.len())?;
        let out = self.mlp.forward(&mlp_input(plane, xs, condition)?)?;
        Ok(out.logits.data().iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn forward_train(&mut self, image: &Tensor<T>, xs: &[[f64; 2]], condition: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels("fine encoder", image, self.normals.channels())?;
        self.check_condition(condition, xs.len())?;
        let plane = self.encoder.forward_train(image)?;
        let out = self.mlp.forward_train(&mlp_input(&plane, xs, condition)?)?;
        self.cache = Some(LookupCache {
            xs: xs.to_vec(),
            plane_shape: plane.shape().to_vec(),
            feature_channels: self.feature_channels(),
        });
        Ok(out.logits)
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the
    /// conditioning columns.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("fine model: backward called without a recorded forward pass".into()))?;
        let g = self.mlp.backward(grad_logits, None)?;
        backward_through_lookup(&mut self.encoder, cache, g)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit_params(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.mlp.visit_params(&mut |n, p| f(&format!("mlp.{n}"), p));
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_params_mut(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.mlp.visit_params_mut(&mut |n, p| f(&format!("mlp.{n}"), p));
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }
}
