//! Back-normal predictor: a small convolutional encoder-decoder mapping the
//! shaded image to `B`, trained with a masked l1 loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Param, Real, Sequential, Tensor};
use crate::synth::render::BACKGROUND;
use crate::synth::RenderedSample;

pub fn normal_net_specs() -> Vec<LayerSpec> {
    let lrelu = || LayerSpec::Activation(Activation::LEAKY);
    vec![
        LayerSpec::conv(3, 16, 3, 1),
        lrelu(),
        LayerSpec::Downsample,
        LayerSpec::conv(16, 32, 3, 1),
        lrelu(),
        LayerSpec::conv(32, 32, 3, 1),
        lrelu(),
        LayerSpec::Upsample,
        LayerSpec::conv(32, 16, 3, 1),
        lrelu(),
        LayerSpec::conv(16, 3, 3, 1),
        LayerSpec::Activation(Activation::Sigmoid),
    ]
}

/// Mean `|pred - target|` over channels of masked pixels, with its gradient.
pub fn masked_l1<T: Real>(pred: &Tensor<T>, target: &Tensor<f32>, mask: &Tensor<f32>) -> Result<(f64, Tensor<T>)> {
    let (c, h, w) = pred.chw()?;
    if target.shape() != pred.shape() || mask.shape() != [1, h, w] {
        return Err(Error::shape(
            "masked_l1",
            format!("pred {:?}, target {:?}, mask {:?}", pred.shape(), target.shape(), mask.shape()),
        ));
    }
    let m = mask.data();
    let count = m.iter().filter(|&&v| v > 0.5).count() * c;
    if count == 0 {
        return Err(Error::Usage("masked_l1: empty mask".into()));
    }
    let scale = 1.0 / count as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut acc = 0.0;
    let g = grad.data_mut();
    for ch in 0..c {
        for i in 0..h * w {
            if m[i] <= 0.5 {
                continue;
            }
            let k = ch * h * w + i;
            let d = pred.data()[k].as_f64() - target.data()[k] as f64;
            acc += d.abs();
            g[k] = T::from_f64(if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            });
        }
    }
    Ok((acc * scale, grad))
}

#[derive(Debug, Clone)]
pub struct NormalNet<T: Real = f32> {
    pub net: Sequential<T>,
}

impl<T: Real> NormalNet<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Sequential::from_specs(&normal_net_specs(), rng)?,
        })
    }

    /// Raw prediction in `[0, 1]` for every pixel.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(image)
    }

    pub fn forward_train(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward_train(image)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.net.backward(grad).map(|_| ())
    }

    /// Full-resolution back normals with the background value off the mask.
    pub fn predict(&self, sample: &RenderedSample) -> Result<Tensor<f32>> {
        let pred = self.forward(&sample.img_hi.cast())?.cast::<f32>();
        let (c, h, w) = pred.chw()?;
        let m = sample.mask.data();
        let mut out = pred.into_data();
        for ch in 0..c {
            for (i, &mv) in m.iter().enumerate().take(h * w) {
                if mv <= 0.5 {
                    out[ch * h * w + i] = BACKGROUND;
                }
            }
        }
        Tensor::from_vec(&[c, h, w], out)
    }

    /// The sample with its back normals replaced by this net's prediction.
    pub fn apply(&self, sample: &RenderedSample) -> Result<RenderedSample> {
        sample.with_back_normals(self.predict(sample)?)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.net.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.net.visit_params_mut(f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;
    use crate::synth::render_orthographic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_predicts_half_everywhere() {
        let sample = render_orthographic(&icosphere(0.6, 3, [0.0; 3]), 32).unwrap();
        let mut net = NormalNet::<f32>::new(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.net.zero_last_layer();
        let raw = net.forward(&sample.img_hi).unwrap();
        assert!(raw.data().iter().all(|&v| v == 0.5));
        let (l1, _) = masked_l1(&raw, &sample.bnml_hi, &sample.mask).unwrap();
        let m = sample.mask.data();
        let (mut acc, mut n) = (0.0, 0);
        for ch in 0..3 {
            for (i, &mv) in m.iter().enumerate() {
                if mv > 0.5 {
                    acc += (sample.bnml_hi.data()[ch * 32 * 32 + i] as f64 - 0.5).abs();
                    n += 1;
                }
            }
        }
        assert!((l1 - acc / n as f64).abs() < 1e-9);
        let pred = net.predict(&sample).unwrap();
        assert_eq!(pred.data()[0], BACKGROUND);
        let swapped = net.apply(&sample).unwrap();
        assert_eq!(swapped.bnml_hi, pred);
        assert_eq!(swapped.bnml_lo.shape(), &[3, 16, 16]);
    }

    #[test]
    fn masked_l1_gradient_is_sign_over_count() {
        let pred = Tensor::from_vec(&[1, 1, 3], vec![0.2f64, 0.9, 0.4]).unwrap();
        let target = Tensor::from_vec(&[1, 1, 3], vec![0.5f32, 0.5, 0.0]).unwrap();
        let mask = Tensor::from_vec(&[1, 1, 3], vec![1.0f32, 1.0, 0.0]).unwrap();
        let (l, g) = masked_l1(&pred, &target, &mask).unwrap();
        assert!((l - 0.35).abs() < 1e-7);
        assert_eq!(g.data(), &[-0.5, 0.5, 0.0]);
        assert!(masked_l1(&pred, &target, &Tensor::zeros(&[1, 1, 3])).is_err());
    }
}
