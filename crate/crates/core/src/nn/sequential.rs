use rand::Rng;

use super::layers::{Layer, LayerSpec, Param};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// A chain of layers; parameters are named `<index>.<param>`.
#[derive(Debug, Clone)]
pub struct Sequential<T: Real> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn from_specs<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| s.build(rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            specs: specs.to_vec(),
            layers,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    fn label(&self, i: usize) -> String {
        format!("{}.{}", i, self.layers[i].kind())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            h.ensure_finite(&self.label(i))?;
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            h = self.layers[i].forward_train(&h)?;
            h.ensure_finite(&self.label(i))?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&g)?;
            g.ensure_finite(&format!("{} (backward)", self.label(i)))?;
        }
        Ok(g)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&mut |name, p| f(&format!("{i}.{name}"), p));
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&mut |name, p| f(&format!("{i}.{name}"), p));
        }
    }

    /// Zeroes every weight and bias of the last parameterised layer.
    pub fn zero_last_layer(&mut self) {
        if let Some(layer) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, Layer::Conv2d(_) | Layer::Linear(_)))
        {
            layer.visit_params_mut(&mut |_, p| p.value.fill(T::zero()));
        }
    }
}
