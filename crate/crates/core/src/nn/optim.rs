use std::collections::BTreeMap;

use super::layers::Param;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Step learning-rate decay: `initial * factor^floor(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            factor: 0.1,
            every: 10,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.factor > 0.0 && self.factor <= 1.0) || self.every == 0 {
            return Err(Error::Config(format!("invalid learning-rate schedule {:?}", self)));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.every) as i32)
    }
}

/// RMSProp with per-parameter squared-gradient accumulators.
///
/// `v <- alpha v + (1 - alpha) g^2`, `p <- p - lr g / (sqrt(v) + eps)`.
/// An optional L2 term (`weight_decay`, off by default) is folded into `g`.
#[derive(Debug, Clone)]
pub struct RmsProp<T: Real> {
    pub alpha: f64,
    pub eps: f64,
    pub weight_decay: f64,
    accum: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for RmsProp<T> {
    fn default() -> Self {
        Self::new(0.99, 1e-8)
    }
}

impl<T: Real> RmsProp<T> {
    pub fn new(alpha: f64, eps: f64) -> Self {
        Self {
            alpha,
            eps,
            weight_decay: 0.0,
            accum: BTreeMap::new(),
        }
    }

    /// Applies one update to `param` using its accumulated gradient.
    pub fn update(&mut self, lr: f64, name: &str, param: &mut Param<T>) -> Result<()> {
        if param.value.shape() != param.grad.shape() {
            return Err(Error::shape("rmsprop", format!("{name}: value/grad shapes differ")));
        }
        let v = self
            .accum
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.value.shape()));
        if v.shape() != param.value.shape() {
            return Err(Error::shape(
                "rmsprop",
                format!("{name}: accumulator {:?} vs param {:?}", v.shape(), param.value.shape()),
            ));
        }
        let alpha = T::from_f64(self.alpha);
        let one_minus = T::from_f64(1.0 - self.alpha);
        let eps = T::from_f64(self.eps);
        let lr = T::from_f64(lr);
        let wd = T::from_f64(self.weight_decay);
        let values = param.value.data_mut();
        for ((p, &g0), acc) in values
            .iter_mut()
            .zip(param.grad.data())
            .zip(v.data_mut().iter_mut())
        {
            let g = g0 + wd * *p;
            *acc = alpha * *acc + one_minus * g * g;
            *p -= lr * g / (acc.sqrt() + eps);
        }
        Ok(())
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor<T>> {
        self.accum.get(name)
    }

    pub fn state(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.accum.iter()
    }

    pub fn restore(&mut self, name: &str, v: Tensor<T>) {
        self.accum.insert(name.to_string(), v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Param<f64> {
        Param::new(Tensor::from_vec(&[1], vec![v]).unwrap())
    }

    #[test]
    fn single_scalar_update() {
        let mut opt = RmsProp::<f64>::new(0.99, 1e-8);
        let mut p = scalar(1.0);
        p.grad.fill(1.0);
        opt.update(0.01, "p", &mut p).unwrap();
        let v = opt.accumulator("p").unwrap().data()[0];
        assert!((v - 0.01).abs() < 1e-12);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_accumulator() {
        let mut opt = RmsProp::<f64>::default();
        let mut p = scalar(2.0);
        p.grad.fill(1.0);
        opt.update(0.01, "p", &mut p).unwrap();
        let before = p.value.data()[0];
        let v0 = opt.accumulator("p").unwrap().data()[0];
        p.zero_grad();
        opt.update(0.01, "p", &mut p).unwrap();
        assert_eq!(p.value.data()[0], before);
        assert!((opt.accumulator("p").unwrap().data()[0] - 0.99 * v0).abs() < 1e-15);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut opt = RmsProp::<f32>::default();
        let mk = || {
            let mut p = Param::new(Tensor::from_vec(&[3], vec![0.3f32, -1.0, 2.0]).unwrap());
            p.grad = Tensor::from_vec(&[3], vec![0.1, 0.5, -0.2]).unwrap();
            p
        };
        let (mut a, mut b) = (mk(), mk());
        for _ in 0..5 {
            opt.update(1e-3, "a", &mut a).unwrap();
            opt.update(1e-3, "b", &mut b).unwrap();
        }
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut opt = RmsProp::<f64>::default();
        opt.restore("p", Tensor::zeros(&[2]));
        let mut p = scalar(1.0);
        assert!(opt.update(0.1, "p", &mut p).is_err());
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule {
            initial: 0.5,
            ..LrSchedule::default()
        };
        assert_eq!(s.lr(0), 0.5);
        assert_eq!(s.lr(9), 0.5);
        assert!((s.lr(10) - 0.05).abs() < 1e-15);
        assert!((s.lr(20) - 0.005).abs() < 1e-15);
        assert!(LrSchedule { every: 0, ..s }.validate().is_err());
    }
}
