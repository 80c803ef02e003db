//! Class-balanced binary cross entropy over a query batch.
//!
//! `L = -(1/N) * sum(lambda * f * ln p + (1 - lambda) * (1 - f) * ln(1 - p))`
//! with `lambda` the fraction of outside points (`f = 0`) in the batch.

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Real, Tensor};

/// Predictions are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Exact fraction of labels equal to 0.
pub fn outside_ratio(labels: &[f32]) -> f64 {
    let outside = labels.iter().filter(|&&f| f == 0.0).count();
    outside as f64 / labels.len() as f64
}

fn check(n_pred: usize, labels: &[f32]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    if n_pred != labels.len() {
        return Err(Error::shape("occupancy_loss", format!("{n_pred} predictions, {} labels", labels.len())));
    }
    if let Some(f) = labels.iter().find(|&&f| f != 0.0 && f != 1.0) {
        return Err(Error::Usage(format!("label {f} is not 0 or 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub lambda: f64,
}

pub fn occupancy_loss<T: Real>(probs: &[T], labels: &[f32]) -> Result<LossValue> {
    check(probs.len(), labels)?;
    let lambda = outside_ratio(labels);
    let mut acc = 0.0;
    for (&p, &f) in probs.iter().zip(labels) {
        let p = p.as_f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
        acc += if f == 1.0 {
            lambda * p.ln()
        } else {
            (1.0 - lambda) * (1.0 - p).ln()
        };
    }
    Ok(LossValue {
        loss: -acc / labels.len() as f64,
        lambda,
    })
}

/// `dL/dp`, zero where the clamp is active.
pub fn occupancy_loss_grad<T: Real>(probs: &[T], labels: &[f32]) -> Result<Vec<T>> {
    check(probs.len(), labels)?;
    let lambda = outside_ratio(labels);
    let n = labels.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &f)| {
            let p = p.as_f64();
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                return T::zero();
            }
            let g = if f == 1.0 {
                -lambda / p
            } else {
                (1.0 - lambda) / (1.0 - p)
            };
            T::from_f64(g / n)
        })
        .collect())
}

/// Loss on `sigmoid(logits)` with its gradient w.r.t. the `[N, 1]` logits.
pub fn loss_from_logits<T: Real>(logits: &Tensor<T>, labels: &[f32]) -> Result<(LossValue, Tensor<T>)> {
    let probs: Vec<T> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    let value = occupancy_loss(&probs, labels)?;
    let dp = occupancy_loss_grad(&probs, labels)?;
    let grad = probs
        .iter()
        .zip(dp)
        .map(|(&p, g)| g * p * (T::one() - p))
        .collect();
    Ok((value, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let v = occupancy_loss(&[0.5f64, 0.5], &[1.0, 0.0]).unwrap();
        assert_eq!(v.lambda, 0.5);
        assert!((v.loss - 0.3466).abs() < 1e-4);
        let perfect = occupancy_loss(&[1.0f64, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(perfect.loss <= 1e-6);
        let all_inside = occupancy_loss(&[0.1f64, 0.9], &[1.0, 1.0]).unwrap();
        assert_eq!((all_inside.lambda, all_inside.loss), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(occupancy_loss::<f64>(&[], &[]).is_err());
        assert!(occupancy_loss(&[0.5f64], &[1.0, 0.0]).is_err());
        assert!(occupancy_loss(&[0.5f64], &[0.3]).is_err());
    }

    #[test]
    fn moving_toward_label_decreases_loss() {
        let labels = [1.0, 0.0, 0.0, 1.0];
        let mut p = vec![0.3f64, 0.6, 0.2, 0.8];
        let mut last = occupancy_loss(&p, &labels).unwrap().loss;
        for step in 0..20 {
            let i = step % 4;
            p[i] += (labels[i] as f64 - p[i]) * 0.1;
            let now = occupancy_loss(&p, &labels).unwrap().loss;
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let labels = [1.0, 0.0, 1.0, 0.0, 0.0];
        let p = [0.2f64, 0.7, 0.55, 0.1, 0.45];
        let g = occupancy_loss_grad(&p, &labels).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut a, mut b) = (p, p);
            a[i] += h;
            b[i] -= h;
            let fd = (occupancy_loss(&a, &labels).unwrap().loss - occupancy_loss(&b, &labels).unwrap().loss) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {}", g[i]);
        }
    }
}
