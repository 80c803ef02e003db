use rand::Rng;

use super::layers::{Activation, Linear, Param};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Row-batched MLP whose selected layers also receive the original input.
///
/// `widths` lists neuron counts from the input to the single output, e.g.
/// `(33, 128, 64, 32, 16, 1)`. Layer `i` (1-based) maps `widths[i-1]` to
/// `widths[i]`; layers listed in `skip_into` see `[hidden, input]` instead.
/// Hidden layers use ReLU; the last layer emits a raw logit.
#[derive(Debug, Clone)]
pub struct SkipMlp<T: Real> {
    widths: Vec<usize>,
    layers: Vec<Linear<T>>,
    skip: Vec<bool>,
    embedding_layer: Option<usize>,
    cache: Option<Vec<Tensor<T>>>,
}

/// Logits `[N, 1]` plus the exported hidden activation `[N, d]`, if any.
#[derive(Debug, Clone)]
pub struct MlpOutput<T: Real> {
    pub logits: Tensor<T>,
    pub embedding: Option<Tensor<T>>,
}

pub(crate) fn concat_rows<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, da) = a.rows_cols()?;
    let (nb, db) = b.rows_cols()?;
    if n != nb {
        return Err(Error::shape("concat rows", format!("{} vs {} rows", n, nb)));
    }
    let mut out = Vec::with_capacity(n * (da + db));
    for r in 0..n {
        out.extend_from_slice(&a.data()[r * da..(r + 1) * da]);
        out.extend_from_slice(&b.data()[r * db..(r + 1) * db]);
    }
    Tensor::from_vec(&[n, da + db], out)
}

fn split_rows<T: Real>(x: &Tensor<T>, left: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, d) = x.rows_cols()?;
    let right = d - left;
    let mut a = Vec::with_capacity(n * left);
    let mut b = Vec::with_capacity(n * right);
    for row in x.data().chunks(d) {
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    Ok((Tensor::from_vec(&[n, left], a)?, Tensor::from_vec(&[n, right], b)?))
}

impl<T: Real> SkipMlp<T> {
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        skip_into: &[usize],
        embedding_layer: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "mlp widths {:?} must have at least two entries and end in 1",
                widths
            )));
        }
        let n_layers = widths.len() - 1;
        let mut skip = vec![false; n_layers];
        for &s in skip_into {
            if s < 2 || s > n_layers {
                return Err(Error::Config(format!(
                    "skip layer {} outside 2..={}",
                    s, n_layers
                )));
            }
            skip[s - 1] = true;
        }
        if let Some(e) = embedding_layer {
            if e < 1 || e >= n_layers {
                return Err(Error::Config(format!("embedding layer {} is not hidden", e)));
            }
        }
        let layers = (0..n_layers)
            .map(|i| {
                let inputs = widths[i] + if skip[i] { widths[0] } else { 0 };
                Linear::new(inputs, widths[i + 1], rng)
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            skip,
            embedding_layer,
            cache: None,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn embedding_width(&self) -> Option<usize> {
        self.embedding_layer.map(|e| self.widths[e])
    }

    fn run(&self, x: &Tensor<T>, mut record: Option<&mut Vec<Tensor<T>>>) -> Result<MlpOutput<T>> {
        let (_, d) = x.rows_cols()?;
        if d != self.input_width() {
            return Err(Error::shape(
                "mlp",
                format!("expected input width {}, got {}", self.input_width(), d),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut embedding = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let inp = if self.skip[i] { concat_rows(&h, x)? } else { h };
            let z = layer.forward(&inp)?;
            z.ensure_finite(&format!("mlp.{i}"))?;
            if let Some(rec) = record.as_deref_mut() {
                rec.push(inp);
                rec.push(z.clone());
            }
            h = if i < last {
                z.map(|v| Activation::Relu.apply(v))
            } else {
                z
            };
            if self.embedding_layer == Some(i + 1) {
                embedding = Some(h.clone());
            }
        }
        Ok(MlpOutput {
            logits: h,
            embedding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<MlpOutput<T>> {
        self.run(x, None)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<MlpOutput<T>> {
        let mut rec = Vec::with_capacity(2 * self.layers.len());
        let out = self.run(x, Some(&mut rec))?;
        self.cache = Some(rec);
        Ok(out)
    }

    /// Back-propagates logit gradients (and optionally embedding gradients);
    /// returns the gradient w.r.t. the MLP input.
    pub fn backward(
        &mut self,
        grad_logits: &Tensor<T>,
        grad_embedding: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let rec = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("mlp: backward called without a recorded forward pass".into()))?;
        let (n, _) = grad_logits.rows_cols()?;
        let in_w = self.input_width();
        let mut grad_input = Tensor::<T>::zeros(&[n, in_w]);
        let last = self.layers.len() - 1;
        let mut g = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            if self.embedding_layer == Some(i + 1) {
                if let Some(ge) = grad_embedding {
                    g.add_assign(ge)?;
                }
            }
            let z = &rec[2 * i + 1];
            if i < last {
                for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                    if zv <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            let g_in = self.layers[i].backward_with_input(&rec[2 * i], &g)?;
            g_in.ensure_finite(&format!("mlp.{i} (backward)"))?;
            if self.skip[i] {
                let h_w = g_in.shape()[1] - in_w;
                let (gh, gx) = split_rows(&g_in, h_w)?;
                grad_input.add_assign(&gx)?;
                g = gh;
            } else {
                g = g_in;
            }
        }
        grad_input.add_assign(&g)?;
        Ok(grad_input)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("{i}.weight"), &l.weight);
            f(&format!("{i}.bias"), &l.bias);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("{i}.weight"), &mut l.weight);
            f(&format!("{i}.bias"), &mut l.bias);
        }
    }

    pub fn zero_output_layer(&mut self) {
        let l = self.layers.last_mut().expect("at least one layer");
        l.weight.value.fill(T::zero());
        l.bias.value.fill(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skip_layers_widen_their_inputs() {
        let mlp = SkipMlp::<f32>::new(
            &[33, 128, 64, 32, 16, 1],
            &[3, 4, 5],
            Some(3),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let mut shapes = Vec::new();
        mlp.visit_params(&mut |n, p| {
            if n.ends_with("weight") {
                shapes.push(p.value.shape().to_vec())
            }
        });
        assert_eq!(
            shapes,
            vec![
                vec![128, 33],
                vec![64, 128],
                vec![32, 64 + 33],
                vec![16, 32 + 33],
                vec![1, 16 + 33]
            ]
        );
        assert_eq!(mlp.embedding_width(), Some(32));
    }

    #[test]
    fn embedding_is_post_activation() {
        let mlp = SkipMlp::<f64>::new(&[4, 8, 6, 5, 1], &[3], Some(2), &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|v| (v as f64 - 6.0) * 0.3).collect()).unwrap();
        let out = mlp.forward(&x).unwrap();
        let e = out.embedding.unwrap();
        assert_eq!(e.shape(), &[3, 6]);
        assert!(e.data().iter().all(|&v| v >= 0.0));
        assert_eq!(out.logits.shape(), &[3, 1]);
    }

    #[test]
    fn rejects_bad_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(SkipMlp::<f32>::new(&[4, 8, 2], &[], None, &mut rng).is_err());
        assert!(SkipMlp::<f32>::new(&[4, 8, 1], &[1], None, &mut rng).is_err());
        assert!(SkipMlp::<f32>::new(&[4, 8, 1], &[], Some(2), &mut rng).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_logits() {
        let mut mlp = SkipMlp::<f32>::new(&[3, 5, 1], &[2], None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        mlp.zero_output_layer();
        let out = mlp.forward(&Tensor::full(&[4, 3], 0.3)).unwrap();
        assert!(out.logits.data().iter().all(|&v| v == 0.0));
    }
}
