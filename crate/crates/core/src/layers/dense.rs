//! Fully connected layer: `y = activation(x W^T + b)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::glorot_bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    /// (out, in)
    pub weights: Tensor<T>,
    /// (out)
    pub bias: Tensor<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    x: Tensor<T>,
    /// Pre-activation `x W^T + b`, kept for the ReLU gate.
    pre: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = glorot_bound(in_dim, out_dim);
        let weights = Tensor::from_fn(&[out_dim, in_dim], |_| {
            T::from_f32(rng.gen_range(-bound..bound))
        });
        Self {
            weights,
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `x`: (batch, in) -> (batch, out).
    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        let pre = self.affine(&x)?;
        let y = match self.activation {
            Activation::Relu => pre.relu(),
            Activation::None => pre.clone(),
        };
        Ok((y, DenseCache { x, pre }))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pre = self.affine(x)?;
        Ok(match self.activation {
            Activation::Relu => pre.relu(),
            Activation::None => pre,
        })
    }

    fn affine(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "dense expects (batch, {}), got {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        let mut pre = x.matmul_nt(&self.weights)?;
        let out = self.out_dim();
        for row in 0..pre.shape()[0] {
            let slice = &mut pre.data_mut()[row * out..(row + 1) * out];
            for (v, &b) in slice.iter_mut().zip(self.bias.data().iter()) {
                *v = *v + b;
            }
        }
        Ok(pre)
    }

    /// Returns (grad_x, [grad_weights, grad_bias]).
    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if grad_out.shape() != cache.pre.shape() {
            return Err(Error::ShapeMismatch(format!(
                "dense backward: grad {:?} vs output {:?}",
                grad_out.shape(),
                cache.pre.shape()
            )));
        }
        let grad_pre = match self.activation {
            Activation::None => grad_out.clone(),
            Activation::Relu => grad_out.zip_map(&cache.pre, "relu gate", |g, p| {
                if p > T::zero() {
                    g
                } else {
                    T::zero()
                }
            })?,
        };
        let grad_w = grad_pre.matmul_tn(&cache.x)?;
        let out = self.out_dim();
        let mut grad_b = Tensor::zeros(&[out]);
        for row in 0..grad_pre.shape()[0] {
            let slice = &grad_pre.data()[row * out..(row + 1) * out];
            for (b, &g) in grad_b.data_mut().iter_mut().zip(slice.iter()) {
                *b = *b + g;
            }
        }
        let grad_x = grad_pre.matmul(&self.weights)?;
        Ok((grad_x, vec![grad_w, grad_b]))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        vec!["weights", "bias"]
    }
}
