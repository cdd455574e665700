//! Batch normalization over the channel dimension.
//!
//! Input layout is (batch, channels, ...spatial); statistics are taken per
//! channel over the batch and all spatial positions. Training mode uses the
//! batch statistics (biased variance) and folds them into the running
//! estimates; eval mode normalizes with the running statistics only.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f32,
    pub momentum: f32,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

struct ChannelLayout {
    batch: usize,
    channels: usize,
    plane: usize,
}

fn layout<T: Scalar>(x: &Tensor<T>) -> Result<ChannelLayout> {
    if x.shape().len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "batch norm expects (batch, channels, ...), got {:?}",
            x.shape()
        )));
    }
    Ok(ChannelLayout {
        batch: x.shape()[0],
        channels: x.shape()[1],
        plane: x.shape()[2..].iter().product(),
    })
}

impl<T: Scalar> BatchNorm<T> {
    /// gamma = 1, beta = 0, running stats at the identity transform.
    /// `_rng` is accepted for uniformity with the other layer inits.
    pub fn init(channels: usize, _rng: &mut ChaCha8Rng) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_channels(&self, l: &ChannelLayout) -> Result<()> {
        if l.channels != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                l.channels
            )));
        }
        Ok(())
    }

    /// Training forward: normalize with batch statistics, update running
    /// estimates. Needs at least two values per channel.
    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let l = layout(&x)?;
        self.check_channels(&l)?;
        let m = l.batch * l.plane;
        if m < 2 {
            return Err(Error::BatchTooSmall(format!(
                "batch norm needs >= 2 values per channel in training mode, got {m}"
            )));
        }
        let eps = T::from_f32(self.eps);
        let mom = T::from_f32(self.momentum);
        let inv_m = T::one() / T::from_f64(m as f64);

        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_stds = Vec::with_capacity(l.channels);

        for ch in 0..l.channels {
            let mut sum = T::zero();
            for n in 0..l.batch {
                let off = (n * l.channels + ch) * l.plane;
                for &v in &x.data()[off..off + l.plane] {
                    sum = sum + v;
                }
            }
            let mean = sum * inv_m;
            let mut var_sum = T::zero();
            for n in 0..l.batch {
                let off = (n * l.channels + ch) * l.plane;
                for &v in &x.data()[off..off + l.plane] {
                    let d = v - mean;
                    var_sum = var_sum + d * d;
                }
            }
            let var = var_sum * inv_m;
            let inv_std = T::one() / (var + eps).sqrt();
            inv_stds.push(inv_std);

            let rm = self.running_mean.data()[ch];
            let rv = self.running_var.data()[ch];
            self.running_mean.data_mut()[ch] = (T::one() - mom) * rm + mom * mean;
            self.running_var.data_mut()[ch] = (T::one() - mom) * rv + mom * var;

            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            for n in 0..l.batch {
                let off = (n * l.channels + ch) * l.plane;
                for i in off..off + l.plane {
                    let xh = (x.data()[i] - mean) * inv_std;
                    x_hat.data_mut()[i] = xh;
                    y.data_mut()[i] = g * xh + b;
                }
            }
        }
        Ok((
            y,
            BatchNormCache {
                x_hat,
                inv_std: inv_stds,
            },
        ))
    }

    /// Eval forward: normalize with the running statistics. Pure.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let l = layout(x)?;
        self.check_channels(&l)?;
        let eps = T::from_f32(self.eps);
        let mut y = Tensor::zeros(x.shape());
        for ch in 0..l.channels {
            let inv_std = T::one() / (self.running_var.data()[ch] + eps).sqrt();
            let mean = self.running_mean.data()[ch];
            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            for n in 0..l.batch {
                let off = (n * l.channels + ch) * l.plane;
                for i in off..off + l.plane {
                    y.data_mut()[i] = g * (x.data()[i] - mean) * inv_std + b;
                }
            }
        }
        Ok(y)
    }

    /// Returns (grad_x, [grad_gamma, grad_beta]).
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let l = layout(grad_out)?;
        self.check_channels(&l)?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm backward: grad {:?} vs cached {:?}",
                grad_out.shape(),
                cache.x_hat.shape()
            )));
        }
        let m = l.batch * l.plane;
        let inv_m = T::one() / T::from_f64(m as f64);
        let mut grad_x = Tensor::zeros(grad_out.shape());
        let mut grad_gamma = Tensor::zeros(&[l.channels]);
        let mut grad_beta = Tensor::zeros(&[l.channels]);

        for ch in 0..l.channels {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for n in 0..l.batch {
                let off = (n * l.channels + ch) * l.plane;
                for i in off..off + l.plane {
                    let g = grad_out.data()[i];
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * cache.x_hat.data()[i];
                }
            }
            grad_beta.data_mut()[ch] = sum_g;
            grad_gamma.data_mut()[ch] = sum_gx;

            let coeff = self.gamma.data()[ch] * cache.inv_std[ch];
            let mean_g = sum_g * inv_m;
            let mean_gx = sum_gx * inv_m;
            for n in 0..l.batch {
                let off = (n * l.channels + ch) * l.plane;
                for i in off..off + l.plane {
                    let g = grad_out.data()[i];
                    let xh = cache.x_hat.data()[i];
                    grad_x.data_mut()[i] = coeff * (g - mean_g - xh * mean_gx);
                }
            }
        }
        Ok((grad_x, vec![grad_gamma, grad_beta]))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        vec!["gamma", "beta"]
    }
}
