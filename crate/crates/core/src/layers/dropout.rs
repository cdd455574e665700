//! Inverted dropout: survivors are scaled by `1/(1-rate)` at train time so
//! evaluation is the plain identity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f32,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        Self { rate }
    }

    /// Train-mode application; draws a fresh mask from `rng` on every call.
    /// Returns the output and the scaled mask needed for backward.
    pub fn apply_train<T: Scalar>(
        &self,
        x: &Tensor<T>,
        rng: &mut ChaCha8Rng,
    ) -> (Tensor<T>, Tensor<T>) {
        if self.rate == 0.0 {
            let ones = Tensor::filled(x.shape(), T::one());
            return (x.clone(), ones);
        }
        let keep = 1.0 - self.rate;
        let scale = T::from_f32(1.0 / keep);
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.gen::<f32>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        let y = x.mul(&mask).expect("same shape by construction");
        (y, mask)
    }

    /// Eval mode is the identity.
    pub fn apply_eval<T: Scalar>(&self, x: Tensor<T>) -> Tensor<T> {
        x
    }

    pub fn backward<T: Scalar>(&self, mask: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        grad_out.mul(mask).expect("mask shape matches forward")
    }
}
