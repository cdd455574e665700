//! Differentiable layers with analytic forward and backward passes.
//!
//! Layers operate on batch tensors (leading dimension is the sample count)
//! and are generic over the element type so the same kernels serve the f32
//! training path and the f64 gradient-check oracle. Each backward pass takes
//! the cache produced by the matching forward call and returns the gradient
//! with respect to the input plus one gradient per learnable parameter, in
//! the order reported by the layer's `params` accessor.

mod batchnorm;
mod conv3d;
mod dense;
mod dropout;
mod gru;
mod pool;
mod softmax;

pub use batchnorm::{BatchNorm, BatchNormCache};
pub use conv3d::{Conv3d, Conv3dCache};
pub use dense::{Activation, Dense, DenseCache};
pub use dropout::Dropout;
pub use gru::{BiGru, BiGruCache, GruCell, GruCellGrads, GruStepCache};
pub use pool::{MaxPool3d, MaxPool3dCache};
pub use softmax::{batch_softmax_cross_entropy, softmax, softmax_cross_entropy};

use crate::error::{Error, Result};

/// Output length of a strided window over a padded axis:
/// `floor((len + 2*pad - kernel) / stride) + 1`.
pub fn window_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::ShapeTooSmall(format!(
            "axis of length {len} with padding {pad} cannot fit kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Glorot-style uniform bound for a weight matrix.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0f32 / (fan_in + fan_out) as f32).sqrt()
}
