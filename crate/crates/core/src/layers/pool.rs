//! 3-D max pooling with argmax routing for the backward pass.
//!
//! The paper assigns the pooling layers a padding of (1, 2, 2), which equals
//! the kernel and would create windows made purely of padding. Padding is
//! therefore clamped per dimension to `floor(kernel / 2)`, and padded
//! positions behave as negative infinity: they never win a max, so every
//! output is backed by a real input element.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::window_out_len;

#[derive(Debug, Clone, Copy)]
pub struct MaxPool3d {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct MaxPool3dCache {
    /// Flat index into the input batch for each output element.
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool3d {
    /// Padding is clamped to `floor(kernel / 2)` so no window is all padding.
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        assert!(kernel.iter().all(|&k| k > 0), "kernel dims must be positive");
        assert!(stride.iter().all(|&s| s > 0), "stride dims must be positive");
        let padding = [
            padding[0].min(kernel[0] / 2),
            padding[1].min(kernel[1] / 2),
            padding[2].min(kernel[2] / 2),
        ];
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Kernel (1,2,2), stride (1,2,2), padding clamped from the paper's
    /// (1,2,2) to (0,1,1).
    pub fn paper_config() -> Self {
        Self::new([1, 2, 2], [1, 2, 2], [1, 2, 2])
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok([
            window_out_len(input[0], self.kernel[0], self.stride[0], self.padding[0])?,
            window_out_len(input[1], self.kernel[1], self.stride[1], self.padding[1])?,
            window_out_len(input[2], self.kernel[2], self.stride[2], self.padding[2])?,
        ])
    }

    /// `x`: (batch, ch, d, h, w) -> (batch, ch, d', h', w').
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MaxPool3dCache)> {
        let [batch, ch, d, h, w] = *x.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "max pool expects (batch, ch, d, h, w), got {:?}",
                x.shape()
            )));
        };
        let [od, oh, ow] = self.out_dims([d, h, w])?;
        let mut y = Tensor::zeros(&[batch, ch, od, oh, ow]);
        let mut argmax = vec![0usize; batch * ch * od * oh * ow];
        let mut q = 0usize;
        for n in 0..batch {
            for c in 0..ch {
                let slab = (n * ch + c) * d * h * w;
                for out_d in 0..od {
                    let d0 = (out_d * self.stride[0]) as isize - self.padding[0] as isize;
                    let d_lo = d0.max(0) as usize;
                    let d_hi = ((d0 + self.kernel[0] as isize).min(d as isize)) as usize;
                    for out_h in 0..oh {
                        let h0 = (out_h * self.stride[1]) as isize - self.padding[1] as isize;
                        let h_lo = h0.max(0) as usize;
                        let h_hi = ((h0 + self.kernel[1] as isize).min(h as isize)) as usize;
                        for out_w in 0..ow {
                            let w0 =
                                (out_w * self.stride[2]) as isize - self.padding[2] as isize;
                            let w_lo = w0.max(0) as usize;
                            let w_hi =
                                ((w0 + self.kernel[2] as isize).min(w as isize)) as usize;
                            debug_assert!(d_lo < d_hi && h_lo < h_hi && w_lo < w_hi);
                            let mut best = T::neg_infinity();
                            let mut best_idx = 0usize;
                            // ascending scan; strict > keeps the lowest
                            // linear index on ties
                            for id in d_lo..d_hi {
                                for ih in h_lo..h_hi {
                                    let row = slab + (id * h + ih) * w;
                                    for iw in w_lo..w_hi {
                                        let v = x.data()[row + iw];
                                        if v > best {
                                            best = v;
                                            best_idx = row + iw;
                                        }
                                    }
                                }
                            }
                            y.data_mut()[q] = best;
                            argmax[q] = best_idx;
                            q += 1;
                        }
                    }
                }
            }
        }
        Ok((
            y,
            MaxPool3dCache {
                argmax,
                in_shape: x.shape().to_vec(),
            },
        ))
    }

    /// Route each output gradient to its argmax input position.
    pub fn backward<T: Scalar>(
        &self,
        cache: &MaxPool3dCache,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::ShapeMismatch(format!(
                "pool backward: grad has {} elements, cache expects {}",
                grad_out.len(),
                cache.argmax.len()
            )));
        }
        let mut grad_x = Tensor::zeros(&cache.in_shape);
        for (q, &src) in cache.argmax.iter().enumerate() {
            grad_x.data_mut()[src] = grad_x.data()[src] + grad_out.data()[q];
        }
        Ok(grad_x)
    }
}
