//! 3-D convolution (cross-correlation) with zero padding.
//!
//! The paper configuration fixes the kernel at (3, 5, 5) and the padding at
//! (1, 2, 2); stride is (1, 2, 2) for the first layer of the stack and
//! (1, 1, 1) afterwards. Forward and backward both lower the input patches
//! into an im2col matrix so the heavy lifting is three matrix products:
//! `y = K * cols`, `grad_K = gy * cols^T`, `grad_cols = K^T * gy`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_acc, matmul_tn_into, Scalar, Tensor};

use super::{glorot_bound, window_out_len};

pub const KERNEL: [usize; 3] = [3, 5, 5];
pub const PADDING: [usize; 3] = [1, 2, 2];

#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    /// (out_ch, in_ch, kd, kh, kw)
    pub kernels: Tensor<T>,
    /// (out_ch)
    pub bias: Tensor<T>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct Conv3dCache<T> {
    x: Tensor<T>,
}

impl<T: Scalar> Conv3d<T> {
    /// Paper-configured layer: kernel (3,5,5), padding (1,2,2), Glorot
    /// uniform weights, zero bias.
    pub fn init(in_ch: usize, out_ch: usize, stride: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        let k = KERNEL[0] * KERNEL[1] * KERNEL[2];
        let bound = glorot_bound(in_ch * k, out_ch * k);
        let kernels = Tensor::from_fn(&[out_ch, in_ch, KERNEL[0], KERNEL[1], KERNEL[2]], |_| {
            T::from_f32(rng.gen_range(-bound..bound))
        });
        Self {
            kernels,
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding: PADDING,
        }
    }

    /// Explicit weights, for tests and custom configurations.
    pub fn new(
        kernels: Tensor<T>,
        bias: Tensor<T>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if kernels.shape().len() != 5 {
            return Err(Error::ShapeMismatch(format!(
                "conv kernels must be 5-D (out, in, kd, kh, kw), got {:?}",
                kernels.shape()
            )));
        }
        if bias.shape() != [kernels.shape()[0]] {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} does not match {} output channels",
                bias.shape(),
                kernels.shape()[0]
            )));
        }
        if stride.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        Ok(Self {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    fn kernel_dims(&self) -> [usize; 3] {
        [
            self.kernels.shape()[2],
            self.kernels.shape()[3],
            self.kernels.shape()[4],
        ]
    }

    /// Output (d, h, w) for an input (d, h, w).
    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let k = self.kernel_dims();
        Ok([
            window_out_len(input[0], k[0], self.stride[0], self.padding[0])?,
            window_out_len(input[1], k[1], self.stride[1], self.padding[1])?,
            window_out_len(input[2], k[2], self.stride[2], self.padding[2])?,
        ])
    }

    /// `x`: (batch, in_ch, d, h, w) -> (batch, out_ch, d', h', w').
    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Conv3dCache<T>)> {
        let y = self.infer(&x)?;
        Ok((y, Conv3dCache { x }))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, in_dims) = self.check_input(x)?;
        let out = self.out_dims(in_dims)?;
        let o = self.out_channels();
        let cols_n = out[0] * out[1] * out[2];
        let rows = self.in_channels() * self.kernel_dims().iter().product::<usize>();

        let mut y = Tensor::zeros(&[batch, o, out[0], out[1], out[2]]);
        let mut cols = vec![T::zero(); rows * cols_n];
        let sample_in = self.in_channels() * in_dims.iter().product::<usize>();
        let sample_out = o * cols_n;
        for n in 0..batch {
            let x_slab = &x.data()[n * sample_in..(n + 1) * sample_in];
            self.im2col(x_slab, in_dims, out, &mut cols);
            let y_slab = &mut y.data_mut()[n * sample_out..(n + 1) * sample_out];
            matmul_into(self.kernels.data(), &cols, o, rows, cols_n, y_slab);
            for ch in 0..o {
                let b = self.bias.data()[ch];
                for v in &mut y_slab[ch * cols_n..(ch + 1) * cols_n] {
                    *v = *v + b;
                }
            }
        }
        Ok(y)
    }

    /// Returns (grad_x, [grad_kernels, grad_bias]).
    pub fn backward(
        &self,
        cache: &Conv3dCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let x = &cache.x;
        let (batch, in_dims) = self.check_input(x)?;
        let out = self.out_dims(in_dims)?;
        let o = self.out_channels();
        let cols_n = out[0] * out[1] * out[2];
        let rows = self.in_channels() * self.kernel_dims().iter().product::<usize>();
        let expected = [batch, o, out[0], out[1], out[2]];
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "conv backward: grad {:?}, expected {expected:?}",
                grad_out.shape()
            )));
        }

        let mut grad_x = Tensor::zeros(x.shape());
        let mut grad_k = Tensor::zeros(self.kernels.shape());
        let mut grad_b = Tensor::zeros(&[o]);
        let mut cols = vec![T::zero(); rows * cols_n];
        let mut grad_cols = vec![T::zero(); rows * cols_n];
        let sample_in = self.in_channels() * in_dims.iter().product::<usize>();
        let sample_out = o * cols_n;

        for n in 0..batch {
            let gy = &grad_out.data()[n * sample_out..(n + 1) * sample_out];
            for ch in 0..o {
                let mut acc = T::zero();
                for &g in &gy[ch * cols_n..(ch + 1) * cols_n] {
                    acc = acc + g;
                }
                grad_b.data_mut()[ch] = grad_b.data()[ch] + acc;
            }

            let x_slab = &x.data()[n * sample_in..(n + 1) * sample_in];
            self.im2col(x_slab, in_dims, out, &mut cols);
            matmul_nt_acc(gy, &cols, o, cols_n, rows, grad_k.data_mut());
            matmul_tn_into(self.kernels.data(), gy, o, rows, cols_n, &mut grad_cols);
            let gx_slab = &mut grad_x.data_mut()[n * sample_in..(n + 1) * sample_in];
            self.col2im_acc(&grad_cols, in_dims, out, gx_slab);
        }
        Ok((grad_x, vec![grad_k, grad_b]))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, [usize; 3])> {
        match *x.shape() {
            [n, c, d, h, w] if c == self.in_channels() => Ok((n, [d, h, w])),
            _ => Err(Error::ShapeMismatch(format!(
                "conv expects (batch, {}, d, h, w), got {:?}",
                self.in_channels(),
                x.shape()
            ))),
        }
    }

    fn im2col(&self, x: &[T], in_dims: [usize; 3], out: [usize; 3], cols: &mut [T]) {
        let [d, h, w] = in_dims;
        let [od, oh, ow] = out;
        let [kd, kh, kw] = self.kernel_dims();
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let cols_n = od * oh * ow;
        let mut row = 0usize;
        for ci in 0..self.in_channels() {
            for k0 in 0..kd {
                for k1 in 0..kh {
                    for k2 in 0..kw {
                        let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                        for out_d in 0..od {
                            let id = (out_d * sd + k0) as isize - pd as isize;
                            let d_valid = id >= 0 && (id as usize) < d;
                            for out_h in 0..oh {
                                let ih = (out_h * sh + k1) as isize - ph as isize;
                                let hv = d_valid && ih >= 0 && (ih as usize) < h;
                                let base = (out_d * oh + out_h) * ow;
                                if !hv {
                                    dst_row[base..base + ow].fill(T::zero());
                                    continue;
                                }
                                let src_base = ((ci * d + id as usize) * h + ih as usize) * w;
                                for out_w in 0..ow {
                                    let iw = (out_w * sw + k2) as isize - pw as isize;
                                    dst_row[base + out_w] = if iw >= 0 && (iw as usize) < w {
                                        x[src_base + iw as usize]
                                    } else {
                                        T::zero()
                                    };
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Inverse of `im2col`: scatter-add column gradients back to the input.
    fn col2im_acc(&self, cols: &[T], in_dims: [usize; 3], out: [usize; 3], gx: &mut [T]) {
        let [d, h, w] = in_dims;
        let [od, oh, ow] = out;
        let [kd, kh, kw] = self.kernel_dims();
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let cols_n = od * oh * ow;
        let mut row = 0usize;
        for ci in 0..self.in_channels() {
            for k0 in 0..kd {
                for k1 in 0..kh {
                    for k2 in 0..kw {
                        let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                        for out_d in 0..od {
                            let id = (out_d * sd + k0) as isize - pd as isize;
                            if id < 0 || id as usize >= d {
                                continue;
                            }
                            for out_h in 0..oh {
                                let ih = (out_h * sh + k1) as isize - ph as isize;
                                if ih < 0 || ih as usize >= h {
                                    continue;
                                }
                                let base = (out_d * oh + out_h) * ow;
                                let dst_base = ((ci * d + id as usize) * h + ih as usize) * w;
                                for out_w in 0..ow {
                                    let iw = (out_w * sw + k2) as isize - pw as isize;
                                    if iw >= 0 && (iw as usize) < w {
                                        let dst = dst_base + iw as usize;
                                        gx[dst] = gx[dst] + src_row[base + out_w];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.kernels, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        vec!["kernels", "bias"]
    }
}
