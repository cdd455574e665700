//! Finite-difference verification of every analytic backward pass.
//!
//! Each layer family is instantiated with 64-bit elements on several small
//! random shapes; the loss is a fixed random weighting of the outputs, so
//! the upstream gradient is dense and non-trivial. The analytic gradients
//! are compared element by element against the central-difference oracle
//! with relative error `|a - n| / max(|a|, |n|, 1e-6)`.
//!
//! Smooth layers use the default step 1e-3. ReLU and max-pool have kinks, so
//! their checks use 1e-5 to keep the probe interval off the non-smooth set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    softmax_cross_entropy, Activation, BatchNorm, BiGru, Conv3d, Dense, GruCell, GruCellGrads,
    MaxPool3d,
};
use crate::rng::{self, Purpose};
use crate::tensor::{finite_diff_grad, Tensor, DEFAULT_FD_STEP};

const KINK_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub layer: &'static str,
    pub case: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checks: Vec<GradCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_error < self.tolerance)
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data().iter())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Weighted output sum: a scalar loss whose logit gradient is `weights`.
fn weighted_sum(y: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    y.data()
        .iter()
        .zip(weights.data().iter())
        .map(|(a, b)| a * b)
        .sum()
}

fn check_conv3d(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for case in 0..5 {
        let in_ch = rng.gen_range(1..=3);
        let out_ch = rng.gen_range(1..=3);
        let d = rng.gen_range(2..=4);
        let h = rng.gen_range(5..=8);
        let w = rng.gen_range(5..=9);
        let stride = if case % 2 == 0 { [1, 1, 1] } else { [1, 2, 2] };
        let conv = Conv3d::<f64>::init(in_ch, out_ch, stride, rng);
        // init uses zero bias; randomize so the bias gradient is exercised
        let conv = Conv3d::new(
            conv.kernels,
            random_tensor(&[out_ch], rng, -0.5, 0.5),
            stride,
            conv.padding,
        )
        .expect("valid conv");
        let x = random_tensor(&[1, in_ch, d, h, w], rng, -1.0, 1.0);
        let y_dims = conv.out_dims([d, h, w]).expect("valid dims");
        let weights = random_tensor(&[1, out_ch, y_dims[0], y_dims[1], y_dims[2]], rng, -1.0, 1.0);

        let (_, cache) = conv.forward(x.clone()).expect("forward");
        let (gx, grads) = conv.backward(&cache, &weights).expect("backward");

        let num_x = finite_diff_grad(
            |xx| weighted_sum(&conv.infer(xx).unwrap(), &weights),
            &x,
            DEFAULT_FD_STEP,
        );
        let num_k = finite_diff_grad(
            |kk| {
                let probe = Conv3d::new(kk.clone(), conv.bias.clone(), stride, conv.padding)
                    .expect("valid conv");
                weighted_sum(&probe.infer(&x).unwrap(), &weights)
            },
            &conv.kernels,
            DEFAULT_FD_STEP,
        );
        let num_b = finite_diff_grad(
            |bb| {
                let probe = Conv3d::new(conv.kernels.clone(), bb.clone(), stride, conv.padding)
                    .expect("valid conv");
                weighted_sum(&probe.infer(&x).unwrap(), &weights)
            },
            &conv.bias,
            DEFAULT_FD_STEP,
        );

        let err = max_rel_err(&gx, &num_x)
            .max(max_rel_err(&grads[0], &num_k))
            .max(max_rel_err(&grads[1], &num_b));
        out.push(GradCheck {
            layer: "conv3d",
            case: format!("in={in_ch} out={out_ch} x=({d},{h},{w}) stride={stride:?}"),
            max_rel_error: err,
        });
    }
}

fn check_maxpool(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for _ in 0..5 {
        let c = rng.gen_range(1..=3);
        let d = rng.gen_range(2..=4);
        let h = rng.gen_range(4..=8);
        let w = rng.gen_range(4..=8);
        let pool = MaxPool3d::paper_config();
        let x = random_tensor(&[1, c, d, h, w], rng, -1.0, 1.0);
        let dims = pool.out_dims([d, h, w]).expect("valid dims");
        let weights = random_tensor(&[1, c, dims[0], dims[1], dims[2]], rng, -1.0, 1.0);

        let (_, cache) = pool.forward(&x).expect("forward");
        let gx = pool.backward(&cache, &weights).expect("backward");
        let num_x = finite_diff_grad(
            |xx| weighted_sum(&pool.forward(xx).unwrap().0, &weights),
            &x,
            KINK_FD_STEP,
        );
        out.push(GradCheck {
            layer: "maxpool3d",
            case: format!("c={c} x=({d},{h},{w})"),
            max_rel_error: max_rel_err(&gx, &num_x),
        });
    }
}

fn check_batchnorm(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for _ in 0..5 {
        let n = rng.gen_range(2..=4);
        let c = rng.gen_range(1..=3);
        let d = rng.gen_range(2..=3);
        let h = rng.gen_range(3..=5);
        let w = rng.gen_range(3..=5);
        let mut bn = BatchNorm::<f64>::init(c, rng);
        bn.gamma = random_tensor(&[c], rng, 0.5, 1.5);
        bn.beta = random_tensor(&[c], rng, -0.5, 0.5);
        let x = random_tensor(&[n, c, d, h, w], rng, -1.0, 1.0);
        let weights = random_tensor(&[n, c, d, h, w], rng, -1.0, 1.0);

        let (_, cache) = bn.clone().forward_train(x.clone()).expect("forward");
        let (gx, grads) = bn.backward(&cache, &weights).expect("backward");

        let train_loss = |bn: &BatchNorm<f64>, x: &Tensor<f64>| {
            let mut probe = bn.clone();
            weighted_sum(&probe.forward_train(x.clone()).unwrap().0, &weights)
        };
        let num_x = finite_diff_grad(|xx| train_loss(&bn, xx), &x, DEFAULT_FD_STEP);
        let num_gamma = finite_diff_grad(
            |gg| {
                let mut probe = bn.clone();
                probe.gamma = gg.clone();
                train_loss(&probe, &x)
            },
            &bn.gamma,
            DEFAULT_FD_STEP,
        );
        let num_beta = finite_diff_grad(
            |bb| {
                let mut probe = bn.clone();
                probe.beta = bb.clone();
                train_loss(&probe, &x)
            },
            &bn.beta,
            DEFAULT_FD_STEP,
        );

        let err = max_rel_err(&gx, &num_x)
            .max(max_rel_err(&grads[0], &num_gamma))
            .max(max_rel_err(&grads[1], &num_beta));
        out.push(GradCheck {
            layer: "batchnorm",
            case: format!("x=({n},{c},{d},{h},{w})"),
            max_rel_error: err,
        });
    }
}

fn check_dense(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for case in 0..5 {
        let batch = rng.gen_range(1..=3);
        let in_dim = rng.gen_range(3..=6);
        let out_dim = rng.gen_range(2..=5);
        let activation = if case % 2 == 0 {
            Activation::Relu
        } else {
            Activation::None
        };
        let mut dense = Dense::<f64>::init(in_dim, out_dim, activation, rng);
        dense.bias = random_tensor(&[out_dim], rng, -0.5, 0.5);
        let x = random_tensor(&[batch, in_dim], rng, -1.0, 1.0);
        let weights = random_tensor(&[batch, out_dim], rng, -1.0, 1.0);

        let (_, cache) = dense.forward(x.clone()).expect("forward");
        let (gx, grads) = dense.backward(&cache, &weights).expect("backward");

        let loss = |dense: &Dense<f64>, x: &Tensor<f64>| {
            weighted_sum(&dense.infer(x).unwrap(), &weights)
        };
        let num_x = finite_diff_grad(|xx| loss(&dense, xx), &x, KINK_FD_STEP);
        let num_w = finite_diff_grad(
            |ww| {
                let mut probe = dense.clone();
                probe.weights = ww.clone();
                loss(&probe, &x)
            },
            &dense.weights,
            KINK_FD_STEP,
        );
        let num_b = finite_diff_grad(
            |bb| {
                let mut probe = dense.clone();
                probe.bias = bb.clone();
                loss(&probe, &x)
            },
            &dense.bias,
            KINK_FD_STEP,
        );

        let err = max_rel_err(&gx, &num_x)
            .max(max_rel_err(&grads[0], &num_w))
            .max(max_rel_err(&grads[1], &num_b));
        out.push(GradCheck {
            layer: "dense",
            case: format!("{in_dim}->{out_dim} {activation:?} batch={batch}"),
            max_rel_error: err,
        });
    }
}

fn check_gru_cell(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for _ in 0..5 {
        let batch = rng.gen_range(1..=2);
        let input = rng.gen_range(2..=5);
        let hidden = rng.gen_range(2..=4);
        let cell = GruCell::<f64>::init(input, hidden, rng);
        let x = random_tensor(&[batch, input], rng, -1.0, 1.0);
        let h_prev = random_tensor(&[batch, hidden], rng, -0.8, 0.8);
        let weights = random_tensor(&[batch, hidden], rng, -1.0, 1.0);

        let (_, cache) = cell.step(&x, &h_prev).expect("step");
        let mut grads = GruCellGrads::zeros_like(&cell);
        let (gx, gh) = cell
            .step_backward(&cache, &weights, &mut grads)
            .expect("backward");

        let loss = |cell: &GruCell<f64>, x: &Tensor<f64>, h: &Tensor<f64>| {
            weighted_sum(&cell.step(x, h).unwrap().0, &weights)
        };
        let mut err = max_rel_err(
            &gx,
            &finite_diff_grad(|xx| loss(&cell, xx, &h_prev), &x, DEFAULT_FD_STEP),
        );
        err = err.max(max_rel_err(
            &gh,
            &finite_diff_grad(|hh| loss(&cell, &x, hh), &h_prev, DEFAULT_FD_STEP),
        ));
        // gradient of every one of the nine parameter tensors
        for (i, param) in cell.params().into_iter().enumerate() {
            let num = finite_diff_grad(
                |pp| {
                    let mut probe = cell.clone();
                    *probe.params_mut()[i] = pp.clone();
                    loss(&probe, &x, &h_prev)
                },
                param,
                DEFAULT_FD_STEP,
            );
            err = err.max(max_rel_err(&grads.tensors[i], &num));
        }
        out.push(GradCheck {
            layer: "gru_cell",
            case: format!("in={input} hidden={hidden} batch={batch}"),
            max_rel_error: err,
        });
    }
}

fn check_bigru(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for case in 0..5 {
        let steps = 3;
        let batch = rng.gen_range(1..=2);
        let input = rng.gen_range(2..=4);
        let hidden = rng.gen_range(2..=3);
        let layer = BiGru::<f64>::init(input, hidden, rng);
        let x = random_tensor(&[batch, steps, input], rng, -1.0, 1.0);
        let weights = random_tensor(&[batch, steps, 2 * hidden], rng, -1.0, 1.0);

        let (_, cache) = layer.forward(&x).expect("forward");
        let (gx, grads) = layer.backward(&cache, &weights).expect("backward");

        let loss = |layer: &BiGru<f64>, x: &Tensor<f64>| {
            weighted_sum(&layer.infer(x).unwrap(), &weights)
        };
        let mut err = max_rel_err(
            &gx,
            &finite_diff_grad(|xx| loss(&layer, xx), &x, DEFAULT_FD_STEP),
        );
        for (i, param) in layer.params().into_iter().enumerate() {
            let num = finite_diff_grad(
                |pp| {
                    let mut probe = layer.clone();
                    *probe.params_mut()[i] = pp.clone();
                    loss(&probe, &x)
                },
                param,
                DEFAULT_FD_STEP,
            );
            err = err.max(max_rel_err(&grads[i], &num));
        }
        out.push(GradCheck {
            layer: "bigru",
            case: format!("T={steps} in={input} hidden={hidden} batch={batch} case={case}"),
            max_rel_error: err,
        });
    }
}

fn check_softmax_ce(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) {
    for _ in 0..5 {
        let k = rng.gen_range(2..=18);
        let true_class = rng.gen_range(0..k);
        let logits = random_tensor(&[k], rng, -2.0, 2.0);
        let (_, grad) = softmax_cross_entropy(&logits, true_class).expect("loss");
        let num = finite_diff_grad(
            |ll| softmax_cross_entropy(ll, true_class).unwrap().0,
            &logits,
            DEFAULT_FD_STEP,
        );
        out.push(GradCheck {
            layer: "softmax_ce",
            case: format!("k={k} true={true_class}"),
            max_rel_error: max_rel_err(&grad, &num),
        });
    }
}

/// Check every layer family on five random shapes each.
pub fn run_all(tolerance: f64, seed: u64) -> GradCheckReport {
    let mut rng = rng::stream(seed, Purpose::Synthetic, 0xB0A);
    let mut checks = Vec::new();
    check_conv3d(&mut rng, &mut checks);
    check_maxpool(&mut rng, &mut checks);
    check_batchnorm(&mut rng, &mut checks);
    check_dense(&mut rng, &mut checks);
    check_gru_cell(&mut rng, &mut checks);
    check_bigru(&mut rng, &mut checks);
    check_softmax_ce(&mut rng, &mut checks);
    GradCheckReport { tolerance, checks }
}
