//! The three word-classification architectures, assembled from the layer
//! kernels, plus checkpoint serialization.
//!
//! All three end in the same MLP head (one hidden ReLU layer, dropout, a
//! linear layer to the class logits):
//!
//! - `conv3d`: batch norm on the input, then three blocks of
//!   [Conv3D -> MaxPool -> Dropout -> BatchNorm] with 8/16/32 kernels (the
//!   first convolution strides (1,2,2), the rest (1,1,1)), then a full
//!   flatten into the head.
//! - `gru`: per-frame flatten into a 28-step sequence, two bidirectional
//!   GRU layers, last-timestep readout into the head.
//! - `gruconv`: the conv3d stack's feature maps, flattened per frame and fed
//!   through the same two BiGRU layers and head.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    softmax, Activation, BatchNorm, BatchNormCache, BiGru, BiGruCache, Conv3d, Conv3dCache,
    Dense, DenseCache, Dropout, MaxPool3d, MaxPool3dCache,
};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Conv3d,
    Gru,
    GruConv,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Conv3d => "conv3d",
            ModelKind::Gru => "gru",
            ModelKind::GruConv => "gruconv",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv3d" => Ok(ModelKind::Conv3d),
            "gru" => Ok(ModelKind::Gru),
            "gruconv" => Ok(ModelKind::GruConv),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind {other:?} (expected conv3d|gru|gruconv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// (channels, frames, height, width)
    pub input_shape: [usize; 4],
    pub num_classes: usize,
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f32,
    pub seed: u64,
}

impl ModelSpec {
    /// Paper defaults: 18 classes, 256 hidden units per GRU direction, a
    /// 128-unit MLP hidden layer, dropout 0.5.
    pub fn new(kind: ModelKind, input_shape: [usize; 4], seed: u64) -> Self {
        Self {
            kind,
            input_shape,
            num_classes: 18,
            gru_hidden: 256,
            mlp_hidden: 128,
            dropout: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes".into()));
        }
        if self.gru_hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::InvalidSpec("hidden sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One layer of a built model.
#[derive(Debug, Clone)]
pub enum Layer {
    BatchNorm(BatchNorm<f32>),
    Conv3d(Conv3d<f32>),
    MaxPool3d(MaxPool3d),
    Dropout(Dropout),
    /// (batch, ...) -> (batch, features)
    Flatten,
    /// (batch, ch, frames, h, w) -> (batch, frames, ch*h*w)
    FramesToSeq,
    /// (batch, time, feat) -> (batch, feat) at the final timestep
    LastStep,
    BiGru(BiGru<f32>),
    Dense(Dense<f32>),
}

#[derive(Debug)]
pub enum LayerCache {
    BatchNorm(BatchNormCache<f32>),
    Conv3d(Conv3dCache<f32>),
    MaxPool3d(MaxPool3dCache),
    /// Scaled dropout mask.
    Mask(Tensor<f32>),
    /// Input shape, for the reshaping layers.
    Shape(Vec<usize>),
    BiGru(BiGruCache<f32>),
    Dense(DenseCache<f32>),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    spec: ModelSpec,
    nodes: Vec<Node>,
}

fn frames_to_seq(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [n, c, d, h, w] = *x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "per-frame flatten expects rank 5, got {:?}",
            x.shape()
        )));
    };
    let feat = c * h * w;
    let plane = h * w;
    let mut y = Tensor::zeros(&[n, d, feat]);
    for b in 0..n {
        for ch in 0..c {
            for t in 0..d {
                let src = (((b * c) + ch) * d + t) * plane;
                let dst = (b * d + t) * feat + ch * plane;
                y.data_mut()[dst..dst + plane]
                    .copy_from_slice(&x.data()[src..src + plane]);
            }
        }
    }
    Ok(y)
}

fn frames_to_seq_backward(grad: &Tensor<f32>, in_shape: &[usize]) -> Result<Tensor<f32>> {
    let [n, c, d, h, w] = *in_shape else {
        return Err(Error::ShapeMismatch(format!(
            "cached shape {in_shape:?} is not rank 5"
        )));
    };
    let feat = c * h * w;
    let plane = h * w;
    if grad.shape() != [n, d, feat] {
        return Err(Error::ShapeMismatch(format!(
            "per-frame flatten backward: grad {:?}, expected {:?}",
            grad.shape(),
            [n, d, feat]
        )));
    }
    let mut gx = Tensor::zeros(in_shape);
    for b in 0..n {
        for ch in 0..c {
            for t in 0..d {
                let dst = (((b * c) + ch) * d + t) * plane;
                let src = (b * d + t) * feat + ch * plane;
                gx.data_mut()[dst..dst + plane]
                    .copy_from_slice(&grad.data()[src..src + plane]);
            }
        }
    }
    Ok(gx)
}

fn last_step(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [n, t, f] = *x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "last-step readout expects rank 3, got {:?}",
            x.shape()
        )));
    };
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut y = Tensor::zeros(&[n, f]);
    for b in 0..n {
        let src = (b * t + (t - 1)) * f;
        y.data_mut()[b * f..(b + 1) * f].copy_from_slice(&x.data()[src..src + f]);
    }
    Ok(y)
}

impl Layer {
    fn forward_train(
        &mut self,
        x: Tensor<f32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<f32>, LayerCache)> {
        match self {
            Layer::BatchNorm(bn) => {
                let (y, c) = bn.forward_train(x)?;
                Ok((y, LayerCache::BatchNorm(c)))
            }
            Layer::Conv3d(conv) => {
                let (y, c) = conv.forward(x)?;
                Ok((y, LayerCache::Conv3d(c)))
            }
            Layer::MaxPool3d(pool) => {
                let (y, c) = pool.forward(&x)?;
                Ok((y, LayerCache::MaxPool3d(c)))
            }
            Layer::Dropout(drop) => {
                let (y, mask) = drop.apply_train(&x, rng);
                Ok((y, LayerCache::Mask(mask)))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let feat: usize = shape[1..].iter().product();
                let y = x.into_reshaped(&[shape[0], feat])?;
                Ok((y, LayerCache::Shape(shape)))
            }
            Layer::FramesToSeq => {
                let shape = x.shape().to_vec();
                Ok((frames_to_seq(&x)?, LayerCache::Shape(shape)))
            }
            Layer::LastStep => {
                let shape = x.shape().to_vec();
                Ok((last_step(&x)?, LayerCache::Shape(shape)))
            }
            Layer::BiGru(gru) => {
                let (y, c) = gru.forward(&x)?;
                Ok((y, LayerCache::BiGru(c)))
            }
            Layer::Dense(dense) => {
                let (y, c) = dense.forward(x)?;
                Ok((y, LayerCache::Dense(c)))
            }
        }
    }

    fn forward_eval(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Layer::BatchNorm(bn) => bn.forward_eval(&x),
            Layer::Conv3d(conv) => conv.infer(&x),
            Layer::MaxPool3d(pool) => Ok(pool.forward(&x)?.0),
            Layer::Dropout(drop) => Ok(drop.apply_eval(x)),
            Layer::Flatten => {
                let feat: usize = x.shape()[1..].iter().product();
                let batch = x.shape()[0];
                x.into_reshaped(&[batch, feat])
            }
            Layer::FramesToSeq => frames_to_seq(&x),
            Layer::LastStep => last_step(&x),
            Layer::BiGru(gru) => gru.infer(&x),
            Layer::Dense(dense) => dense.infer(&x),
        }
    }

    /// Returns the input gradient and this layer's parameter gradients.
    fn backward(
        &self,
        cache: &LayerCache,
        grad: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, Vec<Tensor<f32>>)> {
        match (self, cache) {
            (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) => bn.backward(c, grad),
            (Layer::Conv3d(conv), LayerCache::Conv3d(c)) => conv.backward(c, grad),
            (Layer::MaxPool3d(pool), LayerCache::MaxPool3d(c)) => {
                Ok((pool.backward(c, grad)?, vec![]))
            }
            (Layer::Dropout(drop), LayerCache::Mask(mask)) => {
                Ok((drop.backward(mask, grad), vec![]))
            }
            (Layer::Flatten, LayerCache::Shape(shape)) => Ok((grad.reshape(shape)?, vec![])),
            (Layer::FramesToSeq, LayerCache::Shape(shape)) => {
                Ok((frames_to_seq_backward(grad, shape)?, vec![]))
            }
            (Layer::LastStep, LayerCache::Shape(shape)) => {
                let [n, t, f] = *shape.as_slice() else {
                    return Err(Error::ShapeMismatch("bad cached shape".into()));
                };
                let mut gx = Tensor::zeros(&[n, t, f]);
                for b in 0..n {
                    let dst = (b * t + (t - 1)) * f;
                    gx.data_mut()[dst..dst + f]
                        .copy_from_slice(&grad.data()[b * f..(b + 1) * f]);
                }
                Ok((gx, vec![]))
            }
            (Layer::BiGru(gru), LayerCache::BiGru(c)) => gru.backward(c, grad),
            (Layer::Dense(dense), LayerCache::Dense(c)) => dense.backward(c, grad),
            _ => Err(Error::InvalidArgument(
                "layer cache does not match layer type".into(),
            )),
        }
    }

    /// Output shape for a single sample (no batch dimension).
    fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::BatchNorm(_) | Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Conv3d(conv) => {
                let [_, d, h, w] = *input else {
                    return Err(Error::ShapeMismatch(format!(
                        "conv expects rank-4 sample, got {input:?}"
                    )));
                };
                let o = conv.out_dims([d, h, w])?;
                Ok(vec![conv.out_channels(), o[0], o[1], o[2]])
            }
            Layer::MaxPool3d(pool) => {
                let [c, d, h, w] = *input else {
                    return Err(Error::ShapeMismatch(format!(
                        "pool expects rank-4 sample, got {input:?}"
                    )));
                };
                let o = pool.out_dims([d, h, w])?;
                Ok(vec![c, o[0], o[1], o[2]])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::FramesToSeq => {
                let [c, d, h, w] = *input else {
                    return Err(Error::ShapeMismatch(format!(
                        "per-frame flatten expects rank-4 sample, got {input:?}"
                    )));
                };
                Ok(vec![d, c * h * w])
            }
            Layer::LastStep => {
                let [_, f] = *input else {
                    return Err(Error::ShapeMismatch(format!(
                        "last-step readout expects rank-2 sample, got {input:?}"
                    )));
                };
                Ok(vec![f])
            }
            Layer::BiGru(gru) => {
                let [t, _] = *input else {
                    return Err(Error::ShapeMismatch(format!(
                        "BiGRU expects rank-2 sample, got {input:?}"
                    )));
                };
                Ok(vec![t, 2 * gru.hidden()])
            }
            Layer::Dense(dense) => Ok(vec![dense.out_dim()]),
        }
    }

    fn learnables(&self) -> Vec<(String, &Tensor<f32>)> {
        match self {
            Layer::BatchNorm(bn) => named(bn.param_names(), bn.params()),
            Layer::Conv3d(c) => named(c.param_names(), c.params()),
            Layer::Dense(d) => named(d.param_names(), d.params()),
            Layer::BiGru(g) => BiGru::<f32>::param_names()
                .into_iter()
                .zip(g.params())
                .collect(),
            _ => vec![],
        }
    }

    fn learnables_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        match self {
            Layer::BatchNorm(bn) => named_mut(bn.param_names(), bn.params_mut()),
            Layer::Conv3d(c) => named_mut(c.param_names(), c.params_mut()),
            Layer::Dense(d) => named_mut(d.param_names(), d.params_mut()),
            Layer::BiGru(g) => BiGru::<f32>::param_names()
                .into_iter()
                .zip(g.params_mut())
                .collect(),
            _ => vec![],
        }
    }

    /// Non-learnable tensors that must survive checkpointing.
    fn extra_state(&self) -> Vec<(String, &Tensor<f32>)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("running_mean".to_string(), &bn.running_mean),
                ("running_var".to_string(), &bn.running_var),
            ],
            _ => vec![],
        }
    }

    /// Learnables and running statistics in one borrow.
    fn state_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("gamma".to_string(), &mut bn.gamma),
                ("beta".to_string(), &mut bn.beta),
                ("running_mean".to_string(), &mut bn.running_mean),
                ("running_var".to_string(), &mut bn.running_var),
            ],
            other => other.learnables_mut(),
        }
    }
}

fn named<'a>(
    names: Vec<&'static str>,
    params: Vec<&'a Tensor<f32>>,
) -> Vec<(String, &'a Tensor<f32>)> {
    names
        .into_iter()
        .map(str::to_string)
        .zip(params)
        .collect()
}

fn named_mut<'a>(
    names: Vec<&'static str>,
    params: Vec<&'a mut Tensor<f32>>,
) -> Vec<(String, &'a mut Tensor<f32>)> {
    names
        .into_iter()
        .map(str::to_string)
        .zip(params)
        .collect()
}

/// Assemble the model described by `spec` with seeded initialization.
pub fn build(spec: &ModelSpec) -> Result<ModelGraph> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Purpose::Init, 0);
    let mut nodes: Vec<Node> = Vec::new();
    let push = |nodes: &mut Vec<Node>, name: &str, layer: Layer| {
        nodes.push(Node {
            name: name.to_string(),
            layer,
        });
    };

    let [c, d, h, w] = spec.input_shape;
    let head_input;
    match spec.kind {
        ModelKind::Conv3d | ModelKind::GruConv => {
            push(&mut nodes, "bn_in", Layer::BatchNorm(BatchNorm::init(c, &mut rng)));
            let mut dims = [d, h, w];
            let mut in_ch = c;
            let stack: [(usize, [usize; 3]); 3] =
                [(8, [1, 2, 2]), (16, [1, 1, 1]), (32, [1, 1, 1])];
            for (i, (out_ch, stride)) in stack.into_iter().enumerate() {
                let conv = Conv3d::init(in_ch, out_ch, stride, &mut rng);
                dims = conv.out_dims(dims)?;
                push(&mut nodes, &format!("conv{}", i + 1), Layer::Conv3d(conv));
                let pool = MaxPool3d::paper_config();
                dims = pool.out_dims(dims)?;
                push(&mut nodes, &format!("pool{}", i + 1), Layer::MaxPool3d(pool));
                push(
                    &mut nodes,
                    &format!("drop{}", i + 1),
                    Layer::Dropout(Dropout::new(spec.dropout)),
                );
                push(
                    &mut nodes,
                    &format!("bn{}", i + 1),
                    Layer::BatchNorm(BatchNorm::init(out_ch, &mut rng)),
                );
                in_ch = out_ch;
            }
            if spec.kind == ModelKind::Conv3d {
                push(&mut nodes, "flatten", Layer::Flatten);
                head_input = in_ch * dims[0] * dims[1] * dims[2];
            } else {
                push(&mut nodes, "frames", Layer::FramesToSeq);
                let feat = in_ch * dims[1] * dims[2];
                push(
                    &mut nodes,
                    "gru1",
                    Layer::BiGru(BiGru::init(feat, spec.gru_hidden, &mut rng)),
                );
                push(
                    &mut nodes,
                    "gru2",
                    Layer::BiGru(BiGru::init(2 * spec.gru_hidden, spec.gru_hidden, &mut rng)),
                );
                push(&mut nodes, "last", Layer::LastStep);
                head_input = 2 * spec.gru_hidden;
            }
        }
        ModelKind::Gru => {
            push(&mut nodes, "frames", Layer::FramesToSeq);
            let feat = c * h * w;
            push(
                &mut nodes,
                "gru1",
                Layer::BiGru(BiGru::init(feat, spec.gru_hidden, &mut rng)),
            );
            push(
                &mut nodes,
                "gru2",
                Layer::BiGru(BiGru::init(2 * spec.gru_hidden, spec.gru_hidden, &mut rng)),
            );
            push(&mut nodes, "last", Layer::LastStep);
            head_input = 2 * spec.gru_hidden;
        }
    }

    push(
        &mut nodes,
        "fc1",
        Layer::Dense(Dense::init(head_input, spec.mlp_hidden, Activation::Relu, &mut rng)),
    );
    push(&mut nodes, "drop_fc", Layer::Dropout(Dropout::new(spec.dropout)));
    push(
        &mut nodes,
        "fc2",
        Layer::Dense(Dense::init(
            spec.mlp_hidden,
            spec.num_classes,
            Activation::None,
            &mut rng,
        )),
    );

    let graph = ModelGraph {
        spec: spec.clone(),
        nodes,
    };
    // exercise the shape algebra once so impossible input sizes fail at
    // build time rather than mid-epoch
    graph.shape_chain()?;
    Ok(graph)
}

/// Stack equally shaped samples into one batch tensor.
pub fn stack_batch(samples: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * samples.len());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes shapes {:?} and {:?}",
                first.shape(),
                s.shape()
            )));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(shape, data)
}

impl ModelGraph {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Per-layer output shapes for one sample, in graph order.
    pub fn shape_chain(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut shape = self.spec.input_shape.to_vec();
        let mut chain = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            shape = node.layer.out_shape(&shape)?;
            chain.push((node.name.clone(), shape.clone()));
        }
        Ok(chain)
    }

    fn check_batch(&self, x: &Tensor<f32>) -> Result<()> {
        let ok = x.shape().len() == 5 && x.shape()[1..] == self.spec.input_shape;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "model expects batches of {:?}, got {:?}",
                self.spec.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward over a batch; updates batch-norm running
    /// statistics and draws dropout masks from `rng`.
    pub fn forward_train(
        &mut self,
        x: Tensor<f32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<f32>, Vec<LayerCache>)> {
        self.check_batch(&x)?;
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut cur = x;
        for node in &mut self.nodes {
            let (y, cache) = node.layer.forward_train(cur, rng)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Propagate the logit gradient back through every layer. Returns one
    /// gradient vector per node, aligned with this graph's node order.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        grad_logits: &Tensor<f32>,
    ) -> Result<Vec<Vec<Tensor<f32>>>> {
        if caches.len() != self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} caches for {} layers",
                caches.len(),
                self.nodes.len()
            )));
        }
        let mut per_node: Vec<Vec<Tensor<f32>>> = Vec::with_capacity(self.nodes.len());
        let mut grad = grad_logits.clone();
        for (node, cache) in self.nodes.iter().zip(caches.iter()).rev() {
            let (gx, grads) = node.layer.backward(cache, &grad)?;
            per_node.push(grads);
            grad = gx;
        }
        per_node.reverse();
        Ok(per_node)
    }

    /// Eval-mode forward over a batch: running statistics, no dropout. Pure.
    pub fn forward_eval_batch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_batch(x)?;
        let mut cur = x.clone();
        for node in &self.nodes {
            cur = node.layer.forward_eval(cur)?;
        }
        Ok(cur)
    }

    /// Eval-mode logits for a single (C, D, H, W) sample.
    pub fn forward_eval(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.shape() != self.spec.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "model expects {:?}, got {:?}",
                self.spec.input_shape,
                x.shape()
            )));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        let batched = x.reshape(&shape)?;
        let logits = self.forward_eval_batch(&batched)?;
        logits.reshape(&[self.spec.num_classes])
    }

    /// Argmax class and the softmax distribution; ties break to the lowest
    /// class index.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<(usize, Vec<f32>)> {
        let logits = self.forward_eval(x)?;
        let probs = softmax(logits.data());
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok((best, probs))
    }

    /// Learnable parameters in graph order, named `node.field`.
    pub fn learnables(&self) -> Vec<(String, &Tensor<f32>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.layer
                    .learnables()
                    .into_iter()
                    .map(move |(field, t)| (format!("{}.{field}", n.name), t))
            })
            .collect()
    }

    pub fn learnables_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let name = n.name.clone();
                n.layer
                    .learnables_mut()
                    .into_iter()
                    .map(move |(field, t)| (format!("{name}.{field}"), t))
            })
            .collect()
    }

    /// Learnables plus batch-norm running statistics; everything a
    /// checkpoint must carry.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                let learn = n.layer.learnables().into_iter();
                let extra = n.layer.extra_state().into_iter();
                learn
                    .chain(extra)
                    .map(move |(field, t)| (format!("{}.{field}", n.name), t))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn state_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        for n in self.nodes.iter_mut() {
            let name = n.name.clone();
            for (field, t) in n.layer.state_mut() {
                out.push((format!("{name}.{field}"), t));
            }
        }
        out
    }

    /// Install named tensors, e.g. from a checkpoint. Every state tensor of
    /// the model must be covered exactly once.
    pub fn load_state(&mut self, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
        let mut entries = self.state_tensors_mut();
        if entries.len() != tensors.len() {
            return Err(Error::SpecMismatch(format!(
                "model has {} state tensors, checkpoint provides {}",
                entries.len(),
                tensors.len()
            )));
        }
        for (name, value) in tensors {
            let slot = entries
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::SpecMismatch(format!("unknown tensor {name:?}")))?;
            if slot.1.shape() != value.shape() {
                return Err(Error::SpecMismatch(format!(
                    "tensor {name:?}: checkpoint shape {:?} vs model {:?}",
                    value.shape(),
                    slot.1.shape()
                )));
            }
            *slot.1 = value.clone();
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// VLCK checkpoint format: magic "VLCK", u16 LE version, u32 LE header
// length, JSON header (spec, epoch, validation accuracy, tensor manifest
// with offsets), then concatenated VLT1 tensor records.
// ---------------------------------------------------------------------------

pub const VLCK_MAGIC: &[u8; 4] = b"VLCK";
pub const VLCK_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    epoch: usize,
    val_accuracy: f64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: u64,
    len: u64,
}

/// A model's parameters frozen at one training epoch.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn capture(model: &ModelGraph, epoch: usize, val_accuracy: f64) -> Self {
        Self {
            spec: model.spec().clone(),
            epoch,
            val_accuracy,
            tensors: model
                .state_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// Rebuild the model; eval-mode outputs are bit-identical to the one
    /// captured.
    pub fn to_model(&self) -> Result<ModelGraph> {
        let mut model = build(&self.spec)?;
        model.load_state(&self.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blobs: Vec<u8> = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, tensor) in &self.tensors {
            let offset = blobs.len() as u64;
            tensor
                .write_vlt1(&mut blobs)
                .map_err(|e| Error::io(format!("encode tensor {name}"), e))?;
            entries.push(TensorEntry {
                name: name.clone(),
                offset,
                len: blobs.len() as u64 - offset,
            });
        }
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            epoch: self.epoch,
            val_accuracy: self.val_accuracy,
            tensors: entries,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::InvalidArgument(format!("encode checkpoint header: {e}")))?;

        let tmp = path.with_extension("vlck.tmp");
        let mut file = fs::File::create(&tmp)
            .map_err(|e| Error::io(format!("create {}", tmp.display()), e))?;
        let mut write = |bytes: &[u8]| {
            file.write_all(bytes)
                .map_err(|e| Error::io(format!("write {}", tmp.display()), e))
        };
        write(VLCK_MAGIC)?;
        write(&VLCK_VERSION.to_le_bytes())?;
        write(&(header_json.len() as u32).to_le_bytes())?;
        write(&header_json)?;
        write(&blobs)?;
        file.sync_all()
            .map_err(|e| Error::io(format!("sync {}", tmp.display()), e))?;
        drop(file);
        fs::rename(&tmp, path)
            .map_err(|e| Error::io(format!("rename {} -> {}", tmp.display(), path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_expecting(path, None)
    }

    /// Load and, when `expected` is given, reject checkpoints of a
    /// different architecture.
    pub fn load_expecting(path: &Path, expected: Option<ModelKind>) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let name = path.display().to_string();
        if bytes.len() < 10 {
            return Err(Error::TruncatedFile(name));
        }
        if &bytes[0..4] != VLCK_MAGIC {
            return Err(Error::BadMagic(name));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VLCK_VERSION {
            return Err(Error::SpecMismatch(format!(
                "{name}: checkpoint version {version}, supported {VLCK_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let header_end = 10usize.saturating_add(header_len);
        if bytes.len() < header_end {
            return Err(Error::TruncatedFile(name));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[10..header_end])
            .map_err(|e| Error::MalformedManifest(format!("{name}: checkpoint header: {e}")))?;
        if let Some(kind) = expected {
            if header.spec.kind != kind {
                return Err(Error::SpecMismatch(format!(
                    "{name}: checkpoint holds a {} model, expected {}",
                    header.spec.kind.name(),
                    kind.name()
                )));
            }
        }
        let blob = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let start = entry.offset as usize;
            let end = start.saturating_add(entry.len as usize);
            if end > blob.len() {
                return Err(Error::TruncatedFile(format!("{name} ({})", entry.name)));
            }
            let mut cursor = &blob[start..end];
            let tensor = Tensor::<f32>::read_vlt1(&mut cursor, &entry.name)?;
            tensors.push((entry.name.clone(), tensor));
        }
        Ok(Self {
            spec: header.spec,
            epoch: header.epoch,
            val_accuracy: header.val_accuracy,
            tensors,
        })
    }
}
