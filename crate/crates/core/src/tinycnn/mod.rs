//! Small VGG-style convnet: stacks of 3×3 convolutions and 2×2 pooling,
//! one dense layer to two logits, softmax.
//!
//! Everything is `f64` and single-sample; minibatch gradients are computed per
//! sample in parallel and summed in sample order, so training is bit-identical
//! for any thread count.

mod layers;
mod tensor;

pub use layers::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, maxpool2, maxpool2_backward, relu,
    relu_backward, softmax,
};
pub use tensor::Tensor;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::imaging::{extract_patches, Image, Patch};
use crate::{rng, ClassId, Error, ProbVector, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Softmax,
}

impl Layer {
    fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv3x3 { weights, bias, .. } | Layer::Dense { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv3x3 { weights, bias, .. } | Layer::Dense { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }
}

/// How patch-level outputs become one image-level probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchAggregate {
    #[default]
    Mean,
    /// Largest positive-class probability over patches.
    Max,
    /// Fraction of patches classified positive.
    Vote,
}

/// Architecture description used to build a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSpec {
    pub input_side: usize,
    /// Channels per block; each block is conv-relu-conv-relu-maxpool.
    pub blocks: Vec<usize>,
    pub aggregate: PatchAggregate,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            input_side: 256,
            blocks: vec![8, 16],
            aggregate: PatchAggregate::Mean,
        }
    }
}

impl CnnSpec {
    /// Layer list with zeroed parameters.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(Error::InvalidInput("every block needs at least one channel".into()));
        }
        let div = 1usize << self.blocks.len();
        if self.input_side == 0 || !self.input_side.is_multiple_of(div) {
            return Err(Error::InvalidInput(format!(
                "input side {} must be a positive multiple of {div} for {} pooling stages",
                self.input_side,
                self.blocks.len()
            )));
        }
        let conv = |i: usize, o: usize| Layer::Conv3x3 {
            in_ch: i,
            out_ch: o,
            weights: vec![0.0; i * o * 9],
            bias: vec![0.0; o],
        };
        let mut layers = Vec::new();
        let mut ch = 3;
        for &c in &self.blocks {
            layers.extend([conv(ch, c), Layer::Relu, conv(c, c), Layer::Relu, Layer::MaxPool2]);
            ch = c;
        }
        let side = self.input_side / div;
        let inputs = ch * side * side;
        layers.extend([
            Layer::Flatten,
            Layer::Dense {
                inputs,
                outputs: 2,
                weights: vec![0.0; inputs * 2],
                bias: vec![0.0; 2],
            },
            Layer::Softmax,
        ]);
        Ok(layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    layers: Vec<Layer>,
    input_side: usize,
    aggregate: PatchAggregate,
}

/// Per-layer parameter gradients (weights, bias); `None` for parameter-free layers.
pub type Gradients = Vec<Option<(Vec<f64>, Vec<f64>)>>;

/// Momentum buffers matching a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum(Gradients);

impl Momentum {
    pub fn zeros(model: &CnnModel) -> Self {
        Momentum(
            model
                .layers
                .iter()
                .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
                .collect(),
        )
    }
}

/// One `(epoch, batch, loss)` row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

impl CnnModel {
    /// Builds a model and checks that the layer shapes chain.
    pub fn new(layers: Vec<Layer>, input_side: usize, aggregate: PatchAggregate) -> Result<Self> {
        let model = CnnModel {
            layers,
            input_side,
            aggregate,
        };
        model.validate()?;
        Ok(model)
    }

    /// Zero-parameter model for `spec`.
    pub fn zeroed(spec: &CnnSpec) -> Result<Self> {
        Self::new(spec.layers()?, spec.input_side, spec.aggregate)
    }

    /// He-uniform weights (limit √(6 / fan_in)), zero biases.
    pub fn he_uniform(spec: &CnnSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(spec)?;
        let mut rng = rng::stream(seed, 0);
        for layer in &mut model.layers {
            let fan_in = match layer {
                Layer::Conv3x3 { in_ch, .. } => *in_ch * 9,
                Layer::Dense { inputs, .. } => *inputs,
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            let (w, _) = layer.params_mut().expect("parametric layer");
            w.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn aggregate(&self) -> PatchAggregate {
        self.aggregate
    }

    pub fn set_aggregate(&mut self, a: PatchAggregate) {
        self.aggregate = a;
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        let mut shape = vec![3usize, self.input_side, self.input_side];
        if self.input_side == 0 {
            return bad("input side must be positive".into());
        }
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv3x3 {
                    in_ch,
                    out_ch,
                    weights,
                    bias,
                } => {
                    if shape.len() != 3 || shape[0] != *in_ch || weights.len() != in_ch * out_ch * 9 || bias.len() != *out_ch {
                        return bad(format!("layer {i}: conv {in_ch}->{out_ch} does not fit {shape:?}"));
                    }
                    shape[0] = *out_ch;
                }
                Layer::Relu => {}
                Layer::MaxPool2 => {
                    if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
                        return bad(format!("layer {i}: maxpool on {shape:?}"));
                    }
                    shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
                }
                Layer::Flatten => shape = vec![shape.iter().product()],
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    if shape != [*inputs] || weights.len() != inputs * outputs || bias.len() != *outputs {
                        return bad(format!("layer {i}: dense {inputs}->{outputs} does not fit {shape:?}"));
                    }
                    shape = vec![*outputs];
                }
                Layer::Softmax => {
                    if i + 1 != n {
                        return bad(format!("layer {i}: softmax must be the last layer"));
                    }
                    if shape != [2] {
                        return bad(format!("softmax over {shape:?}, expected 2 logits"));
                    }
                }
            }
            if layer.params().is_some_and(|(w, b)| w.iter().chain(b).any(|v| !v.is_finite())) {
                return bad(format!("layer {i}: non-finite parameter"));
            }
        }
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return bad("model must end in softmax".into());
        }
        Ok(())
    }

    /// Runs every layer, keeping each layer's input for the backward pass.
    fn forward_cached(&self, x: &Tensor) -> Result<(Vec<Tensor>, ProbVector)> {
        let expected = [3, self.input_side, self.input_side];
        if x.shape() != expected {
            return Err(Error::InvalidInput(format!(
                "model expects input {expected:?}, got {:?}",
                x.shape()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = match layer {
                Layer::Conv3x3 {
                    in_ch,
                    out_ch,
                    weights,
                    bias,
                } => conv3x3_forward(&cur, *in_ch, *out_ch, weights, bias)?,
                Layer::Relu => relu(&cur),
                Layer::MaxPool2 => maxpool2(&cur)?,
                Layer::Flatten => {
                    let n = cur.data().len();
                    Tensor::new(vec![n], cur.data().to_vec())?
                }
                Layer::Dense {
                    inputs: i,
                    outputs,
                    weights,
                    bias,
                } => dense_forward(&cur, *i, *outputs, weights, bias)?,
                Layer::Softmax => {
                    let d = cur.data();
                    let p = softmax([d[0], d[1]])?;
                    inputs.push(cur);
                    return Ok((inputs, p));
                }
            };
            inputs.push(std::mem::replace(&mut cur, next));
        }
        unreachable!("validated models end in softmax")
    }

    /// Class probabilities for a `(3, side, side)` input scaled to [0, 1].
    pub fn forward(&self, x: &Tensor) -> Result<ProbVector> {
        self.forward_cached(x).map(|(_, p)| p)
    }

    /// Resizes the patch to the model's input side and runs it.
    pub fn forward_patch(&self, patch: &Patch) -> Result<ProbVector> {
        self.forward(&Tensor::from_image(&patch.image, self.input_side)?)
    }

    /// Cross-entropy `−ln p[label]` and its parameter gradients for one sample.
    pub fn sample_gradients(&self, x: &Tensor, label: ClassId) -> Result<(f64, Gradients)> {
        let (inputs, p) = self.forward_cached(x)?;
        let loss = -p.get(label).max(f64::MIN_POSITIVE).ln();
        let mut dlogits = p.as_array();
        dlogits[label.index()] -= 1.0;
        let mut grad = Tensor::new(vec![2], dlogits.to_vec())?;
        let mut grads: Gradients = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &inputs[i];
            grad = match layer {
                Layer::Softmax => grad,
                Layer::Dense {
                    inputs: n_in,
                    outputs,
                    weights,
                    ..
                } => {
                    let (dx, dw, db) = dense_backward(input, &grad, *n_in, *outputs, weights);
                    grads[i] = Some((dw, db));
                    dx
                }
                Layer::Flatten => input.with_data(grad.into_data()),
                Layer::MaxPool2 => maxpool2_backward(input, &grad),
                Layer::Relu => relu_backward(input, &grad),
                Layer::Conv3x3 {
                    in_ch, out_ch, weights, ..
                } => {
                    let (dx, dw, db) = conv3x3_backward(input, &grad, *in_ch, *out_ch, weights);
                    grads[i] = Some((dw, db));
                    dx
                }
            };
        }
        Ok((loss, grads))
    }

    /// Mean loss and mean gradients over a batch. Per-sample work runs in
    /// parallel; the reduction is in batch order.
    pub fn batch_gradients(&self, batch: &[(Tensor, ClassId)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let per_sample: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|(x, y)| self.sample_gradients(x, *y))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut iter = per_sample.into_iter();
        let (mut loss, mut total) = iter.next().expect("non-empty");
        for (l, g) in iter {
            loss += l;
            for (acc, g) in total.iter_mut().zip(g) {
                if let (Some((aw, ab)), Some((gw, gb))) = (acc.as_mut(), g) {
                    aw.iter_mut().zip(&gw).for_each(|(a, v)| *a += v);
                    ab.iter_mut().zip(&gb).for_each(|(a, v)| *a += v);
                }
            }
        }
        for (w, b) in total.iter_mut().flatten() {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= scale);
        }
        Ok((loss * scale, total))
    }

    /// Mean cross-entropy over a batch without computing gradients.
    pub fn batch_loss(&self, batch: &[(Tensor, ClassId)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut total = 0.0;
        for (x, y) in batch {
            total -= self.forward(x)?.get(*y).max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / batch.len() as f64)
    }

    fn check(&self) -> Result<()> {
        for layer in &self.layers {
            if layer.params().is_some_and(|(w, b)| w.iter().chain(b).any(|v| !v.is_finite())) {
                return Err(Error::InvalidInput("training diverged: non-finite parameter".into()));
            }
        }
        Ok(())
    }

    /// Layer table followed by parameter blobs, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.input_side as u32)
            .u8(match self.aggregate {
                PatchAggregate::Mean => 0,
                PatchAggregate::Max => 1,
                PatchAggregate::Vote => 2,
            })
            .u32(self.layers.len() as u32);
        for layer in &self.layers {
            match layer {
                Layer::Conv3x3 { in_ch, out_ch, .. } => w.u8(0).u32(*in_ch as u32).u32(*out_ch as u32),
                Layer::Relu => w.u8(1),
                Layer::MaxPool2 => w.u8(2),
                Layer::Flatten => w.u8(3),
                Layer::Dense { inputs, outputs, .. } => w.u8(4).u32(*inputs as u32).u32(*outputs as u32),
                Layer::Softmax => w.u8(5),
            };
        }
        for (weights, bias) in self.layers.iter().filter_map(Layer::params) {
            w.f64_slice(weights).f64_slice(bias);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], section: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, section);
        let bad = |m: String| Error::Model(format!("section `{section}`: {m}"));
        let input_side = r.u32()? as usize;
        let aggregate = match r.u8()? {
            0 => PatchAggregate::Mean,
            1 => PatchAggregate::Max,
            2 => PatchAggregate::Vote,
            v => return Err(bad(format!("unknown aggregate mode {v}"))),
        };
        let n = r.u32()? as usize;
        if n > 1024 {
            return Err(bad(format!("{n} layers")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            layers.push(match r.u8()? {
                0 => {
                    let (i, o) = (r.u32()? as usize, r.u32()? as usize);
                    Layer::Conv3x3 {
                        in_ch: i,
                        out_ch: o,
                        weights: Vec::new(),
                        bias: Vec::new(),
                    }
                }
                1 => Layer::Relu,
                2 => Layer::MaxPool2,
                3 => Layer::Flatten,
                4 => {
                    let (i, o) = (r.u32()? as usize, r.u32()? as usize);
                    Layer::Dense {
                        inputs: i,
                        outputs: o,
                        weights: Vec::new(),
                        bias: Vec::new(),
                    }
                }
                5 => Layer::Softmax,
                t => return Err(bad(format!("unknown layer tag {t}"))),
            });
        }
        let limit = bytes.len() / 8;
        for layer in &mut layers {
            if let Some((w, b)) = layer.params_mut() {
                *w = r.f64_vec(limit)?;
                *b = r.f64_vec(limit)?;
            }
        }
        r.finish()?;
        CnnModel::new(layers, input_side, aggregate).map_err(|e| bad(e.to_string()))
    }
}

/// One SGD-with-momentum step (`v ← μv + g`, `θ ← θ − ηv`) on the batch's mean
/// cross-entropy. Returns the loss before the update.
pub fn backward_and_step(
    model: &mut CnnModel,
    momentum: &mut Momentum,
    batch: &[(Tensor, ClassId)],
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    let (loss, grads) = model.batch_gradients(batch)?;
    for ((layer, g), v) in model.layers.iter_mut().zip(&grads).zip(momentum.0.iter_mut()) {
        let (Some((w, b)), Some((gw, gb)), Some((vw, vb))) = (layer.params_mut(), g, v.as_mut()) else {
            continue;
        };
        for ((p, g), v) in w.iter_mut().zip(gw).zip(vw.iter_mut()).chain(b.iter_mut().zip(gb).zip(vb.iter_mut())) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.learning_rate * *v;
        }
    }
    model.check()?;
    Ok(loss)
}

/// Trains a fresh He-initialised model with shuffled minibatches.
///
/// Initialisation uses stream 0 of `cfg.seed`, shuffling stream 1.
pub fn train_cnn(
    dataset: &[(Tensor, ClassId)],
    spec: &CnnSpec,
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<LossRecord>)> {
    cfg.validate()?;
    let positives = dataset.iter().filter(|(_, y)| *y == ClassId::Positive).count();
    if positives == 0 || positives == dataset.len() {
        return Err(Error::Data(format!(
            "CNN training needs both classes ({positives} positive of {})",
            dataset.len()
        )));
    }
    let mut model = CnnModel::he_uniform(spec, cfg.seed)?;
    let mut momentum = Momentum::zeros(&model);
    let mut shuffle = rng::stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let loss = backward_and_step(&mut model, &mut momentum, &batch, cfg)?;
            history.push(LossRecord { epoch, batch: b, loss });
        }
    }
    Ok((model, history))
}

/// Combines patch probabilities using the model's aggregation mode.
pub fn aggregate_patches(probs: &[ProbVector], mode: PatchAggregate) -> Result<ProbVector> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("no patch outputs to aggregate".into()));
    }
    match mode {
        PatchAggregate::Mean => ProbVector::mean(probs),
        PatchAggregate::Max => {
            let p1 = probs.iter().map(ProbVector::positive).fold(0.0, f64::max);
            Ok(ProbVector::from_raw_unchecked([1.0 - p1, p1]))
        }
        PatchAggregate::Vote => {
            let k = probs.iter().filter(|p| p.positive() > 0.5).count();
            let p1 = k as f64 / probs.len() as f64;
            Ok(ProbVector::from_raw_unchecked([1.0 - p1, p1]))
        }
    }
}

/// Image-level CNN probability: tile into patches, run each, aggregate.
pub fn predict_image(model: &CnnModel, roi: &Image) -> Result<ProbVector> {
    let probs = extract_patches(roi)
        .iter()
        .map(|p| model.forward_patch(p))
        .collect::<Result<Vec<_>>>()?;
    aggregate_patches(&probs, model.aggregate)
}
