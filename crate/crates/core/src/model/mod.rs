//! The sequential CNN: architecture description, parameter storage,
//! forward inference and backpropagation.

mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{self, LayerCache, Real, Tensor};
use crate::{IMAGE_CHANNELS, IMAGE_SIZE, NUM_CLASSES};

pub use io::{decode_model, encode_model, load_model, load_model_expecting, save_model, Fingerprint, FORMAT_VERSION, MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

/// One entry of the sequential stack. Convolutions are 3×3-style valid
/// convolutions with a fused ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize },
    MaxPool,
    Flatten,
    Dense { units: usize, activation: Activation },
    Dropout { rate: f32 },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv2d",
            LayerSpec::MaxPool => "max_pooling2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    /// Output shape for the given input shape.
    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let arch_err = |detail: String| Error::Architecture { index, name: self.kind().to_string(), detail };
        match *self {
            LayerSpec::Conv { filters, kernel } => match *input {
                [h, w, _] if h >= kernel && w >= kernel && filters > 0 && kernel > 0 => {
                    Ok(vec![h - kernel + 1, w - kernel + 1, filters])
                }
                [h, w, _] => Err(arch_err(format!("{kernel}×{kernel} kernel does not fit {h}×{w} input"))),
                _ => Err(arch_err(format!("expects H×W×C input, got {input:?}"))),
            },
            LayerSpec::MaxPool => match *input {
                [h, w, c] if h >= 2 && w >= 2 => Ok(vec![h / 2, w / 2, c]),
                _ => Err(arch_err(format!("cannot pool {input:?}"))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units, .. } => match *input {
                [_] if units > 0 => Ok(vec![units]),
                _ => Err(arch_err(format!("expects a flat input, got {input:?}"))),
            },
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(input.to_vec())
                } else {
                    Err(arch_err(format!("dropout rate {rate} outside [0,1)")))
                }
            }
        }
    }

    /// Shapes of this layer's trainable tensors given its input shape.
    fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv { filters, kernel } => vec![vec![kernel, kernel, input[2], filters], vec![filters]],
            LayerSpec::Dense { units, .. } => vec![vec![input[0], units], vec![units]],
            _ => Vec::new(),
        }
    }
}

/// Number of convolutional blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    Shallow,
    #[default]
    Canonical,
    Deep,
}

impl Depth {
    pub fn conv_blocks(self) -> usize {
        match self {
            Depth::Shallow => 1,
            Depth::Canonical => 2,
            Depth::Deep => 3,
        }
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shallow" => Ok(Depth::Shallow),
            "canonical" => Ok(Depth::Canonical),
            "deep" => Ok(Depth::Deep),
            other => Err(Error::InvalidArgument(format!("unknown depth `{other}` (shallow|canonical|deep)"))),
        }
    }
}

/// Architecture knobs. The default is the 267,397-parameter network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub depth: Depth,
    /// Filters of the first convolution; each further block doubles it.
    pub filters: usize,
    /// Dense layers including the softmax output.
    pub dense_layers: usize,
    pub hidden_units: usize,
    /// Dropout after the last hidden dense layer (sweep variants only).
    pub dropout: Option<f32>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { depth: Depth::Canonical, filters: 32, dense_layers: 2, hidden_units: 32, dropout: None }
    }
}

impl ArchConfig {
    pub fn layer_specs(&self, input_shape: [usize; 3]) -> Result<Vec<LayerSpec>> {
        if self.dense_layers == 0 {
            return Err(Error::InvalidArgument("at least the output dense layer is required".into()));
        }
        let mut specs = Vec::new();
        let mut shape = input_shape.to_vec();
        for block in 0..self.depth.conv_blocks() {
            let conv = LayerSpec::Conv { filters: self.filters << block, kernel: 3 };
            shape = conv.output_shape(specs.len(), &shape)?;
            specs.push(conv);
            // The first two blocks always pool; deeper blocks pool only where the extent allows.
            if block < 2 || (shape[0] >= 2 && shape[1] >= 2) {
                shape = LayerSpec::MaxPool.output_shape(specs.len(), &shape)?;
                specs.push(LayerSpec::MaxPool);
            }
        }
        specs.push(LayerSpec::Flatten);
        for _ in 1..self.dense_layers {
            specs.push(LayerSpec::Dense { units: self.hidden_units, activation: Activation::Relu });
        }
        if let Some(rate) = self.dropout {
            specs.push(LayerSpec::Dropout { rate });
        }
        specs.push(LayerSpec::Dense { units: NUM_CLASSES, activation: Activation::Softmax });
        Ok(specs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// `[weights, bias]` for conv/dense layers, empty otherwise.
    pub params: Vec<Tensor<T>>,
}

/// Ordered layer stack with its trainable tensors.
///
/// `generation` changes on every mutable access so that a forward cache can
/// be matched against the exact parameters that produced it.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real = f32> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
    generation: u64,
}

impl<T: Real> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

pub const INPUT_SHAPE: [usize; 3] = [IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS];

/// Builds the network described by `arch` with seeded initialization:
/// He-uniform for ReLU layers, Xavier-uniform for the softmax layer, zero biases.
pub fn build_model(arch: &ArchConfig, init_seed: u64) -> Result<ModelParams<f32>> {
    let specs = arch.layer_specs(INPUT_SHAPE)?;
    ModelParams::from_specs(INPUT_SHAPE, &specs, init_seed)
}

impl<T: Real> ModelParams<T> {
    pub fn from_specs(input_shape: [usize; 3], specs: &[LayerSpec], init_seed: u64) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let out = spec.output_shape(i, &shape)?;
            let mut rng = SplitMix64::new(derive_seed(init_seed, i as u64));
            let params = spec
                .param_shapes(&shape)
                .into_iter()
                .enumerate()
                .map(|(j, s)| if j == 0 { init_weights(spec, &s, &mut rng) } else { Tensor::zeros(&s) })
                .collect();
            layers.push(Layer { spec: *spec, input_shape: shape.clone(), output_shape: out.clone(), params });
            shape = out;
        }
        let model = Self { input_shape, layers, generation: 0 };
        model.validate_head()?;
        Ok(model)
    }

    /// Assembles a model from explicit tensors, validating every shape.
    pub fn from_parts(input_shape: [usize; 3], specs: &[LayerSpec], tensors: Vec<Vec<Tensor<T>>>) -> Result<Self> {
        if specs.len() != tensors.len() {
            return Err(Error::InvalidArgument("one tensor list per layer required".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, (spec, params)) in specs.iter().zip(tensors).enumerate() {
            let out = spec.output_shape(i, &shape)?;
            let want = spec.param_shapes(&shape);
            let got: Vec<Vec<usize>> = params.iter().map(|t| t.shape().to_vec()).collect();
            if want != got {
                return Err(Error::Architecture {
                    index: i,
                    name: spec.kind().into(),
                    detail: format!("parameter shapes {got:?}, expected {want:?}"),
                });
            }
            layers.push(Layer { spec: *spec, input_shape: shape.clone(), output_shape: out.clone(), params });
            shape = out;
        }
        let model = Self { input_shape, layers, generation: 0 };
        model.validate_head()?;
        Ok(model)
    }

    /// A model with no layers; only useful as a degenerate value.
    pub fn empty(input_shape: [usize; 3]) -> Self {
        Self { input_shape, layers: Vec::new(), generation: 0 }
    }

    fn validate_head(&self) -> Result<()> {
        match self.layers.last() {
            Some(Layer { spec: LayerSpec::Dense { units, activation: Activation::Softmax }, .. }) if *units == NUM_CLASSES => {
                Ok(())
            }
            Some(l) => Err(Error::Architecture {
                index: self.layers.len() - 1,
                name: l.spec.kind().into(),
                detail: format!("final layer must be dense({NUM_CLASSES}) with softmax"),
            }),
            None => Err(Error::InvalidArgument("model has no layers".into())),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Output shapes of every layer in order.
    pub fn shape_chain(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.output_shape.clone()).collect()
    }

    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.params.iter().map(Tensor::len).sum()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    /// Mutable access to every trainable tensor; invalidates outstanding caches.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.generation = self.generation.wrapping_add(1);
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    /// Flags each trainable tensor as a weight (`true`, L2-penalized) or a bias.
    pub fn weight_flags(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| (0..l.params.len()).map(|j| j == 0)).collect()
    }

    /// `λ/2 · Σ‖w‖²` over weight tensors (biases excluded).
    pub fn l2_penalty(&self, l2: T) -> T {
        let sq: T = self
            .tensors()
            .zip(self.weight_flags())
            .filter(|(_, w)| *w)
            .map(|(t, _)| t.data().iter().map(|&v| v * v).sum::<T>())
            .sum();
        l2 * sq / T::lit(2.0)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    input_shape: l.input_shape.clone(),
                    output_shape: l.output_shape.clone(),
                    params: l.params.iter().map(|t| t.cast()).collect(),
                })
                .collect(),
            generation: 0,
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != self.input_shape {
            return Err(shape_err(
                "forward",
                format!("batch {shape:?} does not match [B, {}, {}, {}]", self.input_shape[0], self.input_shape[1], self.input_shape[2]),
            ));
        }
        if let Some(&v) = batch.data().iter().find(|&&v| !(v <= T::lit(1.5)) || !v.is_finite()) {
            return Err(Error::NotNormalized(v.to_f64_lossy()));
        }
        Ok(shape[0])
    }

    /// Runs the network on a `B×H×W×C` batch.
    pub fn forward(&self, batch: &Tensor<T>, mode: ForwardMode, exec: Execution) -> Result<ForwardOutput<T>> {
        let b = self.check_batch(batch)?;
        let per = batch.len() / b;
        let results = par::map_range(exec, b, |i| {
            let x = Tensor::new(self.input_shape.to_vec(), batch.row(i).to_vec())?;
            let dropout = match mode {
                ForwardMode::Inference => None,
                ForwardMode::Training { dropout_seed } => Some(derive_seed(dropout_seed, i as u64)),
            };
            self.forward_sample(x, mode.is_training(), dropout)
        });
        debug_assert_eq!(per, self.input_shape.iter().product::<usize>());
        let mut logits = Vec::with_capacity(b * NUM_CLASSES);
        let mut probs = Vec::with_capacity(b * NUM_CLASSES);
        let mut caches = Vec::with_capacity(if mode.is_training() { b } else { 0 });
        for r in results {
            let (l, c) = r?;
            probs.extend(tensor::softmax(&l));
            logits.extend(l);
            if let Some(c) = c {
                caches.push(c);
            }
        }
        Ok(ForwardOutput {
            logits: Tensor::new(vec![b, NUM_CLASSES], logits)?,
            probs: Tensor::new(vec![b, NUM_CLASSES], probs)?,
            cache: mode.is_training().then(|| BatchCache { generation: self.generation, samples: caches }),
        })
    }

    /// Class probabilities for a batch (inference mode).
    pub fn predict(&self, batch: &Tensor<T>, exec: Execution) -> Result<Tensor<T>> {
        Ok(self.forward(batch, ForwardMode::Inference, exec)?.probs)
    }

    fn forward_sample(
        &self,
        mut x: Tensor<T>,
        training: bool,
        dropout_seed: Option<u64>,
    ) -> Result<(Vec<T>, Option<Vec<LayerCache<T>>>)> {
        let mut caches = Vec::with_capacity(if training { self.layers.len() } else { 0 });
        for i in 0..self.layers.len() {
            let (out, cache) = self.apply_layer(i, x, training, dropout_seed)?;
            caches.extend(cache);
            x = out;
        }
        Ok((x.into_data(), training.then_some(caches)))
    }

    /// Inputs seen by every layer for one sample, followed by the logits.
    /// Dropout is active iff `dropout_seed` is given.
    pub fn layer_inputs(&self, x: Tensor<T>, dropout_seed: Option<u64>) -> Result<Vec<Tensor<T>>> {
        let mut acts = vec![x];
        for i in 0..self.layers.len() {
            let (out, _) = self.apply_layer(i, acts[i].clone(), false, dropout_seed)?;
            acts.push(out);
        }
        Ok(acts)
    }

    /// Logits obtained by resuming the forward pass at layer `start`.
    pub fn forward_from(&self, start: usize, mut x: Tensor<T>, dropout_seed: Option<u64>) -> Result<Vec<T>> {
        for i in start..self.layers.len() {
            x = self.apply_layer(i, x, false, dropout_seed)?.0;
        }
        Ok(x.into_data())
    }

    /// [`Self::forward_from`] that also returns the piecewise-linear regime
    /// it went through: ReLU on/off bits and max-pool winners. Two inputs
    /// with equal traces lie on the same linear piece of the network.
    pub fn forward_from_traced(&self, start: usize, mut x: Tensor<T>, dropout_seed: Option<u64>) -> Result<(Vec<T>, Vec<u64>)> {
        let mut trace = Vec::new();
        let push_signs = |pre: &Tensor<T>, trace: &mut Vec<u64>| {
            for chunk in pre.data().chunks(64) {
                trace.push(chunk.iter().enumerate().fold(0u64, |w, (i, &v)| w | (((v > T::zero()) as u64) << i)));
            }
        };
        for i in start..self.layers.len() {
            let (out, cache) = self.apply_layer(i, x, true, dropout_seed)?;
            match cache {
                Some(LayerCache::Conv { pre_activation, .. }) => push_signs(&pre_activation, &mut trace),
                Some(LayerCache::Dense { pre_activation, .. })
                    if matches!(self.layers[i].spec, LayerSpec::Dense { activation: Activation::Relu, .. }) =>
                {
                    push_signs(&pre_activation, &mut trace)
                }
                Some(LayerCache::Pool { argmax, .. }) => trace.extend(argmax.iter().map(|&a| a as u64)),
                _ => {}
            }
            x = out;
        }
        Ok((x.into_data(), trace))
    }

    fn apply_layer(
        &self,
        i: usize,
        x: Tensor<T>,
        keep_cache: bool,
        dropout_seed: Option<u64>,
    ) -> Result<(Tensor<T>, Option<LayerCache<T>>)> {
        let layer = &self.layers[i];
        Ok(match layer.spec {
            LayerSpec::Conv { .. } => {
                let pre = tensor::conv2d(&x, &layer.params[0], &layer.params[1])?;
                let out = tensor::relu(&pre);
                (out, keep_cache.then(|| LayerCache::Conv { input: x, pre_activation: pre }))
            }
            LayerSpec::MaxPool => {
                let (out, argmax) = tensor::maxpool2d(&x)?;
                (out, keep_cache.then(|| LayerCache::Pool { input_shape: x.shape().to_vec(), argmax }))
            }
            LayerSpec::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.len();
                (x.reshape(vec![n])?, keep_cache.then_some(LayerCache::Flatten { input_shape: shape }))
            }
            LayerSpec::Dense { activation, .. } => {
                let pre = tensor::dense(&x, &layer.params[0], &layer.params[1])?;
                let out = if activation == Activation::Relu { tensor::relu(&pre) } else { pre.clone() };
                (out, keep_cache.then(|| LayerCache::Dense { input: x, pre_activation: pre }))
            }
            LayerSpec::Dropout { rate } => match dropout_seed {
                Some(seed) => {
                    let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
                    let scale = T::lit(1.0 / (1.0 - rate as f64));
                    let keep: Vec<T> =
                        (0..x.len()).map(|_| if rng.unit_f64() >= rate as f64 { scale } else { T::zero() }).collect();
                    let data = x.data().iter().zip(&keep).map(|(&v, &k)| v * k).collect();
                    (Tensor::new(x.shape().to_vec(), data)?, keep_cache.then_some(LayerCache::Dropout { keep_scale: keep }))
                }
                None => {
                    let n = x.len();
                    (x, keep_cache.then(|| LayerCache::Dropout { keep_scale: vec![T::one(); n] }))
                }
            },
        })
    }

    /// Gradients of the mean batch loss w.r.t. every trainable tensor, given
    /// per-sample gradients of the loss w.r.t. the logits. `l2·w` is added to
    /// weight (not bias) gradients.
    pub fn backward(&self, cache: &BatchCache<T>, grad_logits: &Tensor<T>, l2: T, exec: Execution) -> Result<Gradients<T>> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache from parameter generation {}, model is at {}",
                cache.generation, self.generation
            )));
        }
        let b = cache.samples.len();
        if grad_logits.shape() != [b, NUM_CLASSES] {
            return Err(Error::StaleCache(format!(
                "cache holds {b} samples but upstream gradient has shape {:?}",
                grad_logits.shape()
            )));
        }
        let per_sample = par::map_range(exec, b, |i| self.backward_sample(&cache.samples[i], grad_logits.row(i)));
        let mut acc: Vec<Vec<Tensor<T>>> =
            self.layers.iter().map(|l| l.params.iter().map(|t| Tensor::zeros(t.shape())).collect()).collect();
        // Fixed-order reduction keeps results independent of scheduling.
        for grads in per_sample {
            for (acc_layer, g_layer) in acc.iter_mut().zip(grads?) {
                for (a, g) in acc_layer.iter_mut().zip(g_layer) {
                    for (av, &gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av += gv;
                    }
                }
            }
        }
        let inv_b = T::one() / T::lit(b.max(1) as f64);
        for (acc_layer, layer) in acc.iter_mut().zip(&self.layers) {
            for (j, (a, p)) in acc_layer.iter_mut().zip(&layer.params).enumerate() {
                for (av, &pv) in a.data_mut().iter_mut().zip(p.data()) {
                    *av *= inv_b;
                    if j == 0 {
                        *av += l2 * pv;
                    }
                }
            }
        }
        Ok(Gradients { layers: acc })
    }

    fn backward_sample(&self, caches: &[LayerCache<T>], grad_logits: &[T]) -> Result<Vec<Vec<Tensor<T>>>> {
        if caches.len() != self.layers.len() {
            return Err(Error::StaleCache("cache does not match the layer stack".into()));
        }
        let mut grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        let mut g = Tensor::new(vec![grad_logits.len()], grad_logits.to_vec())?;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            g = match (&layer.spec, cache) {
                (LayerSpec::Dense { activation, .. }, LayerCache::Dense { input, pre_activation }) => {
                    let g_pre = if *activation == Activation::Relu {
                        tensor::relu_backward(pre_activation, &g)?
                    } else {
                        g
                    };
                    let dg = tensor::dense_backward(input, &layer.params[0], &g_pre)?;
                    grads[i] = vec![dg.weights, dg.bias];
                    dg.input
                }
                (LayerSpec::Conv { .. }, LayerCache::Conv { input, pre_activation }) => {
                    let g_pre = tensor::relu_backward(pre_activation, &g)?;
                    let cg = tensor::conv2d_backward(input, &layer.params[0], &g_pre, i > 0)?;
                    grads[i] = vec![cg.kernels, cg.bias];
                    match cg.input {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                (LayerSpec::MaxPool, LayerCache::Pool { input_shape, argmax }) => {
                    tensor::maxpool2d_backward(&g, argmax, input_shape)?
                }
                (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => g.reshape(input_shape.clone())?,
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { keep_scale }) => {
                    let data = g.data().iter().zip(keep_scale).map(|(&v, &k)| v * k).collect();
                    Tensor::new(g.shape().to_vec(), data)?
                }
                _ => return Err(Error::StaleCache(format!("cache entry {i} does not match layer kind"))),
            };
        }
        Ok(grads)
    }

    /// Mean cross-entropy over the batch plus the L2 term, and the per-sample
    /// logit gradients.
    pub fn loss_and_logit_grads(&self, out: &ForwardOutput<T>, onehot: &Tensor<T>, l2: T) -> Result<(T, Tensor<T>)> {
        let b = out.logits.shape()[0];
        if onehot.shape() != out.logits.shape() {
            return Err(shape_err("loss", format!("targets {:?} vs logits {:?}", onehot.shape(), out.logits.shape())));
        }
        let mut total = T::zero();
        let mut grad = Vec::with_capacity(b * NUM_CLASSES);
        for i in 0..b {
            let logits = Tensor::new(vec![NUM_CLASSES], out.logits.row(i).to_vec())?;
            let target = Tensor::new(vec![NUM_CLASSES], onehot.row(i).to_vec())?;
            let r = tensor::softmax_cross_entropy(&logits, &target)?;
            total += r.loss;
            grad.extend(r.grad_logits.into_data());
        }
        let loss = total / T::lit(b as f64) + self.l2_penalty(l2);
        Ok((loss, Tensor::new(vec![b, NUM_CLASSES], grad)?))
    }
}

fn init_weights<T: Real>(spec: &LayerSpec, shape: &[usize], rng: &mut SplitMix64) -> Tensor<T> {
    let limit = match *spec {
        LayerSpec::Conv { kernel, .. } => (6.0 / (kernel * kernel * shape[2]) as f64).sqrt(),
        LayerSpec::Dense { activation: Activation::Relu, .. } => (6.0 / shape[0] as f64).sqrt(),
        _ => (6.0 / (shape[0] + shape[1]) as f64).sqrt(),
    };
    Tensor::from_fn(shape, |_| T::lit((rng.unit_f64() * 2.0 - 1.0) * limit))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Inference,
    /// Keeps caches for backpropagation; dropout masks derive from the seed.
    Training { dropout_seed: u64 },
}

impl ForwardMode {
    pub fn is_training(self) -> bool {
        matches!(self, ForwardMode::Training { .. })
    }
}

#[derive(Clone, Debug)]
pub struct BatchCache<T> {
    generation: u64,
    samples: Vec<Vec<LayerCache<T>>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// Present only for training-mode passes.
    pub cache: Option<BatchCache<T>>,
}

/// Parameter gradients, structured like [`ModelParams`]' layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters, kernel } => write!(f, "conv2d({filters}, {kernel}x{kernel}, relu)"),
            LayerSpec::MaxPool => write!(f, "max_pooling2d(2x2)"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { units, activation } => write!(f, "dense({units}, {activation:?})"),
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate})"),
        }
    }
}
