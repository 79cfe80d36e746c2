//! Dense row-major tensors and the hand-differentiated layer primitives.
//!
//! Image tensors use `H×W×C` layout. Convolution kernels are stored as
//! `K×K×Cin×Cout` so that the innermost loop of both the forward and backward
//! passes runs over a contiguous output-channel slice.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

use crate::error::{shape_err, Error, Result};

/// Scalar type usable by the network: `f32` for training, `f64` for
/// gradient checking.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("literal fits")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err("Tensor::new", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Slice of the `i`-th entry along the leading axis.
    pub fn row(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Saved forward-pass state needed by one layer's backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Conv { input: Tensor<T>, pre_activation: Tensor<T> },
    Pool { input_shape: Vec<usize>, argmax: Vec<u32> },
    Flatten { input_shape: Vec<usize> },
    Dense { input: Tensor<T>, pre_activation: Tensor<T> },
    Dropout { keep_scale: Vec<T> },
}

fn dims3<T>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape.as_slice() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(shape_err(op, format!("expected rank-3 H×W×C tensor, got {s:?}"))),
    }
}

fn conv_dims<T>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    op: &'static str,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (h, w, cin) = dims3(input, op)?;
    let (k, cout) = match *kernels.shape.as_slice() {
        [k, k2, ci, co] if k == k2 && ci == cin => (k, co),
        ref s => {
            return Err(shape_err(
                op,
                format!("kernels {s:?} incompatible with input channels {cin} (want [K,K,{cin},Cout])"),
            ))
        }
    };
    if h < k || w < k {
        return Err(shape_err(op, format!("input {h}×{w} smaller than kernel {k}×{k}")));
    }
    Ok((h, w, cin, k, cout))
}

/// Valid-padding, stride-1 2-D convolution.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, cin, k, cout) = conv_dims(input, kernels, "conv2d")?;
    if bias.shape != [cout] {
        return Err(shape_err("conv2d", format!("bias {:?} != [{cout}]", bias.shape)));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let span = k * cin;
    let mut out = vec![T::zero(); oh * ow * cout];
    for y in 0..oh {
        for x in 0..ow {
            let o = &mut out[(y * ow + x) * cout..][..cout];
            o.copy_from_slice(&bias.data);
            for dy in 0..k {
                let inp = &input.data[((y + dy) * w + x) * cin..][..span];
                let ker = &kernels.data[dy * span * cout..][..span * cout];
                for (&a, kr) in inp.iter().zip(ker.chunks_exact(cout)) {
                    if a == T::zero() {
                        continue;
                    }
                    for (ov, &kv) in o.iter_mut().zip(kr) {
                        *ov += a * kv;
                    }
                }
            }
        }
    }
    Ok(Tensor { shape: vec![oh, ow, cout], data: out })
}

pub struct ConvGrads<T> {
    /// `None` when the caller did not request the input gradient.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (h, w, cin, k, cout) = conv_dims(input, kernels, "conv2d_backward")?;
    let (oh, ow) = (h - k + 1, w - k + 1);
    if grad_out.shape != [oh, ow, cout] {
        return Err(shape_err(
            "conv2d_backward",
            format!("upstream gradient {:?} != [{oh}, {ow}, {cout}]", grad_out.shape),
        ));
    }
    let span = k * cin;
    let mut gk = vec![T::zero(); kernels.data.len()];
    let mut gb = vec![T::zero(); cout];
    let mut gi = if want_input_grad { vec![T::zero(); input.data.len()] } else { Vec::new() };
    for y in 0..oh {
        for x in 0..ow {
            let g = &grad_out.data[(y * ow + x) * cout..][..cout];
            if g.iter().all(|&v| v == T::zero()) {
                continue;
            }
            for (b, &gv) in gb.iter_mut().zip(g) {
                *b += gv;
            }
            for dy in 0..k {
                let base = ((y + dy) * w + x) * cin;
                let inp = &input.data[base..][..span];
                let gkr = &mut gk[dy * span * cout..][..span * cout];
                for (&a, gkc) in inp.iter().zip(gkr.chunks_exact_mut(cout)) {
                    if a == T::zero() {
                        continue;
                    }
                    for (gkv, &gv) in gkc.iter_mut().zip(g) {
                        *gkv += a * gv;
                    }
                }
                if want_input_grad {
                    let ker = &kernels.data[dy * span * cout..][..span * cout];
                    for (giv, kr) in gi[base..base + span].iter_mut().zip(ker.chunks_exact(cout)) {
                        let mut acc = T::zero();
                        for (&kv, &gv) in kr.iter().zip(g) {
                            acc += kv * gv;
                        }
                        *giv += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: want_input_grad.then(|| Tensor { shape: input.shape.clone(), data: gi }),
        kernels: Tensor { shape: kernels.shape.clone(), data: gk },
        bias: Tensor { shape: vec![cout], data: gb },
    })
}

/// Non-overlapping 2×2 max pooling with stride 2. A trailing odd row or
/// column is dropped. Returns the pooled tensor and, per output cell, the
/// flat input index of the winning element (first maximum in row-major
/// window order).
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (h, w, c) = dims3(input, "maxpool2d")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(shape_err("maxpool2d", format!("input {h}×{w} too small to pool")));
    }
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * y) * w + 2 * x) * c + ch;
                let mut best = input.data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if input.data[idx] > best {
                        best = input.data[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    Ok((Tensor { shape: vec![oh, ow, c], data: out }, argmax))
}

pub fn maxpool2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(shape_err(
            "maxpool2d_backward",
            format!("{} upstream values for {} argmax indices", grad_out.len(), argmax.len()),
        ));
    }
    let mut gi = Tensor::zeros(input_shape);
    for (&g, &idx) in grad_out.data.iter().zip(argmax) {
        gi.data[idx as usize] += g;
    }
    Ok(gi)
}

/// Affine map `input · weights + bias` with `weights` stored as `N×M`.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m) = dense_dims(input, weights, "dense")?;
    if bias.shape != [m] {
        return Err(shape_err("dense", format!("bias {:?} != [{m}]", bias.shape)));
    }
    let mut out = bias.data.clone();
    for (&a, wr) in input.data.iter().zip(weights.data.chunks_exact(m)).take(n) {
        if a == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(wr) {
            *o += a * wv;
        }
    }
    Ok(Tensor { shape: vec![m], data: out })
}

fn dense_dims<T>(input: &Tensor<T>, weights: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *weights.shape.as_slice() {
        [n, m] if n == input.data.len() => Ok((n, m)),
        ref s => Err(shape_err(op, format!("weights {s:?} incompatible with input length {}", input.data.len()))),
    }
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, m) = dense_dims(input, weights, "dense_backward")?;
    if grad_out.data.len() != m {
        return Err(shape_err("dense_backward", format!("upstream length {} != {m}", grad_out.data.len())));
    }
    let g = &grad_out.data;
    let mut gw = vec![T::zero(); n * m];
    let mut gi = Vec::with_capacity(n);
    for ((&a, wr), gwr) in input.data.iter().zip(weights.data.chunks_exact(m)).zip(gw.chunks_exact_mut(m)) {
        let mut acc = T::zero();
        for ((gwv, &wv), &gv) in gwr.iter_mut().zip(wr).zip(g) {
            *gwv = a * gv;
            acc += wv * gv;
        }
        gi.push(acc);
    }
    Ok(DenseGrads {
        input: Tensor { shape: input.shape.clone(), data: gi },
        weights: Tensor { shape: vec![n, m], data: gw },
        bias: grad_out.clone().reshape(vec![m])?,
    })
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    Tensor { shape: input.shape.clone(), data: input.data.iter().map(|&v| v.max(T::zero())).collect() }
}

/// Passes `grad_out` where the pre-activation was strictly positive.
pub fn relu_backward<T: Real>(pre_activation: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if pre_activation.len() != grad_out.len() {
        return Err(shape_err("relu_backward", "pre-activation and gradient lengths differ"));
    }
    let data = pre_activation
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor { shape: grad_out.shape.clone(), data })
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug)]
pub struct SoftmaxCrossEntropy<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub grad_logits: Tensor<T>,
}

/// Index of the single hot entry, rejecting anything that is not a one-hot vector.
pub fn onehot_index<T: Real>(onehot: &[T]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in onehot.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(Error::DegenerateOneHot("more than one entry equals 1".into()));
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::DegenerateOneHot(format!("entry {i} is neither 0 nor 1")));
        }
    }
    hot.ok_or_else(|| Error::DegenerateOneHot("no entry equals 1".into()))
}

pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, onehot: &Tensor<T>) -> Result<SoftmaxCrossEntropy<T>> {
    if logits.len() != onehot.len() {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{} logits vs {} targets", logits.len(), onehot.len()),
        ));
    }
    let target = onehot_index(&onehot.data)?;
    let probs = softmax(&logits.data);
    // log-sum-exp form keeps the loss exact when the true class saturates.
    let max = logits.data.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = max + logits.data.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let loss = lse - logits.data[target];
    let grad = probs.iter().zip(&onehot.data).map(|(&p, &y)| p - y).collect();
    Ok(SoftmaxCrossEntropy {
        loss,
        probs: Tensor { shape: logits.shape.clone(), data: probs },
        grad_logits: Tensor { shape: logits.shape.clone(), data: grad },
    })
}
