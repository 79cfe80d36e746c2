use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adamax,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adamax" => Ok(Self::Adamax),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}` (adamax|adam)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adamax => "adamax",
            Self::Adam => "adam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adamax, learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

/// Moment estimates for every trainable tensor. For Adamax the second
/// moment is the exponentially weighted infinity norm `u`; for Adam it is `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    config: OptimizerConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<'a>(config: OptimizerConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        let second = m.clone();
        Self { config, t: 0, m, second }
    }

    pub fn for_model(config: OptimizerConfig, model: &ModelParams<T>) -> Self {
        Self::new(config, model.tensors().map(Tensor::shape))
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One update of every parameter tensor from its gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(
                "optimizer step",
                format!("state has {} tensors, got {} params and {} grads", self.m.len(), params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(shape_err(
                    "optimizer step",
                    format!("tensor {i}: state {:?}, param {:?}, grad {:?}", self.m[i].shape(), p.shape(), g.shape()),
                ));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.epsilon));
        let one = T::one();
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        match c.kind {
            OptimizerKind::Adamax => {
                let step = T::lit(c.learning_rate / bc1);
                for ((p, g), (m, u)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.second)) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(u.data_mut()));
                    for ((w, &g), (m, u)) in it {
                        *m = b1 * *m + (one - b1) * g;
                        *u = (b2 * *u).max(g.abs());
                        *w -= step * *m / (*u + eps);
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc2 = 1.0 - c.beta2.powi(self.t as i32);
                let (lr, bc1, bc2) = (T::lit(c.learning_rate), T::lit(bc1), T::lit(bc2));
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.second)) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
                    for ((w, &g), (m, v)) in it {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut ModelParams<T>, grads: &Gradients<T>) -> Result<()> {
        let grads: Vec<&Tensor<T>> = grads.tensors().collect();
        let mut params: Vec<&mut Tensor<T>> = model.tensors_mut().collect();
        self.step(&mut params, &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    fn run(kind: OptimizerKind, w0: &[f64], g: &[f64]) -> (Vec<f64>, OptimizerState<f64>) {
        let cfg = OptimizerConfig { kind, ..Default::default() };
        let mut w = Tensor::new(vec![w0.len()], w0.to_vec()).unwrap();
        let gt = Tensor::new(vec![g.len()], g.to_vec()).unwrap();
        let mut st = OptimizerState::new(cfg, [w.shape()]);
        st.step(&mut [&mut w], &[&gt]).unwrap();
        (w.into_data(), st)
    }

    #[test]
    fn adamax_first_step_by_hand() {
        let (w, st) = run(OptimizerKind::Adamax, &[1.0], &[2.0]);
        assert!((st.first_moments()[0].data()[0] - 0.2).abs() < 1e-12);
        assert_eq!(st.second_moments()[0].data()[0], 2.0);
        assert!((w[0] - 0.999).abs() < 1e-9, "{}", w[0]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Adamax, OptimizerKind::Adam] {
            let (w, _) = run(kind, &[0.3, -1.0], &[0.0, 0.0]);
            assert_eq!(w, vec![0.3, -1.0]);
        }
    }

    #[test]
    fn adamax_first_step_is_scale_free() {
        let (a, _) = run(OptimizerKind::Adamax, &[0.5, 0.5], &[0.7, -3.0]);
        // Identical up to the ε in the denominator.
        for c in [0.1, 1.0, 250.0] {
            let (b, _) = run(OptimizerKind::Adamax, &[0.5, 0.5], &[0.7 * c, -3.0 * c]);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let g = [1.0, -2.0, 0.5, 30.0];
        let (w, _) = run(OptimizerKind::Adam, &[0.0; 4], &g);
        for (wi, gi) in w.iter().zip(g) {
            assert!((wi + 0.001 * gi.signum()).abs() < 1e-6, "{wi}");
        }
    }

    #[test]
    fn equal_histories_give_equal_updates() {
        let cfg = OptimizerConfig { kind: OptimizerKind::Adam, ..Default::default() };
        let mut w = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let mut st = OptimizerState::new(cfg, [w.shape()]);
        for g in [0.3, -0.1, 0.7] {
            st.step(&mut [&mut w], &[&Tensor::new(vec![2], vec![g, g]).unwrap()]).unwrap();
        }
        assert_eq!(w.data()[0], w.data()[1]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = OptimizerState::<f64>::new(OptimizerConfig::default(), [&[2][..]]);
        let mut w = scalar(1.0);
        assert!(matches!(st.step(&mut [&mut w], &[&scalar(1.0)]), Err(Error::Shape { .. })));
        assert_eq!(st.steps(), 0);
    }
}
