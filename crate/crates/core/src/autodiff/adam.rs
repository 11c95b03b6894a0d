//! Adam with an L2 penalty folded into the gradient.
//!
//! ```text
//! g <- g + decay * theta            (weights only)
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
//! ```

use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros =
            |p: &crate::autodiff::params::Param<T>| Matrix::zeros(p.value.rows(), p.value.cols());
        Self {
            config,
            step: 0,
            first: store.iter().map(zeros).collect(),
            second: store.iter().map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &Matrix<T> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Matrix<T> {
        &self.second[index]
    }

    /// Applies one update. Gradients are given in store order. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Matrix<T>]) -> Result<()> {
        if grads.len() != store.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (p, g) in store.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient {:?} for parameter `{}` {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let correction1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let correction2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.epsilon);
        let decay = T::from_f64_lossy(c.weight_decay);

        for (k, (p, g)) in store.iter_mut().zip(grads).enumerate() {
            let apply_decay = p.decay && c.weight_decay != 0.0;
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (((theta, &grad), mk), vk) in p
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let grad = if apply_decay {
                    grad + decay * *theta
                } else {
                    grad
                };
                *mk = b1 * *mk + (one - b1) * grad;
                *vk = b2 * *vk + (one - b2) * grad * grad;
                let m_hat = *mk / correction1;
                let v_hat = *vk / correction2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
