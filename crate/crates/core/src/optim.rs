//! Adam, global-norm clipping and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::{params_mut, GradientSet};
use crate::error::{Error, Result};
use crate::network::PinnNetwork;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Moments sized for the given parameter arrays.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Optimizer over every trainable array of `nets`, in order.
    pub fn for_networks(nets: &[PinnNetwork<T>]) -> Self {
        let sizes: Vec<usize> = nets
            .iter()
            .flat_map(|n| n.layers.iter().flat_map(|l| [l.weight.len(), l.bias.len()]))
            .collect();
        Self::new(&sizes)
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>, lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} arrays, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape("parameter array size changed".into()));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Applies one step to a set of networks with their matching gradients.
    pub fn step_networks(&mut self, nets: &mut [PinnNetwork<T>], grads: &[GradientSet<T>], lr: T) -> Result<()> {
        let params: Vec<&mut [T]> = nets.iter_mut().flat_map(params_mut).collect();
        let g: Vec<&[T]> = grads.iter().flat_map(|g| g.slices()).collect();
        self.step(params, g, lr)
    }
}

/// Scales all gradients by `max_norm / norm` when their joint L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut [GradientSet<T>], max_norm: T) -> T {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<T>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(k));
    }
    norm
}

/// `base * gamma^floor(epoch / step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base: f64,
    pub step: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn constant(base: f64) -> Self {
        Self { base, step: usize::MAX, gamma: 1.0 }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi((epoch / self.step.max(1)) as i32)
    }
}
