//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: T::c(lr),
            beta1: T::c(0.9),
            beta2: T::c(0.999),
            eps: T::c(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every tensor in `params` from its gradient buffer
    /// (tensors without a gradient count as zero gradient).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let Some(g) = p.grad().map(|g| g.to_vec()) else {
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi = self.beta1 * *mi;
                    *vi = self.beta2 * *vi;
                }
                let (b1, b2) = (bc1, bc2);
                for ((w, mi), vi) in p.data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
                    *w -= self.lr * (*mi / b1) / ((*vi / b2).sqrt() + self.eps);
                }
                continue;
            };
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (T::one() - self.beta1) * *gi;
                *vi = self.beta2 * *vi + (T::one() - self.beta2) * *gi * *gi;
                *w -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
