//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use super::tape::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: BTreeMap<String, (Mat, Mat)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, moments: BTreeMap::new() }
    }

    /// One optimizer step over named tensors. Tensors without a gradient
    /// entry are treated as having an exactly-zero gradient.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Mat)>,
        grads: &BTreeMap<String, Mat>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in params {
            let zero;
            let grad = match grads.get(&name) {
                Some(g) => {
                    if g.shape() != param.shape() {
                        return Err(Error::shape(format!(
                            "gradient shape {:?} does not match parameter {name} {:?}",
                            g.shape(),
                            param.shape()
                        )));
                    }
                    g
                }
                None => {
                    zero = Mat::zeros(param.raw_dim());
                    &zero
                }
            };
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (Mat::zeros(param.raw_dim()), Mat::zeros(param.raw_dim())));
            azip(m, v, param, grad, self.beta1, self.beta2, self.lr, self.eps, bc1, bc2);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn azip(
    m: &mut Mat,
    v: &mut Mat,
    param: &mut Mat,
    grad: &Mat,
    beta1: f64,
    beta2: f64,
    lr: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for ((m, v), (p, g)) in m
        .iter_mut()
        .zip(v.iter_mut())
        .zip(param.iter_mut().zip(grad.iter()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
