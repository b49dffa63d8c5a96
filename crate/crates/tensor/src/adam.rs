use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::{ParamKind, ParamStore};
use crate::real::Real;

/// Hyper-parameters of the Adam update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for every trainable parameter of a store.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub step: u64,
    pub config: AdamConfig,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let moments = || {
            store
                .iter()
                .map(|(_, _, kind, t)| (kind == ParamKind::Trainable).then(|| vec![T::zero(); t.len()]))
                .collect()
        };
        Self {
            step: 0,
            config,
            m: moments(),
            v: moments(),
        }
    }

    pub fn first_moment(&self, index: usize) -> Option<&[T]> {
        self.m.get(index).and_then(|m| m.as_deref())
    }

    pub fn second_moment(&self, index: usize) -> Option<&[T]> {
        self.v.get(index).and_then(|v| v.as_deref())
    }
}

/// One bias-corrected Adam update using the grad slots of `store`.
///
/// Fails without touching anything if a trainable parameter has no gradient.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    let ids: Vec<_> = store.trainable_ids().collect();
    for &id in &ids {
        let t = store.get(id);
        match &t.grad {
            None => {
                return Err(TensorError::MissingGrad {
                    name: store.name(id).to_string(),
                })
            }
            Some(g) if g.len() != t.len() => {
                return Err(TensorError::DataLength {
                    shape: t.shape().to_vec(),
                    len: g.len(),
                })
            }
            Some(_) => {}
        }
        if state.m.get(id.index()).and_then(|m| m.as_ref()).map(Vec::len) != Some(t.len()) {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                msg: format!("optimizer state does not match parameter `{}`", store.name(id)),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
    let (bc1, bc2) = (T::of(bc1), T::of(bc2));
    for id in ids {
        let tensor = store.get_mut(id);
        let grad = tensor.grad.take().expect("checked above");
        let m = state.m[id.index()].as_mut().expect("checked above");
        let v = state.v[id.index()].as_mut().expect("checked above");
        for (((w, &g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g + wd * *w;
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        tensor.grad = Some(grad);
    }
    Ok(())
}
