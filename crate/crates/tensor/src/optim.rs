use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment accumulators, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<E: Element = f32> {
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    pub step: u64,
}

impl<E: Element> OptimizerState<E> {
    pub fn new(params: &[Tensor<E>]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
pub fn adamw_step<E: Element>(
    params: &mut [Tensor<E>],
    grads: &[Tensor<E>],
    state: &mut OptimizerState<E>,
    hp: &AdamW,
) -> Result<()> {
    if !(hp.lr > 0.0) {
        return Err(TensorError::InvalidArgument(format!("learning rate {} must be positive", hp.lr)));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::shape(
            "adamw_step",
            &[params.len(), state.m.len()],
            &[grads.len()],
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TensorError::shape("adamw_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut());
        for (((pv, &gv), mv), vv) in iter {
            let gf = gv.as_f64();
            let mn = hp.beta1 * mv.as_f64() + (1.0 - hp.beta1) * gf;
            let vn = hp.beta2 * vv.as_f64() + (1.0 - hp.beta2) * gf * gf;
            *mv = E::from_f64_lossy(mn);
            *vv = E::from_f64_lossy(vn);
            let update = (mn / bc1) / ((vn / bc2).sqrt() + hp.eps) + hp.weight_decay * pv.as_f64();
            *pv = E::from_f64_lossy(pv.as_f64() - hp.lr * update);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<E: Element>(grads: &mut [Tensor<E>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = E::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
