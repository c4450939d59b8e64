//! Adam with bias correction and the cosine learning-rate schedule.

use std::f64::consts::PI;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], base_lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }
}

/// One Adam update of `params` in place at learning rate `lr`.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::Shape(format!("adam slot {i}: param {:?}, grad {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr0 * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs total_steps > 0".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond schedule of {total_steps}")));
    }
    Ok(lr0 * (1.0 + (PI * step as f64 / total_steps as f64).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut st = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut st, 1e-3).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(0.5)];
        let mut st = AdamState::new(&p, 0.1);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st, 0.1).unwrap();
        // m_hat / sqrt(v_hat) = 1 on the first step
        assert!((p[0].item() - (0.5 - 0.1)).abs() < 1e-8);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let init = vec![Tensor::vector(vec![0.3, 0.1, -0.7])];
        let grads = vec![Tensor::vector(vec![0.2, -1.0, 4.0])];
        let (mut a, mut b) = (init.clone(), init.clone());
        let (mut sa, mut sb) = (AdamState::new(&a, 0.01), AdamState::new(&b, 0.01));
        for _ in 0..5 {
            adam_step(&mut a, &grads, &mut sa, 0.01).unwrap();
            adam_step(&mut b, &grads, &mut sb, 0.01).unwrap();
        }
        assert_eq!(a, b);
        assert!(adam_step(&mut a, &[Tensor::zeros(&[2])], &mut sa, 0.01).is_err());
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3).unwrap(), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3).unwrap() - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(0, 0, 1e-3).is_err());
        assert!(cosine_lr(101, 100, 1e-3).is_err());
    }
}
