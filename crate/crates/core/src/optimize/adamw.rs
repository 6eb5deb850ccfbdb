use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &[&[T]]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

/// One AdamW update. Weight decay is decoupled: `p ← p − lr·wd·p` happens
/// before, and independently of, the bias-corrected moment step.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Domain(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(Error::Domain(format!("shape mismatch in parameter tensor {k}")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter tensor {k}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64c(cfg.beta1);
    let b2 = T::from_f64c(cfg.beta2);
    let bc1 = T::one() - b1.powi(t);
    let bc2_sqrt = (T::one() - b2.powi(t)).sqrt();
    let lr_t = T::from_f64c(lr);
    let decay = T::one() - lr_t * T::from_f64c(cfg.weight_decay);
    let eps = T::from_f64c(cfg.eps);
    let step_size = lr_t / bc1;

    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..p.len() {
            let gi = g[i];
            p[i] *= decay;
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let denom = v[i].sqrt() / bc2_sqrt + eps;
            p[i] -= step_size * m[i] / denom;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(p0: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut p = [p0];
        let cfg = AdamWConfig {
            weight_decay: wd,
            ..Default::default()
        };
        let mut st = OptimizerState::<f64>::new(&[1]);
        adamw_step(&mut [&mut p[..]], &[&[g][..]], &mut st, lr, &cfg).unwrap();
        p[0]
    }

    #[test]
    fn first_step_closed_form() {
        for &g in &[0.3, -2.0, 1e-3] {
            let lr = 1e-3;
            let upd = one_step(1.0, g, lr, 0.0) - 1.0;
            let expect = -lr * g / (g.abs() + 1e-8);
            assert!((upd - expect).abs() < 1e-15, "{upd} vs {expect}");
            assert!((upd + lr * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_grad_decays() {
        let (lr, wd) = (0.01, 0.1);
        let p = one_step(2.0, 0.0, lr, wd);
        assert!((p - 2.0 * (1.0 - lr * wd)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grad_leaves_params_untouched() {
        let mut p = [1.0f32, 2.0];
        let mut st = OptimizerState::<f32>::new(&[2]);
        let err = adamw_step(&mut [&mut p[..]], &[&[0.1, f32::NAN][..]], &mut st, 0.1, &AdamWConfig::default());
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(st.step, 0);
    }

    /// Independent transcription of the AdamW recurrences.
    fn hand_adamw(x0: f64, steps: usize, lr: f64, wd: f64, grad: impl Fn(f64) -> f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = vec![];
        for t in 1..=steps {
            let g = grad(x);
            x -= lr * wd * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            x -= lr * mhat / (vhat.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn quadratic_trajectory_matches_hand_oracle() {
        // f(x) = 1.5 (x - 2)^2
        let grad = |x: f64| 3.0 * (x - 2.0);
        let (lr, wd) = (0.05, 0.02);
        let expect = hand_adamw(-1.0, 10, lr, wd, grad);
        let cfg = AdamWConfig {
            weight_decay: wd,
            ..Default::default()
        };
        let mut st = OptimizerState::<f64>::new(&[1]);
        let mut x = [-1.0f64];
        for e in expect {
            let g = [grad(x[0])];
            adamw_step(&mut [&mut x[..]], &[&g[..]], &mut st, lr, &cfg).unwrap();
            assert!((x[0] - e).abs() < 1e-8, "{} vs {e}", x[0]);
        }
    }
}
