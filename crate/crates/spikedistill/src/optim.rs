//! Parameter updates: classical SGD with momentum, and Adam.
//!
//! SGD update (classical momentum, weight decay folded into the gradient):
//!   v ← momentum·v + g + wd·p
//!   p ← p − lr·v

use crate::error::{Error, Result};
use crate::layers::Parameter;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    SgdMomentum,
    Adam,
}

impl std::str::FromStr for OptimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" => Ok(OptimKind::SgdMomentum),
            "adam" => Ok(OptimKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::Config(format!("unknown lr schedule '{other}'"))),
        }
    }
}

/// Per-epoch learning rate.
pub fn scheduled_lr(base: f64, schedule: LrSchedule, epoch: usize, total_epochs: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => base,
        LrSchedule::Cosine => {
            let t = epoch as f64 / total_epochs.max(1) as f64;
            base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimKind,
    pub momentum: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    /// Velocity (SGD) or first-moment (Adam) buffers, one per parameter.
    pub m: Vec<Tensor<T>>,
    /// Second-moment buffers (Adam only; empty for SGD).
    pub v: Vec<Tensor<T>>,
    pub step_count: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd_momentum(momentum: T, weight_decay: T, params: &[Parameter<T>]) -> Self {
        Optimizer {
            kind: OptimKind::SgdMomentum,
            momentum,
            beta1: T::zero(),
            beta2: T::zero(),
            eps: T::zero(),
            weight_decay,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: Vec::new(),
            step_count: 0,
        }
    }

    pub fn adam(beta1: T, beta2: T, weight_decay: T, params: &[Parameter<T>]) -> Self {
        Optimizer {
            kind: OptimKind::Adam,
            momentum: T::zero(),
            beta1,
            beta2,
            eps: T::from_f64(1e-8),
            weight_decay,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step_count: 0,
        }
    }

    /// Apply one update from the gradients stored on `params`. Non-finite
    /// gradients abort with the parameter name. `clip_norm` > 0 rescales the
    /// group's gradients when their global norm exceeds it.
    pub fn step(&mut self, params: &mut [Parameter<T>], lr: T, clip_norm: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        if clip_norm > 0.0 {
            let total: f64 = params
                .iter()
                .flat_map(|p| p.grad.iter().flat_map(|g| g.data()))
                .map(|&v| {
                    let f = v.to_f64_lossless();
                    f * f
                })
                .sum();
            let norm = total.sqrt();
            if norm > clip_norm {
                let scale = T::from_f64(clip_norm / norm);
                for p in params.iter_mut() {
                    if let Some(g) = &mut p.grad {
                        for v in g.data_mut() {
                            *v = *v * scale;
                        }
                    }
                }
            }
        }
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.as_ref().ok_or_else(|| {
                Error::State(format!("parameter {} has no gradient at step {}", p.name, self.step_count))
            })?;
            if !grad.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {} at step {}",
                    p.name, self.step_count
                )));
            }
            match self.kind {
                OptimKind::SgdMomentum => {
                    let vel = self.m[i].data_mut();
                    let pv = p.value.data_mut();
                    for ((v, &g), w) in vel.iter_mut().zip(grad.data()).zip(pv.iter_mut()) {
                        *v = self.momentum * *v + g + self.weight_decay * *w;
                        *w = *w - lr * *v;
                    }
                }
                OptimKind::Adam => {
                    let t = T::from_f64(self.step_count as f64);
                    let bc1 = T::one() - self.beta1.powf(t);
                    let bc2 = T::one() - self.beta2.powf(t);
                    let m = self.m[i].data_mut();
                    let vdata = self.v[i].data_mut();
                    let pv = p.value.data_mut();
                    for (((mi, vi), &graw), w) in
                        m.iter_mut().zip(vdata.iter_mut()).zip(grad.data()).zip(pv.iter_mut())
                    {
                        let g = graw + self.weight_decay * *w;
                        *mi = self.beta1 * *mi + (T::one() - self.beta1) * g;
                        *vi = self.beta2 * *vi + (T::one() - self.beta2) * g * g;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w = *w - lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Buffers as named tensors for checkpointing, in parameter order.
    pub fn state_tensors(&self, params: &[Parameter<T>]) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, p) in params.iter().enumerate() {
            out.push((format!("optim/m/{}", p.name), self.m[i].clone()));
        }
        if self.kind == OptimKind::Adam {
            for (i, p) in params.iter().enumerate() {
                out.push((format!("optim/v/{}", p.name), self.v[i].clone()));
            }
        }
        out
    }

    /// Restore buffers saved by [`Optimizer::state_tensors`].
    pub fn load_state(&mut self, params: &[Parameter<T>], tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let lookup = |name: &str| -> Result<Tensor<T>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::State(format!("checkpoint lacks optimizer state {name}")))
        };
        for (i, p) in params.iter().enumerate() {
            let m = lookup(&format!("optim/m/{}", p.name))?;
            if m.shape() != p.value.shape() {
                return Err(Error::State(format!("optimizer state shape mismatch for {}", p.name)));
            }
            self.m[i] = m;
        }
        if self.kind == OptimKind::Adam {
            for (i, p) in params.iter().enumerate() {
                self.v[i] = lookup(&format!("optim/v/{}", p.name))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(vals: &[f64]) -> Parameter<f64> {
        Parameter::new("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap())
    }

    fn with_grad(mut p: Parameter<f64>, g: &[f64]) -> Parameter<f64> {
        p.grad = Some(Tensor::new(vec![g.len()], g.to_vec()).unwrap());
        p
    }

    #[test]
    fn vanilla_sgd_when_momentum_and_wd_are_zero() {
        let mut params = vec![with_grad(param(&[1.0, 2.0]), &[0.5, -0.5])];
        let mut opt = Optimizer::sgd_momentum(0.0, 0.0, &params);
        opt.step(&mut params, 0.1, 0.0).unwrap();
        assert_eq!(params[0].value.data(), &[0.95, 2.05]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![with_grad(param(&[3.0]), &[0.0])];
        let mut opt = Optimizer::sgd_momentum(0.9, 0.0, &params);
        opt.step(&mut params, 0.1, 0.0).unwrap();
        assert_eq!(params[0].value.data(), &[3.0]);
    }

    #[test]
    fn momentum_accumulates_over_two_steps() {
        // constant g, momentum 0.9, lr 0.1: updates −lr·g then −lr·1.9g,
        // cumulative −0.29·g
        let g = 2.0;
        let mut params = vec![with_grad(param(&[1.0]), &[g])];
        let mut opt = Optimizer::sgd_momentum(0.9, 0.0, &params);
        opt.step(&mut params, 0.1, 0.0).unwrap();
        params[0].grad = Some(Tensor::new(vec![1], vec![g]).unwrap());
        opt.step(&mut params, 0.1, 0.0).unwrap();
        let expect = 1.0 - 0.29 * g;
        assert!((params[0].value.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = vec![with_grad(param(&[1.0]), &[f64::NAN])];
        let mut opt = Optimizer::sgd_momentum(0.9, 0.0, &params);
        let err = opt.step(&mut params, 0.1, 0.0).unwrap_err().to_string();
        assert!(err.contains('w') && err.contains("step 1"), "{err}");
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut params = vec![with_grad(param(&[1.0, 1.0]), &[0.3, -0.3])];
        let mut opt = Optimizer::adam(0.9, 0.999, 0.0, &params);
        opt.step(&mut params, 0.01, 0.0).unwrap();
        assert!(params[0].value.data()[0] < 1.0);
        assert!(params[0].value.data()[1] > 1.0);
    }

    #[test]
    fn state_roundtrip_preserves_velocity() {
        let mut params = vec![with_grad(param(&[1.0]), &[1.0])];
        let mut opt = Optimizer::sgd_momentum(0.9, 0.0, &params);
        opt.step(&mut params, 0.1, 0.0).unwrap();
        let state = opt.state_tensors(&params);
        let mut opt2 = Optimizer::sgd_momentum(0.9, 0.0, &params);
        opt2.load_state(&params, &state).unwrap();
        assert_eq!(opt.m[0].data(), opt2.m[0].data());
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        assert_eq!(scheduled_lr(0.1, LrSchedule::Constant, 5, 10), 0.1);
        assert_eq!(scheduled_lr(0.1, LrSchedule::Cosine, 0, 10), 0.1);
        let end = scheduled_lr(0.1, LrSchedule::Cosine, 10, 10);
        assert!(end.abs() < 1e-12);
        let mid = scheduled_lr(0.1, LrSchedule::Cosine, 5, 10);
        assert!((mid - 0.05).abs() < 1e-12);
    }
}
