//! Integrate-and-fire dynamics with surrogate-gradient spikes, unrolled over
//! discrete time-steps on the shared tape (so backward is BPTT).
//!
//! One step computes, for membrane V and input current I:
//!
//! ```text
//! H  = V + (1/τ)·(I − (V − V_reset))      (or H = V + I with pure_if)
//! S  = Θ(H − V_th)                         Θ = step, surrogate of Eq-style σ(α·)
//! V' = H·(1−S) + V_reset·S                 hard reset
//! ```
//!
//! With `detach_reset` (the default) the reset factor is cut out of the
//! gradient graph, so the only path through S is the surrogate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{SurrogateMode, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct NeuronConfig<T> {
    /// Firing threshold.
    pub v_th: T,
    /// Post-spike membrane value.
    pub v_reset: T,
    /// Membrane time constant τ. The leak form divides the drive by τ; the
    /// source material never fixes a value, so 2.0 is this crate's default.
    pub tau_mem: T,
    /// Surrogate smoothing factor α.
    pub alpha: T,
    /// Drop the leak term: H = V + I.
    pub pure_if: bool,
    /// Block gradient flow through the reset path.
    pub detach_reset: bool,
}

impl<T: Scalar> Default for NeuronConfig<T> {
    fn default() -> Self {
        NeuronConfig {
            v_th: T::one(),
            v_reset: T::zero(),
            tau_mem: T::from_f64(2.0),
            alpha: T::from_f64(4.0),
            pure_if: false,
            detach_reset: true,
        }
    }
}

impl<T: Scalar> NeuronConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.v_th <= self.v_reset {
            return Err(Error::Config(format!(
                "v_th ({}) must exceed v_reset ({})",
                self.v_th, self.v_reset
            )));
        }
        if self.tau_mem < T::one() {
            return Err(Error::Config(format!("tau_mem ({}) must be >= 1", self.tau_mem)));
        }
        if self.alpha <= T::zero() {
            return Err(Error::Config(format!("alpha ({}) must be positive", self.alpha)));
        }
        Ok(())
    }
}

/// Membrane potentials of one neuron layer, threaded through the unroll.
#[derive(Debug, Clone, Copy)]
pub struct NeuronState {
    pub v: Var,
    pub t: usize,
}

/// Fresh state at V_reset, for the start of every batch.
pub fn init_state<T: Scalar>(tape: &mut Tape<T>, shape: &[usize], cfg: &NeuronConfig<T>) -> NeuronState {
    let v = tape.constant(Tensor::full(shape, cfg.v_reset));
    NeuronState { v, t: 0 }
}

/// Spike nonlinearity at `u = H − V_th`: step forward (or σ(αu) in soft
/// mode), surrogate α·σ(αu)·(1−σ(αu)) backward.
pub fn heaviside_surrogate<T: Scalar>(
    tape: &mut Tape<T>,
    u: Var,
    alpha: T,
    mode: SurrogateMode,
) -> Var {
    tape.spike(u, alpha, mode)
}

pub struct StepOutput {
    pub spikes: Var,
    pub state: NeuronState,
    /// Pre-reset membrane H, exposed for diagnostics and state-machine tests.
    pub membrane: Var,
}

/// One integrate-and-fire step.
pub fn if_step<T: Scalar>(
    tape: &mut Tape<T>,
    i_t: Var,
    state: NeuronState,
    cfg: &NeuronConfig<T>,
    mode: SurrogateMode,
) -> Result<StepOutput> {
    if tape.value(i_t).shape() != tape.value(state.v).shape() {
        return Err(Error::dim(format!(
            "input current shape {:?} does not match membrane shape {:?}",
            tape.value(i_t).shape(),
            tape.value(state.v).shape()
        )));
    }
    let h = if cfg.pure_if {
        tape.add(state.v, i_t)?
    } else {
        let offset = tape.add_scalar(state.v, -cfg.v_reset);
        let drive = tape.sub(i_t, offset)?;
        let leak = tape.mul_scalar(drive, T::one() / cfg.tau_mem);
        tape.add(state.v, leak)?
    };
    let u = tape.add_scalar(h, -cfg.v_th);
    let spikes = heaviside_surrogate(tape, u, cfg.alpha, mode);
    let s_reset = if cfg.detach_reset { tape.detach(spikes) } else { spikes };
    let neg = tape.mul_scalar(s_reset, -T::one());
    let keep = tape.add_scalar(neg, T::one());
    let held = tape.mul(h, keep)?;
    let reset_part = tape.mul_scalar(s_reset, cfg.v_reset);
    let v_next = tape.add(held, reset_part)?;
    Ok(StepOutput { spikes, state: NeuronState { v: v_next, t: state.t + 1 }, membrane: h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn step_once(
        v0: f64,
        i: f64,
        cfg: &NeuronConfig<f64>,
    ) -> (f64, f64, f64) {
        let mut tape = Tape::<f64>::new();
        let state = NeuronState { v: tape.constant(Tensor::scalar(v0)), t: 0 };
        let input = tape.constant(Tensor::scalar(i));
        let out = if_step(&mut tape, input, state, cfg, SurrogateMode::Hard).unwrap();
        (
            tape.value(out.membrane).item().unwrap(),
            tape.value(out.spikes).item().unwrap(),
            tape.value(out.state.v).item().unwrap(),
        )
    }

    #[test]
    fn hand_stepped_dynamics() {
        // τ=1: H = 0 + (1.5 − 0)/1 = 1.5 ≥ 1 → spike, reset to 0
        let cfg = NeuronConfig { tau_mem: 1.0, ..NeuronConfig::default() };
        assert_eq!(step_once(0.0, 1.5, &cfg), (1.5, 1.0, 0.0));

        // τ=2: H = 0.6/2 = 0.3 < 1 → no spike, membrane holds H
        let cfg = NeuronConfig::<f64>::default();
        assert_eq!(step_once(0.0, 0.6, &cfg), (0.3, 0.0, 0.3));
    }

    #[test]
    fn quiescent_at_reset_potential() {
        let cfg = NeuronConfig::<f64>::default();
        let (h, s, v) = step_once(cfg.v_reset, 0.0, &cfg);
        assert_eq!(h, cfg.v_reset);
        assert_eq!(s, 0.0);
        assert_eq!(v, cfg.v_reset);
    }

    #[test]
    fn config_validation() {
        let mut cfg = NeuronConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.v_th = -1.0;
        assert!(cfg.validate().is_err());
        let cfg2 = NeuronConfig::<f64> { tau_mem: 0.5, ..NeuronConfig::default() };
        assert!(cfg2.validate().is_err());
        let cfg3 = NeuronConfig::<f64> { alpha: 0.0, ..NeuronConfig::default() };
        assert!(cfg3.validate().is_err());
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut tape = Tape::<f64>::new();
        let cfg = NeuronConfig::<f64>::default();
        let state = init_state(&mut tape, &[2, 3], &cfg);
        let bad = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(if_step(&mut tape, bad, state, &cfg, SurrogateMode::Hard).is_err());
    }

    #[test]
    fn pure_if_integrates_subthreshold_input_linearly() {
        let cfg = NeuronConfig::<f64> { pure_if: true, ..NeuronConfig::default() };
        let mut tape = Tape::<f64>::new();
        let mut state = init_state(&mut tape, &[1], &cfg);
        let i = tape.constant(Tensor::new(vec![1], vec![0.3]).unwrap());
        for t in 1..=3 {
            let out = if_step(&mut tape, i, state, &cfg, SurrogateMode::Hard).unwrap();
            state = out.state;
            let v = tape.value(state.v).data()[0];
            assert!((v - 0.3 * t as f64).abs() < 1e-15, "membrane after {t} steps = {v}");
            assert_eq!(tape.value(out.spikes).data()[0], 0.0);
        }
        // fourth step crosses threshold: 4·0.3 = 1.2 ≥ 1
        let out = if_step(&mut tape, i, state, &cfg, SurrogateMode::Hard).unwrap();
        assert_eq!(tape.value(out.spikes).data()[0], 1.0);
        assert_eq!(tape.value(out.state.v).data()[0], 0.0);
    }

    #[test]
    fn spikes_are_binary_and_reset_is_hard() {
        let mut stream = Stream::derive(11, "neuron-prop", &[]);
        let cfg = NeuronConfig::<f64>::default();
        let mut tape = Tape::<f64>::new();
        let n = 512;
        let v0: Vec<f64> = (0..n).map(|_| stream.uniform(-2.0, 2.0)).collect();
        let i: Vec<f64> = (0..n).map(|_| stream.uniform(-3.0, 3.0)).collect();
        let state = NeuronState { v: tape.constant(Tensor::new(vec![n], v0).unwrap()), t: 0 };
        let input = tape.constant(Tensor::new(vec![n], i).unwrap());
        let out = if_step(&mut tape, input, state, &cfg, SurrogateMode::Hard).unwrap();
        let h = tape.value(out.membrane).data().to_vec();
        let s = tape.value(out.spikes).data().to_vec();
        let v1 = tape.value(out.state.v).data().to_vec();
        for j in 0..n {
            assert!(s[j] == 0.0 || s[j] == 1.0);
            assert_eq!(s[j] == 1.0, h[j] >= cfg.v_th, "spike iff threshold at {j}");
            if s[j] == 1.0 {
                assert_eq!(v1[j], cfg.v_reset);
            } else {
                assert_eq!(v1[j], h[j]);
            }
        }
    }

    #[test]
    fn surrogate_saturates_for_large_inputs() {
        let mut tape = Tape::<f64>::new();
        let u = tape.leaf(Tensor::new(vec![2], vec![-50.0, 50.0]).unwrap(), true);
        let s = heaviside_surrogate(&mut tape, u, 4.0, SurrogateMode::Hard);
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap().wrt(u);
        assert!(g.data()[0].abs() < 1e-30);
        assert!(g.data()[1].abs() < 1e-30);
    }

    #[test]
    fn detach_reset_controls_gradient_through_reset_path() {
        // With detach off and soft mode, grad d(V')/dV differs from the
        // detached variant whenever the surrogate slope is nonzero.
        let grad_for = |detach: bool| {
            let cfg = NeuronConfig::<f64> { detach_reset: detach, ..NeuronConfig::default() };
            let mut tape = Tape::<f64>::new();
            let v = tape.leaf(Tensor::scalar(0.4), true);
            let state = NeuronState { v, t: 0 };
            let i = tape.constant(Tensor::scalar(1.0));
            let out = if_step(&mut tape, i, state, &cfg, SurrogateMode::Soft).unwrap();
            let loss = tape.sum(out.state.v);
            tape.backward(loss).unwrap().wrt(v).item().unwrap()
        };
        let with_detach = grad_for(true);
        let without = grad_for(false);
        assert!((with_detach - without).abs() > 1e-6, "{with_detach} vs {without}");
    }
}
