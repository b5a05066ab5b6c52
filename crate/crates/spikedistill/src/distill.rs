//! Feature and logit distillation.
//!
//! The feature path: average the student's binary tap over time, align
//! channels with a 1×1 conv when student and teacher widths differ, knock out
//! whole channels per sample with a Bernoulli blur mask, push the result
//! through a small restoration conv block, and penalize the squared distance
//! to the teacher's tap. The logit path is temperature-softened cross-entropy
//! scaled by τ². The two combine into the mixed objective added to the task
//! cross-entropy.

use crate::error::{Error, Result};
use crate::layers::{kaiming_uniform, Parameter, SpikeFeature};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMode {
    None,
    Ld,
    Bkd,
    Md,
}

impl DistillMode {
    pub fn uses_ld(self) -> bool {
        matches!(self, DistillMode::Ld | DistillMode::Md)
    }

    pub fn uses_bkd(self) -> bool {
        matches!(self, DistillMode::Bkd | DistillMode::Md)
    }
}

impl std::str::FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DistillMode::None),
            "ld" => Ok(DistillMode::Ld),
            "bkd" => Ok(DistillMode::Bkd),
            "md" => Ok(DistillMode::Md),
            other => Err(Error::Config(format!("unknown distillation mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DistillMode::None => "none",
            DistillMode::Ld => "ld",
            DistillMode::Bkd => "bkd",
            DistillMode::Md => "md",
        };
        f.write_str(s)
    }
}

/// Loss hyperparameters. `tau_temp` is the logit-softening temperature,
/// unrelated to the membrane constant in `NeuronConfig`.
#[derive(Debug, Clone, Copy)]
pub struct DistillConfig<T> {
    pub tau_temp: T,
    /// Blur ratio λ: expected fraction of masked-out (zeroed) channels.
    pub lambda: f64,
    pub w_ld: T,
    pub w_bkd: T,
    pub mode: DistillMode,
}

impl<T: Scalar> Default for DistillConfig<T> {
    fn default() -> Self {
        DistillConfig {
            tau_temp: T::from_f64(2.0),
            lambda: 0.15,
            w_ld: T::one(),
            w_bkd: T::from_f64(7e-4),
            mode: DistillMode::Md,
        }
    }
}

impl<T: Scalar> DistillConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tau_temp <= T::zero() {
            return Err(Error::Config(format!("temperature ({}) must be positive", self.tau_temp)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("blur ratio ({}) must lie in [0,1]", self.lambda)));
        }
        if self.w_ld < T::zero() || self.w_bkd < T::zero() {
            return Err(Error::Config("distillation weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-sample, per-teacher-channel binary mask, broadcast over space.
#[derive(Debug, Clone)]
pub struct BlurMask<T> {
    pub values: Tensor<T>,
}

/// Draw a (batch × c_tea) mask: entry 0 where the uniform draw falls below λ,
/// 1 otherwise. Sampled fresh every training iteration.
pub fn sample_blur_mask<T: Scalar>(
    batch: usize,
    c_tea: usize,
    lambda: f64,
    stream: &mut Stream,
) -> Result<BlurMask<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("blur ratio ({lambda}) must lie in [0,1]")));
    }
    let data = (0..batch * c_tea)
        .map(|_| if stream.next_f64() < lambda { T::zero() } else { T::one() })
        .collect();
    Ok(BlurMask { values: Tensor::new(vec![batch, c_tea], data)? })
}

impl<T: Scalar> BlurMask<T> {
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.values.data().iter().filter(|&&v| v == T::zero()).count();
        zeros as f64 / self.values.numel() as f64
    }
}

/// Mean over the time axis of the tap record: (T,b,c,h,w) → (b,c,h,w); each
/// step receives 1/T of the gradient.
pub fn time_average<T: Scalar>(tape: &mut Tape<T>, feature: &SpikeFeature) -> Result<Var> {
    tape.mean_axis(feature.stacked, 0)
}

/// Trainable restore-path parameters: optional 1×1 channel adapter followed
/// by the two-conv restoration block (3×3, pad 1, ReLU between). Training-only;
/// inference never touches these.
#[derive(Debug, Clone)]
pub struct DistillBlocks<T> {
    pub params: Vec<Parameter<T>>,
    pub c_stu: usize,
    pub c_tea: usize,
    pub has_adapter: bool,
}

const ADAPT_W: usize = 0;
const ADAPT_B: usize = 1;

impl<T: Scalar> DistillBlocks<T> {
    /// Kaiming-uniform init for both the adapter (when needed) and G.
    pub fn new(c_stu: usize, c_tea: usize, seed: u64) -> Self {
        let mut params = Vec::new();
        let has_adapter = c_stu != c_tea;
        if has_adapter {
            let mut s = Stream::derive(seed, "init-distill", &[0]);
            params.push(Parameter::new(
                "distill/adapt/w",
                kaiming_uniform(&[c_tea, c_stu, 1, 1], c_stu, &mut s),
            ));
            params.push(Parameter::new("distill/adapt/b", Tensor::zeros(&[c_tea])));
        }
        for (i, name) in ["distill/g/conv1", "distill/g/conv2"].iter().enumerate() {
            let mut s = Stream::derive(seed, "init-distill", &[1 + i as u64]);
            params.push(Parameter::new(
                format!("{name}/w"),
                kaiming_uniform(&[c_tea, c_tea, 3, 3], c_tea * 9, &mut s),
            ));
            params.push(Parameter::new(format!("{name}/b"), Tensor::zeros(&[c_tea])));
        }
        DistillBlocks { params, c_stu, c_tea, has_adapter }
    }

    /// Diagnostic identity configuration: both G convs pass channels through
    /// unchanged (valid for non-negative inputs, where the inner ReLU is the
    /// identity). Requires c_stu == c_tea so the adapter branch is absent.
    pub fn identity_init(c: usize) -> Self {
        let mut ident = Tensor::<T>::zeros(&[c, c, 3, 3]);
        for ch in 0..c {
            ident.data_mut()[ch * c * 9 + ch * 9 + 4] = T::one(); // center tap
        }
        let params = vec![
            Parameter::new("distill/g/conv1/w", ident.clone()),
            Parameter::new("distill/g/conv1/b", Tensor::zeros(&[c])),
            Parameter::new("distill/g/conv2/w", ident),
            Parameter::new("distill/g/conv2/b", Tensor::zeros(&[c])),
        ];
        DistillBlocks { params, c_stu: c, c_tea: c, has_adapter: false }
    }

    fn g_base(&self) -> usize {
        if self.has_adapter {
            2
        } else {
            0
        }
    }
}

/// Snapshot restore-path parameters onto the tape.
pub fn bind_blocks<T: Scalar>(
    tape: &mut Tape<T>,
    blocks: &DistillBlocks<T>,
    requires_grad: bool,
) -> Vec<Var> {
    blocks.params.iter().map(|p| tape.leaf(p.value.clone(), requires_grad)).collect()
}

/// Blur-then-restore: F̂ = G(f_adp(F̃)·B) when channels mismatch, else
/// G(F̃·B). The adapter runs before the mask, per the restore equation's
/// parenthesization; the mask broadcasts over space.
pub fn blurred_restore<T: Scalar>(
    tape: &mut Tape<T>,
    f_tilde: Var,
    mask: &BlurMask<T>,
    blocks: &DistillBlocks<T>,
    vars: &[Var],
) -> Result<Var> {
    let in_channels = tape.value(f_tilde).shape()[1];
    if in_channels != blocks.c_stu {
        return Err(Error::dim(format!(
            "restore path built for {} student channels, feature has {in_channels}",
            blocks.c_stu
        )));
    }
    let aligned = if blocks.has_adapter {
        let w = vars[ADAPT_W];
        let b = vars[ADAPT_B];
        let y = tape.conv2d(f_tilde, w, 1, 0)?;
        let b3 = tape.reshape(b, &[blocks.c_tea, 1, 1])?;
        tape.add(y, b3)?
    } else {
        if in_channels != blocks.c_tea {
            return Err(Error::State(format!(
                "channel mismatch {in_channels} vs {} without an adaptive layer",
                blocks.c_tea
            )));
        }
        f_tilde
    };

    let (b, c) = {
        let s = tape.value(aligned).shape();
        (s[0], s[1])
    };
    if mask.values.shape() != [b, c] {
        return Err(Error::dim(format!(
            "mask shape {:?} does not cover feature ({b} x {c})",
            mask.values.shape()
        )));
    }
    let mask_var = tape.constant(mask.values.reshaped(&[b, c, 1, 1])?);
    let masked = tape.mul(aligned, mask_var)?;

    let g = blocks.g_base();
    let (w1, b1, w2, b2) = (vars[g], vars[g + 1], vars[g + 2], vars[g + 3]);
    let y = tape.conv2d(masked, w1, 1, 1)?;
    let b1r = tape.reshape(b1, &[blocks.c_tea, 1, 1])?;
    let y = tape.add(y, b1r)?;
    let y = tape.relu(y);
    let y = tape.conv2d(y, w2, 1, 1)?;
    let b2r = tape.reshape(b2, &[blocks.c_tea, 1, 1])?;
    tape.add(y, b2r)
}

/// Squared-error feature loss: Σ (F̂ − F_tea)² over every element (a raw
/// sum, not a mean — the loss weight absorbs scale, and the value therefore
/// grows with batch size). The teacher side is a constant.
pub fn bkd_loss<T: Scalar>(tape: &mut Tape<T>, f_hat: Var, f_tea: &Tensor<T>) -> Result<Var> {
    if tape.value(f_hat).shape() != f_tea.shape() {
        return Err(Error::dim(format!(
            "feature loss shapes disagree: restored {:?}, teacher {:?}",
            tape.value(f_hat).shape(),
            f_tea.shape()
        )));
    }
    let tea = tape.constant(f_tea.clone());
    let diff = tape.sub(f_hat, tea)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum(sq))
}

/// Softened class distribution q = softmax(y/τ), rows summing to one.
pub fn soften_logits<T: Scalar>(y: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    if tau <= T::zero() {
        return Err(Error::Config(format!("temperature ({tau}) must be positive")));
    }
    let scaled = y.map(|v| v / tau);
    crate::kernels::softmax_last(&scaled)
}

/// Logit distillation: τ² · H(q_tea, q_stu), batch-mean. Takes raw student
/// logits and computes the softened log-probabilities by log-sum-exp, so no
/// log(0) can ever materialize; the teacher distribution carries no gradient.
pub fn ld_loss<T: Scalar>(
    tape: &mut Tape<T>,
    y_stu: Var,
    y_tea: &Tensor<T>,
    tau: T,
) -> Result<Var> {
    let q_tea = soften_logits(y_tea, tau)?;
    let scaled = tape.mul_scalar(y_stu, T::one() / tau);
    let h = tape.soft_cross_entropy(scaled, &q_tea)?;
    Ok(tape.mul_scalar(h, tau * tau))
}

/// L_MD = w_ld·L_LD + w_bkd·L_BKD.
pub fn mixed_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l_ld: Var,
    l_bkd: Var,
    w_ld: T,
    w_bkd: T,
) -> Result<Var> {
    let a = tape.mul_scalar(l_ld, w_ld);
    let b = tape.mul_scalar(l_bkd, w_bkd);
    tape.add(a, b)
}

/// Total objective for the configured mode. Zero-weighted branches must be
/// passed as `None` by the caller (they are skipped entirely, which keeps a
/// fully-zero-weighted mixed mode structurally identical to plain training).
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l_task: Var,
    l_ld: Option<Var>,
    l_bkd: Option<Var>,
    cfg: &DistillConfig<T>,
) -> Result<Var> {
    cfg.validate()?;
    let mut total = l_task;
    if cfg.mode.uses_ld() {
        if let Some(ld) = l_ld {
            let w = tape.mul_scalar(ld, cfg.w_ld);
            total = tape.add(total, w)?;
        }
    }
    if cfg.mode.uses_bkd() {
        if let Some(bkd) = l_bkd {
            let w = tape.mul_scalar(bkd, cfg.w_bkd);
            total = tape.add(total, w)?;
        }
    }
    Ok(total)
}
