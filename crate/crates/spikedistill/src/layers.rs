//! Composable layers and the two desk-scale models: a continuous teacher
//! CNN and a spiking student whose feature tap sits immediately before the
//! final classifier.
//!
//! Teacher:  conv3x3 → relu → avgpool2 → conv3x3 → relu → avgpool2 → flatten → linear
//! Student:  conv3x3 → avgpool2 → IF → conv3x3 → avgpool2 → IF → flatten → linear
//!
//! Placing each pool before its IF layer keeps the student tap (the second
//! IF output) binary at the teacher tap's spatial size. The student sees the
//! analog image as input current at every one of the T steps (direct coding)
//! and decodes logits as the mean of the per-step classifier outputs.

use crate::error::{Error, Result};
use crate::kernels;
use crate::neuron::{self, NeuronConfig, NeuronState};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{SurrogateMode, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, pad: usize },
    Linear { out_features: usize },
    Relu,
    IfNeuron,
    AvgPool { k: usize },
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    TeacherAnn,
    StudentSnn,
}

/// Named weight tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter { name: name.into(), value, grad: None }
    }
}

/// Kaiming-uniform init: U(−√(6/fan_in), √(6/fan_in)).
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, stream: &mut Stream) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, stream)
}

#[derive(Debug, Clone)]
pub struct ModelBundle<T> {
    pub role: Role,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Parameter<T>>,
    /// Per layer: indices of (weight, bias) in `params` for parametric layers.
    param_map: Vec<Option<(usize, usize)>>,
    pub input_shape: [usize; 3],
    pub n_cls: usize,
    /// Index of the layer whose output is the distillation tap.
    pub tap_layer: usize,
    pub tap_channels: usize,
    pub tap_hw: (usize, usize),
    /// Set once weights come from training or a checkpoint; guards inference.
    pub trained: bool,
}

/// Architecture block of the run config.
#[derive(Debug, Clone)]
pub struct ArchConfig {
    /// Input (channels, height, width).
    pub input: [usize; 3],
    pub n_cls: usize,
    /// (first conv, tap) channel counts for the teacher.
    pub teacher_channels: (usize, usize),
    /// (first conv, tap) channel counts for the student; tap count may differ
    /// from the teacher's, which routes the restore path through the adapter.
    pub student_channels: (usize, usize),
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input: [1, 28, 28],
            n_cls: 10,
            teacher_channels: (16, 32),
            student_channels: (16, 16),
        }
    }
}

impl ArchConfig {
    fn validate(&self) -> Result<()> {
        if self.n_cls < 2 {
            return Err(Error::Config(format!("classification needs >= 2 classes, got {}", self.n_cls)));
        }
        let [_, h, w] = self.input;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} not divisible by the 4x spatial reduction of two avgpool2 stages"
            )));
        }
        Ok(())
    }
}

fn build_model<T: Scalar>(arch: &ArchConfig, role: Role, seed: u64) -> Result<ModelBundle<T>> {
    arch.validate()?;
    let [c_in, h, w] = arch.input;
    let (c1, c_tap) = match role {
        Role::TeacherAnn => arch.teacher_channels,
        Role::StudentSnn => arch.student_channels,
    };
    let (layers, tap_layer, prefix) = match role {
        Role::TeacherAnn => (
            vec![
                LayerSpec::Conv { out_channels: c1, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::Conv { out_channels: c_tap, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: arch.n_cls },
            ],
            5,
            "teacher",
        ),
        Role::StudentSnn => (
            vec![
                LayerSpec::Conv { out_channels: c1, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::IfNeuron,
                LayerSpec::Conv { out_channels: c_tap, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::IfNeuron,
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: arch.n_cls },
            ],
            5,
            "student",
        ),
    };

    // shape-walk the stack, creating parameters as we go
    let mut params = Vec::new();
    let mut param_map = Vec::with_capacity(layers.len());
    let mut shape = vec![c_in, h, w];
    for (li, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                if shape.len() != 3 {
                    return Err(Error::Config(format!("conv at layer {li} needs a (c,h,w) input")));
                }
                let (ci, hi, wi) = (shape[0], shape[1], shape[2]);
                let geom = kernels::ConvGeom::infer(
                    &[1, ci, hi, wi],
                    &[out_channels, ci, kernel, kernel],
                    stride,
                    pad,
                )?;
                let fan_in = ci * kernel * kernel;
                let mut s = Stream::derive(seed, "init", &[(role as u64) << 32 | li as u64]);
                let weight = Parameter::new(
                    format!("{prefix}/conv{li}/w"),
                    kaiming_uniform(&[out_channels, ci, kernel, kernel], fan_in, &mut s),
                );
                let bias = Parameter::new(format!("{prefix}/conv{li}/b"), Tensor::zeros(&[out_channels]));
                param_map.push(Some((params.len(), params.len() + 1)));
                params.push(weight);
                params.push(bias);
                shape = vec![out_channels, geom.oh, geom.ow];
            }
            LayerSpec::Linear { out_features } => {
                let in_features: usize = shape.iter().product();
                let mut s = Stream::derive(seed, "init", &[(role as u64) << 32 | li as u64]);
                let weight = Parameter::new(
                    format!("{prefix}/linear{li}/w"),
                    kaiming_uniform(&[in_features, out_features], in_features, &mut s),
                );
                let bias = Parameter::new(format!("{prefix}/linear{li}/b"), Tensor::zeros(&[out_features]));
                param_map.push(Some((params.len(), params.len() + 1)));
                params.push(weight);
                params.push(bias);
                shape = vec![out_features];
            }
            LayerSpec::AvgPool { k } => {
                if shape.len() != 3 || shape[1] % k != 0 || shape[2] % k != 0 {
                    return Err(Error::Config(format!(
                        "avgpool{k} at layer {li} cannot divide shape {shape:?}"
                    )));
                }
                param_map.push(None);
                shape = vec![shape[0], shape[1] / k, shape[2] / k];
            }
            LayerSpec::Flatten => {
                param_map.push(None);
                shape = vec![shape.iter().product()];
            }
            LayerSpec::Relu | LayerSpec::IfNeuron => param_map.push(None),
        }
    }

    let tap_hw = (h / 4, w / 4);
    Ok(ModelBundle {
        role,
        layers,
        params,
        param_map,
        input_shape: arch.input,
        n_cls: arch.n_cls,
        tap_layer,
        tap_channels: c_tap,
        tap_hw,
        trained: false,
    })
}

/// Desk-scale teacher CNN.
pub fn build_teacher<T: Scalar>(arch: &ArchConfig, seed: u64) -> Result<ModelBundle<T>> {
    build_model(arch, Role::TeacherAnn, seed)
}

/// Desk-scale spiking student.
pub fn build_student<T: Scalar>(arch: &ArchConfig, seed: u64) -> Result<ModelBundle<T>> {
    build_model(arch, Role::StudentSnn, seed)
}

/// Teacher and student taps must share spatial extent (channels may differ).
pub fn check_tap_compat<T: Scalar>(teacher: &ModelBundle<T>, student: &ModelBundle<T>) -> Result<()> {
    if teacher.tap_hw != student.tap_hw {
        return Err(Error::Config(format!(
            "teacher tap {:?} and student tap {:?} differ spatially",
            teacher.tap_hw, student.tap_hw
        )));
    }
    Ok(())
}

impl<T: Scalar> ModelBundle<T> {
    pub fn param(&self, idx: usize) -> &Parameter<T> {
        &self.params[idx]
    }

    /// 64-bit FNV-1a over all parameter bytes; constant across a run for a
    /// frozen model.
    pub fn params_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut buf = Vec::new();
        for p in &self.params {
            buf.clear();
            for &v in p.value.data() {
                v.write_le(&mut buf);
            }
            for &b in &buf {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Snapshot every parameter onto the tape, returning one handle per
/// parameter in `params` order.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, model: &ModelBundle<T>, requires_grad: bool) -> Vec<Var> {
    model.params.iter().map(|p| tape.leaf(p.value.clone(), requires_grad)).collect()
}

/// Write gradients back onto parameters after `Tape::backward`.
pub fn extract_grads<T: Scalar>(
    grads: &mut crate::tape::Grads<T>,
    vars: &[Var],
    params: &mut [Parameter<T>],
) {
    for (p, &v) in params.iter_mut().zip(vars) {
        p.grad = Some(grads.take(v));
    }
}

fn layer_params<T: Scalar>(model: &ModelBundle<T>, vars: &[Var], li: usize) -> Option<(Var, Var)> {
    model.param_map[li].map(|(w, b)| (vars[w], vars[b]))
}

fn conv_bias_shape(c_out: usize) -> [usize; 3] {
    [c_out, 1, 1]
}

/// Traced ANN forward. Returns (logits, tap).
pub fn forward_ann_traced<T: Scalar>(
    tape: &mut Tape<T>,
    m: &ModelBundle<T>,
    vars: &[Var],
    x: Var,
) -> Result<(Var, Var)> {
    if m.role != Role::TeacherAnn {
        return Err(Error::State("ANN forward on a spiking model".into()));
    }
    let mut cur = x;
    let mut tap = None;
    for (li, layer) in m.layers.iter().enumerate() {
        cur = match *layer {
            LayerSpec::Conv { out_channels, stride, pad, .. } => {
                let (w, b) = layer_params(m, vars, li).expect("conv has params");
                let y = tape.conv2d(cur, w, stride, pad)?;
                let b3 = tape.reshape(b, &conv_bias_shape(out_channels))?;
                tape.add(y, b3)?
            }
            LayerSpec::Linear { .. } => {
                let (w, b) = layer_params(m, vars, li).expect("linear has params");
                let y = tape.matmul(cur, w)?;
                tape.add(y, b)?
            }
            LayerSpec::Relu => tape.relu(cur),
            LayerSpec::AvgPool { k } => tape.avgpool2d(cur, k)?,
            LayerSpec::Flatten => tape.flatten(cur)?,
            LayerSpec::IfNeuron => {
                return Err(Error::State("ANN stack contains an IF layer".into()))
            }
        };
        if li == m.tap_layer {
            tap = Some(cur);
        }
    }
    Ok((cur, tap.expect("tap layer within stack")))
}

/// Untraced ANN forward for inference: no tape nodes at all, so a frozen
/// teacher records nothing. Errors on untrained weights.
pub fn forward_teacher<T: Scalar>(
    m: &ModelBundle<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if m.role != Role::TeacherAnn {
        return Err(Error::State("forward_teacher on a non-teacher model".into()));
    }
    if !m.trained {
        return Err(Error::State("teacher weights not loaded; train or load a checkpoint".into()));
    }
    let mut cur = x.clone();
    let mut tap = None;
    for (li, layer) in m.layers.iter().enumerate() {
        cur = match *layer {
            LayerSpec::Conv { out_channels, stride, pad, .. } => {
                let (wi, bi) = m.param_map[li].expect("conv has params");
                let y = kernels::conv2d(&cur, &m.params[wi].value, stride, pad)?;
                let b3 = m.params[bi].value.reshaped(&conv_bias_shape(out_channels))?;
                kernels::binary_broadcast(&y, &b3, |a, b| a + b)?
            }
            LayerSpec::Linear { .. } => {
                let (wi, bi) = m.param_map[li].expect("linear has params");
                let y = kernels::matmul(&cur, &m.params[wi].value)?;
                kernels::binary_broadcast(&y, &m.params[bi].value, |a, b| a + b)?
            }
            LayerSpec::Relu => kernels::relu(&cur),
            LayerSpec::AvgPool { k } => kernels::avgpool2d(&cur, k)?,
            LayerSpec::Flatten => {
                let b = cur.shape()[0];
                let rest: usize = cur.shape()[1..].iter().product();
                cur.reshaped(&[b, rest])?
            }
            LayerSpec::IfNeuron => unreachable!("teacher has no IF layers"),
        };
        if li == m.tap_layer {
            tap = Some(cur.clone());
        }
    }
    Ok((cur, tap.expect("tap recorded")))
}

/// Per-step spike record at the tap: a (T, b, c, h, w) stack of binary
/// activations plus the per-step handles feeding it.
pub struct SpikeFeature {
    pub per_step: Vec<Var>,
    pub stacked: Var,
}

/// Mean of each parametric layer's input over a forward pass; feeds the
/// synaptic-operation counts. Average pooling preserves means, so the mean of
/// a conv's direct input equals the firing rate of the spike train behind it.
#[derive(Debug, Clone, Default)]
pub struct ActivityProbe {
    pub sums: Vec<f64>,
    pub counts: Vec<f64>,
}

impl ActivityProbe {
    pub fn record(&mut self, slot: usize, t: &Tensor<impl Scalar>) {
        if self.sums.len() <= slot {
            self.sums.resize(slot + 1, 0.0);
            self.counts.resize(slot + 1, 0.0);
        }
        self.sums[slot] += t.data().iter().map(|v| v.to_f64_lossless()).sum::<f64>();
        self.counts[slot] += t.numel() as f64;
    }

    pub fn rates(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.counts).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect()
    }
}

pub struct StudentForward {
    /// Rate-decoded logits: mean over T of the per-step classifier outputs.
    pub logits: Var,
    pub step_logits: Vec<Var>,
    pub tap: SpikeFeature,
}

/// Traced student forward, unrolled T steps with shared weights and neuron
/// state threaded between steps (the tape then spans the whole unroll, so
/// backward is BPTT). Direct coding: `x` is injected at every step.
pub fn forward_student_traced<T: Scalar>(
    tape: &mut Tape<T>,
    m: &ModelBundle<T>,
    vars: &[Var],
    x: Var,
    t_steps: usize,
    cfg: &NeuronConfig<T>,
    mode: SurrogateMode,
    mut probe: Option<&mut ActivityProbe>,
) -> Result<StudentForward> {
    if m.role != Role::StudentSnn {
        return Err(Error::State("student forward on a non-spiking model".into()));
    }
    if t_steps < 1 {
        return Err(Error::Config("time-steps must be >= 1".into()));
    }
    cfg.validate()?;
    let batch = tape.value(x).shape()[0];

    // fresh membrane state per IF layer
    let mut states: Vec<Option<NeuronState>> = vec![None; m.layers.len()];
    let mut shape = vec![batch, m.input_shape[0], m.input_shape[1], m.input_shape[2]];
    for (li, layer) in m.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, pad, .. } => {
                let g = kernels::ConvGeom::infer(
                    &shape,
                    &[out_channels, shape[1], kernel, kernel],
                    stride,
                    pad,
                )?;
                shape = vec![batch, out_channels, g.oh, g.ow];
            }
            LayerSpec::AvgPool { k } => shape = vec![batch, shape[1], shape[2] / k, shape[3] / k],
            LayerSpec::IfNeuron => states[li] = Some(neuron::init_state(tape, &shape, cfg)),
            LayerSpec::Flatten => shape = vec![batch, shape[1..].iter().product()],
            LayerSpec::Linear { out_features } => shape = vec![batch, out_features],
            LayerSpec::Relu => {
                return Err(Error::State("spiking stack contains a relu layer".into()))
            }
        }
    }

    let mut step_logits = Vec::with_capacity(t_steps);
    let mut taps = Vec::with_capacity(t_steps);
    for _ in 0..t_steps {
        let mut cur = x;
        let mut probe_slot = 0;
        for (li, layer) in m.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { out_channels, stride, pad, .. } => {
                    if let Some(p) = probe.as_deref_mut() {
                        p.record(probe_slot, tape.value(cur));
                    }
                    probe_slot += 1;
                    let (w, b) = layer_params(m, vars, li).expect("conv has params");
                    let y = tape.conv2d(cur, w, stride, pad)?;
                    let b3 = tape.reshape(b, &conv_bias_shape(out_channels))?;
                    tape.add(y, b3)?
                }
                LayerSpec::Linear { .. } => {
                    if let Some(p) = probe.as_deref_mut() {
                        p.record(probe_slot, tape.value(cur));
                    }
                    probe_slot += 1;
                    let (w, b) = layer_params(m, vars, li).expect("linear has params");
                    let y = tape.matmul(cur, w)?;
                    tape.add(y, b)?
                }
                LayerSpec::AvgPool { k } => tape.avgpool2d(cur, k)?,
                LayerSpec::IfNeuron => {
                    let state = states[li].take().expect("state initialized");
                    let out = neuron::if_step(tape, cur, state, cfg, mode)?;
                    states[li] = Some(out.state);
                    out.spikes
                }
                LayerSpec::Flatten => tape.flatten(cur)?,
                LayerSpec::Relu => unreachable!("validated above"),
            };
            if li == m.tap_layer {
                taps.push(cur);
            }
        }
        step_logits.push(cur);
    }

    let stacked = tape.stack0(&taps)?;
    let logits_stack = tape.stack0(&step_logits)?;
    let logits = tape.mean_axis(logits_stack, 0)?;
    Ok(StudentForward { logits, step_logits, tap: SpikeFeature { per_step: taps, stacked } })
}
