//! Run configuration: a sectioned key = value file (TOML), every field
//! defaulted, echoed verbatim-resolvable into the run directory before
//! training so a run is reproducible from its own echo.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{DistillConfig, DistillMode};
use crate::error::{Error, Result};
use crate::layers::ArchConfig;
use crate::neuron::NeuronConfig;
use crate::optim::{LrSchedule, OptimKind};
use crate::scalar::Scalar;

/// Environment variable overriding `dataset.data_dir`.
pub const DATA_ROOT_ENV: &str = "SPIKEDISTILL_DATA";

fn d_dataset_kind() -> String { "synth".into() }
fn d_data_dir() -> String { "data".into() }
fn d_train_subset() -> usize { 0 }
fn d_test_subset() -> usize { 0 }
fn d_synth_train() -> usize { 2000 }
fn d_synth_test() -> usize { 2000 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// "mnist" (IDX files), "cifar10" (binary batches) or "synth".
    pub kind: String,
    pub data_dir: String,
    /// 0 = use everything. Subsets are stable prefixes under one seed.
    pub train_subset: usize,
    pub test_subset: usize,
    /// Sample counts when kind = "synth".
    pub synth_train: usize,
    pub synth_test: usize,
    /// Random crop + horizontal flip for CIFAR training batches.
    pub augment: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: d_dataset_kind(),
            data_dir: d_data_dir(),
            train_subset: d_train_subset(),
            test_subset: d_test_subset(),
            synth_train: d_synth_train(),
            synth_test: d_synth_test(),
            augment: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub teacher_channels: [usize; 2],
    pub student_channels: [usize; 2],
    /// Student logit decoding; "mean" (rate decoding) is the only scheme.
    pub decode: String,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            teacher_channels: [16, 32],
            student_channels: [16, 16],
            decode: "mean".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronSection {
    pub v_th: f64,
    pub v_reset: f64,
    /// Membrane time constant of the leak form; no published value exists
    /// for this configuration, 2.0 is this crate's choice.
    pub tau_mem: f64,
    pub alpha: f64,
    pub pure_if: bool,
    pub detach_reset: bool,
}

impl Default for NeuronSection {
    fn default() -> Self {
        NeuronSection {
            v_th: 1.0,
            v_reset: 0.0,
            tau_mem: 2.0,
            alpha: 4.0,
            pure_if: false,
            detach_reset: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub tau_temp: f64,
    pub lambda: f64,
    pub w_ld: f64,
    pub w_bkd: f64,
    /// "none" | "ld" | "bkd" | "md".
    pub mode: String,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection { tau_temp: 2.0, lambda: 0.15, w_ld: 1.0, w_bkd: 7e-4, mode: "md".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    /// "sgd_momentum" | "adam".
    pub kind: String,
    pub lr: f64,
    pub momentum: f64,
    pub betas: [f64; 2],
    pub weight_decay: f64,
    /// "cosine" | "constant".
    pub schedule: String,
    /// Global-norm gradient clip per parameter group; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            kind: "sgd_momentum".into(),
            lr: 0.05,
            momentum: 0.9,
            betas: [0.9, 0.999],
            weight_decay: 5e-4,
            schedule: "cosine".into(),
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Simulation time-steps T for the student.
    pub time_steps: usize,
    pub out_dir: String,
    /// Kernel thread count; 1 is the reference. All values currently execute
    /// the same bit-identical single-threaded path.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            epochs: 10,
            batch_size: 64,
            seed: 1,
            time_steps: 4,
            out_dir: "runs/default".into(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub arch: ArchSection,
    pub neuron: NeuronSection,
    pub distill: DistillSection,
    pub optim: OptimSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron_config::<f64>().validate()?;
        self.distill_config::<f64>()?.validate()?;
        OptimKind::from_str(&self.optim.kind)?;
        LrSchedule::from_str(&self.optim.schedule)?;
        if self.run.time_steps < 1 {
            return Err(Error::Config("run.time_steps must be >= 1".into()));
        }
        if self.run.batch_size < 1 {
            return Err(Error::Config("run.batch_size must be >= 1".into()));
        }
        if self.run.threads < 1 {
            return Err(Error::Config("run.threads must be >= 1".into()));
        }
        if self.arch.decode != "mean" {
            return Err(Error::Config(format!("unknown decode scheme '{}'", self.arch.decode)));
        }
        match self.dataset.kind.as_str() {
            "mnist" | "cifar10" | "synth" => Ok(()),
            other => Err(Error::Config(format!("unknown dataset kind '{other}'"))),
        }
    }

    /// Serialized resolved config (the echo written into the run directory).
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Data root: environment override, else the configured directory.
    pub fn data_root(&self) -> PathBuf {
        std::env::var(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from(&self.dataset.data_dir))
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.dataset.kind.as_str() {
            "cifar10" => [3, 32, 32],
            _ => [1, 28, 28],
        }
    }

    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            input: self.input_shape(),
            n_cls: 10,
            teacher_channels: (self.arch.teacher_channels[0], self.arch.teacher_channels[1]),
            student_channels: (self.arch.student_channels[0], self.arch.student_channels[1]),
        }
    }

    pub fn neuron_config<T: Scalar>(&self) -> NeuronConfig<T> {
        NeuronConfig {
            v_th: T::from_f64(self.neuron.v_th),
            v_reset: T::from_f64(self.neuron.v_reset),
            tau_mem: T::from_f64(self.neuron.tau_mem),
            alpha: T::from_f64(self.neuron.alpha),
            pure_if: self.neuron.pure_if,
            detach_reset: self.neuron.detach_reset,
        }
    }

    pub fn distill_config<T: Scalar>(&self) -> Result<DistillConfig<T>> {
        Ok(DistillConfig {
            tau_temp: T::from_f64(self.distill.tau_temp),
            lambda: self.distill.lambda,
            w_ld: T::from_f64(self.distill.w_ld),
            w_bkd: T::from_f64(self.distill.w_bkd),
            mode: DistillMode::from_str(&self.distill.mode)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.run.epochs, 10);
        assert_eq!(cfg.run.time_steps, 4);
        assert_eq!(cfg.distill.lambda, 0.15);
        assert_eq!(cfg.distill.tau_temp, 2.0);
        assert_eq!(cfg.distill.w_bkd, 7e-4);
        assert_eq!(cfg.neuron.alpha, 4.0);
        assert_eq!(cfg.optim.lr, 0.05);
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.run.seed = 99;
        cfg.distill.mode = "bkd".into();
        let echoed = cfg.echo();
        let back = RunConfig::parse(&echoed).unwrap();
        assert_eq!(back.run.seed, 99);
        assert_eq!(back.distill.mode, "bkd");
        assert_eq!(back.echo(), echoed);
    }

    #[test]
    fn sectioned_overrides_parse() {
        let text = r#"
[dataset]
kind = "synth"
synth_train = 500

[run]
epochs = 2
seed = 7

[distill]
mode = "ld"
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.dataset.synth_train, 500);
        assert_eq!(cfg.run.epochs, 2);
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.distill.mode, "ld");
        // untouched sections keep defaults
        assert_eq!(cfg.optim.momentum, 0.9);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[distill]\nmode = \"xyz\"\n").is_err());
        assert!(RunConfig::parse("[run]\ntime_steps = 0\n").is_err());
        assert!(RunConfig::parse("[neuron]\ntau_mem = 0.1\n").is_err());
        assert!(RunConfig::parse("[distill]\nlambda = 1.5\n").is_err());
        assert!(RunConfig::parse("[bogus]\nx = 1\n").is_err());
    }
}
