//! Firing-rate measurement and the synaptic-operation energy model.
//!
//! Analytic MAC counts per layer (batch 1):
//!   conv:   c_out · oh · ow · c_in · kh · kw
//!   linear: in_features · out_features
//!
//! A spiking layer fed by a train with firing rate r performs
//! SOPS = r · T · FLOPS accumulate-only operations. Total energy charges the
//! first (encoding) layer at the MAC rate and everything downstream at the
//! AC rate:
//!   E = E_MAC·FLOPS(1) + E_AC·Σ_{i≥2} SOPS(i)
//! with 45nm per-op energies E_MAC = 4.6 pJ and E_AC = 0.9 pJ. A pure ANN
//! is all MACs: E = E_MAC·ΣFLOPS.

use crate::error::{Error, Result};
use crate::layers::{LayerSpec, ModelBundle};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-operation energies in joules (45nm process).
#[derive(Debug, Clone, Copy)]
pub struct EnergyModel {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { e_mac: 4.6e-12, e_ac: 0.9e-12 }
    }
}

/// Mean spike probability of a spike tensor.
///
/// Raw spike records must be exactly binary; a tensor already averaged over
/// time is accepted with `time_averaged = true` and must lie in [0,1].
pub fn firing_rate<T: Scalar>(spikes: &Tensor<T>, time_averaged: bool) -> Result<f64> {
    if spikes.numel() == 0 {
        return Err(Error::Contract("firing rate of an empty tensor".into()));
    }
    if time_averaged {
        if spikes.data().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::Contract("time-averaged spike values must lie in [0,1]".into()));
        }
    } else if !spikes.is_binary() {
        return Err(Error::Contract("raw spike record contains non-binary values".into()));
    }
    let sum: f64 = spikes.data().iter().map(|v| v.to_f64_lossless()).sum();
    Ok(sum / spikes.numel() as f64)
}

/// Operation counts for one layer.
#[derive(Debug, Clone)]
pub struct LayerOpCount {
    pub layer: String,
    /// MAC count at batch 1.
    pub flops: f64,
    /// Firing rate of the layer's input spike train.
    pub r_input: f64,
    /// Simulation time-steps.
    pub t: usize,
}

impl LayerOpCount {
    pub fn validate(&self) -> Result<()> {
        if self.flops < 0.0 {
            return Err(Error::Contract(format!("negative FLOPS for {}", self.layer)));
        }
        if !(0.0..=1.0).contains(&self.r_input) {
            return Err(Error::Contract(format!(
                "firing rate {} for {} outside [0,1]",
                self.r_input, self.layer
            )));
        }
        Ok(())
    }
}

/// SOPS(l) = r_input · T · FLOPS(l).
pub fn count_sops(l: &LayerOpCount) -> f64 {
    l.r_input * l.t as f64 * l.flops
}

/// E = E_MAC·FLOPS(1) + E_AC·Σ SOPS(i≥2), in joules.
pub fn energy(first_layer_flops: f64, sops_rest: &[f64], model: &EnergyModel) -> f64 {
    model.e_mac * first_layer_flops + model.e_ac * sops_rest.iter().sum::<f64>()
}

/// All-MAC energy of the ANN counterpart.
pub fn ann_energy(total_flops: f64, model: &EnergyModel) -> f64 {
    model.e_mac * total_flops
}

/// Analytic batch-1 MAC counts for each parametric layer of a model.
pub fn model_flops<T: Scalar>(m: &ModelBundle<T>) -> Vec<(String, f64)> {
    let [c_in, h, w] = m.input_shape;
    let mut shape = vec![c_in, h, w];
    let mut out = Vec::new();
    let mut idx = 0;
    for layer in &m.layers {
        match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                let oh = (shape[1] + 2 * pad - kernel) / stride + 1;
                let ow = (shape[2] + 2 * pad - kernel) / stride + 1;
                let macs = (out_channels * oh * ow * shape[0] * kernel * kernel) as f64;
                out.push((format!("conv{idx}"), macs));
                idx += 1;
                shape = vec![out_channels, oh, ow];
            }
            LayerSpec::Linear { out_features } => {
                let in_features: usize = shape.iter().product();
                out.push((format!("linear{idx}"), (in_features * out_features) as f64));
                idx += 1;
                shape = vec![out_features];
            }
            LayerSpec::AvgPool { k } => shape = vec![shape[0], shape[1] / k, shape[2] / k],
            LayerSpec::Flatten => shape = vec![shape.iter().product()],
            LayerSpec::Relu | LayerSpec::IfNeuron => {}
        }
    }
    out
}

/// One row of the energy report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub layer: String,
    /// "MAC" for the encoding layer, "AC" for spike-driven layers.
    pub op_kind: &'static str,
    pub flops: f64,
    pub r_input: f64,
    pub sops: f64,
    pub energy_j: f64,
}

/// Per-layer energy report for a spiking model plus its ANN-equivalent cost.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub rows: Vec<ReportRow>,
    pub total_energy_j: f64,
    pub ann_equivalent_j: f64,
    pub t: usize,
}

/// Assemble the report from per-layer FLOPS and measured input rates.
/// `rates[i]` is the input firing rate of parametric layer `i`; the first
/// layer is charged as MAC regardless (it encodes the analog input).
pub fn energy_report(
    flops: &[(String, f64)],
    rates: &[f64],
    t: usize,
    model: &EnergyModel,
) -> Result<EnergyReport> {
    if flops.len() != rates.len() {
        return Err(Error::Contract(format!(
            "{} layers but {} rate measurements",
            flops.len(),
            rates.len()
        )));
    }
    let mut rows = Vec::with_capacity(flops.len());
    let mut sops_rest = Vec::new();
    for (i, ((name, f), &r)) in flops.iter().zip(rates).enumerate() {
        let count = LayerOpCount { layer: name.clone(), flops: *f, r_input: r, t };
        count.validate()?;
        if i == 0 {
            rows.push(ReportRow {
                layer: name.clone(),
                op_kind: "MAC",
                flops: *f,
                r_input: r,
                sops: 0.0,
                energy_j: model.e_mac * f,
            });
        } else {
            let sops = count_sops(&count);
            sops_rest.push(sops);
            rows.push(ReportRow {
                layer: name.clone(),
                op_kind: "AC",
                flops: *f,
                r_input: r,
                sops,
                energy_j: model.e_ac * sops,
            });
        }
    }
    let total = energy(flops[0].1, &sops_rest, model);
    let ann = ann_energy(flops.iter().map(|(_, f)| f).sum(), model);
    Ok(EnergyReport { rows, total_energy_j: total, ann_equivalent_j: ann, t })
}

impl EnergyReport {
    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<10} {:>5} {:>14} {:>9} {:>14} {:>12}\n",
            "layer", "kind", "FLOPS", "r_input", "SOPS", "energy(mJ)"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:>5} {:>14.4e} {:>9.4} {:>14.4e} {:>12.6}\n",
                r.layer,
                r.op_kind,
                r.flops,
                r.r_input,
                r.sops,
                r.energy_j * 1e3
            ));
        }
        s.push_str(&format!("total energy: {:.6} mJ (T={})\n", self.total_energy_j * 1e3, self.t));
        s.push_str(&format!("ANN-equivalent (all-MAC): {:.6} mJ\n", self.ann_equivalent_j * 1e3));
        s
    }

    /// Machine-readable key:value lines.
    pub fn machine_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for r in &self.rows {
            lines.push(format!(
                "layer:{}\tkind:{}\tflops:{}\tr_input:{}\tsops:{}\tenergy_mj:{}",
                r.layer,
                r.op_kind,
                r.flops,
                r.r_input,
                r.sops,
                r.energy_j * 1e3
            ));
        }
        lines.push(format!("total_energy_mj:{}", self.total_energy_j * 1e3));
        lines.push(format!("ann_equivalent_mj:{}", self.ann_equivalent_j * 1e3));
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn firing_rate_hand_cases() {
        let zeros = Tensor::<f32>::zeros(&[2, 4]);
        assert_eq!(firing_rate(&zeros, false).unwrap(), 0.0);
        let ones = Tensor::<f32>::full(&[3, 3], 1.0);
        assert_eq!(firing_rate(&ones, false).unwrap(), 1.0);
        let mut quarter = Tensor::<f32>::zeros(&[8]);
        quarter.data_mut()[1] = 1.0;
        quarter.data_mut()[5] = 1.0;
        assert_eq!(firing_rate(&quarter, false).unwrap(), 0.25);
    }

    #[test]
    fn non_binary_raw_spikes_are_a_contract_error() {
        let t = Tensor::<f32>::full(&[4], 0.5);
        assert!(firing_rate(&t, false).is_err());
        assert_eq!(firing_rate(&t, true).unwrap(), 0.5);
        let bad = Tensor::<f32>::full(&[4], 1.5);
        assert!(firing_rate(&bad, true).is_err());
    }

    #[test]
    fn concatenation_rate_is_count_weighted_mean() {
        let a = Tensor::<f64>::full(&[4], 1.0); // rate 1, 4 elements
        let b = Tensor::<f64>::zeros(&[12]); // rate 0, 12 elements
        let mut joined = a.data().to_vec();
        joined.extend_from_slice(b.data());
        let j = Tensor::new(vec![16], joined).unwrap();
        let ra = firing_rate(&a, false).unwrap();
        let rb = firing_rate(&b, false).unwrap();
        let rj = firing_rate(&j, false).unwrap();
        assert_eq!(rj, (ra * 4.0 + rb * 12.0) / 16.0);
    }

    #[test]
    fn sops_arithmetic() {
        let mk = |r: f64, t: usize, flops: f64| LayerOpCount {
            layer: "l".into(),
            flops,
            r_input: r,
            t,
        };
        assert_eq!(count_sops(&mk(0.0, 4, 1e6)), 0.0);
        assert_eq!(count_sops(&mk(0.5, 4, 1e6)), 2e6);
        assert_eq!(count_sops(&mk(1.0, 1, 123.0)), 123.0);
        // linear in each factor
        assert_eq!(count_sops(&mk(0.25, 8, 1e3)), 2.0 * count_sops(&mk(0.25, 4, 1e3)));
    }

    #[test]
    fn energy_matches_published_ann_rows() {
        let m = EnergyModel::default();
        // 4.12 GFLOPS → 18.95 mJ; 18.60 GFLOPS → 85.56 mJ (2-decimal rounding)
        let e1 = ann_energy(4.12e9, &m) * 1e3;
        assert_eq!((e1 * 100.0).round() / 100.0, 18.95);
        let e2 = ann_energy(18.60e9, &m) * 1e3;
        assert_eq!((e2 * 100.0).round() / 100.0, 85.56);
    }

    #[test]
    fn energy_is_additive_and_monotone() {
        let m = EnergyModel::default();
        let base = energy(1e9, &[1e9], &m);
        assert!((base - 5.5e-3).abs() < 1e-12);
        assert!(energy(1e9, &[1e9, 1e8], &m) > base);
        let joint = energy(1e9, &[1e9, 2e9], &m);
        let split = energy(1e9, &[1e9], &m) + m.e_ac * 2e9;
        assert!((joint - split).abs() < 1e-15 * joint.abs());
    }

    #[test]
    fn model_flops_analytic() {
        use crate::layers::{build_teacher, ArchConfig};
        let t: ModelBundle<f32> = build_teacher(&ArchConfig::default(), 1).unwrap();
        let f = model_flops(&t);
        assert_eq!(f.len(), 3);
        // conv1: 16·28·28·1·3·3
        assert_eq!(f[0].1, (16 * 28 * 28 * 9) as f64);
        // conv2: 32·14·14·16·3·3
        assert_eq!(f[1].1, (32 * 14 * 14 * 16 * 9) as f64);
        // linear: 32·7·7·10
        assert_eq!(f[2].1, (32 * 7 * 7 * 10) as f64);
    }

    #[test]
    fn report_charges_first_layer_as_mac() {
        let flops = vec![("conv0".to_string(), 1e9), ("conv1".to_string(), 1e9)];
        let rates = vec![0.9, 0.5];
        let rep = energy_report(&flops, &rates, 4, &EnergyModel::default()).unwrap();
        assert_eq!(rep.rows[0].op_kind, "MAC");
        assert_eq!(rep.rows[1].op_kind, "AC");
        assert_eq!(rep.rows[1].sops, 0.5 * 4.0 * 1e9);
        let expect = 4.6e-12 * 1e9 + 0.9e-12 * 2e9;
        assert!((rep.total_energy_j - expect).abs() < 1e-18);
        assert!(!rep.table().is_empty());
        assert_eq!(rep.machine_lines().len(), 4);
    }
}
