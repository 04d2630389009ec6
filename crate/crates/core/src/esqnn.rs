//! Multi-depth slimmable circuit models.
//!
//! Two architectures share one parameter layout of [layers][qubits][3] angles:
//!
//! * `Esqnn` — each layer is a directed ring of controlled-unitary gates
//!   CU(i → (i+1) mod q) whose target unitary is Rz(α)·Ry(β)·Rz(γ).
//! * `VanillaSqnn` — each layer rotates every qubit by Rx/Ry/Rz and then
//!   entangles with a ring of CNOTs.
//!
//! The depth-l sub-model runs the encoder plus layers 1..l, so a prefix of
//! the parameter tensor is itself a usable classifier.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::qsim::{Axis, StateVector};

pub const ANGLES_PER_SITE: usize = 3;

/// Circuit architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Esqnn,
    VanillaSqnn,
}

/// Shape and readout hyperparameters of the circuit model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub num_qubits: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    /// Scale `a` applied to observables before the softmax readout.
    pub observable_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Esqnn,
            num_qubits: 4,
            num_layers: 3,
            num_classes: 4,
            observable_scale: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_qubits < 2 || self.num_qubits > crate::qsim::MAX_QUBITS {
            return Err(Error::Config(format!(
                "num_qubits must be in 2..={}, got {}",
                crate::qsim::MAX_QUBITS,
                self.num_qubits
            )));
        }
        if self.num_layers < 2 {
            return Err(Error::Config(format!(
                "num_layers must be at least 2, got {}",
                self.num_layers
            )));
        }
        if self.num_classes < 2 || self.num_classes > self.num_qubits {
            return Err(Error::Config(format!(
                "num_classes must be in 2..=num_qubits ({}), got {}",
                self.num_qubits, self.num_classes
            )));
        }
        if !self.observable_scale.is_finite() {
            return Err(Error::Config("observable_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn features_per_example(&self) -> usize {
        4 * self.num_qubits
    }

    pub fn num_params(&self) -> usize {
        ANGLES_PER_SITE * self.num_qubits * self.num_layers
    }
}

/// Trainable angles, flat in layer-major, qubit-major, angle-minor order.
#[derive(Debug, Clone, PartialEq)]
pub struct EsqnnParams {
    num_layers: usize,
    num_qubits: usize,
    values: Vec<f64>,
}

impl EsqnnParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            num_layers: cfg.num_layers,
            num_qubits: cfg.num_qubits,
            values: vec![0.0; cfg.num_params()],
        }
    }

    /// Uniform draw in [−π, π] per angle.
    pub fn random_init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Self::random_init_scaled(cfg, PI, rng)
    }

    /// Uniform draw in [−scale, scale] per angle. Small scales start every
    /// sub-model near the identity circuit, where inter-depth fidelity is 1.
    pub fn random_init_scaled<R: Rng>(cfg: &ModelConfig, scale: f64, rng: &mut R) -> Self {
        let values = (0..cfg.num_params())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Self {
            num_layers: cfg.num_layers,
            num_qubits: cfg.num_qubits,
            values,
        }
    }

    pub fn from_flat(num_layers: usize, num_qubits: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != ANGLES_PER_SITE * num_layers * num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "expected {} angles for {num_layers} layers x {num_qubits} qubits, got {}",
                ANGLES_PER_SITE * num_layers * num_qubits,
                values.len()
            )));
        }
        Ok(Self {
            num_layers,
            num_qubits,
            values,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flat index of (layer, qubit, angle), all zero-based.
    pub fn index_of(&self, layer: usize, qubit: usize, angle: usize) -> usize {
        (layer * self.num_qubits + qubit) * ANGLES_PER_SITE + angle
    }

    pub fn get(&self, layer: usize, qubit: usize, angle: usize) -> f64 {
        self.values[self.index_of(layer, qubit, angle)]
    }

    pub fn set(&mut self, layer: usize, qubit: usize, angle: usize, value: f64) {
        let i = self.index_of(layer, qubit, angle);
        self.values[i] = value;
    }

    /// Little-endian f64 serialization in flat order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(num_layers: usize, num_qubits: usize, bytes: &[u8]) -> Result<Self> {
        let expected = ANGLES_PER_SITE * num_layers * num_qubits * 8;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(num_layers, num_qubits, values)
    }
}

/// Binary mask selecting exactly the parameters of one layer. The per-layer
/// masks are disjoint and together cover every coordinate once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthMask {
    pub layer: usize,
    num_qubits: usize,
}

impl DepthMask {
    /// Mask for `layer` (1-based), matching a [L][q][3] flat layout.
    pub fn new(layer: usize, num_layers: usize, num_qubits: usize) -> Result<Self> {
        if layer < 1 || layer > num_layers {
            return Err(Error::Argument(format!(
                "layer {layer} out of range 1..={num_layers}"
            )));
        }
        Ok(Self {
            layer,
            num_qubits,
        })
    }

    /// Flat coordinate range selected by this mask.
    pub fn range(&self) -> Range<usize> {
        let per_layer = ANGLES_PER_SITE * self.num_qubits;
        (self.layer - 1) * per_layer..self.layer * per_layer
    }

    pub fn contains(&self, flat_index: usize) -> bool {
        self.range().contains(&flat_index)
    }
}

/// Encode `4q` features in [0,1] onto |0…0⟩ as Ry(πf)·Rz(πf)·Ry(πf)·Rz(πf)
/// per qubit, consuming four features per qubit in order.
pub fn encode(cfg: &ModelConfig, features: &[f64]) -> Result<StateVector> {
    if features.len() != cfg.features_per_example() {
        return Err(Error::Validation(format!(
            "expected {} features, got {}",
            cfg.features_per_example(),
            features.len()
        )));
    }
    if let Some(bad) = features.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Validation(format!(
            "feature {bad} outside [0,1]"
        )));
    }
    let mut state = StateVector::zero(cfg.num_qubits)?;
    for qubit in 0..cfg.num_qubits {
        let f = &features[4 * qubit..4 * qubit + 4];
        state.apply_rotation(Axis::Y, PI * f[0], qubit)?;
        state.apply_rotation(Axis::Z, PI * f[1], qubit)?;
        state.apply_rotation(Axis::Y, PI * f[2], qubit)?;
        state.apply_rotation(Axis::Z, PI * f[3], qubit)?;
    }
    Ok(state)
}

/// Apply one trainable layer (0-based index) in place.
pub fn apply_layer(
    cfg: &ModelConfig,
    params: &EsqnnParams,
    state: &mut StateVector,
    layer: usize,
) -> Result<()> {
    let q = cfg.num_qubits;
    match cfg.arch {
        Arch::Esqnn => {
            for i in 0..q {
                state.apply_cu(
                    i,
                    (i + 1) % q,
                    params.get(layer, i, 0),
                    params.get(layer, i, 1),
                    params.get(layer, i, 2),
                )?;
            }
        }
        Arch::VanillaSqnn => {
            for i in 0..q {
                state.apply_rotation(Axis::X, params.get(layer, i, 0), i)?;
                state.apply_rotation(Axis::Y, params.get(layer, i, 1), i)?;
                state.apply_rotation(Axis::Z, params.get(layer, i, 2), i)?;
            }
            for i in 0..q {
                state.apply_cnot(i, (i + 1) % q)?;
            }
        }
    }
    Ok(())
}

/// Run the sub-model of depth `depth` (1-based): layers 1..=depth applied to
/// the encoded state. Parameters of deeper layers are never read.
pub fn forward_to_depth(
    cfg: &ModelConfig,
    params: &EsqnnParams,
    encoded: &StateVector,
    depth: usize,
) -> Result<StateVector> {
    if depth < 1 || depth > cfg.num_layers {
        return Err(Error::Argument(format!(
            "depth {depth} out of range 1..={}",
            cfg.num_layers
        )));
    }
    let mut state = encoded.clone();
    for layer in 0..depth {
        apply_layer(cfg, params, &mut state, layer)?;
    }
    Ok(state)
}

/// Per-class Pauli-Z expectations ⟨V_c⟩, one per readout qubit c = 0..C-1.
pub fn observables(cfg: &ModelConfig, state: &StateVector) -> Result<Vec<f64>> {
    (0..cfg.num_classes).map(|c| state.expectation_z(c)).collect()
}

/// Softmax of scaled observables: p_c = exp(a·⟨V_c⟩) / Σ exp(a·⟨V_c'⟩).
pub fn class_probs_from_observables(obs: &[f64], scale: f64) -> Vec<f64> {
    let max = obs
        .iter()
        .map(|v| scale * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = obs.iter().map(|v| (scale * v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class distribution read out from a state.
pub fn class_probs(cfg: &ModelConfig, state: &StateVector, scale: f64) -> Result<Vec<f64>> {
    Ok(class_probs_from_observables(&observables(cfg, state)?, scale))
}

/// Overlap helper used by the fidelity regularizer: |⟨a|b⟩|².
pub fn state_fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    a.fidelity(b)
}

/// Amplitude-wise comparison tolerance helper for tests that fix the global
/// phase by construction.
pub fn max_amplitude_distance(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn amplitudes_to_vec(state: &StateVector) -> Vec<Complex64> {
    state.amplitudes().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(arch: Arch) -> ModelConfig {
        ModelConfig {
            arch,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig {
            num_layers: 1,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            num_classes: 5,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn parameter_count_matches_budget() {
        // 3 angles x 4 qubits x 3 layers = 36 for both architectures.
        assert_eq!(cfg(Arch::Esqnn).num_params(), 36);
        assert_eq!(cfg(Arch::VanillaSqnn).num_params(), 36);
    }

    #[test]
    fn zero_features_encode_to_ground_state_expectations() {
        let cfg = cfg(Arch::Esqnn);
        let state = encode(&cfg, &[0.0; 16]).unwrap();
        for c in 0..4 {
            assert_abs_diff_eq!(state.expectation_z(c).unwrap(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(state.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn encode_rejects_out_of_range_features() {
        let cfg = cfg(Arch::Esqnn);
        let mut f = [0.5; 16];
        f[3] = 1.2;
        assert!(encode(&cfg, &f).is_err());
        assert!(encode(&cfg, &[0.5; 15]).is_err());
    }

    #[test]
    fn zero_angles_make_identity_esqnn_layers() {
        let cfg = cfg(Arch::Esqnn);
        let params = EsqnnParams::zeros(&cfg);
        let encoded = encode(&cfg, &[0.25; 16]).unwrap();
        for depth in 1..=3 {
            let out = forward_to_depth(&cfg, &params, &encoded, depth).unwrap();
            assert_abs_diff_eq!(max_amplitude_distance(&out, &encoded), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn depth_prefix_ignores_deeper_layers() {
        let cfg = cfg(Arch::Esqnn);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        use rand::SeedableRng;
        let params = EsqnnParams::random_init(&cfg, &mut rng);
        let encoded = encode(&cfg, &[0.3; 16]).unwrap();
        let out1 = forward_to_depth(&cfg, &params, &encoded, 2).unwrap();

        let mut perturbed = params.clone();
        perturbed.set(2, 1, 0, 1.234);
        perturbed.set(2, 3, 2, -0.777);
        let out2 = forward_to_depth(&cfg, &perturbed, &encoded, 2).unwrap();
        assert_eq!(out1.amplitudes(), out2.amplitudes());
    }

    #[test]
    fn probs_sum_to_one_and_stay_positive() {
        let cfg = cfg(Arch::VanillaSqnn);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let params = EsqnnParams::random_init(&cfg, &mut rng);
        let encoded = encode(&cfg, &[0.6; 16]).unwrap();
        let state = forward_to_depth(&cfg, &params, &encoded, 3).unwrap();
        let probs = class_probs(&cfg, &state, 2.0).unwrap();
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn ground_state_readout_is_uniform() {
        let cfg = cfg(Arch::Esqnn);
        let state = StateVector::zero(4).unwrap();
        let probs = class_probs(&cfg, &state, 2.0).unwrap();
        for p in probs {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn depth_masks_partition_coordinates() {
        let cfg = cfg(Arch::Esqnn);
        let mut seen = vec![0usize; cfg.num_params()];
        for layer in 1..=cfg.num_layers {
            let mask = DepthMask::new(layer, cfg.num_layers, cfg.num_qubits).unwrap();
            for i in mask.range() {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(DepthMask::new(0, 3, 4).is_err());
        assert!(DepthMask::new(4, 3, 4).is_err());
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let cfg = cfg(Arch::Esqnn);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        use rand::SeedableRng;
        let params = EsqnnParams::random_init(&cfg, &mut rng);
        let bytes = params.to_le_bytes();
        assert_eq!(bytes.len(), 36 * 8);
        let back = EsqnnParams::from_le_bytes(3, 4, &bytes).unwrap();
        assert_eq!(params, back);
    }
}
