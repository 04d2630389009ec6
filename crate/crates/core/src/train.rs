//! Local training: combined cross-entropy + distillation loss, parameter-shift
//! gradients, and the per-round SGD loop whose accumulated gradient is what a
//! device transmits.
//!
//! The depth-l loss is λ·CE + (1−λ)·REG where REG compares the depth-l state
//! (or its readout) against the full-depth teacher evaluated once at the
//! unshifted parameters and then held fixed. At depth L the regularizer
//! vanishes identically and is skipped rather than computed.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::data::Example;
use crate::error::{Error, Result};
use crate::esqnn::{
    class_probs_from_observables, encode, forward_to_depth, observables, EsqnnParams, ModelConfig,
};
use crate::qsim::StateVector;

/// Floor inside logarithms so confident wrong predictions stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Distillation regularizer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// Inplace fidelity distillation: 1 − |⟨ψ_L|ψ_l⟩|², bounded in [0,1].
    Ipfd,
    /// Inplace knowledge distillation: KL(p_L ‖ p_l), unbounded.
    Ipkd,
    /// Plain cross-entropy at every depth (λ unused).
    None,
}

/// Which depths contribute losses during local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSchedule {
    /// Depths 1..=L, the slimmable objective.
    All,
    /// Depth L only (depth-fixed baseline).
    FinalOnly,
}

/// Local-training hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Balance λ: weight of cross-entropy against the regularizer.
    pub lambda: f64,
    /// Observable scale `a` in the softmax readout.
    pub observable_scale: f64,
    /// Mini-batch size D.
    pub batch_size: usize,
    /// Local iterations (epochs) E per communication round.
    pub local_iters: usize,
    /// Parameter-shift half-width ε, in (0, π/2].
    pub shift: f64,
    /// Initial learning rate η₁.
    pub lr_init: f64,
    /// Decay rate of the schedule η_t = η₁ / (1 + decay·(t−1)).
    pub lr_decay: f64,
    pub regularizer: Regularizer,
    pub depth_schedule: DepthSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            observable_scale: 2.0,
            batch_size: 32,
            local_iters: 10,
            shift: FRAC_PI_2,
            lr_init: 0.01,
            lr_decay: 0.001,
            regularizer: Regularizer::Ipfd,
            depth_schedule: DepthSchedule::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0,1], got {}",
                self.lambda
            )));
        }
        if !(self.shift > 0.0 && self.shift <= FRAC_PI_2) {
            return Err(Error::Config(format!(
                "shift must be in (0, pi/2], got {}",
                self.shift
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lr_init <= 0.0 || self.lr_decay < 0.0 {
            return Err(Error::Config(format!(
                "learning-rate schedule needs lr_init > 0 and lr_decay >= 0, got ({}, {})",
                self.lr_init, self.lr_decay
            )));
        }
        Ok(())
    }

    /// η_t = η₁ / (1 + decay·(t−1)) for communication round t ≥ 1.
    pub fn learning_rate(&self, round: usize) -> f64 {
        self.lr_init / (1.0 + self.lr_decay * (round.saturating_sub(1)) as f64)
    }
}

/// Per-coordinate loss partial derivatives, same layout as `EsqnnParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    num_layers: usize,
    num_qubits: usize,
    values: Vec<f64>,
}

impl GradVector {
    pub fn zeros(num_layers: usize, num_qubits: usize) -> Self {
        Self {
            num_layers,
            num_qubits,
            values: vec![0.0; crate::esqnn::ANGLES_PER_SITE * num_layers * num_qubits],
        }
    }

    pub fn zeros_like(params: &EsqnnParams) -> Self {
        Self::zeros(params.num_layers(), params.num_qubits())
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn add_assign(&mut self, other: &GradVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &GradVector, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Parameters at `base − step·grad`, leaving both inputs untouched.
pub fn step_params(base: &EsqnnParams, grad: &GradVector, step: f64) -> EsqnnParams {
    let values = base
        .as_flat()
        .iter()
        .zip(grad.as_flat())
        .map(|(p, g)| p - step * g)
        .collect();
    EsqnnParams::from_flat(base.num_layers(), base.num_qubits(), values)
        .expect("shapes match by construction")
}

/// −log p_label with the probability floored at 1e-12.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-(probs[label].max(PROB_FLOOR)).ln())
}

/// 1 − |⟨ψ_L|ψ_l⟩|², in [0,1].
pub fn ipfd_loss(teacher: &StateVector, student: &StateVector) -> Result<f64> {
    Ok((1.0 - teacher.fidelity(student)?).clamp(0.0, 1.0))
}

/// KL(p_teacher ‖ p_student) = Σ p_T·log(p_T/p_S) with the 1e-12 floor.
pub fn ipkd_loss(teacher: &[f64], student: &[f64]) -> f64 {
    teacher
        .iter()
        .zip(student)
        .map(|(&pt, &ps)| {
            if pt <= PROB_FLOOR {
                0.0
            } else {
                pt * (pt / ps.max(PROB_FLOOR)).ln()
            }
        })
        .sum()
}

/// Full-depth teacher snapshot taken at the unshifted parameters.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub state: StateVector,
    pub probs: Vec<f64>,
}

impl Teacher {
    pub fn compute(model: &ModelConfig, params: &EsqnnParams, encoded: &StateVector, scale: f64) -> Result<Self> {
        let state = forward_to_depth(model, params, encoded, model.num_layers)?;
        let probs = class_probs_from_observables(&observables(model, &state)?, scale);
        Ok(Self { state, probs })
    }
}

/// Cross-entropy and regularizer pieces of one example's depth-l loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub ce: f64,
    pub reg: f64,
    pub combined: f64,
}

fn combine(cfg: &TrainConfig, ce: f64, reg: f64) -> f64 {
    match cfg.regularizer {
        Regularizer::None => ce,
        _ => cfg.lambda * ce + (1.0 - cfg.lambda) * reg,
    }
}

/// Depth-l loss of one example given a precomputed depth-l state.
fn loss_from_state(
    model: &ModelConfig,
    cfg: &TrainConfig,
    state: &StateVector,
    label: usize,
    depth: usize,
    teacher: &Teacher,
) -> Result<LossParts> {
    let probs = class_probs_from_observables(&observables(model, state)?, cfg.observable_scale);
    let ce = cross_entropy(&probs, label)?;
    let reg = if depth == model.num_layers {
        0.0
    } else {
        match cfg.regularizer {
            Regularizer::Ipfd => ipfd_loss(&teacher.state, state)?,
            Regularizer::Ipkd => ipkd_loss(&teacher.probs, &probs),
            Regularizer::None => 0.0,
        }
    };
    Ok(LossParts {
        ce,
        reg,
        combined: combine(cfg, ce, reg),
    })
}

/// States after the encoder and after each trainable layer, reused across
/// shifted evaluations so only layers at and beyond a shifted coordinate are
/// recomputed.
struct Prefixes {
    // states[j] = state after applying layers 0..j to the encoding.
    states: Vec<StateVector>,
}

impl Prefixes {
    fn compute(model: &ModelConfig, params: &EsqnnParams, encoded: &StateVector) -> Result<Self> {
        let mut states = Vec::with_capacity(model.num_layers + 1);
        states.push(encoded.clone());
        for layer in 0..model.num_layers {
            let mut next = states[layer].clone();
            crate::esqnn::apply_layer(model, params, &mut next, layer)?;
            states.push(next);
        }
        Ok(Self { states })
    }

    /// Depth-`depth` state with one coordinate overridden.
    fn forward_with_override(
        &self,
        model: &ModelConfig,
        scratch: &mut EsqnnParams,
        layer: usize,
        qubit: usize,
        angle: usize,
        value: f64,
        depth: usize,
    ) -> Result<StateVector> {
        let original = scratch.get(layer, qubit, angle);
        scratch.set(layer, qubit, angle, value);
        let mut state = self.states[layer].clone();
        for l in layer..depth {
            crate::esqnn::apply_layer(model, scratch, &mut state, l)?;
        }
        scratch.set(layer, qubit, angle, original);
        Ok(state)
    }
}

/// Parameter-shift gradient of one example's depth-l loss with the teacher
/// frozen. Coordinates in layers deeper than `depth` stay zero; each
/// coordinate i in layers 1..=depth gets (ℒ(θ+εe_i) − ℒ(θ−εe_i)) / (2ε).
pub fn shift_gradient(
    model: &ModelConfig,
    params: &EsqnnParams,
    example: &Example,
    depth: usize,
    cfg: &TrainConfig,
    teacher: &Teacher,
) -> Result<GradVector> {
    let encoded = encode(model, &example.features)?;
    let prefixes = Prefixes::compute(model, params, &encoded)?;
    shift_gradient_cached(model, params, &prefixes, example.label as usize, depth, cfg, teacher)
}

fn shift_gradient_cached(
    model: &ModelConfig,
    params: &EsqnnParams,
    prefixes: &Prefixes,
    label: usize,
    depth: usize,
    cfg: &TrainConfig,
    teacher: &Teacher,
) -> Result<GradVector> {
    if depth < 1 || depth > model.num_layers {
        return Err(Error::Argument(format!(
            "depth {depth} out of range 1..={}",
            model.num_layers
        )));
    }
    let mut grad = GradVector::zeros(model.num_layers, model.num_qubits);
    let mut scratch = params.clone();
    let eps = cfg.shift;
    for layer in 0..depth {
        for qubit in 0..model.num_qubits {
            for angle in 0..crate::esqnn::ANGLES_PER_SITE {
                let theta = params.get(layer, qubit, angle);
                let plus = prefixes.forward_with_override(
                    model, &mut scratch, layer, qubit, angle, theta + eps, depth,
                )?;
                let minus = prefixes.forward_with_override(
                    model, &mut scratch, layer, qubit, angle, theta - eps, depth,
                )?;
                let lp = loss_from_state(model, cfg, &plus, label, depth, teacher)?.combined;
                let lm = loss_from_state(model, cfg, &minus, label, depth, teacher)?.combined;
                let idx = params.index_of(layer, qubit, angle);
                grad.as_flat_mut()[idx] = (lp - lm) / (2.0 * eps);
            }
        }
    }
    Ok(grad)
}

/// Mean per-depth loss statistics over the examples of one batch.
#[derive(Debug, Clone, Default)]
pub struct DepthLoss {
    pub depth: usize,
    pub ce: f64,
    pub reg: f64,
    pub combined: f64,
}

/// Round-level loss summary: means over every (batch, depth) contribution.
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub reg: f64,
    pub combined: f64,
    pub per_depth: Vec<DepthLoss>,
}

fn active_depths(model: &ModelConfig, cfg: &TrainConfig) -> Vec<usize> {
    match cfg.depth_schedule {
        DepthSchedule::All => (1..=model.num_layers).collect(),
        DepthSchedule::FinalOnly => vec![model.num_layers],
    }
}

/// Gradient of the batch objective Σ_l (1/|batch|) Σ_examples ℒ^l, plus the
/// per-depth loss means at the unshifted parameters. Examples are reduced in
/// ascending batch order.
pub fn batch_gradient(
    model: &ModelConfig,
    cfg: &TrainConfig,
    params: &EsqnnParams,
    batch: &[&Example],
) -> Result<(GradVector, Vec<DepthLoss>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let depths = active_depths(model, cfg);
    let mut grad = GradVector::zeros(model.num_layers, model.num_qubits);
    let mut stats: Vec<DepthLoss> = depths
        .iter()
        .map(|&d| DepthLoss {
            depth: d,
            ..DepthLoss::default()
        })
        .collect();
    let inv = 1.0 / batch.len() as f64;
    for example in batch {
        let encoded = encode(model, &example.features)?;
        let prefixes = Prefixes::compute(model, params, &encoded)?;
        let teacher = Teacher {
            state: prefixes.states[model.num_layers].clone(),
            probs: class_probs_from_observables(
                &observables(model, &prefixes.states[model.num_layers])?,
                cfg.observable_scale,
            ),
        };
        for (slot, &depth) in depths.iter().enumerate() {
            let parts = loss_from_state(
                model,
                cfg,
                &prefixes.states[depth],
                example.label as usize,
                depth,
                &teacher,
            )?;
            stats[slot].ce += inv * parts.ce;
            stats[slot].reg += inv * parts.reg;
            stats[slot].combined += inv * parts.combined;
            let g = shift_gradient_cached(
                model,
                params,
                &prefixes,
                example.label as usize,
                depth,
                cfg,
                &teacher,
            )?;
            grad.add_scaled(&g, inv);
        }
    }
    Ok((grad, stats))
}

/// Output of one device's local round.
#[derive(Debug, Clone)]
pub struct RoundTrainOutput {
    /// Parameters after all local updates, equal to start − η·grad_sum.
    pub params: EsqnnParams,
    /// Accumulated raw batch gradients: the payload a device transmits.
    pub grad_sum: GradVector,
    pub losses: LossBreakdown,
}

/// Run E local epochs of mini-batch SGD from `start`.
///
/// The live parameters are maintained as start − η·(accumulated gradient), so
/// the returned `params` and `grad_sum` satisfy the same identity bit for bit
/// that the server-side update applies.
pub fn local_train_round<R: Rng>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    start: &EsqnnParams,
    shard: &[Example],
    eta: f64,
    rng: &mut R,
) -> Result<RoundTrainOutput> {
    model.validate()?;
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::Config("local training shard is empty".into()));
    }
    let mut accum = GradVector::zeros(model.num_layers, model.num_qubits);
    let depths = active_depths(model, cfg);
    let mut totals: Vec<DepthLoss> = depths
        .iter()
        .map(|&d| DepthLoss {
            depth: d,
            ..DepthLoss::default()
        })
        .collect();
    let mut num_batches = 0usize;

    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _epoch in 0..cfg.local_iters {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let current = step_params(start, &accum, eta);
            let batch: Vec<&Example> = chunk.iter().map(|&i| &shard[i]).collect();
            let (grad, stats) = batch_gradient(model, cfg, &current, &batch)?;
            accum.add_assign(&grad);
            for (t, s) in totals.iter_mut().zip(&stats) {
                t.ce += s.ce;
                t.reg += s.reg;
                t.combined += s.combined;
            }
            num_batches += 1;
        }
    }

    let params = step_params(start, &accum, eta);
    let losses = if num_batches == 0 {
        LossBreakdown {
            per_depth: totals,
            ..LossBreakdown::default()
        }
    } else {
        let inv = 1.0 / num_batches as f64;
        let per_depth: Vec<DepthLoss> = totals
            .into_iter()
            .map(|t| DepthLoss {
                depth: t.depth,
                ce: t.ce * inv,
                reg: t.reg * inv,
                combined: t.combined * inv,
            })
            .collect();
        let n = per_depth.len() as f64;
        LossBreakdown {
            ce: per_depth.iter().map(|d| d.ce).sum::<f64>() / n,
            reg: per_depth.iter().map(|d| d.reg).sum::<f64>() / n,
            combined: per_depth.iter().map(|d| d.combined).sum::<f64>() / n,
            per_depth,
        }
    };

    Ok(RoundTrainOutput {
        params,
        grad_sum: accum,
        losses,
    })
}
