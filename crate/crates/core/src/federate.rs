//! The federation loop: broadcast, parallel local training, channel-gated
//! gradient collection into per-layer decode sets, masked averaging with the
//! skip rule.
//!
//! Every round: all K devices train locally from the broadcast parameters,
//! each device's fading draw decides which layer messages the server decodes,
//! and the server applies Θ ← Θ − η_t Σ_l (1/|X_l|) Σ_{k∈X_l} g_k ⊙ Ξ_l. If
//! any X_l is empty the whole aggregation is skipped and Θ is untouched.
//! Device order, channel draws and reductions are keyed by (seed, round,
//! device), so worker count cannot change a single bit of the output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::time::Instant;

use crate::channel::{decode_thresholds, decode_with_fading, sample_fading, ChannelConfig,
    DecodeOutcome, PowerAllocation};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::esqnn::{DepthMask, EsqnnParams, ModelConfig};
use crate::metrics::{self, EntropyAuditConfig, RoundLog};
use crate::seeds;
use crate::train::{local_train_round, DepthSchedule, GradVector, TrainConfig};

/// Server-side weighting of decoded gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// 1/|X_l| over the actually decoded devices (the executable rule).
    SampleAverage,
    /// 1/(K·p_l), the analysis surrogate for bound-tracking experiments.
    AnalyticScale,
}

/// Evaluation cadence and entropy-audit settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Evaluate on rounds divisible by this (and on the final round);
    /// 0 disables evaluation entirely.
    pub every: usize,
    pub entropy: EntropyAuditConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 5,
            entropy: EntropyAuditConfig::default(),
        }
    }
}

/// Full federation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FLConfig {
    pub devices: usize,
    pub rounds: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub channel: ChannelConfig,
    pub power: PowerAllocation,
    pub seed: u64,
    pub aggregation: AggregationRule,
    /// Depth-fixed baseline: train the final depth only and send the whole
    /// gradient as a single message.
    pub vanilla_qfl: bool,
    /// Half-width of the uniform initialization draw. Near-identity starts
    /// (small scale) make every sub-model coincide at round 1, which is what
    /// lets fidelity distillation hold them together during training.
    pub init_scale: f64,
    pub eval: EvalConfig,
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::Config("need at least one device".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.channel.validate()?;
        let expected_levels = if self.vanilla_qfl {
            1
        } else {
            self.model.num_layers
        };
        if self.power.levels() != expected_levels {
            return Err(Error::Config(format!(
                "power allocation has {} levels, expected {expected_levels}",
                self.power.levels()
            )));
        }
        if self.vanilla_qfl && self.train.depth_schedule != DepthSchedule::FinalOnly {
            return Err(Error::Config(
                "vanilla_qfl requires the final-only depth schedule".into(),
            ));
        }
        if !(self.init_scale > 0.0) || self.init_scale > std::f64::consts::PI {
            return Err(Error::Config(format!(
                "init_scale must be in (0, pi], got {}",
                self.init_scale
            )));
        }
        self.power.check_feasible(&self.channel)?;
        Ok(())
    }

    /// Coordinate range of each transmitted message.
    pub fn message_ranges(&self) -> Vec<Range<usize>> {
        if self.vanilla_qfl {
            vec![0..self.model.num_params()]
        } else {
            (1..=self.model.num_layers)
                .map(|l| {
                    DepthMask::new(l, self.model.num_layers, self.model.num_qubits)
                        .expect("validated layer index")
                        .range()
                })
                .collect()
        }
    }
}

/// Mutable server state.
#[derive(Debug, Clone)]
pub struct GlobalState {
    pub params: EsqnnParams,
    pub round: usize,
    pub eta: f64,
}

impl GlobalState {
    /// Shared initial draw used by the server and, via broadcast, by every
    /// device.
    pub fn init(cfg: &FLConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeds::stream(cfg.seed, seeds::labels::INIT, 0, 0);
        Ok(Self {
            params: EsqnnParams::random_init_scaled(&cfg.model, cfg.init_scale, &mut rng),
            round: 0,
            eta: cfg.train.learning_rate(1),
        })
    }
}

/// Result of one aggregation attempt.
#[derive(Debug, Clone)]
pub enum AggregateOutcome {
    Updated(EsqnnParams),
    /// Some layer had no decoded gradient; parameters stay bitwise unchanged.
    Skipped,
}

/// Masked federated average. `message_ranges[l]` is the coordinate span of
/// message l and `p[l]` its closed-form decode probability (used by the
/// analytic rule only). Devices are reduced in ascending index order.
pub fn aggregate(
    theta: &EsqnnParams,
    grads: &[GradVector],
    outcomes: &[DecodeOutcome],
    eta: f64,
    rule: AggregationRule,
    p: &[f64],
    message_ranges: &[Range<usize>],
) -> Result<AggregateOutcome> {
    if grads.len() != outcomes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gradients vs {} decode outcomes",
            grads.len(),
            outcomes.len()
        )));
    }
    let decode_sets: Vec<Vec<usize>> = (0..message_ranges.len())
        .map(|l| {
            (0..outcomes.len())
                .filter(|&k| outcomes[k].decodes(l + 1))
                .collect()
        })
        .collect();
    if decode_sets.iter().any(Vec::is_empty) {
        return Ok(AggregateOutcome::Skipped);
    }

    let mut next = theta.clone();
    for (l, range) in message_ranges.iter().enumerate() {
        let scale = match rule {
            AggregationRule::SampleAverage => 1.0 / decode_sets[l].len() as f64,
            AggregationRule::AnalyticScale => 1.0 / (grads.len() as f64 * p[l]),
        };
        for idx in range.clone() {
            let mut sum = 0.0;
            for &k in &decode_sets[l] {
                sum += grads[k].as_flat()[idx];
            }
            next.as_flat_mut()[idx] -= eta * scale * sum;
        }
    }
    Ok(AggregateOutcome::Updated(next))
}

/// Per-device fading draws for round `t`, keyed (seed, round, device).
pub fn decode_phase(cfg: &FLConfig, round: usize) -> Result<Vec<DecodeOutcome>> {
    let thresholds = decode_thresholds(&cfg.power, &cfg.channel)?;
    Ok((0..cfg.devices)
        .map(|k| {
            let mut rng = seeds::stream(cfg.seed, seeds::labels::CHANNEL, round as u64, k as u64);
            decode_with_fading(sample_fading(&mut rng), &thresholds)
        })
        .collect())
}

/// Run one communication round: broadcast, local training on every device,
/// channel sampling, aggregation, learning-rate advance.
pub fn run_round(
    state: &mut GlobalState,
    cfg: &FLConfig,
    shards: &[Vec<Example>],
    testset: &[Example],
) -> Result<RoundLog> {
    let started = Instant::now();
    let t = state.round + 1;
    let eta = cfg.train.learning_rate(t);

    let broadcast = state.params.clone();
    let mut results: Vec<Result<crate::train::RoundTrainOutput>> = Vec::new();
    (0..cfg.devices)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds::stream(cfg.seed, seeds::labels::SHUFFLE, t as u64, k as u64);
            local_train_round(&cfg.model, &cfg.train, &broadcast, &shards[k], eta, &mut rng)
        })
        .collect_into_vec(&mut results);
    let mut grads = Vec::with_capacity(cfg.devices);
    let mut loss_sum = 0.0;
    for r in results {
        let out = r?;
        loss_sum += out.losses.combined;
        grads.push(out.grad_sum);
    }

    let outcomes = decode_phase(cfg, t)?;
    let p = crate::channel::closed_form_p(&cfg.power, &cfg.channel)?;
    let ranges = cfg.message_ranges();
    let outcome = aggregate(
        &state.params,
        &grads,
        &outcomes,
        eta,
        cfg.aggregation,
        &p,
        &ranges,
    )?;
    let skipped = match outcome {
        AggregateOutcome::Updated(params) => {
            state.params = params;
            false
        }
        AggregateOutcome::Skipped => true,
    };
    state.round = t;
    state.eta = eta;

    let decode_counts: Vec<usize> = (0..ranges.len())
        .map(|l| outcomes.iter().filter(|o| o.decodes(l + 1)).count())
        .collect();

    let evaluate = cfg.eval.every > 0
        && !testset.is_empty()
        && (t % cfg.eval.every == 0 || t == cfg.rounds);
    let (accuracy, fidelity, entropy) = if evaluate {
        let acc = (1..=cfg.model.num_layers)
            .map(|d| metrics::top1_accuracy(&cfg.model, &state.params, d, testset))
            .collect::<Result<Vec<f64>>>()?;
        let fid = metrics::fidelity_audit(&cfg.model, &state.params, testset)?;
        let ent =
            metrics::entropy_audit(&cfg.model, &state.params, testset, &cfg.eval.entropy)?;
        (Some(acc), Some(fid), Some(ent.per_depth))
    } else {
        (None, None, None)
    };

    Ok(RoundLog {
        round: t,
        accuracy,
        fidelity,
        entropy,
        decode_counts,
        loss: loss_sum / cfg.devices as f64,
        skipped,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Run T rounds from a fresh shared initialization.
pub fn run_experiment(
    cfg: &FLConfig,
    shards: &[Vec<Example>],
    testset: &[Example],
) -> Result<(Vec<RoundLog>, EsqnnParams)> {
    cfg.validate()?;
    if shards.len() != cfg.devices {
        return Err(Error::Config(format!(
            "{} shards for {} devices",
            shards.len(),
            cfg.devices
        )));
    }
    let mut state = GlobalState::init(cfg)?;
    let mut logs = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        logs.push(run_round(&mut state, cfg, shards, testset)?);
    }
    Ok((logs, state.params))
}
