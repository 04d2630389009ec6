//! JSON run configuration: explicit sections mirroring the module configs.
//! Unknown keys are rejected so sweep typos fail fast.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::channel::{ChannelConfig, PowerAllocation};
use crate::data::{self, Example, PartitionConfig};
use crate::error::{Error, Result};
use crate::esqnn::{Arch, ModelConfig};
use crate::federate::{AggregationRule, EvalConfig, FLConfig};
use crate::metrics::EntropyAuditConfig;
use crate::poweropt::{optimize_allocation, Objective};
use crate::seeds;
use crate::train::{DepthSchedule, Regularizer, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: Arch,
    pub num_qubits: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub observable_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            arch: m.arch,
            num_qubits: m.num_qubits,
            num_layers: m.num_layers,
            num_classes: m.num_classes,
            observable_scale: m.observable_scale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub batch_size: usize,
    pub local_iters: usize,
    pub shift: f64,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub regularizer: Regularizer,
    pub depth_schedule: DepthSchedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lambda: t.lambda,
            batch_size: t.batch_size,
            local_iters: t.local_iters,
            shift: t.shift,
            lr_init: t.lr_init,
            lr_decay: t.lr_decay,
            regularizer: t.regularizer,
            depth_schedule: t.depth_schedule,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// Average SNR in dB; either this or the path-loss group must be given.
    pub snr_db: Option<f64>,
    pub u_prime: Option<f64>,
    /// Alternative to `u_prime`: u' = 2^(code_rate/bandwidth) − 1.
    pub code_rate: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Alternative to `snr_db`: γ̄ = power·distance^(−path_loss_exp)/noise.
    pub power_watts: Option<f64>,
    pub distance_m: Option<f64>,
    pub path_loss_exp: Option<f64>,
    pub noise_watts: Option<f64>,
    /// Power split; omitted means "optimize on a 1e-2 grid".
    pub nu: Option<Vec<f64>>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            snr_db: Some(17.0),
            u_prime: Some(1.0),
            code_rate: None,
            bandwidth: None,
            power_watts: None,
            distance_m: None,
            path_loss_exp: None,
            noise_watts: None,
            nu: None,
        }
    }
}

impl ChannelSection {
    pub fn to_channel_config(&self) -> Result<ChannelConfig> {
        let u_prime = match (self.u_prime, self.code_rate, self.bandwidth) {
            (Some(u), None, None) => u,
            (None, Some(rate), Some(bw)) => {
                if bw <= 0.0 || rate <= 0.0 {
                    return Err(Error::Config(
                        "channel.code_rate and channel.bandwidth must be positive".into(),
                    ));
                }
                2f64.powf(rate / bw) - 1.0
            }
            _ => {
                return Err(Error::Config(
                    "channel needs either u_prime or code_rate+bandwidth".into(),
                ))
            }
        };
        match (
            self.snr_db,
            self.power_watts,
            self.distance_m,
            self.path_loss_exp,
            self.noise_watts,
        ) {
            (Some(db), None, None, None, None) => ChannelConfig::from_snr_db(db, u_prime),
            (None, Some(p), Some(d), Some(beta), Some(sigma2)) => {
                ChannelConfig::from_path_loss(p, d, beta, sigma2, u_prime)
            }
            _ => Err(Error::Config(
                "channel needs either snr_db or the full path-loss group".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub devices: usize,
    pub rounds: usize,
    pub seed: u64,
    pub aggregation: AggregationRule,
    pub vanilla_qfl: bool,
    pub init_scale: f64,
    pub eval_every: usize,
    pub entropy_bipartition: Vec<usize>,
    pub entropy_thresholds: Option<Vec<f64>>,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            devices: 10,
            rounds: 100,
            seed: 1,
            aggregation: AggregationRule::SampleAverage,
            vanilla_qfl: false,
            init_scale: 0.05,
            eval_every: 5,
            entropy_bipartition: vec![0, 1],
            entropy_thresholds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub alpha: f64,
    pub samples_per_device: usize,
    pub mnist_dir: Option<PathBuf>,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
    /// Evaluation-set cap.
    pub test_cap: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            alpha: 10.0,
            samples_per_device: 128,
            mnist_dir: None,
            synthetic_train_per_class: 600,
            synthetic_test_per_class: 64,
            test_cap: 1000,
        }
    }
}

/// Whole run configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub channel: ChannelSection,
    pub federation: FederationSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            arch: self.model.arch,
            num_qubits: self.model.num_qubits,
            num_layers: self.model.num_layers,
            num_classes: self.model.num_classes,
            observable_scale: self.model.observable_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.train.lambda,
            observable_scale: self.model.observable_scale,
            batch_size: self.train.batch_size,
            local_iters: self.train.local_iters,
            shift: self.train.shift,
            lr_init: self.train.lr_init,
            lr_decay: self.train.lr_decay,
            regularizer: self.train.regularizer,
            depth_schedule: if self.federation.vanilla_qfl {
                DepthSchedule::FinalOnly
            } else {
                self.train.depth_schedule
            },
        }
    }

    /// Assemble the federation config, optimizing the power split when the
    /// channel section omits `nu`.
    pub fn fl_config(&self) -> Result<FLConfig> {
        let channel = self.channel.to_channel_config()?;
        let power = if self.federation.vanilla_qfl {
            PowerAllocation::new(vec![1.0])?
        } else {
            match &self.channel.nu {
                Some(nu) => PowerAllocation::new(nu.clone())?,
                None => {
                    optimize_allocation(
                        self.model.num_layers,
                        &channel,
                        1e-2,
                        Objective::InverseSquareSum,
                    )?
                    .nu
                }
            }
        };
        let cfg = FLConfig {
            devices: self.federation.devices,
            rounds: self.federation.rounds,
            model: self.model_config(),
            train: self.train_config(),
            channel,
            power,
            seed: self.federation.seed,
            aggregation: self.federation.aggregation,
            vanilla_qfl: self.federation.vanilla_qfl,
            init_scale: self.federation.init_scale,
            eval: EvalConfig {
                every: self.federation.eval_every,
                entropy: EntropyAuditConfig {
                    bipartition: self.federation.entropy_bipartition.clone(),
                    thresholds: self.federation.entropy_thresholds.clone(),
                },
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and partition the dataset this config describes.
    /// Returns (per-device shards, evaluation set).
    pub fn prepare_data(&self) -> Result<(Vec<Vec<Example>>, Vec<Example>)> {
        let seed = self.federation.seed;
        let (train_pool, mut testset) = match self.data.source {
            DataSource::Synthetic => {
                let mut train_rng = seeds::stream(seed, seeds::labels::BLOBS, 0, 0);
                let mut test_rng = seeds::stream(seed, seeds::labels::BLOBS, 1, 0);
                (
                    data::synthetic_blobs(self.data.synthetic_train_per_class, &mut train_rng),
                    data::synthetic_blobs(self.data.synthetic_test_per_class, &mut test_rng),
                )
            }
            DataSource::Mnist => {
                let dir = self.data.mnist_dir.as_ref().ok_or_else(|| {
                    Error::Config("data.source is mnist but data.mnist_dir is unset".into())
                })?;
                (
                    data::load_mnist_split(dir, true)?,
                    data::load_mnist_split(dir, false)?,
                )
            }
        };
        testset.truncate(self.data.test_cap);
        let partition = PartitionConfig {
            alpha: self.data.alpha,
            devices: self.federation.devices,
            samples_per_device: self.data.samples_per_device,
        };
        let mut rng = seeds::stream(seed, seeds::labels::PARTITION, 0, 0);
        let shards = data::dirichlet_partition(&train_pool, &partition, &mut rng)?;
        Ok((shards, testset))
    }
}
