//! Evaluation and audit: per-depth accuracy, fidelity and entanglement-entropy
//! audits, the non-IIDness estimate, and CSV emission of round logs.
//!
//! Entropy is reported as the bipartite entanglement entropy of the depth-l
//! state under a fixed qubit split (labelled `entropy_bipartite` in outputs);
//! it is a concrete stand-in for inter-depth entropy accounting, which has no
//! single canonical construction.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::Example;
use crate::error::{Error, Result};
use crate::esqnn::{class_probs_from_observables, encode, forward_to_depth, observables,
    EsqnnParams, ModelConfig};
use crate::train::{self, GradVector, TrainConfig};

/// Record of one communication round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Per-depth test accuracy, present on evaluation rounds.
    pub accuracy: Option<Vec<f64>>,
    /// Mean fidelity F(ψ_L, ψ_l) for l = 1..L−1, present on evaluation rounds.
    pub fidelity: Option<Vec<f64>>,
    /// Per-depth mean bipartite entropy in bits, present on evaluation rounds.
    pub entropy: Option<Vec<f64>>,
    /// Decode-set sizes |X_l|.
    pub decode_counts: Vec<usize>,
    /// Mean combined local loss over devices.
    pub loss: f64,
    pub skipped: bool,
    pub wall_secs: f64,
}

/// Entropy-audit settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyAuditConfig {
    /// Qubits kept by the partial trace; must be a nonempty proper subset.
    pub bipartition: Vec<usize>,
    /// Optional per-depth thresholds for the train indicator.
    pub thresholds: Option<Vec<f64>>,
}

impl Default for EntropyAuditConfig {
    fn default() -> Self {
        Self {
            bipartition: vec![0, 1],
            thresholds: None,
        }
    }
}

/// Entropy audit output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyAudit {
    /// Mean entropy after each depth 1..=L, in bits.
    pub per_depth: Vec<f64>,
    /// Mean encoder-state entropy (depth 0), in bits.
    pub encoding: f64,
    /// Product of per-depth threshold tests on the cumulative entropy
    /// Σ_{l'<l} S_{l'}; present only when thresholds are configured.
    pub train_indicator: Option<bool>,
}

/// Fraction of test examples whose argmax readout at `depth` matches the
/// label; ties break toward the lowest class index.
pub fn top1_accuracy(
    model: &ModelConfig,
    params: &EsqnnParams,
    depth: usize,
    testset: &[Example],
) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let mut hits = 0usize;
    for example in testset {
        let encoded = encode(model, &example.features)?;
        let state = forward_to_depth(model, params, &encoded, depth)?;
        let probs = class_probs_from_observables(
            &observables(model, &state)?,
            model.observable_scale,
        );
        let mut arg = 0usize;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[arg] {
                arg = c;
            }
        }
        if arg == usize::from(example.label) {
            hits += 1;
        }
    }
    Ok(hits as f64 / testset.len() as f64)
}

/// Mean fidelity F(ψ_L, ψ_l) over the test set for every l = 1..L−1.
pub fn fidelity_audit(
    model: &ModelConfig,
    params: &EsqnnParams,
    testset: &[Example],
) -> Result<Vec<f64>> {
    if testset.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let depths = model.num_layers;
    let mut sums = vec![0.0; depths - 1];
    for example in testset {
        let encoded = encode(model, &example.features)?;
        let teacher = forward_to_depth(model, params, &encoded, depths)?;
        for l in 1..depths {
            let student = forward_to_depth(model, params, &encoded, l)?;
            sums[l - 1] += teacher.fidelity(&student)?;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| (s / testset.len() as f64).clamp(0.0, 1.0))
        .collect())
}

/// Mean bipartite entanglement entropy after each depth, plus the train
/// indicator when thresholds are configured.
pub fn entropy_audit(
    model: &ModelConfig,
    params: &EsqnnParams,
    testset: &[Example],
    cfg: &EntropyAuditConfig,
) -> Result<EntropyAudit> {
    if testset.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if let Some(th) = &cfg.thresholds {
        if th.len() != model.num_layers {
            return Err(Error::Config(format!(
                "need {} thresholds, got {}",
                model.num_layers,
                th.len()
            )));
        }
    }
    let n = testset.len() as f64;
    let mut encoding = 0.0;
    let mut per_depth = vec![0.0; model.num_layers];
    for example in testset {
        let encoded = encode(model, &example.features)?;
        encoding += encoded
            .reduced_density(&cfg.bipartition)?
            .von_neumann_entropy()?;
        for depth in 1..=model.num_layers {
            let state = forward_to_depth(model, params, &encoded, depth)?;
            per_depth[depth - 1] += state
                .reduced_density(&cfg.bipartition)?
                .von_neumann_entropy()?;
        }
    }
    encoding /= n;
    for s in &mut per_depth {
        *s /= n;
    }
    let train_indicator = cfg.thresholds.as_ref().map(|th| {
        // Depth l is tested on the accumulated entropy of everything before
        // it, starting from the encoding state.
        let mut cumulative = encoding;
        let mut ok = true;
        for (l, &threshold) in th.iter().enumerate() {
            ok &= cumulative < threshold;
            cumulative += per_depth[l];
        }
        ok
    });
    Ok(EntropyAudit {
        per_depth,
        encoding,
        train_indicator,
    })
}

/// Non-IIDness estimate δ̂ = (1/K) Σ_k ‖G_k − Ḡ‖², where G_k is device k's
/// full-shard gradient and Ḡ the pooled-data gradient, both at the probe
/// parameters.
pub fn noniid_delta(
    model: &ModelConfig,
    cfg: &TrainConfig,
    shards: &[Vec<Example>],
    probe: &EsqnnParams,
) -> Result<f64> {
    if shards.len() < 2 {
        return Err(Error::Config("need at least 2 devices".into()));
    }
    let full_shard_grad = |examples: &[Example]| -> Result<GradVector> {
        let refs: Vec<&Example> = examples.iter().collect();
        Ok(train::batch_gradient(model, cfg, probe, &refs)?.0)
    };
    let pooled: Vec<Example> = shards.iter().flatten().cloned().collect();
    let pooled_grad = full_shard_grad(&pooled)?;
    let mut delta = 0.0;
    for shard in shards {
        if shard.is_empty() {
            return Err(Error::Config("empty shard in non-IIDness estimate".into()));
        }
        let g = full_shard_grad(shard)?;
        let diff: f64 = g
            .as_flat()
            .iter()
            .zip(pooled_grad.as_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        delta += diff;
    }
    Ok(delta / shards.len() as f64)
}

/// Format with 6 significant digits, stable across round trips.
fn fmt_sig(value: f64) -> String {
    if value == 0.0 {
        return "0.00000".into();
    }
    format!("{value:.5e}")
}

/// Write round logs as CSV: header then one row per round. Metrics absent on
/// non-evaluation rounds appear as empty fields.
pub fn emit_csv(logs: &[RoundLog], num_layers: usize, path: &Path) -> Result<()> {
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut writer = csv::Writer::from_writer(file);

    let mut header = vec!["t".to_string()];
    header.extend((1..=num_layers).map(|l| format!("acc_l{l}")));
    header.extend((1..num_layers).map(|l| format!("fid_l{l}")));
    header.extend((1..=num_layers).map(|l| format!("ent_l{l}")));
    header.extend((1..=num_layers).map(|l| format!("x{l}")));
    header.push("loss".into());
    header.push("skipped".into());
    writer
        .write_record(&header)
        .map_err(|e| csv_err(path, e))?;

    for log in logs {
        let mut row = vec![log.round.to_string()];
        push_opt(&mut row, &log.accuracy, num_layers);
        push_opt(&mut row, &log.fidelity, num_layers - 1);
        push_opt(&mut row, &log.entropy, num_layers);
        for l in 0..num_layers {
            row.push(log.decode_counts.get(l).copied().unwrap_or(0).to_string());
        }
        row.push(fmt_sig(log.loss));
        row.push(if log.skipped { "true" } else { "false" }.into());
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

fn push_opt(row: &mut Vec<String>, values: &Option<Vec<f64>>, width: usize) {
    match values {
        Some(v) => {
            for i in 0..width {
                row.push(v.get(i).map(|x| fmt_sig(*x)).unwrap_or_default());
            }
        }
        None => row.extend(std::iter::repeat_n(String::new(), width)),
    }
}
