//! Convergence-bound calculator and superposition-coding power optimizer.
//!
//! The optimality-gap bound after t rounds is
//!
//!   gap(t) ≤ (β/μ) · (μβΔ₁ + 2B) / (μt + 2β − μ),
//!   B = (E·L²·(2+(a−2)λ)² + L·δ) · Σ_l p_l⁻²,
//!
//! so the only channel-dependent factor is Σ_l p_l⁻². The optimizer minimizes
//! that factor over the feasible power simplex; the alternative literal
//! objective Σ_l exp(−(2/γ̄)/(ν_l/u′ − Σ_{l'>l}ν_{l'})) is kept behind a flag
//! for comparison (its sign is inconsistent with minimizing the bound).

use serde::{Deserialize, Serialize};

use crate::channel::{closed_form_p, ChannelConfig, PowerAllocation};
use crate::error::{Error, Result};

/// Everything the Theorem-1 curve needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Local iterations per round E.
    pub local_iters: usize,
    /// Depth levels L.
    pub levels: usize,
    /// Observable scale a.
    pub observable_scale: f64,
    /// Loss balance λ.
    pub lambda: f64,
    /// Non-IIDness δ.
    pub delta: f64,
    /// Per-layer decoding success probabilities, each in (0,1].
    pub p: Vec<f64>,
    /// Strong-convexity constant μ.
    pub mu: f64,
    /// Smoothness constant β.
    pub beta: f64,
    /// Initial squared distance Δ₁ = ‖Θ₁ − Θ*‖².
    pub delta1: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.local_iters == 0 || self.levels == 0 || self.p.len() != self.levels {
            return Err(Error::Config(format!(
                "need E >= 1 and p of length L = {}, got E = {}, |p| = {}",
                self.levels,
                self.local_iters,
                self.p.len()
            )));
        }
        if self.mu <= 0.0 || self.beta <= 0.0 || self.delta < 0.0 || self.delta1 < 0.0 {
            return Err(Error::Config(
                "mu, beta must be positive; delta, delta1 nonnegative".into(),
            ));
        }
        for (i, &p) in self.p.iter().enumerate() {
            if p <= 0.0 {
                return Err(Error::Divergence(format!(
                    "p[{}] = {p}: the bound diverges when any layer is never decoded",
                    i + 1
                )));
            }
            if p > 1.0 {
                return Err(Error::Config(format!("p[{}] = {p} exceeds 1", i + 1)));
            }
        }
        Ok(())
    }
}

/// B = (E·L²·(2+(a−2)λ)² + L·δ) · Σ p_l⁻².
pub fn bound_b(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let l = inputs.levels as f64;
    let g = 2.0 + (inputs.observable_scale - 2.0) * inputs.lambda;
    let inv_p2: f64 = inputs.p.iter().map(|p| 1.0 / (p * p)).sum();
    Ok((inputs.local_iters as f64 * l * l * g * g + l * inputs.delta) * inv_p2)
}

/// Optimality-gap bound for t = 1..=t_max; strictly decreasing and O(1/t).
pub fn gap_curve(inputs: &BoundInputs, t_max: usize) -> Result<Vec<f64>> {
    inputs.validate()?;
    if inputs.mu > inputs.beta {
        return Err(Error::Validation(format!(
            "mu = {} must not exceed beta = {}",
            inputs.mu, inputs.beta
        )));
    }
    let b = bound_b(inputs)?;
    let numerator = inputs.mu * inputs.beta * inputs.delta1 + 2.0 * b;
    let ratio = inputs.beta / inputs.mu;
    let curve: Vec<f64> = (1..=t_max)
        .map(|t| ratio * numerator / (inputs.mu * t as f64 + 2.0 * inputs.beta - inputs.mu))
        .collect();
    debug_assert!(curve.windows(2).all(|w| w[1] < w[0]));
    Ok(curve)
}

/// Objective used by the allocation optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Σ_l p_l⁻², the ν-dependent factor of the convergence bound.
    InverseSquareSum,
    /// The literal printed form Σ_l exp(−(2/γ̄)/(ν_l/u′ − Σ_{l'>l}ν_{l'})).
    LiteralExp,
}

fn evaluate_objective(
    nu: &PowerAllocation,
    cfg: &ChannelConfig,
    objective: Objective,
) -> Result<f64> {
    match objective {
        Objective::InverseSquareSum => {
            let p = closed_form_p(nu, cfg)?;
            Ok(p.iter().map(|p| 1.0 / (p * p)).sum())
        }
        Objective::LiteralExp => {
            nu.check_feasible(cfg)?;
            let levels = nu.levels();
            let mut suffix = 0.0;
            let mut value = 0.0;
            for j in (0..levels).rev() {
                value += (-(2.0 / cfg.mean_snr) / (nu.nu[j] / cfg.u_prime - suffix)).exp();
                suffix += nu.nu[j];
            }
            Ok(value)
        }
    }
}

/// Optimizer output: the allocation and its objective value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizedAllocation {
    pub nu: PowerAllocation,
    pub objective: f64,
}

/// Enumerate compositions (k_1..k_levels), Σ k_i = n, as candidate points
/// ν_i = k_i / n, calling `f` on each.
fn for_each_grid_point<F: FnMut(&[usize])>(levels: usize, n: usize, f: &mut F) {
    fn rec<F: FnMut(&[usize])>(prefix: &mut Vec<usize>, remaining: usize, slots: usize, f: &mut F) {
        if slots == 1 {
            prefix.push(remaining);
            f(prefix);
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(prefix, remaining - k, slots - 1, f);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(levels), n, levels, f);
}

fn try_allocation(
    nu: Vec<f64>,
    cfg: &ChannelConfig,
    objective: Objective,
) -> Option<(PowerAllocation, f64)> {
    let alloc = PowerAllocation::new(nu).ok()?;
    alloc.check_feasible(cfg).ok()?;
    let value = evaluate_objective(&alloc, cfg, objective).ok()?;
    value.is_finite().then_some((alloc, value))
}

/// Grid search over the feasible power simplex followed by pairwise
/// coordinate descent with a halving step, down to 1e-6.
///
/// Ties on the grid break lexicographically on ν so the result is
/// independent of evaluation order.
pub fn optimize_allocation(
    levels: usize,
    cfg: &ChannelConfig,
    grid_step: f64,
    objective: Objective,
) -> Result<OptimizedAllocation> {
    cfg.validate()?;
    if levels < 2 {
        return Err(Error::Infeasible {
            index: levels,
            detail: "superposition coding needs at least 2 levels".into(),
        });
    }
    if !(1e-4..=1e-2).contains(&grid_step) {
        return Err(Error::Config(format!(
            "grid_step must be in [1e-4, 1e-2], got {grid_step}"
        )));
    }
    let n = (1.0 / grid_step).round() as usize;

    let mut best: Option<(PowerAllocation, f64)> = None;
    for_each_grid_point(levels, n, &mut |counts| {
        let nu: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
        if let Some((alloc, value)) = try_allocation(nu, cfg, objective) {
            let better = match &best {
                None => true,
                Some((b_alloc, b_value)) => {
                    value < *b_value
                        || (value == *b_value
                            && alloc.nu.as_slice() < b_alloc.nu.as_slice())
                }
            };
            if better {
                best = Some((alloc, value));
            }
        }
    });
    let (mut alloc, mut value) = best.ok_or_else(|| Error::Infeasible {
        index: 1,
        detail: format!(
            "no feasible allocation on the step-{grid_step} grid (u' = {} too large for {levels} levels)",
            cfg.u_prime
        ),
    })?;

    // Move mass between coordinate pairs; halve the step on stagnation.
    let mut step = grid_step;
    let mut passes = 0;
    while step >= 1e-6 && passes < 10_000 {
        passes += 1;
        let mut improved = false;
        for from in 0..levels {
            for to in 0..levels {
                if from == to || alloc.nu[from] < step {
                    continue;
                }
                let mut candidate = alloc.nu.clone();
                candidate[from] -= step;
                candidate[to] += step;
                if let Some((c_alloc, c_value)) = try_allocation(candidate, cfg, objective) {
                    if c_value < value {
                        alloc = c_alloc;
                        value = c_value;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    Ok(OptimizedAllocation {
        nu: alloc,
        objective: value,
    })
}

/// Closed-form two-level allocation in the low-SNR regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedFormL2 {
    pub nu: PowerAllocation,
    /// Whether the formula's output also satisfies ν₁ > u′·ν₂. The closed
    /// form can land outside that region; callers get the flag, not a failure.
    pub sic_feasible: bool,
}

/// ν₁* = −(√(u′+1) − u′² + 1) / (u′² + u′), valid for u′ ≥ (1+√5)/2.
pub fn closed_form_l2_low_snr(u_prime: f64) -> Result<ClosedFormL2> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    if u_prime < golden {
        return Err(Error::Validation(format!(
            "closed form requires u' >= (1+sqrt(5))/2 ~ {golden:.6}, got {u_prime}"
        )));
    }
    let nu1 = -(((u_prime + 1.0).sqrt() - u_prime * u_prime + 1.0)
        / (u_prime * u_prime + u_prime));
    let nu2 = 1.0 - nu1;
    let sic_feasible = nu1 > u_prime * nu2;
    Ok(ClosedFormL2 {
        nu: PowerAllocation::new(vec![nu1, nu2])?,
        sic_feasible,
    })
}
