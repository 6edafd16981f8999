//! Per-batch estimators of the fair learning objective.
//!
//! `Û_b` is an unbiased estimate of the squared MMD between the two
//! group-conditional score laws, `R̂_b` reweights the per-class losses by
//! `Δ(N, n_a)` so the batch loss stays unbiased even though the batch size and
//! composition are random.

use crate::batching::{delta_correction, Group};
use crate::error::{Error, Result};
use crate::ipm::{EmpiricalSample, KernelSpec, Metric};

/// Model scores and losses over one batch, split by protected class.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    scores: [Vec<f64>; 2],
    losses: [Vec<f64>; 2],
    target_size: usize,
}

impl BatchOutputs {
    pub fn new(
        scores0: Vec<f64>,
        scores1: Vec<f64>,
        losses0: Vec<f64>,
        losses1: Vec<f64>,
        target_size: usize,
    ) -> Result<Self> {
        for (g, s, l) in [(0, &scores0, &losses0), (1, &scores1, &losses1)] {
            if s.len() < 2 {
                return Err(Error::invalid(format!(
                    "group {g} has {} scores, the U-statistic needs at least 2",
                    s.len()
                )));
            }
            if s.len() != l.len() {
                return Err(Error::invalid(format!(
                    "group {g} has {} scores but {} losses",
                    s.len(),
                    l.len()
                )));
            }
        }
        let out = Self {
            scores: [scores0, scores1],
            losses: [losses0, losses1],
            target_size,
        };
        // Validates N >= N̄ and the class counts against the batch law.
        loss_weights(out.count(Group::Zero), out.count(Group::One), target_size)?;
        Ok(out)
    }

    pub fn scores(&self, g: Group) -> &[f64] {
        &self.scores[g.index()]
    }

    pub fn losses(&self, g: Group) -> &[f64] {
        &self.losses[g.index()]
    }

    pub fn count(&self, g: Group) -> usize {
        self.scores[g.index()].len()
    }

    /// Batch size `N`.
    pub fn total(&self) -> usize {
        self.scores[0].len() + self.scores[1].len()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }
}

/// Per-sample loss weights `Δ(N, n_a) / N` for each class.
pub fn loss_weights(n0: usize, n1: usize, target_size: usize) -> Result<[f64; 2]> {
    let total = n0 + n1;
    Ok([
        delta_correction(total, n0, target_size)? / total as f64,
        delta_correction(total, n1, target_size)? / total as f64,
    ])
}

/// Unbiased squared-MMD estimate from the two score groups.
///
/// Within-group sums run over ordered pairs `i ≠ j`; the result may be
/// negative and is deliberately not clamped.
pub fn u_stat_mmd_scores(scores0: &[f64], scores1: &[f64], k: &KernelSpec) -> Result<f64> {
    if scores0.len() < 2 || scores1.len() < 2 {
        return Err(Error::invalid("the MMD U-statistic needs at least 2 scores per group"));
    }
    k.validate()?;
    Ok(u_stat_value(scores0, scores1, k))
}

fn within_sum(s: &[f64], k: &KernelSpec) -> f64 {
    let mut total = 0.0;
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            total += k.eval(s[i], s[j]);
        }
    }
    // Symmetric kernel: each unordered pair stands for two ordered ones.
    2.0 * total
}

fn u_stat_value(s0: &[f64], s1: &[f64], k: &KernelSpec) -> f64 {
    let (n0, n1) = (s0.len() as f64, s1.len() as f64);
    let cross: f64 = s0.iter().map(|&x| s1.iter().map(|&y| k.eval(x, y)).sum::<f64>()).sum();
    within_sum(s0, k) / (n0 * (n0 - 1.0)) + within_sum(s1, k) / (n1 * (n1 - 1.0)) - 2.0 * cross / (n0 * n1)
}

pub fn u_stat_mmd(out: &BatchOutputs, k: &KernelSpec) -> Result<f64> {
    u_stat_mmd_scores(out.scores(Group::Zero), out.scores(Group::One), k)
}

/// `Û_b` together with its partial derivatives with respect to every score.
pub fn u_stat_mmd_with_grad(s0: &[f64], s1: &[f64], k: &KernelSpec) -> Result<(f64, [Vec<f64>; 2])> {
    let value = u_stat_mmd_scores(s0, s1, k)?;
    let (n0, n1) = (s0.len() as f64, s1.len() as f64);
    let within = |s: &[f64], n: f64| -> Vec<f64> {
        let c = 2.0 / (n * (n - 1.0));
        (0..s.len())
            .map(|i| {
                let g: f64 = (0..s.len()).filter(|&j| j != i).map(|j| k.grad_first(s[i], s[j])).sum();
                c * g
            })
            .collect()
    };
    let c = 2.0 / (n0 * n1);
    let mut g0 = within(s0, n0);
    let mut g1 = within(s1, n1);
    for (i, &x) in s0.iter().enumerate() {
        g0[i] -= c * s1.iter().map(|&y| k.grad_first(x, y)).sum::<f64>();
    }
    for (j, &y) in s1.iter().enumerate() {
        g1[j] -= c * s0.iter().map(|&x| k.grad_first(y, x)).sum::<f64>();
    }
    Ok((value, [g0, g1]))
}

/// Bias-corrected batch loss `R̂_b = N⁻¹ Σ_a Δ(N, n_a) Σ_{i∈a} loss_i`.
pub fn corrected_loss(out: &BatchOutputs) -> Result<f64> {
    corrected_loss_with(out, delta_correction)
}

/// [`corrected_loss`] with a caller-supplied correction `Δ(N, n, N̄)`.
pub fn corrected_loss_with(
    out: &BatchOutputs,
    delta: impl Fn(usize, usize, usize) -> Result<f64>,
) -> Result<f64> {
    let total = out.total();
    let mut acc = 0.0;
    for g in Group::BOTH {
        let d = delta(total, out.count(g), out.target_size)?;
        acc += d * out.losses(g).iter().sum::<f64>();
    }
    Ok(acc / total as f64)
}

/// Uncorrected batch mean of the losses, biased under random batch sizes.
pub fn plain_loss(out: &BatchOutputs) -> f64 {
    let sum: f64 = Group::BOTH.iter().map(|&g| out.losses(g).iter().sum::<f64>()).sum();
    sum / out.total() as f64
}

/// `R̂_b + λ Û_b`.
pub fn objective_estimate(out: &BatchOutputs, lambda: f64, k: &KernelSpec) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(corrected_loss(out)? + lambda * u_stat_mmd(out, k)?)
}

/// Regularization function applied to an IPM value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    /// `c · z`
    Linear(f64),
    /// `c · z²`
    Squared(f64),
}

impl Rho {
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Rho::Linear(c) => c * z,
            Rho::Squared(c) => c * z * z,
        }
    }
}

/// Plug-in penalty `ρ(D(P̂0, P̂1))` on the uniform empirical score measures.
pub fn naive_penalty(scores0: &[f64], scores1: &[f64], metric: &Metric, rho: Rho) -> Result<f64> {
    if scores0.is_empty() || scores1.is_empty() {
        return Err(Error::invalid("naive penalty needs at least one score per group"));
    }
    let a = EmpiricalSample::new(scores0)?;
    let b = EmpiricalSample::new(scores1)?;
    Ok(rho.apply(metric.distance(&a, &b)?))
}
