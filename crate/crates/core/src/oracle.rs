//! Brute-force ground truth on finite instances and the worked examples.

use rand::Rng as _;

use crate::batching::Group;
use crate::error::{Error, Result};
use crate::ipm::{kolmogorov, EmpiricalSample};
use crate::rng;

/// Largest support for which SP-constrained optima are enumerated.
pub const MAX_ENUMERATION_SUPPORT: usize = 20;

/// Tolerance on probability sums and on equal positive rates.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Binary classification problem with finitely many feature points.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteInstance {
    /// Feature points; the protected attribute is coordinate `protected`.
    pub support: Vec<Vec<u8>>,
    pub probs: Vec<f64>,
    /// `P[Y = 1 | X = x]` for the observed (possibly biased) label.
    pub success: Vec<f64>,
    /// `P[Y* = 1 | X = x]` for an unobserved true label, if known.
    pub true_success: Option<Vec<f64>>,
    pub protected: usize,
}

/// Which label an expected loss is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Observed,
    True,
}

/// Hypothesis table `x ↦ ŷ ∈ {0, 1}`, aligned with the instance support.
pub type Hypothesis = Vec<u8>;

impl FiniteInstance {
    pub fn new(support: Vec<Vec<u8>>, probs: Vec<f64>, success: Vec<f64>, protected: usize) -> Result<Self> {
        let inst = Self {
            support,
            probs,
            success,
            true_success: None,
            protected,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_true_success(mut self, true_success: Vec<f64>) -> Result<Self> {
        self.true_success = Some(true_success);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.support.len();
        if n == 0 || self.probs.len() != n || self.success.len() != n {
            return Err(Error::invalid("support, probabilities and success rates must be non-empty and aligned"));
        }
        if self.true_success.as_ref().is_some_and(|t| t.len() != n) {
            return Err(Error::invalid("true success rates must align with the support"));
        }
        if self.probs.iter().any(|&p| !(p >= 0.0)) || (self.probs.iter().sum::<f64>() - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::invalid("feature probabilities must be non-negative and sum to 1"));
        }
        let rates = self.success.iter().chain(self.true_success.iter().flatten());
        if rates.clone().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("success probabilities must lie in [0, 1]"));
        }
        for x in &self.support {
            match x.get(self.protected) {
                Some(0 | 1) => {}
                _ => return Err(Error::invalid("every feature point needs a binary protected coordinate")),
            }
        }
        Ok(())
    }

    pub fn group(&self, i: usize) -> Group {
        if self.support[i][self.protected] == 0 {
            Group::Zero
        } else {
            Group::One
        }
    }

    fn rates(&self, target: Target) -> Result<&[f64]> {
        match target {
            Target::Observed => Ok(&self.success),
            Target::True => self
                .true_success
                .as_deref()
                .ok_or_else(|| Error::invalid("instance has no true-label success rates")),
        }
    }

    /// `P[Y = 1 | A = g]` for the chosen label.
    pub fn label_rate(&self, g: Group, target: Target) -> Result<f64> {
        let rates = self.rates(target)?;
        self.conditional_mean(g, |i| rates[i])
    }

    /// `P[h(X) = 1 | A = g]`.
    pub fn positive_rate(&self, h: &[u8], g: Group) -> Result<f64> {
        self.check_hypothesis(h)?;
        self.conditional_mean(g, |i| f64::from(h[i]))
    }

    fn conditional_mean(&self, g: Group, f: impl Fn(usize) -> f64) -> Result<f64> {
        let (mut mass, mut acc) = (0.0, 0.0);
        for i in (0..self.support.len()).filter(|&i| self.group(i) == g) {
            mass += self.probs[i];
            acc += self.probs[i] * f(i);
        }
        if mass == 0.0 {
            return Err(Error::invalid(format!("group {} has zero probability", g.index())));
        }
        Ok(acc / mass)
    }

    fn check_hypothesis(&self, h: &[u8]) -> Result<()> {
        if h.len() != self.support.len() {
            return Err(Error::invalid(format!(
                "hypothesis covers {} points, support has {}",
                h.len(),
                self.support.len()
            )));
        }
        if h.iter().any(|&v| v > 1) {
            return Err(Error::invalid("hypothesis values must be 0 or 1"));
        }
        Ok(())
    }

    /// Kolmogorov distance between the group-conditional laws of `h(X)`.
    pub fn sp_unfairness(&self, h: &[u8]) -> Result<f64> {
        self.check_hypothesis(h)?;
        let law = |g: Group| -> Result<EmpiricalSample> {
            let idx: Vec<usize> = (0..h.len()).filter(|&i| self.group(i) == g && self.probs[i] > 0.0).collect();
            let values: Vec<f64> = idx.iter().map(|&i| f64::from(h[i])).collect();
            let weights: Vec<f64> = idx.iter().map(|&i| self.probs[i]).collect();
            EmpiricalSample::weighted(&values, &weights)
        };
        Ok(kolmogorov(&law(Group::Zero)?, &law(Group::One)?))
    }
}

/// Per-point minimizer of the conditional 0-1 risk; ties go to 0.
pub fn bayes_optimal(inst: &FiniteInstance) -> Hypothesis {
    inst.success.iter().map(|&p| u8::from(p > 0.5)).collect()
}

/// `E[L(h(X), target)]` under 0-1 loss.
pub fn expected_loss(inst: &FiniteInstance, h: &[u8], target: Target) -> Result<f64> {
    inst.check_hypothesis(h)?;
    let rates = inst.rates(target)?;
    Ok((0..h.len())
        .map(|i| inst.probs[i] * if h[i] == 1 { 1.0 - rates[i] } else { rates[i] })
        .sum())
}

/// Best hypothesis with equal positive rates across groups, by enumeration.
///
/// Ties keep the lexicographically smallest table.
pub fn sp_constrained_optimal(inst: &FiniteInstance) -> Result<(Hypothesis, f64)> {
    let n = inst.support.len();
    if n > MAX_ENUMERATION_SUPPORT {
        return Err(Error::invalid(format!(
            "support of {n} points exceeds the enumeration limit of {MAX_ENUMERATION_SUPPORT}"
        )));
    }
    let mut best: Option<(Hypothesis, f64)> = None;
    let mut h = vec![0u8; n];
    for code in 0u32..(1 << n) {
        // Point 0 is the most significant bit, so codes run in lexicographic order.
        for (i, v) in h.iter_mut().enumerate() {
            *v = ((code >> (n - 1 - i)) & 1) as u8;
        }
        let gap = (inst.positive_rate(&h, Group::Zero)? - inst.positive_rate(&h, Group::One)?).abs();
        if gap > PROBABILITY_TOLERANCE {
            continue;
        }
        let loss = expected_loss(inst, &h, Target::Observed)?;
        if best.as_ref().is_none_or(|(_, l)| loss < *l) {
            best = Some((h.clone(), loss));
        }
    }
    best.ok_or_else(|| Error::invalid("no hypothesis satisfies statistical parity"))
}

fn grid2(probs: impl Fn(u8, u8) -> f64, rate: impl Fn(u8, u8) -> f64) -> (Vec<Vec<u8>>, Vec<f64>, Vec<f64>) {
    let support: Vec<Vec<u8>> = [(0, 0), (0, 1), (1, 0), (1, 1)].iter().map(|&(a, b)| vec![a, b]).collect();
    let p = support.iter().map(|x| probs(x[0], x[1])).collect();
    let r = support.iter().map(|x| rate(x[0], x[1])).collect();
    (support, p, r)
}

/// Two binary features `(x1, a)`, uniform and independent; the observed
/// label is biased against group 0 while the true label depends on `x1` only.
pub fn example_biased_labels() -> FiniteInstance {
    let (support, probs, success) = grid2(
        |_, _| 0.25,
        |x1, a| match (x1, a) {
            (0, 1) => 0.3,
            (1, 1) => 0.7,
            _ => 0.4,
        },
    );
    FiniteInstance::new(support, probs, success, 1)
        .and_then(|i| i.with_true_success(vec![0.3, 0.3, 0.7, 0.7]))
        .expect("static instance is valid")
}

/// Labels independent of the group whose Bayes classifier still violates
/// parity; `P[x1 = 1] = 0.2` and `P[a = 1] = 0.5`.
pub fn example_independent_labels() -> FiniteInstance {
    let (support, probs, success) = grid2(
        |x1, _| if x1 == 1 { 0.1 } else { 0.4 },
        |x1, a| match (x1, a) {
            (0, 1) => 0.4,
            (1, 1) => 0.9,
            (0, 0) => 0.55,
            _ => 0.3,
        },
    );
    FiniteInstance::new(support, probs, success, 1).expect("static instance is valid")
}

fn check_open_unit(p1: f64) -> Result<()> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::invalid(format!("group probability must lie in (0, 1), got {p1}")));
    }
    Ok(())
}

/// Regression example with `Y = A·X1 + (1 − A)·S`: returns the published
/// closed forms `(optimal loss, SP-constrained loss)` for `P[A = 1] = p1`.
pub fn example_a3_losses(p1: f64) -> Result<(f64, f64)> {
    check_open_unit(p1)?;
    let p0 = 1.0 - p1;
    let optimal = p0 / 12.0;
    let sp = p0 / 12.0 / p1 * (1.0 + 10.0 * p1 - 9.0 * p1 * p1 + 4.0 * p1.powi(3)) + p0 * p0 * p1 / 12.0;
    Ok((optimal, sp))
}

/// Squared-error risk of `h_SP(x) = ½ + p1(x1 − ½)` integrated directly
/// from the generative model: `p0(1 + p1²)/12 + p0²p1/12`.
pub fn example_a3_sp_loss_integrated(p1: f64) -> Result<f64> {
    check_open_unit(p1)?;
    let p0 = 1.0 - p1;
    Ok(p0 * (1.0 + p1 * p1) / 12.0 + p0 * p0 * p1 / 12.0)
}

/// Per-sample squared errors of `h*` and `h_SP` under the regression example.
pub fn example_a3_samples(p1: f64, samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_open_unit(p1)?;
    let mut r = rng::seeded(seed);
    let mut optimal = Vec::with_capacity(samples);
    let mut sp = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = r.random_bool(p1);
        let x1: f64 = r.random();
        let s: f64 = r.random();
        let y = if a { x1 } else { s };
        let h_opt = if a { x1 } else { 0.5 };
        let h_sp = 0.5 + p1 * (x1 - 0.5);
        optimal.push((h_opt - y).powi(2));
        sp.push((h_sp - y).powi(2));
    }
    Ok((optimal, sp))
}

/// Minimum number of runs accepted by [`mc_unbiasedness`].
pub const MIN_MC_RUNS: usize = 100;

/// Sample mean, its standard error and the z-score against a known value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSummary {
    pub mean: f64,
    pub std_error: f64,
    /// `(mean − truth) / std_error`; 0 on an exact match with zero spread.
    pub z: f64,
}

impl McSummary {
    pub fn within(&self, sigmas: f64) -> bool {
        self.z.abs() <= sigmas
    }
}

pub fn mc_unbiasedness(runs: &[f64], truth: f64) -> Result<McSummary> {
    if runs.len() < MIN_MC_RUNS {
        return Err(Error::invalid(format!(
            "Monte Carlo summary needs at least {MIN_MC_RUNS} runs, got {}",
            runs.len()
        )));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (var / n).sqrt();
    let diff = mean - truth;
    let z = if std_error > 0.0 {
        diff / std_error
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(McSummary { mean, std_error, z })
}
