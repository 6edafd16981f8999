//! Verification suite behind the `check` command: batch-law identities,
//! Monte Carlo unbiasedness harnesses, gradient checks and worked examples.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::batching::{beta_bias, expected_ratio, BatchLaw, Group, LabeledPoint, OnlineBatcher};
use crate::error::{Error, Result};
use crate::estimators::{corrected_loss, corrected_loss_with, naive_penalty, plain_loss, u_stat_mmd, BatchOutputs, Rho};
use crate::ipm::{mmd_squared, EmpiricalSample, KernelSpec, Metric};
use crate::model::{
    finite_diff_grad, grad_objective, kink_distance, BatchView, LossKind, ModelParams, ModelSpec, Objective,
    OutputActivation,
};
use crate::oracle::{self, mc_unbiasedness, McSummary, Target};
use crate::rng::{self, derive_seed, Rng};

/// Two-sided Monte Carlo acceptance band in standard errors.
pub const MC_SIGMAS: f64 = 4.0;
/// Tolerance for identities evaluated from the batch pmf.
pub const LAW_TOLERANCE: f64 = 1e-10;
/// Largest accepted relative gradient error.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Finite-difference step for gradient checks.
pub const GRADIENT_STEP: f64 = 1e-6;
/// Smallest admissible distance to a kink in gradient checks.
pub const KINK_GUARD: f64 = 1e-4;
/// Denominator floor of the relative gradient error.
pub const GRADIENT_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Batching,
    Estimators,
    Gradients,
    Examples,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Scope::All,
            "batching" => Scope::Batching,
            "estimators" => Scope::Estimators,
            "gradients" => Scope::Gradients,
            "examples" => Scope::Examples,
            _ => return Err(Error::invalid(format!("unknown scope '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Replace `Δ` by 1 in the loss estimator to confirm the harness catches it.
    pub mutate_delta: bool,
    /// Batches per estimator Monte Carlo experiment.
    pub estimator_runs: usize,
    /// Batches per batch-law Monte Carlo experiment.
    pub law_runs: usize,
    /// Samples for the continuous regression example.
    pub example_samples: usize,
    pub gradient_cases: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            mutate_delta: false,
            estimator_runs: 40_000,
            law_runs: 100_000,
            example_samples: 1_000_000,
            gradient_cases: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tolerance {
    Absolute(f64),
    Sigmas { sigmas: f64, std_error: f64 },
    /// Passes when the measured value is more than this many standard
    /// errors away from the target.
    Exceeds { sigmas: f64, std_error: f64 },
    Below(f64),
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::Absolute(t) => write!(f, "abs {t:e}"),
            Tolerance::Sigmas { sigmas, std_error } => write!(f, "{sigmas} se (se {std_error:.3e})"),
            Tolerance::Exceeds { sigmas, std_error } => write!(f, "> {sigmas} se away (se {std_error:.3e})"),
            Tolerance::Below(t) => write!(f, "< {t:e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub tolerance: Tolerance,
    pub passed: bool,
}

impl CheckLine {
    pub fn absolute(name: impl Into<String>, measured: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            target,
            passed: (measured - target).abs() <= tol,
            tolerance: Tolerance::Absolute(tol),
        }
    }

    pub fn monte_carlo(name: impl Into<String>, s: McSummary, target: f64) -> Self {
        Self {
            name: name.into(),
            measured: s.mean,
            target,
            passed: s.within(MC_SIGMAS),
            tolerance: Tolerance::Sigmas {
                sigmas: MC_SIGMAS,
                std_error: s.std_error,
            },
        }
    }

    pub fn exact(name: impl Into<String>, holds: bool) -> Self {
        let v = f64::from(u8::from(holds));
        Self::absolute(name, v, 1.0, 0.0)
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {} target {} tolerance {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            crate::text::fmt_f64(self.measured),
            crate::text::fmt_f64(self.target),
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckLine> {
        self.lines.iter().filter(|l| !l.passed)
    }
}

pub fn run_checks(scope: Scope, opts: &CheckOptions) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let wants = |s: Scope| scope == Scope::All || scope == s;
    if wants(Scope::Examples) {
        report.lines.extend(example_checks(opts)?);
    }
    if wants(Scope::Batching) {
        report.lines.extend(batching_checks(opts)?);
    }
    if wants(Scope::Estimators) {
        report.lines.extend(estimator_checks(opts)?);
    }
    if wants(Scope::Gradients) {
        report.lines.extend(gradient_checks(opts)?);
    }
    Ok(report)
}

fn example_checks(opts: &CheckOptions) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    let a1 = oracle::example_biased_labels();
    let h = oracle::bayes_optimal(&a1);
    let (h_sp, _) = oracle::sp_constrained_optimal(&a1)?;
    out.push(CheckLine::exact("biased-labels optimal decisions", h == [0, 0, 0, 1]));
    out.push(CheckLine::exact("biased-labels SP-optimal decisions h(x)=x1", h_sp == [0, 0, 1, 1]));
    let el = |h: &[u8], t| oracle::expected_loss(&a1, h, t);
    out.push(CheckLine::absolute("biased-labels loss of h* on Y", el(&h, Target::Observed)?, 0.35, 1e-12));
    out.push(CheckLine::absolute("biased-labels loss of h_SP on Y", el(&h_sp, Target::Observed)?, 0.4, 1e-12));
    out.push(CheckLine::absolute("biased-labels loss of h_SP on Y*", el(&h_sp, Target::True)?, 0.3, 1e-12));
    out.push(CheckLine::absolute("biased-labels loss of h* on Y*", el(&h, Target::True)?, 0.4, 1e-12));

    let a2 = oracle::example_independent_labels();
    let h = oracle::bayes_optimal(&a2);
    out.push(CheckLine::exact("independent-labels optimal decisions", h == [1, 0, 0, 1]));
    for (g, rate) in [(Group::One, 0.2), (Group::Zero, 0.8)] {
        out.push(CheckLine::absolute(
            format!("independent-labels P[h*=1|A={}]", g.index()),
            a2.positive_rate(&h, g)?,
            rate,
            1e-12,
        ));
        out.push(CheckLine::absolute(
            format!("independent-labels P[Y=1|A={}]", g.index()),
            a2.label_rate(g, Target::Observed)?,
            0.5,
            1e-12,
        ));
    }

    let (opt, sp) = oracle::example_a3_losses(0.5)?;
    out.push(CheckLine::absolute("regression example optimal loss closed form", opt, 1.0 / 24.0, 1e-15));
    out.push(CheckLine::absolute("regression example SP loss closed form", sp, 4.375 / 12.0, 1e-15));
    let (l_opt, l_sp) = oracle::example_a3_samples(0.5, opts.example_samples, derive_seed(opts.seed, 101))?;
    out.push(CheckLine::monte_carlo(
        "regression example optimal loss Monte Carlo",
        mc_unbiasedness(&l_opt, opt)?,
        opt,
    ));
    out.push(CheckLine::monte_carlo(
        "regression example SP loss Monte Carlo",
        mc_unbiasedness(&l_sp, sp)?,
        sp,
    ));
    Ok(out)
}

/// Ratio `n_a / N` of online batches drawn from a Bernoulli(`pa`) class stream.
pub fn sample_class_ratios(pa: f64, target: usize, runs: usize, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng::seeded(seed);
    let stream = std::iter::repeat_with(move || if r.random_bool(pa) { Group::One } else { Group::Zero });
    let mut batcher = OnlineBatcher::new(stream, target)?;
    (0..runs)
        .map(|_| {
            let b = batcher.next_batch()?.batch;
            Ok(b.count(Group::One) as f64 / b.total() as f64)
        })
        .collect()
}

fn batching_checks(opts: &CheckOptions) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    out.push(CheckLine::absolute("beta at pa=0.5", beta_bias(0.5, 8)?, 0.0, LAW_TOLERANCE));
    for (k, &pa) in [0.2, 0.5, 0.7].iter().enumerate() {
        for (j, &target) in [4usize, 8, 16].iter().enumerate() {
            let law = BatchLaw::new(pa, target)?;
            let tag = format!("pa={pa} target={target}");
            out.push(CheckLine::absolute(
                format!("pmf mass {tag}"),
                law.expectation(|_, _| 1.0, 1.0),
                1.0,
                LAW_TOLERANCE,
            ));
            let corrected = law.expectation(
                |n, na| crate::batching::delta_correction(n, na, target).unwrap_or(0.0) * na as f64 / n as f64,
                1.0,
            );
            out.push(CheckLine::absolute(format!("corrected ratio {tag}"), corrected, pa, LAW_TOLERANCE));
            let ratio = law.expectation(|n, na| na as f64 / n as f64, 1.0);
            let predicted = pa * (1.0 + beta_bias(pa, target)?);
            out.push(CheckLine::absolute(format!("ratio bias closed form {tag}"), ratio, predicted, LAW_TOLERANCE));
            let runs = sample_class_ratios(pa, target, opts.law_runs, derive_seed(opts.seed, 200 + 10 * k as u64 + j as u64))?;
            out.push(CheckLine::monte_carlo(
                format!("ratio bias Monte Carlo {tag}"),
                mc_unbiasedness(&runs, expected_ratio(pa, target)?)?,
                predicted,
            ));
        }
    }
    Ok(out)
}

/// Discrete law on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLaw {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl FiniteLaw {
    pub fn new(values: &[f64], probs: &[f64]) -> Self {
        Self {
            values: values.to_vec(),
            probs: probs.to_vec(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn sample(&self, r: &mut Rng) -> f64 {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (v, p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *v;
            }
        }
        *self.values.last().expect("non-empty law")
    }

    pub fn as_sample(&self) -> Result<EmpiricalSample> {
        EmpiricalSample::weighted(&self.values, &self.probs)
    }
}

/// Population with group probability `p1` and per-group finite laws for
/// scores and losses, drawn independently given the group.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupPopulation {
    pub p1: f64,
    pub scores: [FiniteLaw; 2],
    pub losses: [FiniteLaw; 2],
}

/// One streamed draw: group, score and loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub group: Group,
    pub score: f64,
    pub loss: f64,
}

impl crate::batching::Grouped for Draw {
    fn group(&self) -> Group {
        self.group
    }
}

impl TwoGroupPopulation {
    pub fn reference() -> Self {
        Self {
            p1: 0.2,
            scores: [
                FiniteLaw::new(&[0.0, 1.0, 2.5], &[0.5, 0.3, 0.2]),
                FiniteLaw::new(&[0.5, 1.0, 3.0], &[0.25, 0.5, 0.25]),
            ],
            losses: [
                FiniteLaw::new(&[0.0, 1.0], &[0.7, 0.3]),
                FiniteLaw::new(&[2.0, 5.0], &[0.5, 0.5]),
            ],
        }
    }

    /// Both groups share the same non-degenerate score law.
    pub fn equal_scores() -> Self {
        let s = FiniteLaw::new(&[0.0, 1.0], &[0.5, 0.5]);
        Self {
            scores: [s.clone(), s],
            ..Self::reference()
        }
    }

    pub fn risk(&self) -> f64 {
        (1.0 - self.p1) * self.losses[0].mean() + self.p1 * self.losses[1].mean()
    }

    /// `Σ_a p_a (1 + β_a) E[L | A = a]`: the mean of the uncorrected batch loss.
    pub fn uncorrected_risk(&self, target: usize) -> Result<f64> {
        let p0 = 1.0 - self.p1;
        Ok(p0 * (1.0 + beta_bias(p0, target)?) * self.losses[0].mean()
            + self.p1 * (1.0 + beta_bias(self.p1, target)?) * self.losses[1].mean())
    }

    pub fn mmd_squared(&self, k: &KernelSpec) -> Result<f64> {
        Ok(mmd_squared(&self.scores[0].as_sample()?, &self.scores[1].as_sample()?, k))
    }

    pub fn stream(&self, seed: u64) -> impl Iterator<Item = Draw> + '_ {
        let mut r = rng::seeded(seed);
        std::iter::repeat_with(move || {
            let group = if r.random_bool(self.p1) { Group::One } else { Group::Zero };
            let a = group.index();
            Draw {
                group,
                score: self.scores[a].sample(&mut r),
                loss: self.losses[a].sample(&mut r),
            }
        })
    }

    /// Batch outputs of `runs` consecutive online batches.
    pub fn batches(&self, target: usize, runs: usize, seed: u64) -> Result<Vec<BatchOutputs>> {
        let mut batcher = OnlineBatcher::new(self.stream(seed), target)?;
        (0..runs)
            .map(|_| {
                let items = batcher.next_batch()?.items;
                let pick = |g: Group, f: fn(&Draw) -> f64| -> Vec<f64> {
                    items.iter().filter(|d| d.group == g).map(f).collect()
                };
                BatchOutputs::new(
                    pick(Group::Zero, |d| d.score),
                    pick(Group::One, |d| d.score),
                    pick(Group::Zero, |d| d.loss),
                    pick(Group::One, |d| d.loss),
                    target,
                )
            })
            .collect()
    }
}

fn estimator_checks(opts: &CheckOptions) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    let pop = TwoGroupPopulation::reference();
    for (j, &target) in [4usize, 8].iter().enumerate() {
        let batches = pop.batches(target, opts.estimator_runs, derive_seed(opts.seed, 300 + j as u64))?;
        let corrected: Vec<f64> = batches
            .iter()
            .map(|b| {
                if opts.mutate_delta {
                    corrected_loss_with(b, |_, _, _| Ok(1.0))
                } else {
                    corrected_loss(b)
                }
            })
            .collect::<Result<_>>()?;
        out.push(CheckLine::monte_carlo(
            format!("corrected loss unbiased target={target}"),
            mc_unbiasedness(&corrected, pop.risk())?,
            pop.risk(),
        ));
        let plain: Vec<f64> = batches.iter().map(plain_loss).collect();
        let predicted = pop.uncorrected_risk(target)?;
        out.push(CheckLine::monte_carlo(
            format!("uncorrected loss mean matches predicted bias target={target}"),
            mc_unbiasedness(&plain, predicted)?,
            predicted,
        ));
        let s = mc_unbiasedness(&plain, pop.risk())?;
        out.push(CheckLine {
            name: format!("uncorrected loss detectably biased target={target}"),
            measured: s.mean,
            target: pop.risk(),
            passed: s.z.abs() > MC_SIGMAS,
            tolerance: Tolerance::Exceeds {
                sigmas: MC_SIGMAS,
                std_error: s.std_error,
            },
        });
        for k in [KernelSpec::default(), KernelSpec::Gaussian { bandwidth: 1.0 }] {
            let u: Vec<f64> = batches.iter().map(|b| u_stat_mmd(b, &k)).collect::<Result<_>>()?;
            let truth = pop.mmd_squared(&k)?;
            out.push(CheckLine::monte_carlo(
                format!("U-statistic unbiased target={target} kernel={}", kernel_name(&k)),
                mc_unbiasedness(&u, truth)?,
                truth,
            ));
        }
    }
    let equal = TwoGroupPopulation::equal_scores();
    let batches = equal.batches(4, opts.estimator_runs, derive_seed(opts.seed, 310))?;
    let naive: Vec<f64> = batches
        .iter()
        .map(|b| naive_penalty(b.scores(Group::Zero), b.scores(Group::One), &Metric::L2, Rho::Squared(1.0)))
        .collect::<Result<_>>()?;
    let s = mc_unbiasedness(&naive, 0.0)?;
    out.push(CheckLine {
        name: "naive squared L2 penalty biased upward under equal laws".into(),
        measured: s.mean,
        target: 0.0,
        passed: s.z > MC_SIGMAS,
        tolerance: Tolerance::Exceeds {
            sigmas: MC_SIGMAS,
            std_error: s.std_error,
        },
    });
    Ok(out)
}

fn kernel_name(k: &KernelSpec) -> &'static str {
    match k {
        KernelSpec::DistanceInduced { .. } => "distance",
        KernelSpec::Gaussian { .. } => "gaussian",
    }
}

/// A random, kink-guarded gradient-check configuration.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub points: Vec<LabeledPoint>,
    pub target_size: usize,
    pub objective: Objective,
}

impl GradientCase {
    pub fn view(&self) -> BatchView<'_> {
        BatchView::from_points(&self.points, self.target_size)
    }
}

/// Case `index` cycles through both architectures, losses, kernels and
/// `λ ∈ {0, 0.1, 10}`.
pub fn gradient_case(seed: u64, index: usize) -> Result<GradientCase> {
    const LAMBDAS: [f64; 3] = [0.0, 0.1, 10.0];
    let mut r = rng::seeded(derive_seed(seed, 400 + index as u64));
    let d = r.random_range(1..=4);
    let loss = if (index / 2).is_multiple_of(2) { LossKind::SquaredError } else { LossKind::CrossEntropy };
    let output = if loss == LossKind::CrossEntropy || r.random_bool(0.5) {
        OutputActivation::Sigmoid
    } else {
        OutputActivation::Identity
    };
    let spec = if index.is_multiple_of(2) {
        ModelSpec::linear(d, output)
    } else {
        ModelSpec::mlp(d, r.random_range(1..=5), output)
    };
    let kernel = if (index / 4).is_multiple_of(2) {
        KernelSpec::DistanceInduced {
            anchor: r.random_range(-1.0..1.0),
        }
    } else {
        KernelSpec::Gaussian {
            bandwidth: r.random_range(0.5..2.0),
        }
    };
    let objective = Objective {
        lambda: LAMBDAS[index / 8 % 3],
        kernel,
        loss,
    };
    let target_size = r.random_range(4..=8);
    let draws = std::iter::repeat_with(|| {
        let features: Vec<f64> = (0..d).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let target = match loss {
            LossKind::CrossEntropy => f64::from(u8::from(r.random_bool(0.5))),
            LossKind::SquaredError => r.sample(StandardNormal),
        };
        let group = if r.random_bool(0.5) { Group::One } else { Group::Zero };
        LabeledPoint { features, target, group }
    });
    let points = OnlineBatcher::new(draws, target_size)?.next_batch()?.items;
    let mut pr = rng::seeded(derive_seed(seed, 500 + index as u64));
    for attempt in 0u64.. {
        let mut params = ModelParams::init(&spec, derive_seed(seed, 600 + 1000 * attempt + index as u64));
        for v in params.as_mut_slice() {
            *v *= 2.0 + pr.random::<f64>();
        }
        let view = BatchView::from_points(&points, target_size);
        if kink_distance(&spec, &params, &view, &kernel) >= KINK_GUARD {
            return Ok(GradientCase {
                spec,
                params,
                points,
                target_size,
                objective,
            });
        }
        if attempt > 1000 {
            break;
        }
    }
    Err(Error::Numerical("could not move the gradient check away from kinks".into()))
}

/// `max_i |g_i − f_i| / max(|g_i|, |f_i|, GRADIENT_FLOOR)` between the
/// analytic and finite-difference gradients.
pub fn gradient_relative_error(case: &GradientCase) -> Result<f64> {
    let view = case.view();
    let (_, analytic) = grad_objective(&case.spec, &case.params, &view, &case.objective)?;
    let numeric = finite_diff_grad(&case.spec, &case.params, &view, &case.objective, GRADIENT_STEP)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_FLOOR))
        .fold(0.0, f64::max))
}

fn gradient_checks(opts: &CheckOptions) -> Result<Vec<CheckLine>> {
    let mut worst = 0.0f64;
    for i in 0..opts.gradient_cases {
        worst = worst.max(gradient_relative_error(&gradient_case(opts.seed, i)?)?);
    }
    Ok(vec![CheckLine {
        name: format!("analytic gradient vs finite differences over {} cases", opts.gradient_cases),
        measured: worst,
        target: 0.0,
        passed: worst < GRADIENT_TOLERANCE,
        tolerance: Tolerance::Below(GRADIENT_TOLERANCE),
    }])
}
