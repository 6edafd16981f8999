//! Linear and one-hidden-layer ReLU predictors with hand-written reverse-mode
//! gradients of the per-batch objective `R̂_b + λ Û_b`.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batching::{Batch, Group, LabeledPoint};
use crate::error::{Error, Result};
use crate::estimators::{self, loss_weights, BatchOutputs};
use crate::ipm::KernelSpec;
use crate::rng;
use crate::text::{fmt_f64, parse_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden_width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub architecture: Architecture,
    pub output: OutputActivation,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, output: OutputActivation) -> Self {
        Self {
            input_dim,
            architecture: Architecture::Linear,
            output,
        }
    }

    pub fn mlp(input_dim: usize, hidden_width: usize, output: OutputActivation) -> Self {
        Self {
            input_dim,
            architecture: Architecture::Mlp { hidden_width },
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model input dimension must be positive"));
        }
        if let Architecture::Mlp { hidden_width: 0 } = self.architecture {
            return Err(Error::invalid("hidden layer width must be positive"));
        }
        Ok(())
    }

    /// Length of the flat parameter vector.
    ///
    /// Linear: `[w (d), b]`. MLP: `[W1 (h×d, row-major), b1 (h), w2 (h), b2]`.
    pub fn param_count(&self) -> usize {
        match self.architecture {
            Architecture::Linear => self.input_dim + 1,
            Architecture::Mlp { hidden_width: h } => h * self.input_dim + 2 * h + 1,
        }
    }
}

/// Flat parameter vector `θ` laid out as described by [`ModelSpec::param_count`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn from_vec(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        Ok(Self { values })
    }

    /// Uniform on `[-1/√fan_in, 1/√fan_in]` per layer, biases included.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut draw = |fan_in: usize, count: usize, out: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..count).map(|_| r.random_range(-bound..=bound)));
        };
        let d = spec.input_dim;
        let mut values = Vec::with_capacity(spec.param_count());
        match spec.architecture {
            Architecture::Linear => draw(d, d + 1, &mut values),
            Architecture::Mlp { hidden_width: h } => {
                draw(d, h * d + h, &mut values);
                draw(h, h + 1, &mut values);
            }
        }
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_dim(spec: &ModelSpec, params: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::invalid(format!(
            "feature vector has dimension {}, model expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::invalid(format!(
            "parameter vector has length {}, model expects {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

struct Forward {
    logit: f64,
    score: f64,
    hidden_pre: Vec<f64>,
}

fn forward_cached(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Forward {
    let d = spec.input_dim;
    let (logit, hidden_pre) = match spec.architecture {
        Architecture::Linear => {
            let z = theta[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[d];
            (z, Vec::new())
        }
        Architecture::Mlp { hidden_width: h } => {
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h);
            let pre: Vec<f64> = (0..h)
                .map(|j| w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j])
                .collect();
            let z = pre.iter().zip(w2).map(|(p, w)| p.max(0.0) * w).sum::<f64>() + b2[0];
            (z, pre)
        }
    };
    let score = match spec.output {
        OutputActivation::Sigmoid => sigmoid(logit),
        OutputActivation::Identity => logit,
    };
    Forward {
        logit,
        score,
        hidden_pre,
    }
}

/// Accumulates `upstream · ∂logit/∂θ` into `grad`.
fn backward(spec: &ModelSpec, theta: &[f64], x: &[f64], fwd: &Forward, upstream: f64, grad: &mut [f64]) {
    let d = spec.input_dim;
    match spec.architecture {
        Architecture::Linear => {
            for k in 0..d {
                grad[k] += upstream * x[k];
            }
            grad[d] += upstream;
        }
        Architecture::Mlp { hidden_width: h } => {
            let w2 = &theta[h * d + h..h * d + 2 * h];
            for j in 0..h {
                let pre = fwd.hidden_pre[j];
                grad[h * d + h + j] += upstream * pre.max(0.0);
                // ReLU'(0) is taken as 0.
                if pre > 0.0 {
                    let g = upstream * w2[j];
                    for k in 0..d {
                        grad[j * d + k] += g * x[k];
                    }
                    grad[h * d + j] += g;
                }
            }
            grad[h * d + 2 * h] += upstream;
        }
    }
}

/// Model output `h_θ(x)`.
pub fn forward(spec: &ModelSpec, params: &ModelParams, x: &[f64]) -> Result<f64> {
    check_dim(spec, params, x)?;
    Ok(forward_cached(spec, &params.values, x).score)
}

/// Per-sample loss on a score.
pub fn loss(kind: LossKind, score: f64, target: f64) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy => {
            if !(score > 0.0 && score < 1.0) {
                return Err(Error::invalid(format!("cross-entropy needs a score in (0, 1), got {score}")));
            }
            check_binary(target)?;
            Ok(-(target * score.ln() + (1.0 - target) * (1.0 - score).ln()))
        }
        LossKind::SquaredError => Ok((score - target) * (score - target)),
    }
}

fn check_binary(target: f64) -> Result<()> {
    if target == 0.0 || target == 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("cross-entropy needs targets in {{0, 1}}, got {target}")))
    }
}

/// Loss and `∂loss/∂logit` from the cached forward pass.
fn loss_and_logit_grad(spec: &ModelSpec, kind: LossKind, fwd: &Forward, target: f64) -> (f64, f64) {
    match (kind, spec.output) {
        (LossKind::CrossEntropy, _) => {
            // Stable form: softplus(z) - y z, with gradient σ(z) - y.
            (softplus(fwd.logit) - target * fwd.logit, fwd.score - target)
        }
        (LossKind::SquaredError, out) => {
            let r = fwd.score - target;
            let ds = match out {
                OutputActivation::Sigmoid => fwd.score * (1.0 - fwd.score),
                OutputActivation::Identity => 1.0,
            };
            (r * r, 2.0 * r * ds)
        }
    }
}

fn score_to_logit_factor(spec: &ModelSpec, fwd: &Forward) -> f64 {
    match spec.output {
        OutputActivation::Sigmoid => fwd.score * (1.0 - fwd.score),
        OutputActivation::Identity => 1.0,
    }
}

/// Labelled batch inputs split by protected class.
#[derive(Debug, Clone)]
pub struct BatchView<'a> {
    pub group0: Vec<&'a LabeledPoint>,
    pub group1: Vec<&'a LabeledPoint>,
    pub target_size: usize,
}

impl<'a> BatchView<'a> {
    /// Resolves batch indices against a dataset.
    pub fn from_indices(data: &'a [LabeledPoint], batch: &Batch, target_size: usize) -> Self {
        Self {
            group0: batch.group0.iter().map(|&i| &data[i]).collect(),
            group1: batch.group1.iter().map(|&i| &data[i]).collect(),
            target_size,
        }
    }

    /// Splits a list of points by their protected attribute.
    pub fn from_points(points: &'a [LabeledPoint], target_size: usize) -> Self {
        let (group0, group1) = points.iter().partition(|p| p.group == Group::Zero);
        Self {
            group0,
            group1,
            target_size,
        }
    }

    pub fn group(&self, g: Group) -> &[&'a LabeledPoint] {
        match g {
            Group::Zero => &self.group0,
            Group::One => &self.group1,
        }
    }

    pub fn total(&self) -> usize {
        self.group0.len() + self.group1.len()
    }
}

/// Penalized per-batch objective `R̂_b + λ Û_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub loss: LossKind,
}

impl Objective {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        self.kernel.validate()?;
        if self.loss == LossKind::CrossEntropy && spec.output != OutputActivation::Sigmoid {
            return Err(Error::invalid("cross-entropy loss requires a sigmoid output"));
        }
        Ok(())
    }
}

/// Value of the batch objective split into its two estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    /// `R̂_b`
    pub loss: f64,
    /// `Û_b`
    pub penalty: f64,
    /// `R̂_b + λ Û_b`
    pub total: f64,
}

struct Evaluated {
    forwards: [Vec<Forward>; 2],
    losses: [Vec<f64>; 2],
    logit_grads: [Vec<f64>; 2],
}

fn evaluate_batch(spec: &ModelSpec, params: &ModelParams, batch: &BatchView<'_>, obj: &Objective) -> Result<Evaluated> {
    spec.validate()?;
    obj.validate(spec)?;
    let mut forwards: [Vec<Forward>; 2] = [Vec::new(), Vec::new()];
    let mut losses: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut logit_grads: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for g in Group::BOTH {
        for p in batch.group(g) {
            check_dim(spec, params, &p.features)?;
            if obj.loss == LossKind::CrossEntropy {
                check_binary(p.target)?;
            }
            let fwd = forward_cached(spec, &params.values, &p.features);
            let (l, dl) = loss_and_logit_grad(spec, obj.loss, &fwd, p.target);
            forwards[g.index()].push(fwd);
            losses[g.index()].push(l);
            logit_grads[g.index()].push(dl);
        }
    }
    Ok(Evaluated {
        forwards,
        losses,
        logit_grads,
    })
}

fn value_of(ev: &Evaluated, batch: &BatchView<'_>, obj: &Objective) -> Result<ObjectiveValue> {
    let scores = |g: usize| ev.forwards[g].iter().map(|f| f.score).collect::<Vec<_>>();
    let out = BatchOutputs::new(
        scores(0),
        scores(1),
        ev.losses[0].clone(),
        ev.losses[1].clone(),
        batch.target_size,
    )?;
    let loss = estimators::corrected_loss(&out)?;
    let penalty = estimators::u_stat_mmd(&out, &obj.kernel)?;
    Ok(ObjectiveValue {
        loss,
        penalty,
        total: loss + obj.lambda * penalty,
    })
}

/// Evaluates `R̂_b`, `Û_b` and the penalized total on a batch.
pub fn objective_value(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &BatchView<'_>,
    obj: &Objective,
) -> Result<ObjectiveValue> {
    let ev = evaluate_batch(spec, params, batch, obj)?;
    value_of(&ev, batch, obj)
}

/// Exact gradient of `R̂_b + λ Û_b` with respect to `θ`.
///
/// At ReLU and absolute-value kinks the derivative is taken to be 0.
pub fn grad_objective(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &BatchView<'_>,
    obj: &Objective,
) -> Result<(ObjectiveValue, Vec<f64>)> {
    let ev = evaluate_batch(spec, params, batch, obj)?;
    let value = value_of(&ev, batch, obj)?;

    let weights = loss_weights(batch.group0.len(), batch.group1.len(), batch.target_size)?;
    let scores = |g: usize| ev.forwards[g].iter().map(|f| f.score).collect::<Vec<_>>();
    let (_, penalty_grad) = estimators::u_stat_mmd_with_grad(&scores(0), &scores(1), &obj.kernel)?;

    let mut grad = vec![0.0; spec.param_count()];
    for g in Group::BOTH {
        let a = g.index();
        for (i, p) in batch.group(g).iter().enumerate() {
            let fwd = &ev.forwards[a][i];
            let upstream = weights[a] * ev.logit_grads[a][i]
                + obj.lambda * penalty_grad[a][i] * score_to_logit_factor(spec, fwd);
            backward(spec, &params.values, &p.features, fwd, upstream, &mut grad);
        }
    }
    Ok((value, grad))
}

/// Central finite differences of the batch objective, one coordinate at a time.
pub fn finite_diff_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &BatchView<'_>,
    obj: &Objective,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    finite_diff(params.as_slice(), step, |theta| {
        let p = ModelParams::from_vec(spec, theta.to_vec())?;
        Ok(objective_value(spec, &p, batch, obj)?.total)
    })
}

/// Central differences of an arbitrary function of a parameter vector.
pub fn finite_diff(theta: &[f64], step: f64, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut work = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        work[i] = theta[i] + step;
        let up = f(&work)?;
        work[i] = theta[i] - step;
        let down = f(&work)?;
        work[i] = theta[i];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Smallest distance of the batch to a point where the objective is not
/// differentiable: a ReLU pre-activation at 0, or for the distance-induced
/// kernel a score tie or a score at the anchor.
pub fn kink_distance(spec: &ModelSpec, params: &ModelParams, batch: &BatchView<'_>, kernel: &KernelSpec) -> f64 {
    let mut best = f64::INFINITY;
    let mut scores = Vec::with_capacity(batch.total());
    for g in Group::BOTH {
        for p in batch.group(g) {
            let fwd = forward_cached(spec, &params.values, &p.features);
            for pre in &fwd.hidden_pre {
                best = best.min(pre.abs());
            }
            scores.push(fwd.score);
        }
    }
    if let KernelSpec::DistanceInduced { anchor } = *kernel {
        for (i, &s) in scores.iter().enumerate() {
            best = best.min((s - anchor).abs());
            for &t in &scores[i + 1..] {
                best = best.min((s - t).abs());
            }
        }
    }
    best
}

/// Parameter snapshot with everything needed to rebuild the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Plain-text `key = value` document; parameters at full precision.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# ipmfair checkpoint\n");
        let _ = writeln!(s, "input_dim = {}", self.spec.input_dim);
        match self.spec.architecture {
            Architecture::Linear => s.push_str("architecture = linear\n"),
            Architecture::Mlp { hidden_width } => {
                s.push_str("architecture = mlp\n");
                let _ = writeln!(s, "hidden_width = {hidden_width}");
            }
        }
        let out = match self.spec.output {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Identity => "identity",
        };
        let _ = writeln!(s, "output_activation = {out}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "param_count = {}", self.params.len());
        let joined: Vec<String> = self.params.as_slice().iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(s, "params = {}", joined.join(" "));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("checkpoint line {}: expected 'key = value'", lineno + 1)))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            fields.get(k).ok_or_else(|| Error::invalid(format!("checkpoint is missing '{k}'")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::invalid(format!("checkpoint field '{k}' is not an integer")))
        };
        let architecture = match get("architecture")?.as_str() {
            "linear" => Architecture::Linear,
            "mlp" => Architecture::Mlp {
                hidden_width: parse_usize("hidden_width")?,
            },
            other => return Err(Error::invalid(format!("unknown architecture '{other}'"))),
        };
        let output = match get("output_activation")?.as_str() {
            "sigmoid" => OutputActivation::Sigmoid,
            "identity" => OutputActivation::Identity,
            other => return Err(Error::invalid(format!("unknown output activation '{other}'"))),
        };
        let spec = ModelSpec {
            input_dim: parse_usize("input_dim")?,
            architecture,
            output,
        };
        spec.validate()?;
        let seed = get("seed")?
            .parse()
            .map_err(|_| Error::invalid("checkpoint field 'seed' is not an integer"))?;
        let values = get("params")?
            .split_whitespace()
            .map(parse_f64)
            .collect::<Result<Vec<_>>>()?;
        if values.len() != parse_usize("param_count")? {
            return Err(Error::invalid("checkpoint param_count does not match the parameter list"));
        }
        let params = ModelParams::from_vec(&spec, values)?;
        Ok(Self { spec, seed, params })
    }
}
