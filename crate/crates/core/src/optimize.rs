//! Adam and SGD updates and the offline/online training loops.

use serde::{Deserialize, Serialize};

use crate::batching::{LabeledPoint, OfflineBatcher, OnlineBatcher};
use crate::error::{Error, Result};
use crate::ipm::KernelSpec;
use crate::model::{grad_objective, BatchView, LossKind, ModelParams, ModelSpec, Objective, ObjectiveValue};
use crate::rng::{derive_seed, streams};

/// Samples between two learning-rate decays in online mode.
pub const ONLINE_DECAY_INTERVAL: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative learning-rate decay per epoch (offline) or per
    /// [`ONLINE_DECAY_INTERVAL`] samples (online).
    pub decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 0.99,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidConfig(format!("{what} out of range: {v}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay", self.decay);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    /// Number of decays applied so far.
    pub decay_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            decay_count: 0,
        }
    }

    /// `lr · decay^k` after `k` decays.
    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate * self.config.decay.powi(self.decay_count.min(i32::MAX as u64) as i32)
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64]) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Adam => adam_step(self, params, grad),
            OptimizerKind::Sgd => sgd_step(self, params, grad),
        }
    }

    fn check(&self, params: &ModelParams, grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer state has length {}, parameters {}, gradient {}",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, params: &mut ModelParams, grad: &[f64]) -> Result<()> {
    state.check(params, grad)?;
    state.step_count += 1;
    let c = state.config;
    let t = state.step_count.min(i32::MAX as u64) as i32;
    let correct1 = 1.0 - c.beta1.powi(t);
    let correct2 = 1.0 - c.beta2.powi(t);
    let lr = state.learning_rate();
    let theta = params.as_mut_slice();
    for i in 0..theta.len() {
        let g = grad[i];
        state.first_moment[i] = c.beta1 * state.first_moment[i] + (1.0 - c.beta1) * g;
        state.second_moment[i] = c.beta2 * state.second_moment[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.first_moment[i] / correct1;
        let v_hat = state.second_moment[i] / correct2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
    }
    Ok(())
}

/// `θ ← θ − lr_t · g`.
pub fn sgd_step(state: &mut OptimizerState, params: &mut ModelParams, grad: &[f64]) -> Result<()> {
    state.check(params, grad)?;
    state.step_count += 1;
    let lr = state.learning_rate();
    for (p, g) in params.as_mut_slice().iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Offline { epochs: usize },
    Online { sample_budget: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub target_batch_size: usize,
    /// Offline training length; mutually exclusive with `sample_budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Online training length in streamed samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_budget: Option<usize>,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn mode(&self) -> Result<TrainMode> {
        match (self.epochs, self.sample_budget) {
            (Some(epochs), None) => Ok(TrainMode::Offline { epochs }),
            (None, Some(sample_budget)) => Ok(TrainMode::Online { sample_budget }),
            _ => Err(Error::InvalidConfig(
                "set exactly one of 'epochs' (offline) or 'sample_budget' (online)".into(),
            )),
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            lambda: self.lambda,
            kernel: self.kernel,
            loss: self.loss,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        self.mode()?;
        if self.target_batch_size < crate::batching::MIN_TARGET_SIZE {
            return Err(Error::InvalidConfig(format!(
                "target_batch_size must be at least {}, got {}",
                crate::batching::MIN_TARGET_SIZE,
                self.target_batch_size
            )));
        }
        self.optimizer.validate()?;
        spec.validate()?;
        self.objective()
            .validate(spec)
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub batch: usize,
    /// Samples consumed so far (online) or drawn so far (offline).
    pub samples: usize,
    pub value: ObjectiveValue,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<HistoryRecord>,
    pub warnings: Vec<String>,
}

/// Offline training over a fixed dataset with fixed-composition batches.
///
/// An epoch is `⌈len / N̄⌉` batches; the learning rate decays once per epoch.
pub fn train_offline(config: &TrainConfig, spec: &ModelSpec, data: &[LabeledPoint]) -> Result<TrainOutcome> {
    config.validate(spec)?;
    let TrainMode::Offline { epochs } = config.mode()? else {
        return Err(Error::InvalidConfig("offline training needs 'epochs'".into()));
    };
    let target = config.target_batch_size;
    let mut batcher = OfflineBatcher::new(data, target, derive_seed(config.seed, streams::BATCHES))?;
    let warnings = batcher.clamp_warning().into_iter().collect();
    let mut params = ModelParams::init(spec, derive_seed(config.seed, streams::INIT));
    let mut opt = OptimizerState::new(config.optimizer, params.len());
    let objective = config.objective();
    let per_epoch = data.len().div_ceil(target);
    let mut history = Vec::with_capacity(epochs * per_epoch);
    let mut samples = 0;
    for _ in 0..epochs {
        for _ in 0..per_epoch {
            let batch = batcher.next_batch();
            samples += batch.total();
            let view = BatchView::from_indices(data, &batch, target);
            let (value, grad) = grad_objective(spec, &params, &view, &objective)?;
            opt.step(&mut params, &grad)?;
            history.push(HistoryRecord {
                batch: history.len(),
                samples,
                value,
            });
        }
        opt.decay_count += 1;
    }
    Ok(TrainOutcome {
        params,
        history,
        warnings,
    })
}

/// Online training on a stream with randomized stopping-time batches.
///
/// Stops once the sample budget is consumed or the stream ends; a trailing
/// incomplete batch is discarded. `observer` sees the parameters after each
/// update.
pub fn train_online<I>(
    config: &TrainConfig,
    spec: &ModelSpec,
    stream: I,
    mut observer: impl FnMut(&HistoryRecord, &ModelParams),
) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = LabeledPoint>,
{
    config.validate(spec)?;
    let TrainMode::Online { sample_budget } = config.mode()? else {
        return Err(Error::InvalidConfig("online training needs 'sample_budget'".into()));
    };
    let target = config.target_batch_size;
    let mut batcher = OnlineBatcher::new(stream.into_iter().take(sample_budget), target)?;
    let mut params = ModelParams::init(spec, derive_seed(config.seed, streams::INIT));
    let mut opt = OptimizerState::new(config.optimizer, params.len());
    let objective = config.objective();
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    loop {
        let sb = match batcher.next_batch() {
            Ok(sb) => sb,
            Err(Error::StreamExhausted { consumed }) => {
                if consumed > 0 {
                    warnings.push(format!("discarded {consumed} trailing samples that did not complete a batch"));
                }
                break;
            }
            Err(e) => return Err(e),
        };
        let view = BatchView::from_points(&sb.items, target);
        let (value, grad) = grad_objective(spec, &params, &view, &objective)?;
        opt.step(&mut params, &grad)?;
        let record = HistoryRecord {
            batch: history.len(),
            samples: batcher.consumed(),
            value,
        };
        opt.decay_count = (batcher.consumed() / ONLINE_DECAY_INTERVAL) as u64;
        observer(&record, &params);
        history.push(record);
    }
    if history.is_empty() {
        return Err(Error::InvalidDataset(
            "the stream ended before a single batch could be formed".into(),
        ));
    }
    Ok(TrainOutcome {
        params,
        history,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn scalar(v: f64) -> (ModelSpec, ModelParams) {
        let spec = ModelSpec::linear(1, crate::model::OutputActivation::Identity);
        let params = ModelParams::from_vec(&spec, vec![v, 0.0]).unwrap();
        (spec, params)
    }

    fn adam(lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: lr,
            decay: 1.0,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let (_, mut p) = scalar(0.0);
        let mut st = OptimizerState::new(adam(1e-3), 2);
        adam_step(&mut st, &mut p, &[1.0, 0.0]).unwrap();
        assert!((p.as_slice()[0] + 1e-3).abs() <= 1e-8 * 1e-3);
        assert_eq!(p.as_slice()[1], 0.0);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let (_, mut p) = scalar(0.7);
            let before = p.clone();
            let mut st = OptimizerState::new(OptimizerConfig { kind, ..adam(0.1) }, 2);
            st.step(&mut p, &[0.0, 0.0]).unwrap();
            assert_eq!(p, before);
            assert_eq!(st.step_count, 1);
        }
    }

    #[test]
    fn steps_are_deterministic_and_checked() {
        let (_, p0) = scalar(0.3);
        let mut a = (OptimizerState::new(adam(0.01), 2), p0.clone());
        let mut b = (OptimizerState::new(adam(0.01), 2), p0);
        for g in [[0.4, -1.0], [2.0, 0.1], [-3.0, 0.5]] {
            adam_step(&mut a.0, &mut a.1, &g).unwrap();
            adam_step(&mut b.0, &mut b.1, &g).unwrap();
        }
        assert_eq!(a, b);
        assert!(adam_step(&mut a.0, &mut a.1, &[1.0]).is_err());
        assert!(sgd_step(&mut a.0, &mut a.1, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn sgd_examples() {
        let sgd = |lr| OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..adam(lr)
        };
        let (_, mut p) = scalar(0.0);
        let mut st = OptimizerState::new(sgd(0.1), 2);
        sgd_step(&mut st, &mut p, &[1.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[-0.1, 0.0]);

        let (_, mut one) = scalar(2.0);
        let (_, mut two) = scalar(2.0);
        sgd_step(&mut OptimizerState::new(sgd(0.5), 2), &mut one, &[0.75, -1.5]).unwrap();
        let mut st = OptimizerState::new(sgd(0.25), 2);
        sgd_step(&mut st, &mut two, &[0.75, -1.5]).unwrap();
        sgd_step(&mut st, &mut two, &[0.75, -1.5]).unwrap();
        for (a, b) in one.as_slice().iter().zip(two.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn learning_rate_decays_geometrically() {
        let mut st = OptimizerState::new(OptimizerConfig::default(), 1);
        assert_eq!(st.learning_rate(), 5e-4);
        st.decay_count = 2;
        assert!((st.learning_rate() - 5e-4 * 0.99 * 0.99).abs() < 1e-18);
    }

    #[test]
    fn adam_reduces_noisy_convex_quadratic() {
        // f(θ) = ½ Σ c_i (θ_i - t_i)², gradients observed with N(0, 1) noise.
        let curv = [1.0, 4.0, 0.5];
        let center = [1.0, -2.0, 0.5];
        let f = |th: &[f64]| -> f64 { (0..3).map(|i| 0.5 * curv[i] * (th[i] - center[i]).powi(2)).sum() };
        for seed in 0..5 {
            let spec = ModelSpec::linear(2, crate::model::OutputActivation::Identity);
            let mut p = ModelParams::zeros(&spec);
            let start = f(p.as_slice());
            let mut st = OptimizerState::new(OptimizerConfig::default(), 3);
            let mut r = crate::rng::seeded(seed);
            for _ in 0..10_000 {
                let g: Vec<f64> = (0..3)
                    .map(|i| curv[i] * (p.as_slice()[i] - center[i]) + r.sample::<f64, _>(StandardNormal))
                    .collect();
                adam_step(&mut st, &mut p, &g).unwrap();
            }
            assert!(f(p.as_slice()) < start, "seed {seed}");
        }
    }

    #[test]
    fn config_requires_exactly_one_budget() {
        let spec = ModelSpec::linear(2, crate::model::OutputActivation::Sigmoid);
        let mut c: TrainConfig = serde_json::from_str(
            r#"{"lambda": 0.5, "target_batch_size": 8, "epochs": 3, "loss": "cross_entropy"}"#,
        )
        .unwrap();
        assert_eq!(c.mode().unwrap(), TrainMode::Offline { epochs: 3 });
        assert_eq!(c.optimizer, OptimizerConfig::default());
        assert!(c.validate(&spec).is_ok());
        c.sample_budget = Some(10);
        assert!(matches!(c.validate(&spec), Err(Error::InvalidConfig(_))));
        c.epochs = None;
        assert_eq!(c.mode().unwrap(), TrainMode::Online { sample_budget: 10 });
        c.sample_budget = None;
        assert!(c.mode().is_err());
        c.epochs = Some(1);
        c.target_batch_size = 3;
        assert!(c.validate(&spec).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lambda": 0, "target_batch_size": 8, "loss": "cross_entropy", "bogus": 1}"#).is_err());
    }
}
