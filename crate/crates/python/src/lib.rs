//! Python bindings for `ipmfair`.

use ipmfair::batching::{self, Group, LabeledPoint};
use ipmfair::estimators::{self, BatchOutputs};
use ipmfair::evaluate::{self, AucMethod, TradeoffPoint};
use ipmfair::ipm::{EmpiricalSample, KernelSpec, Metric};
use ipmfair::model::{self, Checkpoint, LossKind, ModelParams, ModelSpec, OutputActivation};
use ipmfair::optimize::{self, TrainConfig, TrainMode};
use ipmfair::verify::{self, CheckOptions, Scope};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn to_py(e: ipmfair::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kernel(anchor: f64, bandwidth: Option<f64>) -> PyResult<KernelSpec> {
    match bandwidth {
        Some(bw) => KernelSpec::gaussian(bw),
        None => KernelSpec::distance_induced(anchor),
    }
    .map_err(to_py)
}

fn groups(values: &[f64]) -> PyResult<Vec<Group>> {
    values.iter().map(|&v| Group::from_value(v).map_err(to_py)).collect()
}

fn points(features: Vec<Vec<f64>>, targets: &[f64], protected: &[f64]) -> PyResult<Vec<LabeledPoint>> {
    if features.len() != targets.len() || features.len() != protected.len() {
        return Err(PyValueError::new_err("features, targets and groups must have equal length"));
    }
    features
        .into_iter()
        .zip(targets)
        .zip(groups(protected)?)
        .map(|((x, &y), group)| {
            Ok(LabeledPoint {
                features: x,
                target: y,
                group,
            })
        })
        .collect()
}

/// Distance between two samples under a named metric.
#[pyfunction]
#[pyo3(signature = (first, second, metric, anchor = 0.0, bandwidth = None))]
fn distance(first: Vec<f64>, second: Vec<f64>, metric: &str, anchor: f64, bandwidth: Option<f64>) -> PyResult<f64> {
    let a = EmpiricalSample::new(&first).map_err(to_py)?;
    let b = EmpiricalSample::new(&second).map_err(to_py)?;
    let m = match metric.parse::<Metric>().map_err(to_py)? {
        Metric::Mmd(_) => Metric::Mmd(kernel(anchor, bandwidth)?),
        m => m,
    };
    m.distance(&a, &b).map_err(to_py)
}

/// Every metric as `(name, value)` pairs.
#[pyfunction]
#[pyo3(signature = (first, second, anchor = 0.0, bandwidth = None))]
fn all_distances(first: Vec<f64>, second: Vec<f64>, anchor: f64, bandwidth: Option<f64>) -> PyResult<Vec<(String, f64)>> {
    let a = EmpiricalSample::new(&first).map_err(to_py)?;
    let b = EmpiricalSample::new(&second).map_err(to_py)?;
    Metric::all(kernel(anchor, bandwidth)?)
        .iter()
        .map(|m| Ok((m.name().to_string(), m.distance(&a, &b).map_err(to_py)?)))
        .collect()
}

#[pyfunction]
fn batch_pmf(total: usize, n: usize, pa: f64, target: usize) -> PyResult<f64> {
    batching::batch_pmf(total, n, pa, target).map_err(to_py)
}

#[pyfunction]
fn delta_correction(total: usize, n: usize, target: usize) -> PyResult<f64> {
    batching::delta_correction(total, n, target).map_err(to_py)
}

#[pyfunction]
fn beta_bias(pa: f64, target: usize) -> PyResult<f64> {
    batching::beta_bias(pa, target).map_err(to_py)
}

#[pyfunction]
fn expected_ratio(pa: f64, target: usize) -> PyResult<f64> {
    batching::expected_ratio(pa, target).map_err(to_py)
}

/// Unbiased U-statistic estimate of the squared MMD between two score sets.
#[pyfunction]
#[pyo3(signature = (scores0, scores1, anchor = 0.0, bandwidth = None))]
fn u_stat_mmd(scores0: Vec<f64>, scores1: Vec<f64>, anchor: f64, bandwidth: Option<f64>) -> PyResult<f64> {
    estimators::u_stat_mmd_scores(&scores0, &scores1, &kernel(anchor, bandwidth)?).map_err(to_py)
}

/// Batch-size corrected loss estimate; `plain=True` gives the uncorrected mean.
#[pyfunction]
#[pyo3(signature = (losses0, losses1, target, plain = false))]
fn batch_loss(losses0: Vec<f64>, losses1: Vec<f64>, target: usize, plain: bool) -> PyResult<f64> {
    let s0 = vec![0.0; losses0.len()];
    let s1 = vec![0.0; losses1.len()];
    let out = BatchOutputs::new(s0, s1, losses0, losses1, target).map_err(to_py)?;
    if plain {
        Ok(estimators::plain_loss(&out))
    } else {
        estimators::corrected_loss(&out).map_err(to_py)
    }
}

#[pyfunction]
fn sp_unfairness(scores: Vec<f64>, groups_: Vec<f64>) -> PyResult<f64> {
    evaluate::sp_unfairness(&scores, &groups(&groups_)?).map_err(to_py)
}

/// Area under a trade-off curve given `(lambda, unfairness, performance)` rows.
#[pyfunction]
#[pyo3(signature = (points, method = "trapezoid"))]
fn tradeoff_auc(points: Vec<(f64, f64, f64)>, method: &str) -> PyResult<f64> {
    let method = match method {
        "trapezoid" => AucMethod::Trapezoid,
        "pareto_staircase" => AucMethod::ParetoStaircase,
        other => return Err(PyValueError::new_err(format!("unknown AUC method '{other}'"))),
    };
    let pts: Vec<TradeoffPoint> = points.into_iter().map(|(l, u, p)| TradeoffPoint::new(l, u, p)).collect();
    evaluate::auc_tradeoff(&pts, method).map_err(to_py)
}

/// Run the built-in verification harness; returns `(passed, line)` pairs.
#[pyfunction]
#[pyo3(signature = (scope = "all", seed = 0))]
fn check(scope: &str, seed: u64) -> PyResult<Vec<(bool, String)>> {
    let scope: Scope = scope.parse().map_err(to_py)?;
    let opts = CheckOptions {
        seed,
        ..CheckOptions::default()
    };
    let report = verify::run_checks(scope, &opts).map_err(to_py)?;
    Ok(report.lines.iter().map(|l| (l.passed, l.to_string())).collect())
}

/// A linear model or one-hidden-layer ReLU network with its parameters.
#[pyclass(name = "Model")]
struct PyModel {
    spec: ModelSpec,
    params: ModelParams,
    seed: u64,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, hidden_width = None, output = "sigmoid", seed = 0))]
    fn new(input_dim: usize, hidden_width: Option<usize>, output: &str, seed: u64) -> PyResult<Self> {
        let output = match output {
            "sigmoid" => OutputActivation::Sigmoid,
            "identity" => OutputActivation::Identity,
            other => return Err(PyValueError::new_err(format!("unknown output activation '{other}'"))),
        };
        let spec = match hidden_width {
            Some(h) => ModelSpec::mlp(input_dim, h, output),
            None => ModelSpec::linear(input_dim, output),
        };
        spec.validate().map_err(to_py)?;
        Ok(Self {
            params: ModelParams::init(&spec, seed),
            spec,
            seed,
        })
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        let c = Checkpoint::from_text(text).map_err(to_py)?;
        Ok(Self {
            spec: c.spec,
            params: c.params,
            seed: c.seed,
        })
    }

    fn checkpoint(&self) -> String {
        Checkpoint {
            spec: self.spec,
            seed: self.seed,
            params: self.params.clone(),
        }
        .to_text()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.params.as_slice().to_vec()
    }

    #[setter]
    fn set_params(&mut self, values: Vec<f64>) -> PyResult<()> {
        self.params = ModelParams::from_vec(&self.spec, values).map_err(to_py)?;
        Ok(())
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        features
            .iter()
            .map(|x| model::forward(&self.spec, &self.params, x).map_err(to_py))
            .collect()
    }

    /// Train on the given data. `config` is a JSON training config; the
    /// model's parameters are replaced by the result. Returns the objective
    /// history as `(batch, samples, loss, penalty, total)` rows.
    fn fit(
        &mut self,
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        groups_: Vec<f64>,
        config: &str,
    ) -> PyResult<Vec<(usize, usize, f64, f64, f64)>> {
        let config: TrainConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let data = points(features, &targets, &groups_)?;
        let outcome = match config.mode().map_err(to_py)? {
            TrainMode::Offline { .. } => optimize::train_offline(&config, &self.spec, &data),
            TrainMode::Online { .. } => optimize::train_online(&config, &self.spec, data, |_, _| {}),
        }
        .map_err(to_py)?;
        self.params = outcome.params;
        self.seed = config.seed;
        Ok(outcome
            .history
            .iter()
            .map(|r| (r.batch, r.samples, r.value.loss, r.value.penalty, r.value.total))
            .collect())
    }

    /// `(performance, unfairness)` on labeled data: accuracy for
    /// classification, R² for regression.
    #[pyo3(signature = (features, targets, groups_, loss = "cross_entropy"))]
    fn evaluate(&self, features: Vec<Vec<f64>>, targets: Vec<f64>, groups_: Vec<f64>, loss: &str) -> PyResult<(f64, f64)> {
        let loss = match loss {
            "cross_entropy" => LossKind::CrossEntropy,
            "squared_error" => LossKind::SquaredError,
            other => return Err(PyValueError::new_err(format!("unknown loss '{other}'"))),
        };
        let data = points(features, &targets, &groups_)?;
        evaluate::evaluate_model(&self.spec, &self.params, loss, &data).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.params.len()
    }
}

#[pymodule]
fn ipmfair_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(all_distances, m)?)?;
    m.add_function(wrap_pyfunction!(batch_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(delta_correction, m)?)?;
    m.add_function(wrap_pyfunction!(beta_bias, m)?)?;
    m.add_function(wrap_pyfunction!(expected_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(u_stat_mmd, m)?)?;
    m.add_function(wrap_pyfunction!(batch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sp_unfairness, m)?)?;
    m.add_function(wrap_pyfunction!(tradeoff_auc, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
