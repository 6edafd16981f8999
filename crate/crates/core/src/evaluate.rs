//! Performance and unfairness metrics, λ sweeps and trade-off areas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batching::{Group, LabeledPoint};
use crate::error::{Error, Result};
use crate::ipm::{kolmogorov, EmpiricalSample};
use crate::model::{forward, LossKind, ModelParams, ModelSpec};
use crate::optimize::{train_offline, train_online, TrainConfig, TrainMode};

/// Decision threshold for turning scores into labels.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} scores, {b} labels")));
    }
    Ok(())
}

/// Fraction of samples with `1{score > threshold} == label`.
pub fn accuracy(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| f64::from(u8::from(s > threshold)) == y)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    same_len(predictions.len(), targets.len())?;
    if targets.len() < 2 {
        return Err(Error::invalid("R² needs at least two targets"));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² is undefined for targets with zero variance"));
    }
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Kolmogorov distance between the group-conditional score samples.
pub fn sp_unfairness(scores: &[f64], groups: &[Group]) -> Result<f64> {
    same_len(scores.len(), groups.len())?;
    let pick = |g: Group| -> Vec<f64> {
        scores.iter().zip(groups).filter(|(_, &h)| h == g).map(|(&s, _)| s).collect()
    };
    let (s0, s1) = (pick(Group::Zero), pick(Group::One));
    if s0.is_empty() || s1.is_empty() {
        return Err(Error::invalid("statistical parity needs samples from both groups"));
    }
    Ok(kolmogorov(&EmpiricalSample::new(&s0)?, &EmpiricalSample::new(&s1)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub lambda: f64,
    pub unfairness: f64,
    /// Performance clamped to `[0, 1]` for area computations.
    pub performance: f64,
    /// Accuracy or R² as measured.
    pub performance_raw: f64,
}

impl TradeoffPoint {
    pub fn new(lambda: f64, unfairness: f64, performance_raw: f64) -> Self {
        Self {
            lambda,
            unfairness,
            performance: performance_raw.clamp(0.0, 1.0),
            performance_raw,
        }
    }
}

/// Scores of a trained model on a dataset.
pub fn predict(spec: &ModelSpec, params: &ModelParams, data: &[LabeledPoint]) -> Result<Vec<f64>> {
    data.iter().map(|p| forward(spec, params, &p.features)).collect()
}

/// Accuracy (cross-entropy models) or R² (squared-error models) plus
/// SP-unfairness on a dataset.
pub fn evaluate_model(
    spec: &ModelSpec,
    params: &ModelParams,
    loss: LossKind,
    data: &[LabeledPoint],
) -> Result<(f64, f64)> {
    let scores = predict(spec, params, data)?;
    let targets: Vec<f64> = data.iter().map(|p| p.target).collect();
    let groups: Vec<Group> = data.iter().map(|p| p.group).collect();
    let performance = match loss {
        LossKind::CrossEntropy => accuracy(&scores, &targets, DEFAULT_THRESHOLD)?,
        LossKind::SquaredError => r_squared(&scores, &targets)?,
    };
    Ok((performance, sp_unfairness(&scores, &groups)?))
}

/// `count` values equally spaced on a log scale from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return Err(Error::invalid(format!("bad log grid {lo}..{hi} with {count} points")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    let step = (b - a) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i + 1 == count { hi } else { 10f64.powf(a + step * i as f64) })
        .collect())
}

/// Trains one model with the given config on `train`.
pub fn train_model(config: &TrainConfig, spec: &ModelSpec, train: &[LabeledPoint]) -> Result<ModelParams> {
    let outcome = match config.mode()? {
        TrainMode::Offline { .. } => train_offline(config, spec, train)?,
        TrainMode::Online { .. } => train_online(config, spec, train.iter().cloned(), |_, _| {})?,
    };
    Ok(outcome.params)
}

/// One independent run per λ, run `i` seeded with `seed ⊕ i`, evaluated on
/// `test`. Points come back sorted by λ.
pub fn lambda_sweep(
    base: &TrainConfig,
    grid: &[f64],
    train: &[LabeledPoint],
    test: &[LabeledPoint],
    spec: &ModelSpec,
) -> Result<Vec<TradeoffPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("λ grid is empty"));
    }
    let mut points = grid
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let config = TrainConfig {
                lambda,
                seed: base.seed ^ i as u64,
                ..base.clone()
            };
            let params = train_model(&config, spec, train)?;
            let (performance, unfairness) = evaluate_model(spec, &params, config.loss, test)?;
            Ok(TradeoffPoint::new(lambda, unfairness, performance))
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMethod {
    Trapezoid,
    ParetoStaircase,
}

/// Area under the performance-versus-unfairness trade-off.
///
/// `Trapezoid` integrates clamped performance over unfairness across the
/// observed range. `ParetoStaircase` is the area of `[0,1]²` dominated by at
/// least one point (lower unfairness, higher performance).
pub fn auc_tradeoff(points: &[TradeoffPoint], method: AucMethod) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.unfairness, p.performance)).collect();
    if pts.iter().any(|&(u, p)| !u.is_finite() || !p.is_finite()) {
        return Err(Error::invalid("trade-off points must be finite"));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    match method {
        AucMethod::Trapezoid => {
            if pts.len() < 2 {
                return Err(Error::invalid("the trapezoid AUC needs at least two points"));
            }
            Ok(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum())
        }
        AucMethod::ParetoStaircase => {
            if pts.is_empty() {
                return Err(Error::invalid("the staircase AUC needs at least one point"));
            }
            let mut area = 0.0;
            let mut best = 0.0f64;
            for (i, &(u, p)) in pts.iter().enumerate() {
                best = best.max(p.clamp(0.0, 1.0));
                let next = pts.get(i + 1).map_or(1.0, |q| q.0).clamp(0.0, 1.0);
                area += best * (next - u.clamp(0.0, 1.0));
            }
            Ok(area)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.6, 0.4], &[1.0, 0.0], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.6, 0.4], &[0.0, 1.0], 0.5).unwrap(), 0.0);
        assert_eq!(accuracy(&[0.5; 4], &[0.0, 1.0, 0.0, 0.0], 0.5).unwrap(), 0.75);
        assert!(accuracy(&[0.5], &[0.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let y = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_abs_diff_eq!(r_squared(&[3.5; 4], &y).unwrap(), 0.0, epsilon = 1e-15);
        assert!(r_squared(&[7.0, 4.0, 2.0, 1.0], &y).unwrap() < 0.0);
        assert!(r_squared(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn sp_unfairness_examples() {
        use Group::{One, Zero};
        assert_eq!(sp_unfairness(&[1.0, 2.0, 2.0, 1.0], &[Zero, Zero, One, One]).unwrap(), 0.0);
        assert_eq!(sp_unfairness(&[0.1, 0.2, 0.3, 0.4], &[Zero, Zero, One, One]).unwrap(), 1.0);
        assert_eq!(sp_unfairness(&[0.0, 2.0, 1.0, 3.0], &[Zero, Zero, One, One]).unwrap(), 0.5);
        assert!(sp_unfairness(&[0.0, 1.0], &[Zero, Zero]).is_err());
    }

    #[test]
    fn auc_examples() {
        let p = |u, q| TradeoffPoint::new(0.0, u, q);
        let two = [p(0.5, 0.9), p(0.1, 0.8)];
        assert_abs_diff_eq!(auc_tradeoff(&two, AucMethod::Trapezoid).unwrap(), 0.34, epsilon = 1e-15);
        assert_abs_diff_eq!(auc_tradeoff(&[p(0.3, 0.6)], AucMethod::ParetoStaircase).unwrap(), 0.6 * 0.7, epsilon = 1e-15);
        let same = [p(0.3, 0.6); 3];
        assert_eq!(auc_tradeoff(&same, AucMethod::Trapezoid).unwrap(), 0.0);
        assert_abs_diff_eq!(auc_tradeoff(&same, AucMethod::ParetoStaircase).unwrap(), 0.42, epsilon = 1e-15);
        assert!(auc_tradeoff(&[p(0.3, 0.6)], AucMethod::Trapezoid).is_err());
        assert!(auc_tradeoff(&[], AucMethod::ParetoStaircase).is_err());
        // Staircase: 0.8 on [0.1, 0.5), 0.9 on [0.5, 1].
        assert_abs_diff_eq!(auc_tradeoff(&two, AucMethod::ParetoStaircase).unwrap(), 0.8 * 0.4 + 0.9 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn performance_is_clamped_separately() {
        let t = TradeoffPoint::new(1.0, 0.2, -0.4);
        assert_eq!(t.performance, 0.0);
        assert_eq!(t.performance_raw, -0.4);
    }

    #[test]
    fn log_grid_matches_protocols() {
        let g = log_grid(1e-5, 10.0, 25).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 1e-5);
        assert_eq!(g[24], 10.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_grid(1e-5, 1e3, 50).unwrap().len(), 50);
        assert_eq!(log_grid(0.5, 0.5, 1).unwrap(), vec![0.5]);
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    fn point() -> impl Strategy<Value = TradeoffPoint> {
        (0.0..=1.0f64, -0.5..=1.5f64).prop_map(|(u, p)| TradeoffPoint::new(0.0, u, p))
    }

    proptest! {
        #[test]
        fn staircase_is_monotone_and_bounded(pts in prop::collection::vec(point(), 1..12), extra in point()) {
            let base = auc_tradeoff(&pts, AucMethod::ParetoStaircase).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let mut more = pts.clone();
            more.push(extra);
            let grown = auc_tradeoff(&more, AucMethod::ParetoStaircase).unwrap();
            prop_assert!(grown >= base - 1e-15);
            prop_assert!(grown <= 1.0);
        }

        #[test]
        fn trapezoid_in_unit_box(pts in prop::collection::vec(point(), 2..12)) {
            let a = auc_tradeoff(&pts, AucMethod::Trapezoid).unwrap();
            prop_assert!((0.0..=1.0 + 1e-15).contains(&a));
        }

        #[test]
        fn sp_unfairness_is_kolmogorov(s0 in prop::collection::vec(-3.0..3.0f64, 1..10), s1 in prop::collection::vec(-3.0..3.0f64, 1..10)) {
            let scores: Vec<f64> = s0.iter().chain(&s1).copied().collect();
            let groups: Vec<Group> = s0.iter().map(|_| Group::Zero).chain(s1.iter().map(|_| Group::One)).collect();
            let direct = kolmogorov(&EmpiricalSample::new(&s0).unwrap(), &EmpiricalSample::new(&s1).unwrap());
            prop_assert_eq!(sp_unfairness(&scores, &groups).unwrap().to_bits(), direct.to_bits());
        }
    }
}
