//! Integral probability metrics between discrete univariate distributions.
//!
//! All distances are exact for finitely supported measures: CDF-based metrics
//! walk the merged breakpoint partition of both supports, kernel metrics use
//! full weighted double sums.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finitely supported distribution on the real line.
///
/// Values are kept sorted ascending with ties merged, weights are strictly
/// positive and normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalSample {
    /// Uniform empirical measure on `values`.
    pub fn new(values: &[f64]) -> Result<Self> {
        let w = vec![1.0; values.len()];
        Self::weighted(values, &w)
    }

    pub fn weighted(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empirical sample needs at least one value"));
        }
        if values.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample value {v}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("weights must be positive, got {w}")));
        }

        let pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        let mut sample = Self::from_pairs(pairs);
        let total: f64 = sample.weights.iter().sum();
        for w in &mut sample.weights {
            *w /= total;
        }
        Ok(sample)
    }

    /// Sorts and merges ties by summing weights, without renormalizing.
    fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, w) in pairs {
            match values.last() {
                Some(&last) if last == v => *weights.last_mut().unwrap() += w,
                _ => {
                    values.push(v);
                    weights.push(w);
                }
            }
        }
        Self { values, weights }
    }

    /// Distinct support points, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of distinct support points.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Right-continuous CDF `P[Z <= z]`.
    pub fn cdf(&self, z: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= z);
        self.weights[..k].iter().sum()
    }

    /// Applies `f` to every support point, keeping the weights.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = self.values.iter().map(|&v| f(v)).zip(self.weights.iter().copied()).collect();
        if let Some((v, _)) = pairs.iter().find(|(v, _)| !v.is_finite()) {
            return Err(Error::invalid(format!("mapped sample value {v} is not finite")));
        }
        Ok(Self::from_pairs(pairs))
    }
}

/// One breakpoint of the merged support with both CDFs evaluated there.
#[derive(Debug, Clone, Copy)]
struct Breakpoint {
    z: f64,
    cdf_a: f64,
    cdf_b: f64,
}

fn merged_breakpoints(a: &EmpiricalSample, b: &EmpiricalSample) -> Vec<Breakpoint> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    while i < a.len() || j < b.len() {
        let za = a.values.get(i).copied().unwrap_or(f64::INFINITY);
        let zb = b.values.get(j).copied().unwrap_or(f64::INFINITY);
        let z = za.min(zb);
        if za == z {
            fa += a.weights[i];
            i += 1;
        }
        if zb == z {
            fb += b.weights[j];
            j += 1;
        }
        out.push(Breakpoint {
            z,
            cdf_a: fa,
            cdf_b: fb,
        });
    }
    out
}

/// Sup-norm distance between the two CDFs.
pub fn kolmogorov(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    merged_breakpoints(a, b)
        .iter()
        .map(|bp| (bp.cdf_a - bp.cdf_b).abs())
        .fold(0.0, f64::max)
        .min(1.0)
}

/// Orders of the CDF `L^p` distance that admit exact evaluation here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpOrder {
    One,
    Two,
    Infinity,
}

impl TryFrom<f64> for LpOrder {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(LpOrder::One)
        } else if p == 2.0 {
            Ok(LpOrder::Two)
        } else if p == f64::INFINITY {
            Ok(LpOrder::Infinity)
        } else {
            Err(Error::invalid(format!("unsupported L^p order {p}; use 1, 2 or inf")))
        }
    }
}

/// `(∫ |F_a - F_b|^p dz)^(1/p)`, integrated piecewise over the merged breakpoints.
pub fn lp_distance(a: &EmpiricalSample, b: &EmpiricalSample, p: LpOrder) -> f64 {
    let bps = merged_breakpoints(a, b);
    let integral = |pow: fn(f64) -> f64| -> f64 {
        bps.windows(2)
            .map(|w| pow((w[0].cdf_a - w[0].cdf_b).abs()) * (w[1].z - w[0].z))
            .fold(0.0, |acc, v| acc + v)
    };
    match p {
        LpOrder::One => integral(|d| d),
        LpOrder::Two => integral(|d| d * d).sqrt(),
        LpOrder::Infinity => kolmogorov(a, b),
    }
}

/// 1-Wasserstein distance via the monotone (quantile) coupling.
///
/// Mass is transported between atoms in sorted order; for equal-size uniform
/// samples this is the mean absolute difference of the order statistics.
pub fn wasserstein1(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut left_a = a.weights[0];
    let mut left_b = b.weights[0];
    let mut cost = 0.0;
    loop {
        let moved = left_a.min(left_b);
        cost += moved * (a.values[i] - b.values[j]).abs();
        left_a -= moved;
        left_b -= moved;
        if left_a <= left_b {
            i += 1;
            if i == a.len() {
                break;
            }
            left_a = a.weights[i];
        } else {
            j += 1;
            if j == b.len() {
                break;
            }
            left_b = b.weights[j];
        }
    }
    cost
}

fn weighted_pair_sum(a: &EmpiricalSample, b: &EmpiricalSample, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for (&x, &wx) in a.values.iter().zip(&a.weights) {
        let mut row = 0.0;
        for (&y, &wy) in b.values.iter().zip(&b.weights) {
            row += wy * f(x, y);
        }
        total += wx * row;
    }
    total
}

/// Energy distance `2E|Z_a - Z_b| - E|Z_a - Z_a'| - E|Z_b - Z_b'|`.
pub fn energy_distance(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let dist = |x: f64, y: f64| (x - y).abs();
    2.0 * weighted_pair_sum(a, b, dist) - weighted_pair_sum(a, a, dist) - weighted_pair_sum(b, b, dist)
}

/// Symmetric positive definite kernels on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `K(u, v) = ½(|u - z0| + |v - z0| - |u - v|)`; generates the energy distance.
    DistanceInduced {
        #[serde(default)]
        anchor: f64,
    },
    /// `K(u, v) = exp(-(u - v)² / (2σ²))`.
    Gaussian { bandwidth: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::DistanceInduced { anchor: 0.0 }
    }
}

impl KernelSpec {
    pub fn distance_induced(anchor: f64) -> Result<Self> {
        let k = KernelSpec::DistanceInduced { anchor };
        k.validate()?;
        Ok(k)
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::DistanceInduced { anchor } if !anchor.is_finite() => {
                Err(Error::invalid(format!("kernel anchor must be finite, got {anchor}")))
            }
            KernelSpec::Gaussian { bandwidth } if !(bandwidth.is_finite() && bandwidth > 0.0) => Err(
                Error::invalid(format!("gaussian bandwidth must be positive, got {bandwidth}")),
            ),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match *self {
            KernelSpec::DistanceInduced { anchor } => {
                0.5 * ((u - anchor).abs() + (v - anchor).abs() - (u - v).abs())
            }
            KernelSpec::Gaussian { bandwidth } => {
                let d = u - v;
                (-d * d / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// Partial derivative `∂K(u, v)/∂u`, taking 0 as the derivative of `|·|` at 0.
    #[inline]
    pub fn grad_first(&self, u: f64, v: f64) -> f64 {
        match *self {
            KernelSpec::DistanceInduced { anchor } => 0.5 * (sign(u - anchor) - sign(u - v)),
            KernelSpec::Gaussian { bandwidth } => {
                let s2 = bandwidth * bandwidth;
                -(u - v) / s2 * self.eval(u, v)
            }
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn kernel_eval(k: &KernelSpec, u: f64, v: f64) -> f64 {
    k.eval(u, v)
}

/// Squared MMD in V-form: full weighted double sums including the diagonal.
pub fn mmd_squared(a: &EmpiricalSample, b: &EmpiricalSample, k: &KernelSpec) -> f64 {
    let kern = |x: f64, y: f64| k.eval(x, y);
    weighted_pair_sum(a, a, kern) + weighted_pair_sum(b, b, kern) - 2.0 * weighted_pair_sum(a, b, kern)
}

/// Maximum mean discrepancy between the two discrete measures.
pub fn mmd(a: &EmpiricalSample, b: &EmpiricalSample, k: &KernelSpec) -> Result<f64> {
    k.validate()?;
    let sq = mmd_squared(a, b, k);
    if sq < -1e-12 {
        return Err(Error::Numerical(format!(
            "squared MMD evaluated to {sq:e}, kernel is not positive definite on this support"
        )));
    }
    Ok(sq.max(0.0).sqrt())
}

/// Atoms of the merged support with the mass each measure puts there.
fn merged_masses(a: &EmpiricalSample, b: &EmpiricalSample) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let za = a.values.get(i).copied().unwrap_or(f64::INFINITY);
        let zb = b.values.get(j).copied().unwrap_or(f64::INFINITY);
        let z = za.min(zb);
        let mut ma = 0.0;
        let mut mb = 0.0;
        if za == z {
            ma = a.weights[i];
            i += 1;
        }
        if zb == z {
            mb = b.weights[j];
            j += 1;
        }
        out.push((z, ma, mb));
    }
    out
}

/// Half the `ℓ¹` distance between the probability mass functions.
pub fn total_variation(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let s: f64 = merged_masses(a, b).iter().map(|&(_, ma, mb)| (ma - mb).abs()).sum();
    (0.5 * s).min(1.0)
}

/// Largest merged support accepted by [`tv_dual_bruteforce`].
pub const MAX_BRUTEFORCE_SUPPORT: usize = 16;

/// `max_B |Q_a(B) - Q_b(B)|` over every subset `B` of the merged support.
pub fn tv_dual_bruteforce(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<f64> {
    let atoms = merged_masses(a, b);
    let m = atoms.len();
    if m > MAX_BRUTEFORCE_SUPPORT {
        return Err(Error::invalid(format!(
            "merged support has {m} points, brute force supports at most {MAX_BRUTEFORCE_SUPPORT}"
        )));
    }
    let mut best: f64 = 0.0;
    for mask in 0u32..(1u32 << m) {
        let (mut qa, mut qb) = (0.0, 0.0);
        for (bit, &(_, ma, mb)) in atoms.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                qa += ma;
                qb += mb;
            }
        }
        best = best.max((qa - qb).abs());
    }
    Ok(best)
}

/// Kolmogorov distance through its step-function generator `1{z <= τ}`,
/// evaluated independently at each threshold of the merged support.
pub fn kolmogorov_dual_check(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let expect = |s: &EmpiricalSample, tau: f64| -> f64 {
        s.values
            .iter()
            .zip(&s.weights)
            .filter(|(v, _)| **v <= tau)
            .map(|(_, w)| *w)
            .sum()
    };
    a.values
        .iter()
        .chain(&b.values)
        .map(|&tau| (expect(a, tau) - expect(b, tau)).abs())
        .fold(0.0, f64::max)
}

/// IPMs selectable by name, e.g. from the command line or a penalty config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Kolmogorov,
    L1,
    L2,
    Wasserstein1,
    Energy,
    Mmd(KernelSpec),
    TotalVariation,
}

impl Metric {
    /// Every metric in reporting order, with the MMD using `kernel`.
    pub fn all(kernel: KernelSpec) -> [Metric; 7] {
        [
            Metric::Kolmogorov,
            Metric::L1,
            Metric::L2,
            Metric::Wasserstein1,
            Metric::Energy,
            Metric::Mmd(kernel),
            Metric::TotalVariation,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Kolmogorov => "kolmogorov",
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Wasserstein1 => "wasserstein1",
            Metric::Energy => "energy",
            Metric::Mmd(_) => "mmd",
            Metric::TotalVariation => "tv",
        }
    }

    pub fn distance(&self, a: &EmpiricalSample, b: &EmpiricalSample) -> Result<f64> {
        Ok(match self {
            Metric::Kolmogorov => kolmogorov(a, b),
            Metric::L1 => lp_distance(a, b, LpOrder::One),
            Metric::L2 => lp_distance(a, b, LpOrder::Two),
            Metric::Wasserstein1 => wasserstein1(a, b),
            Metric::Energy => energy_distance(a, b),
            Metric::Mmd(k) => mmd(a, b, k)?,
            Metric::TotalVariation => total_variation(a, b),
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// Parses a metric name; `mmd` uses the default distance-induced kernel.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kolmogorov" | "ks" | "linf" => Ok(Metric::Kolmogorov),
            "l1" => Ok(Metric::L1),
            "l2" | "cramer" => Ok(Metric::L2),
            "w1" | "wasserstein" | "wasserstein1" => Ok(Metric::Wasserstein1),
            "energy" => Ok(Metric::Energy),
            "mmd" => Ok(Metric::Mmd(KernelSpec::default())),
            "tv" | "total_variation" => Ok(Metric::TotalVariation),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> EmpiricalSample {
        EmpiricalSample::new(v).unwrap()
    }

    #[test]
    fn construction_sorts_and_merges_ties() {
        let e = s(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(e.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(e.weights(), &[0.25, 0.25, 0.5]);
        assert!(EmpiricalSample::new(&[]).is_err());
        assert!(EmpiricalSample::new(&[f64::NAN]).is_err());
        assert!(EmpiricalSample::weighted(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(EmpiricalSample::weighted(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn cdf_is_right_continuous() {
        let e = s(&[0.0, 2.0]);
        assert_eq!(e.cdf(-1.0), 0.0);
        assert_eq!(e.cdf(0.0), 0.5);
        assert_eq!(e.cdf(1.999), 0.5);
        assert_eq!(e.cdf(2.0), 1.0);
    }

    #[test]
    fn kolmogorov_examples() {
        assert_eq!(kolmogorov(&s(&[0.0, 1.0]), &s(&[0.0, 1.0])), 0.0);
        assert_eq!(kolmogorov(&s(&[0.0]), &s(&[1.0])), 1.0);
        assert_eq!(kolmogorov(&s(&[0.0, 2.0]), &s(&[1.0, 3.0])), 0.5);
    }

    #[test]
    fn lp_examples() {
        assert_eq!(lp_distance(&s(&[0.0]), &s(&[1.0]), LpOrder::Two), 1.0);
        assert_eq!(lp_distance(&s(&[0.0, 2.0]), &s(&[1.0, 3.0]), LpOrder::One), 1.0);
        let a = s(&[0.3, -1.0, 4.0]);
        assert_eq!(lp_distance(&a, &a, LpOrder::One), 0.0);
        assert_eq!(
            lp_distance(&s(&[0.0, 2.0]), &s(&[1.0, 3.0]), LpOrder::Infinity),
            0.5
        );
        assert!(LpOrder::try_from(3.0).is_err());
        assert_eq!(LpOrder::try_from(f64::INFINITY).unwrap(), LpOrder::Infinity);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&s(&[0.0, 2.0]), &s(&[1.0, 3.0])), 1.0);
        assert_eq!(wasserstein1(&s(&[5.0]), &s(&[5.0])), 0.0);
        assert_eq!(wasserstein1(&s(&[0.0]), &s(&[-2.5])), 2.5);
    }

    #[test]
    fn energy_and_mmd_examples() {
        let (a, b) = (s(&[0.0]), s(&[1.0]));
        assert_eq!(energy_distance(&a, &b), 2.0);
        let c = s(&[0.1, 0.7, 0.7]);
        assert_eq!(energy_distance(&c, &c), 0.0);
        assert_eq!(2.0 * lp_distance(&a, &b, LpOrder::Two).powi(2), 2.0);

        let k = KernelSpec::default();
        assert_eq!(mmd(&a, &b, &k).unwrap(), 1.0);
        assert_eq!(2.0 * mmd(&a, &b, &k).unwrap().powi(2), energy_distance(&a, &b));
        let g = KernelSpec::gaussian(0.5).unwrap();
        assert_eq!(mmd(&c, &c, &g).unwrap(), 0.0);
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&s(&[0.0]), &s(&[1.0])), 1.0);
        assert_eq!(total_variation(&s(&[0.0, 1.0]), &s(&[0.0, 1.0])), 0.0);
        assert_eq!(total_variation(&s(&[0.0]), &s(&[0.0, 1.0])), 0.5);
        assert_eq!(tv_dual_bruteforce(&s(&[0.0]), &s(&[1.0])).unwrap(), 1.0);
        assert_eq!(tv_dual_bruteforce(&s(&[0.0]), &s(&[0.0, 1.0])).unwrap(), 0.5);
        let big: Vec<f64> = (0..17).map(f64::from).collect();
        assert!(tv_dual_bruteforce(&s(&big), &s(&[0.5])).is_err());
    }

    #[test]
    fn kolmogorov_dual_examples() {
        assert_eq!(kolmogorov_dual_check(&s(&[0.0, 2.0]), &s(&[1.0, 3.0])), 0.5);
        assert_eq!(kolmogorov_dual_check(&s(&[0.0]), &s(&[1.0])), 1.0);
        let a = s(&[1.0, 2.0, 2.0]);
        assert_eq!(kolmogorov_dual_check(&a, &a), 0.0);
    }

    #[test]
    fn kernel_examples() {
        let k = KernelSpec::default();
        assert_eq!(k.eval(0.0, 1.0), 0.0);
        assert_eq!(k.eval(1.0, 1.0), 1.0);
        let g = KernelSpec::gaussian(1.3).unwrap();
        assert_eq!(g.eval(0.4, 0.4), 1.0);
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
    }

    #[test]
    fn kernel_derivative_matches_difference_quotient() {
        let h = 1e-6;
        for k in [
            KernelSpec::distance_induced(0.3).unwrap(),
            KernelSpec::gaussian(0.7).unwrap(),
        ] {
            for &(u, v) in &[(1.0, 2.0), (-0.5, 0.9), (2.0, -1.0)] {
                let fd = (k.eval(u + h, v) - k.eval(u - h, v)) / (2.0 * h);
                assert_abs_diff_eq!(k.grad_first(u, v), fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn metric_parse_roundtrip() {
        for m in Metric::all(KernelSpec::default()) {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("hellinger".parse::<Metric>().is_err());
    }

    fn sample_strategy() -> impl Strategy<Value = EmpiricalSample> {
        // Values on a coarse grid so that ties occur.
        prop::collection::vec(-20i32..20, 1..32)
            .prop_map(|v| EmpiricalSample::new(&v.iter().map(|&x| f64::from(x) / 4.0).collect::<Vec<_>>()).unwrap())
    }

    fn triangle_metrics() -> Vec<(&'static str, fn(&EmpiricalSample, &EmpiricalSample) -> f64)> {
        vec![
            ("kolmogorov", kolmogorov),
            ("l1", |a, b| lp_distance(a, b, LpOrder::One)),
            ("w1", wasserstein1),
            ("mmd", |a, b| mmd(a, b, &KernelSpec::default()).unwrap()),
            ("mmd-gauss", |a, b| mmd(a, b, &KernelSpec::Gaussian { bandwidth: 1.0 }).unwrap()),
            ("tv", total_variation),
        ]
    }

    proptest! {
        #[test]
        fn metric_axioms(a in sample_strategy(), b in sample_strategy(), c in sample_strategy()) {
            for (name, d) in triangle_metrics() {
                let ab = d(&a, &b);
                prop_assert!(ab >= 0.0, "{name} negative");
                prop_assert!((ab - d(&b, &a)).abs() <= 1e-12, "{name} asymmetric");
                prop_assert!(d(&a, &a) <= 1e-7, "{name} d(a,a) = {}", d(&a, &a));
                prop_assert!(ab <= d(&a, &c) + d(&c, &b) + 1e-9, "{name} triangle");
            }
            prop_assert!(energy_distance(&a, &b) >= -1e-12);
            prop_assert!(energy_distance(&a, &a).abs() <= 1e-12);
        }

        #[test]
        fn identities(a in sample_strategy(), b in sample_strategy()) {
            let l1 = lp_distance(&a, &b, LpOrder::One);
            prop_assert!((wasserstein1(&a, &b) - l1).abs() <= 1e-10);
            let l2 = lp_distance(&a, &b, LpOrder::Two);
            let e = energy_distance(&a, &b);
            prop_assert!((e - 2.0 * l2 * l2).abs() <= 1e-10);
            for z0 in [-3.0, 0.0, 7.0] {
                let m = mmd(&a, &b, &KernelSpec::DistanceInduced { anchor: z0 }).unwrap();
                prop_assert!((e - 2.0 * m * m).abs() <= 1e-10);
            }
            prop_assert!((kolmogorov(&a, &b) - kolmogorov_dual_check(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn kolmogorov_invariant_under_monotone_maps(a in sample_strategy(), b in sample_strategy()) {
            let f = |x: f64| x.powi(3) + 2.0 * x;
            let k = kolmogorov(&a, &b);
            prop_assert!((k - kolmogorov(&a.map(f).unwrap(), &b.map(f).unwrap())).abs() <= 1e-12);
            prop_assert!((k - kolmogorov(&a.map(f64::exp).unwrap(), &b.map(f64::exp).unwrap())).abs() <= 1e-12);
        }

        #[test]
        fn scaling_and_translation(a in sample_strategy(), b in sample_strategy(), c in 0.1f64..10.0, t in -50.0f64..50.0) {
            let sa = a.map(|x| c * x).unwrap();
            let sb = b.map(|x| c * x).unwrap();
            prop_assert!((lp_distance(&sa, &sb, LpOrder::One) - c * lp_distance(&a, &b, LpOrder::One)).abs() <= 1e-9);
            prop_assert!((wasserstein1(&sa, &sb) - c * wasserstein1(&a, &b)).abs() <= 1e-9);

            let ta = a.map(|x| x + t).unwrap();
            let tb = b.map(|x| x + t).unwrap();
            prop_assert_eq!(kolmogorov(&ta, &tb), kolmogorov(&a, &b));
            prop_assert_eq!(total_variation(&ta, &tb), total_variation(&a, &b));
            prop_assert!((wasserstein1(&ta, &tb) - wasserstein1(&a, &b)).abs() <= 1e-9);
            prop_assert!((lp_distance(&ta, &tb, LpOrder::Two) - lp_distance(&a, &b, LpOrder::Two)).abs() <= 1e-9);
            prop_assert!((energy_distance(&ta, &tb) - energy_distance(&a, &b)).abs() <= 1e-9);
        }

        #[test]
        fn tv_matches_bruteforce(a in prop::collection::vec(0i32..8, 1..10), b in prop::collection::vec(0i32..8, 1..10)) {
            let a = s(&a.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
            let b = s(&b.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
            prop_assert!((total_variation(&a, &b) - tv_dual_bruteforce(&a, &b).unwrap()).abs() <= 1e-12);
        }
    }
}
