//! Batch construction and the closed-form law of randomized batches.
//!
//! Online batches are formed from a stream by taking the shortest prefix of
//! length at least `N̄` that holds two samples of each protected class, so
//! both the batch size and its class composition are random. Offline batches
//! have a fixed size and a fixed class composition.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Smallest admissible target batch size: a batch of exactly `N̄` samples
/// must be able to hold two samples of each class.
pub const MIN_TARGET_SIZE: usize = 4;

/// Binary protected attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Zero,
    One,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::Zero, Group::One];

    pub fn index(self) -> usize {
        match self {
            Group::Zero => 0,
            Group::One => 1,
        }
    }

    pub fn other(self) -> Group {
        match self {
            Group::Zero => Group::One,
            Group::One => Group::Zero,
        }
    }

    pub fn from_index(i: usize) -> Result<Group> {
        match i {
            0 => Ok(Group::Zero),
            1 => Ok(Group::One),
            _ => Err(Error::invalid(format!("protected attribute must be 0 or 1, got {i}"))),
        }
    }

    /// Parses a numeric cell that must hold exactly 0 or 1.
    pub fn from_value(v: f64) -> Result<Group> {
        if v == 0.0 {
            Ok(Group::Zero)
        } else if v == 1.0 {
            Ok(Group::One)
        } else {
            Err(Error::invalid(format!("protected attribute must be 0 or 1, got {v}")))
        }
    }
}

/// A training sample `(x, y, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub target: f64,
    pub group: Group,
}

/// Anything that carries a protected class.
pub trait Grouped {
    fn group(&self) -> Group;
}

impl Grouped for Group {
    fn group(&self) -> Group {
        *self
    }
}

impl Grouped for LabeledPoint {
    fn group(&self) -> Group {
        self.group
    }
}

impl<T> Grouped for (Group, T) {
    fn group(&self) -> Group {
        self.0
    }
}

impl<T: Grouped + ?Sized> Grouped for &T {
    fn group(&self) -> Group {
        (**self).group()
    }
}

/// Index set of one batch, partitioned by protected class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub group0: Vec<usize>,
    pub group1: Vec<usize>,
}

impl Batch {
    fn push(&mut self, index: usize, group: Group) {
        self.indices.push(index);
        match group {
            Group::Zero => self.group0.push(index),
            Group::One => self.group1.push(index),
        }
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }

    pub fn count(&self, group: Group) -> usize {
        self.members(group).len()
    }

    pub fn members(&self, group: Group) -> &[usize] {
        match group {
            Group::Zero => &self.group0,
            Group::One => &self.group1,
        }
    }
}

/// A batch cut from a stream, together with the items it consumed.
#[derive(Debug, Clone)]
pub struct StreamBatch<T> {
    pub batch: Batch,
    pub items: Vec<T>,
}

fn check_target(target: usize) -> Result<()> {
    if target < MIN_TARGET_SIZE {
        return Err(Error::invalid(format!(
            "target batch size must be at least {MIN_TARGET_SIZE}, got {target}"
        )));
    }
    Ok(())
}

/// Cuts consecutive randomized batches from a stream.
///
/// Indices are stream positions; consecutive batches cover contiguous,
/// disjoint ranges.
#[derive(Debug)]
pub struct OnlineBatcher<I> {
    stream: I,
    target: usize,
    position: usize,
}

impl<I, T> OnlineBatcher<I>
where
    I: Iterator<Item = T>,
    T: Grouped,
{
    pub fn new(stream: I, target: usize) -> Result<Self> {
        check_target(target)?;
        Ok(Self {
            stream,
            target,
            position: 0,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Number of stream items consumed so far, including any discarded
    /// partial batch.
    pub fn consumed(&self) -> usize {
        self.position
    }

    pub fn next_batch(&mut self) -> Result<StreamBatch<T>> {
        let mut batch = Batch::default();
        let mut items = Vec::with_capacity(self.target);
        let mut counts = [0usize; 2];
        while items.len() < self.target || counts[0] < 2 || counts[1] < 2 {
            let Some(item) = self.stream.next() else {
                return Err(Error::StreamExhausted {
                    consumed: items.len(),
                });
            };
            let g = item.group();
            counts[g.index()] += 1;
            batch.push(self.position, g);
            items.push(item);
            self.position += 1;
        }
        Ok(StreamBatch { batch, items })
    }
}

/// Cuts the next randomized batch from `stream`, numbering items from 0.
pub fn next_online_batch<T: Grouped>(
    stream: &mut impl Iterator<Item = T>,
    target: usize,
) -> Result<StreamBatch<T>> {
    OnlineBatcher::new(stream, target)?.next_batch()
}

/// Class composition `(n0, n1)` of fixed-size offline batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composition {
    pub group0: usize,
    pub group1: usize,
    /// Set when `⌈p0·N̄⌉` had to be moved into `[2, N̄-2]`.
    pub clamped: bool,
}

/// `n0 = ⌈p0·N̄⌉`, `n1 = N̄ - n0`, clamped so each class gets at least two slots.
pub fn offline_composition(p0: f64, target: usize) -> Result<Composition> {
    check_target(target)?;
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::invalid(format!("class probability must lie in [0, 1], got {p0}")));
    }
    let raw = p0 * target as f64;
    // Products such as 0.3 * 10 may land one ulp above an integer.
    let snapped = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw };
    let ceil = snapped.ceil() as usize;
    let group0 = ceil.clamp(2, target - 2);
    Ok(Composition {
        group0,
        group1: target - group0,
        clamped: group0 != ceil,
    })
}

/// Fixed-composition batches drawn without replacement from per-class pools.
///
/// Each pool is shuffled, consumed in order and reshuffled once exhausted, so
/// every sample of a class is used once before any is reused.
#[derive(Debug, Clone)]
pub struct OfflineBatcher {
    pools: [Vec<usize>; 2],
    cursors: [usize; 2],
    composition: Composition,
    rng: Rng,
}

impl OfflineBatcher {
    /// Builds pools from the class labels of a dataset; `p0` is the
    /// empirical frequency of class 0.
    pub fn new<T: Grouped>(dataset: &[T], target: usize, seed: u64) -> Result<Self> {
        let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, item) in dataset.iter().enumerate() {
            pools[item.group().index()].push(i);
        }
        for g in Group::BOTH {
            if pools[g.index()].len() < 2 {
                return Err(Error::InvalidDataset(format!(
                    "class {} has {} samples, offline batches need at least 2",
                    g.index(),
                    pools[g.index()].len()
                )));
            }
        }
        let p0 = pools[0].len() as f64 / dataset.len() as f64;
        let composition = offline_composition(p0, target)?;
        let mut rng = rng::seeded(seed);
        for pool in &mut pools {
            pool.shuffle(&mut rng);
        }
        Ok(Self {
            pools,
            cursors: [0, 0],
            composition,
            rng,
        })
    }

    pub fn composition(&self) -> Composition {
        self.composition
    }

    /// Warning to surface when the composition had to be clamped.
    pub fn clamp_warning(&self) -> Option<String> {
        self.composition.clamped.then(|| {
            format!(
                "class balance is too skewed for batch size {}; using composition ({}, {})",
                self.composition.group0 + self.composition.group1,
                self.composition.group0,
                self.composition.group1
            )
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        let mut batch = Batch::default();
        let wanted = [self.composition.group0, self.composition.group1];
        for g in Group::BOTH {
            let a = g.index();
            for _ in 0..wanted[a] {
                if self.cursors[a] == self.pools[a].len() {
                    self.pools[a].shuffle(&mut self.rng);
                    self.cursors[a] = 0;
                }
                batch.push(self.pools[a][self.cursors[a]], g);
                self.cursors[a] += 1;
            }
        }
        batch
    }
}

/// Target below which truncated tail sums of the batch law are dropped.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Joint law of `(|I_b|, |I_b^a|)` for online batches when class `a` has
/// probability `pa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLaw {
    pa: f64,
    target: usize,
}

impl BatchLaw {
    pub fn new(pa: f64, target: usize) -> Result<Self> {
        check_target(target)?;
        if !(pa > 0.0 && pa < 1.0) {
            return Err(Error::invalid(format!("class probability must lie in (0, 1), got {pa}")));
        }
        Ok(Self { pa, target })
    }

    pub fn pa(&self) -> f64 {
        self.pa
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// `P[|I_b| = N, |I_b^a| = n]`; zero off the support.
    pub fn pmf(&self, total: usize, n: usize) -> f64 {
        let (p, q) = (self.pa, 1.0 - self.pa);
        if total < self.target || n < 2 || n + 2 > total {
            return 0.0;
        }
        if total == self.target {
            binomial(total, n) * p.powi(n as i32) * q.powi((total - n) as i32)
        } else if n == 2 {
            (total - 1) as f64 * p * p * q.powi((total - 2) as i32)
        } else if n == total - 2 {
            (total - 1) as f64 * p.powi((total - 2) as i32) * q * q
        } else {
            0.0
        }
    }

    /// `E[f(|I_b|, |I_b^a|)]` by summation over the support, truncated once
    /// the geometric tail bound falls below [`TAIL_TOLERANCE`].
    ///
    /// `bound` must dominate `|f|` on the support.
    pub fn expectation(&self, f: impl Fn(usize, usize) -> f64, bound: f64) -> f64 {
        let mut total = 0.0;
        for n in 2..=self.target - 2 {
            total += self.pmf(self.target, n) * f(self.target, n);
        }
        let r = self.pa.max(1.0 - self.pa);
        let mut size = self.target + 1;
        while bound * 2.0 * tail_sum(r, size) >= TAIL_TOLERANCE {
            total += self.pmf(size, 2) * f(size, 2) + self.pmf(size, size - 2) * f(size, size - 2);
            size += 1;
        }
        total
    }
}

/// `Σ_{N ≥ m} (N-1) r^(N-2)`, which dominates the tail mass of the law from `m` on.
fn tail_sum(r: f64, m: usize) -> f64 {
    let k = (m - 1) as f64;
    (k * r.powi(m as i32 - 2) - (k - 1.0) * r.powi(m as i32 - 1)) / ((1.0 - r) * (1.0 - r))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Probability that an online batch has `total` samples, `n` of them from
/// the class with probability `pa`.
pub fn batch_pmf(total: usize, n: usize, pa: f64, target: usize) -> Result<f64> {
    let law = BatchLaw::new(pa, target)?;
    if total < target {
        return Err(Error::invalid(format!(
            "batch size {total} is below the target size {target}"
        )));
    }
    Ok(law.pmf(total, n))
}

/// Bias-correction multiplier `Δ(N, n)` applied to class-`a` losses.
pub fn delta_correction(total: usize, n: usize, target: usize) -> Result<f64> {
    check_target(target)?;
    if total < target || n < 2 || n + 2 > total {
        return Err(Error::invalid(format!(
            "Δ is defined for N >= {target} and 2 <= n <= N-2, got N={total}, n={n}"
        )));
    }
    let big = total as f64;
    Ok(if total == target {
        1.0
    } else if n == 2 {
        big / (2.0 * (big - 1.0))
    } else if n == total - 2 {
        big / (big - 1.0)
    } else {
        0.0
    })
}

/// Relative bias `β_a` of the class ratio `|I_b^a| / |I_b|`, i.e.
/// `E[|I_b^a| / |I_b|] = pa (1 + β_a)`.
pub fn beta_bias(pa: f64, target: usize) -> Result<f64> {
    BatchLaw::new(pa, target)?;
    let (p, q) = (pa, 1.0 - pa);
    let nb = target as i32;
    let power_sum = |x: f64| -> f64 { (1..=target).map(|k| x.powi(k as i32) / k as f64).sum() };
    Ok(q.powi(nb - 1) - q * p.powi(nb - 2) + 2.0 * p / (q * q) * (p.ln() + power_sum(q))
        - 2.0 * q * q / (p * p * p) * (q.ln() + power_sum(p)))
}

/// `E[|I_b^a| / |I_b|]` from the closed form for `β_a`.
pub fn expected_ratio(pa: f64, target: usize) -> Result<f64> {
    Ok(pa * (1.0 + beta_bias(pa, target)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    fn groups(bits: &[u8]) -> Vec<Group> {
        bits.iter().map(|&b| Group::from_index(b as usize).unwrap()).collect()
    }

    #[test]
    fn online_batch_at_target() {
        let g = groups(&[0, 0, 1, 1]);
        let b = next_online_batch(&mut g.into_iter(), 4).unwrap().batch;
        assert_eq!((b.total(), b.count(Group::Zero), b.count(Group::One)), (4, 2, 2));
    }

    #[test]
    fn online_batch_extends_until_two_per_class() {
        let b = next_online_batch(&mut groups(&[0, 0, 0, 0, 1, 1, 0]).into_iter(), 4)
            .unwrap()
            .batch;
        assert_eq!(b.total(), 6);
        assert_eq!(b.count(Group::One), 2);
        assert_eq!(*b.indices.last().unwrap(), 5);
        assert_eq!(b.group1, vec![4, 5]);

        let b = next_online_batch(&mut groups(&[0, 1, 0, 0, 0, 1, 1, 1]).into_iter(), 4)
            .unwrap()
            .batch;
        assert_eq!(b.total(), 6);
        assert_eq!(b.group1, vec![1, 5]);
    }

    #[test]
    fn online_batches_are_contiguous() {
        let mut rng = rng::seeded(3);
        let stream = (0..10_000).map(move |_| if rng.random_bool(0.2) { Group::One } else { Group::Zero });
        let mut batcher = OnlineBatcher::new(stream, 5).unwrap();
        let mut next = 0;
        for _ in 0..200 {
            let b = batcher.next_batch().unwrap().batch;
            assert_eq!(b.indices, (next..next + b.total()).collect::<Vec<_>>());
            next += b.total();
            assert!(b.total() >= 5 && b.count(Group::Zero) >= 2 && b.count(Group::One) >= 2);
            if b.total() > 5 {
                let minority = if b.count(Group::Zero) == 2 { Group::Zero } else { Group::One };
                assert_eq!(b.count(minority), 2);
                assert!(b.members(minority).contains(b.indices.last().unwrap()));
            }
        }
        assert_eq!(batcher.consumed(), next);
    }

    #[test]
    fn online_minimality() {
        // Dropping the last element of an over-long batch breaks the per-class constraint.
        let mut rng = rng::seeded(11);
        let stream = (0..50_000).map(move |_| if rng.random_bool(0.15) { Group::One } else { Group::Zero });
        let mut batcher = OnlineBatcher::new(stream, 6).unwrap();
        for _ in 0..500 {
            let sb = batcher.next_batch().unwrap();
            if sb.batch.total() > 6 {
                let head = &sb.items[..sb.items.len() - 1];
                let ones = head.iter().filter(|g| **g == Group::One).count();
                let zeros = head.len() - ones;
                assert!(ones < 2 || zeros < 2);
            }
        }
    }

    #[test]
    fn online_stream_exhaustion() {
        let err = next_online_batch(&mut groups(&[0, 0, 0, 1, 0]).into_iter(), 4).unwrap_err();
        assert!(matches!(err, Error::StreamExhausted { consumed: 5 }));
        assert!(next_online_batch(&mut groups(&[0, 0, 1, 1]).into_iter(), 3).is_err());
    }

    #[test]
    fn offline_compositions() {
        let c = offline_composition(0.5, 4).unwrap();
        assert_eq!((c.group0, c.group1, c.clamped), (2, 2, false));
        let c = offline_composition(0.3, 10).unwrap();
        assert_eq!((c.group0, c.group1, c.clamped), (3, 7, false));
        let c = offline_composition(0.05, 10).unwrap();
        assert_eq!((c.group0, c.group1, c.clamped), (2, 8, true));
        let c = offline_composition(0.95, 10).unwrap();
        assert_eq!((c.group0, c.group1, c.clamped), (8, 2, true));
    }

    #[test]
    fn offline_batches_cycle_through_pools() {
        let data: Vec<Group> = (0..23).map(|i| if i % 3 == 0 { Group::One } else { Group::Zero }).collect();
        let mut batcher = OfflineBatcher::new(&data, 8, 5).unwrap();
        let comp = batcher.composition();
        assert_eq!(comp.group0 + comp.group1, 8);
        let pool_sizes = [15usize, 8];
        let mut drawn: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..40 {
            let b = batcher.next_batch();
            assert_eq!(b.count(Group::Zero), comp.group0);
            assert_eq!(b.count(Group::One), comp.group1);
            for g in Group::BOTH {
                for &i in b.members(g) {
                    assert_eq!(data[i], g);
                }
                drawn[g.index()].extend_from_slice(b.members(g));
            }
        }
        for g in Group::BOTH {
            let a = g.index();
            for epoch in drawn[a].chunks_exact(pool_sizes[a]) {
                let mut e = epoch.to_vec();
                e.sort_unstable();
                e.dedup();
                assert_eq!(e.len(), pool_sizes[a], "sample reused within an epoch");
            }
        }
    }

    #[test]
    fn offline_rejects_tiny_class() {
        let data = [Group::Zero, Group::Zero, Group::Zero, Group::One];
        assert!(matches!(OfflineBatcher::new(&data, 4, 0), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn offline_is_seed_deterministic() {
        let data: Vec<Group> = (0..50).map(|i| if i % 4 == 0 { Group::One } else { Group::Zero }).collect();
        let mut a = OfflineBatcher::new(&data, 10, 9).unwrap();
        let mut b = OfflineBatcher::new(&data, 10, 9).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn pmf_examples() {
        assert_abs_diff_eq!(batch_pmf(4, 2, 0.5, 4).unwrap(), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(batch_pmf(5, 2, 0.5, 4).unwrap(), 0.125, epsilon = 1e-15);
        assert_eq!(batch_pmf(5, 4, 0.5, 4).unwrap(), 0.0);
        assert!(batch_pmf(3, 2, 0.5, 4).is_err());
        assert!(batch_pmf(5, 2, 1.0, 4).is_err());
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_correction(4, 2, 4).unwrap(), 1.0);
        assert_abs_diff_eq!(delta_correction(6, 2, 4).unwrap(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(delta_correction(6, 4, 4).unwrap(), 1.2, epsilon = 1e-15);
        assert_eq!(delta_correction(9, 4, 4).unwrap(), 0.0);
        assert!(delta_correction(3, 2, 4).is_err());
        assert!(delta_correction(6, 5, 4).is_err());
        assert!(delta_correction(6, 1, 4).is_err());
    }

    #[test]
    fn beta_examples() {
        assert_abs_diff_eq!(beta_bias(0.5, 4).unwrap(), 0.0, epsilon = 1e-12);
        let (pa, nb) = (0.7, 8);
        let lhs = pa * (1.0 + beta_bias(pa, nb).unwrap()) + (1.0 - pa) * (1.0 + beta_bias(1.0 - pa, nb).unwrap());
        assert_abs_diff_eq!(lhs, 1.0, epsilon = 1e-10);
        assert!(beta_bias(0.0, 4).is_err());
        assert!(beta_bias(1.0, 4).is_err());
        assert_abs_diff_eq!(expected_ratio(0.5, 4).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn law_identities() {
        for pa in [0.2, 0.3, 0.5, 0.7] {
            for nb in [4, 8, 16] {
                let law = BatchLaw::new(pa, nb).unwrap();
                assert_abs_diff_eq!(law.expectation(|_, _| 1.0, 1.0), 1.0, epsilon = 1e-10);
                let corrected = law.expectation(
                    |big, n| delta_correction(big, n, nb).unwrap() * n as f64 / big as f64,
                    1.2,
                );
                assert_abs_diff_eq!(corrected, pa, epsilon = 1e-10);
                let ratio = law.expectation(|big, n| n as f64 / big as f64, 1.0);
                assert_abs_diff_eq!(ratio, expected_ratio(pa, nb).unwrap(), epsilon = 1e-10);
                let sym = expected_ratio(pa, nb).unwrap() + expected_ratio(1.0 - pa, nb).unwrap();
                assert_abs_diff_eq!(sym, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn binomial_small() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(16, 8), 12870.0);
        assert_eq!(binomial(5, 0), 1.0);
    }
}
