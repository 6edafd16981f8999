//! Synthetic generators and CSV ingestion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batching::{Group, LabeledPoint};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, streams, Rng};
use crate::text::fmt_f64;

/// Regression stream `y = max_j ⟨s_j, x⟩` whose slopes are redrawn once.
///
/// The last feature is the protected attribute; the others are `U[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dimension: usize,
    pub slope_count: usize,
    pub slope_low: f64,
    pub slope_high: f64,
    /// Sample index at which fresh slopes take over; `None` for no shift.
    pub shift_at: Option<usize>,
    pub group_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dimension: 10,
            slope_count: 5,
            slope_low: -2.0,
            slope_high: 2.0,
            shift_at: Some(2000),
            group_prob: 0.5,
            seed: 0,
        }
    }
}

/// Slopes in force from sample index `start` on.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub start: usize,
    pub slopes: Vec<Vec<f64>>,
}

impl Regime {
    pub fn response(&self, x: &[f64]) -> f64 {
        self.slopes
            .iter()
            .map(|s| s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 || self.slope_count == 0 {
            return Err(Error::InvalidConfig("synthetic data needs dimension ≥ 2 and at least one slope".into()));
        }
        if !(self.slope_low < self.slope_high) || !self.slope_low.is_finite() || !self.slope_high.is_finite() {
            return Err(Error::InvalidConfig("slope range must be a finite, non-empty interval".into()));
        }
        if !(self.group_prob > 0.0 && self.group_prob < 1.0) {
            return Err(Error::InvalidConfig(format!("group probability must lie in (0, 1), got {}", self.group_prob)));
        }
        Ok(())
    }

    /// Regimes in order of their start index.
    pub fn regimes(&self) -> Vec<Regime> {
        let mut r = rng::seeded(derive_seed(self.seed, streams::SYNTH_SLOPES));
        let mut draw = |start| Regime {
            start,
            slopes: (0..self.slope_count)
                .map(|_| (0..self.dimension).map(|_| r.random_range(self.slope_low..self.slope_high)).collect())
                .collect(),
        };
        let mut out = vec![draw(0)];
        if let Some(at) = self.shift_at {
            out.push(draw(at));
        }
        out
    }

    fn draw_point(&self, r: &mut Rng, regime: &Regime) -> LabeledPoint {
        let a = r.random_bool(self.group_prob);
        let mut x: Vec<f64> = (0..self.dimension - 1).map(|_| r.random()).collect();
        x.push(f64::from(u8::from(a)));
        LabeledPoint {
            target: regime.response(&x),
            features: x,
            group: if a { Group::One } else { Group::Zero },
        }
    }

    /// Endless training stream.
    pub fn stream(&self) -> Result<SyntheticStream> {
        self.validate()?;
        Ok(SyntheticStream {
            spec: *self,
            regimes: self.regimes(),
            rng: rng::seeded(derive_seed(self.seed, streams::SYNTH_SAMPLES)),
            index: 0,
        })
    }

    /// Independent sample of `count` points from one regime.
    pub fn test_set(&self, regime: usize, count: usize) -> Result<Vec<LabeledPoint>> {
        self.validate()?;
        let regimes = self.regimes();
        let reg = regimes
            .get(regime)
            .ok_or_else(|| Error::invalid(format!("regime {regime} does not exist")))?;
        let mut r = rng::seeded(derive_seed(derive_seed(self.seed, streams::SYNTH_TEST), regime as u64));
        Ok((0..count).map(|_| self.draw_point(&mut r, reg)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStream {
    spec: SyntheticSpec,
    regimes: Vec<Regime>,
    rng: Rng,
    index: usize,
}

impl SyntheticStream {
    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }
}

impl Iterator for SyntheticStream {
    type Item = LabeledPoint;

    fn next(&mut self) -> Option<LabeledPoint> {
        let regime = self.regimes.iter().rev().find(|r| r.start <= self.index).expect("regime 0 starts at 0");
        let p = self.spec.draw_point(&mut self.rng, regime);
        self.index += 1;
        Some(p)
    }
}

/// Binary classification with a group-dependent shift of the latent score.
///
/// Features are four standard normals followed by the protected attribute;
/// `y = 1{x1 + x2/2 − x3/2 + shift·(a − ½) + ε > 0}` with `ε ~ N(0, ½²)`.
pub fn shifted_classification(count: usize, shift: f64, seed: u64) -> Result<Vec<LabeledPoint>> {
    if !shift.is_finite() {
        return Err(Error::invalid("shift must be finite"));
    }
    let mut r = rng::seeded(derive_seed(seed, streams::SYNTH_SAMPLES));
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    Ok((0..count)
        .map(|_| {
            let a = r.random_bool(0.5);
            let mut x: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
            let latent = x[0] + 0.5 * x[1] - 0.5 * x[2] + shift * (f64::from(u8::from(a)) - 0.5) + noise.sample(&mut r);
            x.push(f64::from(u8::from(a)));
            LabeledPoint {
                features: x,
                target: f64::from(u8::from(latent > 0.0)),
                group: if a { Group::One } else { Group::Zero },
            }
        })
        .collect())
}

/// CSV text with header `x1..xd,y,a` at full precision.
pub fn points_to_csv(points: &[LabeledPoint], dimension: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=dimension).map(|i| format!("x{i}")).collect();
    header.extend(["y".into(), "a".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        if p.features.len() != dimension {
            return Err(Error::invalid("points have inconsistent dimension"));
        }
        let mut row: Vec<String> = p.features.iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(p.target));
        row.push(p.group.index().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// CSV text listing every slope vector: `regime,start,slope,s1..sd`.
pub fn regimes_to_csv(regimes: &[Regime], dimension: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["regime".into(), "start".into(), "slope".into()];
    header.extend((1..=dimension).map(|i| format!("s{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, reg) in regimes.iter().enumerate() {
        for (j, s) in reg.slopes.iter().enumerate() {
            let mut row = vec![k.to_string(), reg.start.to_string(), (j + 1).to_string()];
            row.extend(s.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(e.to_string())
}

/// A numeric table read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidDataset(format!("column '{name}' not found; available: {}", self.header.join(", "))))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a headed CSV of numbers. Row numbers in errors are file line numbers.
pub fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("column '{}': '{cell}' is not a finite number", header[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Turns table rows into points: features are every column except the
/// target and protected ones, in file order.
pub fn table_to_points(table: &Table, target: &str, protected: &str) -> Result<(Vec<LabeledPoint>, Vec<String>)> {
    let t = table.column_index(target)?;
    let a = table.column_index(protected)?;
    if t == a {
        return Err(Error::InvalidDataset("target and protected columns must differ".into()));
    }
    let feature_cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != t && c != a).collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidDataset("no feature columns left".into()));
    }
    let points = table
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let group = Group::from_value(r[a])
                .map_err(|_| Error::InvalidDataset(format!("row {}: protected column '{protected}' must be 0 or 1, got {}", k + 2, r[a])))?;
            Ok(LabeledPoint {
                features: feature_cols.iter().map(|&c| r[c]).collect(),
                target: r[t],
                group,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let names = feature_cols.iter().map(|&c| table.header[c].clone()).collect();
    Ok((points, names))
}

/// Per-feature affine map fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Centers every feature; scales by the population std unless it is 0.
    pub fn fit(points: &[LabeledPoint]) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidDataset("cannot standardize an empty training set".into()));
        };
        let d = first.features.len();
        let n = points.len() as f64;
        let mut means = vec![0.0; d];
        for p in points {
            for (m, v) in means.iter_mut().zip(&p.features) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for p in points {
            for k in 0..d {
                vars[k] += (p.features[k] - means[k]).powi(2);
            }
        }
        let scales = vars.iter().map(|v| if *v > 0.0 { (v / n).sqrt() } else { 1.0 }).collect();
        Ok(Self { means, scales })
    }

    pub fn apply(&self, points: &mut [LabeledPoint]) {
        for p in points {
            for k in 0..p.features.len() {
                p.features[k] = (p.features[k] - self.means[k]) / self.scales[k];
            }
        }
    }
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub target: String,
    pub protected: String,
    pub standardize: bool,
    pub split: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
    pub feature_names: Vec<String>,
}

/// Shuffled train/test split of `round(split · n)` training rows.
pub fn split_points(points: Vec<LabeledPoint>, split: f64, seed: u64) -> Result<(Vec<LabeledPoint>, Vec<LabeledPoint>)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidConfig(format!("split must lie in (0, 1), got {split}")));
    }
    let n = points.len();
    let n_train = (split * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidDataset(format!("{n} rows are too few for a {split} split")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(derive_seed(seed, streams::SPLIT)));
    let mut slots: Vec<Option<LabeledPoint>> = points.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<LabeledPoint> { idx.iter().map(|&i| slots[i].take().expect("each index once")).collect() };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);
    Ok((train, test))
}

pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let table = read_table(path)?;
    let (points, feature_names) = table_to_points(&table, &opts.target, &opts.protected)?;
    let (mut train, mut test) = split_points(points, opts.split, opts.seed)?;
    if opts.standardize {
        let s = Standardizer::fit(&train)?;
        s.apply(&mut train);
        s.apply(&mut test);
    }
    Ok(Dataset {
        train,
        test,
        feature_names,
    })
}

/// Univariate samples for metric computations: either one column from each
/// of two files, or one column split by a 0/1 group column of a single file.
pub fn grouped_column(table: &Table, column: &str, group_column: &str) -> Result<[Vec<f64>; 2]> {
    let values = table.column(column)?;
    let groups = table.column(group_column)?;
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (k, (v, g)) in values.into_iter().zip(groups).enumerate() {
        let g = Group::from_value(g)
            .map_err(|_| Error::InvalidDataset(format!("row {}: group column '{group_column}' must be 0 or 1", k + 2)))?;
        out[g.index()].push(v);
    }
    Ok(out)
}
