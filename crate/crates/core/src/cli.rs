//! Command-line front end.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::batching::LabeledPoint;
use crate::data::{self, LoadOptions, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluate::{self, auc_tradeoff, AucMethod, TradeoffPoint};
use crate::ipm::{EmpiricalSample, KernelSpec, Metric};
use crate::model::{Architecture, Checkpoint, ModelSpec, OutputActivation};
use crate::optimize::{train_offline, train_online, HistoryRecord, TrainConfig, TrainMode};
use crate::text::{fmt_f64, parse_f64, write_atomic};
use crate::verify::{self, CheckOptions, Scope};

/// Exit status for a failed verification.
pub const EXIT_VERIFICATION: u8 = 1;
/// Exit status for usage, configuration and data errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ipmfair", version, about = "Fairness-regularized learning with unbiased IPM penalties")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic regression stream with a regime shift.
    Synth(SynthArgs),
    /// Train one model from a run config.
    Train(TrainArgs),
    /// Train over a grid of penalty weights and report the trade-off area.
    Sweep(SweepArgs),
    /// Distances between two univariate samples.
    Ipm(IpmArgs),
    /// Run the verification suite.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthTask {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SynthTask::Regression)]
    pub task: SynthTask,
    /// JSON file overriding the regression generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample index of the slope redraw (regression).
    #[arg(long)]
    pub shift_at: Option<usize>,
    /// Disable the slope redraw (regression).
    #[arg(long, conflicts_with = "shift_at")]
    pub no_shift: bool,
    /// Slope log; defaults to `<out stem>.slopes.csv` (regression).
    #[arg(long)]
    pub slopes_out: Option<PathBuf>,
    /// Held-out sample from the final regime (regression).
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub test_count: usize,
    /// Latent score offset between groups (classification).
    #[arg(long, default_value_t = 2.0)]
    pub group_shift: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `log:LO:HI:COUNT` or a comma-separated list of values.
    #[arg(long, default_value = "log:1e-5:10:25")]
    pub lambda_grid: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IpmArgs {
    /// CSV with the first sample, or both samples when `--group-column` is set.
    pub first: PathBuf,
    /// CSV with the second sample.
    pub second: Option<PathBuf>,
    /// Value column; defaults to the first column.
    #[arg(long)]
    pub column: Option<String>,
    /// 0/1 column splitting a single file into two samples.
    #[arg(long)]
    pub group_column: Option<String>,
    /// Metric to print; repeatable. Defaults to all.
    #[arg(long = "metric")]
    pub metrics: Vec<String>,
    /// Anchor of the distance-induced MMD kernel.
    #[arg(long, default_value_t = 0.0)]
    pub anchor: f64,
    /// Use a Gaussian MMD kernel with this bandwidth instead.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt the loss correction to confirm the harness detects it.
    #[arg(long)]
    pub mutate_delta: bool,
}

/// Model section of a run config; the input dimension comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub output: OutputActivation,
}

fn default_split() -> f64 {
    0.75
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// JSON run configuration for `train` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training CSV; relative paths resolve against the config file.
    pub data: PathBuf,
    /// Optional held-out CSV. When set, `data` is used whole and in file
    /// order for training instead of being split.
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    pub target_column: String,
    pub protected_column: String,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub replications: Option<usize>,
    pub model: ModelConfig,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data = base.join(&cfg.data);
        cfg.test_data = cfg.test_data.map(|t| base.join(t));
        if !(cfg.split > 0.0 && cfg.split < 1.0) {
            return Err(Error::InvalidConfig(format!("split must lie in (0, 1), got {}", cfg.split)));
        }
        if cfg.replications == Some(0) {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn dataset(&self) -> Result<data::Dataset> {
        match &self.test_data {
            None => data::load_csv(
                &self.data,
                &LoadOptions {
                    target: self.target_column.clone(),
                    protected: self.protected_column.clone(),
                    standardize: self.standardize,
                    split: self.split,
                    seed: self.training.seed,
                },
            ),
            Some(test_path) => {
                let read = |p: &Path| -> Result<(Vec<LabeledPoint>, Vec<String>)> {
                    data::table_to_points(&data::read_table(p)?, &self.target_column, &self.protected_column)
                };
                let (mut train, feature_names) = read(&self.data)?;
                let (mut test, test_names) = read(test_path)?;
                if test_names != feature_names {
                    return Err(Error::InvalidDataset("train and test files have different feature columns".into()));
                }
                if self.standardize {
                    let s = data::Standardizer::fit(&train)?;
                    s.apply(&mut train);
                    s.apply(&mut test);
                }
                Ok(data::Dataset {
                    train,
                    test,
                    feature_names,
                })
            }
        }
    }

    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            architecture: self.model.architecture,
            output: self.model.output,
        }
    }
}

/// Parses `log:LO:HI:COUNT` or a comma-separated list.
pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let grid = if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(Error::invalid(format!("expected log:LO:HI:COUNT, got '{s}'")));
        };
        let n = n.trim().parse().map_err(|_| Error::invalid(format!("bad grid size '{n}'")))?;
        evaluate::log_grid(parse_f64(lo)?, parse_f64(hi)?, n)?
    } else {
        s.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid("λ grid values must be finite and non-negative"));
    }
    Ok(grid)
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|()| true),
        Command::Train(a) => cmd_train(&a).map(|()| true),
        Command::Sweep(a) => cmd_sweep(&a).map(|()| true),
        Command::Ipm(a) => cmd_ipm(&a).map(|()| true),
        Command::Check(a) => cmd_check(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFICATION),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    match a.task {
        SynthTask::Classification => {
            let pts = data::shifted_classification(a.count, a.group_shift, a.seed)?;
            write_atomic(&a.out, &data::points_to_csv(&pts, 5)?)?;
            println!("wrote {} rows to {}", a.count, a.out.display());
        }
        SynthTask::Regression => {
            let mut spec = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
                }
                None => SyntheticSpec::default(),
            };
            spec.seed = a.seed;
            if a.no_shift {
                spec.shift_at = None;
            } else if let Some(at) = a.shift_at {
                spec.shift_at = Some(at);
            }
            let stream = spec.stream()?;
            let regimes = stream.regimes().to_vec();
            let pts: Vec<LabeledPoint> = stream.take(a.count).collect();
            write_atomic(&a.out, &data::points_to_csv(&pts, spec.dimension)?)?;
            let slopes = a.slopes_out.clone().unwrap_or_else(|| sibling(&a.out, ".slopes.csv"));
            write_atomic(&slopes, &data::regimes_to_csv(&regimes, spec.dimension)?)?;
            println!("wrote {} rows to {}", a.count, a.out.display());
            println!("wrote slopes to {}", slopes.display());
            if let Some(test_out) = &a.test_out {
                let test = spec.test_set(regimes.len() - 1, a.test_count)?;
                write_atomic(test_out, &data::points_to_csv(&test, spec.dimension)?)?;
                println!("wrote {} test rows to {}", a.test_count, test_out.display());
            }
        }
    }
    Ok(())
}

pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut s = String::from("batch,samples,loss,penalty,objective\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            h.batch,
            h.samples,
            fmt_f64(h.value.loss),
            fmt_f64(h.value.penalty),
            fmt_f64(h.value.total)
        ));
    }
    s
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
    }
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let ds = cfg.dataset()?;
    let spec = cfg.model_spec(ds.feature_names.len());
    let outcome = match cfg.training.mode()? {
        TrainMode::Offline { .. } => train_offline(&cfg.training, &spec, &ds.train)?,
        TrainMode::Online { .. } => train_online(&cfg.training, &spec, ds.train.iter().cloned(), |_, _| {})?,
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let (performance, unfairness) = evaluate::evaluate_model(&spec, &outcome.params, cfg.training.loss, &ds.test)?;
    let metric = match cfg.training.loss {
        crate::model::LossKind::CrossEntropy => "accuracy",
        crate::model::LossKind::SquaredError => "r_squared",
    };
    let last = outcome.history.last().expect("training records at least one batch");
    let summary = format!(
        "lambda = {}\nseed = {}\nbatches = {}\nsamples = {}\nfinal_objective = {}\nperformance_metric = {metric}\ntest_performance = {}\ntest_sp_unfairness = {}\n",
        fmt_f64(cfg.training.lambda),
        cfg.training.seed,
        outcome.history.len(),
        last.samples,
        fmt_f64(last.value.total),
        fmt_f64(performance),
        fmt_f64(unfairness),
    );
    let ck = Checkpoint {
        spec,
        seed: cfg.training.seed,
        params: outcome.params,
    };
    write_atomic(&out.join("checkpoint.txt"), ck.to_text().as_bytes())?;
    write_atomic(&out.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
    write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

/// Sweep table: one row per replication and λ.
pub fn points_csv(rows: &[(usize, TradeoffPoint)]) -> String {
    let mut s = String::from("replication,lambda,unfairness,performance,performance_raw\n");
    for (r, p) in rows {
        s.push_str(&format!(
            "{r},{},{},{},{}\n",
            fmt_f64(p.lambda),
            fmt_f64(p.unfairness),
            fmt_f64(p.performance),
            fmt_f64(p.performance_raw)
        ));
    }
    s
}

/// Reads a table written by [`points_csv`].
pub fn read_points_csv(path: &Path) -> Result<Vec<(usize, TradeoffPoint)>> {
    let t = data::read_table(path)?;
    let col = |n: &str| t.column_index(n);
    let (r, l, u, p, raw) = (col("replication")?, col("lambda")?, col("unfairness")?, col("performance")?, col("performance_raw")?);
    Ok(t.rows
        .iter()
        .map(|row| {
            (
                row[r] as usize,
                TradeoffPoint {
                    lambda: row[l],
                    unfairness: row[u],
                    performance: row[p],
                    performance_raw: row[raw],
                },
            )
        })
        .collect())
}

/// Trapezoid and staircase AUC per replication.
pub fn replication_aucs(rows: &[(usize, TradeoffPoint)]) -> Result<Vec<(usize, Option<f64>, f64)>> {
    let mut reps: Vec<usize> = rows.iter().map(|(r, _)| *r).collect();
    reps.dedup();
    reps.iter()
        .map(|&r| {
            let pts: Vec<TradeoffPoint> = rows.iter().filter(|(q, _)| *q == r).map(|(_, p)| *p).collect();
            let trap = if pts.len() >= 2 { Some(auc_tradeoff(&pts, AucMethod::Trapezoid)?) } else { None };
            Ok((r, trap, auc_tradeoff(&pts, AucMethod::ParetoStaircase)?))
        })
        .collect()
}

pub fn auc_report(aucs: &[(usize, Option<f64>, f64)]) -> String {
    let mut s = String::new();
    for (r, trap, stair) in aucs {
        if let Some(t) = trap {
            s.push_str(&format!("auc_trapezoid[{r}] = {}\n", fmt_f64(*t)));
        }
        s.push_str(&format!("auc_staircase[{r}] = {}\n", fmt_f64(*stair)));
    }
    let n = aucs.len() as f64;
    if aucs.iter().all(|(_, t, _)| t.is_some()) {
        let mean = aucs.iter().filter_map(|(_, t, _)| *t).sum::<f64>() / n;
        s.push_str(&format!("auc_trapezoid_mean = {}\n", fmt_f64(mean)));
    }
    let mean = aucs.iter().map(|(_, _, st)| st).sum::<f64>() / n;
    s.push_str(&format!("auc_staircase_mean = {}\n", fmt_f64(mean)));
    s
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
    }
    let grid = parse_lambda_grid(&a.lambda_grid)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let mut rows = Vec::new();
    for rep in 0..cfg.replications.unwrap_or(1) {
        let mut rep_cfg = cfg.clone();
        rep_cfg.training.seed = cfg.training.seed.wrapping_add(rep as u64);
        let ds = rep_cfg.dataset()?;
        let spec = rep_cfg.model_spec(ds.feature_names.len());
        rep_cfg.training.validate(&spec)?;
        let points = pool.install(|| evaluate::lambda_sweep(&rep_cfg.training, &grid, &ds.train, &ds.test, &spec))?;
        rows.extend(points.into_iter().map(|p| (rep, p)));
    }
    let table = points_csv(&rows);
    let report = auc_report(&replication_aucs(&rows)?);
    write_atomic(&out.join("points.csv"), table.as_bytes())?;
    write_atomic(&out.join("auc.txt"), report.as_bytes())?;
    print!("{table}{report}");
    Ok(())
}

pub fn cmd_ipm(a: &IpmArgs) -> Result<()> {
    let first = data::read_table(&a.first)?;
    let column = |t: &data::Table| -> Result<String> {
        match &a.column {
            Some(c) => Ok(c.clone()),
            None => t
                .header
                .first()
                .cloned()
                .ok_or_else(|| Error::InvalidDataset("file has no columns".into())),
        }
    };
    let [s0, s1] = match (&a.second, &a.group_column) {
        (Some(second), None) => {
            let t2 = data::read_table(second)?;
            [first.column(&column(&first)?)?, t2.column(&column(&t2)?)?]
        }
        (None, Some(g)) => data::grouped_column(&first, &column(&first)?, g)?,
        _ => return Err(Error::invalid("give either two files or one file with --group-column")),
    };
    let kernel = match a.bandwidth {
        Some(b) => KernelSpec::gaussian(b)?,
        None => KernelSpec::distance_induced(a.anchor)?,
    };
    let metrics: Vec<Metric> = if a.metrics.is_empty() || a.metrics.iter().any(|m| m == "all") {
        Metric::all(kernel).to_vec()
    } else {
        a.metrics
            .iter()
            .map(|m| {
                m.parse::<Metric>().map(|metric| match metric {
                    Metric::Mmd(_) => Metric::Mmd(kernel),
                    other => other,
                })
            })
            .collect::<Result<_>>()?
    };
    let (e0, e1) = (EmpiricalSample::new(&s0)?, EmpiricalSample::new(&s1)?);
    let mut stdout = std::io::stdout().lock();
    for m in metrics {
        let _ = writeln!(stdout, "{} {}", m.name(), fmt_f64(m.distance(&e0, &e1)?));
    }
    Ok(())
}

pub fn cmd_check(a: &CheckArgs) -> Result<bool> {
    let scope: Scope = a.scope.parse()?;
    let opts = CheckOptions {
        seed: a.seed,
        mutate_delta: a.mutate_delta,
        ..CheckOptions::default()
    };
    let report = verify::run_checks(scope, &opts)?;
    for line in &report.lines {
        println!("{line}");
    }
    let failed = report.failures().count();
    println!("{} checks, {} failed", report.lines.len(), failed);
    Ok(report.passed())
}
