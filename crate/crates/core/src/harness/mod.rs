//! Source-model bake-off and the standard-vs-transfer comparison grid.

mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

pub use report::{emit_report, read_source_csv, render_text, source_csv, EmittedFiles};

use crate::data::{prepare, DataError, Prepared, TimeSeries};
use crate::metrics::{evaluate, EvalResult, MetricsError, RunRecord, ZeroPolicy};
use crate::models::{init_model, ArchKind, ModelError, ModelSpec};
use crate::train::{train, TrainConfig, TrainError, TrainHistory, DEFAULT_BATCH, DEFAULT_CLIP_NORM};
use crate::transfer::{
    save_checkpoint, transfer_fit_with, Checkpoint, CheckpointMeta, TransferError, TransferOptions,
};

pub const EPOCH_GRID: [usize; 5] = [250, 200, 150, 100, 50];
pub const DEFAULT_RUNS: usize = 5;
pub const THREADS_ENV: &str = "TRAFFICAST_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("data preparation for `{dataset}`: {source}")]
    Data { dataset: String, source: DataError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("report i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{failed} of {total} runs failed (first: {first}); pass --allow-partial to keep the rest")]
    Partial {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("malformed source report: {0}")]
    SourceReport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Standard,
    Transfer,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Standard, Mode::Transfer];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Transfer => "transfer",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `Strict` runs everything sequentially so wall times do not contend;
/// `Off` allows a worker pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Strict,
    Off,
}

impl FromStr for Timing {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(Timing::Strict),
            "off" => Ok(Timing::Off),
            other => Err(HarnessError::Config(format!(
                "timing must be `strict` or `off`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timing::Strict => "strict",
            Timing::Off => "off",
        })
    }
}

/// Worker count from `TRAFFICAST_THREADS`, defaulting to 1.
pub fn threads_from_env() -> Result<usize, HarnessError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(HarnessError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `master` one at a time.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Seed for run `run` of `dataset` at `epochs`. Both modes share it, so the
/// standard and transfer runs with the same index form a pair.
pub fn run_seed(master: u64, dataset: &str, epochs: usize, run: usize) -> u64 {
    derive_seed(
        master,
        &[crc32fast::hash(dataset.as_bytes()) as u64, epochs as u64, run as u64],
    )
}

fn now_epoch() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub window: usize,
    pub hidden: usize,
    pub train_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub zero_policy: ZeroPolicy,
    pub clip_norm: Option<f64>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            window: 12,
            hidden: 64,
            train_frac: 0.7,
            epochs: 100,
            batch_size: DEFAULT_BATCH,
            lr: 1e-3,
            seed: 0,
            zero_policy: ZeroPolicy::Reject,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceScore {
    pub accuracy: f64,
    pub mape: f64,
    pub final_loss: f64,
    /// Not persisted in the source CSV.
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SourceRow {
    pub arch: ArchKind,
    pub score: Result<SourceScore, String>,
    pub checkpoint: Option<Checkpoint>,
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SourceReport {
    pub dataset: String,
    /// Absent when the report was read back from CSV.
    pub config: Option<SourceConfig>,
    /// One row per requested architecture in table order.
    pub rows: Vec<SourceRow>,
}

impl SourceReport {
    pub fn row(&self, arch: ArchKind) -> Option<&SourceRow> {
        self.rows.iter().find(|r| r.arch == arch)
    }

    /// Highest-accuracy successful row; ties go to the earlier row.
    pub fn best(&self) -> Option<&SourceRow> {
        self.rows
            .iter()
            .filter(|r| r.score.is_ok())
            .fold(None, |best: Option<&SourceRow>, r| match best {
                Some(b) if b.score.as_ref().unwrap().accuracy >= r.score.as_ref().unwrap().accuracy => {
                    Some(b)
                }
                _ => Some(r),
            })
    }
}

fn prepare_named(series: &TimeSeries, window: usize, frac: f64) -> Result<Prepared, HarnessError> {
    prepare(series, window, frac).map_err(|source| HarnessError::Data {
        dataset: series.name.clone(),
        source,
    })
}

/// Checkpoint file name for an architecture.
pub fn checkpoint_file_name(arch: ArchKind) -> String {
    format!("{}.tltp", arch.name())
}

/// Trains and scores each architecture on `series`. Failures are recorded on
/// their row. With `ckpt_dir`, each trained model is saved there.
pub fn run_source_experiment(
    series: &TimeSeries,
    archs: &[ArchKind],
    cfg: &SourceConfig,
    ckpt_dir: Option<&Path>,
) -> Result<SourceReport, HarnessError> {
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut ordered: Vec<ArchKind> = archs.to_vec();
    ordered.sort_by_key(|a| a.order());
    ordered.dedup();
    let prepared = prepare_named(series, cfg.window, cfg.train_frac);
    let rows = ordered
        .into_iter()
        .map(|arch| {
            let outcome = prepared
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|p| train_source(series, p, arch, cfg, ckpt_dir).map_err(|e| e.to_string()));
            match outcome {
                Ok((score, ckpt, path)) => SourceRow {
                    arch,
                    score: Ok(score),
                    checkpoint: Some(ckpt),
                    checkpoint_path: path,
                },
                Err(e) => SourceRow {
                    arch,
                    score: Err(e),
                    checkpoint: None,
                    checkpoint_path: None,
                },
            }
        })
        .collect();
    Ok(SourceReport {
        dataset: series.name.clone(),
        config: Some(cfg.clone()),
        rows,
    })
}

#[derive(Debug, thiserror::Error)]
enum StageError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("transfer: {0}")]
    Transfer(#[from] TransferError),
    #[error("evaluation: {0}")]
    Metrics(#[from] MetricsError),
}

fn train_source(
    series: &TimeSeries,
    data: &Prepared,
    arch: ArchKind,
    cfg: &SourceConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(SourceScore, Checkpoint, Option<PathBuf>), StageError> {
    let spec = ModelSpec::new(arch, cfg.window, cfg.hidden)?;
    let seed = derive_seed(cfg.seed, &[arch.order() as u64]);
    let mut model = init_model(spec, seed)?;
    let mut tc = TrainConfig::constant_lr(cfg.epochs, cfg.batch_size, cfg.lr, seed);
    tc.clip_norm = cfg.clip_norm;
    let hist = train(&mut model, &data.train, &tc)?;
    let eval = evaluate(&model, &data.test, &data.scaler, cfg.zero_policy)?;
    let meta = CheckpointMeta::new(series.name.clone(), cfg.epochs, now_epoch());
    let (ckpt, path) = match ckpt_dir {
        Some(dir) => {
            let path = dir.join(checkpoint_file_name(arch));
            (save_checkpoint(&model, data.scaler, meta, &path)?, Some(path))
        }
        None => (Checkpoint::from_model(&model, data.scaler, meta)?, None),
    };
    Ok((
        SourceScore {
            accuracy: eval.accuracy_percent,
            mape: eval.mape_percent,
            final_loss: hist.final_loss(),
            wall_time_s: Some(hist.wall_time_seconds),
        },
        ckpt,
        path,
    ))
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    /// Expected checkpoint architecture; `None` accepts whatever it holds.
    pub arch: Option<ArchKind>,
    pub window: usize,
    pub hidden: usize,
    pub train_frac: f64,
    /// Iterated in the given order.
    pub budgets: Vec<usize>,
    pub runs: usize,
    pub batch_size: usize,
    pub standard_lr: f64,
    pub transfer: TransferOptions,
    pub master_seed: u64,
    pub timing: Timing,
    /// Worker pool size when timing is off.
    pub threads: usize,
    pub allow_partial: bool,
    pub zero_policy: ZeroPolicy,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            arch: None,
            window: 12,
            hidden: 64,
            train_frac: 0.7,
            budgets: EPOCH_GRID.to_vec(),
            runs: DEFAULT_RUNS,
            batch_size: DEFAULT_BATCH,
            standard_lr: 1e-3,
            transfer: TransferOptions::default(),
            master_seed: 0,
            timing: Timing::Strict,
            threads: 1,
            allow_partial: false,
            zero_policy: ZeroPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dataset: String,
    pub mode: Mode,
    pub epochs: usize,
    pub run: usize,
    pub seed: u64,
    pub eval: EvalResult,
    pub loss_curve: Vec<f64>,
    pub wall_time_s: f64,
    /// Seconds since the comparison started.
    pub started_s: f64,
    pub finished_s: f64,
}

impl RunResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("at least one epoch")
    }

    pub fn record(&self, model: &str) -> RunRecord {
        RunRecord {
            dataset: self.dataset.clone(),
            model: model.to_string(),
            mode: self.mode.name().to_string(),
            epochs: self.epochs,
            run: self.run,
            seed: self.seed,
            accuracy: self.eval.accuracy_percent,
            mape: self.eval.mape_percent,
            final_loss: self.final_loss(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub dataset: String,
    pub mode: Mode,
    pub epochs: usize,
    pub run: usize,
    pub error: String,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} epochs run {}: {}",
            self.dataset, self.mode, self.epochs, self.run, self.error
        )
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub dataset: String,
    pub epochs: usize,
    pub mode: Mode,
    /// In run-index order.
    pub runs: Vec<RunResult>,
    /// Some run in this cell overlapped another run in time.
    pub overlapped: bool,
}

impl Cell {
    fn mean(&self, f: impl Fn(&RunResult) -> f64) -> Option<f64> {
        if self.runs.is_empty() {
            return None;
        }
        Some(self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64)
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        self.mean(|r| r.eval.accuracy_percent)
    }

    pub fn mean_time(&self) -> Option<f64> {
        self.mean(|r| r.wall_time_s)
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub spec: ModelSpec,
    pub datasets: Vec<String>,
    pub budgets: Vec<usize>,
    pub runs: usize,
    pub master_seed: u64,
    pub timing: Timing,
    pub threads: usize,
    /// Dataset-major, then budget, then mode.
    pub cells: Vec<Cell>,
    pub failures: Vec<RunFailure>,
}

impl ComparisonReport {
    pub fn cell(&self, dataset: &str, epochs: usize, mode: Mode) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.epochs == epochs && c.mode == mode)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.cells.iter().all(|c| c.runs.len() == self.runs)
    }

    pub fn all_runs(&self) -> impl Iterator<Item = &RunResult> {
        self.cells.iter().flat_map(|c| c.runs.iter())
    }

    pub fn records(&self) -> Vec<RunRecord> {
        let model = self.spec.arch.name();
        self.all_runs().map(|r| r.record(model)).collect()
    }
}

struct Job {
    dataset: usize,
    epochs: usize,
    mode: Mode,
    run: usize,
}

fn run_job(
    job: &Job,
    target: &TimeSeries,
    data: &Prepared,
    ckpt: &Checkpoint,
    cfg: &CompareConfig,
    clock: Instant,
) -> Result<RunResult, StageError> {
    let seed = run_seed(cfg.master_seed, &target.name, job.epochs, job.run);
    let started_s = clock.elapsed().as_secs_f64();
    let (model, hist): (_, TrainHistory) = match job.mode {
        Mode::Standard => {
            let mut model = init_model(ckpt.spec, seed)?;
            let mut tc = TrainConfig::constant_lr(job.epochs, cfg.batch_size, cfg.standard_lr, seed);
            tc.clip_norm = cfg.transfer.clip_norm;
            let hist = train(&mut model, &data.train, &tc)?;
            (model, hist)
        }
        Mode::Transfer => transfer_fit_with(&data.train, ckpt, job.epochs, seed, &cfg.transfer)?,
    };
    let finished_s = clock.elapsed().as_secs_f64();
    let eval = evaluate(&model, &data.test, &data.scaler, cfg.zero_policy)?;
    Ok(RunResult {
        dataset: target.name.clone(),
        mode: job.mode,
        epochs: job.epochs,
        run: job.run,
        seed,
        eval,
        loss_curve: hist.per_epoch_loss,
        wall_time_s: hist.wall_time_seconds,
        started_s,
        finished_s,
    })
}

/// Runs `runs` standard and `runs` transfer fits per dataset and budget.
/// Each target is scaled with its own train split.
pub fn run_target_comparison(
    targets: &[TimeSeries],
    ckpt: &Checkpoint,
    cfg: &CompareConfig,
) -> Result<ComparisonReport, HarnessError> {
    if targets.is_empty() {
        return Err(HarnessError::Config("no target datasets".into()));
    }
    if cfg.budgets.is_empty() || cfg.runs == 0 {
        return Err(HarnessError::Config("need at least one budget and one run".into()));
    }
    let mut budgets = cfg.budgets.clone();
    budgets.sort_unstable();
    if budgets.windows(2).any(|w| w[0] == w[1]) || budgets.contains(&0) {
        return Err(HarnessError::Config("budgets must be distinct and positive".into()));
    }
    if cfg.threads == 0 {
        return Err(HarnessError::Config("threads must be at least 1".into()));
    }
    let mut names: Vec<&str> = targets.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::Config("target dataset names must be unique".into()));
    }
    let expected = ModelSpec::new(cfg.arch.unwrap_or(ckpt.spec.arch), cfg.window, cfg.hidden)?;
    ckpt.expect_spec(&expected)?;
    let prepared: Vec<Prepared> = targets
        .iter()
        .map(|t| prepare_named(t, cfg.window, cfg.train_frac))
        .collect::<Result<_, _>>()?;

    let mut jobs = Vec::new();
    for dataset in 0..targets.len() {
        for &epochs in &cfg.budgets {
            for mode in Mode::ALL {
                for run in 0..cfg.runs {
                    jobs.push(Job {
                        dataset,
                        epochs,
                        mode,
                        run,
                    });
                }
            }
        }
    }

    let clock = Instant::now();
    let exec = |job: &Job| {
        run_job(job, &targets[job.dataset], &prepared[job.dataset], ckpt, cfg, clock)
            .map_err(|e| e.to_string())
    };
    let outcomes: Vec<Result<RunResult, String>> = if cfg.timing == Timing::Off && cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(exec).collect())
    } else {
        jobs.iter().map(exec).collect()
    };

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(error) => failures.push(RunFailure {
                dataset: targets[job.dataset].name.clone(),
                mode: job.mode,
                epochs: job.epochs,
                run: job.run,
                error,
            }),
        }
    }
    if !failures.is_empty() && !cfg.allow_partial {
        return Err(HarnessError::Partial {
            failed: failures.len(),
            total: jobs.len(),
            first: failures[0].to_string(),
        });
    }

    let overlaps: Vec<bool> = results
        .iter()
        .enumerate()
        .map(|(i, a)| {
            results.iter().enumerate().any(|(j, b)| {
                i != j && a.started_s < b.finished_s && b.started_s < a.finished_s
            })
        })
        .collect();
    let mut cells: Vec<Cell> = Vec::new();
    for t in targets {
        for &epochs in &cfg.budgets {
            for mode in Mode::ALL {
                cells.push(Cell {
                    dataset: t.name.clone(),
                    epochs,
                    mode,
                    runs: Vec::new(),
                    overlapped: false,
                });
            }
        }
    }
    for (r, overlapped) in results.into_iter().zip(overlaps) {
        let cell = cells
            .iter_mut()
            .find(|c| c.dataset == r.dataset && c.epochs == r.epochs && c.mode == r.mode)
            .expect("every job maps to a cell");
        cell.overlapped |= overlapped;
        cell.runs.push(r);
    }

    Ok(ComparisonReport {
        spec: ckpt.spec,
        datasets: targets.iter().map(|t| t.name.clone()).collect(),
        budgets: cfg.budgets.clone(),
        runs: cfg.runs,
        master_seed: cfg.master_seed,
        timing: cfg.timing,
        threads: cfg.threads,
        cells,
        failures,
    })
}
