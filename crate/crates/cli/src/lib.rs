//! Argument parsing and subcommand dispatch for the `trafficast` binary.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use trafficast::data::{load_csv, make_windows, prepare, save_csv, split_point, ColumnSpec, TimeSeries};
use trafficast::harness::{
    emit_report, read_source_csv, render_text, run_source_experiment, run_target_comparison,
    source_csv, threads_from_env, CompareConfig, SourceConfig, SourceReport, Timing,
};
use trafficast::metrics::{evaluate, ZeroPolicy};
use trafficast::models::{ArchKind, ModelSpec};
use trafficast::synth::{make_family, SynthConfig};
use trafficast::transfer::{
    load_checkpoint, save_checkpoint, transfer_fit_with, Checkpoint, CheckpointMeta,
    TransferOptions, TransferSchedule,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "trafficast",
    version,
    about = "Traffic forecasting with recurrent models and parameter transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic source series and related target series as CSV files
    Synth(SynthArgs),
    /// Train every requested architecture on a source series and save checkpoints
    Train(TrainArgs),
    /// Fine-tune a checkpoint on one target series with the freeze-then-unfreeze schedule
    Transfer(TransferArgs),
    /// Score a checkpoint on the test split of a series
    Evaluate(EvaluateArgs),
    /// Run the standard-vs-transfer grid over target series and write a report
    Compare(CompareArgs),
}

fn parse_arch(s: &str) -> Result<ArchKind, String> {
    s.parse().map_err(|e: trafficast::models::ModelError| e.to_string())
}

fn parse_timing(s: &str) -> Result<Timing, String> {
    s.parse().map_err(|e: trafficast::harness::HarnessError| e.to_string())
}

#[derive(Args, Debug, Clone)]
pub struct ConfigFile {
    /// File of `key = value` lines applied as flags; flags on the command line win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Scoring {
    /// Skip test points whose actual value is below this magnitude instead of failing on zeros
    #[arg(long, value_name = "EPS")]
    pub mape_epsilon: Option<f64>,
}

impl Scoring {
    fn policy(&self) -> ZeroPolicy {
        match self.mape_epsilon {
            Some(e) => ZeroPolicy::SkipBelow(e),
            None => ZeroPolicy::Reject,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory for the generated CSV files
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
    /// Seed for the source series and the target variations
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of target series
    #[arg(long, default_value_t = 4)]
    pub targets: usize,
    /// Length of the source series
    #[arg(long, default_value_t = 8563)]
    pub length: usize,
    /// Standard deviation of the source noise
    #[arg(long, default_value_t = 3.0)]
    pub noise_sd: f64,
    #[command(flatten)]
    pub config: ConfigFile,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Source series CSV with `timestamp,value` columns
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Architectures to train, comma separated
    #[arg(long, value_delimiter = ',', value_parser = parse_arch,
          default_value = "RNN,LSTM,GRU,LSTM_EN_DE,LSTM_EN_DE_ATN")]
    pub arch: Vec<ArchKind>,
    /// Training epochs per architecture
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Input window length
    #[arg(long, default_value_t = 12)]
    pub window: usize,
    /// Recurrent hidden size
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Fraction of windows used for training (chronological split)
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    /// Seed for weight initialization
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for checkpoints and the source report
    #[arg(long, default_value = "runs/source")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub scoring: Scoring,
    #[command(flatten)]
    pub config: ConfigFile,
}

#[derive(Args, Debug, Clone)]
pub struct Expect {
    /// Architecture the checkpoint must hold
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<ArchKind>,
    /// Window length the checkpoint must use
    #[arg(long)]
    pub window: Option<usize>,
    /// Hidden size the checkpoint must use
    #[arg(long)]
    pub hidden: Option<usize>,
}

impl Expect {
    fn check(&self, ckpt: &Checkpoint) -> Result<(), Failure> {
        let spec = ModelSpec::new(
            self.arch.unwrap_or(ckpt.spec.arch),
            self.window.unwrap_or(ckpt.spec.window),
            self.hidden.unwrap_or(ckpt.spec.hidden),
        )
        .map_err(stage("model spec"))?;
        ckpt.expect_spec(&spec).map_err(stage("checkpoint"))
    }
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Target series CSV
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Source checkpoint to transfer from
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Total epochs, including the frozen phase
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Epochs at the start during which reused parameters stay frozen
    #[arg(long, default_value_t = 10)]
    pub freeze_epochs: usize,
    /// Learning rate while reused parameters are frozen
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Learning rate once every parameter trains
    #[arg(long, default_value_t = 0.0001)]
    pub finetune_lr: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Fraction of windows used for training
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    /// Seed for the reinitialized parameters
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the fine-tuned checkpoint and loss log
    #[arg(long, default_value = "runs/transfer")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub expect: Expect,
    #[command(flatten)]
    pub scoring: Scoring,
    #[command(flatten)]
    pub config: ConfigFile,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint to score
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Series CSV whose test split is scored with the checkpoint's scaler
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Fraction of windows treated as training data and skipped
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[command(flatten)]
    pub expect: Expect,
    #[command(flatten)]
    pub scoring: Scoring,
    #[command(flatten)]
    pub config: ConfigFile,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "data"])))]
pub struct CompareArgs {
    /// Target series CSVs, comma separated
    #[arg(long, value_delimiter = ',', required = true, value_name = "CSV")]
    pub targets: Vec<PathBuf>,
    /// Source checkpoint to transfer from
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Source series CSV; runs the source bake-off first and transfers from `--arch`
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Source report CSV from `train`, shown at the top of the text report
    #[arg(long, value_name = "CSV")]
    pub source_report: Option<PathBuf>,
    /// Target architecture (default LSTM_EN_DE with `--data`, otherwise the checkpoint's)
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<ArchKind>,
    /// Epochs for the source bake-off with `--data`
    #[arg(long, default_value_t = 100)]
    pub source_epochs: usize,
    /// Epoch budgets, comma separated, in report order
    #[arg(long, value_delimiter = ',', default_value = "250,200,150,100,50")]
    pub epochs: Vec<usize>,
    /// Runs per dataset, budget and mode
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Learning rate for standard runs and for the frozen phase of transfer runs
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Learning rate once every parameter trains
    #[arg(long, default_value_t = 0.0001)]
    pub finetune_lr: f64,
    /// Epochs during which reused parameters stay frozen
    #[arg(long, default_value_t = 10)]
    pub freeze_epochs: usize,
    /// Input window length (default 12 with `--data`, otherwise the checkpoint's)
    #[arg(long)]
    pub window: Option<usize>,
    /// Hidden size (default 64 with `--data`, otherwise the checkpoint's)
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Fraction of windows used for training
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    /// Master seed from which every run seed is derived
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `strict` runs sequentially for clean timings; `off` uses TRAFFICAST_THREADS workers
    #[arg(long, default_value = "strict", value_parser = parse_timing)]
    pub timing: Timing,
    /// Report whatever finished instead of failing when some runs fail
    #[arg(long)]
    pub allow_partial: bool,
    /// Directory for the report files
    #[arg(long, default_value = "runs/compare")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub scoring: Scoring,
    #[command(flatten)]
    pub config: ConfigFile,
}

/// The clap command with repeated flags allowed, last one winning.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub message: String,
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

fn stage<E: Display>(stage: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure {
        stage,
        message: e.to_string(),
    }
}

fn usage(msg: impl Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn config_path(args: &[OsString]) -> Result<Option<PathBuf>, String> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it
                .next()
                .map(|p| Some(PathBuf::from(p)))
                .ok_or_else(|| "--config needs a file".to_string());
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(p)));
        }
    }
    Ok(None)
}

/// Turns `key = value` lines into flags for `subcommand`. Blank lines and
/// `#` comments are ignored; boolean flags take `true` or `false`.
pub fn config_flags(cmd: &clap::Command, subcommand: &str, text: &str) -> Result<Vec<OsString>, String> {
    let sub = cmd
        .find_subcommand(subcommand)
        .ok_or_else(|| format!("unknown subcommand `{subcommand}`"))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", n + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!("config line {}: nested config files are not supported", n + 1));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| format!("config line {}: unknown option `{key}` for `{subcommand}`", n + 1))?;
        if arg.get_action().takes_values() {
            out.push(OsString::from(format!("--{key}")));
            out.push(OsString::from(value));
        } else {
            match value {
                "true" => out.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => {
                    return Err(format!(
                        "config line {}: `{key}` takes true or false, got `{other}`",
                        n + 1
                    ))
                }
            }
        }
    }
    Ok(out)
}

/// Config file flags go right after the subcommand so later command-line
/// flags override them.
pub fn expand_args(cmd: &clap::Command, args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let Some(sub) = args.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("config file {}: {e}", path.display()))?;
    let flags = config_flags(cmd, &sub, &text)?;
    let mut out = args[..2].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

/// `key = value` for every resolved option of the chosen subcommand.
pub fn resolved_config(cmd: &clap::Command, matches: &clap::ArgMatches) -> Vec<(String, String)> {
    let Some((name, sub)) = matches.subcommand() else {
        return Vec::new();
    };
    let Some(sub_cmd) = cmd.find_subcommand(name) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for id in sub.ids() {
        if !sub_cmd.get_arguments().any(|a| a.get_id() == id) {
            continue;
        }
        let key = id.as_str().replace('_', "-");
        let value = match sub.get_raw(id.as_str()) {
            Some(vals) => vals
                .map(|v| v.to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join(","),
            _ => continue,
        };
        out.push((key, value));
    }
    out.sort();
    out
}

/// Parses `args` (including the program name), runs the subcommand, and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cmd = command();
    let args = match expand_args(&cmd, args) {
        Ok(a) => a,
        Err(e) => return usage(e),
    };
    let matches = match cmd.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    for (k, v) in resolved_config(&cmd, &matches) {
        println!("config {k} = {v}");
    }
    let outcome = match cli.command {
        Cmd::Synth(a) => synth(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Transfer(a) => transfer_cmd(a),
        Cmd::Evaluate(a) => evaluate_cmd(a),
        Cmd::Compare(a) => compare_cmd(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            EXIT_DOMAIN
        }
    }
}

fn load_series(path: &Path) -> Result<TimeSeries, Failure> {
    load_csv(path, &ColumnSpec::default()).map_err(|e| Failure {
        stage: "load data",
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        stage: "create output directory",
        message: format!("{}: {e}", dir.display()),
    })
}

fn write_text(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| Failure {
        stage: "write output",
        message: format!("{}: {e}", path.display()),
    })
}

fn now_epoch() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        seed: a.seed,
        length: a.length,
        noise_sd: a.noise_sd,
        ..SynthConfig::default()
    };
    let family = make_family(&cfg, a.targets, a.seed.wrapping_add(1)).map_err(stage("synth"))?;
    create_dir(&a.out_dir)?;
    for s in std::iter::once(&family.source).chain(&family.targets) {
        let path = a.out_dir.join(format!("{}.csv", s.name));
        save_csv(s, &path).map_err(stage("write data"))?;
        println!("wrote {} ({} rows)", path.display(), s.len());
    }
    Ok(())
}

fn source_config(
    window: usize,
    hidden: usize,
    train_frac: f64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    zero_policy: ZeroPolicy,
) -> SourceConfig {
    SourceConfig {
        window,
        hidden,
        train_frac,
        epochs,
        batch_size,
        lr,
        seed,
        zero_policy,
        ..SourceConfig::default()
    }
}

fn run_source(series: &TimeSeries, archs: &[ArchKind], cfg: &SourceConfig, out_dir: &Path) -> Result<SourceReport, Failure> {
    create_dir(out_dir)?;
    let report = run_source_experiment(series, archs, cfg, Some(&out_dir.join("checkpoints")))
        .map_err(stage("source training"))?;
    write_text(&out_dir.join("source_report.csv"), &source_csv(&report))?;
    for row in &report.rows {
        match (&row.score, &row.checkpoint_path) {
            (Ok(s), Some(p)) => println!(
                "{:<16} accuracy {:>7.2}%  mape {:>6.2}%  {}",
                row.arch.name(),
                s.accuracy,
                s.mape,
                p.display()
            ),
            (Ok(s), None) => println!("{:<16} accuracy {:>7.2}%", row.arch.name(), s.accuracy),
            (Err(e), _) => println!("{:<16} failed: {e}", row.arch.name()),
        }
    }
    Ok(report)
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let series = load_series(&a.data)?;
    let cfg = source_config(
        a.window,
        a.hidden,
        a.train_frac,
        a.epochs,
        a.batch,
        a.lr,
        a.seed,
        a.scoring.policy(),
    );
    let report = run_source(&series, &a.arch, &cfg, &a.out_dir)?;
    let failed: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.score.is_err())
        .map(|r| r.arch.name())
        .collect();
    if !failed.is_empty() {
        return Err(Failure {
            stage: "source training",
            message: format!("{} failed (see report)", failed.join(", ")),
        });
    }
    Ok(())
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(|e| Failure {
        stage: "load checkpoint",
        message: format!("{}: {e}", path.display()),
    })
}

fn transfer_cmd(a: TransferArgs) -> Result<(), Failure> {
    let ckpt = load_ckpt(&a.checkpoint)?;
    a.expect.check(&ckpt)?;
    let series = load_series(&a.data)?;
    let data = prepare(&series, ckpt.spec.window, a.train_frac).map_err(stage("prepare data"))?;
    let opts = TransferOptions {
        schedule: TransferSchedule {
            freeze_epochs: a.freeze_epochs,
            phase1_lr: a.lr,
            phase2_lr: a.finetune_lr,
        },
        batch_size: a.batch,
        ..TransferOptions::default()
    };
    let (model, hist) =
        transfer_fit_with(&data.train, &ckpt, a.epochs, a.seed, &opts).map_err(stage("transfer"))?;
    let eval = evaluate(&model, &data.test, &data.scaler, a.scoring.policy()).map_err(stage("evaluate"))?;
    create_dir(&a.out_dir)?;
    let ckpt_path = a.out_dir.join(format!("{}_{}.tltp", series.name, ckpt.spec.arch));
    save_checkpoint(
        &model,
        data.scaler,
        CheckpointMeta::new(series.name.clone(), a.epochs, now_epoch()),
        &ckpt_path,
    )
    .map_err(stage("save checkpoint"))?;
    let mut loss = Vec::new();
    hist.write_loss_csv(&mut loss).map_err(stage("write output"))?;
    write_text(&a.out_dir.join("loss.csv"), &String::from_utf8_lossy(&loss))?;
    println!(
        "{}: accuracy {:.2}%  mape {:.2}%  final loss {:.6}  train time {:.2}s  -> {}",
        series.name,
        eval.accuracy_percent,
        eval.mape_percent,
        hist.final_loss(),
        hist.wall_time_seconds,
        ckpt_path.display()
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Failure> {
    let ckpt = load_ckpt(&a.checkpoint)?;
    a.expect.check(&ckpt)?;
    let series = load_series(&a.data)?;
    let ds = make_windows(&series.values, ckpt.spec.window).map_err(stage("prepare data"))?;
    let n_train = split_point(ds.rows(), a.train_frac).map_err(stage("prepare data"))?;
    let scaler = ckpt.scaler;
    let test = ds.slice(n_train, ds.rows()).map_values(|v| scaler.apply(v));
    let eval = evaluate(&ckpt.model(), &test, &scaler, a.scoring.policy()).map_err(stage("evaluate"))?;
    println!(
        "{} on {}: accuracy {:.4}%  mape {:.4}%  n_test {}  skipped {}",
        ckpt.spec, series.name, eval.accuracy_percent, eval.mape_percent, eval.n_test, eval.skipped
    );
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<(), Failure> {
    let targets: Vec<TimeSeries> = a.targets.iter().map(|p| load_series(p)).collect::<Result<_, _>>()?;
    let zero_policy = a.scoring.policy();
    let (ckpt, source) = match (&a.checkpoint, &a.data) {
        (Some(path), _) => {
            let ckpt = load_ckpt(path)?;
            let source = match &a.source_report {
                Some(p) => Some(read_source_csv(p).map_err(stage("load source report"))?),
                None => None,
            };
            (ckpt, source)
        }
        (None, Some(data)) => {
            let series = load_series(data)?;
            let cfg = source_config(
                a.window.unwrap_or(12),
                a.hidden.unwrap_or(64),
                a.train_frac,
                a.source_epochs,
                a.batch,
                a.lr,
                a.seed,
                zero_policy,
            );
            let report = run_source(&series, &ArchKind::ALL, &cfg, &a.out_dir.join("source"))?;
            let arch = a.arch.unwrap_or(ArchKind::LstmEnDe);
            let row = report.row(arch).expect("every architecture was trained");
            let ckpt = match (&row.score, &row.checkpoint) {
                (Ok(_), Some(c)) => c.clone(),
                (Err(e), _) => {
                    return Err(Failure {
                        stage: "source training",
                        message: format!("{arch}: {e}"),
                    })
                }
                (Ok(_), None) => unreachable!("successful rows carry a checkpoint"),
            };
            (ckpt, Some(report))
        }
        (None, None) => unreachable!("clap requires --checkpoint or --data"),
    };
    let threads = match a.timing {
        Timing::Off => threads_from_env().map_err(stage("worker pool"))?,
        Timing::Strict => 1,
    };
    let cfg = CompareConfig {
        arch: a.arch,
        window: a.window.unwrap_or(ckpt.spec.window),
        hidden: a.hidden.unwrap_or(ckpt.spec.hidden),
        train_frac: a.train_frac,
        budgets: a.epochs.clone(),
        runs: a.runs,
        batch_size: a.batch,
        standard_lr: a.lr,
        transfer: TransferOptions {
            schedule: TransferSchedule {
                freeze_epochs: a.freeze_epochs,
                phase1_lr: a.lr,
                phase2_lr: a.finetune_lr,
            },
            batch_size: a.batch,
            ..TransferOptions::default()
        },
        master_seed: a.seed,
        timing: a.timing,
        threads,
        allow_partial: a.allow_partial,
        zero_policy,
    };
    let report = run_target_comparison(&targets, &ckpt, &cfg).map_err(stage("comparison"))?;
    let files = emit_report(&report, source.as_ref(), &a.out_dir).map_err(stage("write report"))?;
    print!("{}", render_text(&report, source.as_ref()));
    for p in files.paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}
