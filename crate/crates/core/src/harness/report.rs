use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{now_epoch, ComparisonReport, HarnessError, Mode, SourceReport, SourceRow, SourceScore};
use crate::data::format_timestamp;
use crate::metrics::RunRecord;
use crate::models::ArchKind;

const EPOCH_COL: usize = 7;
const NUM_COL: usize = 10;

fn cell_text(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:>w$.2}", w = NUM_COL),
        None => format!("{:>w$}", "n/a", w = NUM_COL),
    }
}

fn source_section(out: &mut String, source: &SourceReport) {
    let _ = writeln!(out, "Source domain: dataset {}", source.dataset);
    if let Some(c) = &source.config {
        let _ = writeln!(
            out,
            "window {}, hidden {}, {} epochs, batch {}, lr {}, train fraction {}",
            c.window, c.hidden, c.epochs, c.batch_size, c.lr, c.train_frac
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16}{:>14}{:>12}", "Model", "Accuracy (%)", "MAPE (%)");
    for row in &source.rows {
        match &row.score {
            Ok(s) => {
                let _ = writeln!(out, "{:<16}{:>14.2}{:>12.2}", row.arch.name(), s.accuracy, s.mape);
            }
            Err(e) => {
                let _ = writeln!(out, "{:<16}failed: {e}", row.arch.name());
            }
        }
    }
    let _ = writeln!(out);
}

/// Plain-text tables: the source bake-off (if given) and one column block per
/// target dataset with standard and transfer sub-blocks.
pub fn render_text(report: &ComparisonReport, source: Option<&SourceReport>) -> String {
    let mut out = String::new();
    if let Some(s) = source {
        source_section(&mut out, s);
    }
    let _ = writeln!(
        out,
        "Target domains: {} (window {}, hidden {}), mean of {} runs, timing {}",
        report.spec.arch, report.spec.window, report.spec.hidden, report.runs, report.timing
    );
    let _ = writeln!(out);

    let mode_w = 2 * NUM_COL + 1;
    let block_w = 2 * mode_w + 3;
    let mut l1 = format!("{:<EPOCH_COL$}", "");
    let mut l2 = format!("{:<EPOCH_COL$}", "");
    let mut l3 = format!("{:<EPOCH_COL$}", "Epoch");
    for d in &report.datasets {
        let _ = write!(l1, " | {:<block_w$}", format!("Dataset {d}"));
        for label in ["Standard", "Transfer"] {
            let _ = write!(l2, " | {label:<mode_w$}");
            let _ = write!(l3, " | {:>NUM_COL$} {:>NUM_COL$}", "Avg. Acc.", "Time (S)");
        }
    }
    for line in [l1, l2, l3] {
        let _ = writeln!(out, "{}", line.trim_end());
    }
    let _ = writeln!(out, "{}", "-".repeat(EPOCH_COL + report.datasets.len() * (block_w + 3)));

    let mut any_overlap = false;
    for &epochs in &report.budgets {
        let mut line = format!("{epochs:<EPOCH_COL$}");
        for d in &report.datasets {
            for mode in Mode::ALL {
                let cell = report.cell(d, epochs, mode);
                let acc = cell.and_then(|c| c.mean_accuracy());
                let time = cell.and_then(|c| c.mean_time());
                let flag = cell.map(|c| c.overlapped).unwrap_or(false);
                any_overlap |= flag;
                let mut t = cell_text(time);
                if flag {
                    t = format!("{}*", t.trim_start());
                    t = format!("{t:>NUM_COL$}");
                }
                let _ = write!(line, " | {} {}", cell_text(acc), t);
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    if any_overlap {
        let _ = writeln!(out);
        let _ = writeln!(out, "* runs in this cell overlapped other runs; its times are not comparable");
    }
    if !report.failures.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Failed runs ({}):", report.failures.len());
        for f in &report.failures {
            let _ = writeln!(out, "  {f}");
        }
    }
    out
}

/// `dataset,model,status,accuracy,mape,final_loss,error`
pub fn source_csv(source: &SourceReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["dataset", "model", "status", "accuracy", "mape", "final_loss", "error"];
    w.write_record(header).expect("in-memory write");
    for row in &source.rows {
        let fields = match &row.score {
            Ok(s) => [
                source.dataset.clone(),
                row.arch.name().to_string(),
                "ok".to_string(),
                s.accuracy.to_string(),
                s.mape.to_string(),
                s.final_loss.to_string(),
                String::new(),
            ],
            Err(e) => [
                source.dataset.clone(),
                row.arch.name().to_string(),
                "failed".to_string(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ],
        };
        w.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

pub fn read_source_csv(path: &Path) -> Result<SourceReport, HarnessError> {
    let bad = |m: String| HarnessError::SourceReport(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut dataset = None;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(format!("bad number `{}`", field(i))));
        dataset.get_or_insert_with(|| field(0).to_string());
        let arch: ArchKind = field(1).parse().map_err(|e: crate::models::ModelError| bad(e.to_string()))?;
        let score = match field(2) {
            "ok" => Ok(SourceScore {
                accuracy: num(3)?,
                mape: num(4)?,
                final_loss: num(5)?,
                wall_time_s: None,
            }),
            "failed" => Err(field(6).to_string()),
            other => return Err(bad(format!("status `{other}`"))),
        };
        rows.push(SourceRow {
            arch,
            score,
            checkpoint: None,
            checkpoint_path: None,
        });
    }
    rows.sort_by_key(|r| r.arch.order());
    Ok(SourceReport {
        dataset: dataset.ok_or_else(|| bad("no rows".into()))?,
        config: None,
        rows,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EmittedFiles {
    pub paths: Vec<PathBuf>,
}

fn write_file(dir: &Path, name: &str, body: &str, emitted: &mut EmittedFiles) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    emitted.paths.push(path);
    Ok(())
}

fn plot_csv(report: &ComparisonReport, dataset: &str, header: &str, value: impl Fn(&super::Cell) -> Option<f64>) -> String {
    let mut budgets = report.budgets.clone();
    budgets.sort_unstable();
    let mut out = format!("{header}\n");
    for epochs in budgets {
        let v = |mode| {
            report
                .cell(dataset, epochs, mode)
                .and_then(&value)
                .map(|x| x.to_string())
                .unwrap_or_default()
        };
        let _ = writeln!(out, "{epochs},{},{}", v(Mode::Standard), v(Mode::Transfer));
    }
    out
}

/// Writes `report.txt`, `raw_runs.csv`, `run_times.csv`,
/// `plot_acc_<d>.csv`, `plot_time_<d>.csv`, `meta.txt`, and with a source
/// report also `source_report.csv`. Every CSV except `run_times.csv` and the
/// time plots depends only on the seeds.
pub fn emit_report(
    report: &ComparisonReport,
    source: Option<&SourceReport>,
    out_dir: &Path,
) -> Result<EmittedFiles, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut emitted = EmittedFiles::default();
    write_file(out_dir, "report.txt", &render_text(report, source), &mut emitted)?;

    let mut raw = format!("{}\n", RunRecord::HEADER);
    for rec in report.records() {
        let _ = writeln!(raw, "{}", rec.csv_row());
    }
    write_file(out_dir, "raw_runs.csv", &raw, &mut emitted)?;

    let mut times = String::from("dataset,model,mode,epochs,run,wall_time_s,started_s,finished_s,overlapped\n");
    for c in &report.cells {
        for r in &c.runs {
            let _ = writeln!(
                times,
                "{},{},{},{},{},{},{},{},{}",
                r.dataset,
                report.spec.arch,
                r.mode,
                r.epochs,
                r.run,
                r.wall_time_s,
                r.started_s,
                r.finished_s,
                c.overlapped
            );
        }
    }
    write_file(out_dir, "run_times.csv", &times, &mut emitted)?;

    for d in &report.datasets {
        let acc = plot_csv(report, d, "epochs,standard_acc,transfer_acc", |c| c.mean_accuracy());
        write_file(out_dir, &format!("plot_acc_{d}.csv"), &acc, &mut emitted)?;
        let time = plot_csv(report, d, "epochs,standard_time,transfer_time", |c| c.mean_time());
        write_file(out_dir, &format!("plot_time_{d}.csv"), &time, &mut emitted)?;
    }
    if let Some(s) = source {
        write_file(out_dir, "source_report.csv", &source_csv(s), &mut emitted)?;
    }

    let total: f64 = report.all_runs().map(|r| r.wall_time_s).sum();
    let budgets: Vec<String> = report.budgets.iter().map(usize::to_string).collect();
    let meta = format!(
        "version={}\nplatform={}-{}\ncreated={}\nmodel={}\nmaster_seed={}\nruns={}\nbudgets={}\ntiming={}\nthreads={}\ntotal_train_time_s={}\n",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH,
        format_timestamp(now_epoch()),
        report.spec,
        report.master_seed,
        report.runs,
        budgets.join(";"),
        report.timing,
        report.threads,
        total
    );
    write_file(out_dir, "meta.txt", &meta, &mut emitted)?;
    Ok(emitted)
}
