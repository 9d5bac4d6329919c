//! CSV ingestion, sliding windows, min-max scaling and chronological splits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat};

use crate::tensor::NumArray;

pub const DEFAULT_INTERVAL_SECS: i64 = 300;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },
    #[error("row {row}: cannot parse value `{value}`")]
    BadValue { row: usize, value: String },
    #[error("row {row}: negative traffic volume {value}")]
    NegativeValue { row: usize, value: f64 },
    #[error("timestamps not increasing at {timestamp}")]
    NonMonotonic { timestamp: String },
    #[error("gap after {timestamp}: next sample {next} is {delta}s later, interval is {interval}s")]
    Gap {
        timestamp: String,
        next: String,
        delta: i64,
        interval: i64,
    },
    #[error("irregular spacing at {timestamp}: {delta}s step, interval is {interval}s")]
    Irregular {
        timestamp: String,
        delta: i64,
        interval: i64,
    },
    #[error("series is empty")]
    Empty,
    #[error("series of length {len} is too short for window {window}")]
    TooShort { len: usize, window: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("split of {rows} rows at {frac} leaves an empty {side} part")]
    EmptySplit {
        rows: usize,
        frac: f64,
        side: &'static str,
    },
    #[error("degenerate scale: all training values equal {0}")]
    DegenerateScale(f64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Uniformly sampled traffic volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    /// Epoch seconds of the first sample.
    pub start: i64,
    pub interval: i64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, start: i64, interval: i64, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            start,
            interval,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.start + self.interval * i as i64
    }
}

pub fn format_timestamp(epoch: i64) -> String {
    DateTime::from_timestamp(epoch, 0)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| epoch.to_string())
}

/// Accepts integer epoch seconds, RFC 3339, or naive `YYYY-MM-DD[ T]HH:MM:SS` (UTC).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp())
}

/// Which CSV columns to read and the expected sampling interval.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub timestamp: String,
    pub value: String,
    pub interval: i64,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            value: "value".into(),
            interval: DEFAULT_INTERVAL_SECS,
        }
    }
}

pub fn load_csv(path: &Path, columns: &ColumnSpec) -> Result<TimeSeries, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, columns)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    name: &str,
    columns: &ColumnSpec,
) -> Result<TimeSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |col: &str| {
        headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| DataError::MissingColumn(col.to_string()))
    };
    let ts_idx = find(&columns.timestamp)?;
    let val_idx = find(&columns.value)?;

    let mut start = None;
    let mut prev: Option<i64> = None;
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| DataError::BadTimestamp {
            row,
            value: raw_ts.to_string(),
        })?;
        let raw_v = record.get(val_idx).unwrap_or("");
        let v: f64 = raw_v
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| DataError::BadValue {
                row,
                value: raw_v.to_string(),
            })?;
        if v < 0.0 {
            return Err(DataError::NegativeValue { row, value: v });
        }
        if let Some(p) = prev {
            let delta = ts - p;
            if delta <= 0 {
                return Err(DataError::NonMonotonic {
                    timestamp: format_timestamp(ts),
                });
            }
            if delta > columns.interval {
                return Err(DataError::Gap {
                    timestamp: format_timestamp(p),
                    next: format_timestamp(ts),
                    delta,
                    interval: columns.interval,
                });
            }
            if delta != columns.interval {
                return Err(DataError::Irregular {
                    timestamp: format_timestamp(ts),
                    delta,
                    interval: columns.interval,
                });
            }
        }
        start.get_or_insert(ts);
        prev = Some(ts);
        values.push(v);
    }
    let start = start.ok_or(DataError::Empty)?;
    Ok(TimeSeries::new(name, start, columns.interval, values))
}

/// Writes `timestamp,value` with RFC 3339 timestamps and shortest
/// round-trip float formatting.
pub fn save_csv(series: &TimeSeries, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_series(series, &mut out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn write_series<W: Write>(series: &TimeSeries, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "timestamp,value")?;
    for (i, v) in series.values.iter().enumerate() {
        writeln!(out, "{},{}", format_timestamp(series.timestamp(i)), v)?;
    }
    Ok(())
}

/// Supervised pairs: row `i` of `x` is `values[i..i+w)`, `y[i] = values[i+w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub x: NumArray,
    pub y: NumArray,
    pub window: usize,
}

impl WindowedDataset {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn targets(&self) -> &[f64] {
        self.y.data()
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> WindowedDataset {
        WindowedDataset {
            x: self.x.slice_rows(start, end),
            y: self.y.slice_rows(start, end),
            window: self.window,
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> WindowedDataset {
        WindowedDataset {
            x: self.x.map(&f),
            y: self.y.map(&f),
            window: self.window,
        }
    }

    /// `x0,…,x{w-1},target` per row.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.window)
            .map(|i| format!("x{i}"))
            .chain(std::iter::once("target".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.rows() {
            let fields: Vec<String> = self
                .x
                .row(r)
                .iter()
                .chain(std::iter::once(&self.y.data()[r]))
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        self.write_csv(&mut out).map_err(io_err(path))?;
        out.flush().map_err(io_err(path))
    }
}

pub fn make_windows(values: &[f64], window: usize) -> Result<WindowedDataset, DataError> {
    if window == 0 {
        return Err(DataError::ZeroWindow);
    }
    if values.len() <= window {
        return Err(DataError::TooShort {
            len: values.len(),
            window,
        });
    }
    let rows = values.len() - window;
    let mut x = Vec::with_capacity(rows * window);
    for w in values.windows(window).take(rows) {
        x.extend_from_slice(w);
    }
    let y = values[window..].to_vec();
    Ok(WindowedDataset {
        x: NumArray::matrix(rows, window, x).expect("rows × window values"),
        y: NumArray::vector(y),
        window,
    })
}

/// Number of training rows for a chronological split.
pub fn split_point(rows: usize, train_frac: f64) -> Result<usize, DataError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::BadFraction(train_frac));
    }
    let n_train = (train_frac * rows as f64).floor() as usize;
    if n_train == 0 {
        return Err(DataError::EmptySplit {
            rows,
            frac: train_frac,
            side: "train",
        });
    }
    if n_train >= rows {
        return Err(DataError::EmptySplit {
            rows,
            frac: train_frac,
            side: "test",
        });
    }
    Ok(n_train)
}

/// First `floor(train_frac · rows)` rows train, the rest test; no shuffling.
pub fn chronological_split(
    ds: &WindowedDataset,
    train_frac: f64,
) -> Result<(WindowedDataset, WindowedDataset), DataError> {
    let n_train = split_point(ds.rows(), train_frac)?;
    Ok((ds.slice(0, n_train), ds.slice(n_train, ds.rows())))
}

/// Affine map sending `lo → 0` and `hi → 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxScaler {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::Empty);
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::from_bounds(lo, hi)
    }

    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self, DataError> {
        if !(hi > lo) {
            return Err(DataError::DegenerateScale(lo));
        }
        Ok(Self { lo, hi })
    }

    /// Maps nothing; both spaces coincide.
    pub fn identity() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    pub fn invert(&self, s: f64) -> f64 {
        s * (self.hi - self.lo) + self.lo
    }
}

/// Raw values covered by the first `n_train` windows (features and targets).
pub fn train_span(values: &[f64], window: usize, n_train: usize) -> &[f64] {
    &values[..n_train + window]
}

/// A series prepared for training: scaler fit on the train span only, then
/// both splits expressed in scaled space.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub scaler: MinMaxScaler,
}

pub fn prepare(series: &TimeSeries, window: usize, train_frac: f64) -> Result<Prepared, DataError> {
    let ds = make_windows(&series.values, window)?;
    let n_train = split_point(ds.rows(), train_frac)?;
    let scaler = MinMaxScaler::fit(train_span(&series.values, window, n_train))?;
    prepare_with_scaler(&ds, n_train, scaler)
}

/// Splits raw windows and scales them with an existing scaler.
pub fn prepare_with_scaler(
    ds: &WindowedDataset,
    n_train: usize,
    scaler: MinMaxScaler,
) -> Result<Prepared, DataError> {
    let scaled = ds.map_values(|v| scaler.apply(v));
    Ok(Prepared {
        train: scaled.slice(0, n_train),
        test: scaled.slice(n_train, ds.rows()),
        scaler,
    })
}
