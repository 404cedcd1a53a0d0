//! Session files, resampling and report serialization.
//!
//! A session is stored as two files sharing a base path:
//!
//! * `<base>.csv`: header `t,i,e,c,m`, one row per sample, values written
//!   with 17 significant digits; absent signals are empty columns.
//! * `<base>.json`: metadata with `step`, `plant {gain, tau}` (or `null`),
//!   `subject_id`, `source`, `units`, `created_at` (RFC 3339), plus any
//!   extra keys, which are preserved.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identification::{FitResult, ScanGrid};
use crate::models::PlantModel;
use crate::session::{Session, SessionMeta, Source, Violation, DEFAULT_LOOP_TOLERANCE};
use crate::signal::{SampledSignal, SignalError};

pub const SESSION_HEADER: [&str; 5] = ["t", "i", "e", "c", "m"];

/// Largest relative deviation of a time delta from the median delta.
pub const MAX_JITTER: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected header `t,i,e,c,m`, found `{found}`")]
    Header { found: String },
    #[error("line {line}: malformed row: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: non-finite value in column `{column}`")]
    NonFinite { line: u64, column: &'static str },
    #[error("line {line}: time step {delta} deviates from the median step {expected} by more than 0.1%")]
    NonUniform { line: u64, delta: f64, expected: f64 },
    #[error("line {line}: time stamps are not increasing")]
    NonMonotonic { line: u64 },
    #[error("metadata step {metadata} disagrees with the measured step {measured}")]
    StepMismatch { metadata: f64, measured: f64 },
    #[error("no samples")]
    Empty,
    #[error("column `{0}` is required")]
    MissingColumn(&'static str),
    #[error("step must be positive, got {0}")]
    BadStep(f64),
    #[error("{0}")]
    Invalid(Violation),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// `(<base>.csv, <base>.json)`. A trailing `.csv` or `.json` on `path` is
/// treated as part of the base path and replaced.
pub fn session_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("csv"), with("json"))
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    step: f64,
    #[serde(default)]
    plant: Option<PlantModel>,
    #[serde(default)]
    subject_id: String,
    #[serde(default = "default_source")]
    source: Source,
    #[serde(default)]
    units: String,
    #[serde(default = "epoch")]
    created_at: DateTime<Utc>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn default_source() -> Source {
    Source::External
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

fn fmt_value(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

/// Session CSV text.
pub fn session_csv(session: &Session) -> String {
    let signals = session.signals();
    let mut out = String::with_capacity(session.len() * 5 * 24);
    out.push_str(&SESSION_HEADER.join(","));
    out.push('\n');
    for k in 0..session.len() {
        fmt_value(&mut out, session.i.time(k));
        for (_, sig) in &signals {
            out.push(',');
            if let Some(s) = sig {
                fmt_value(&mut out, s.values()[k]);
            }
        }
        out.push('\n');
    }
    out
}

/// Session metadata JSON text.
pub fn session_json(session: &Session) -> Result<String, DataError> {
    let meta = &session.meta;
    let file = MetaFile {
        step: session.step(),
        plant: meta.plant,
        subject_id: meta.subject_id.clone(),
        source: meta.source,
        units: meta.units.clone(),
        created_at: meta.created_at,
        extra: meta.extra.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

/// Writes `<path>.csv` and `<path>.json`.
pub fn write_session(session: &Session, path: impl AsRef<Path>) -> Result<(), DataError> {
    let (csv_path, json_path) = session_paths(path);
    let json = session_json(session)?;
    fs::write(&csv_path, session_csv(session)).map_err(io_err(&csv_path))?;
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadOptions {
    /// Tolerance on `|e - (i - m)|`.
    pub loop_tolerance: f64,
    /// Interpolate onto a uniform grid of this step instead of rejecting
    /// jittered time stamps.
    pub resample_to: Option<f64>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            loop_tolerance: DEFAULT_LOOP_TOLERANCE,
            resample_to: None,
        }
    }
}

/// Parsed CSV columns before grid checks.
struct Columns {
    lines: Vec<u64>,
    t: Vec<f64>,
    cols: [Vec<Option<f64>>; 4],
}

fn parse_csv(text: &str, problems: &mut Vec<DataError>) -> Option<Columns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            problems.push(DataError::Malformed { line: 1, message: e.to_string() });
            return None;
        }
    };
    if header.iter().collect::<Vec<_>>() != SESSION_HEADER {
        problems.push(DataError::Header { found: header.iter().collect::<Vec<_>>().join(",") });
        return None;
    }
    let mut out = Columns {
        lines: Vec::new(),
        t: Vec::new(),
        cols: Default::default(),
    };
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                problems.push(DataError::Malformed { line, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != SESSION_HEADER.len() {
            problems.push(DataError::Malformed {
                line,
                message: format!("expected 5 fields, found {}", record.len()),
            });
            continue;
        }
        let mut row = [None; 5];
        let mut ok = true;
        for (c, field) in record.iter().enumerate() {
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row[c] = Some(v),
                Ok(_) => {
                    problems.push(DataError::NonFinite { line, column: SESSION_HEADER[c] });
                    ok = false;
                }
                Err(_) => {
                    problems.push(DataError::Malformed {
                        line,
                        message: format!("column `{}`: cannot parse `{field}`", SESSION_HEADER[c]),
                    });
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let Some(t) = row[0] else {
            problems.push(DataError::Malformed { line, message: "empty time stamp".into() });
            continue;
        };
        out.lines.push(line);
        out.t.push(t);
        for c in 0..4 {
            out.cols[c].push(row[c + 1]);
        }
    }
    Some(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Step of time stamps already known to be uniform: the mean delta, snapped
/// to the shortest decimal within 1e-9 of it so that `0.01` written as text
/// reads back as exactly `0.01`.
fn refine_step(t: &[f64]) -> f64 {
    let mean = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    (0..17)
        .filter_map(|digits| format!("{mean:.digits$e}").parse::<f64>().ok())
        .find(|v| (v - mean).abs() <= 1e-9 * mean)
        .unwrap_or(mean)
}

/// Loads a session, collecting every problem found instead of stopping at
/// the first. Returns the session only when there were no problems.
pub fn inspect_session(path: impl AsRef<Path>, options: &ReadOptions) -> (Option<Session>, Vec<DataError>) {
    let mut problems = Vec::new();
    let session = load(path.as_ref(), options, &mut problems);
    if problems.is_empty() {
        (session, problems)
    } else {
        (None, problems)
    }
}

/// Reads and validates a session written by [`write_session`] (or any CSV in
/// the same format, with or without the JSON sidecar).
pub fn read_session(path: impl AsRef<Path>, options: &ReadOptions) -> Result<Session, DataError> {
    let (session, mut problems) = inspect_session(path, options);
    match session {
        Some(s) if problems.is_empty() => Ok(s),
        _ => Err(if problems.is_empty() { DataError::Empty } else { problems.swap_remove(0) }),
    }
}

fn load(path: &Path, options: &ReadOptions, problems: &mut Vec<DataError>) -> Option<Session> {
    let (csv_path, json_path) = session_paths(path);
    let text = match fs::read_to_string(&csv_path) {
        Ok(t) => t,
        Err(e) => {
            problems.push(io_err(&csv_path)(e));
            return None;
        }
    };
    let meta_file: Option<MetaFile> = match fs::read_to_string(&json_path) {
        Ok(j) => match serde_json::from_str(&j) {
            Ok(m) => Some(m),
            Err(e) => {
                problems.push(e.into());
                return None;
            }
        },
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => {
            problems.push(io_err(&json_path)(e));
            return None;
        }
    };

    let cols = parse_csv(&text, problems)?;
    if !problems.is_empty() {
        return None;
    }
    if cols.t.is_empty() {
        problems.push(DataError::Empty);
        return None;
    }

    let deltas: Vec<f64> = cols.t.windows(2).map(|w| w[1] - w[0]).collect();
    for (k, &d) in deltas.iter().enumerate() {
        if !(d > 0.0) {
            problems.push(DataError::NonMonotonic { line: cols.lines[k + 1] });
        }
    }
    if !problems.is_empty() {
        return None;
    }
    let measured = if deltas.is_empty() { None } else { Some(median(deltas.clone())) };

    // which columns are present: all-or-nothing per column
    let mut present = [false; 4];
    for c in 0..4 {
        let filled = cols.cols[c].iter().filter(|v| v.is_some()).count();
        present[c] = filled > 0;
        if filled > 0 && filled < cols.t.len() {
            let k = cols.cols[c].iter().position(|v| v.is_none()).unwrap_or(0);
            problems.push(DataError::Malformed {
                line: cols.lines[k],
                message: format!("column `{}` is partially empty", SESSION_HEADER[c + 1]),
            });
        }
    }
    for (c, name) in [(0, "i"), (3, "m")] {
        if !present[c] {
            problems.push(DataError::MissingColumn(name));
        }
    }
    if !problems.is_empty() {
        return None;
    }
    let column = |c: usize| -> Vec<f64> { cols.cols[c].iter().map(|v| v.unwrap_or(0.0)).collect() };

    let t0 = cols.t[0];
    let signals: Vec<Option<SampledSignal>> = match options.resample_to {
        Some(new_step) => {
            if !(new_step > 0.0 && new_step.is_finite()) {
                problems.push(DataError::BadStep(new_step));
                return None;
            }
            let n = grid_len(t0, *cols.t.last().unwrap(), new_step);
            let sigs = (0..4)
                .map(|c| {
                    present[c].then(|| {
                        let v = interpolate(&cols.t, &column(c), t0, new_step, n);
                        SampledSignal::with_start(new_step, t0, v)
                    })
                })
                .map(|s| s.transpose())
                .collect::<Result<Vec<_>, _>>();
            match sigs {
                Ok(s) => s,
                Err(e) => {
                    problems.push(e.into());
                    return None;
                }
            }
        }
        None => {
            let step = match (&meta_file, measured) {
                (Some(m), Some(measured)) => {
                    if (m.step - measured).abs() > MAX_JITTER * measured {
                        problems.push(DataError::StepMismatch { metadata: m.step, measured });
                        return None;
                    }
                    m.step
                }
                (Some(m), None) => m.step,
                (None, Some(measured)) => measured,
                (None, None) => {
                    problems.push(DataError::MissingColumn("step (single-sample file needs metadata)"));
                    return None;
                }
            };
            if !(step > 0.0 && step.is_finite()) {
                problems.push(DataError::BadStep(step));
                return None;
            }
            for (k, &d) in deltas.iter().enumerate() {
                if (d - step).abs() > MAX_JITTER * step {
                    problems.push(DataError::NonUniform { line: cols.lines[k + 1], delta: d, expected: step });
                }
            }
            if !problems.is_empty() {
                return None;
            }
            let step = if meta_file.is_none() { refine_step(&cols.t) } else { step };
            let sigs = (0..4)
                .map(|c| present[c].then(|| SampledSignal::with_start(step, t0, column(c))).transpose())
                .collect::<Result<Vec<_>, _>>();
            match sigs {
                Ok(s) => s,
                Err(e) => {
                    problems.push(e.into());
                    return None;
                }
            }
        }
    };
    let meta = match meta_file {
        Some(m) => SessionMeta {
            plant: m.plant,
            subject_id: m.subject_id,
            source: m.source,
            units: m.units,
            created_at: m.created_at,
            extra: m.extra,
        },
        None => SessionMeta::external(),
    };
    let mut it = signals.into_iter();
    let (i, e, c, m) = (it.next()?, it.next()?, it.next()?, it.next()?);
    let session = Session { i: i?, e, c, m: m?, meta };
    for v in session.violations(options.loop_tolerance) {
        problems.push(DataError::Invalid(v));
    }
    Some(session)
}

/// Number of points of a grid starting at `t0` with `step` that stay within `t_end`.
fn grid_len(t0: f64, t_end: f64, step: f64) -> usize {
    ((t_end - t0) / step + 1e-9).floor() as usize + 1
}

/// Linear interpolation of `(times, values)` at `t0 + k * step`, `k < n`.
/// `times` must be strictly increasing; points past the end clamp to the last sample.
fn interpolate(times: &[f64], values: &[f64], t0: f64, step: f64, n: usize) -> Vec<f64> {
    let mut j = 0;
    (0..n)
        .map(|k| {
            let t = t0 + k as f64 * step;
            while j + 2 < times.len() && times[j + 1] <= t {
                j += 1;
            }
            if times.len() == 1 {
                return values[0];
            }
            let (ta, tb) = (times[j], times[j + 1]);
            let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            values[j] + frac * (values[j + 1] - values[j])
        })
        .collect()
}

/// Linearly interpolates a uniform signal onto a new uniform grid covering
/// the same interval `[t0, t_last]`.
pub fn resample(signal: &SampledSignal, new_step: f64) -> Result<SampledSignal, DataError> {
    if !(new_step > 0.0 && new_step.is_finite()) {
        return Err(DataError::BadStep(new_step));
    }
    if new_step == signal.step() {
        return Ok(signal.clone());
    }
    let v = signal.values();
    let last = v.len() - 1;
    let n = ((last as f64 * signal.step()) / new_step + 1e-9).floor() as usize + 1;
    let ratio = new_step / signal.step();
    let out = (0..n)
        .map(|k| {
            let pos = k as f64 * ratio;
            let j = (pos.floor() as usize).min(last.saturating_sub(1));
            if last == 0 {
                return v[0];
            }
            let frac = (pos - j as f64).clamp(0.0, 1.0);
            v[j] + frac * (v[j + 1] - v[j])
        })
        .collect();
    Ok(SampledSignal::with_start(new_step, signal.t0(), out)?)
}

/// Writes a bare input signal as CSV with header `t,i`.
pub fn write_input_csv(signal: &SampledSignal, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::from("t,i\n");
    for (k, &v) in signal.values().iter().enumerate() {
        fmt_value(&mut out, signal.time(k));
        out.push(',');
        fmt_value(&mut out, v);
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads the `t` and `i` columns of either a session CSV or a bare input CSV.
///
/// Time stamps must be uniform within 0.1% of the median delta.
pub fn read_input_csv(path: impl AsRef<Path>) -> Result<SampledSignal, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Malformed { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || header[0] != "t" || header[1] != "i" {
        return Err(DataError::Header { found: header.join(",") });
    }
    let mut t = Vec::new();
    let mut values = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = |c: usize, name: &'static str| -> Result<f64, DataError> {
            let field = record.get(c).unwrap_or("");
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(DataError::NonFinite { line, column: name }),
                Err(_) => Err(DataError::Malformed { line, message: format!("column `{name}`: cannot parse `{field}`") }),
            }
        };
        t.push(parse(0, "t")?);
        values.push(parse(1, "i")?);
        lines.push(line);
    }
    if t.is_empty() {
        return Err(DataError::Empty);
    }
    if t.len() == 1 {
        return Err(DataError::MissingColumn("step (single-sample input)"));
    }
    let deltas: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let step = median(deltas.clone());
    for (k, &d) in deltas.iter().enumerate() {
        if (d - step).abs() > MAX_JITTER * step {
            return Err(DataError::NonUniform { line: lines[k + 1], delta: d, expected: step });
        }
    }
    Ok(SampledSignal::with_start(refine_step(&t), t[0], values)?)
}

/// Fit report JSON text.
pub fn fit_report_json(result: &FitResult) -> Result<String, DataError> {
    let mut s = serde_json::to_string_pretty(result)?;
    s.push('\n');
    Ok(s)
}

pub fn write_fit_report(result: &FitResult, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, fit_report_json(result)?).map_err(io_err(path))
}

pub fn read_fit_report(path: impl AsRef<Path>) -> Result<FitResult, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Scan grid CSV: one row per cell, axis columns then `rmse`.
pub fn scan_grid_csv(grid: &ScanGrid) -> String {
    let mut out = grid.axes.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(",");
    out.push_str(",rmse\n");
    for flat in 0..grid.rmse.len() {
        for (_, v) in grid.point(flat) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", grid.rmse[flat]);
    }
    out
}

pub fn write_scan_grid(grid: &ScanGrid, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, scan_grid_csv(grid)).map_err(io_err(path))
}

/// Delay sweep CSV: `L`, the other parameters, `rmse`, `converged`, `evaluations`.
pub fn sweep_csv(results: &[FitResult]) -> String {
    let Some(first) = results.first() else {
        return "L,rmse,converged,evaluations\n".to_string();
    };
    let names: Vec<&str> = first
        .model_kind
        .all_params()
        .iter()
        .copied()
        .filter(|n| *n != "L")
        .collect();
    let mut out = String::from("L");
    for n in &names {
        let _ = write!(out, ",{n}");
    }
    out.push_str(",rmse,converged,evaluations\n");
    for r in results {
        let _ = write!(out, "{}", r.params.get("L").copied().unwrap_or(f64::NAN));
        for n in &names {
            let _ = write!(out, ",{}", r.params.get(*n).copied().unwrap_or(f64::NAN));
        }
        let _ = writeln!(out, ",{},{},{}", r.rmse, r.converged, r.evaluations);
    }
    out
}

pub fn write_sweep(results: &[FitResult], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, sweep_csv(results)).map_err(io_err(path))
}
