//! File formats: sweep CSVs, batch CSVs and the TOML run configuration.
//!
//! Sweep files carry one of two headers, `frequency_hz,gain` or
//! `frequency_hz,u_in_v,u_out_v`. Batch files carry `sample_id,f0_hz`.
//! Lines starting with `#` are comments; comments of the form
//! `# key = value` are read as metadata. Numbers are written with Rust's
//! shortest round-trip formatting, so a file read back and written again
//! is byte-identical.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::dist::BatchSample;
use crate::extract::{RecordMeta, SweepPoint, SweepRecord};
use crate::model::{DeviceParams, Divider, Topology};
use crate::sim::{NoiseModel, SimConfig, Spacing, SweepPlan};

pub const GAIN_HEADER: &str = "frequency_hz,gain";
pub const AMPLITUDE_HEADER: &str = "frequency_hz,u_in_v,u_out_v";
pub const BATCH_HEADER: &str = "sample_id,f0_hz";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        msg: msg.into(),
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> IoError {
    IoError::Config {
        field: field.into(),
        msg: msg.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_number(field: &str, line: usize, name: &str) -> Result<f64, IoError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{name}: `{}` is not a number", field.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(
            line,
            format!("{name}: `{}` is not finite", field.trim()),
        ));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepColumns {
    Gain,
    Amplitudes,
}

impl SweepColumns {
    fn header(self) -> &'static str {
        match self {
            SweepColumns::Gain => GAIN_HEADER,
            SweepColumns::Amplitudes => AMPLITUDE_HEADER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepRow {
    Gain {
        frequency_hz: f64,
        gain: f64,
    },
    Amplitudes {
        frequency_hz: f64,
        u_in_v: f64,
        u_out_v: f64,
    },
}

impl SweepRow {
    pub fn frequency_hz(&self) -> f64 {
        match *self {
            SweepRow::Gain { frequency_hz, .. } | SweepRow::Amplitudes { frequency_hz, .. } => {
                frequency_hz
            }
        }
    }

    pub fn gain(&self) -> f64 {
        match *self {
            SweepRow::Gain { gain, .. } => gain,
            SweepRow::Amplitudes {
                u_in_v, u_out_v, ..
            } => u_out_v / u_in_v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Line<T> {
    Comment(String),
    Data(T),
}

/// Contents of a sweep CSV, comments kept in place.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFile {
    columns: SweepColumns,
    header_comments: Vec<String>,
    body: Vec<Line<SweepRow>>,
}

impl SweepFile {
    pub fn new(columns: SweepColumns) -> Self {
        Self {
            columns,
            header_comments: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn columns(&self) -> SweepColumns {
        self.columns
    }

    /// Adds a `# key = value` line ahead of the CSV header.
    pub fn push_metadata(&mut self, key: &str, value: impl std::fmt::Display) {
        self.header_comments.push(format!(" {key} = {value}"));
    }

    pub fn push_row(&mut self, row: SweepRow) {
        self.body.push(Line::Data(row));
    }

    pub fn rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.body.iter().filter_map(|l| match l {
            Line::Data(r) => Some(r),
            Line::Comment(_) => None,
        })
    }

    /// `key = value` comment lines, anywhere in the file.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let body_comments = self.body.iter().filter_map(|l| match l {
            Line::Comment(c) => Some(c),
            Line::Data(_) => None,
        });
        self.header_comments
            .iter()
            .chain(body_comments)
            .filter_map(|c| {
                let (k, v) = c.split_once('=')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut header_comments = Vec::new();
        let mut columns = None;
        let mut body = Vec::new();
        let mut last_f: Option<f64> = None;
        let mut n_rows = 0;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(c) = raw.strip_prefix('#') {
                match columns {
                    None => header_comments.push(c.to_string()),
                    Some(_) => body.push(Line::Comment(c.to_string())),
                }
                continue;
            }
            let Some(cols) = columns else {
                columns = Some(match trimmed {
                    GAIN_HEADER => SweepColumns::Gain,
                    AMPLITUDE_HEADER => SweepColumns::Amplitudes,
                    other => {
                        return Err(parse_err(
                            line,
                            format!("expected header `{GAIN_HEADER}` or `{AMPLITUDE_HEADER}`, found `{other}`"),
                        ))
                    }
                });
                continue;
            };
            let fields: Vec<&str> = trimmed.split(',').collect();
            let row = match (cols, fields.as_slice()) {
                (SweepColumns::Gain, [f, g]) => {
                    let gain = parse_number(g, line, "gain")?;
                    if gain <= 0.0 {
                        return Err(parse_err(line, format!("gain must be > 0, got {gain}")));
                    }
                    SweepRow::Gain {
                        frequency_hz: parse_number(f, line, "frequency_hz")?,
                        gain,
                    }
                }
                (SweepColumns::Amplitudes, [f, a, b]) => {
                    let u_in_v = parse_number(a, line, "u_in_v")?;
                    let u_out_v = parse_number(b, line, "u_out_v")?;
                    if u_in_v <= 0.0 || u_out_v <= 0.0 {
                        return Err(parse_err(line, "amplitudes must be > 0"));
                    }
                    SweepRow::Amplitudes {
                        frequency_hz: parse_number(f, line, "frequency_hz")?,
                        u_in_v,
                        u_out_v,
                    }
                }
                _ => {
                    return Err(parse_err(
                        line,
                        format!(
                            "expected {} fields, found {}",
                            cols.header().split(',').count(),
                            fields.len()
                        ),
                    ))
                }
            };
            let f = row.frequency_hz();
            if f <= 0.0 {
                return Err(parse_err(line, format!("frequency must be > 0, got {f}")));
            }
            if let Some(prev) = last_f {
                if f <= prev {
                    return Err(parse_err(
                        line,
                        format!("frequency {f} Hz is not greater than previous row's {prev} Hz"),
                    ));
                }
            }
            last_f = Some(f);
            n_rows += 1;
            body.push(Line::Data(row));
        }

        let columns =
            columns.ok_or_else(|| parse_err(text.lines().count().max(1), "missing CSV header"))?;
        if n_rows < 3 {
            return Err(parse_err(
                text.lines().count().max(1),
                format!("need at least 3 data rows, found {n_rows}"),
            ));
        }
        Ok(Self {
            columns,
            header_comments,
            body,
        })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.header_comments {
            let _ = writeln!(out, "#{c}");
        }
        let _ = writeln!(out, "{}", self.columns.header());
        for line in &self.body {
            match line {
                Line::Comment(c) => {
                    let _ = writeln!(out, "#{c}");
                }
                Line::Data(SweepRow::Gain { frequency_hz, gain }) => {
                    let _ = writeln!(out, "{frequency_hz},{gain}");
                }
                Line::Data(SweepRow::Amplitudes {
                    frequency_hz,
                    u_in_v,
                    u_out_v,
                }) => {
                    let _ = writeln!(out, "{frequency_hz},{u_in_v},{u_out_v}");
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.render())
    }

    pub fn from_record(record: &SweepRecord) -> Self {
        let mut file = Self::new(SweepColumns::Gain);
        for p in record.points() {
            file.push_row(SweepRow::Gain {
                frequency_hz: p.f,
                gain: p.y,
            });
        }
        file
    }

    pub fn to_record(
        &self,
        topology: Option<Topology>,
    ) -> Result<SweepRecord, crate::extract::FitError> {
        let points = self
            .rows()
            .map(|r| SweepPoint {
                f: r.frequency_hz(),
                y: r.gain(),
            })
            .collect();
        SweepRecord::new(
            points,
            RecordMeta {
                topology,
                label: self.metadata().get("source").cloned(),
            },
        )
    }

    /// Topology recorded in `feedback_r`/`gain_r` (and optional
    /// `divider_r1`/`divider_r2`) metadata, if present.
    pub fn metadata_topology(&self) -> Result<Option<Topology>, IoError> {
        let meta = self.metadata();
        let num = |key: &str| -> Result<Option<f64>, IoError> {
            meta.get(key)
                .map(|v| parse_metadata_number(key, v))
                .transpose()
        };
        let (Some(big_r), Some(small_r)) = (num("feedback_r")?, num("gain_r")?) else {
            return Ok(None);
        };
        let mut topo =
            Topology::new(big_r, small_r).map_err(|e| config_err("feedback_r/gain_r", e))?;
        if let (Some(r1), Some(r2)) = (num("divider_r1")?, num("divider_r2")?) {
            topo = topo.with_divider(Divider::new(r1, r2).map_err(|e| config_err("divider", e))?);
        }
        Ok(Some(topo))
    }
}

fn parse_metadata_number(key: &str, v: &str) -> Result<f64, IoError> {
    match v {
        "inf" | "open" => Ok(f64::INFINITY),
        _ => v
            .parse()
            .map_err(|_| config_err(key, format!("`{v}` is not a number"))),
    }
}

/// Contents of a batch CSV: one fitted crossover frequency per device.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchFile {
    header_comments: Vec<String>,
    body: Vec<Line<BatchSample>>,
}

impl BatchFile {
    pub fn from_samples(samples: impl IntoIterator<Item = BatchSample>) -> Self {
        Self {
            header_comments: Vec::new(),
            body: samples.into_iter().map(Line::Data).collect(),
        }
    }

    pub fn push_metadata(&mut self, key: &str, value: impl std::fmt::Display) {
        self.header_comments.push(format!(" {key} = {value}"));
    }

    pub fn samples(&self) -> Vec<BatchSample> {
        self.body
            .iter()
            .filter_map(|l| match l {
                Line::Data(s) => Some(s.clone()),
                Line::Comment(_) => None,
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut header_comments = Vec::new();
        let mut body = Vec::new();
        let mut seen_header = false;
        let mut ids = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(c) = raw.strip_prefix('#') {
                if seen_header {
                    body.push(Line::Comment(c.to_string()));
                } else {
                    header_comments.push(c.to_string());
                }
                continue;
            }
            if !seen_header {
                if trimmed != BATCH_HEADER {
                    return Err(parse_err(
                        line,
                        format!("expected header `{BATCH_HEADER}`, found `{trimmed}`"),
                    ));
                }
                seen_header = true;
                continue;
            }
            let Some((id, f0)) = trimmed.split_once(',') else {
                return Err(parse_err(line, "expected 2 fields"));
            };
            let id = id.trim();
            if id.is_empty() || id.contains(',') {
                return Err(parse_err(line, "sample_id must be non-empty"));
            }
            let f0 = parse_number(f0, line, "f0_hz")?;
            if f0 <= 0.0 {
                return Err(parse_err(line, format!("f0_hz must be > 0, got {f0}")));
            }
            if !ids.insert(id.to_string()) {
                return Err(parse_err(line, format!("duplicate sample_id `{id}`")));
            }
            body.push(Line::Data(BatchSample {
                id: id.to_string(),
                f0,
            }));
        }
        if !seen_header {
            return Err(parse_err(text.lines().count().max(1), "missing CSV header"));
        }
        Ok(Self {
            header_comments,
            body,
        })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.header_comments {
            let _ = writeln!(out, "#{c}");
        }
        let _ = writeln!(out, "{BATCH_HEADER}");
        for line in &self.body {
            match line {
                Line::Comment(c) => {
                    let _ = writeln!(out, "#{c}");
                }
                Line::Data(s) => {
                    let _ = writeln!(out, "{},{}", s.id, s.f0);
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.render())
    }
}

/// Renders `(x, y)` pairs as a two-column CSV.
pub fn render_xy(header: &str, points: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Flat run configuration, usually loaded from TOML.
///
/// An absent `g0` means `G₀ → ∞`; an absent `gain_r` means an open gain
/// resistor (repeater).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub f0_hz: f64,
    pub g0: Option<f64>,
    pub feedback_r: f64,
    pub gain_r: Option<f64>,
    pub divider_r1: Option<f64>,
    pub divider_r2: Option<f64>,
    /// Crossover frequency of a non-ideal repeater stage ahead of the divider.
    pub buffer_f0_hz: Option<f64>,
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    pub spacing: String,
    pub sigma_rel: f64,
    pub steps_per_period: usize,
    pub settle_periods: usize,
    pub measure_periods: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = SweepPlan::default();
        let sim = SimConfig::default();
        Self {
            f0_hz: 97.73e6,
            g0: None,
            feedback_r: 1000.0,
            gain_r: Some(10.0),
            divider_r1: None,
            divider_r2: None,
            buffer_f0_hz: None,
            f_min: plan.f_min,
            f_max: plan.f_max,
            n_points: plan.n_points,
            spacing: "linear".into(),
            sigma_rel: 0.0,
            steps_per_period: sim.steps_per_period,
            settle_periods: sim.settle_periods,
            measure_periods: sim.measure_periods,
            seed: 0,
        }
    }
}

pub fn parse_spacing(s: &str) -> Option<Spacing> {
    match s {
        "linear" => Some(Spacing::Linear),
        "log" => Some(Spacing::Log),
        _ => None,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| config_err("<file>", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.device()?;
        self.topology()?;
        self.plan()?;
        self.noise()?;
        self.sim()?;
        Ok(())
    }

    pub fn device(&self) -> Result<DeviceParams, IoError> {
        if !(self.f0_hz.is_finite() && self.f0_hz > 0.0) {
            return Err(config_err(
                "f0_hz",
                format!("must be finite and > 0, got {}", self.f0_hz),
            ));
        }
        DeviceParams::new(self.f0_hz, self.g0.unwrap_or(f64::INFINITY))
            .map_err(|e| config_err("g0", e))
    }

    pub fn topology(&self) -> Result<Topology, IoError> {
        let topo =
            Topology::new(self.feedback_r, self.gain_r.unwrap_or(f64::INFINITY)).map_err(|e| {
                config_err(
                    if self.feedback_r < 0.0 {
                        "feedback_r"
                    } else {
                        "gain_r"
                    },
                    e,
                )
            })?;
        match (self.divider_r1, self.divider_r2) {
            (None, None) => Ok(topo),
            (Some(r1), Some(r2)) => {
                Ok(topo
                    .with_divider(Divider::new(r1, r2).map_err(|e| config_err("divider_r1", e))?))
            }
            _ => Err(config_err(
                "divider_r1",
                "divider_r1 and divider_r2 must be given together",
            )),
        }
    }

    pub fn plan(&self) -> Result<SweepPlan, IoError> {
        let spacing = parse_spacing(&self.spacing).ok_or_else(|| {
            config_err(
                "spacing",
                format!("expected `linear` or `log`, got `{}`", self.spacing),
            )
        })?;
        let plan = SweepPlan {
            f_min: self.f_min,
            f_max: self.f_max,
            n_points: self.n_points,
            spacing,
        };
        plan.validate().map_err(|e| {
            let field = if self.n_points < 3 {
                "n_points"
            } else if !(self.f_min > 0.0) {
                "f_min"
            } else {
                "f_max"
            };
            config_err(field, e)
        })?;
        Ok(plan)
    }

    pub fn noise(&self) -> Result<NoiseModel, IoError> {
        NoiseModel::new(self.sigma_rel).map_err(|e| config_err("sigma_rel", e))
    }

    pub fn sim(&self) -> Result<SimConfig, IoError> {
        let buffer = self
            .buffer_f0_hz
            .map(|f| DeviceParams::new(f, self.g0.unwrap_or(f64::INFINITY)))
            .transpose()
            .map_err(|e| config_err("buffer_f0_hz", e))?;
        let cfg = SimConfig {
            steps_per_period: self.steps_per_period,
            settle_periods: self.settle_periods,
            measure_periods: self.measure_periods,
            buffer,
        };
        cfg.validate().map_err(|e| {
            let field = if self.steps_per_period < 64 {
                "steps_per_period"
            } else if self.settle_periods < 1 {
                "settle_periods"
            } else {
                "measure_periods"
            };
            config_err(field, e)
        })?;
        Ok(cfg)
    }
}
