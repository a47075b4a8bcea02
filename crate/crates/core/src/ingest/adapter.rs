//! Configurable reader for source recordings.
//!
//! Trial metadata comes from the file name via a regular expression with named
//! capture groups; the payload is a delimited table with one time column and
//! one column per sensor.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{
    default_model_name, resample_uniform, Dataset, DatasetManifest, GridBounds, Protocol, SensorChannel,
    SupplyConstants, TrialMeta, TrialSeries,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadUnits {
    Volts,
    Kohm,
}

/// Maps one payload column onto a board sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub payload_index: usize,
    /// Defaults to the board parsed from the file name.
    #[serde(default)]
    pub board: Option<u32>,
    pub column: u8,
    #[serde(default)]
    pub model: Option<String>,
}

/// Values used when the file name has no capture group for a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaDefaults {
    pub gas_label: String,
    pub concentration_ppm: f64,
    pub location_index: u32,
    pub board_index: u32,
    pub fan_speed_mps: f64,
    pub heater_voltage_v: f64,
    pub repetition: u32,
}

impl Default for MetaDefaults {
    fn default() -> Self {
        Self {
            gas_label: "unknown".into(),
            concentration_ppm: 1.0,
            location_index: 1,
            board_index: 1,
            fan_speed_mps: 0.21,
            heater_voltage_v: 6.0,
            repetition: 1,
        }
    }
}

/// Trials matching a (gas, concentration) pair are excluded at ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCondition {
    pub gas: String,
    #[serde(default)]
    pub concentration_ppm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterSpec {
    /// Named groups: `timestamp` (required), `gas`, `concentration`,
    /// `location`, `board`, `fan`, `heater`, `repetition`, `trial`.
    pub filename_pattern: String,
    /// chrono format string for the `timestamp` group, interpreted as UTC.
    pub timestamp_format: String,
    /// A single character, or `whitespace`.
    pub delimiter: String,
    pub has_header: bool,
    pub time_column: usize,
    /// Multiplier converting the time column to seconds.
    pub time_scale_s: f64,
    /// Empty: every non-time column, in order, is sensor 1, 2, ...
    pub columns: Vec<ColumnMap>,
    pub units: PayloadUnits,
    pub supply: SupplyConstants,
    pub protocol: Protocol,
    pub defaults: MetaDefaults,
    pub bounds: GridBounds,
    pub excluded_columns: BTreeSet<u8>,
    pub excluded_conditions: Vec<ExcludedCondition>,
}

impl Default for AdapterSpec {
    fn default() -> Self {
        Self {
            filename_pattern: concat!(
                r"^(?P<timestamp>\d{8}_\d{6})_(?P<gas>[^_]+)_(?P<concentration>[0-9.]+)ppm",
                r"_L(?P<location>\d+)_B(?P<board>\d+)_F(?P<fan>[0-9.]+)_V(?P<heater>[0-9.]+)",
                r"_R(?P<repetition>\d+)\.(?:csv|txt|dat)$"
            )
            .into(),
            timestamp_format: "%Y%m%d_%H%M%S".into(),
            delimiter: ",".into(),
            has_header: true,
            time_column: 0,
            time_scale_s: 1.0,
            columns: Vec::new(),
            units: PayloadUnits::Volts,
            supply: SupplyConstants::default(),
            protocol: Protocol::default(),
            defaults: MetaDefaults::default(),
            bounds: GridBounds::default(),
            excluded_columns: super::default_exclusions(),
            excluded_conditions: Vec::new(),
        }
    }
}

/// An [`AdapterSpec`] with its file name pattern compiled.
#[derive(Debug, Clone)]
pub struct Adapter {
    spec: AdapterSpec,
    pattern: Regex,
}

impl AdapterSpec {
    pub fn compile(&self) -> Result<Adapter> {
        let pattern = Regex::new(&self.filename_pattern)
            .map_err(|e| Error::InvalidConfig(format!("adapter filename_pattern: {e}")))?;
        if !pattern.capture_names().any(|n| n == Some("timestamp")) {
            return Err(Error::InvalidConfig(
                "adapter filename_pattern needs a `timestamp` group".into(),
            ));
        }
        if self.delimiter != "whitespace" && self.delimiter.chars().count() != 1 {
            return Err(Error::InvalidConfig(format!(
                "adapter delimiter `{}` must be one character or `whitespace`",
                self.delimiter
            )));
        }
        self.protocol.validate()?;
        Ok(Adapter {
            spec: self.clone(),
            pattern,
        })
    }
}

impl Adapter {
    pub fn spec(&self) -> &AdapterSpec {
        &self.spec
    }

    pub fn matches(&self, file_name: &str) -> bool {
        self.pattern.is_match(file_name)
    }

    fn parse_name(&self, path: &Path) -> Result<TrialMeta> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let unparseable = || Error::UnparseableFilename { name: name.clone() };
        let caps = self.pattern.captures(&name).ok_or_else(unparseable)?;
        let d = &self.spec.defaults;
        let field = |key: &str| caps.name(key).map(|m| m.as_str());
        fn num<T: std::str::FromStr>(v: Option<&str>, default: T, err: &dyn Fn() -> Error) -> Result<T> {
            match v {
                Some(s) => s.parse().map_err(|_| err()),
                None => Ok(default),
            }
        }
        let ts = field("timestamp").ok_or_else(unparseable)?;
        let recorded_at = NaiveDateTime::parse_from_str(ts, &self.spec.timestamp_format)
            .map_err(|_| unparseable())?
            .and_utc();
        let stem = path
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(TrialMeta {
            trial_id: field("trial").map(str::to_string).unwrap_or(stem),
            gas_label: field("gas").map(str::to_string).unwrap_or_else(|| d.gas_label.clone()),
            concentration_ppm: num(field("concentration"), d.concentration_ppm, &unparseable)?,
            location_index: num(field("location"), d.location_index, &unparseable)?,
            board_index: num(field("board"), d.board_index, &unparseable)?,
            fan_speed_mps: num(field("fan"), d.fan_speed_mps, &unparseable)?,
            heater_voltage_v: num(field("heater"), d.heater_voltage_v, &unparseable)?,
            repetition: num(field("repetition"), d.repetition, &unparseable)?,
            recorded_at,
            source_path: path.display().to_string(),
        })
    }

    fn split<'l>(&self, line: &'l str) -> Vec<&'l str> {
        if self.spec.delimiter == "whitespace" {
            line.split_whitespace().collect()
        } else {
            let c = self.spec.delimiter.chars().next().unwrap_or(',');
            line.split(c).map(str::trim).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawChannel {
    pub channel: SensorChannel,
    /// Payload values in the adapter's units.
    pub values: Vec<f64>,
}

/// A parsed but not yet resampled source file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub meta: TrialMeta,
    pub time_s: Vec<f64>,
    pub channels: Vec<RawChannel>,
}

pub fn parse_trial_file(path: &Path, adapter: &Adapter) -> Result<RawTrial> {
    let meta = adapter.parse_name(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec = adapter.spec();
    let malformed = |line: usize, reason: String| Error::MalformedPayload {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut width = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let skip = usize::from(spec.has_header);
    for (lineno, line) in text.lines().enumerate().skip(skip) {
        if line.trim().is_empty() {
            continue;
        }
        let cells = adapter.split(line);
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w {
            return Err(malformed(lineno + 1, format!("{} columns, expected {w}", cells.len())));
        }
        let row = cells
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(lineno + 1, format!("non-numeric cell `{c}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let Some(width) = width else {
        return Err(Error::EmptyTrial {
            path: path.to_path_buf(),
        });
    };
    if spec.time_column >= width {
        return Err(malformed(1, format!("time column {} of {width}", spec.time_column)));
    }

    let maps: Vec<ColumnMap> = if spec.columns.is_empty() {
        (0..width)
            .filter(|&i| i != spec.time_column)
            .enumerate()
            .map(|(k, i)| ColumnMap {
                payload_index: i,
                board: None,
                column: (k + 1) as u8,
                model: None,
            })
            .collect()
    } else {
        spec.columns.clone()
    };
    if let Some(m) = maps.iter().find(|m| m.payload_index >= width || m.payload_index == spec.time_column) {
        return Err(malformed(1, format!("mapped payload column {} of {width}", m.payload_index)));
    }

    let time_s = rows.iter().map(|r| r[spec.time_column] * spec.time_scale_s).collect();
    let channels = maps
        .iter()
        .map(|m| RawChannel {
            channel: SensorChannel {
                column_index: m.column,
                model_name: m.model.clone().unwrap_or_else(|| default_model_name(m.column)),
                board_index: m.board.unwrap_or(meta.board_index),
            },
            values: rows.iter().map(|r| r[m.payload_index]).collect(),
        })
        .collect();
    Ok(RawTrial { meta, time_s, channels })
}

impl RawTrial {
    /// Converts to resistance, resamples, and splits per board. A channel with
    /// any out-of-range voltage is marked invalid for this trial and zero
    /// filled. Files spanning several boards get a `_b{board}` id suffix.
    pub fn into_series(self, spec: &AdapterSpec) -> Result<Vec<TrialSeries>> {
        let p = spec.protocol;
        let mut by_board: BTreeMap<u32, Vec<RawChannel>> = BTreeMap::new();
        for ch in self.channels {
            by_board.entry(ch.channel.board_index).or_default().push(ch);
        }
        let multi = by_board.len() > 1;
        let n = p.n_samples();
        by_board
            .into_iter()
            .map(|(board, channels)| {
                let mut meta = self.meta.clone();
                meta.board_index = board;
                if multi {
                    meta.trial_id = format!("{}_b{board}", meta.trial_id);
                }
                let mut values = Vec::with_capacity(channels.len());
                let mut validity = Vec::with_capacity(channels.len());
                let mut sensors = Vec::with_capacity(channels.len());
                for ch in channels {
                    let resistance: Option<Vec<f64>> = match spec.units {
                        PayloadUnits::Kohm => {
                            Some(ch.values).filter(|v| v.iter().all(|x| *x >= 0.0))
                        }
                        PayloadUnits::Volts => ch
                            .values
                            .iter()
                            .map(|&v| spec.supply.to_resistance(v).ok())
                            .collect(),
                    };
                    let excluded = spec.excluded_columns.contains(&ch.channel.column_index);
                    match resistance {
                        Some(r) => {
                            values.push(resample_uniform(&self.time_s, &r, p.sample_rate_hz, p.duration_s)?);
                            validity.push(!excluded);
                        }
                        None => {
                            log::warn!(
                                "{}: column {} saturated or disconnected, marked invalid",
                                meta.trial_id,
                                ch.channel.column_index
                            );
                            values.push(vec![0.0; n]);
                            validity.push(false);
                        }
                    }
                    sensors.push(ch.channel);
                }
                let trial = TrialSeries {
                    meta,
                    protocol: p,
                    sensors,
                    values,
                    validity,
                };
                trial.validate()?;
                Ok(trial)
            })
            .collect()
    }
}

fn excluded_by_condition(meta: &TrialMeta, conditions: &[ExcludedCondition]) -> bool {
    conditions.iter().any(|c| {
        c.gas == meta.gas_label
            && c
                .concentration_ppm
                .is_none_or(|ppm| (ppm - meta.concentration_ppm).abs() < 1e-9)
    })
}

/// Ingests every file under `root`. Files that fail to parse are listed in
/// the manifest's `excluded` set rather than aborting the run.
pub fn ingest_dir(root: &Path, adapter: &Adapter) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let files: Vec<PathBuf> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();

    let spec = adapter.spec();
    let results: Vec<(PathBuf, Result<Vec<TrialSeries>>)> = files
        .into_par_iter()
        .map(|path| {
            let r = parse_trial_file(&path, adapter).and_then(|raw| {
                raw.meta.validate(spec.bounds)?;
                if excluded_by_condition(&raw.meta, &spec.excluded_conditions) {
                    return Ok(Vec::new());
                }
                raw.into_series(spec)
            });
            (path, r)
        })
        .collect();

    let mut trials = Vec::new();
    let mut excluded = Vec::new();
    for (path, r) in results {
        let rel = path.strip_prefix(root).unwrap_or(&path).display().to_string();
        match r {
            Ok(v) if v.is_empty() => excluded.push((rel, "excluded condition".to_string())),
            Ok(v) => trials.extend(v),
            Err(e) => excluded.push((rel, e.to_string())),
        }
    }
    if trials.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Dataset::from_trials(trials, excluded, root.to_path_buf())
}

pub fn build_manifest(root: &Path, adapter: &Adapter) -> Result<DatasetManifest> {
    ingest_dir(root, adapter).map(|d| d.manifest)
}
