//! Trial ingestion: raw recordings to a uniformly sampled resistance dataset.

mod adapter;
mod convert;
mod resample;
pub mod store;

use std::collections::BTreeSet;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adapter::{
    build_manifest, ingest_dir, parse_trial_file, AdapterSpec, ColumnMap, ExcludedCondition,
    MetaDefaults, PayloadUnits, RawChannel, RawTrial,
};
pub use convert::{resistance_to_voltage, voltage_to_resistance, SupplyConstants};
pub use resample::resample_uniform;

/// Sensor models per board column of the reference platform.
pub const SENSOR_MODELS: [&str; 8] = [
    "TGS 2611", "TGS 2612", "TGS 2610", "TGS 2602", "TGS 2600", "TGS 2600", "TGS 2620", "TGS 2620",
];

pub fn default_model_name(column: u8) -> String {
    SENSOR_MODELS
        .get(usize::from(column).wrapping_sub(1))
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("column {column}"))
}

/// Timing of one recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    pub sample_rate_hz: f64,
    pub t_release_s: f64,
    pub t_off_s: f64,
    pub duration_s: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            sample_rate_hz: 100.0,
            t_release_s: 20.0,
            t_off_s: 200.0,
            duration_s: 260.0,
        }
    }
}

/// `x` rounded to an integer when it is within `1e-9` of one, otherwise
/// rounded up.
fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

impl Protocol {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    /// Number of grid samples with `t < t_release`.
    pub fn pre_release_samples(&self) -> usize {
        ceil_tolerant(self.t_release_s * self.sample_rate_hz).min(self.n_samples())
    }

    /// Grid index of time `t` (rounded to the nearest sample).
    pub fn index_of(&self, t: f64) -> usize {
        (t * self.sample_rate_hz).round().max(0.0) as usize
    }

    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 / self.sample_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        let p = self;
        if !(p.sample_rate_hz > 0.0 && p.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidMeta(format!(
                "sample rate must be positive, got {}",
                p.sample_rate_hz
            )));
        }
        if !(0.0 <= p.t_release_s && p.t_release_s < p.t_off_s && p.t_off_s <= p.duration_s) {
            return Err(Error::InvalidMeta(format!(
                "need 0 <= t_release < t_off <= duration, got {} / {} / {}",
                p.t_release_s, p.t_off_s, p.duration_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialMeta {
    pub trial_id: String,
    pub gas_label: String,
    pub concentration_ppm: f64,
    pub location_index: u32,
    pub board_index: u32,
    pub fan_speed_mps: f64,
    pub heater_voltage_v: f64,
    pub repetition: u32,
    pub recorded_at: DateTime<Utc>,
    pub source_path: String,
}

/// Declared extent of the tunnel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridBounds {
    pub locations: u32,
    pub boards: u32,
}

impl Default for GridBounds {
    fn default() -> Self {
        Self {
            locations: 6,
            boards: 9,
        }
    }
}

impl TrialMeta {
    pub fn unix_seconds(&self) -> i64 {
        self.recorded_at.timestamp()
    }

    pub fn recorded_at_iso(&self) -> String {
        format_timestamp(&self.recorded_at)
    }

    pub fn validate(&self, bounds: GridBounds) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMeta(format!("{}: {m}", self.trial_id)));
        if self.trial_id.is_empty() || self.trial_id.contains([',', '\n', '/', '\\']) {
            return bad("trial id must be non-empty without separators".into());
        }
        if self.unix_seconds() <= 0 {
            return bad(format!("timestamp {} is not positive", self.recorded_at_iso()));
        }
        if !(self.concentration_ppm > 0.0 && self.concentration_ppm.is_finite()) {
            return bad(format!("concentration {} ppm", self.concentration_ppm));
        }
        if !(1..=bounds.locations).contains(&self.location_index) {
            return bad(format!("location {} outside 1..={}", self.location_index, bounds.locations));
        }
        if !(1..=bounds.boards).contains(&self.board_index) {
            return bad(format!("board {} outside 1..={}", self.board_index, bounds.boards));
        }
        if !(self.fan_speed_mps >= 0.0) || !(self.heater_voltage_v > 0.0) {
            return bad("fan speed must be >= 0 and heater voltage > 0".into());
        }
        if self.repetition < 1 {
            return bad("repetition must be >= 1".into());
        }
        Ok(())
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::InvalidMeta(format!("timestamp `{s}`: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorChannel {
    pub column_index: u8,
    pub model_name: String,
    pub board_index: u32,
}

/// One trial on one board, resampled onto the uniform grid `k / rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSeries {
    pub meta: TrialMeta,
    pub protocol: Protocol,
    pub sensors: Vec<SensorChannel>,
    /// Resistance in kΩ, one row per sensor.
    pub values: Vec<Vec<f64>>,
    pub validity: Vec<bool>,
}

impl TrialSeries {
    pub fn n_samples(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Row index of the given board column.
    pub fn channel(&self, column: u8) -> Option<usize> {
        self.sensors.iter().position(|s| s.column_index == column)
    }

    pub fn is_valid(&self, column: u8) -> bool {
        self.channel(column).is_some_and(|i| self.validity[i])
    }

    pub fn valid_columns(&self) -> impl Iterator<Item = u8> + '_ {
        self.sensors
            .iter()
            .zip(&self.validity)
            .filter(|(_, v)| **v)
            .map(|(s, _)| s.column_index)
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        let expected = self.protocol.n_samples();
        let id = &self.meta.trial_id;
        if self.values.len() != self.sensors.len() || self.validity.len() != self.sensors.len() {
            return Err(Error::InvalidMeta(format!("{id}: channel count mismatch")));
        }
        let mut seen = BTreeSet::new();
        for s in &self.sensors {
            if !seen.insert(s.column_index) {
                return Err(Error::InvalidMeta(format!(
                    "{id}: duplicate column {}",
                    s.column_index
                )));
            }
        }
        for row in &self.values {
            if row.len() != expected {
                return Err(Error::InvalidMeta(format!(
                    "{id}: {} samples, expected {expected}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidMeta(format!("{id}: non-finite or negative resistance")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    /// Sorted by `(recorded_at, trial_id)`.
    pub trials: Vec<TrialMeta>,
    /// `(trial id or source path, reason)`.
    pub excluded: Vec<(String, String)>,
    pub canonical_root: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Manifest and trials, with `trials[i].meta == manifest.trials[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trials: Vec<TrialSeries>,
}

impl Dataset {
    /// Sorts trials by `(recorded_at, trial_id)` and rebuilds the manifest
    /// order. Fails on duplicate trial ids.
    pub fn from_trials(
        mut trials: Vec<TrialSeries>,
        excluded: Vec<(String, String)>,
        canonical_root: PathBuf,
    ) -> Result<Self> {
        trials.sort_by(|a, b| {
            a.meta
                .recorded_at
                .cmp(&b.meta.recorded_at)
                .then_with(|| a.meta.trial_id.cmp(&b.meta.trial_id))
        });
        let mut ids: Vec<&str> = trials.iter().map(|t| t.meta.trial_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidMeta(format!("duplicate trial id {}", w[0])));
        }
        let mut excluded = excluded;
        excluded.sort();
        Ok(Self {
            manifest: DatasetManifest {
                trials: trials.iter().map(|t| t.meta.clone()).collect(),
                excluded,
                canonical_root,
            },
            trials,
        })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Multiplies every resistance sample by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.trials {
            for row in &mut t.values {
                row.iter_mut().for_each(|v| *v *= k);
            }
        }
        out
    }
}

/// Clears the validity flag of `excluded_columns` in every trial.
pub fn apply_channel_exclusions(mut dataset: Dataset, excluded_columns: &BTreeSet<u8>) -> Result<Dataset> {
    for &col in excluded_columns {
        if dataset.trials.iter().any(|t| t.channel(col).is_none()) {
            return Err(Error::UnknownColumn(col));
        }
    }
    for trial in &mut dataset.trials {
        for &col in excluded_columns {
            if let Some(i) = trial.channel(col) {
                trial.validity[i] = false;
            }
        }
    }
    Ok(dataset)
}

/// The default exclusion set: sensor column 1 on every board.
pub fn default_exclusions() -> BTreeSet<u8> {
    BTreeSet::from([1])
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use chrono::TimeZone;

    pub fn meta(id: &str, gas: &str, t: i64) -> TrialMeta {
        TrialMeta {
            trial_id: id.into(),
            gas_label: gas.into(),
            concentration_ppm: 100.0,
            location_index: 4,
            board_index: 5,
            fan_speed_mps: 0.21,
            heater_voltage_v: 6.0,
            repetition: 1,
            recorded_at: Utc.timestamp_opt(t, 0).unwrap(),
            source_path: "test".into(),
        }
    }

    /// Trial with `n_sensors` constant channels of value `level`.
    pub fn constant_trial(id: &str, gas: &str, t: i64, n_sensors: u8, level: f64, protocol: Protocol) -> TrialSeries {
        let n = protocol.n_samples();
        TrialSeries {
            meta: meta(id, gas, t),
            protocol,
            sensors: (1..=n_sensors)
                .map(|c| SensorChannel {
                    column_index: c,
                    model_name: default_model_name(c),
                    board_index: 5,
                })
                .collect(),
            values: vec![vec![level; n]; n_sensors as usize],
            validity: vec![true; n_sensors as usize],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn small() -> Protocol {
        Protocol {
            sample_rate_hz: 10.0,
            t_release_s: 2.0,
            t_off_s: 3.0,
            duration_s: 4.0,
        }
    }

    #[test]
    fn protocol_counts() {
        let p = Protocol::default();
        assert_eq!(p.n_samples(), 26_000);
        assert_eq!(p.pre_release_samples(), 2_000);
        assert_eq!(small().pre_release_samples(), 20);
    }

    #[test]
    fn exclude_sensor_one_leaves_seven() {
        let ds = Dataset::from_trials(
            vec![constant_trial("a", "g", 10, 8, 5.0, small())],
            vec![],
            PathBuf::new(),
        )
        .unwrap();
        let ds = apply_channel_exclusions(ds, &default_exclusions()).unwrap();
        assert_eq!(ds.trials[0].valid_columns().count(), 7);
        assert!(!ds.trials[0].is_valid(1));
    }

    #[test]
    fn empty_exclusion_is_identity() {
        let ds = Dataset::from_trials(
            vec![constant_trial("a", "g", 10, 8, 5.0, small())],
            vec![],
            PathBuf::new(),
        )
        .unwrap();
        let out = apply_channel_exclusions(ds.clone(), &BTreeSet::new()).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn unknown_column_rejected() {
        let ds = Dataset::from_trials(
            vec![constant_trial("a", "g", 10, 8, 5.0, small())],
            vec![],
            PathBuf::new(),
        )
        .unwrap();
        let err = apply_channel_exclusions(ds, &BTreeSet::from([9])).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(9)));
    }

    #[test]
    fn from_trials_sorts_by_time_then_id() {
        let p = small();
        let ds = Dataset::from_trials(
            vec![
                constant_trial("b", "g", 20, 2, 1.0, p),
                constant_trial("c", "g", 10, 2, 1.0, p),
                constant_trial("a", "g", 20, 2, 1.0, p),
            ],
            vec![],
            PathBuf::new(),
        )
        .unwrap();
        let ids: Vec<_> = ds.manifest.trials.iter().map(|m| m.trial_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let p = small();
        let r = Dataset::from_trials(
            vec![constant_trial("a", "g", 20, 2, 1.0, p), constant_trial("a", "g", 30, 2, 1.0, p)],
            vec![],
            PathBuf::new(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn meta_bounds_checked() {
        let mut m = meta("x", "g", 100);
        assert!(m.validate(GridBounds::default()).is_ok());
        m.board_index = 10;
        assert!(m.validate(GridBounds::default()).is_err());
        let mut m = meta("x", "g", 0);
        m.board_index = 1;
        assert!(m.validate(GridBounds::default()).is_err());
    }
}
