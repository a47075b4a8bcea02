//! Audit configuration, read from a single JSON document.
//!
//! Every section and field is optional; omitted values take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::CurationConfig;
use crate::drift::CvFilters;
use crate::error::{Error, Result};
use crate::ingest::AdapterSpec;
use crate::probes::ProbeConfig;
use crate::schedule::{VerdictThresholds, DEFAULT_GAP_THRESHOLD_S};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// A directory in the canonical store layout.
    #[default]
    Canonical,
    /// Raw recordings parsed through the adapter.
    Source,
    /// Generated in memory from the `synth` section.
    Synth,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSource {
    pub kind: SourceKind,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub gap_threshold_s: f64,
    pub thresholds: VerdictThresholds,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            gap_threshold_s: DEFAULT_GAP_THRESHOLD_S,
            thresholds: VerdictThresholds::default(),
        }
    }
}

/// Which trials the probes see. Fan speed, heater voltage, gases and sensor
/// columns come from the drift filters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSelection {
    pub location_index: Option<u32>,
    pub board_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditThresholds {
    /// Leakage when a pre-release window's mean accuracy exceeds chance by
    /// more than this many standard deviations over repeats.
    pub leakage_sigma: f64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        Self { leakage_sigma: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub dataset: DatasetSource,
    pub adapter: AdapterSpec,
    pub synth: SynthConfig,
    pub schedule: ScheduleConfig,
    pub drift: CvFilters,
    pub probe: ProbeConfig,
    pub probe_selection: ProbeSelection,
    pub run_probes: bool,
    /// Also emit curves without feature standardization.
    pub sensitivity: bool,
    pub curation: CurationConfig,
    pub audit: AuditThresholds,
    /// Gas expected in every session as a recalibration reference.
    pub reference_gas: Option<String>,
    pub output_dir: PathBuf,
    /// Overrides the seeds of the `synth` and `probe` sections when set.
    pub seed: Option<u64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            adapter: AdapterSpec::default(),
            synth: SynthConfig::default(),
            schedule: ScheduleConfig::default(),
            drift: CvFilters::default(),
            probe: ProbeConfig::default(),
            probe_selection: ProbeSelection::default(),
            run_probes: true,
            sensitivity: false,
            curation: CurationConfig::default(),
            audit: AuditThresholds::default(),
            reference_gas: None,
            output_dir: PathBuf::from("driftaudit_out"),
            seed: None,
        }
    }
}

impl AuditConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.apply_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.probe.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.kind != SourceKind::Synth && self.dataset.path.is_none() {
            return Err(Error::InvalidConfig("dataset.path is required unless dataset.kind is synth".into()));
        }
        if !(self.schedule.gap_threshold_s > 0.0) {
            return Err(Error::InvalidConfig("schedule.gap_threshold_s must be positive".into()));
        }
        if !(self.audit.leakage_sigma >= 0.0) {
            return Err(Error::InvalidConfig("audit.leakage_sigma must be non-negative".into()));
        }
        if !(self.curation.max_span_s >= 0.0) {
            return Err(Error::InvalidConfig("curation.max_span_s must be non-negative".into()));
        }
        self.probe.validate()?;
        if self.dataset.kind == SourceKind::Synth {
            self.synth.validate()?;
        }
        Ok(())
    }
}
