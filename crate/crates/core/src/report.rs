//! Full-pipeline orchestration, verdicts and artifact emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{AuditConfig, SourceKind};
use crate::curation::{auto_select, rank_drift, restrict, DriftRanking, SubsetSpec};
use crate::drift::{baseline_timeline_csv, cv_csv, cv_grid_csv, drift_tables, CvKind, DriftTables};
use crate::error::{Error, Result};
use crate::ingest::{apply_channel_exclusions, ingest_dir, store, Dataset, TrialMeta};
use crate::probes::{run_probes, windowed_accuracy, AccuracyCurve, DatasetView, FeatureMode, ProbeResults};
use crate::schedule::{audit_schedule, event_plot_csv, ScheduleReport, ScheduleVerdict, SessionAssignment};
use crate::synth::simulate_dataset;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_LEAKAGE: i32 = 2;

/// Loads the configured dataset and drops the adapter's excluded columns.
pub fn load_dataset(config: &AuditConfig) -> Result<Dataset> {
    let dataset = match config.dataset.kind {
        SourceKind::Synth => simulate_dataset(&config.synth)?.0,
        SourceKind::Canonical => store::load_dataset(required_path(config)?)?,
        SourceKind::Source => ingest_dir(required_path(config)?, &config.adapter.compile()?)?,
    };
    let present: BTreeSet<u8> = dataset
        .trials
        .iter()
        .flat_map(|t| t.sensors.iter().map(|s| s.column_index))
        .collect();
    let excluded: BTreeSet<u8> = config.adapter.excluded_columns.intersection(&present).copied().collect();
    apply_channel_exclusions(dataset, &excluded)
}

fn required_path(config: &AuditConfig) -> Result<&Path> {
    config
        .dataset
        .path
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("dataset.path is not set".into()))
}

/// Trials seen by the probes: the drift filters plus the optional
/// location/board selection.
pub fn probe_view<'a>(dataset: &'a Dataset, config: &AuditConfig) -> DatasetView<'a> {
    let filters = &config.drift;
    let sel = &config.probe_selection;
    let view = DatasetView::all(dataset).filter(|t| {
        filters.matches(&t.meta)
            && sel.location_index.is_none_or(|l| l == t.meta.location_index)
            && sel.board_index.is_none_or(|b| b == t.meta.board_index)
    });
    match &filters.sensor_columns {
        Some(cols) => view.with_columns(cols.clone()),
        None => view,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageStatus {
    None,
    Present,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEvidence {
    pub window_start_s: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub chance: f64,
    /// `mean - chance`.
    pub margin: f64,
    /// `margin / std`; absent when the std is 0.
    pub effect_size: Option<f64>,
    pub exceeds_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageFinding {
    pub status: LeakageStatus,
    pub threshold_sigma: f64,
    pub compensated: bool,
    /// Pre-release windows considered.
    pub windows: Vec<WindowEvidence>,
    pub max_margin: Option<f64>,
}

/// Leakage is present when some window ending before gas release has a mean
/// accuracy above `chance + sigma * std`. The compensated `t = 0` window is
/// all zeros by construction and is skipped.
pub fn assess_leakage(curve: &AccuracyCurve, t_release_s: f64, width_s: f64, sigma: f64) -> LeakageFinding {
    let windows: Vec<WindowEvidence> = curve
        .points
        .iter()
        .filter(|p| p.window_start_s + width_s <= t_release_s + 1e-9)
        .filter(|p| !(curve.compensated && p.window_start_s == 0.0))
        .map(|p| {
            let margin = p.mean - p.chance;
            WindowEvidence {
                window_start_s: p.window_start_s,
                mean_accuracy: p.mean,
                std_accuracy: p.std,
                chance: p.chance,
                margin,
                effect_size: (p.std > 0.0).then(|| margin / p.std),
                exceeds_threshold: p.mean > p.chance + sigma * p.std,
            }
        })
        .collect();
    LeakageFinding {
        status: if windows.iter().any(|w| w.exceeds_threshold) {
            LeakageStatus::Present
        } else {
            LeakageStatus::None
        },
        threshold_sigma: sigma,
        compensated: curve.compensated,
        max_margin: windows.iter().map(|w| w.margin).reduce(f64::max),
        windows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticeCheck {
    pub name: String,
    pub passed: bool,
    pub evidence: f64,
    pub note: String,
}

/// Recording-protocol checks: ordering, reference gas coverage, gas
/// repetition across sessions, and documentation of time and ambient
/// conditions.
pub fn best_practice_checks(
    trials: &[TrialMeta],
    sessions: &SessionAssignment,
    schedule: &ScheduleReport,
    reference_gas: Option<&str>,
) -> Vec<PracticeCheck> {
    let mut per_gas: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut per_session: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for (m, &s) in trials.iter().zip(&sessions.session_ids) {
        per_gas.entry(&m.gas_label).or_default().insert(s);
        per_session.entry(s).or_default().insert(&m.gas_label);
    }
    let frac = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let multi = per_gas.values().filter(|s| s.len() >= 2).count();
    let reference = match reference_gas {
        Some(g) => {
            let covered = per_session.values().filter(|gs| gs.contains(g)).count();
            let f = frac(covered, per_session.len());
            PracticeCheck {
                name: "reference_gas_every_session".into(),
                passed: f == 1.0,
                evidence: f,
                note: format!("fraction of sessions containing {g}"),
            }
        }
        None => PracticeCheck {
            name: "reference_gas_every_session".into(),
            passed: false,
            evidence: 0.0,
            note: "no reference gas configured".into(),
        },
    };
    let timed = trials.iter().filter(|m| m.unix_seconds() > 0).count();
    vec![
        PracticeCheck {
            name: "pseudo_randomized_order".into(),
            passed: schedule.stats.verdict == ScheduleVerdict::RandomizedLike,
            evidence: schedule.stats.nmi,
            note: "normalized mutual information between session and gas".into(),
        },
        reference,
        PracticeCheck {
            name: "gas_in_multiple_sessions".into(),
            passed: multi == per_gas.len() && !per_gas.is_empty(),
            evidence: frac(multi, per_gas.len()),
            note: "fraction of gases recorded in at least two sessions".into(),
        },
        PracticeCheck {
            name: "recording_time_documented".into(),
            passed: timed == trials.len() && !trials.is_empty(),
            evidence: frac(timed, trials.len()),
            note: "fraction of trials with a recording timestamp".into(),
        },
        PracticeCheck {
            name: "ambient_conditions_documented".into(),
            passed: false,
            evidence: 0.0,
            note: "temperature and humidity are not part of the ingested record".into(),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvidence {
    pub verdict: ScheduleVerdict,
    pub nmi: f64,
    pub mean_purity: f64,
    pub n_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub schedule: ScheduleEvidence,
    /// `None` when the probe stage did not run.
    pub longterm_leakage: Option<LeakageFinding>,
    pub residual_shortterm_leakage: Option<LeakageFinding>,
    pub recommended_subset: SubsetSpec,
    pub best_practices: Vec<PracticeCheck>,
    /// Pipeline choices the results depend on.
    pub decisions: BTreeMap<String, String>,
    pub n_trials: usize,
    pub exit_code: i32,
}

impl AuditVerdict {
    pub fn leakage_detected(&self) -> bool {
        [&self.longterm_leakage, &self.residual_shortterm_leakage]
            .iter()
            .any(|f| f.as_ref().is_some_and(|f| f.status == LeakageStatus::Present))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omission {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub written: Vec<String>,
    pub omitted: Vec<Omission>,
}

/// Writes files under one directory and records what was written or
/// skipped.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    pub artifacts: Artifacts,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Artifacts::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.artifacts.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn omit(&mut self, name: &str, reason: impl Into<String>) {
        self.artifacts.omitted.push(Omission {
            file: name.to_string(),
            reason: reason.into(),
        });
    }

    /// Writes `artifacts.json` and returns the record.
    pub fn finish(mut self) -> Result<Artifacts> {
        self.artifacts.written.push("artifacts.json".into());
        let path = self.dir.join("artifacts.json");
        fs::write(&path, serde_json::to_string_pretty(&self.artifacts)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.artifacts)
    }
}

pub fn emit_schedule(w: &mut ArtifactWriter, report: &ScheduleReport) -> Result<()> {
    w.write_json("schedule_report.json", report)?;
    w.write("event_plot.csv", &event_plot_csv(&report.events))
}

pub fn emit_drift(w: &mut ArtifactWriter, dataset: &Dataset, tables: &DriftTables) -> Result<()> {
    w.write("cv_longterm.csv", &cv_csv(tables, CvKind::Longterm))?;
    w.write("cv_shortterm.csv", &cv_csv(tables, CvKind::Shortterm))?;
    w.write("cv_longterm_grid.csv", &cv_grid_csv(tables, CvKind::Longterm))?;
    w.write("cv_shortterm_grid.csv", &cv_grid_csv(tables, CvKind::Shortterm))?;
    w.write("baseline_timeline.csv", &baseline_timeline_csv(dataset, &tables.baselines))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub compensated: bool,
    pub standardized: bool,
    pub solver: crate::probes::SolverSummary,
    pub first_window_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub feature_mode: FeatureMode,
    pub standardization: String,
    pub window_width_s: f64,
    pub window_starts_s: Vec<f64>,
    pub n_repeats: usize,
    pub train_frac: f64,
    pub c: f64,
    pub seed: u64,
    pub n_trials: usize,
    pub feature_columns: Vec<u8>,
    pub curves: Vec<CurveSummary>,
    pub pca_explained_variance_ratio: Vec<f64>,
    pub pca_compensated_explained_variance_ratio: Vec<f64>,
}

fn summary(c: &AccuracyCurve) -> CurveSummary {
    CurveSummary {
        compensated: c.compensated,
        standardized: c.standardized,
        solver: c.solver,
        first_window_mean: c.points.first().map_or(f64::NAN, |p| p.mean),
    }
}

pub fn emit_probes(w: &mut ArtifactWriter, results: &ProbeResults, config: &AuditConfig) -> Result<()> {
    w.write("accuracy_curve.csv", &results.raw.to_csv())?;
    w.write("accuracy_curve_compensated.csv", &results.compensated.to_csv())?;
    let mut curves = vec![summary(&results.raw), summary(&results.compensated)];
    match &results.unstandardized {
        Some((raw, comp)) => {
            w.write("accuracy_curve_unstandardized.csv", &raw.to_csv())?;
            w.write("accuracy_curve_compensated_unstandardized.csv", &comp.to_csv())?;
            curves.push(summary(raw));
            curves.push(summary(comp));
        }
        None => {
            for f in ["accuracy_curve_unstandardized.csv", "accuracy_curve_compensated_unstandardized.csv"] {
                w.omit(f, "sensitivity analysis not requested");
            }
        }
    }
    w.write("pca_projection.csv", &results.pca_raw.to_csv())?;
    w.write("pca_projection_compensated.csv", &results.pca_compensated.to_csv())?;
    let p = &config.probe;
    let report = ProbeReport {
        feature_mode: p.mode,
        standardization: if p.standardize { "train-fitted z-score" } else { "none" }.into(),
        window_width_s: p.window.width_s,
        window_starts_s: p.window.start_times_s.clone(),
        n_repeats: p.n_repeats,
        train_frac: p.train_frac,
        c: p.c,
        seed: p.seed,
        n_trials: results.n_trials,
        feature_columns: results.feature_columns.clone(),
        curves,
        pca_explained_variance_ratio: results.pca_raw.model.explained_variance_ratio(),
        pca_compensated_explained_variance_ratio: results.pca_compensated.model.explained_variance_ratio(),
    };
    w.write_json("probe_report.json", &report)
}

const PROBE_FILES: [&str; 5] = [
    "accuracy_curve.csv",
    "accuracy_curve_compensated.csv",
    "pca_projection.csv",
    "pca_projection_compensated.csv",
    "probe_report.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub subset: SubsetSpec,
    pub ranking: DriftRanking,
}

pub fn decisions(config: &AuditConfig) -> BTreeMap<String, String> {
    let p = &config.probe;
    [
        ("feature_mode", format!("{:?}", p.mode).to_lowercase()),
        (
            "standardization",
            if p.standardize { "train-fitted z-score" } else { "none" }.to_string(),
        ),
        ("shortterm_cv_window", "pre-release".to_string()),
        ("std_estimator", "population".to_string()),
        (
            "leakage_rule",
            format!("pre-release mean accuracy > chance + {} std", config.audit.leakage_sigma),
        ),
        ("split", "stratified, one split per repeat shared across windows".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub verdict: AuditVerdict,
    pub artifacts: Artifacts,
}

/// Runs every stage and writes all artifacts under `config.output_dir`.
pub fn run_audit(config: &AuditConfig) -> Result<AuditOutcome> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    run_audit_on(&dataset, config)
}

pub fn run_audit_on(dataset: &Dataset, config: &AuditConfig) -> Result<AuditOutcome> {
    let mut w = ArtifactWriter::new(&config.output_dir)?;

    let (sessions, schedule) = audit_schedule(
        &dataset.manifest.trials,
        config.schedule.gap_threshold_s,
        &config.schedule.thresholds,
    )?;
    emit_schedule(&mut w, &schedule)?;

    let tables = drift_tables(dataset, &config.drift)?;
    emit_drift(&mut w, dataset, &tables)?;

    let (longterm, residual) = if config.run_probes {
        let view = probe_view(dataset, config);
        let results = run_probes(&view, &config.probe, config.sensitivity)?;
        emit_probes(&mut w, &results, config)?;
        let protocol = view.trials[0].protocol;
        let (sigma, width) = (config.audit.leakage_sigma, config.probe.window.width_s);
        (
            Some(assess_leakage(&results.raw, protocol.t_release_s, width, sigma)),
            Some(assess_leakage(&results.compensated, protocol.t_release_s, width, sigma)),
        )
    } else {
        for f in PROBE_FILES {
            w.omit(f, "probe stage disabled");
        }
        (None, None)
    };

    let subset = auto_select(dataset, &tables, config.schedule.gap_threshold_s, &config.curation)?;
    w.write_json(
        "subset_spec.json",
        &CurationReport {
            subset: subset.clone(),
            ranking: rank_drift(&tables),
        },
    )?;
    if config.run_probes {
        let name = "accuracy_curve_subset_compensated.csv";
        match restrict(dataset, &subset).and_then(|v| windowed_accuracy(&v, &config.probe, true)) {
            Ok(curve) => w.write(name, &curve.to_csv())?,
            Err(e) => {
                log::warn!("subset probe skipped: {e}");
                w.omit(name, e.to_string());
            }
        }
    }

    let mut verdict = AuditVerdict {
        schedule: ScheduleEvidence {
            verdict: schedule.stats.verdict,
            nmi: schedule.stats.nmi,
            mean_purity: schedule.stats.mean_purity,
            n_sessions: schedule.stats.n_sessions,
        },
        longterm_leakage: longterm,
        residual_shortterm_leakage: residual,
        recommended_subset: subset,
        best_practices: best_practice_checks(
            &dataset.manifest.trials,
            &sessions,
            &schedule,
            config.reference_gas.as_deref(),
        ),
        decisions: decisions(config),
        n_trials: dataset.len(),
        exit_code: EXIT_CLEAN,
    };
    if verdict.leakage_detected() {
        verdict.exit_code = EXIT_LEAKAGE;
    }
    w.write_json("audit_verdict.json", &verdict)?;
    let artifacts = w.finish()?;
    Ok(AuditOutcome { verdict, artifacts })
}

/// Plain-text summary of a verdict.
pub fn render_summary(v: &AuditVerdict) -> String {
    let mut out = String::new();
    let status = |f: &Option<LeakageFinding>| match f {
        Some(f) => format!(
            "{} (max margin over chance {})",
            match f.status {
                LeakageStatus::Present => "present",
                LeakageStatus::None => "none",
            },
            f.max_margin.map_or("n/a".into(), |m| format!("{m:.3}"))
        ),
        None => "not assessed".into(),
    };
    let verdict = serde_json::to_value(v.schedule.verdict)
        .ok()
        .and_then(|x| x.as_str().map(str::to_string))
        .unwrap_or_default();
    out.push_str(&format!(
        "schedule: {verdict} (NMI {:.3}, mean purity {:.3}, {} sessions)\n",
        v.schedule.nmi, v.schedule.mean_purity, v.schedule.n_sessions
    ));
    out.push_str(&format!("long-term leakage: {}\n", status(&v.longterm_leakage)));
    out.push_str(&format!(
        "residual short-term leakage: {}\n",
        status(&v.residual_shortterm_leakage)
    ));
    let s = &v.recommended_subset;
    out.push_str(&format!(
        "recommended subset: gases {:?}, location {}, board {}, sensors {:?}\n",
        s.gases, s.location_index, s.board_index, s.sensor_columns
    ));
    for c in &v.best_practices {
        out.push_str(&format!(
            "[{}] {}: {} ({})\n",
            if c.passed { "pass" } else { "fail" },
            c.name,
            c.evidence,
            c.note
        ));
    }
    out.push_str(&format!("exit code: {}\n", v.exit_code));
    out
}
