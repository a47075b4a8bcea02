//! Leakage probes: window snapshots, zero-offset compensation, global PCA
//! and windowed linear-SVM accuracy over repeated stratified splits.
//!
//! A probe answers one question per window: can the gas label be predicted
//! from this snapshot of the signal? Windows before gas release carry no
//! analyte information, so accuracy above chance there is leakage.

pub mod pca;
pub mod split;
pub mod svm;
pub mod window;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pca::{pca_fit, pca_project, PcaModel};
pub use split::{stratified_split, Split};
pub use svm::{svm_train, Standardizer, SvmModel};
pub use window::{window_features, zero_offset_subtract, FeatureMatrix, FeatureMode, FeatureSpan, WindowSpec};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, TrialSeries};
use crate::stats::exact_mean_std;

/// Read-only selection of trials and sensor columns.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    pub trials: Vec<&'a TrialSeries>,
    /// `None`: every column.
    pub columns: Option<BTreeSet<u8>>,
}

impl<'a> DatasetView<'a> {
    pub fn all(dataset: &'a Dataset) -> Self {
        Self {
            trials: dataset.trials.iter().collect(),
            columns: None,
        }
    }

    pub fn with_columns(mut self, columns: BTreeSet<u8>) -> Self {
        self.columns = Some(columns);
        self
    }

    pub fn filter(mut self, keep: impl Fn(&TrialSeries) -> bool) -> Self {
        self.trials.retain(|t| keep(t));
        self
    }

    pub fn includes_column(&self, c: u8) -> bool {
        self.columns.as_ref().is_none_or(|s| s.contains(&c))
    }

    pub fn labels(&self) -> Vec<String> {
        self.trials.iter().map(|t| t.meta.gas_label.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub window: WindowSpec,
    pub mode: FeatureMode,
    pub n_repeats: usize,
    pub train_frac: f64,
    pub c: f64,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            mode: FeatureMode::Mean,
            n_repeats: 10,
            train_frac: 0.8,
            c: 1.0,
            standardize: true,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::InvalidConfig("probe: n_repeats must be at least 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "probe: train_frac must lie in (0, 1), got {}",
                self.train_frac
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("probe: C must be positive, got {}", self.c)));
        }
        if self.window.start_times_s.is_empty() {
            return Err(Error::InvalidConfig("probe: no window start times".into()));
        }
        Ok(())
    }
}

/// Accuracy of always predicting the most frequent label.
pub fn chance_level(labels: &[String]) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.values().max().map_or(0.0, |m| *m as f64 / labels.len() as f64)
}

/// Snapshots at every configured window, plus the `t = 0` reference.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub reference: FeatureMatrix,
    pub raw: Vec<FeatureMatrix>,
}

impl WindowSet {
    pub fn extract(view: &DatasetView<'_>, window: &WindowSpec, mode: FeatureMode) -> Result<Self> {
        let reference = window_features(view, 0.0, window.width_s, mode)?;
        let raw = window
            .start_times_s
            .par_iter()
            .map(|&t| window_features(view, t, window.width_s, mode))
            .collect::<Result<_>>()?;
        Ok(Self { reference, raw })
    }

    pub fn compensated(&self) -> Result<Vec<FeatureMatrix>> {
        self.raw.iter().map(|f| zero_offset_subtract(f, &self.reference)).collect()
    }

    pub fn get(&self, compensated: bool) -> Result<Vec<FeatureMatrix>> {
        if compensated {
            self.compensated()
        } else {
            Ok(self.raw.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub window_start_s: f64,
    pub mean: f64,
    pub std: f64,
    pub n_repeats: usize,
    pub chance: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverSummary {
    pub fits: usize,
    pub degenerate_fits: usize,
    pub max_iterations: u64,
    /// Largest attained gap as a fraction of its tolerance.
    pub max_gap_ratio: f64,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub compensated: bool,
    pub mode: FeatureMode,
    pub standardized: bool,
    pub points: Vec<AccuracyPoint>,
    pub solver: SolverSummary,
}

impl AccuracyCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_start,mean,std,chance\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.window_start_s, p.mean, p.std, p.chance);
        }
        out
    }
}

fn class_indices(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let y = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();
    (classes, y)
}

/// Trains and scores one model per (repeat, window). The split of a repeat
/// is shared by all windows.
pub fn accuracy_curve(windows: &[FeatureMatrix], labels: &[String], config: &ProbeConfig) -> Result<AccuracyCurve> {
    config.validate()?;
    let first = windows
        .first()
        .ok_or_else(|| Error::EmptySelection("no windows".into()))?;
    if labels.len() != first.n_rows {
        return Err(Error::LayoutMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            first.n_rows
        )));
    }
    let (classes, y) = class_indices(labels);
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    for (c, label) in classes.iter().enumerate() {
        let count = y.iter().filter(|&&v| v == c).count();
        if count < 2 {
            return Err(Error::InsufficientClassTrials {
                label: label.clone(),
                count,
            });
        }
    }
    let splits: Vec<Split> = (0..config.n_repeats)
        .map(|r| stratified_split(&y, classes.len(), config.train_frac, config.seed, r as u64))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..windows.len())
        .flat_map(|w| (0..config.n_repeats).map(move |r| (w, r)))
        .collect();
    let results: Vec<(f64, SvmModel)> = tasks
        .par_iter()
        .map(|&(w, r)| score_split(&windows[w], &y, &classes, &splits[r], config))
        .collect::<Result<_>>()?;

    let chance = chance_level(labels);
    let mut solver = SolverSummary {
        all_converged: true,
        ..SolverSummary::default()
    };
    for (_, m) in &results {
        solver.fits += 1;
        solver.degenerate_fits += usize::from(m.degenerate);
        solver.max_iterations = solver.max_iterations.max(m.max_iterations());
        solver.max_gap_ratio = solver.max_gap_ratio.max(m.max_gap_ratio());
        solver.all_converged &= m.all_converged();
    }
    let points = windows
        .iter()
        .enumerate()
        .map(|(w, fm)| {
            let accs: Vec<f64> = results[w * config.n_repeats..(w + 1) * config.n_repeats]
                .iter()
                .map(|(a, _)| *a)
                .collect();
            let (mean, std) = exact_mean_std(&accs);
            AccuracyPoint {
                window_start_s: fm.window_start_s,
                mean,
                std,
                n_repeats: config.n_repeats,
                chance,
                accuracies: accs,
            }
        })
        .collect();
    Ok(AccuracyCurve {
        compensated: first.compensated,
        mode: config.mode,
        standardized: config.standardize,
        points,
        solver,
    })
}

fn score_split(
    fm: &FeatureMatrix,
    y: &[usize],
    classes: &[String],
    split: &Split,
    config: &ProbeConfig,
) -> Result<(f64, SvmModel)> {
    let train_rows: Vec<&[f64]> = split.train.iter().map(|&i| fm.row(i)).collect();
    let scaler = if config.standardize {
        Standardizer::fit(&train_rows)
    } else {
        Standardizer::identity(fm.n_cols)
    };
    let train: Vec<Vec<f64>> = train_rows.iter().map(|r| scaler.apply(r)).collect();
    let train_refs: Vec<&[f64]> = train.iter().map(Vec::as_slice).collect();
    let y_train: Vec<usize> = split.train.iter().map(|&i| y[i]).collect();
    let model = svm_train(&train_refs, &y_train, classes, config.c)?;
    let correct = split
        .test
        .iter()
        .filter(|&&i| model.predict(&scaler.apply(fm.row(i))) == y[i])
        .count();
    Ok((correct as f64 / split.test.len() as f64, model))
}

pub fn windowed_accuracy(view: &DatasetView<'_>, config: &ProbeConfig, compensated: bool) -> Result<AccuracyCurve> {
    let set = WindowSet::extract(view, &config.window, config.mode)?;
    accuracy_curve(&set.get(compensated)?, &view.labels(), config)
}

/// The accuracy curve with labels permuted at random: a null control whose
/// accuracy should sit at chance in every window.
pub fn label_shuffle_control(windows: &[FeatureMatrix], labels: &[String], config: &ProbeConfig) -> Result<AccuracyCurve> {
    let mut shuffled = labels.to_vec();
    shuffled.shuffle(&mut crate::rng::stream(config.seed, &[0x5348_5546]));
    accuracy_curve(windows, &shuffled, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub trial_id: String,
    pub window_start_s: f64,
    pub pc1: f64,
    pub pc2: f64,
    pub gas: String,
}

/// PCA fitted on all windows pooled, with every window projected into it.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaSnapshots {
    pub model: PcaModel,
    pub rows: Vec<ProjectionRow>,
}

impl PcaSnapshots {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial_id,window_start,pc1,pc2,gas\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.trial_id, r.window_start_s, r.pc1, r.pc2, r.gas);
        }
        out
    }
}

pub fn pca_snapshots(windows: &[FeatureMatrix]) -> Result<PcaSnapshots> {
    let refs: Vec<&FeatureMatrix> = windows.iter().collect();
    let model = pca_fit(&refs)?;
    let mut rows = Vec::new();
    for fm in windows {
        for (i, p) in pca_project(&model, fm, 2)?.into_iter().enumerate() {
            rows.push(ProjectionRow {
                trial_id: fm.trial_ids[i].clone(),
                window_start_s: fm.window_start_s,
                pc1: p[0],
                pc2: p[1],
                gas: fm.labels[i].clone(),
            });
        }
    }
    Ok(PcaSnapshots { model, rows })
}

/// Everything the probe stage computes for one view.
#[derive(Debug, Clone)]
pub struct ProbeResults {
    pub raw: AccuracyCurve,
    pub compensated: AccuracyCurve,
    /// Same curves without standardization, when requested.
    pub unstandardized: Option<(AccuracyCurve, AccuracyCurve)>,
    pub pca_raw: PcaSnapshots,
    pub pca_compensated: PcaSnapshots,
    pub n_trials: usize,
    pub feature_columns: Vec<u8>,
}

pub fn run_probes(view: &DatasetView<'_>, config: &ProbeConfig, sensitivity: bool) -> Result<ProbeResults> {
    config.validate()?;
    let set = WindowSet::extract(view, &config.window, config.mode)?;
    let compensated = set.compensated()?;
    let labels = view.labels();
    let raw_curve = accuracy_curve(&set.raw, &labels, config)?;
    let comp_curve = accuracy_curve(&compensated, &labels, config)?;
    let unstandardized = if sensitivity {
        let plain = ProbeConfig {
            standardize: false,
            ..config.clone()
        };
        Some((
            accuracy_curve(&set.raw, &labels, &plain)?,
            accuracy_curve(&compensated, &labels, &plain)?,
        ))
    } else {
        None
    };
    Ok(ProbeResults {
        pca_raw: pca_snapshots(&set.raw)?,
        pca_compensated: pca_snapshots(&compensated)?,
        raw: raw_curve,
        compensated: comp_curve,
        unstandardized,
        n_trials: view.trials.len(),
        feature_columns: set.reference.layout.iter().map(|s| s.column).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Protocol;
    use crate::synth::{simulate_dataset, GasSpec, ScheduleMode, SynthConfig};

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chance_levels() {
        let three: Vec<String> = (0..9).map(|i| format!("g{}", i % 3)).collect();
        assert!((chance_level(&three) - 1.0 / 3.0).abs() < 1e-15);
        let ten: Vec<String> = (0..50).map(|i| format!("g{}", i % 10)).collect();
        assert_eq!(chance_level(&ten), 0.1);
        assert_eq!(chance_level(&labels(&["A", "A", "B"])), 2.0 / 3.0);
    }

    fn synth(mode: ScheduleMode, step: f64) -> SynthConfig {
        SynthConfig {
            gases: (0..4)
                .map(|g| GasSpec {
                    label: format!("g{g}"),
                    concentration_ppm: 10.0,
                    amplitude_kohm: Vec::new(),
                })
                .collect(),
            trials_per_gas: 10,
            schedule_mode: mode,
            longterm_step_sigma: step,
            noise_sigma: 0.2,
            protocol: Protocol {
                sample_rate_hz: 100.0,
                t_release_s: 20.0,
                t_off_s: 30.0,
                duration_s: 35.0,
            },
            ..SynthConfig::default()
        }
    }

    fn probe_config() -> ProbeConfig {
        ProbeConfig {
            window: WindowSpec {
                width_s: 0.1,
                start_times_s: vec![0.0, 10.0, 25.0],
            },
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn batched_drift_leaks_and_compensation_starts_at_chance() {
        let (ds, _) = simulate_dataset(&synth(ScheduleMode::Batched, 1.0)).unwrap();
        let view = DatasetView::all(&ds);
        let cfg = probe_config();
        let raw = windowed_accuracy(&view, &cfg, false).unwrap();
        assert!(raw.points[0].mean >= 0.95, "{:?}", raw.points[0]);
        let comp = windowed_accuracy(&view, &cfg, true).unwrap();
        assert_eq!(comp.points[0].mean, comp.points[0].chance);
        assert_eq!(comp.points[0].std, 0.0);
        assert!(comp.points[2].mean > 0.9, "post-release {:?}", comp.points[2]);
        assert!(raw.solver.all_converged);
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        let (ds, _) = simulate_dataset(&synth(ScheduleMode::Batched, 1.0)).unwrap();
        let view = DatasetView::all(&ds);
        let cfg = probe_config();
        let set = WindowSet::extract(&view, &cfg.window, cfg.mode).unwrap();
        let curve = label_shuffle_control(&set.raw, &view.labels(), &cfg).unwrap();
        for p in &curve.points {
            assert!((p.mean - p.chance).abs() <= 3.0 * p.std, "{p:?}");
        }
    }

    #[test]
    fn test_rows_do_not_influence_training() {
        let (ds, _) = simulate_dataset(&synth(ScheduleMode::Batched, 1.0)).unwrap();
        let view = DatasetView::all(&ds);
        let fm = window_features(&view, 10.0, 0.1, FeatureMode::Mean).unwrap();
        let (classes, y) = class_indices(&fm.labels);
        let split = stratified_split(&y, classes.len(), 0.8, 4, 0).unwrap();
        let cfg = ProbeConfig::default();
        let (_, a) = score_split(&fm, &y, &classes, &split, &cfg).unwrap();
        let mut mutated = fm.clone();
        for &i in &split.test {
            mutated.row_mut(i).iter_mut().for_each(|v| *v = *v * 50.0 + 1e3);
        }
        let (_, b) = score_split(&mutated, &y, &classes, &split, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (ds, _) = simulate_dataset(&synth(ScheduleMode::Randomized, 0.5)).unwrap();
        let view = DatasetView::all(&ds);
        let cfg = probe_config();
        let par = windowed_accuracy(&view, &cfg, false).unwrap();
        let seq = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| windowed_accuracy(&view, &cfg, false).unwrap());
        assert_eq!(par, seq);
    }

    #[test]
    fn insufficient_class_trials() {
        let (ds, _) = simulate_dataset(&synth(ScheduleMode::Batched, 1.0)).unwrap();
        let view = DatasetView::all(&ds);
        let first_g0 = view.trials.iter().position(|t| t.meta.gas_label == "g0").unwrap();
        let keep = view.trials[first_g0].meta.trial_id.clone();
        let view = view.filter(|t| t.meta.gas_label != "g0" || t.meta.trial_id == keep);
        assert!(matches!(
            windowed_accuracy(&view, &probe_config(), false),
            Err(Error::InsufficientClassTrials { count: 1, .. })
        ));
    }

    #[test]
    fn pca_snapshot_rows() {
        let (ds, _) = simulate_dataset(&synth(ScheduleMode::Batched, 1.0)).unwrap();
        let view = DatasetView::all(&ds);
        let set = WindowSet::extract(&view, &probe_config().window, FeatureMode::Mean).unwrap();
        let snaps = pca_snapshots(&set.compensated().unwrap()).unwrap();
        assert_eq!(snaps.rows.len(), 3 * ds.len());
        assert_eq!(snaps.to_csv().lines().count(), 1 + 3 * ds.len());
    }
}
