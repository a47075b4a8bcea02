//! Baseline statistics and coefficient-of-variation drift tables.
//!
//! The elementary unit is one `(location, board, sensor)` channel. Its
//! long-term CV is `std / mean` of the trial-wise pre-release means; its
//! short-term CV is the mean over trials of the within-trial `sigma / mu`.
//! Location/board rows average their sensors' unit CVs; sensor rows average
//! over location/board units.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, Dataset, TrialMeta, TrialSeries};
use crate::stats::exact_mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub column: u8,
    pub mu_kohm: f64,
    pub sigma_kohm: f64,
    pub n_samples: usize,
}

/// Mean and population std of each valid sensor over samples with
/// `t < t_release`.
pub fn baseline_stats(trial: &TrialSeries) -> Result<Vec<BaselineStats>> {
    let n_pre = trial.protocol.pre_release_samples();
    trial
        .sensors
        .iter()
        .zip(&trial.values)
        .zip(&trial.validity)
        .filter(|(_, valid)| **valid)
        .map(|((ch, row), _)| {
            if n_pre == 0 {
                return Err(Error::NoValidSamples {
                    trial_id: trial.meta.trial_id.clone(),
                    column: ch.column_index,
                });
            }
            let (mu, sigma) = exact_mean_std(&row[..n_pre]);
            Ok(BaselineStats {
                column: ch.column_index,
                mu_kohm: mu,
                sigma_kohm: sigma,
                n_samples: n_pre,
            })
        })
        .collect()
}

/// `std(mu) / mean(mu)` across trials.
pub fn longterm_cv(mus: &[f64]) -> Result<f64> {
    if mus.len() < 2 {
        return Err(Error::InsufficientTrials {
            needed: 2,
            got: mus.len(),
        });
    }
    let (mean, std) = exact_mean_std(mus);
    if !(mean > 0.0) {
        return Err(Error::ZeroMean(mean));
    }
    Ok(std / mean)
}

/// Mean over trials of `sigma / mu`.
pub fn shortterm_cv(stats: &[BaselineStats]) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::InsufficientTrials { needed: 1, got: 0 });
    }
    let mut ratios = Vec::with_capacity(stats.len());
    for s in stats {
        if !(s.mu_kohm > 0.0) {
            return Err(Error::ZeroMean(s.mu_kohm));
        }
        ratios.push(s.sigma_kohm / s.mu_kohm);
    }
    Ok(exact_mean_std(&ratios).0)
}

/// Trial selection for drift tables. `None` fields match everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvFilters {
    pub fan_speed_mps: Option<f64>,
    pub heater_voltage_v: Option<f64>,
    pub gases: Option<BTreeSet<String>>,
    pub sensor_columns: Option<BTreeSet<u8>>,
}

impl Default for CvFilters {
    /// 0.21 m/s, 6 V, sensors 2 to 8, all gases.
    fn default() -> Self {
        Self {
            fan_speed_mps: Some(0.21),
            heater_voltage_v: Some(6.0),
            gases: None,
            sensor_columns: Some((2..=8).collect()),
        }
    }
}

impl CvFilters {
    pub fn all() -> Self {
        Self {
            fan_speed_mps: None,
            heater_voltage_v: None,
            gases: None,
            sensor_columns: None,
        }
    }

    pub fn matches(&self, m: &TrialMeta) -> bool {
        let close = |want: Option<f64>, got: f64| want.is_none_or(|w| (w - got).abs() < 1e-6);
        close(self.fan_speed_mps, m.fan_speed_mps)
            && close(self.heater_voltage_v, m.heater_voltage_v)
            && self.gases.as_ref().is_none_or(|g| g.contains(&m.gas_label))
    }

    pub fn column(&self, c: u8) -> bool {
        self.sensor_columns.as_ref().is_none_or(|s| s.contains(&c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRecord {
    pub trial_index: usize,
    pub location: u32,
    pub board: u32,
    pub stats: BaselineStats,
}

/// Baseline statistics of every filtered trial and valid sensor, in manifest
/// order.
pub fn baseline_table(dataset: &Dataset, filters: &CvFilters) -> Result<Vec<BaselineRecord>> {
    let per_trial: Vec<Vec<BaselineRecord>> = dataset
        .trials
        .par_iter()
        .enumerate()
        .filter(|(_, t)| filters.matches(&t.meta))
        .map(|(i, t)| {
            Ok(baseline_stats(t)?
                .into_iter()
                .filter(|s| filters.column(s.column))
                .map(|stats| BaselineRecord {
                    trial_index: i,
                    location: t.meta.location_index,
                    board: t.meta.board_index,
                    stats,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    LocationBoard,
    SensorColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupKey {
    LocationBoard { location: u32, board: u32 },
    Sensor(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub key: GroupKey,
    pub cv_longterm: f64,
    pub cv_shortterm: f64,
    pub n_trials: usize,
    /// Number of `(location, board, sensor)` units averaged into the row.
    pub n_units: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct UnitCv {
    location: u32,
    board: u32,
    column: u8,
    longterm: f64,
    shortterm: f64,
    n_trials: usize,
}

fn unit_cvs(records: &[BaselineRecord]) -> Result<Vec<UnitCv>> {
    let mut units: BTreeMap<(u32, u32, u8), Vec<BaselineStats>> = BTreeMap::new();
    for r in records {
        units.entry((r.location, r.board, r.stats.column)).or_default().push(r.stats);
    }
    units
        .into_iter()
        .map(|((location, board, column), stats)| {
            let mus: Vec<f64> = stats.iter().map(|s| s.mu_kohm).collect();
            Ok(UnitCv {
                location,
                board,
                column,
                longterm: longterm_cv(&mus)?,
                shortterm: shortterm_cv(&stats)?,
                n_trials: stats.len(),
            })
        })
        .collect()
}

pub fn cv_rows(records: &[BaselineRecord], group_by: GroupBy) -> Result<Vec<CvRow>> {
    if records.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut groups: BTreeMap<GroupKey, Vec<UnitCv>> = BTreeMap::new();
    for u in unit_cvs(records)? {
        let key = match group_by {
            GroupBy::LocationBoard => GroupKey::LocationBoard {
                location: u.location,
                board: u.board,
            },
            GroupBy::SensorColumn => GroupKey::Sensor(u.column),
        };
        groups.entry(key).or_default().push(u);
    }
    Ok(groups
        .into_iter()
        .map(|(key, units)| {
            let lt: Vec<f64> = units.iter().map(|u| u.longterm).collect();
            let st: Vec<f64> = units.iter().map(|u| u.shortterm).collect();
            CvRow {
                key,
                cv_longterm: exact_mean_std(&lt).0,
                cv_shortterm: exact_mean_std(&st).0,
                n_trials: match group_by {
                    GroupBy::LocationBoard => units.iter().map(|u| u.n_trials).max().unwrap_or(0),
                    GroupBy::SensorColumn => units.iter().map(|u| u.n_trials).sum(),
                },
                n_units: units.len(),
            }
        })
        .collect())
}

pub fn cv_map(dataset: &Dataset, group_by: GroupBy, filters: &CvFilters) -> Result<Vec<CvRow>> {
    cv_rows(&baseline_table(dataset, filters)?, group_by)
}

/// Both groupings plus the per-trial baselines they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTables {
    pub baselines: Vec<BaselineRecord>,
    pub by_location_board: Vec<CvRow>,
    pub by_sensor: Vec<CvRow>,
}

pub fn drift_tables(dataset: &Dataset, filters: &CvFilters) -> Result<DriftTables> {
    let baselines = baseline_table(dataset, filters)?;
    Ok(DriftTables {
        by_location_board: cv_rows(&baselines, GroupBy::LocationBoard)?,
        by_sensor: cv_rows(&baselines, GroupBy::SensorColumn)?,
        baselines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvKind {
    Longterm,
    Shortterm,
}

/// Long-format table keyed by location/board and by sensor column.
pub fn cv_csv(tables: &DriftTables, kind: CvKind) -> String {
    let mut out = String::from("group,location,board,sensor,cv,n_trials,n_units\n");
    let value = |r: &CvRow| match kind {
        CvKind::Longterm => r.cv_longterm,
        CvKind::Shortterm => r.cv_shortterm,
    };
    for r in tables.by_location_board.iter().chain(&tables.by_sensor) {
        let _ = match r.key {
            GroupKey::LocationBoard { location, board } => writeln!(
                out,
                "location_board,{location},{board},,{},{},{}",
                value(r),
                r.n_trials,
                r.n_units
            ),
            GroupKey::Sensor(c) => writeln!(out, "sensor,,,{c},{},{},{}", value(r), r.n_trials, r.n_units),
        };
    }
    out
}

/// Location x board grid; empty cells for units without data.
pub fn cv_grid_csv(tables: &DriftTables, kind: CvKind) -> String {
    let mut cells: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for r in &tables.by_location_board {
        if let GroupKey::LocationBoard { location, board } = r.key {
            let v = match kind {
                CvKind::Longterm => r.cv_longterm,
                CvKind::Shortterm => r.cv_shortterm,
            };
            cells.insert((location, board), v);
        }
    }
    let locations: BTreeSet<u32> = cells.keys().map(|k| k.0).collect();
    let boards: BTreeSet<u32> = cells.keys().map(|k| k.1).collect();
    let mut out = String::from("location");
    for b in &boards {
        let _ = write!(out, ",board_{b}");
    }
    out.push('\n');
    for l in &locations {
        let _ = write!(out, "{l}");
        for b in &boards {
            match cells.get(&(*l, *b)) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Trial timestamp against per-sensor baseline mean.
pub fn baseline_timeline_csv(dataset: &Dataset, baselines: &[BaselineRecord]) -> String {
    let mut out = String::from("trial_id,recorded_at,gas,location,board,sensor,baseline_kohm\n");
    for r in baselines {
        let m = &dataset.trials[r.trial_index].meta;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.trial_id,
            format_timestamp(&m.recorded_at),
            m.gas_label,
            r.location,
            r.board,
            r.stats.column,
            r.stats.mu_kohm
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::testutil::constant_trial;
    use crate::ingest::Protocol;
    use crate::stats::spearman;
    use crate::synth::{simulate_dataset, GasSpec, ScheduleMode, SynthConfig};

    fn small() -> Protocol {
        Protocol {
            sample_rate_hz: 10.0,
            t_release_s: 2.0,
            t_off_s: 3.0,
            duration_s: 4.0,
        }
    }

    fn synth(longterm: f64, shortterm: f64, noise: f64) -> SynthConfig {
        SynthConfig {
            gases: (0..4)
                .map(|g| GasSpec {
                    label: format!("g{g}"),
                    concentration_ppm: 10.0,
                    amplitude_kohm: Vec::new(),
                })
                .collect(),
            trials_per_gas: 5,
            longterm_step_sigma: longterm,
            shortterm_slope_sigma: shortterm,
            noise_sigma: noise,
            protocol: Protocol {
                sample_rate_hz: 20.0,
                t_release_s: 5.0,
                t_off_s: 8.0,
                duration_s: 10.0,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn constant_baseline() {
        let t = constant_trial("a", "g", 10, 2, 5.0, small());
        let s = baseline_stats(&t).unwrap();
        assert_eq!((s[0].mu_kohm, s[0].sigma_kohm, s[0].n_samples), (5.0, 0.0, 20));
    }

    #[test]
    fn two_point_baseline() {
        let p = Protocol {
            sample_rate_hz: 1.0,
            t_release_s: 2.0,
            t_off_s: 3.0,
            duration_s: 4.0,
        };
        let mut t = constant_trial("a", "g", 10, 1, 0.0, p);
        t.values[0] = vec![1.0, 3.0, 100.0, 100.0];
        let s = baseline_stats(&t).unwrap();
        assert_eq!((s[0].mu_kohm, s[0].sigma_kohm), (2.0, 1.0));
    }

    #[test]
    fn no_pre_release_samples() {
        let p = Protocol {
            t_release_s: 0.0,
            ..small()
        };
        let t = constant_trial("a", "g", 10, 1, 1.0, p);
        assert!(matches!(baseline_stats(&t), Err(Error::NoValidSamples { .. })));
    }

    #[test]
    fn ramp_baseline_matches_grid_closed_form() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            shortterm_slope_sigma: 0.05,
            ..synth(1.0, 0.05, 0.0)
        };
        let (ds, trace) = simulate_dataset(&cfg).unwrap();
        let rate = cfg.protocol.sample_rate_hz;
        let n = cfg.protocol.pre_release_samples() as f64;
        let truth: BTreeMap<(&str, u8), _> = trace
            .entries
            .iter()
            .map(|e| ((e.trial_id.as_str(), e.column), e))
            .collect();
        for trial in &ds.trials {
            for s in baseline_stats(trial).unwrap() {
                let e = truth[&(trial.meta.trial_id.as_str(), s.column)];
                let b = e.baseline_kohm;
                let m = e.slope_kohm_per_s;
                let mu = b + m * (n - 1.0) / (2.0 * rate);
                assert!((s.mu_kohm - mu).abs() < 1e-6);
                let sigma = m.abs() / rate * ((n * n - 1.0) / 12.0).sqrt();
                assert!((s.sigma_kohm / s.mu_kohm - sigma / mu).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn longterm_examples() {
        assert_eq!(longterm_cv(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(longterm_cv(&[1.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(longterm_cv(&[1.0]), Err(Error::InsufficientTrials { .. })));
        assert!(matches!(longterm_cv(&[-1.0, 1.0]), Err(Error::ZeroMean(_))));
    }

    #[test]
    fn shortterm_examples() {
        let st = |mu, sigma| BaselineStats {
            column: 2,
            mu_kohm: mu,
            sigma_kohm: sigma,
            n_samples: 10,
        };
        assert_eq!(shortterm_cv(&[st(2.0, 0.0), st(3.0, 0.0)]).unwrap(), 0.0);
        assert_eq!(shortterm_cv(&[st(2.0, 1.0), st(4.0, 1.0)]).unwrap(), 0.375);
        assert!(matches!(shortterm_cv(&[st(0.0, 1.0)]), Err(Error::ZeroMean(_))));
    }

    #[test]
    fn zero_drift_gives_zero_tables() {
        let (ds, _) = simulate_dataset(&synth(0.0, 0.0, 0.0)).unwrap();
        let tables = drift_tables(&ds, &CvFilters::default()).unwrap();
        for r in tables.by_location_board.iter().chain(&tables.by_sensor) {
            assert_eq!((r.cv_longterm, r.cv_shortterm), (0.0, 0.0));
        }
        assert_eq!(tables.by_sensor.len(), 7);
    }

    #[test]
    fn most_drifting_sensor_found() {
        let mut scale = vec![1.0; 8];
        scale[3] = 10.0;
        let cfg = SynthConfig {
            sensor_drift_scale: scale,
            session_size: Some(1),
            ..synth(0.5, 0.0, 0.05)
        };
        let (ds, _) = simulate_dataset(&cfg).unwrap();
        let rows = cv_map(&ds, GroupBy::SensorColumn, &CvFilters::default()).unwrap();
        let worst = rows
            .iter()
            .max_by(|a, b| a.cv_longterm.total_cmp(&b.cv_longterm))
            .unwrap();
        assert_eq!(worst.key, GroupKey::Sensor(4), "{rows:?}");
    }

    #[test]
    fn no_match_is_empty_group() {
        let (ds, _) = simulate_dataset(&synth(0.0, 0.0, 0.0)).unwrap();
        let filters = CvFilters {
            fan_speed_mps: Some(0.34),
            ..CvFilters::default()
        };
        assert!(matches!(
            cv_map(&ds, GroupBy::LocationBoard, &filters),
            Err(Error::EmptyGroup)
        ));
    }

    #[test]
    fn scale_invariance() {
        let (ds, _) = simulate_dataset(&synth(1.0, 0.01, 0.1)).unwrap();
        let a = cv_map(&ds, GroupBy::SensorColumn, &CvFilters::default()).unwrap();
        let b = cv_map(&ds.scaled(7.3), GroupBy::SensorColumn, &CvFilters::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.cv_longterm - y.cv_longterm).abs() <= 1e-12 * x.cv_longterm.max(1e-300));
            assert!((x.cv_shortterm - y.cv_shortterm).abs() <= 1e-12 * x.cv_shortterm.max(1e-300));
        }
    }

    #[test]
    fn duplicate_trial_keeps_mean() {
        let mus = [3.0, 5.0, 9.0];
        let with_dup = [3.0, 5.0, 9.0, 17.0 / 3.0];
        let m = |x: &[f64]| exact_mean_std(x).0;
        assert!((m(&mus) - m(&with_dup)).abs() < 1e-12);
    }

    #[test]
    fn longterm_cv_monotone_in_step_sigma() {
        let sigmas = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
        let cvs: Vec<f64> = sigmas
            .iter()
            .map(|&s| {
                let cfg = SynthConfig {
                    schedule_mode: ScheduleMode::Batched,
                    ..synth(s, 0.0, 0.05)
                };
                let (ds, _) = simulate_dataset(&cfg).unwrap();
                let rows = cv_map(&ds, GroupBy::LocationBoard, &CvFilters::default()).unwrap();
                rows[0].cv_longterm
            })
            .collect();
        assert!((spearman(&sigmas, &cvs) - 1.0).abs() < 1e-12, "{cvs:?}");
    }

    #[test]
    fn csv_shapes() {
        let (ds, _) = simulate_dataset(&synth(1.0, 0.0, 0.1)).unwrap();
        let tables = drift_tables(&ds, &CvFilters::default()).unwrap();
        assert_eq!(cv_csv(&tables, CvKind::Longterm).lines().count(), 1 + 1 + 7);
        assert_eq!(cv_grid_csv(&tables, CvKind::Shortterm).lines().count(), 2);
        assert_eq!(
            baseline_timeline_csv(&ds, &tables.baselines).lines().count(),
            1 + ds.len() * 7
        );
    }
}
