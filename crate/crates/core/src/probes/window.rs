//! Window snapshots of the resampled trials.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::DatasetView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub width_s: f64,
    pub start_times_s: Vec<f64>,
}

impl Default for WindowSpec {
    /// 100 ms windows starting every 5 s from 0 to 60 s.
    fn default() -> Self {
        Self {
            width_s: 0.1,
            start_times_s: (0..=12).map(|k| 5.0 * f64::from(k)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// One feature per sensor: the window-mean resistance.
    #[default]
    Mean,
    /// Every window sample of every sensor, concatenated per sensor.
    Raw,
}

/// Column span of one sensor in a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpan {
    pub column: u8,
    pub offset: usize,
    pub len: usize,
}

/// Row-major `[n_rows x n_cols]` matrix with one row per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
    pub trial_ids: Vec<String>,
    pub labels: Vec<String>,
    pub window_start_s: f64,
    pub compensated: bool,
    pub layout: Vec<FeatureSpan>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::NonFiniteFeature {
                row: k / self.n_cols,
                col: k % self.n_cols,
            }),
            None => Ok(()),
        }
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.layout == other.layout
            && self.trial_ids == other.trial_ids
    }
}

/// Sensor columns valid in every trial of the view.
pub fn common_columns(view: &DatasetView<'_>) -> Result<Vec<u8>> {
    let mut common: Option<BTreeSet<u8>> = None;
    for t in &view.trials {
        let cols: BTreeSet<u8> = t.valid_columns().filter(|c| view.includes_column(*c)).collect();
        common = Some(match common {
            None => cols,
            Some(c) => c.intersection(&cols).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    if common.is_empty() {
        return Err(Error::EmptySelection("no sensor column is valid in every trial".into()));
    }
    Ok(common.into_iter().collect())
}

/// Sample index range `[start, start + len)` of the window at `start_s`.
fn window_range(view: &DatasetView<'_>, start_s: f64, width_s: f64) -> Result<(usize, usize)> {
    let p = view.trials[0].protocol;
    let len = (width_s * p.sample_rate_hz).round() as usize;
    let end_s = start_s + width_s;
    let start = p.index_of(start_s);
    let out_of_range = || Error::WindowOutOfRange {
        start: start_s,
        end: end_s,
        duration: p.duration_s,
    };
    if len == 0 || start_s < 0.0 || !start_s.is_finite() || !width_s.is_finite() {
        return Err(out_of_range());
    }
    for t in &view.trials {
        if t.protocol.sample_rate_hz != p.sample_rate_hz {
            return Err(Error::LayoutMismatch(format!(
                "{}: sample rate {} differs from {}",
                t.meta.trial_id, t.protocol.sample_rate_hz, p.sample_rate_hz
            )));
        }
        if start + len > t.n_samples() {
            return Err(out_of_range());
        }
    }
    Ok((start, len))
}

pub fn window_features(view: &DatasetView<'_>, start_s: f64, width_s: f64, mode: FeatureMode) -> Result<FeatureMatrix> {
    if view.trials.is_empty() {
        return Err(Error::EmptySelection("no trials".into()));
    }
    let columns = common_columns(view)?;
    let (start, len) = window_range(view, start_s, width_s)?;
    let per_sensor = match mode {
        FeatureMode::Mean => 1,
        FeatureMode::Raw => len,
    };
    let layout: Vec<FeatureSpan> = columns
        .iter()
        .enumerate()
        .map(|(k, &column)| FeatureSpan {
            column,
            offset: k * per_sensor,
            len: per_sensor,
        })
        .collect();
    let n_cols = columns.len() * per_sensor;
    let mut data = Vec::with_capacity(view.trials.len() * n_cols);
    for t in &view.trials {
        for &c in &columns {
            let row = &t.values[t.channel(c).expect("common column present")][start..start + len];
            match mode {
                FeatureMode::Mean => data.push(row.iter().sum::<f64>() / len as f64),
                FeatureMode::Raw => data.extend_from_slice(row),
            }
        }
    }
    let fm = FeatureMatrix {
        data,
        n_rows: view.trials.len(),
        n_cols,
        trial_ids: view.trials.iter().map(|t| t.meta.trial_id.clone()).collect(),
        labels: view.trials.iter().map(|t| t.meta.gas_label.clone()).collect(),
        window_start_s: start_s,
        compensated: false,
        layout,
    };
    fm.check_finite()?;
    Ok(fm)
}

/// `features - reference`, elementwise per trial and feature.
pub fn zero_offset_subtract(features: &FeatureMatrix, reference: &FeatureMatrix) -> Result<FeatureMatrix> {
    if !features.same_layout(reference) {
        return Err(Error::LayoutMismatch(format!(
            "window {} s vs reference window {} s",
            features.window_start_s, reference.window_start_s
        )));
    }
    let mut out = features.clone();
    for (v, r) in out.data.iter_mut().zip(&reference.data) {
        *v -= r;
    }
    out.compensated = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::testutil::constant_trial;
    use crate::ingest::{Dataset, Protocol};

    fn protocol() -> Protocol {
        Protocol {
            sample_rate_hz: 100.0,
            t_release_s: 20.0,
            t_off_s: 25.0,
            duration_s: 30.0,
        }
    }

    fn ramp_dataset(slopes: &[f64]) -> Dataset {
        let p = protocol();
        let trials = slopes
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let mut t = constant_trial(&format!("t{i}"), if i % 2 == 0 { "a" } else { "b" }, i as i64, 8, 0.0, p);
                for (s, row) in t.values.iter_mut().enumerate() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = 10.0 + s as f64 + m * p.time_of(k);
                    }
                }
                t
            })
            .collect();
        Dataset::from_trials(trials, Vec::new(), Default::default()).unwrap()
    }

    #[test]
    fn constant_trial_mean_feature() {
        let ds = Dataset::from_trials(
            vec![constant_trial("a", "g", 0, 3, 4.5, protocol())],
            Vec::new(),
            Default::default(),
        )
        .unwrap();
        let view = DatasetView::all(&ds);
        for t in [0.0, 7.3, 29.9] {
            let fm = window_features(&view, t, 0.1, FeatureMode::Mean).unwrap();
            assert!(fm.data.iter().all(|v| *v == 4.5));
        }
    }

    #[test]
    fn raw_mode_counts_samples() {
        let ds = ramp_dataset(&[0.1, 0.2]);
        let view = DatasetView::all(&ds).with_columns((2..=8).collect());
        let fm = window_features(&view, 5.0, 0.1, FeatureMode::Raw).unwrap();
        assert_eq!((fm.n_rows, fm.n_cols), (2, 70));
        assert_eq!(fm.layout[6], FeatureSpan { column: 8, offset: 60, len: 10 });
    }

    #[test]
    fn mean_mode_is_raw_mode_averaged() {
        let ds = ramp_dataset(&[0.013, -0.07, 0.5]);
        let view = DatasetView::all(&ds);
        for t in [0.0, 3.3, 12.0] {
            let mean = window_features(&view, t, 0.1, FeatureMode::Mean).unwrap();
            let raw = window_features(&view, t, 0.1, FeatureMode::Raw).unwrap();
            for i in 0..mean.n_rows {
                for span in &raw.layout {
                    let samples = &raw.row(i)[span.offset..span.offset + span.len];
                    let avg = samples.iter().sum::<f64>() / span.len as f64;
                    let k = mean.layout.iter().position(|s| s.column == span.column).unwrap();
                    assert_eq!(mean.row(i)[k], avg);
                }
            }
        }
    }

    #[test]
    fn window_bounds() {
        let ds = ramp_dataset(&[0.0]);
        let view = DatasetView::all(&ds);
        assert!(window_features(&view, 29.9, 0.1, FeatureMode::Mean).is_ok());
        for (t, w) in [(29.95, 0.1), (-1.0, 0.1), (0.0, 0.001)] {
            assert!(matches!(
                window_features(&view, t, w, FeatureMode::Mean),
                Err(Error::WindowOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn compensated_ramp_is_slope_times_start() {
        let slopes = [0.013, -0.07, 0.5];
        let ds = ramp_dataset(&slopes);
        let view = DatasetView::all(&ds);
        let reference = window_features(&view, 0.0, 0.1, FeatureMode::Mean).unwrap();
        let zero = zero_offset_subtract(&reference, &reference).unwrap();
        assert!(zero.compensated && zero.data.iter().all(|v| *v == 0.0));
        for t in [5.0, 10.0, 15.0] {
            let fm = window_features(&view, t, 0.1, FeatureMode::Mean).unwrap();
            let comp = zero_offset_subtract(&fm, &reference).unwrap();
            for (i, m) in slopes.iter().enumerate() {
                for v in comp.row(i) {
                    assert!((v - m * t).abs() < 1e-9, "{v} vs {}", m * t);
                }
            }
        }
    }

    #[test]
    fn compensation_ignores_trial_constant_offsets() {
        let ds = ramp_dataset(&[0.02, 0.3]);
        let mut shifted = ds.clone();
        for (i, t) in shifted.trials.iter_mut().enumerate() {
            for row in &mut t.values {
                for v in row.iter_mut() {
                    *v += 2.0f64.powi(i as i32 + 1);
                }
            }
        }
        let comp = |d: &Dataset| {
            let v = DatasetView::all(d);
            let r = window_features(&v, 0.0, 0.1, FeatureMode::Raw).unwrap();
            let f = window_features(&v, 12.0, 0.1, FeatureMode::Raw).unwrap();
            zero_offset_subtract(&f, &r).unwrap()
        };
        let (a, b) = (comp(&ds), comp(&shifted));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_mismatch() {
        let ds = ramp_dataset(&[0.1, 0.2]);
        let view = DatasetView::all(&ds);
        let a = window_features(&view, 0.0, 0.1, FeatureMode::Mean).unwrap();
        let b = window_features(&view, 0.0, 0.1, FeatureMode::Raw).unwrap();
        assert!(matches!(zero_offset_subtract(&a, &b), Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn invalid_channels_dropped_from_layout() {
        let mut ds = ramp_dataset(&[0.1, 0.2]);
        ds.trials[1].validity[2] = false;
        let fm = window_features(&DatasetView::all(&ds), 0.0, 0.1, FeatureMode::Mean).unwrap();
        assert_eq!(fm.n_cols, 7);
        assert!(fm.layout.iter().all(|s| s.column != 3));
    }
}
