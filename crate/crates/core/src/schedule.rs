//! Recording-session detection and gas/time confounding statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, TrialMeta};

pub const DEFAULT_GAP_THRESHOLD_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAssignment {
    pub trial_ids: Vec<String>,
    pub session_ids: Vec<usize>,
    /// Unix seconds, parallel to `trial_ids`.
    pub times: Vec<i64>,
    pub gap_threshold_s: f64,
}

impl SessionAssignment {
    pub fn n_sessions(&self) -> usize {
        self.session_ids.last().map_or(0, |s| s + 1)
    }

    /// `(first, last)` recording time of each session.
    pub fn spans(&self) -> Vec<(i64, i64)> {
        let mut spans = vec![(i64::MAX, i64::MIN); self.n_sessions()];
        for (&s, &t) in self.session_ids.iter().zip(&self.times) {
            spans[s].0 = spans[s].0.min(t);
            spans[s].1 = spans[s].1.max(t);
        }
        spans
    }
}

/// Starts a new session whenever the gap to the previous trial exceeds
/// `gap_threshold_s`. `trials` must be sorted by time.
pub fn detect_sessions(trials: &[TrialMeta], gap_threshold_s: f64) -> SessionAssignment {
    debug_assert!(trials.windows(2).all(|w| w[0].recorded_at <= w[1].recorded_at));
    let times: Vec<i64> = trials.iter().map(TrialMeta::unix_seconds).collect();
    let mut session_ids = Vec::with_capacity(times.len());
    let mut current = 0;
    for (i, t) in times.iter().enumerate() {
        if i > 0 && (t - times[i - 1]) as f64 > gap_threshold_s {
            current += 1;
        }
        session_ids.push(current);
    }
    SessionAssignment {
        trial_ids: trials.iter().map(|m| m.trial_id.clone()).collect(),
        session_ids,
        times,
        gap_threshold_s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerdictThresholds {
    pub batched_min_nmi: f64,
    pub batched_min_purity: f64,
    pub randomized_max_nmi: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            batched_min_nmi: 0.5,
            batched_min_purity: 0.9,
            randomized_max_nmi: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleVerdict {
    RandomizedLike,
    Batched,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStats {
    pub n_sessions: usize,
    pub session_purity: Vec<f64>,
    pub mean_purity: f64,
    pub nmi: f64,
    pub verdict: ScheduleVerdict,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(a; b) / sqrt(H(a) H(b))` with plug-in
/// entropies in nats. Zero when either marginal entropy is zero.
pub fn normalized_mutual_information<A: Ord, B: Ord>(a: &[A], b: &[B]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut ma: BTreeMap<&A, usize> = BTreeMap::new();
    let mut mb: BTreeMap<&B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let ha = entropy(ma.values().copied(), n);
    let hb = entropy(mb.values().copied(), n);
    if ha <= 0.0 || hb <= 0.0 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ma[x] as f64 / n;
            let py = mb[y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

pub fn schedule_stats(
    sessions: &SessionAssignment,
    labels: &[String],
    thresholds: &VerdictThresholds,
) -> Result<ScheduleStats> {
    if labels.len() != sessions.session_ids.len() {
        return Err(Error::LabelMismatch {
            labels: labels.len(),
            trials: sessions.session_ids.len(),
        });
    }
    let n_sessions = sessions.n_sessions();
    let mut per_session: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); n_sessions];
    for (&s, l) in sessions.session_ids.iter().zip(labels) {
        *per_session[s].entry(l.as_str()).or_default() += 1;
    }
    let session_purity: Vec<f64> = per_session
        .iter()
        .map(|counts| {
            let total: usize = counts.values().sum();
            let max = counts.values().copied().max().unwrap_or(0);
            max as f64 / total as f64
        })
        .collect();
    let mean_purity = if n_sessions == 0 {
        0.0
    } else {
        session_purity.iter().sum::<f64>() / n_sessions as f64
    };
    let nmi = normalized_mutual_information(labels, &sessions.session_ids);
    let verdict = if nmi >= thresholds.batched_min_nmi && mean_purity >= thresholds.batched_min_purity {
        ScheduleVerdict::Batched
    } else if nmi <= thresholds.randomized_max_nmi {
        ScheduleVerdict::RandomizedLike
    } else {
        ScheduleVerdict::Mixed
    };
    Ok(ScheduleStats {
        n_sessions,
        session_purity,
        mean_purity,
        nmi,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub gas_label: String,
    pub concentration_ppm: f64,
    pub timestamps: Vec<String>,
}

/// One row per (gas, concentration), sorted by gas then concentration.
pub fn event_plot_data(trials: &[TrialMeta]) -> Vec<EventRow> {
    let mut rows: Vec<EventRow> = Vec::new();
    let mut sorted: Vec<&TrialMeta> = trials.iter().collect();
    sorted.sort_by(|a, b| {
        a.gas_label
            .cmp(&b.gas_label)
            .then(a.concentration_ppm.total_cmp(&b.concentration_ppm))
            .then(a.recorded_at.cmp(&b.recorded_at))
    });
    for m in sorted {
        match rows.last_mut() {
            Some(r) if r.gas_label == m.gas_label && r.concentration_ppm == m.concentration_ppm => {
                r.timestamps.push(format_timestamp(&m.recorded_at))
            }
            _ => rows.push(EventRow {
                gas_label: m.gas_label.clone(),
                concentration_ppm: m.concentration_ppm,
                timestamps: vec![format_timestamp(&m.recorded_at)],
            }),
        }
    }
    rows
}

/// Long-format CSV: one line per trial event.
pub fn event_plot_csv(rows: &[EventRow]) -> String {
    let mut out = String::from("gas,concentration_ppm,recorded_at\n");
    for r in rows {
        for t in &r.timestamps {
            let _ = writeln!(out, "{},{},{}", r.gas_label, r.concentration_ppm, t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub gap_threshold_s: f64,
    #[serde(flatten)]
    pub stats: ScheduleStats,
    pub session_spans: Vec<(String, String)>,
    pub events: Vec<EventRow>,
}

pub fn audit_schedule(
    trials: &[TrialMeta],
    gap_threshold_s: f64,
    thresholds: &VerdictThresholds,
) -> Result<(SessionAssignment, ScheduleReport)> {
    let sessions = detect_sessions(trials, gap_threshold_s);
    let labels: Vec<String> = trials.iter().map(|m| m.gas_label.clone()).collect();
    let stats = schedule_stats(&sessions, &labels, thresholds)?;
    let fmt = |t: i64| {
        chrono::DateTime::from_timestamp(t, 0)
            .map(|d| format_timestamp(&d))
            .unwrap_or_default()
    };
    let session_spans = sessions.spans().into_iter().map(|(a, b)| (fmt(a), fmt(b))).collect();
    let report = ScheduleReport {
        gap_threshold_s,
        stats,
        session_spans,
        events: event_plot_data(trials),
    };
    Ok((sessions, report))
}
