//! Synthetic multi-sensor datasets with known drift.
//!
//! Each board sensor follows
//!
//! ```text
//! R(t) = B + m t + A g(t) + e(t)
//! ```
//!
//! where `B` is a per-session baseline random walk (long-term drift), `m` a
//! per-trial within-trial slope (short-term drift), `A g(t)` a first-order
//! rise/decay gas response and `e` white noise. Random streams are keyed by
//! `(seed, purpose, trial, board, sensor)` so trials can be simulated in any
//! order and on any number of threads with identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    default_model_name, parse_timestamp, store, Dataset, Protocol, SensorChannel, TrialMeta, TrialSeries,
};
use crate::rng;

const STREAM_SCHEDULE: u64 = 1;
const STREAM_LONGTERM: u64 = 2;
const STREAM_SLOPE: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_GAS_OFFSET: u64 = 5;

pub const TRACE_FILE: &str = "drift_trace.csv";
pub const CONFIG_FILE: &str = "synth_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasSpec {
    pub label: String,
    #[serde(default = "default_concentration")]
    pub concentration_ppm: f64,
    /// Response amplitude per sensor (kΩ). Empty: a deterministic default.
    #[serde(default)]
    pub amplitude_kohm: Vec<f64>,
}

fn default_concentration() -> f64 {
    100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Batched,
    Randomized,
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub gases: Vec<GasSpec>,
    pub n_sensors: u8,
    /// Board indices; one trial file is written per recording and board.
    pub boards: Vec<u32>,
    /// Multiplier on both drift sigmas per board. Empty: all 1.
    pub board_drift_scale: Vec<f64>,
    /// Multiplier on both drift sigmas per sensor. Empty: all 1.
    pub sensor_drift_scale: Vec<f64>,
    pub location_index: u32,
    pub fan_speed_mps: f64,
    pub heater_voltage_v: f64,
    pub trials_per_gas: usize,
    pub schedule_mode: ScheduleMode,
    /// Trials per recording session. `None`: `trials_per_gas`.
    pub session_size: Option<usize>,
    pub start_time: String,
    pub inter_trial_gap_s: f64,
    pub inter_session_gap_s: f64,
    /// Initial baseline per sensor (kΩ). Empty: a deterministic default.
    pub baseline_mean0: Vec<f64>,
    /// Std of the baseline step at each session boundary (kΩ).
    pub longterm_step_sigma: f64,
    /// Std of the per-trial baseline slope (kΩ/s).
    pub shortterm_slope_sigma: f64,
    pub couple_shortterm_to_gas: bool,
    /// Std of the per-(gas, sensor) slope offset when coupling is on (kΩ/s).
    pub shortterm_gas_offset_sigma: f64,
    pub noise_sigma: f64,
    pub response_tau_s: f64,
    pub protocol: Protocol,
    pub seed: u64,
}

/// Gases of the reference campaign, with representative concentrations.
pub const DEFAULT_GASES: [(&str, f64); 10] = [
    ("Acetaldehyde", 500.0),
    ("Acetone", 2500.0),
    ("Ammonia", 10000.0),
    ("Benzene", 200.0),
    ("Butanol", 100.0),
    ("CO", 4000.0),
    ("Ethylene", 500.0),
    ("Methane", 1000.0),
    ("Methanol", 200.0),
    ("Toluene", 200.0),
];

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gases: DEFAULT_GASES
                .iter()
                .map(|(l, c)| GasSpec {
                    label: l.to_string(),
                    concentration_ppm: *c,
                    amplitude_kohm: Vec::new(),
                })
                .collect(),
            n_sensors: 8,
            boards: vec![5],
            board_drift_scale: Vec::new(),
            sensor_drift_scale: Vec::new(),
            location_index: 4,
            fan_speed_mps: 0.21,
            heater_voltage_v: 6.0,
            trials_per_gas: 20,
            schedule_mode: ScheduleMode::Batched,
            session_size: None,
            start_time: "2011-01-01T00:00:00Z".into(),
            inter_trial_gap_s: 600.0,
            inter_session_gap_s: 7.0 * 86_400.0,
            baseline_mean0: Vec::new(),
            longterm_step_sigma: 1.0,
            shortterm_slope_sigma: 0.002,
            couple_shortterm_to_gas: false,
            shortterm_gas_offset_sigma: 0.0,
            noise_sigma: 0.2,
            response_tau_s: 10.0,
            protocol: Protocol::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("synth: {m}")));
        self.protocol.validate()?;
        if self.gases.is_empty() {
            return bad("at least one gas required".into());
        }
        if self.n_sensors == 0 || self.boards.is_empty() {
            return bad("need at least one sensor and one board".into());
        }
        if self.trials_per_gas < 1 || self.session_size == Some(0) {
            return bad("trials_per_gas and session_size must be >= 1".into());
        }
        let sigmas = [
            self.longterm_step_sigma,
            self.shortterm_slope_sigma,
            self.shortterm_gas_offset_sigma,
            self.noise_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sigmas must be finite and >= 0".into());
        }
        if !(self.response_tau_s > 0.0) || !(self.inter_trial_gap_s > 0.0) || !(self.inter_session_gap_s > 0.0) {
            return bad("response_tau_s and gaps must be positive".into());
        }
        let n = usize::from(self.n_sensors);
        for g in &self.gases {
            if !g.amplitude_kohm.is_empty() && g.amplitude_kohm.len() != n {
                return bad(format!("gas {} amplitude length != n_sensors", g.label));
            }
            if !(g.concentration_ppm > 0.0) {
                return bad(format!("gas {} concentration must be positive", g.label));
            }
        }
        let mut labels: Vec<&str> = self.gases.iter().map(|g| g.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate gas labels".into());
        }
        for (name, v, len) in [
            ("baseline_mean0", &self.baseline_mean0, n),
            ("sensor_drift_scale", &self.sensor_drift_scale, n),
            ("board_drift_scale", &self.board_drift_scale, self.boards.len()),
        ] {
            if !v.is_empty() && v.len() != len {
                return bad(format!("{name} has {} entries, expected {len}", v.len()));
            }
        }
        if self.baseline_mean0.iter().any(|b| !(*b > 0.0)) {
            return bad("baseline_mean0 must be positive".into());
        }
        parse_timestamp(&self.start_time)?;
        Ok(())
    }

    fn baseline0(&self, sensor: usize) -> f64 {
        self.baseline_mean0
            .get(sensor)
            .copied()
            .unwrap_or(20.0 + 10.0 * ((sensor * 3) % 7) as f64)
    }

    fn amplitude(&self, gas: usize, sensor: usize) -> f64 {
        match self.gases[gas].amplitude_kohm.get(sensor) {
            Some(a) => *a,
            // MOx resistance drops under reducing gases.
            None => -self.baseline0(sensor) * (0.2 + 0.06 * ((gas * 7 + sensor * 3) % 10) as f64),
        }
    }

    fn drift_scale(&self, board_pos: usize, sensor: usize) -> f64 {
        self.board_drift_scale.get(board_pos).copied().unwrap_or(1.0)
            * self.sensor_drift_scale.get(sensor).copied().unwrap_or(1.0)
    }

    fn session_size(&self) -> usize {
        self.session_size.unwrap_or(self.trials_per_gas)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub gas_index: usize,
    pub gas_label: String,
    pub repetition: u32,
    pub recorded_at: DateTime<Utc>,
    pub session_id: usize,
}

/// Orders trials and assigns recording times and ground-truth sessions.
///
/// A new session starts every `session_size` trials and, in batched mode,
/// at every change of gas. Trials within a session are `inter_trial_gap_s`
/// apart; sessions are separated by `inter_session_gap_s`.
pub fn generate_schedule(config: &SynthConfig, seed: u64) -> Result<Vec<ScheduleEntry>> {
    config.validate()?;
    let n_gas = config.gases.len();
    let reps = config.trials_per_gas;
    let order: Vec<usize> = match config.schedule_mode {
        ScheduleMode::Batched => (0..n_gas).flat_map(|g| std::iter::repeat_n(g, reps)).collect(),
        ScheduleMode::Interleaved => (0..reps).flat_map(|_| 0..n_gas).collect(),
        ScheduleMode::Randomized => {
            let mut o: Vec<usize> = (0..n_gas).flat_map(|g| std::iter::repeat_n(g, reps)).collect();
            o.shuffle(&mut rng::stream(seed, &[STREAM_SCHEDULE]));
            o
        }
    };
    let start = parse_timestamp(&config.start_time)?.timestamp();
    let trial_gap = config.inter_trial_gap_s.round().max(1.0) as i64;
    let session_gap = config.inter_session_gap_s.round().max(1.0) as i64;
    let size = config.session_size();
    let mut seen = vec![0u32; n_gas];
    let mut t = start;
    let mut session = 0;
    let mut out = Vec::with_capacity(order.len());
    for (i, &g) in order.iter().enumerate() {
        if i > 0 {
            let gas_change = config.schedule_mode == ScheduleMode::Batched && order[i - 1] != g;
            if i % size == 0 || gas_change {
                session += 1;
                t += session_gap;
            } else {
                t += trial_gap;
            }
        }
        seen[g] += 1;
        out.push(ScheduleEntry {
            gas_index: g,
            gas_label: config.gases[g].label.clone(),
            repetition: seen[g],
            recorded_at: Utc.timestamp_opt(t, 0).single().ok_or_else(|| {
                Error::InvalidConfig(format!("synth: timestamp {t} out of range"))
            })?,
            session_id: session,
        });
    }
    Ok(out)
}

/// Ground-truth drift of one trial on one board.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDrift {
    pub baseline_kohm: Vec<f64>,
    pub slope_kohm_per_s: Vec<f64>,
}

/// Baseline random walk: `walk[session][board_pos][sensor]`.
fn session_baselines(config: &SynthConfig, n_sessions: usize) -> Vec<Vec<Vec<f64>>> {
    let n_s = usize::from(config.n_sensors);
    let mut walk = vec![vec![vec![0.0; n_s]; config.boards.len()]; n_sessions];
    for b in 0..config.boards.len() {
        for s in 0..n_s {
            let sigma = config.longterm_step_sigma * config.drift_scale(b, s);
            let mut stream = rng::stream(config.seed, &[STREAM_LONGTERM, b as u64, s as u64]);
            let step = Normal::new(0.0, 1.0).expect("unit normal");
            let mut level = config.baseline0(s);
            for (k, session) in walk.iter_mut().enumerate() {
                if k > 0 && sigma > 0.0 {
                    level += sigma * step.sample(&mut stream);
                }
                session[b][s] = level;
            }
        }
    }
    walk
}

fn gas_slope_offset(config: &SynthConfig, gas: usize, board_pos: usize, sensor: usize) -> f64 {
    if !config.couple_shortterm_to_gas || config.shortterm_gas_offset_sigma == 0.0 {
        return 0.0;
    }
    let mut stream = rng::stream(config.seed, &[STREAM_GAS_OFFSET, gas as u64, sensor as u64]);
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut stream);
    z * config.shortterm_gas_offset_sigma * config.drift_scale(board_pos, sensor)
}

fn sample_trial_drift(
    config: &SynthConfig,
    trial_index: usize,
    entry: &ScheduleEntry,
    board_pos: usize,
    walk: &[Vec<Vec<f64>>],
) -> TrialDrift {
    let n_s = usize::from(config.n_sensors);
    let slope = (0..n_s)
        .map(|s| {
            let mean = gas_slope_offset(config, entry.gas_index, board_pos, s);
            let sigma = config.shortterm_slope_sigma * config.drift_scale(board_pos, s);
            if sigma == 0.0 {
                return mean;
            }
            let mut stream = rng::stream(
                config.seed,
                &[STREAM_SLOPE, trial_index as u64, board_pos as u64, s as u64],
            );
            mean + sigma * Normal::new(0.0, 1.0).expect("unit normal").sample(&mut stream)
        })
        .collect();
    TrialDrift {
        baseline_kohm: walk[entry.session_id][board_pos].clone(),
        slope_kohm_per_s: slope,
    }
}

/// First-order gas response in `[0, 1]`: zero before release, rising with
/// time constant `tau` until `t_off`, then decaying from the level reached.
pub fn response_shape(t: f64, protocol: &Protocol, tau: f64) -> f64 {
    if t < protocol.t_release_s {
        0.0
    } else if t < protocol.t_off_s {
        1.0 - (-(t - protocol.t_release_s) / tau).exp()
    } else {
        let peak = 1.0 - (-(protocol.t_off_s - protocol.t_release_s) / tau).exp();
        peak * (-(t - protocol.t_off_s) / tau).exp()
    }
}

/// Simulates one trial on one board. Returns the trial and the number of
/// samples floored at 0 kΩ.
pub fn simulate_trial(
    config: &SynthConfig,
    trial_index: usize,
    entry: &ScheduleEntry,
    board_pos: usize,
    drift: &TrialDrift,
) -> (TrialSeries, usize) {
    let p = config.protocol;
    let n = p.n_samples();
    let board = config.boards[board_pos];
    let shape: Vec<f64> = (0..n).map(|k| response_shape(p.time_of(k), &p, config.response_tau_s)).collect();
    let mut floored = 0;
    let values = (0..usize::from(config.n_sensors))
        .map(|s| {
            let b = drift.baseline_kohm[s];
            let m = drift.slope_kohm_per_s[s];
            let a = config.amplitude(entry.gas_index, s);
            let mut noise = (config.noise_sigma > 0.0).then(|| {
                (
                    rng::stream(config.seed, &[STREAM_NOISE, trial_index as u64, board_pos as u64, s as u64]),
                    Normal::new(0.0, config.noise_sigma).expect("valid sigma"),
                )
            });
            (0..n)
                .map(|k| {
                    let mut r = b + m * p.time_of(k) + a * shape[k];
                    if let Some((stream, dist)) = noise.as_mut() {
                        r += dist.sample(stream);
                    }
                    if r < 0.0 {
                        floored += 1;
                        0.0
                    } else {
                        r
                    }
                })
                .collect()
        })
        .collect();
    if floored > 0 {
        log::warn!("synthetic trial {trial_index} board {board}: {floored} samples floored at 0 kOhm");
    }
    let gas = &config.gases[entry.gas_index];
    let trial = TrialSeries {
        meta: TrialMeta {
            trial_id: trial_id(trial_index, board),
            gas_label: gas.label.clone(),
            concentration_ppm: gas.concentration_ppm,
            location_index: config.location_index,
            board_index: board,
            fan_speed_mps: config.fan_speed_mps,
            heater_voltage_v: config.heater_voltage_v,
            repetition: entry.repetition,
            recorded_at: entry.recorded_at,
            source_path: "synthetic".into(),
        },
        protocol: p,
        sensors: (1..=config.n_sensors)
            .map(|c| SensorChannel {
                column_index: c,
                model_name: default_model_name(c),
                board_index: board,
            })
            .collect(),
        values,
        validity: vec![true; usize::from(config.n_sensors)],
    };
    (trial, floored)
}

pub fn trial_id(trial_index: usize, board: u32) -> String {
    format!("syn{trial_index:05}_b{board}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftTraceEntry {
    pub trial_id: String,
    pub column: u8,
    pub baseline_kohm: f64,
    pub slope_kohm_per_s: f64,
    pub session_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriftTrace {
    pub entries: Vec<DriftTraceEntry>,
    pub floored_samples: usize,
}

impl DriftTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial_id,sensor,B_kohm,slope_kohm_per_s,session_id\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.trial_id, e.column, e.baseline_kohm, e.slope_kohm_per_s, e.session_id
            );
        }
        out
    }
}

/// Simulates the full dataset in memory.
pub fn simulate_dataset(config: &SynthConfig) -> Result<(Dataset, DriftTrace)> {
    let schedule = generate_schedule(config, config.seed)?;
    let n_sessions = schedule.last().map_or(0, |e| e.session_id + 1);
    let walk = session_baselines(config, n_sessions);
    let jobs: Vec<(usize, usize)> = (0..schedule.len())
        .flat_map(|i| (0..config.boards.len()).map(move |b| (i, b)))
        .collect();
    let simulated: Vec<(TrialSeries, TrialDrift, usize, usize)> = jobs
        .into_par_iter()
        .map(|(i, b)| {
            let drift = sample_trial_drift(config, i, &schedule[i], b, &walk);
            let (trial, floored) = simulate_trial(config, i, &schedule[i], b, &drift);
            (trial, drift, schedule[i].session_id, floored)
        })
        .collect();

    let mut trace = DriftTrace::default();
    let mut trials = Vec::with_capacity(simulated.len());
    for (trial, drift, session_id, floored) in simulated {
        trace.floored_samples += floored;
        for (s, ch) in trial.sensors.iter().enumerate() {
            trace.entries.push(DriftTraceEntry {
                trial_id: trial.meta.trial_id.clone(),
                column: ch.column_index,
                baseline_kohm: drift.baseline_kohm[s],
                slope_kohm_per_s: drift.slope_kohm_per_s[s],
                session_id,
            });
        }
        trials.push(trial);
    }
    let dataset = Dataset::from_trials(trials, Vec::new(), Default::default())?;
    Ok((dataset, trace))
}

/// Simulates and writes the dataset in the canonical store layout, plus the
/// ground-truth trace and the effective config.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path) -> Result<(Dataset, DriftTrace)> {
    let (mut dataset, trace) = simulate_dataset(config)?;
    dataset.manifest.canonical_root = out_dir.to_path_buf();
    store::write_dataset(out_dir, &dataset)?;
    let trace_path = out_dir.join(TRACE_FILE);
    fs::write(&trace_path, trace.to_csv()).map_err(|e| Error::io(&trace_path, e))?;
    let cfg_path = out_dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(config)?;
    fs::write(&cfg_path, json + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    Ok((dataset, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(gases: usize, trials: usize, mode: ScheduleMode) -> SynthConfig {
        SynthConfig {
            gases: (0..gases)
                .map(|g| GasSpec {
                    label: format!("g{}", g + 1),
                    concentration_ppm: 100.0,
                    amplitude_kohm: Vec::new(),
                })
                .collect(),
            trials_per_gas: trials,
            schedule_mode: mode,
            n_sensors: 4,
            protocol: Protocol {
                sample_rate_hz: 10.0,
                t_release_s: 2.0,
                t_off_s: 4.0,
                duration_s: 5.0,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn batched_blocks_are_contiguous_with_one_gap() {
        let s = generate_schedule(&tiny(2, 2, ScheduleMode::Batched), 1).unwrap();
        let labels: Vec<_> = s.iter().map(|e| e.gas_label.as_str()).collect();
        assert_eq!(labels, ["g1", "g1", "g2", "g2"]);
        let gaps: Vec<i64> = s
            .windows(2)
            .map(|w| (w[1].recorded_at - w[0].recorded_at).num_seconds())
            .collect();
        assert_eq!(gaps, [600, 7 * 86_400, 600]);
    }

    #[test]
    fn interleaved_is_round_robin() {
        let s = generate_schedule(&tiny(2, 2, ScheduleMode::Interleaved), 1).unwrap();
        let labels: Vec<_> = s.iter().map(|e| e.gas_label.as_str()).collect();
        assert_eq!(labels, ["g1", "g2", "g1", "g2"]);
    }

    #[test]
    fn randomized_is_deterministic_permutation() {
        let cfg = tiny(5, 4, ScheduleMode::Randomized);
        let a = generate_schedule(&cfg, 9).unwrap();
        assert_eq!(a, generate_schedule(&cfg, 9).unwrap());
        assert_ne!(a, generate_schedule(&cfg, 10).unwrap());
        let mut counts = [0; 5];
        a.iter().for_each(|e| counts[e.gas_index] += 1);
        assert_eq!(counts, [4; 5]);
    }

    #[test]
    fn pre_release_equals_baseline_without_noise() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            shortterm_slope_sigma: 0.0,
            ..tiny(2, 2, ScheduleMode::Batched)
        };
        let (ds, trace) = simulate_dataset(&cfg).unwrap();
        let t = &ds.trials[0];
        let n_pre = t.protocol.pre_release_samples();
        for (s, row) in t.values.iter().enumerate() {
            let b = trace.entries[s].baseline_kohm;
            assert!(row[..n_pre].iter().all(|v| *v == b));
        }
    }

    #[test]
    fn saturated_response_reaches_amplitude() {
        let p = Protocol {
            sample_rate_hz: 10.0,
            t_release_s: 2.0,
            t_off_s: 4.0,
            duration_s: 5.0,
        };
        assert_eq!(response_shape(4.0, &p, 1e-9), 1.0);
        assert_eq!(response_shape(1.99, &p, 1e-9), 0.0);
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            shortterm_slope_sigma: 0.0,
            longterm_step_sigma: 0.0,
            response_tau_s: 1e-9,
            ..tiny(1, 1, ScheduleMode::Batched)
        };
        let (ds, _) = simulate_dataset(&cfg).unwrap();
        let k_off = p.index_of(4.0);
        for s in 0..4 {
            let expect = cfg.baseline0(s) + cfg.amplitude(0, s);
            assert!((ds.trials[0].values[s][k_off] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_closed_form_oracle() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            shortterm_slope_sigma: 0.01,
            longterm_step_sigma: 2.0,
            response_tau_s: 0.7,
            boards: vec![2, 3],
            ..tiny(3, 3, ScheduleMode::Randomized)
        };
        let (ds, trace) = simulate_dataset(&cfg).unwrap();
        let p = cfg.protocol;
        // Independent evaluation of the model formula at each grid point.
        let oracle = |t: f64, b: f64, m: f64, a: f64| {
            let g = if t < 2.0 {
                0.0
            } else if t < 4.0 {
                1.0 - f64::exp(-(t - 2.0) / 0.7)
            } else {
                (1.0 - f64::exp(-2.0 / 0.7)) * f64::exp(-(t - 4.0) / 0.7)
            };
            (b + m * t + a * g).max(0.0)
        };
        for e in &trace.entries {
            let trial = ds.trials.iter().find(|t| t.meta.trial_id == e.trial_id).unwrap();
            let gas = cfg.gases.iter().position(|g| g.label == trial.meta.gas_label).unwrap();
            let s = usize::from(e.column - 1);
            let a = cfg.amplitude(gas, s);
            for (k, v) in trial.values[s].iter().enumerate() {
                let t = k as f64 / p.sample_rate_hz;
                assert!((v - oracle(t, e.baseline_kohm, e.slope_kohm_per_s, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn response_monotone_during_exposure() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            shortterm_slope_sigma: 0.0,
            gases: vec![GasSpec {
                label: "g".into(),
                concentration_ppm: 1.0,
                amplitude_kohm: vec![3.0; 4],
            }],
            ..tiny(1, 2, ScheduleMode::Batched)
        };
        let (ds, _) = simulate_dataset(&cfg).unwrap();
        let p = cfg.protocol;
        let (a, b) = (p.index_of(p.t_release_s), p.index_of(p.t_off_s));
        for row in &ds.trials[0].values {
            assert!(row[a..b].windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn dataset_files_and_determinism() {
        let cfg = tiny(3, 5, ScheduleMode::Batched);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, d1.path()).unwrap();
        generate_dataset(&cfg, d2.path()).unwrap();
        let csvs = fs::read_dir(d1.path().join("trials"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "csv")
            .count();
        assert_eq!(csvs, 15);
        for f in ["manifest.csv", TRACE_FILE, CONFIG_FILE, "trials/syn00007_b5.csv", "trials/syn00007_b5.meta"] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let loaded = store::load_dataset(d1.path()).unwrap();
        let (mem, _) = simulate_dataset(&cfg).unwrap();
        assert_eq!(loaded.trials, mem.trials);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let cfg = tiny(3, 4, ScheduleMode::Randomized);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_dataset(&cfg).unwrap());
        let b = four.install(|| simulate_dataset(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = tiny(2, 2, ScheduleMode::Batched);
        cfg.noise_sigma = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(2, 2, ScheduleMode::Batched);
        cfg.protocol.t_off_s = 1.0;
        assert!(cfg.validate().is_err());
    }
}
