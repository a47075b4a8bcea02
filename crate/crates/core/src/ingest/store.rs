//! Canonical on-disk dataset.
//!
//! ```text
//! <root>/manifest.csv          trial_id,path,recorded_at
//! <root>/excluded.csv          source,reason
//! <root>/trials/<id>.csv       t_s,s1,...,sN   (resistance, kΩ)
//! <root>/trials/<id>.meta      key=value sidecar
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{format_timestamp, parse_timestamp, Dataset, Protocol, SensorChannel, TrialMeta, TrialSeries};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const EXCLUDED_FILE: &str = "excluded.csv";
pub const TRIALS_DIR: &str = "trials";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sanitize(s: &str) -> String {
    s.replace(['\n', '\r'], " ").replace(',', ";")
}

pub fn trial_csv(trial: &TrialSeries) -> String {
    let n = trial.n_samples();
    let mut out = String::with_capacity(n * (trial.sensors.len() + 1) * 10);
    out.push_str("t_s");
    for s in &trial.sensors {
        let _ = write!(out, ",s{}", s.column_index);
    }
    out.push('\n');
    for k in 0..n {
        let _ = write!(out, "{}", trial.protocol.time_of(k));
        for row in &trial.values {
            let _ = write!(out, ",{}", row[k]);
        }
        out.push('\n');
    }
    out
}

pub fn trial_sidecar(trial: &TrialSeries) -> String {
    let m = &trial.meta;
    let p = &trial.protocol;
    let join = |f: &dyn Fn(&SensorChannel, bool) -> String| {
        trial
            .sensors
            .iter()
            .zip(&trial.validity)
            .map(|(s, v)| f(s, *v))
            .collect::<Vec<_>>()
    };
    let lines = [
        ("trial_id", m.trial_id.clone()),
        ("gas", m.gas_label.clone()),
        ("concentration_ppm", m.concentration_ppm.to_string()),
        ("location", m.location_index.to_string()),
        ("board", m.board_index.to_string()),
        ("fan_speed_mps", m.fan_speed_mps.to_string()),
        ("heater_voltage_v", m.heater_voltage_v.to_string()),
        ("repetition", m.repetition.to_string()),
        ("recorded_at", format_timestamp(&m.recorded_at)),
        ("source_path", m.source_path.replace(['\n', '\r'], " ")),
        ("sample_rate_hz", p.sample_rate_hz.to_string()),
        ("t_release_s", p.t_release_s.to_string()),
        ("t_off_s", p.t_off_s.to_string()),
        ("duration_s", p.duration_s.to_string()),
        ("columns", join(&|s, _| s.column_index.to_string()).join(",")),
        ("models", join(&|s, _| s.model_name.replace('|', "/")).join("|")),
        ("valid", join(&|_, v| u8::from(v).to_string()).join(",")),
    ];
    let mut out = String::new();
    for (k, v) in lines {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

pub fn write_trial(dir: &Path, trial: &TrialSeries) -> Result<()> {
    let id = &trial.meta.trial_id;
    write_file(&dir.join(format!("{id}.csv")), &trial_csv(trial))?;
    write_file(&dir.join(format!("{id}.meta")), &trial_sidecar(trial))
}

/// Writes the full store under `root`, replacing any previous manifest.
pub fn write_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    let trials_dir = root.join(TRIALS_DIR);
    fs::create_dir_all(&trials_dir).map_err(|e| Error::io(&trials_dir, e))?;
    dataset
        .trials
        .par_iter()
        .try_for_each(|t| write_trial(&trials_dir, t))?;
    let mut manifest = String::from("trial_id,path,recorded_at\n");
    for m in &dataset.manifest.trials {
        let _ = writeln!(
            manifest,
            "{},{TRIALS_DIR}/{}.csv,{}",
            m.trial_id,
            m.trial_id,
            format_timestamp(&m.recorded_at)
        );
    }
    write_file(&root.join(MANIFEST_FILE), &manifest)?;
    let mut excluded = String::from("source,reason\n");
    for (src, reason) in &dataset.manifest.excluded {
        let _ = writeln!(excluded, "{},{}", sanitize(src), sanitize(reason));
    }
    write_file(&root.join(EXCLUDED_FILE), &excluded)
}

fn parse_sidecar(text: &str, path: &Path) -> Result<(TrialMeta, Protocol, Vec<SensorChannel>, Vec<bool>)> {
    let bad = |m: String| Error::MalformedPayload {
        path: path.to_path_buf(),
        line: 0,
        reason: m,
    };
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line `{line}` is not key=value")))?;
        map.insert(k.trim().to_string(), v.to_string());
    }
    let get = |k: &str| map.get(k).cloned().ok_or_else(|| bad(format!("missing key `{k}`")));
    fn num<T: std::str::FromStr>(s: String, key: &str, bad: &dyn Fn(String) -> Error) -> Result<T> {
        s.trim().parse().map_err(|_| bad(format!("bad value for `{key}`: {s}")))
    }
    let meta = TrialMeta {
        trial_id: get("trial_id")?,
        gas_label: get("gas")?,
        concentration_ppm: num(get("concentration_ppm")?, "concentration_ppm", &bad)?,
        location_index: num(get("location")?, "location", &bad)?,
        board_index: num(get("board")?, "board", &bad)?,
        fan_speed_mps: num(get("fan_speed_mps")?, "fan_speed_mps", &bad)?,
        heater_voltage_v: num(get("heater_voltage_v")?, "heater_voltage_v", &bad)?,
        repetition: num(get("repetition")?, "repetition", &bad)?,
        recorded_at: parse_timestamp(&get("recorded_at")?)?,
        source_path: get("source_path")?,
    };
    let protocol = Protocol {
        sample_rate_hz: num(get("sample_rate_hz")?, "sample_rate_hz", &bad)?,
        t_release_s: num(get("t_release_s")?, "t_release_s", &bad)?,
        t_off_s: num(get("t_off_s")?, "t_off_s", &bad)?,
        duration_s: num(get("duration_s")?, "duration_s", &bad)?,
    };
    let columns: Vec<u8> = get("columns")?
        .split(',')
        .map(|c| num(c.to_string(), "columns", &bad))
        .collect::<Result<_>>()?;
    let models: Vec<String> = get("models")?.split('|').map(str::to_string).collect();
    let valid: Vec<bool> = get("valid")?
        .split(',')
        .map(|c| match c.trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(bad(format!("bad validity flag `{other}`"))),
        })
        .collect::<Result<_>>()?;
    if models.len() != columns.len() || valid.len() != columns.len() {
        return Err(bad("columns/models/valid lengths differ".into()));
    }
    let sensors = columns
        .into_iter()
        .zip(models)
        .map(|(c, m)| SensorChannel {
            column_index: c,
            model_name: m,
            board_index: meta.board_index,
        })
        .collect();
    Ok((meta, protocol, sensors, valid))
}

/// Reads one canonical trial from its CSV path; the sidecar sits beside it.
pub fn read_trial(csv_path: &Path) -> Result<TrialSeries> {
    let meta_path = csv_path.with_extension("meta");
    let (meta, protocol, sensors, validity) = parse_sidecar(&read_file(&meta_path)?, &meta_path)?;
    let text = read_file(csv_path)?;
    let malformed = |line: usize, reason: String| Error::MalformedPayload {
        path: csv_path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::EmptyTrial {
        path: csv_path.to_path_buf(),
    })?;
    let mut expected = String::from("t_s");
    for s in &sensors {
        let _ = write!(expected, ",s{}", s.column_index);
    }
    if header.trim() != expected {
        return Err(malformed(1, format!("header `{header}`, expected `{expected}`")));
    }
    let mut values = vec![Vec::with_capacity(protocol.n_samples()); sensors.len()];
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        cells.next();
        let mut count = 0;
        for (row, cell) in values.iter_mut().zip(cells.by_ref()) {
            let v: f64 = cell
                .parse()
                .map_err(|_| malformed(i + 2, format!("non-numeric cell `{cell}`")))?;
            row.push(v);
            count += 1;
        }
        if count != sensors.len() || cells.next().is_some() {
            return Err(malformed(i + 2, "column count mismatch".into()));
        }
    }
    if values.first().is_some_and(Vec::is_empty) {
        return Err(Error::EmptyTrial {
            path: csv_path.to_path_buf(),
        });
    }
    let trial = TrialSeries {
        meta,
        protocol,
        sensors,
        values,
        validity,
    };
    trial.validate()?;
    Ok(trial)
}

/// Loads a store written by [`write_dataset`].
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST_FILE);
    let text = read_file(&manifest_path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(Error::MalformedPayload {
                path: manifest_path.clone(),
                line: i + 1,
                reason: "expected trial_id,path,recorded_at".into(),
            });
        }
        entries.push((cells[0].to_string(), PathBuf::from(cells[1]), parse_timestamp(cells[2])?));
    }
    let trials: Vec<TrialSeries> = entries
        .par_iter()
        .map(|(id, rel, at)| {
            let t = read_trial(&root.join(rel))?;
            if &t.meta.trial_id != id || &t.meta.recorded_at != at {
                return Err(Error::InvalidMeta(format!("manifest entry {id} disagrees with sidecar")));
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let mut excluded = Vec::new();
    if let Ok(text) = fs::read_to_string(root.join(EXCLUDED_FILE)) {
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            if let Some((a, b)) = line.split_once(',') {
                excluded.push((a.to_string(), b.to_string()));
            }
        }
    }
    if trials.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Dataset::from_trials(trials, excluded, root.to_path_buf())
}
