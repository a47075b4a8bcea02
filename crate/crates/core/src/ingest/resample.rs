use crate::error::{Error, Result};

/// Linear interpolation of `(time_s, values)` onto `t_k = k / rate_hz` for
/// `k < round(duration_s * rate_hz)`. Grid points before the first or after
/// the last sample hold the nearest edge value.
pub fn resample_uniform(time_s: &[f64], values: &[f64], rate_hz: f64, duration_s: f64) -> Result<Vec<f64>> {
    if time_s.len() != values.len() {
        return Err(Error::DegenerateSeries(format!(
            "{} timestamps for {} values",
            time_s.len(),
            values.len()
        )));
    }
    if time_s.len() < 2 {
        return Err(Error::DegenerateSeries(format!("{} samples", time_s.len())));
    }
    if let Some(i) = time_s.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateSeries(format!(
            "time not strictly increasing at sample {}",
            i + 1
        )));
    }
    if !(rate_hz > 0.0) || !(duration_s >= 0.0) {
        return Err(Error::DegenerateSeries(format!(
            "rate {rate_hz} Hz / duration {duration_s} s"
        )));
    }
    let n = (duration_s * rate_hz).round() as usize;
    let last = time_s.len() - 1;
    let mut seg = 0;
    let out = (0..n)
        .map(|k| {
            let t = k as f64 / rate_hz;
            if t <= time_s[0] {
                return values[0];
            }
            if t >= time_s[last] {
                return values[last];
            }
            while time_s[seg + 1] <= t {
                seg += 1;
            }
            let frac = (t - time_s[seg]) / (time_s[seg + 1] - time_s[seg]);
            values[seg] + (values[seg + 1] - values[seg]) * frac
        })
        .collect();
    Ok(out)
}
