//! Shared fixtures for the benchmarks.

use driftaudit_core::ingest::Protocol;
use driftaudit_core::probes::{window_features, FeatureMatrix, FeatureMode};
use driftaudit_core::synth::{simulate_dataset, ScheduleMode, SynthConfig};
use driftaudit_core::{Dataset, DatasetView};

/// Ten gases, twenty trials each, on a 30 s protocol.
pub fn synth_config() -> SynthConfig {
    SynthConfig {
        schedule_mode: ScheduleMode::Batched,
        protocol: Protocol {
            sample_rate_hz: 100.0,
            t_release_s: 20.0,
            t_off_s: 25.0,
            duration_s: 30.0,
        },
        ..SynthConfig::default()
    }
}

pub fn dataset() -> Dataset {
    simulate_dataset(&synth_config()).expect("valid config").0
}

pub fn features(dataset: &Dataset, start_s: f64, mode: FeatureMode) -> FeatureMatrix {
    window_features(&DatasetView::all(dataset), start_s, 0.1, mode).expect("window in range")
}
