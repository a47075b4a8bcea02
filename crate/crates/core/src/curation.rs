//! Selection of a minimally drift-affected subset: temporally proximate
//! gases, the least-drifting board, and the worst sensors removed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::drift::{DriftTables, GroupKey};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::probes::DatasetView;
use crate::schedule::{detect_sessions, SessionAssignment};

pub const DEFAULT_MAX_SPAN_S: f64 = 14.0 * 86_400.0;

const LATERAL_CAVEAT: &str = "lower drift on the selected board may reflect lower analyte exposure \
at its position in the tunnel rather than more stable sensors; the selector cannot separate the two";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    PaperDefault,
    AutoSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Justification {
    pub choice: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub gases: BTreeSet<String>,
    pub board_index: u32,
    pub location_index: u32,
    pub sensor_columns: BTreeSet<u8>,
    pub provenance: Provenance,
    pub justification: Vec<Justification>,
    pub caveats: Vec<String>,
}

impl SubsetSpec {
    /// Methanol, Ethylene and Butanol on board 3 at location 4, sensors 2-3
    /// and 5-8.
    pub fn paper_default() -> Self {
        Self {
            gases: ["Methanol", "Ethylene", "Butanol"].iter().map(|s| s.to_string()).collect(),
            board_index: 3,
            location_index: 4,
            sensor_columns: [2, 3, 5, 6, 7, 8].into_iter().collect(),
            provenance: Provenance::PaperDefault,
            justification: Vec::new(),
            caveats: vec![LATERAL_CAVEAT.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub max_span_s: f64,
    pub drop_worst_sensors: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            max_span_s: DEFAULT_MAX_SPAN_S,
            drop_worst_sensors: 1,
        }
    }
}

/// Recording-time interval of each gas: from the start of the first session
/// containing it to the end of the last.
pub fn gas_spans(sessions: &SessionAssignment, labels: &[String]) -> BTreeMap<String, (i64, i64)> {
    let spans = sessions.spans();
    let mut out: BTreeMap<String, (i64, i64)> = BTreeMap::new();
    for (label, &s) in labels.iter().zip(&sessions.session_ids) {
        let (a, b) = spans[s];
        let e = out.entry(label.clone()).or_insert((a, b));
        e.0 = e.0.min(a);
        e.1 = e.1.max(b);
    }
    out
}

/// Maximal sets of gases whose spans pairwise overlap or are at most
/// `max_span_s` apart, largest first (ties: earliest start, then by name).
pub fn temporal_proximity_groups(
    sessions: &SessionAssignment,
    labels: &[String],
    max_span_s: f64,
) -> Vec<BTreeSet<String>> {
    let spans = gas_spans(sessions, labels);
    // Widening every interval by half the allowed gap turns "within
    // max_span" into plain overlap; maximal cliques of an interval graph are
    // the active sets just before an interval closes.
    let half = max_span_s / 2.0;
    let mut events: Vec<(f64, bool, &String)> = Vec::new();
    for (g, &(a, b)) in &spans {
        events.push((a as f64 - half, true, g));
        events.push((b as f64 + half, false, g));
    }
    // Opens sort before closes at equal time so touching intervals overlap.
    events.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)).then(x.2.cmp(y.2)));
    let mut active: BTreeSet<String> = BTreeSet::new();
    let mut groups = Vec::new();
    let mut last_open = false;
    for (_, open, g) in events {
        if open {
            active.insert(g.clone());
        } else {
            if last_open {
                groups.push(active.clone());
            }
            active.remove(g);
        }
        last_open = open;
    }
    let start = |set: &BTreeSet<String>| set.iter().map(|g| spans[g].0).min().unwrap_or(0);
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(start(a).cmp(&start(b))).then(a.cmp(b)));
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSensor {
    pub column: u8,
    pub cv_longterm: f64,
    pub cv_shortterm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBoard {
    pub location: u32,
    pub board: u32,
    pub cv_longterm: f64,
    pub cv_shortterm: f64,
}

/// Worst-first orderings by long-term CV, then short-term CV, then
/// ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRanking {
    pub sensors: Vec<RankedSensor>,
    pub boards: Vec<RankedBoard>,
}

fn worst_first(a: (f64, f64), b: (f64, f64)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1))
}

pub fn rank_drift(tables: &DriftTables) -> DriftRanking {
    let mut sensors: Vec<RankedSensor> = tables
        .by_sensor
        .iter()
        .filter_map(|r| match r.key {
            GroupKey::Sensor(column) => Some(RankedSensor {
                column,
                cv_longterm: r.cv_longterm,
                cv_shortterm: r.cv_shortterm,
            }),
            GroupKey::LocationBoard { .. } => None,
        })
        .collect();
    sensors.sort_by(|a, b| {
        worst_first((a.cv_longterm, a.cv_shortterm), (b.cv_longterm, b.cv_shortterm)).then(a.column.cmp(&b.column))
    });
    let mut boards: Vec<RankedBoard> = tables
        .by_location_board
        .iter()
        .filter_map(|r| match r.key {
            GroupKey::LocationBoard { location, board } => Some(RankedBoard {
                location,
                board,
                cv_longterm: r.cv_longterm,
                cv_shortterm: r.cv_shortterm,
            }),
            GroupKey::Sensor(_) => None,
        })
        .collect();
    boards.sort_by(|a, b| {
        worst_first((a.cv_longterm, a.cv_shortterm), (b.cv_longterm, b.cv_shortterm))
            .then((a.location, a.board).cmp(&(b.location, b.board)))
    });
    DriftRanking { sensors, boards }
}

/// Trials matching the subset's gases, location and board, limited to its
/// sensor columns. Every named gas must be present.
pub fn restrict<'a>(dataset: &'a Dataset, spec: &SubsetSpec) -> Result<DatasetView<'a>> {
    if spec.gases.is_empty() || spec.sensor_columns.is_empty() {
        return Err(Error::EmptySubset("gas and sensor sets must be non-empty".into()));
    }
    let view = DatasetView::all(dataset)
        .filter(|t| {
            spec.gases.contains(&t.meta.gas_label)
                && t.meta.board_index == spec.board_index
                && t.meta.location_index == spec.location_index
        })
        .with_columns(spec.sensor_columns.clone());
    let present: BTreeSet<&String> = view.trials.iter().map(|t| &t.meta.gas_label).collect();
    if let Some(missing) = spec.gases.iter().find(|g| !present.contains(g)) {
        return Err(Error::EmptySubset(format!(
            "no trials of {missing} at location {} board {}",
            spec.location_index, spec.board_index
        )));
    }
    let any_column = view
        .trials
        .iter()
        .any(|t| t.valid_columns().any(|c| spec.sensor_columns.contains(&c)));
    if !any_column {
        return Err(Error::EmptySubset("none of the selected sensor columns is valid".into()));
    }
    Ok(view)
}

/// Least-drifting board, the largest proximity group of gases recorded on
/// it, and every ranked sensor except the worst `drop_worst_sensors`.
pub fn auto_select(
    dataset: &Dataset,
    tables: &DriftTables,
    gap_threshold_s: f64,
    config: &CurationConfig,
) -> Result<SubsetSpec> {
    let ranking = rank_drift(tables);
    let board = ranking
        .boards
        .last()
        .ok_or_else(|| Error::EmptySubset("no board in the drift tables".into()))?;
    let on_board: Vec<_> = dataset
        .trials
        .iter()
        .filter(|t| t.meta.location_index == board.location && t.meta.board_index == board.board)
        .map(|t| t.meta.clone())
        .collect();
    let sessions = detect_sessions(&on_board, gap_threshold_s);
    let labels: Vec<String> = on_board.iter().map(|m| m.gas_label.clone()).collect();
    let groups = temporal_proximity_groups(&sessions, &labels, config.max_span_s);
    let gases = groups
        .first()
        .cloned()
        .ok_or_else(|| Error::EmptySubset("no gases on the selected board".into()))?;
    let n_drop = config.drop_worst_sensors.min(ranking.sensors.len().saturating_sub(1));
    let (dropped, kept) = ranking.sensors.split_at(n_drop);
    let mut justification = vec![
        Justification {
            choice: format!("location {} board {}", board.location, board.board),
            metric: "cv_longterm".into(),
            value: board.cv_longterm,
        },
        Justification {
            choice: format!("location {} board {}", board.location, board.board),
            metric: "cv_shortterm".into(),
            value: board.cv_shortterm,
        },
        Justification {
            choice: "gas group".into(),
            metric: "max_span_s".into(),
            value: config.max_span_s,
        },
        Justification {
            choice: "gas group".into(),
            metric: "n_gases".into(),
            value: gases.len() as f64,
        },
    ];
    for s in dropped {
        justification.push(Justification {
            choice: format!("drop sensor {}", s.column),
            metric: "cv_longterm".into(),
            value: s.cv_longterm,
        });
    }
    for s in kept {
        justification.push(Justification {
            choice: format!("keep sensor {}", s.column),
            metric: "cv_longterm".into(),
            value: s.cv_longterm,
        });
    }
    Ok(SubsetSpec {
        gases,
        board_index: board.board,
        location_index: board.location,
        sensor_columns: kept.iter().map(|s| s.column).collect(),
        provenance: Provenance::AutoSelected,
        justification,
        caveats: vec![LATERAL_CAVEAT.to_string()],
    })
}
