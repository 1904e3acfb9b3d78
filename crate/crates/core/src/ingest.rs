//! Loading binned roadway measurements and turning them into regression
//! data, model-ready time series and untreated-congestion scenarios.
//!
//! Input files follow a fixed schema:
//!
//! ```text
//! timestamp_utc,df,ds,af,as,td,ta,pax_arriving,pax_departing
//! 2022-05-01T08:00:00Z,312,41.5,280,47.2,0,0,410,385
//! ```
//!
//! Bins must be strictly increasing and aligned to the bin size. Missing bins
//! are reported as gaps and never imputed; all downstream products work on
//! the contiguous segments between gaps.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use nalgebra::{Dyn, OMatrix, U4, U8};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Action, ControlInput, CriticalSpeeds, Facility, MinMax, Scenario, TimeSeries, TrafficState,
    VolumeScale,
};
use crate::SCHEMA_VERSION;

/// Column header every input file must carry.
pub const CSV_HEADER: [&str; 9] = [
    "timestamp_utc",
    "df",
    "ds",
    "af",
    "as",
    "td",
    "ta",
    "pax_arriving",
    "pax_departing",
];

/// Two hours of 15-minute bins.
pub const DEFAULT_WINDOW_BINS: usize = 8;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
/// Minimum number of transitions accepted for a train/validation split.
pub const MIN_TRANSITIONS: usize = 100;

/// One measurement row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    /// UTC epoch seconds at the start of the bin.
    pub timestamp: i64,
    pub df: u32,
    pub ds: f64,
    pub af: u32,
    pub as_: f64,
    pub td: bool,
    pub ta: bool,
    pub pax_arriving: u32,
    pub pax_departing: u32,
}

impl RawRecord {
    pub fn state(&self) -> TrafficState {
        // Counts and speeds were validated as finite and non-negative on parse.
        TrafficState::new(f64::from(self.df), self.ds, f64::from(self.af), self.as_)
            .expect("validated record")
    }

    pub fn action(&self) -> Result<Action> {
        Action::from_flags(self.td, self.ta)
    }
}

/// Missing bins between two consecutive records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gap {
    /// Index of the last record before the gap.
    pub after_index: usize,
    pub missing_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub records: Vec<RawRecord>,
    pub gaps: Vec<Gap>,
    pub bin_minutes: u32,
}

impl LoadedCsv {
    /// Contiguous runs of records between gaps.
    pub fn segments(&self) -> Vec<&[RawRecord]> {
        let mut out = Vec::with_capacity(self.gaps.len() + 1);
        let mut start = 0;
        for gap in &self.gaps {
            out.push(&self.records[start..=gap.after_index]);
            start = gap.after_index + 1;
        }
        if start < self.records.len() {
            out.push(&self.records[start..]);
        }
        out
    }
}

pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(epoch: i64) -> String {
    DateTime::<Utc>::from_timestamp(epoch, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| epoch.to_string())
}

fn field_err(line: u64, column: &str, value: &str, why: &str) -> Error {
    Error::Parse {
        line,
        message: format!("column `{column}` value {value:?}: {why}"),
    }
}

fn parse_count(line: u64, column: &str, value: &str) -> Result<u32> {
    value
        .parse::<u32>()
        .map_err(|_| field_err(line, column, value, "expected a non-negative integer"))
}

fn parse_speed(line: u64, column: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(field_err(line, column, value, "expected a non-negative decimal")),
    }
}

fn parse_flag(line: u64, column: &str, value: &str) -> Result<bool> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(field_err(line, column, value, "expected 0 or 1")),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses measurement rows from any reader. See the module docs for the
/// schema. Rows must be strictly increasing in time and aligned to
/// `bin_minutes`; gaps are reported rather than rejected.
pub fn parse_csv<R: Read>(reader: R, bin_minutes: u32) -> Result<LoadedCsv> {
    if bin_minutes == 0 {
        return Err(Error::param("bin size must be positive"));
    }
    let bin_seconds = i64::from(bin_minutes) * 60;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.len() != CSV_HEADER.len()
        || headers.iter().zip(CSV_HEADER).any(|(h, want)| h != want)
    {
        return Err(Error::Schema(format!(
            "expected header `{}`, found `{}`",
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records: Vec<RawRecord> = Vec::new();
    let mut gaps = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let timestamp = parse_timestamp(&row[0])
            .ok_or_else(|| field_err(line, "timestamp_utc", &row[0], "expected ISO-8601"))?;
        let record = RawRecord {
            timestamp,
            df: parse_count(line, "df", &row[1])?,
            ds: parse_speed(line, "ds", &row[2])?,
            af: parse_count(line, "af", &row[3])?,
            as_: parse_speed(line, "as", &row[4])?,
            td: parse_flag(line, "td", &row[5])?,
            ta: parse_flag(line, "ta", &row[6])?,
            pax_arriving: parse_count(line, "pax_arriving", &row[7])?,
            pax_departing: parse_count(line, "pax_departing", &row[8])?,
        };
        if record.td && record.ta {
            return Err(Error::Parse {
                line,
                message: "td and ta cannot both be active".into(),
            });
        }
        if let Some(prev) = records.last() {
            let delta = record.timestamp - prev.timestamp;
            if delta == 0 {
                return Err(Error::Schema(format!(
                    "duplicate timestamp {} at line {line}",
                    format_timestamp(record.timestamp)
                )));
            }
            if delta < 0 {
                return Err(Error::Schema(format!(
                    "timestamps not increasing at line {line}"
                )));
            }
            if delta % bin_seconds != 0 {
                return Err(Error::Schema(format!(
                    "timestamp at line {line} is not aligned to {bin_minutes}-minute bins"
                )));
            }
            let missing = (delta / bin_seconds - 1) as usize;
            if missing > 0 {
                log::warn!(
                    "gap of {missing} bin(s) after {}",
                    format_timestamp(prev.timestamp)
                );
                gaps.push(Gap {
                    after_index: records.len() - 1,
                    missing_bins: missing,
                });
            }
        }
        records.push(record);
    }
    Ok(LoadedCsv {
        records,
        gaps,
        bin_minutes,
    })
}

pub fn load_csv(path: impl AsRef<Path>, bin_minutes: u32) -> Result<LoadedCsv> {
    let file = std::fs::File::open(path)?;
    parse_csv(std::io::BufReader::new(file), bin_minutes)
}

/// Writes records in the input schema.
pub fn write_csv<W: Write>(writer: W, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            format_timestamp(r.timestamp),
            r.df.to_string(),
            r.ds.to_string(),
            r.af.to_string(),
            r.as_.to_string(),
            u8::from(r.td).to_string(),
            u8::from(r.ta).to_string(),
            r.pax_arriving.to_string(),
            r.pax_departing.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ── Passenger-volume features ───────────────────────────────────────────

/// Windowed passenger sums before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawVolumes {
    /// Departing passengers over the following window.
    pub dv: f64,
    /// Arriving passengers over the preceding window.
    pub av: f64,
}

/// Raw volume features for the bins of one contiguous segment that have a
/// complete window on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFeatures {
    /// Record index of `values[0]`.
    pub first_index: usize,
    pub values: Vec<RawVolumes>,
    pub dropped_leading: usize,
    pub dropped_trailing: usize,
}

impl VolumeFeatures {
    /// Feature of record `index`, if that bin kept a full window.
    pub fn get(&self, index: usize) -> Option<RawVolumes> {
        index
            .checked_sub(self.first_index)
            .and_then(|i| self.values.get(i).copied())
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.first_index..self.first_index + self.values.len()
    }
}

/// Arriving volume sums the `window_bins` bins before each bin; departing
/// volume sums the `window_bins` bins after it. Bins without a complete
/// window on either side are dropped.
pub fn build_volume_features(records: &[RawRecord], window_bins: usize) -> Result<VolumeFeatures> {
    if window_bins == 0 {
        return Err(Error::param("feature window must span at least one bin"));
    }
    let n = records.len();
    if n < 2 * window_bins + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} bins cannot hold a {window_bins}-bin window on both sides"
        )));
    }
    if n >= 2 {
        let step = records[1].timestamp - records[0].timestamp;
        if step <= 0 || records.windows(2).any(|w| w[1].timestamp - w[0].timestamp != step) {
            return Err(Error::Schema(
                "volume features need contiguous, uniformly spaced bins".into(),
            ));
        }
    }

    let prefix = |f: fn(&RawRecord) -> u32| {
        let mut acc = Vec::with_capacity(n + 1);
        acc.push(0u64);
        for r in records {
            acc.push(acc.last().unwrap() + u64::from(f(r)));
        }
        acc
    };
    let arr = prefix(|r| r.pax_arriving);
    let dep = prefix(|r| r.pax_departing);

    let values = (window_bins..n - window_bins)
        .map(|k| RawVolumes {
            av: (arr[k] - arr[k - window_bins]) as f64,
            dv: (dep[k + window_bins + 1] - dep[k + 1]) as f64,
        })
        .collect();
    Ok(VolumeFeatures {
        first_index: window_bins,
        values,
        dropped_leading: window_bins,
        dropped_trailing: window_bins,
    })
}

// ── Regression data ─────────────────────────────────────────────────────

/// One observed transition `(x_k, u_k) -> x_{k+1}` with raw volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub timestamp: i64,
    pub state: TrafficState,
    pub action: Action,
    pub volumes: RawVolumes,
    pub next: TrafficState,
}

/// Stacked regression matrices: `x_prime` holds `[x_k; u_k]` columns and `y`
/// the matching `x_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub x_prime: OMatrix<f64, U8, Dyn>,
    pub y: OMatrix<f64, U4, Dyn>,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl RegressionDataset {
    pub fn new(x_prime: OMatrix<f64, U8, Dyn>, y: OMatrix<f64, U4, Dyn>) -> Result<Self> {
        if x_prime.ncols() != y.ncols() {
            return Err(Error::InvalidValue {
                field: "regression dataset",
                reason: format!("{} inputs but {} targets", x_prime.ncols(), y.ncols()),
            });
        }
        Ok(RegressionDataset {
            x_prime,
            y,
            split_seed: 0,
            train_fraction: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    fn from_transitions(ts: &[&Transition], scale: &VolumeScale) -> Self {
        let n = ts.len();
        let mut x_prime = OMatrix::<f64, U8, Dyn>::zeros(n);
        let mut y = OMatrix::<f64, U4, Dyn>::zeros(n);
        for (j, t) in ts.iter().enumerate() {
            let input = ControlInput::new(t.action, scale.normalize(t.volumes.dv, t.volumes.av))
                .expect("normalized volumes lie in [0, 1]");
            x_prime
                .fixed_view_mut::<4, 1>(0, j)
                .copy_from(&t.state.to_vector());
            x_prime
                .fixed_view_mut::<4, 1>(4, j)
                .copy_from(&input.to_vector());
            y.set_column(j, &t.next.to_vector());
        }
        RegressionDataset {
            x_prime,
            y,
            split_seed: 0,
            train_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: RegressionDataset,
    pub validation: RegressionDataset,
    /// Fitted on the training columns only.
    pub volume_scale: VolumeScale,
    pub warnings: Vec<String>,
}

/// Transitions of one contiguous segment whose source bin has volume features.
pub fn transitions(records: &[RawRecord], features: &VolumeFeatures) -> Result<Vec<Transition>> {
    let mut out = Vec::with_capacity(features.values.len());
    for k in features.indices() {
        if k + 1 >= records.len() {
            break;
        }
        let r = &records[k];
        out.push(Transition {
            timestamp: r.timestamp,
            state: r.state(),
            action: r.action()?,
            volumes: features.get(k).expect("index in range"),
            next: records[k + 1].state(),
        });
    }
    Ok(out)
}

/// Collects transitions from every segment of a loaded file. Segments too
/// short to carry volume features are skipped with a warning.
pub fn collect_transitions(loaded: &LoadedCsv, window_bins: usize) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for seg in loaded.segments() {
        match build_volume_features(seg, window_bins) {
            Ok(features) => out.extend(transitions(seg, &features)?),
            Err(Error::InsufficientData(msg)) => log::warn!("skipping segment: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Single-segment convenience over [`split_transitions`].
pub fn make_regression_dataset(
    records: &[RawRecord],
    features: &VolumeFeatures,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    split_transitions(&transitions(records, features)?, train_fraction, seed)
}

/// Seeded random train/validation split. Each column is one whole
/// transition, so splitting never breaks a `(x_k, u_k, x_{k+1})` tuple.
/// Volume scaling is fitted on the training columns and applied to both.
pub fn split_transitions(
    transitions: &[Transition],
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::param(format!(
            "train fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let n = transitions.len();
    if n < MIN_TRANSITIONS {
        return Err(Error::InsufficientData(format!(
            "{n} transitions available, at least {MIN_TRANSITIONS} required"
        )));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, val_idx) = order.split_at_mut(n_train);
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let train: Vec<&Transition> = train_idx.iter().map(|&i| &transitions[i]).collect();
    let validation: Vec<&Transition> = val_idx.iter().map(|&i| &transitions[i]).collect();

    let volume_scale = VolumeScale {
        dv: MinMax::fit(train.iter().map(|t| t.volumes.dv)).expect("non-empty"),
        av: MinMax::fit(train.iter().map(|t| t.volumes.av)).expect("non-empty"),
    };

    let mut warnings = Vec::new();
    if validation.is_empty() {
        let msg = "train fraction leaves the validation set empty".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut train = RegressionDataset::from_transitions(&train, &volume_scale);
    let mut validation = RegressionDataset::from_transitions(&validation, &volume_scale);
    for ds in [&mut train, &mut validation] {
        ds.split_seed = seed;
        ds.train_fraction = train_fraction;
    }
    Ok(DatasetSplit {
        train,
        validation,
        volume_scale,
        warnings,
    })
}

// ── Model-ready series ──────────────────────────────────────────────────

/// Builds the normalized time series of one contiguous segment, keeping only
/// bins with volume features.
pub fn segment_series(
    records: &[RawRecord],
    features: &VolumeFeatures,
    scale: &VolumeScale,
    bin_minutes: u32,
) -> Result<TimeSeries> {
    let range = features.indices();
    let mut states = Vec::with_capacity(range.len());
    let mut inputs = Vec::with_capacity(range.len());
    for k in range.clone() {
        let r = &records[k];
        let raw = features.get(k).expect("index in range");
        states.push(r.state());
        inputs.push(ControlInput::new(r.action()?, scale.normalize(raw.dv, raw.av))?);
    }
    TimeSeries::new(records[range.start].timestamp, bin_minutes, states, inputs)
}

/// One normalized series per usable segment of a loaded file.
pub fn build_series(
    loaded: &LoadedCsv,
    window_bins: usize,
    scale: &VolumeScale,
) -> Result<Vec<TimeSeries>> {
    let mut out = Vec::new();
    for seg in loaded.segments() {
        match build_volume_features(seg, window_bins) {
            Ok(f) => out.push(segment_series(seg, &f, scale, loaded.bin_minutes)?),
            Err(Error::InsufficientData(msg)) => log::warn!("skipping segment: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

// ── Scenario extraction ─────────────────────────────────────────────────

/// Thresholds used to find untreated-congestion episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Critical ratio below which a facility counts as congested.
    pub congested_threshold: f64,
    /// Critical ratio at or above which the other facility counts as normal.
    pub normal_threshold: f64,
    pub min_duration_bins: usize,
    pub critical_speeds: CriticalSpeeds,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            congested_threshold: 0.7,
            normal_threshold: 0.9,
            min_duration_bins: 4,
            critical_speeds: CriticalSpeeds::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.critical_speeds.validate()?;
        if !(self.congested_threshold > 0.0 && self.congested_threshold <= self.normal_threshold)
            || !self.normal_threshold.is_finite()
        {
            return Err(Error::param(format!(
                "need 0 < congested_threshold ({}) <= normal_threshold ({})",
                self.congested_threshold, self.normal_threshold
            )));
        }
        if self.min_duration_bins == 0 {
            return Err(Error::param("min_duration_bins must be at least 1"));
        }
        Ok(())
    }
}

/// Maximal runs of congestion in one facility, as half-open index ranges.
fn congested_runs(
    series: &TimeSeries,
    facility: Facility,
    config: &ScenarioConfig,
) -> Vec<std::ops::Range<usize>> {
    let congested = |i: usize| {
        config.critical_speeds.ratio(&series.states()[i], facility) < config.congested_threshold
    };
    let mut runs = Vec::new();
    let mut i = 0;
    let n = series.len();
    while i < n {
        if congested(i) {
            let start = i;
            while i < n && congested(i) {
                i += 1;
            }
            runs.push(start..i);
        } else {
            i += 1;
        }
    }
    runs
}

fn run_qualifies(
    series: &TimeSeries,
    run: &std::ops::Range<usize>,
    facility: Facility,
    config: &ScenarioConfig,
) -> bool {
    run.len() >= config.min_duration_bins
        && series.inputs()[run.clone()]
            .iter()
            .all(|u| !u.action().is_active())
        && config
            .critical_speeds
            .ratio(&series.states()[run.start], facility.other())
            >= config.normal_threshold
}

/// Finds maximal windows in which one facility stays below the congestion
/// threshold for at least the minimum duration, the other facility is
/// normal at onset, and no diversion message is shown anywhere in the
/// window. Congestion runs that contain a message are discarded whole.
///
/// Accepted windows cannot overlap: a run starting inside another accepted
/// run would see the other facility congested at its onset.
pub fn extract_scenarios(series: &TimeSeries, config: &ScenarioConfig) -> Result<Vec<Scenario>> {
    config.validate()?;
    let mut out = Vec::new();
    for facility in Facility::BOTH {
        for run in congested_runs(series, facility, config) {
            if run_qualifies(series, &run, facility, config) {
                out.push(Scenario {
                    window: series.slice(run.clone()),
                    congested_facility: facility,
                    onset_index: run.start,
                    label: format!("{facility}@{}", format_timestamp(series.timestamp(run.start))),
                });
            }
        }
    }
    out.sort_by_key(|s| s.onset_index);
    Ok(out)
}

/// Re-checks a scenario's defining predicate against its source series,
/// including maximality of the window.
pub fn scenario_holds(series: &TimeSeries, scenario: &Scenario, config: &ScenarioConfig) -> bool {
    let start = scenario.onset_index;
    let end = start + scenario.window.len();
    if end > series.len() || series.slice(start..end) != scenario.window {
        return false;
    }
    let f = scenario.congested_facility;
    let congested = |i: usize| {
        config.critical_speeds.ratio(&series.states()[i], f) < config.congested_threshold
    };
    let maximal = (start == 0 || !congested(start - 1)) && (end == series.len() || !congested(end));
    maximal && (start..end).all(congested) && run_qualifies(series, &(start..end), f, config)
}

/// Serialized scenario summary; `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub start: String,
    pub end: String,
    pub facility: Facility,
    pub onset_index: usize,
    pub bins: usize,
    pub label: String,
}

impl From<&Scenario> for ScenarioRecord {
    fn from(s: &Scenario) -> Self {
        ScenarioRecord {
            start: format_timestamp(s.window.start()),
            end: format_timestamp(s.window.timestamp(s.window.len())),
            facility: s.congested_facility,
            onset_index: s.onset_index,
            bins: s.window.len(),
            label: s.label.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioList {
    pub schema_version: u32,
    pub scenarios: Vec<ScenarioRecord>,
}

impl ScenarioList {
    pub fn new(scenarios: &[Scenario]) -> Self {
        ScenarioList {
            schema_version: SCHEMA_VERSION,
            scenarios: scenarios.iter().map(ScenarioRecord::from).collect(),
        }
    }
}
