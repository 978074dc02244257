//! Trajectory types, NGSIM-style CSV ingestion and the normalized corpus CSV.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig12;

/// Allowed deviation of an inter-sample spacing from the native period.
///
/// Text round trips at 12 significant digits cannot carry 1e-9 s accuracy on
/// timestamps in the hundreds of seconds, so spacing checks use 1 µs.
pub const SPACING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Seconds.
    pub time: f64,
    /// Feet along the road axis.
    pub position: f64,
}

impl TrajectorySample {
    pub fn new(time: f64, position: f64) -> Self {
        Self { time, position }
    }
}

/// One vehicle's uniformly sampled positions on a 1-D road.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    vehicle_id: String,
    lane: Option<i64>,
    samples: Vec<TrajectorySample>,
    native_period: f64,
}

impl Trajectory {
    /// Validates ordering, uniform spacing and the 3-sample minimum.
    pub fn new(
        vehicle_id: impl Into<String>,
        samples: Vec<TrajectorySample>,
        native_period: f64,
    ) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        if !(native_period.is_finite() && native_period > 0.0) {
            return Err(Error::invalid(
                "trajectory",
                format!("{vehicle_id}: native period {native_period} must be positive"),
            ));
        }
        if samples.len() < 3 {
            return Err(Error::invalid(
                "trajectory",
                format!("{vehicle_id}: {} samples, need at least 3", samples.len()),
            ));
        }
        if let Some(s) = samples
            .iter()
            .find(|s| !s.time.is_finite() || !s.position.is_finite())
        {
            return Err(Error::invalid(
                "trajectory",
                format!("{vehicle_id}: non-finite sample {s:?}"),
            ));
        }
        for w in samples.windows(2) {
            let gap = w[1].time - w[0].time;
            if (gap - native_period).abs() > SPACING_TOL {
                return Err(Error::invalid(
                    "trajectory",
                    format!(
                        "{vehicle_id}: spacing {gap} at t={} differs from period {native_period}",
                        w[0].time
                    ),
                ));
            }
        }
        Ok(Self {
            vehicle_id,
            lane: None,
            samples,
            native_period,
        })
    }

    pub fn with_lane(mut self, lane: Option<i64>) -> Self {
        self.lane = lane;
        self
    }

    pub fn vehicle_id(&self) -> &str {
        &self.vehicle_id
    }

    /// Lane of the first sample, when the source carried lane information.
    pub fn lane(&self) -> Option<i64> {
        self.lane
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn native_period(&self) -> f64 {
        self.native_period
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    /// Free-form description of where the corpus came from.
    pub source: String,
    /// Label used to report observation periods separately (e.g. "16:00-16:15").
    pub period_label: String,
}

/// An immutable collection of trajectories with unique vehicle ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCorpus {
    trajectories: Vec<Trajectory>,
    road_extent: [f64; 2],
    time_extent: [f64; 2],
    metadata: CorpusMetadata,
}

impl TrajectoryCorpus {
    /// Builds a corpus with extents covering every sample. Trajectories are
    /// ordered by vehicle id (numeric ids numerically).
    pub fn new(trajectories: Vec<Trajectory>, metadata: CorpusMetadata) -> Result<Self> {
        let extent = data_extent(&trajectories);
        Self::with_road_extent(trajectories, extent.0, metadata)
    }

    /// Like [`TrajectoryCorpus::new`] but with a configured road extent, which
    /// must contain every sample position.
    pub fn with_road_extent(
        mut trajectories: Vec<Trajectory>,
        road_extent: [f64; 2],
        metadata: CorpusMetadata,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &trajectories {
            if !seen.insert(t.vehicle_id.as_str()) {
                return Err(Error::invalid(
                    "corpus",
                    format!("duplicate vehicle id `{}`", t.vehicle_id),
                ));
            }
        }
        let (data_road, time_extent) = data_extent(&trajectories);
        if !trajectories.is_empty()
            && (data_road[0] < road_extent[0] || data_road[1] > road_extent[1])
        {
            return Err(Error::invalid(
                "corpus",
                format!("positions {data_road:?} exceed road extent {road_extent:?}"),
            ));
        }
        trajectories.sort_by(|a, b| id_key(&a.vehicle_id).cmp(&id_key(&b.vehicle_id)));
        Ok(Self {
            trajectories,
            road_extent,
            time_extent,
            metadata,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn road_extent(&self) -> [f64; 2] {
        self.road_extent
    }

    pub fn time_extent(&self) -> [f64; 2] {
        self.time_extent
    }

    pub fn metadata(&self) -> &CorpusMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, vehicle_id: &str) -> Option<&Trajectory> {
        self.trajectories
            .iter()
            .find(|t| t.vehicle_id == vehicle_id)
    }

    /// Sub-corpus with the given vehicles, keeping this corpus' extents.
    pub fn subset(&self, keep: &HashSet<&str>) -> TrajectoryCorpus {
        TrajectoryCorpus {
            trajectories: self
                .trajectories
                .iter()
                .filter(|t| keep.contains(t.vehicle_id.as_str()))
                .cloned()
                .collect(),
            road_extent: self.road_extent,
            time_extent: self.time_extent,
            metadata: self.metadata.clone(),
        }
    }
}

fn data_extent(trajectories: &[Trajectory]) -> ([f64; 2], [f64; 2]) {
    let mut road = [f64::INFINITY, f64::NEG_INFINITY];
    let mut time = [f64::INFINITY, f64::NEG_INFINITY];
    for s in trajectories.iter().flat_map(|t| &t.samples) {
        road = [road[0].min(s.position), road[1].max(s.position)];
        time = [time[0].min(s.time), time[1].max(s.time)];
    }
    if trajectories.is_empty() {
        ([0.0, 0.0], [0.0, 0.0])
    } else {
        (road, time)
    }
}

/// Sort key that orders integer ids numerically and everything else after,
/// lexicographically.
fn id_key(id: &str) -> (u8, i128, &str) {
    match id.parse::<i128>() {
        Ok(n) => (0, n, id),
        Err(_) => (1, 0, id),
    }
}

/// Which lanes survive ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneFilter {
    /// When set, only these lanes are kept.
    pub include: Option<Vec<i64>>,
    /// Lanes dropped after `include` is applied.
    pub exclude: Vec<i64>,
}

impl LaneFilter {
    /// Rows without lane information always pass.
    pub fn accepts(&self, lane: Option<i64>) -> bool {
        let Some(lane) = lane else { return true };
        if let Some(inc) = &self.include {
            if !inc.contains(&lane) {
                return false;
            }
        }
        !self.exclude.contains(&lane)
    }
}

/// Names of the CSV columns carrying the fields we need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub vehicle_id: String,
    /// Time column in seconds (after `time_scale`). Used when present in the header.
    pub time: String,
    pub time_scale: f64,
    /// Fallback when `time` is absent: frame index multiplied by `frame_period`.
    pub frame: String,
    pub frame_period: f64,
    pub position: String,
    /// Optional lane column; ignored when empty or absent from the header.
    pub lane: String,
    pub lane_filter: LaneFilter,
    /// Expected sampling period; inferred per vehicle from the smallest
    /// spacing when unset.
    pub period: Option<f64>,
    /// Rows outside this extent are dropped (which can split a vehicle).
    pub road_extent: Option<[f64; 2]>,
    pub source: String,
    pub period_label: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            vehicle_id: "Vehicle_ID".into(),
            time: "Frame_Time".into(),
            time_scale: 1.0,
            frame: "Frame_ID".into(),
            frame_period: 0.1,
            position: "Local_Y".into(),
            lane: "Lane_ID".into(),
            lane_filter: LaneFilter::default(),
            period: None,
            road_extent: None,
            source: "ngsim".into(),
            period_label: String::new(),
        }
    }
}

impl ColumnMap {
    /// Column map for the normalized `vehicle_id,time_s,position_ft` format.
    pub fn normalized() -> Self {
        Self {
            vehicle_id: "vehicle_id".into(),
            time: "time_s".into(),
            position: "position_ft".into(),
            lane: String::new(),
            source: "corpus-csv".into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedVehicle {
    pub vehicle_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub unparsable_rows: usize,
    /// First few unparsable rows as (line number, reason).
    pub unparsable_examples: Vec<(u64, String)>,
    pub lane_filtered_rows: usize,
    pub out_of_extent_rows: usize,
    /// Extra segments created by splitting vehicles at gaps.
    pub gap_splits: usize,
    pub rejected: Vec<RejectedVehicle>,
    pub trajectories: usize,
}

const MAX_EXAMPLES: usize = 20;

struct Row {
    time: f64,
    position: f64,
    lane: Option<i64>,
}

/// Reads an NGSIM-style CSV into a corpus, one trajectory per vehicle (or per
/// gap-free segment of a vehicle).
pub fn parse_ngsim_csv<R: Read>(
    source: R,
    map: &ColumnMap,
) -> Result<(TrajectoryCorpus, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col =
        col(&map.vehicle_id).ok_or_else(|| Error::MissingColumn(map.vehicle_id.clone()))?;
    let pos_col = col(&map.position).ok_or_else(|| Error::MissingColumn(map.position.clone()))?;
    let (time_col, time_mult) = match (col(&map.time), col(&map.frame)) {
        (Some(c), _) => (c, map.time_scale),
        (None, Some(c)) => (c, map.frame_period),
        (None, None) => return Err(Error::MissingColumn(map.time.clone())),
    };
    let lane_col = Some(map.lane.as_str())
        .filter(|l| !l.is_empty())
        .and_then(col);

    let mut report = IngestReport::default();
    let mut by_vehicle: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        report.rows_read += 1;
        let line = i as u64 + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                note_unparsable(&mut report, line, e.to_string());
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<(String, Row), String> {
            let field = |c: usize| record.get(c).ok_or_else(|| format!("missing field {c}"));
            let id = field(id_col)?.to_string();
            if id.is_empty() {
                return Err("empty vehicle id".into());
            }
            let t: f64 = field(time_col)?.parse().map_err(|e| format!("time: {e}"))?;
            let x: f64 = field(pos_col)?
                .parse()
                .map_err(|e| format!("position: {e}"))?;
            let lane = match lane_col {
                Some(c) => Some(field(c)?.parse::<f64>().map_err(|e| format!("lane: {e}"))? as i64),
                None => None,
            };
            let time = t * time_mult;
            if !time.is_finite() || !x.is_finite() {
                return Err("non-finite value".into());
            }
            Ok((
                id,
                Row {
                    time,
                    position: x,
                    lane,
                },
            ))
        })();
        match parsed {
            Ok((id, row)) => {
                if !map.lane_filter.accepts(row.lane) {
                    report.lane_filtered_rows += 1;
                } else if map
                    .road_extent
                    .is_some_and(|[lo, hi]| row.position < lo || row.position > hi)
                {
                    report.out_of_extent_rows += 1;
                } else {
                    by_vehicle.entry(id).or_default().push(row);
                }
            }
            Err(reason) => note_unparsable(&mut report, line, reason),
        }
    }

    let mut trajectories = Vec::new();
    for (id, mut rows) in by_vehicle {
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        match split_vehicle(&id, &rows, map.period) {
            Ok(segments) => {
                report.gap_splits += segments.len().saturating_sub(1);
                for seg in segments {
                    match seg {
                        Ok(t) => trajectories.push(t),
                        Err(reason) => report.rejected.push(reason),
                    }
                }
            }
            Err(reason) => report.rejected.push(RejectedVehicle {
                vehicle_id: id,
                reason,
            }),
        }
    }
    report.trajectories = trajectories.len();
    let metadata = CorpusMetadata {
        source: map.source.clone(),
        period_label: map.period_label.clone(),
    };
    let corpus = match map.road_extent {
        Some(extent) => TrajectoryCorpus::with_road_extent(trajectories, extent, metadata)?,
        None => TrajectoryCorpus::new(trajectories, metadata)?,
    };
    Ok((corpus, report))
}

fn note_unparsable(report: &mut IngestReport, line: u64, reason: String) {
    report.unparsable_rows += 1;
    if report.unparsable_examples.len() < MAX_EXAMPLES {
        report.unparsable_examples.push((line, reason));
    }
}

type Segment = std::result::Result<Trajectory, RejectedVehicle>;

/// Splits time-sorted rows at gaps. Errors (whole vehicle rejected) on
/// repeated timestamps or spacings shorter than the period.
fn split_vehicle(
    id: &str,
    rows: &[Row],
    period: Option<f64>,
) -> std::result::Result<Vec<Segment>, String> {
    let spacings: Vec<f64> = rows.windows(2).map(|w| w[1].time - w[0].time).collect();
    if let Some(s) = spacings.iter().find(|s| **s <= SPACING_TOL) {
        return Err(format!("non-monotone timestamps (spacing {s})"));
    }
    let period = match period {
        Some(p) => p,
        None => match spacings.iter().copied().reduce(f64::min) {
            Some(p) => p,
            None => return Err(format!("{} samples, need at least 3", rows.len())),
        },
    };
    if let Some(s) = spacings.iter().find(|s| **s < period - SPACING_TOL) {
        return Err(format!("spacing {s} shorter than sampling period {period}"));
    }

    let mut bounds = vec![0];
    for (i, s) in spacings.iter().enumerate() {
        if (s - period).abs() > SPACING_TOL {
            bounds.push(i + 1);
        }
    }
    bounds.push(rows.len());
    let multi = bounds.len() > 2;
    Ok(bounds
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let seg_id = if multi && k > 0 {
                format!("{id}#{k}")
            } else {
                id.to_string()
            };
            let rows = &rows[w[0]..w[1]];
            let samples: Vec<_> = rows
                .iter()
                .map(|r| TrajectorySample::new(r.time, r.position))
                .collect();
            Trajectory::new(seg_id.clone(), samples, period)
                .map(|t| t.with_lane(rows[0].lane))
                .map_err(|e| RejectedVehicle {
                    vehicle_id: seg_id,
                    reason: e.to_string(),
                })
        })
        .collect())
}

/// Writes the normalized corpus CSV (`vehicle_id,time_s,position_ft`),
/// preceded by `# `-prefixed comment lines.
pub fn write_corpus_csv<W: Write>(
    corpus: &TrajectoryCorpus,
    mut out: W,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "vehicle_id,time_s,position_ft")?;
    for t in corpus.trajectories() {
        for s in t.samples() {
            writeln!(
                out,
                "{},{},{}",
                t.vehicle_id(),
                sig12(s.time),
                sig12(s.position)
            )?;
        }
    }
    Ok(())
}

/// Reads the normalized corpus CSV written by [`write_corpus_csv`].
pub fn read_corpus_csv<R: Read>(source: R) -> Result<(TrajectoryCorpus, IngestReport)> {
    parse_ngsim_csv(source, &ColumnMap::normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ngsim(rows: &[&str]) -> String {
        let mut s = String::from("Vehicle_ID,Frame_Time,Local_Y,Lane_ID\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn minimal_stream() {
        let csv = ngsim(&["1,0.0,0,2", "1,0.1,1,2", "1,0.2,2,2"]);
        let (c, r) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(c.len(), 1);
        let t = &c.trajectories()[0];
        assert!((t.native_period() - 0.1).abs() < 1e-12);
        assert_eq!(t.lane(), Some(2));
        assert_eq!(r.rejected.len(), 0);
    }

    #[test]
    fn shuffled_rows_give_same_corpus() {
        let a = ngsim(&["1,0.0,0,2", "1,0.1,1,2", "1,0.2,2,2"]);
        let b = ngsim(&["1,0.2,2,2", "1,0.0,0,2", "1,0.1,1,2"]);
        let (ca, _) = parse_ngsim_csv(a.as_bytes(), &ColumnMap::default()).unwrap();
        let (cb, _) = parse_ngsim_csv(b.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn two_sample_vehicle_rejected() {
        let csv = ngsim(&[
            "1,0.0,0,2",
            "1,0.1,1,2",
            "1,0.2,2,2",
            "7,0.0,5,3",
            "7,0.1,6,3",
        ]);
        let (c, r) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].vehicle_id, "7");
    }

    #[test]
    fn missing_column_is_hard_error() {
        let csv = "Vehicle_ID,Frame_Time,Lane_ID\n1,0,1\n";
        let err = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "Local_Y"));
    }

    #[test]
    fn frame_id_fallback() {
        let csv = "Vehicle_ID,Frame_ID,Local_Y\n4,10,0\n4,11,3\n4,12,6\n";
        let (c, _) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        let t = &c.trajectories()[0];
        assert!((t.samples()[0].time - 1.0).abs() < 1e-12);
        assert!((t.native_period() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duplicate_timestamps_reject_vehicle() {
        let csv = ngsim(&["1,0.0,0,2", "1,0.1,1,2", "1,0.1,1.5,2", "1,0.2,2,2"]);
        let (c, r) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert!(c.is_empty());
        assert!(r.rejected[0].reason.contains("non-monotone"));
    }

    #[test]
    fn gaps_split_vehicle() {
        let csv = ngsim(&[
            "1,0.0,0,2",
            "1,0.1,1,2",
            "1,0.2,2,2",
            "1,0.5,5,2",
            "1,0.6,6,2",
            "1,0.7,7,2",
        ]);
        let (c, r) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(r.gap_splits, 1);
        assert!(c.get("1").is_some() && c.get("1#1").is_some());
    }

    #[test]
    fn lane_filter_drops_rows() {
        let csv = ngsim(&[
            "1,0.0,0,1",
            "1,0.1,1,1",
            "1,0.2,2,1",
            "2,0.0,0,3",
            "2,0.1,1,3",
            "2,0.2,2,3",
        ]);
        let map = ColumnMap {
            lane_filter: LaneFilter {
                include: None,
                exclude: vec![1, 6],
            },
            ..ColumnMap::default()
        };
        let (c, r) = parse_ngsim_csv(csv.as_bytes(), &map).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(r.lane_filtered_rows, 3);
    }

    #[test]
    fn unparsable_rows_counted() {
        let csv = ngsim(&["1,0.0,0,2", "1,abc,1,2", "1,0.1,1,2", "1,0.2,2,2"]);
        let (c, r) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(r.unparsable_rows, 1);
        assert_eq!(r.unparsable_examples[0].0, 3);
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        let csv = ngsim(&[
            "10,0.0,0,2",
            "10,0.1,1,2",
            "10,0.2,2,2",
            "9,0.0,0,2",
            "9,0.1,1,2",
            "9,0.2,2,2",
        ]);
        let (c, _) = parse_ngsim_csv(csv.as_bytes(), &ColumnMap::default()).unwrap();
        let ids: Vec<_> = c.trajectories().iter().map(|t| t.vehicle_id()).collect();
        assert_eq!(ids, ["9", "10"]);
    }

    #[test]
    fn trajectory_rejects_uneven_spacing() {
        let s = vec![
            TrajectorySample::new(0.0, 0.0),
            TrajectorySample::new(0.1, 1.0),
            TrajectorySample::new(0.3, 2.0),
        ];
        assert!(Trajectory::new("x", s, 0.1).is_err());
    }
}
