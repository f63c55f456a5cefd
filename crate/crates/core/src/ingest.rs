//! Broker CSV ingestion, record filtering and trajectory construction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, FixedOffset, NaiveDateTime, SecondsFormat, TimeDelta, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, GeoPoint};

/// Maritime Mobile Service Identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mmsi(pub u32);

impl Mmsi {
    pub const MAX: u32 = 999_999_999;

    pub fn parse(s: &str) -> Option<Mmsi> {
        let s = s.trim();
        if s.is_empty() || s.len() > 9 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        s.parse().ok().filter(|&v| v > 0).map(Mmsi)
    }
}

impl fmt::Display for Mmsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One timestamped GPS fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    pub timestamp: DateTime<Utc>,
    pub mmsi: Mmsi,
    pub lat: f64,
    pub lon: f64,
    pub sog: Option<f64>,
    pub cog: Option<f64>,
    pub nav_status: Option<u8>,
}

impl PositionRecord {
    /// Builds a record, rejecting out-of-range coordinates (which includes
    /// the 91/181 "unavailable" sentinels) and the Unix epoch placeholder.
    pub fn new(timestamp: DateTime<Utc>, mmsi: Mmsi, lat: f64, lon: f64) -> Option<Self> {
        GeoPoint::new(lat, lon)?;
        if timestamp.timestamp() == 0 && timestamp.timestamp_subsec_nanos() == 0 {
            return None;
        }
        Some(PositionRecord {
            timestamp,
            mmsi,
            lat,
            lon,
            sog: None,
            cog: None,
            nav_status: None,
        })
    }

    pub fn with_kinematics(
        mut self,
        sog: Option<f64>,
        cog: Option<f64>,
        nav_status: Option<u8>,
    ) -> Self {
        self.sog = sog.filter(|v| v.is_finite() && *v >= 0.0);
        self.cog = cog.filter(|v| v.is_finite() && (0.0..360.0).contains(v));
        self.nav_status = nav_status.filter(|v| *v <= 15);
        self
    }

    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// Time-ordered fixes of a single vessel with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `None` only for an empty trajectory.
    pub mmsi: Option<Mmsi>,
    pub records: Vec<PositionRecord>,
    pub source: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Checks the ordering and identity invariants.
    pub fn is_well_formed(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].timestamp < w[1].timestamp)
            && self.records.iter().all(|r| Some(r.mmsi) == self.mmsi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl AnalysisWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if start >= end {
            return Err(Error::Config(format!(
                "analysis window start {start} is not before end {end}"
            )));
        }
        Ok(AnalysisWindow { start, end })
    }

    /// Window length. Inclusive of both ends.
    pub fn length(&self) -> TimeDelta {
        self.end - self.start
    }

    pub fn contains(&self, ts: DateTime<Utc>) -> bool {
        self.start <= ts && ts <= self.end
    }
}

/// Latitude/longitude rectangle, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }

    pub fn contains_record(&self, r: &PositionRecord) -> bool {
        self.contains(r.lat, r.lon)
    }

    /// Square box of `half_width_m` around a seed point.
    pub fn around(center: GeoPoint, half_width_m: f64) -> BBox {
        let sw = crate::geo::offset(center, -half_width_m, -half_width_m);
        let ne = crate::geo::offset(center, half_width_m, half_width_m);
        BBox {
            min_lat: sw.lat,
            max_lat: ne.lat,
            min_lon: sw.lon,
            max_lon: ne.lon,
        }
    }
}

/// Timestamp layout of a CSV source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// RFC 3339 / ISO-8601 with an explicit zone.
    Iso8601,
    /// A chrono `strftime` pattern for naive local timestamps.
    Pattern(String),
}

/// Maps source column names onto record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub mmsi: String,
    pub lat: String,
    pub lon: String,
    pub sog: Option<String>,
    pub cog: Option<String>,
    pub nav_status: Option<String>,
    pub timestamp_format: TimestampFormat,
    /// Offset of naive broker timestamps from UTC, in minutes. Ignored for
    /// ISO-8601 input, which carries its own zone.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl ColumnMap {
    /// Danish Maritime Authority export layout.
    pub fn danish_maritime_authority() -> Self {
        ColumnMap {
            timestamp: "# Timestamp".into(),
            mmsi: "MMSI".into(),
            lat: "Latitude".into(),
            lon: "Longitude".into(),
            sog: Some("SOG".into()),
            cog: Some("COG".into()),
            nav_status: Some("Navigational status".into()),
            timestamp_format: TimestampFormat::Pattern("%d/%m/%Y %H:%M:%S".into()),
            utc_offset_minutes: 0,
        }
    }

    /// The canonical interchange layout written by [`write_interchange`].
    pub fn interchange() -> Self {
        ColumnMap {
            timestamp: "timestamp_utc".into(),
            mmsi: "mmsi".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            sog: Some("sog".into()),
            cog: Some("cog".into()),
            nav_status: Some("nav_status".into()),
            timestamp_format: TimestampFormat::Iso8601,
            utc_offset_minutes: 0,
        }
    }

    fn parse_timestamp(&self, s: &str) -> Option<DateTime<Utc>> {
        let s = s.trim();
        match &self.timestamp_format {
            TimestampFormat::Iso8601 => DateTime::parse_from_rfc3339(s)
                .ok()
                .map(|t| t.with_timezone(&Utc))
                .or_else(|| {
                    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                        .ok()
                        .map(|n| n.and_utc())
                }),
            TimestampFormat::Pattern(p) => {
                let naive = NaiveDateTime::parse_from_str(s, p).ok()?;
                let offset = FixedOffset::east_opt(self.utc_offset_minutes * 60)?;
                offset
                    .from_local_datetime(&naive)
                    .single()
                    .map(|t| t.with_timezone(&Utc))
            }
        }
    }
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::danish_maritime_authority()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    UnparseableTimestamp,
    CoordinateOutOfRange,
    MalformedMmsi,
    MalformedRow,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::UnparseableTimestamp => "unparseable timestamp",
            SkipReason::CoordinateOutOfRange => "coordinate out of range",
            SkipReason::MalformedMmsi => "malformed MMSI",
            SkipReason::MalformedRow => "malformed row",
        })
    }
}

/// Row accounting for one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_in: usize,
    pub records_out: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
}

impl IngestStats {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    /// rows_in = records_out + skips.
    pub fn is_balanced(&self) -> bool {
        self.rows_in == self.records_out + self.skipped_total()
    }

    fn skip(&mut self, reason: SkipReason) {
        *self.skipped.entry(reason).or_default() += 1;
    }
}

/// Maps the textual navigational status used by some brokers onto the
/// ITU code. Numeric strings are accepted as-is.
pub fn nav_status_code(s: &str) -> Option<u8> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u8>() {
        return (v <= 15).then_some(v);
    }
    let code = match s.to_ascii_lowercase().as_str() {
        "under way using engine" => 0,
        "at anchor" => 1,
        "not under command" => 2,
        "restricted manoeuverability"
        | "restricted maneuverability"
        | "restricted manoeuvrability" => 3,
        "constrained by her draught" => 4,
        "moored" => 5,
        "aground" => 6,
        "engaged in fishing" => 7,
        "under way sailing" => 8,
        "reserved for future amendment [hsc]" => 9,
        "reserved for future amendment [wig]" => 10,
        "power-driven vessel towing astern" => 11,
        "power-driven vessel pushing ahead or towing alongside" => 12,
        "reserved for future use" => 13,
        "ais-sart" | "ais-sart (active)" => 14,
        "unknown value" | "undefined" => 15,
        _ => return None,
    };
    Some(code)
}

fn parse_opt_f64(s: Option<&str>) -> Option<f64> {
    s.map(str::trim)
        .filter(|s| !s.is_empty())
        .and_then(|s| s.parse().ok())
}

/// Parses a broker CSV into records. Rows that fail validation are counted
/// by reason and skipped; a missing mapped column fails before any row is read.
pub fn parse_csv<R: Read>(input: R, map: &ColumnMap) -> Result<(Vec<PositionRecord>, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let optional =
        |name: &Option<String>| -> Result<Option<usize>> { name.as_deref().map(index).transpose() };

    let ts_i = index(&map.timestamp)?;
    let mmsi_i = index(&map.mmsi)?;
    let lat_i = index(&map.lat)?;
    let lon_i = index(&map.lon)?;
    let sog_i = optional(&map.sog)?;
    let cog_i = optional(&map.cog)?;
    let nav_i = optional(&map.nav_status)?;

    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    for row in reader.records() {
        stats.rows_in += 1;
        let row = match row {
            Ok(row) => row,
            Err(_) => {
                stats.skip(SkipReason::MalformedRow);
                continue;
            }
        };
        let Some(timestamp) = row.get(ts_i).and_then(|s| map.parse_timestamp(s)) else {
            stats.skip(SkipReason::UnparseableTimestamp);
            continue;
        };
        let Some(mmsi) = row.get(mmsi_i).and_then(Mmsi::parse) else {
            stats.skip(SkipReason::MalformedMmsi);
            continue;
        };
        let lat = parse_opt_f64(row.get(lat_i));
        let lon = parse_opt_f64(row.get(lon_i));
        let record = match (lat, lon) {
            (Some(lat), Some(lon)) => PositionRecord::new(timestamp, mmsi, lat, lon),
            _ => None,
        };
        let Some(record) = record else {
            if timestamp.timestamp() == 0 {
                stats.skip(SkipReason::UnparseableTimestamp);
            } else {
                stats.skip(SkipReason::CoordinateOutOfRange);
            }
            continue;
        };
        let field = |i: Option<usize>| i.and_then(|i| row.get(i));
        records.push(record.with_kinematics(
            parse_opt_f64(field(sog_i)),
            parse_opt_f64(field(cog_i)),
            field(nav_i).and_then(nav_status_code),
        ));
    }
    stats.records_out = records.len();
    debug_assert!(stats.is_balanced());
    Ok((records, stats))
}

/// Keeps the records of one vessel inside the window and, if given, the box.
pub fn filter_records(
    records: &[PositionRecord],
    mmsi: Mmsi,
    window: &AnalysisWindow,
    bbox: Option<&BBox>,
) -> Vec<PositionRecord> {
    records
        .iter()
        .filter(|r| r.mmsi == mmsi && window.contains(r.timestamp))
        .filter(|r| bbox.is_none_or(|b| b.contains_record(r)))
        .cloned()
        .collect()
}

/// Sorts by time and collapses equal timestamps, keeping the first record
/// in input order.
pub fn build_trajectory(records: Vec<PositionRecord>) -> Result<Trajectory> {
    let Some(first) = records.first().map(|r| r.mmsi) else {
        return Ok(Trajectory::default());
    };
    if let Some(other) = records.iter().find(|r| r.mmsi != first) {
        return Err(Error::MixedMmsi {
            first: first.0,
            other: other.mmsi.0,
        });
    }
    let mut records = records;
    // stable, so the first of each equal-timestamp run stays in front
    records.sort_by_key(|r| r.timestamp);
    records.dedup_by(|later, earlier| later.timestamp == earlier.timestamp);
    Ok(Trajectory {
        mmsi: Some(first),
        records,
        source: String::new(),
    })
}

/// Drops records that would require the vessel to exceed `max_knots` since
/// the previous retained record. Returns the number dropped.
pub fn drop_teleports(traj: &mut Trajectory, max_knots: f64) -> usize {
    let max_mps = max_knots * 1852.0 / 3600.0;
    let before = traj.records.len();
    let mut kept: Vec<PositionRecord> = Vec::with_capacity(before);
    for r in traj.records.drain(..) {
        if let Some(prev) = kept.last() {
            let dt = seconds(r.timestamp - prev.timestamp);
            if dt > 0.0 && haversine(prev.point(), r.point()) / dt > max_mps {
                continue;
            }
        }
        kept.push(r);
    }
    traj.records = kept;
    before - traj.records.len()
}

pub(crate) fn seconds(d: TimeDelta) -> f64 {
    d.num_milliseconds() as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub n_records: usize,
    pub median_gap_s: f64,
    pub mean_gap_s: f64,
    /// Reciprocal of the median gap.
    pub rate_hz: f64,
    /// Largest gaps, largest first.
    pub largest_gaps: Vec<Gap>,
}

pub fn sampling_report(traj: &Trajectory, top_n: usize) -> Result<SamplingReport> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "sampling report needs at least 2 records, got {}",
            traj.len()
        )));
    }
    let mut gaps: Vec<Gap> = traj
        .records
        .windows(2)
        .map(|w| Gap {
            from: w[0].timestamp,
            to: w[1].timestamp,
            seconds: seconds(w[1].timestamp - w[0].timestamp),
        })
        .collect();
    let mut secs: Vec<f64> = gaps.iter().map(|g| g.seconds).collect();
    let mean_gap_s = secs.iter().sum::<f64>() / secs.len() as f64;
    secs.sort_by(f64::total_cmp);
    let median_gap_s = crate::analytics::median_sorted(&secs);
    gaps.sort_by(|a, b| b.seconds.total_cmp(&a.seconds).then(a.from.cmp(&b.from)));
    gaps.truncate(top_n);
    Ok(SamplingReport {
        n_records: traj.len(),
        median_gap_s,
        mean_gap_s,
        rate_hz: if median_gap_s > 0.0 {
            1.0 / median_gap_s
        } else {
            f64::INFINITY
        },
        largest_gaps: gaps,
    })
}

pub fn format_utc(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes records in the canonical interchange layout.
pub fn write_interchange<W: Write>(records: &[PositionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "timestamp_utc",
        "mmsi",
        "lat",
        "lon",
        "sog",
        "cog",
        "nav_status",
    ])?;
    for r in records {
        w.write_record([
            format_utc(r.timestamp),
            r.mmsi.to_string(),
            r.lat.to_string(),
            r.lon.to_string(),
            opt(r.sog),
            opt(r.cog),
            opt(r.nav_status),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<interchange>", e))?;
    Ok(())
}

pub fn read_interchange<R: Read>(input: R) -> Result<(Vec<PositionRecord>, IngestStats)> {
    parse_csv(input, &ColumnMap::interchange())
}
