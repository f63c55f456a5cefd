//! Per-farm configuration and the end-to-end analysis run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{
    cumulative_histogram, duration_stats, farm_stats, hours, naive_average, read_wind_csv,
    time_share, wind_join, DurationStats, FarmStats, TimeShare, WindJoin,
};
use crate::clustering::{
    discard_path_clusters, drop_coincident, refine_center, restarts, select_k, ClusterModel,
    ClusterVerdict, KMeansParams,
};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::ingest::{
    build_trajectory, drop_teleports, filter_records, format_utc, parse_csv, sampling_report,
    AnalysisWindow, BBox, ColumnMap, IngestStats, Mmsi, PositionRecord, SamplingReport, Trajectory,
};
use crate::nmea::{decode_reader, DecodeStats, DecoderConfig};
use crate::segmentation::{
    aggregate_installation, compute_transit, detect_harbor, extract_dwell_segments, label_points,
    DwellKind, DwellSegment, HarborHint, HarborParams, InstallationRecord, LabelCounts, PointLabel,
    DEFAULT_RADIUS_M,
};
use crate::synth::{CampaignScript, GroundTruth};

pub const REASON_HARBOR: &str = "inside harbor region";

fn default_extra() -> usize {
    5
}
fn default_restarts() -> usize {
    4
}
fn default_radius() -> f64 {
    DEFAULT_RADIUS_M
}
fn default_min_duration() -> f64 {
    1.0
}
fn default_harbor_k() -> usize {
    4
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarborConfig {
    pub hint: HarborHint,
    #[serde(default = "default_harbor_k")]
    pub k: usize,
    #[serde(default)]
    pub min_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    #[serde(default)]
    pub ais_csv: Vec<PathBuf>,
    #[serde(default)]
    pub aivdm: Vec<PathBuf>,
    #[serde(default)]
    pub wind_csv: Option<PathBuf>,
    /// Column layout of the AIS CSVs. Sniffed from the header when absent.
    #[serde(default)]
    pub column_map: Option<ColumnMap>,
}

/// One farm's analysis settings. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmConfig {
    pub name: String,
    pub mmsi: u32,
    pub window: AnalysisWindow,
    pub n_turbines: usize,
    #[serde(default = "default_extra")]
    pub extra_clusters: usize,
    /// First k-means seed; restarts use consecutive seeds from here.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    #[serde(default = "default_min_duration")]
    pub min_segment_duration_h: f64,
    /// Cluster discard threshold. `None` means 1 % of the clustered fixes.
    #[serde(default)]
    pub min_points: Option<usize>,
    pub harbor: HarborConfig,
    pub inputs: Inputs,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub bbox: Option<BBox>,
    /// Drop fixes implying a speed above this many knots.
    #[serde(default)]
    pub max_speed_knots: Option<f64>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub kmeans: KMeansParams,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub radius_m: Option<f64>,
    pub extra_clusters: Option<usize>,
    pub min_points: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub strict: bool,
}

impl FarmConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: FarmConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.radius_m {
            self.radius_m = r;
        }
        if let Some(e) = o.extra_clusters {
            self.extra_clusters = e;
        }
        if let Some(m) = o.min_points {
            self.min_points = Some(m);
        }
        if let Some(d) = &o.out_dir {
            // flags are relative to the working directory, not the config
            self.out_dir = std::path::absolute(d).unwrap_or_else(|_| d.clone());
        }
        self.strict |= o.strict;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_path(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.restarts as u64)
            .map(|i| self.seed.wrapping_add(i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        select_k(self.n_turbines, self.extra_clusters)?;
        if Mmsi::parse(&self.mmsi.to_string()).is_none() {
            return bad("mmsi must be a positive number of at most 9 digits");
        }
        if self.window.start >= self.window.end {
            return bad("window start must precede its end");
        }
        if !self.radius_m.is_finite()
            || self.radius_m <= 0.0
            || self.min_segment_duration_h.is_nan()
            || self.min_segment_duration_h < 0.0
        {
            return bad("radius_m must be positive and min_segment_duration_h non-negative");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.inputs.ais_csv.is_empty() && self.inputs.aivdm.is_empty() {
            return bad("no AIS input configured");
        }
        Ok(())
    }

    /// SHA-256 of the effective config, without the output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes everything read through it.
struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
    bytes: u64,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    /// Path as written in the config.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

fn open_hashed(cfg: &FarmConfig, p: &Path) -> Result<HashingReader<BufReader<File>>> {
    let full = cfg.resolve(p);
    let f = File::open(&full).map_err(|e| Error::io(&full, e))?;
    Ok(HashingReader {
        inner: BufReader::with_capacity(1 << 16, f),
        hasher: Sha256::new(),
        bytes: 0,
    })
}

fn finish_hashed<R: Read>(mut r: HashingReader<R>, p: &Path) -> Result<InputDigest> {
    // drain whatever the parser left unread so the digest covers the file
    std::io::copy(&mut r, &mut std::io::sink()).map_err(|e| Error::io(p, e))?;
    Ok(InputDigest {
        path: p.to_path_buf(),
        sha256: hex::encode(r.hasher.finalize()),
        bytes: r.bytes,
    })
}

fn sniff_column_map(path: &Path) -> Result<ColumnMap> {
    let mut first = String::new();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufRead::read_line(&mut BufReader::new(f), &mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(
        if first
            .trim_start_matches('\u{feff}')
            .starts_with("timestamp_utc")
        {
            ColumnMap::interchange()
        } else {
            ColumnMap::danish_maritime_authority()
        },
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub csv: BTreeMap<String, IngestStats>,
    pub aivdm: BTreeMap<String, DecodeStats>,
    pub records_read: usize,
    pub records_selected: usize,
    pub trajectory_len: usize,
    pub teleports_dropped: usize,
    pub sampling: Option<SamplingReport>,
}

struct Loaded {
    records: Vec<PositionRecord>,
    summary: IngestSummary,
    digests: Vec<InputDigest>,
}

fn load_inputs(cfg: &FarmConfig) -> Result<Loaded> {
    let mut records = Vec::new();
    let mut summary = IngestSummary::default();
    let mut digests = Vec::new();
    for p in &cfg.inputs.ais_csv {
        let map = match &cfg.inputs.column_map {
            Some(m) => m.clone(),
            None => sniff_column_map(&cfg.resolve(p))?,
        };
        let mut reader = open_hashed(cfg, p)?;
        let (recs, stats) = parse_csv(&mut reader, &map)?;
        log::info!(
            "{}: {} records, {} rows skipped",
            p.display(),
            recs.len(),
            stats.skipped_total()
        );
        records.extend(recs);
        summary.csv.insert(p.display().to_string(), stats);
        digests.push(finish_hashed(reader, p)?);
    }
    for p in &cfg.inputs.aivdm {
        let mut reader = open_hashed(cfg, p)?;
        let decoder = DecoderConfig {
            strict: cfg.strict,
            ..DecoderConfig::default()
        };
        let (recs, stats) = decode_reader(BufReader::new(&mut reader), decoder)?;
        log::info!(
            "{}: {} records from {} sentences",
            p.display(),
            recs.len(),
            stats.sentences
        );
        records.extend(recs);
        summary.aivdm.insert(p.display().to_string(), stats);
        digests.push(finish_hashed(reader, p)?);
    }
    summary.records_read = records.len();
    Ok(Loaded {
        records,
        summary,
        digests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstallationRow {
    pub cluster_id: usize,
    pub center: GeoPoint,
    pub total_h: f64,
    pub uncertainty_hi_h: f64,
    pub n_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub best_seed: u64,
    pub n_points: usize,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub min_points: usize,
    pub kept: usize,
    pub discarded: usize,
}

/// A contiguous harbor stay, possibly spanning several berths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortCall {
    pub enter: DateTime<Utc>,
    pub exit: DateTime<Utc>,
}

impl PortCall {
    pub fn duration(&self) -> TimeDelta {
        self.exit - self.enter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarborSummary {
    pub berths: Vec<GeoPoint>,
    pub port_calls: Vec<PortCall>,
    pub total_h: f64,
    pub stats: Option<DurationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputDigest>,
    /// Wall-clock time of the run; left out of the report hash.
    pub generated_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub farm: String,
    pub mmsi: u32,
    pub window: AnalysisWindow,
    pub window_h: f64,
    pub n_turbines: usize,
    pub radius_m: f64,
    pub min_segment_duration_h: f64,
    pub provenance: Provenance,
    pub ingest: IngestSummary,
    pub clustering: ClusteringSummary,
    pub installations: Vec<InstallationRow>,
    pub farm_stats: Option<FarmStats>,
    pub harbor: HarborSummary,
    pub time_share: TimeShare,
    pub naive_average_h: f64,
    /// Naive average relative to the measured farm average, in percent.
    pub naive_excess_pct: Option<f64>,
    pub histogram: Vec<(f64, f64)>,
    pub wind: Option<WindJoin>,
    pub labels: LabelCounts,
    pub warnings: Vec<String>,
}

impl Report {
    /// SHA-256 of the report with the run timestamp blanked.
    pub fn hash(&self) -> String {
        let mut r = self.clone();
        r.provenance.generated_at = None;
        sha256_hex(&serde_json::to_vec(&r).expect("report serializes"))
    }
}

/// Everything an analysis produced, including the per-fix tables.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: Report,
    pub trajectory: Trajectory,
    pub model: ClusterModel,
    pub verdicts: Vec<ClusterVerdict>,
    pub installations: Vec<InstallationRecord>,
    /// Every installation segment, including those below the duration filter.
    pub installation_segments: Vec<DwellSegment>,
    pub harbor_model: Option<ClusterModel>,
    pub harbor_verdicts: Vec<ClusterVerdict>,
    pub harbor_segments: Vec<DwellSegment>,
    pub labels: Vec<PointLabel>,
}

/// Union of possibly overlapping segments, in time order.
fn union_intervals(segments: &[DwellSegment]) -> Vec<PortCall> {
    let mut spans: Vec<(DateTime<Utc>, DateTime<Utc>)> =
        segments.iter().map(|s| (s.enter, s.exit)).collect();
    spans.sort();
    let mut out: Vec<PortCall> = Vec::new();
    for (enter, exit) in spans {
        match out.last_mut() {
            Some(last) if enter <= last.exit => last.exit = last.exit.max(exit),
            _ => out.push(PortCall { enter, exit }),
        }
    }
    out
}

fn note(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// Runs ingest, clustering, segmentation and analytics for one farm.
pub fn analyze(cfg: &FarmConfig) -> Result<Analysis> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let loaded = load_inputs(cfg)?;
    let mut summary = loaded.summary;
    let selected = filter_records(
        &loaded.records,
        Mmsi(cfg.mmsi),
        &cfg.window,
        cfg.bbox.as_ref(),
    );
    drop(loaded.records);
    summary.records_selected = selected.len();
    let mut traj = build_trajectory(selected)?.with_source(cfg.name.clone());
    if let Some(max) = cfg.max_speed_knots {
        summary.teleports_dropped = drop_teleports(&mut traj, max);
    }
    summary.trajectory_len = traj.len();
    if traj.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no fixes for MMSI {} inside the analysis window",
            cfg.mmsi
        )));
    }
    summary.sampling = sampling_report(&traj, 10).ok();

    let k = select_k(cfg.n_turbines, cfg.extra_clusters)?;
    let points: Vec<GeoPoint> = traj.records.iter().map(PositionRecord::point).collect();
    let seeds = cfg.seeds();
    let model = restarts(&points, k, &seeds, &cfg.kmeans)?;
    let min_points = cfg
        .min_points
        .unwrap_or_else(|| (points.len() as f64 * 0.01).ceil() as usize);
    let mut verdicts = discard_path_clusters(&model, &traj.records, min_points, cfg.radius_m);
    let harbor_box = cfg.harbor.hint.bbox();
    for v in verdicts.iter_mut().filter(|v| v.kept) {
        let c = model.centers[v.cluster];
        if harbor_box.contains(c.lat, c.lon) {
            v.kept = false;
            v.reason = REASON_HARBOR.to_string();
        }
    }
    drop_coincident(&mut verdicts, &model.centers, cfg.radius_m);

    let min_dur =
        TimeDelta::milliseconds((cfg.min_segment_duration_h * 3_600_000.0).round() as i64);
    let mut installation_segments = Vec::new();
    let mut installations = Vec::new();
    let mut members: Vec<Vec<GeoPoint>> = vec![Vec::new(); model.k];
    for (p, &a) in points.iter().zip(&model.assignments) {
        if verdicts[a].kept {
            members[a].push(*p);
        }
    }
    for v in verdicts.iter().filter(|v| v.kept) {
        let center = refine_center(&members[v.cluster], model.centers[v.cluster], cfg.radius_m);
        let segs = extract_dwell_segments(
            &traj.records,
            center,
            cfg.radius_m,
            DwellKind::Installation,
            v.cluster,
        );
        let long: Vec<DwellSegment> = segs
            .iter()
            .filter(|s| s.duration() >= min_dur)
            .cloned()
            .collect();
        installation_segments.extend(segs);
        match aggregate_installation(v.cluster, center, long) {
            Some(rec) => installations.push(rec),
            None => note(
                &mut warnings,
                format!(
                    "cluster {} has no dwell segment of at least {} h",
                    v.cluster, cfg.min_segment_duration_h
                ),
            ),
        }
    }
    installation_segments.sort_by_key(|s| (s.enter, s.cluster_id));

    let harbor_params = HarborParams {
        k: cfg.harbor.k,
        min_points: cfg.harbor.min_points,
        radius_m: cfg.radius_m,
        seeds: seeds.clone(),
        kmeans: cfg.kmeans,
    };
    let harbor = detect_harbor(&traj, &cfg.harbor.hint, &harbor_params)?;
    if harbor.berths.is_empty() {
        note(
            &mut warnings,
            "no berth found inside the harbor hint region".into(),
        );
    }
    let long_harbor: Vec<DwellSegment> = harbor
        .segments
        .iter()
        .filter(|s| s.duration() >= min_dur)
        .cloned()
        .collect();
    let port_calls = union_intervals(&long_harbor);
    let harbor_total: TimeDelta = port_calls.iter().map(PortCall::duration).sum();
    let installation_total: TimeDelta = installations.iter().map(|i| i.total_duration).sum();
    compute_transit(&cfg.window, installation_total, harbor_total)?;
    let share = time_share(&cfg.window, installation_total, harbor_total)?;

    let durations: Vec<f64> = installations
        .iter()
        .map(InstallationRecord::total_h)
        .collect();
    let farm = if durations.is_empty() {
        note(&mut warnings, "no installation identified".into());
        None
    } else {
        let f = farm_stats(&durations, cfg.n_turbines)?;
        if f.median_h > f.avg_h {
            // already logged by farm_stats
            warnings.push(format!(
                "median {:.2} h exceeds average {:.2} h",
                f.median_h, f.avg_h
            ));
        }
        Some(f)
    };
    let histogram = if durations.is_empty() {
        Vec::new()
    } else {
        cumulative_histogram(&durations)?
    };
    let naive = naive_average(&cfg.window, cfg.n_turbines)?;
    let naive_excess_pct = farm
        .as_ref()
        .filter(|f| f.avg_h > 0.0)
        .map(|f| (naive / f.avg_h - 1.0) * 100.0);
    let call_hours: Vec<f64> = port_calls.iter().map(|p| hours(p.duration())).collect();
    let harbor_summary = HarborSummary {
        berths: harbor.berths.iter().map(|&(_, c)| c).collect(),
        port_calls: port_calls.clone(),
        total_h: hours(harbor_total),
        stats: duration_stats(&call_hours).ok(),
    };

    let wind = match &cfg.inputs.wind_csv {
        None => None,
        Some(p) => {
            let mut reader = open_hashed(cfg, p)?;
            let samples = read_wind_csv(&mut reader)?;
            let join = wind_join(&installations, &samples)?;
            if !join.flagged.is_empty() {
                note(
                    &mut warnings,
                    format!("{} installations have no wind samples", join.flagged.len()),
                );
            }
            let digest = finish_hashed(reader, p)?;
            let mut digests = loaded.digests.clone();
            digests.push(digest);
            Some((join, digests))
        }
    };
    let (wind, digests) = match wind {
        Some((j, d)) => (Some(j), d),
        None => (None, loaded.digests),
    };

    let inst_centers: Vec<GeoPoint> = installations.iter().map(|i| i.center).collect();
    let labels = label_points(
        &traj.records,
        &inst_centers,
        &harbor_summary.berths,
        cfg.radius_m,
    );

    let kept = verdicts.iter().filter(|v| v.kept).count();
    let report = Report {
        farm: cfg.name.clone(),
        mmsi: cfg.mmsi,
        window: cfg.window,
        window_h: hours(cfg.window.length()),
        n_turbines: cfg.n_turbines,
        radius_m: cfg.radius_m,
        min_segment_duration_h: cfg.min_segment_duration_h,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.digest(),
            seeds: seeds.clone(),
            inputs: digests,
            generated_at: Some(format_utc(Utc::now())),
        },
        ingest: summary,
        clustering: ClusteringSummary {
            k,
            seeds,
            best_seed: model.seed,
            n_points: points.len(),
            inertia: model.inertia,
            iterations_run: model.iterations_run,
            converged: model.converged,
            min_points,
            kept,
            discarded: verdicts.len() - kept,
        },
        installations: installations
            .iter()
            .map(|i| InstallationRow {
                cluster_id: i.cluster_id,
                center: i.center,
                total_h: i.total_h(),
                uncertainty_hi_h: i.uncertainty_hi_h(),
                n_segments: i.n_segments,
            })
            .collect(),
        farm_stats: farm,
        harbor: harbor_summary,
        time_share: share,
        naive_average_h: naive,
        naive_excess_pct,
        histogram,
        wind,
        labels: LabelCounts::of(&labels),
        warnings,
    };
    Ok(Analysis {
        report,
        trajectory: traj,
        model,
        verdicts,
        installations,
        installation_segments,
        harbor_model: harbor.model,
        harbor_verdicts: harbor.verdicts,
        harbor_segments: harbor.segments,
        labels,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let mut tmp = builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
    }
    Ok(buf)
}

pub const SEGMENTS_HEADER: [&str; 10] = [
    "kind",
    "cluster_id",
    "center_lat",
    "center_lon",
    "enter_utc",
    "exit_utc",
    "duration_h",
    "bracket_lo_utc",
    "bracket_hi_utc",
    "bracket_h",
];

fn segment_row(s: &DwellSegment, center: GeoPoint) -> Vec<String> {
    vec![
        s.kind.as_str().to_string(),
        s.cluster_id.to_string(),
        center.lat.to_string(),
        center.lon.to_string(),
        format_utc(s.enter),
        format_utc(s.exit),
        hours(s.duration()).to_string(),
        format_utc(s.bracket_lo),
        format_utc(s.bracket_hi),
        hours(s.bracket_width()).to_string(),
    ]
}

#[derive(Serialize)]
struct ModelExport<'a> {
    k: usize,
    seed: u64,
    centers: &'a [GeoPoint],
    counts: &'a [usize],
    inertia: f64,
    iterations_run: usize,
    converged: bool,
    objective_trace: &'a [f64],
    verdicts: &'a [ClusterVerdict],
    harbor: Option<HarborModelExport<'a>>,
}

#[derive(Serialize)]
struct HarborModelExport<'a> {
    k: usize,
    centers: &'a [GeoPoint],
    counts: &'a [usize],
    verdicts: &'a [ClusterVerdict],
}

pub fn summary_text(r: &Report) -> String {
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(&l);
        s.push('\n');
    };
    line(format!("farm {} / vessel {}", r.farm, r.mmsi));
    line(format!(
        "window {} .. {} ({:.1} h)",
        format_utc(r.window.start),
        format_utc(r.window.end),
        r.window_h
    ));
    line(format!(
        "fixes {} (read {}, selected {})",
        r.ingest.trajectory_len, r.ingest.records_read, r.ingest.records_selected
    ));
    line(format!(
        "clusters k={} kept={} discarded={} (min points {})",
        r.clustering.k, r.clustering.kept, r.clustering.discarded, r.clustering.min_points
    ));
    match &r.farm_stats {
        Some(f) => {
            line(format!(
                "turbines identified {}/{} ({}%)",
                f.n_identified, f.n_actual, f.coverage_pct
            ));
            line(format!(
                "installation time avg {:.1} h, sd {:.1} h, min {:.1} h, median {:.1} h, max {:.1} h",
                f.avg_h, f.sd_h, f.min_h, f.median_h, f.max_h
            ));
        }
        None => line("turbines identified 0".into()),
    }
    line(format!(
        "harbor: {} berths, {} port calls, {:.1} h",
        r.harbor.berths.len(),
        r.harbor.port_calls.len(),
        r.harbor.total_h
    ));
    let t = &r.time_share;
    line(format!(
        "time share: transit {:.1}%, installation {:.1}%, harbor {:.1}%",
        t.transit_pct, t.installation_pct, t.harbor_pct
    ));
    line(format!(
        "naive average {:.2} h per turbine",
        r.naive_average_h
    ));
    if let Some(x) = r.naive_excess_pct {
        line(format!("naive average exceeds measured average by {x:.1}%"));
    }
    for w in &r.warnings {
        line(format!("warning: {w}"));
    }
    line(format!("report sha256 {}", r.hash()));
    s
}

/// Files written by [`write_bundle`], relative to the output directory.
pub const BUNDLE_FILES: [&str; 14] = [
    "report.json",
    "report.sha256",
    "summary.txt",
    "model.json",
    "segments.csv",
    "assignments.csv",
    "labels.csv",
    "installations.csv",
    "farm_stats.csv",
    "harbor_stats.csv",
    "time_share.csv",
    "histogram.csv",
    "wind_join.csv",
    "nav_status.csv",
];

/// Writes the report, the model and every table into `out_dir`.
pub fn write_bundle(a: &Analysis, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let r = &a.report;
    let put = |name: &str, bytes: &[u8]| write_atomic(&out_dir.join(name), bytes);

    put("report.json", &serde_json::to_vec_pretty(r)?)?;
    put("report.sha256", format!("{}\n", r.hash()).as_bytes())?;
    put("summary.txt", summary_text(r).as_bytes())?;

    let harbor = a.harbor_model.as_ref().map(|m| HarborModelExport {
        k: m.k,
        centers: &m.centers,
        counts: &m.counts,
        verdicts: &a.harbor_verdicts,
    });
    let model = ModelExport {
        k: a.model.k,
        seed: a.model.seed,
        centers: &a.model.centers,
        counts: &a.model.counts,
        inertia: a.model.inertia,
        iterations_run: a.model.iterations_run,
        converged: a.model.converged,
        objective_trace: &a.model.objective_trace,
        verdicts: &a.verdicts,
        harbor,
    };
    put("model.json", &serde_json::to_vec_pretty(&model)?)?;

    let harbor_center = |id: usize| {
        a.harbor_model
            .as_ref()
            .map(|m| m.centers[id])
            .expect("harbor segments imply a harbor model")
    };
    put(
        "segments.csv",
        &csv_bytes(&SEGMENTS_HEADER, |w| {
            for s in &a.installation_segments {
                w.write_record(segment_row(s, a.model.centers[s.cluster_id]))?;
            }
            for s in &a.harbor_segments {
                w.write_record(segment_row(s, harbor_center(s.cluster_id)))?;
            }
            Ok(())
        })?,
    )?;

    let kept: Vec<bool> = a.verdicts.iter().map(|v| v.kept).collect();
    let recs = &a.trajectory.records;
    put(
        "assignments.csv",
        &csv_bytes(&["timestamp", "lat", "lon", "cluster", "kept"], |w| {
            for (rec, &c) in recs.iter().zip(&a.model.assignments) {
                w.write_record([
                    format_utc(rec.timestamp),
                    rec.lat.to_string(),
                    rec.lon.to_string(),
                    c.to_string(),
                    kept[c].to_string(),
                ])?;
            }
            Ok(())
        })?,
    )?;
    put(
        "labels.csv",
        &csv_bytes(&["timestamp", "lat", "lon", "label", "nav_status"], |w| {
            for l in &a.labels {
                let rec = &recs[l.record];
                w.write_record([
                    format_utc(rec.timestamp),
                    rec.lat.to_string(),
                    rec.lon.to_string(),
                    l.label.as_str().to_string(),
                    rec.nav_status.map(|n| n.to_string()).unwrap_or_default(),
                ])?;
            }
            Ok(())
        })?,
    )?;
    put(
        "installations.csv",
        &csv_bytes(
            &[
                "cluster_id",
                "center_lat",
                "center_lon",
                "total_h",
                "uncertainty_hi_h",
                "n_segments",
            ],
            |w| {
                for i in &r.installations {
                    w.write_record([
                        i.cluster_id.to_string(),
                        i.center.lat.to_string(),
                        i.center.lon.to_string(),
                        i.total_h.to_string(),
                        i.uncertainty_hi_h.to_string(),
                        i.n_segments.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?,
    )?;
    put(
        "farm_stats.csv",
        &csv_bytes(
            &[
                "n_identified",
                "avg_h",
                "sd_h",
                "min_h",
                "median_h",
                "max_h",
                "n_actual",
                "coverage_pct",
            ],
            |w| {
                if let Some(f) = &r.farm_stats {
                    w.write_record([
                        f.n_identified.to_string(),
                        f.avg_h.to_string(),
                        f.sd_h.to_string(),
                        f.min_h.to_string(),
                        f.median_h.to_string(),
                        f.max_h.to_string(),
                        f.n_actual.to_string(),
                        f.coverage_pct.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?,
    )?;
    put(
        "harbor_stats.csv",
        &csv_bytes(
            &[
                "n", "total_h", "avg_h", "sd_h", "min_h", "median_h", "max_h",
            ],
            |w| {
                if let Some(s) = &r.harbor.stats {
                    w.write_record([
                        s.n.to_string(),
                        s.total_h.to_string(),
                        s.avg_h.to_string(),
                        s.sd_h.to_string(),
                        s.min_h.to_string(),
                        s.median_h.to_string(),
                        s.max_h.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?,
    )?;
    let t = &r.time_share;
    put(
        "time_share.csv",
        &csv_bytes(&["activity", "hours", "share_pct"], |w| {
            for (name, h, p) in [
                ("transit", t.transit_h, t.transit_pct),
                ("installation", t.installation_h, t.installation_pct),
                ("harbor", t.harbor_h, t.harbor_pct),
                ("total", t.total_h, 100.0),
            ] {
                w.write_record([name.to_string(), h.to_string(), p.to_string()])?;
            }
            Ok(())
        })?,
    )?;
    put(
        "histogram.csv",
        &csv_bytes(&["duration_h", "cumulative_fraction"], |w| {
            for (d, f) in &r.histogram {
                w.write_record([d.to_string(), f.to_string()])?;
            }
            Ok(())
        })?,
    )?;
    put(
        "wind_join.csv",
        &csv_bytes(
            &["cluster_id", "avg_wind_mps", "n_samples", "duration_h"],
            |w| {
                for row in r.wind.iter().flat_map(|j| &j.rows) {
                    w.write_record([
                        row.cluster_id.to_string(),
                        row.avg_wind_mps.to_string(),
                        row.n_samples.to_string(),
                        row.duration_h.to_string(),
                    ])?;
                }
                Ok(())
            },
        )?,
    )?;
    // how the crew-set status relates to the measured activity
    let mut by_status: BTreeMap<(&str, Option<u8>), usize> = BTreeMap::new();
    for l in &a.labels {
        *by_status
            .entry((l.label.as_str(), recs[l.record].nav_status))
            .or_default() += 1;
    }
    put(
        "nav_status.csv",
        &csv_bytes(&["label", "nav_status", "fixes"], |w| {
            for ((label, status), n) in &by_status {
                w.write_record([
                    label.to_string(),
                    status.map(|s| s.to_string()).unwrap_or_default(),
                    n.to_string(),
                ])?;
            }
            Ok(())
        })?,
    )?;
    Ok(())
}

/// Runs [`analyze`] and writes the bundle to the configured output directory.
pub fn run_analyze(cfg: &FarmConfig) -> Result<Analysis> {
    let a = analyze(cfg)?;
    write_bundle(&a, &cfg.out_path())?;
    Ok(a)
}

/// A segment row read back from `segments.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub kind: String,
    pub cluster_id: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    pub enter_utc: DateTime<Utc>,
    pub exit_utc: DateTime<Utc>,
    pub duration_h: f64,
    pub bracket_lo_utc: DateTime<Utc>,
    pub bracket_hi_utc: DateTime<Utc>,
    pub bracket_h: f64,
}

pub fn read_segments<R: Read>(input: R) -> Result<Vec<SegmentRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub installations: Vec<InstallationRow>,
    pub farm_stats: Option<FarmStats>,
    pub harbor_total_h: f64,
    pub harbor_stats: Option<DurationStats>,
    pub histogram: Vec<(f64, f64)>,
    pub time_share: Option<TimeShare>,
    pub naive_average_h: Option<f64>,
}

/// Recomputes the analytics from exported segments, applying the same
/// duration filter as the full run.
pub fn stats_from_segments(
    rows: &[SegmentRow],
    n_turbines: usize,
    min_segment_duration_h: f64,
    window: Option<&AnalysisWindow>,
) -> Result<SegmentStats> {
    let min_dur = TimeDelta::milliseconds((min_segment_duration_h * 3_600_000.0).round() as i64);
    let long = rows.iter().filter(|r| r.exit_utc - r.enter_utc >= min_dur);
    let mut per_cluster: BTreeMap<usize, (GeoPoint, TimeDelta, TimeDelta, usize)> = BTreeMap::new();
    let mut harbor_segs = Vec::new();
    for r in long {
        let kind = match r.kind.as_str() {
            "installation" => DwellKind::Installation,
            "harbor" => DwellKind::Harbor,
            other => return Err(Error::Ingest(format!("unknown segment kind {other:?}"))),
        };
        let seg = DwellSegment {
            cluster_id: r.cluster_id,
            kind,
            enter: r.enter_utc,
            exit: r.exit_utc,
            bracket_lo: r.bracket_lo_utc,
            bracket_hi: r.bracket_hi_utc,
        };
        if !seg.is_ordered() {
            return Err(Error::Ingest(format!(
                "segment of cluster {} is not ordered",
                r.cluster_id
            )));
        }
        match kind {
            DwellKind::Installation => {
                let e = per_cluster.entry(r.cluster_id).or_insert((
                    GeoPoint {
                        lat: r.center_lat,
                        lon: r.center_lon,
                    },
                    TimeDelta::zero(),
                    TimeDelta::zero(),
                    0,
                ));
                e.1 += seg.duration();
                e.2 += seg.bracket_width();
                e.3 += 1;
            }
            DwellKind::Harbor => harbor_segs.push(seg),
        }
    }
    let installations: Vec<InstallationRow> = per_cluster
        .into_iter()
        .map(|(id, (center, total, hi, n))| InstallationRow {
            cluster_id: id,
            center,
            total_h: hours(total),
            uncertainty_hi_h: hours(hi),
            n_segments: n,
        })
        .collect();
    let durations: Vec<f64> = installations.iter().map(|i| i.total_h).collect();
    let calls = union_intervals(&harbor_segs);
    let harbor_total: TimeDelta = calls.iter().map(PortCall::duration).sum();
    let installation_total = TimeDelta::milliseconds(
        rows.iter()
            .filter(|r| r.kind == "installation" && r.exit_utc - r.enter_utc >= min_dur)
            .map(|r| (r.exit_utc - r.enter_utc).num_milliseconds())
            .sum(),
    );
    let call_hours: Vec<f64> = calls.iter().map(|c| hours(c.duration())).collect();
    let (time_share, naive_average_h) = match window {
        Some(w) => (
            Some(time_share(w, installation_total, harbor_total)?),
            Some(naive_average(w, n_turbines)?),
        ),
        None => (None, None),
    };
    Ok(SegmentStats {
        farm_stats: if durations.is_empty() {
            None
        } else {
            Some(farm_stats(&durations, n_turbines)?)
        },
        histogram: if durations.is_empty() {
            Vec::new()
        } else {
            cumulative_histogram(&durations)?
        },
        installations,
        harbor_total_h: hours(harbor_total),
        harbor_stats: duration_stats(&call_hours).ok(),
        time_share,
        naive_average_h,
    })
}

impl FarmConfig {
    /// A config that analyzes a generated campaign written to `csv`.
    pub fn for_campaign(script: &CampaignScript, truth: &GroundTruth, csv: PathBuf) -> FarmConfig {
        let shortest_h = script
            .site_dwell_h
            .as_ref()
            .and_then(|d| d.iter().copied().reduce(f64::min))
            .unwrap_or(script.dwell_h.min);
        // half the fixes of the shortest scripted dwell
        let min_points =
            (shortest_h * 3600.0 / script.sample_interval_s as f64 / 2.0).floor() as usize;
        FarmConfig {
            name: format!("synthetic-{}", script.seed),
            mmsi: script.mmsi,
            window: truth.window,
            n_turbines: script.n_sites,
            // the harbor corridor needs more than the usual handful of
            // path clusters before neighbouring sites stop sharing one
            extra_clusters: 20,
            seed: 0,
            restarts: default_restarts(),
            radius_m: script.radius_m,
            min_segment_duration_h: script.min_duration_h,
            min_points: Some(min_points.max(1)),
            harbor: HarborConfig {
                hint: HarborHint::Seed {
                    center: truth.berth,
                    half_width_m: 2000.0,
                },
                k: default_harbor_k(),
                min_points: None,
            },
            inputs: Inputs {
                ais_csv: vec![csv],
                column_map: Some(ColumnMap::interchange()),
                ..Inputs::default()
            },
            out_dir: default_out_dir(),
            bbox: None,
            max_speed_knots: None,
            strict: false,
            kmeans: KMeansParams::default(),
            base_dir: PathBuf::new(),
        }
    }
}
