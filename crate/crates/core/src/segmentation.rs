//! Radius-based dwell segmentation: installation and harbor stays, transit
//! residual and per-point activity labels.

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::hours;
use crate::clustering::{
    discard_path_clusters, drop_coincident, restarts, ClusterModel, ClusterVerdict, KMeansParams,
};
use crate::error::{Error, Result};
use crate::geo::{within, GeoPoint};
use crate::ingest::{AnalysisWindow, BBox, PositionRecord, Trajectory};

pub const DEFAULT_RADIUS_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwellKind {
    Installation,
    Harbor,
}

impl DwellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DwellKind::Installation => "installation",
            DwellKind::Harbor => "harbor",
        }
    }
}

/// One maximal run of consecutive fixes inside the radius of a center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellSegment {
    pub cluster_id: usize,
    pub kind: DwellKind,
    /// First in-radius fix.
    pub enter: DateTime<Utc>,
    /// Last in-radius fix.
    pub exit: DateTime<Utc>,
    /// Last fix before entry, or `enter` at the start of the trajectory.
    pub bracket_lo: DateTime<Utc>,
    /// First fix after exit, or `exit` at the end of the trajectory.
    pub bracket_hi: DateTime<Utc>,
}

impl DwellSegment {
    pub fn duration(&self) -> TimeDelta {
        self.exit - self.enter
    }

    pub fn bracket_width(&self) -> TimeDelta {
        self.bracket_hi - self.bracket_lo
    }

    pub fn is_ordered(&self) -> bool {
        self.bracket_lo <= self.enter && self.enter <= self.exit && self.exit <= self.bracket_hi
    }
}

/// Splits the trajectory into maximal runs of fixes within `radius_m` of
/// `center`. A run is only broken by an out-of-radius fix, never by a time
/// gap.
pub fn extract_dwell_segments(
    records: &[PositionRecord],
    center: GeoPoint,
    radius_m: f64,
    kind: DwellKind,
    cluster_id: usize,
) -> Vec<DwellSegment> {
    let inside: Vec<bool> = records
        .iter()
        .map(|r| within(r.point(), center, radius_m))
        .collect();
    runs(&inside)
        .map(|(a, b)| DwellSegment {
            cluster_id,
            kind,
            enter: records[a].timestamp,
            exit: records[b].timestamp,
            bracket_lo: records[a.saturating_sub(1)].timestamp,
            bracket_hi: records[(b + 1).min(records.len() - 1)].timestamp,
        })
        .collect()
}

/// Inclusive index ranges of the `true` runs.
fn runs(mask: &[bool]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < mask.len() && !mask[i] {
            i += 1;
        }
        if i == mask.len() {
            return None;
        }
        let start = i;
        while i < mask.len() && mask[i] {
            i += 1;
        }
        Some((start, i - 1))
    })
}

/// Cumulative dwell at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstallationRecord {
    pub cluster_id: usize,
    pub center: GeoPoint,
    pub segments: Vec<DwellSegment>,
    pub total_duration: TimeDelta,
    /// Sum of bracket widths; an upper bound on the true total.
    pub uncertainty_hi: TimeDelta,
    pub n_segments: usize,
}

impl InstallationRecord {
    pub fn total_h(&self) -> f64 {
        hours(self.total_duration)
    }

    pub fn uncertainty_hi_h(&self) -> f64 {
        hours(self.uncertainty_hi)
    }
}

/// Sums the segments of one location. Returns `None` for no segments.
pub fn aggregate_installation(
    cluster_id: usize,
    center: GeoPoint,
    segments: Vec<DwellSegment>,
) -> Option<InstallationRecord> {
    if segments.is_empty() {
        return None;
    }
    debug_assert!(segments.iter().all(|s| s.cluster_id == cluster_id));
    let total_duration = segments.iter().map(DwellSegment::duration).sum();
    let uncertainty_hi = segments.iter().map(DwellSegment::bracket_width).sum();
    Some(InstallationRecord {
        cluster_id,
        center,
        n_segments: segments.len(),
        segments,
        total_duration,
        uncertainty_hi,
    })
}

/// Region in which harbor stays are searched for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarborHint {
    #[serde(rename = "bbox")]
    BBox(BBox),
    Seed {
        center: GeoPoint,
        half_width_m: f64,
    },
}

impl HarborHint {
    pub fn bbox(&self) -> BBox {
        match *self {
            HarborHint::BBox(b) => b,
            HarborHint::Seed {
                center,
                half_width_m,
            } => BBox::around(center, half_width_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarborParams {
    pub k: usize,
    /// Absolute minimum point count for a berth cluster; `None` means 1 % of
    /// the fixes inside the hint region.
    pub min_points: Option<usize>,
    pub radius_m: f64,
    pub seeds: Vec<u64>,
    pub kmeans: KMeansParams,
}

impl Default for HarborParams {
    fn default() -> Self {
        HarborParams {
            k: 4,
            min_points: None,
            radius_m: DEFAULT_RADIUS_M,
            seeds: vec![0],
            kmeans: KMeansParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarborDetection {
    pub model: Option<ClusterModel>,
    pub verdicts: Vec<ClusterVerdict>,
    pub berths: Vec<(usize, GeoPoint)>,
    pub segments: Vec<DwellSegment>,
}

/// Clusters the fixes inside the hint region, drops path clusters and
/// extracts harbor dwell segments against the remaining berth centers.
pub fn detect_harbor(
    traj: &Trajectory,
    hint: &HarborHint,
    params: &HarborParams,
) -> Result<HarborDetection> {
    let bbox = hint.bbox();
    let inside: Vec<PositionRecord> = traj
        .records
        .iter()
        .filter(|r| bbox.contains_record(r))
        .cloned()
        .collect();
    if inside.is_empty() {
        log::warn!("no fixes inside the harbor hint region");
        return Ok(HarborDetection::default());
    }
    let k = params.k.min(inside.len());
    let points: Vec<GeoPoint> = inside.iter().map(PositionRecord::point).collect();
    let model = restarts(&points, k, &params.seeds, &params.kmeans)?;
    let min_points = params
        .min_points
        .unwrap_or_else(|| (inside.len() as f64 * 0.01).ceil() as usize);
    let mut verdicts = discard_path_clusters(&model, &inside, min_points, params.radius_m);
    drop_coincident(&mut verdicts, &model.centers, params.radius_m);
    let berths: Vec<(usize, GeoPoint)> = verdicts
        .iter()
        .filter(|v| v.kept)
        .map(|v| (v.cluster, model.centers[v.cluster]))
        .collect();
    let mut segments: Vec<DwellSegment> = berths
        .iter()
        .flat_map(|&(id, c)| {
            extract_dwell_segments(&traj.records, c, params.radius_m, DwellKind::Harbor, id)
        })
        .collect();
    segments.sort_by_key(|s| (s.enter, s.cluster_id));
    Ok(HarborDetection {
        model: Some(model),
        verdicts,
        berths,
        segments,
    })
}

/// Whatever part of the window is neither installation nor harbor time.
pub fn compute_transit(
    window: &AnalysisWindow,
    installation: TimeDelta,
    harbor: TimeDelta,
) -> Result<TimeDelta> {
    let total = window.length();
    let transit = total - installation - harbor;
    if transit < TimeDelta::zero() {
        return Err(Error::Inconsistent {
            window_h: hours(total),
            installation_h: hours(installation),
            harbor_h: hours(harbor),
        });
    }
    Ok(transit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Installation,
    Harbor,
    Transit,
}

impl Activity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activity::Installation => "installation",
            Activity::Harbor => "harbor",
            Activity::Transit => "transit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    /// Index into the trajectory's records.
    pub record: usize,
    pub label: Activity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub installation: usize,
    pub harbor: usize,
    pub transit: usize,
}

impl LabelCounts {
    pub fn of(labels: &[PointLabel]) -> Self {
        let mut c = LabelCounts::default();
        for l in labels {
            match l.label {
                Activity::Installation => c.installation += 1,
                Activity::Harbor => c.harbor += 1,
                Activity::Transit => c.transit += 1,
            }
        }
        c
    }
}

/// Labels each fix by radius membership. Installation wins over harbor.
pub fn label_points(
    records: &[PositionRecord],
    installation_centers: &[GeoPoint],
    harbor_centers: &[GeoPoint],
    radius_m: f64,
) -> Vec<PointLabel> {
    let near = |p: GeoPoint, centers: &[GeoPoint]| centers.iter().any(|&c| within(p, c, radius_m));
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = r.point();
            let label = if near(p, installation_centers) {
                Activity::Installation
            } else if near(p, harbor_centers) {
                Activity::Harbor
            } else {
                Activity::Transit
            };
            PointLabel { record: i, label }
        })
        .collect()
}
