//! Synthetic installation campaigns with exact ground truth.
//!
//! The vessel alternates between port calls at a single berth and batches
//! of installation stops. Time advances in whole sampling intervals: while
//! moving the vessel covers `speed × interval` per sample and snaps onto its
//! target once within one step; while stationary it reports the stop
//! position plus GPS jitter. Scripted durations are in-radius durations: the
//! first in-radius sample of a visit and the last one are exactly the
//! scripted duration apart.

use chrono::{DateTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, offset, GeoPoint, EARTH_RADIUS_M};
use crate::ingest::{AnalysisWindow, Mmsi, PositionRecord, Trajectory};
use crate::segmentation::Activity;

const KNOT_MPS: f64 = 1852.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoursRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    /// Target fraction of samples removed.
    pub fraction: f64,
    /// Outage length bounds, in samples.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for GapSpec {
    fn default() -> Self {
        GapSpec {
            fraction: 0.0,
            min_len: 6,
            max_len: 180,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignScript {
    pub seed: u64,
    pub mmsi: u32,
    pub start: DateTime<Utc>,
    /// South-west corner of the site grid.
    pub farm_origin: GeoPoint,
    pub n_sites: usize,
    /// Grid columns; 0 picks ⌈√n⌉.
    pub grid_columns: usize,
    pub site_spacing_m: f64,
    /// Uniform displacement of each site from its grid node.
    pub layout_jitter_m: f64,
    pub harbor: GeoPoint,
    pub dwell_h: HoursRange,
    /// Overrides `dwell_h` per site when present.
    pub site_dwell_h: Option<Vec<f64>>,
    pub port_call_h: HoursRange,
    pub batch_size: usize,
    pub transit_speed_knots: f64,
    pub sample_interval_s: u32,
    /// Radius of the uniform GPS noise disc.
    pub gps_jitter_m: f64,
    pub gaps: GapSpec,
    pub radius_m: f64,
    /// Scripted durations must exceed this.
    pub min_duration_h: f64,
}

impl Default for CampaignScript {
    fn default() -> Self {
        let farm_origin = GeoPoint {
            lat: 55.50,
            lon: 7.70,
        };
        CampaignScript {
            seed: 1,
            mmsi: 219_019_000,
            start: DateTime::from_timestamp(1_530_403_200, 0).expect("valid"),
            farm_origin,
            n_sites: 20,
            grid_columns: 0,
            site_spacing_m: 800.0,
            layout_jitter_m: 100.0,
            harbor: offset(farm_origin, 30_000.0, -25_000.0),
            dwell_h: HoursRange {
                min: 24.0,
                max: 72.0,
            },
            site_dwell_h: None,
            port_call_h: HoursRange {
                min: 15.0,
                max: 90.0,
            },
            batch_size: 4,
            transit_speed_knots: 10.0,
            sample_interval_s: 10,
            gps_jitter_m: 10.0,
            gaps: GapSpec::default(),
            radius_m: 100.0,
            min_duration_h: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub id: usize,
    pub center: GeoPoint,
    pub dwell_s: f64,
    pub enter: DateTime<Utc>,
    pub exit: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortCallTruth {
    pub enter: DateTime<Utc>,
    pub exit: DateTime<Utc>,
    pub duration_s: f64,
}

/// Where a sample truly was: at a stop (site index, or the berth) or in transit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Site(usize),
    Berth,
    Transit,
}

impl TruthLabel {
    pub fn activity(&self) -> Activity {
        match self {
            TruthLabel::Site(_) => Activity::Installation,
            TruthLabel::Berth => Activity::Harbor,
            TruthLabel::Transit => Activity::Transit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sites: Vec<SiteTruth>,
    pub port_calls: Vec<PortCallTruth>,
    pub berth: GeoPoint,
    pub window: AnalysisWindow,
    pub sample_interval_s: u32,
    pub samples_generated: usize,
    pub samples_deleted: usize,
    /// One label per trajectory record.
    pub labels: Vec<TruthLabel>,
}

impl GroundTruth {
    pub fn installation_total(&self) -> TimeDelta {
        self.sites.iter().map(|s| s.exit - s.enter).sum()
    }

    pub fn harbor_total(&self) -> TimeDelta {
        self.port_calls.iter().map(|p| p.exit - p.enter).sum()
    }
}

/// Run-length form of the labels used in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRun {
    pub label: TruthLabel,
    pub first: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub sites: Vec<SiteTruth>,
    pub port_calls: Vec<PortCallTruth>,
    pub berth: GeoPoint,
    pub window: AnalysisWindow,
    pub sample_interval_s: u32,
    pub samples_generated: usize,
    pub samples_deleted: usize,
    pub label_runs: Vec<LabelRun>,
}

impl From<&GroundTruth> for GroundTruthFile {
    fn from(t: &GroundTruth) -> Self {
        let mut runs: Vec<LabelRun> = Vec::new();
        for (i, &l) in t.labels.iter().enumerate() {
            match runs.last_mut() {
                Some(run) if run.label == l => run.len += 1,
                _ => runs.push(LabelRun {
                    label: l,
                    first: i,
                    len: 1,
                }),
            }
        }
        GroundTruthFile {
            sites: t.sites.clone(),
            port_calls: t.port_calls.clone(),
            berth: t.berth,
            window: t.window,
            sample_interval_s: t.sample_interval_s,
            samples_generated: t.samples_generated,
            samples_deleted: t.samples_deleted,
            label_runs: runs,
        }
    }
}

impl From<GroundTruthFile> for GroundTruth {
    fn from(f: GroundTruthFile) -> Self {
        let labels = f
            .label_runs
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.label, r.len))
            .collect();
        GroundTruth {
            sites: f.sites,
            port_calls: f.port_calls,
            berth: f.berth,
            window: f.window,
            sample_interval_s: f.sample_interval_s,
            samples_generated: f.samples_generated,
            samples_deleted: f.samples_deleted,
            labels,
        }
    }
}

fn step_toward(from: GeoPoint, to: GeoPoint, meters: f64) -> GeoPoint {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let east = (to.lon - from.lon) * k * from.lat.to_radians().cos();
    let north = (to.lat - from.lat) * k;
    let norm = (east * east + north * north).sqrt();
    offset(from, east / norm * meters, north / norm * meters)
}

fn jitter(p: GeoPoint, radius_m: f64, rng: &mut ChaCha8Rng) -> GeoPoint {
    if radius_m <= 0.0 {
        return p;
    }
    let r = radius_m * rng.gen::<f64>().sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    offset(p, r * theta.cos(), r * theta.sin())
}

fn site_layout(script: &CampaignScript, rng: &mut ChaCha8Rng) -> Vec<GeoPoint> {
    let n = script.n_sites;
    let cols = if script.grid_columns == 0 {
        (n as f64).sqrt().ceil() as usize
    } else {
        script.grid_columns
    };
    (0..n)
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            // snake order keeps consecutive sites adjacent
            let col = if row % 2 == 1 { cols - 1 - col } else { col };
            let node = offset(
                script.farm_origin,
                col as f64 * script.site_spacing_m,
                row as f64 * script.site_spacing_m,
            );
            jitter(node, script.layout_jitter_m, rng)
        })
        .collect()
}

impl CampaignScript {
    fn validate(&self, sites: &[GeoPoint], site_dwell: &[f64]) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sites == 0 || self.batch_size == 0 {
            return bad("need at least one site and a batch size of at least one".into());
        }
        if self.sample_interval_s == 0 || self.transit_speed_knots <= 0.0 || self.radius_m <= 0.0 {
            return bad("sampling interval, speed and radius must be positive".into());
        }
        if !(0.0..0.5).contains(&self.gaps.fraction)
            || self.gaps.min_len == 0
            || self.gaps.min_len > self.gaps.max_len
        {
            return bad("gap fraction must be in [0, 0.5) with 1 <= min_len <= max_len".into());
        }
        if let Some(d) = &self.site_dwell_h {
            if d.len() != self.n_sites {
                return bad(format!(
                    "{} site dwell times for {} sites",
                    d.len(),
                    self.n_sites
                ));
            }
        }
        let min_gap = 2.0 * self.radius_m;
        for (i, a) in sites.iter().enumerate() {
            if haversine(*a, self.harbor) <= min_gap {
                return bad(format!("site {i} lies within {min_gap} m of the harbor"));
            }
            for (j, b) in sites.iter().enumerate().skip(i + 1) {
                let d = haversine(*a, *b);
                if d <= min_gap {
                    return bad(format!(
                        "sites {i} and {j} are {d:.1} m apart, need more than {min_gap} m"
                    ));
                }
            }
        }
        let shortest = site_dwell
            .iter()
            .copied()
            .chain([self.port_call_h.min])
            .fold(f64::INFINITY, f64::min);
        if shortest <= self.min_duration_h
            || self.dwell_h.min > self.dwell_h.max
            || self.port_call_h.min > self.port_call_h.max
        {
            return bad(format!(
                "scripted durations must exceed the {} h minimum segment duration",
                self.min_duration_h
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Stop {
    Berth,
    Site(usize),
}

struct Sample {
    tick: i64,
    truth: GeoPoint,
    label: TruthLabel,
    moving: bool,
}

/// Generates the campaign trajectory and its ground truth.
pub fn generate_campaign(script: &CampaignScript) -> Result<(Trajectory, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let sites = site_layout(script, &mut rng);
    let draw = |range: HoursRange, rng: &mut ChaCha8Rng| {
        if range.max > range.min {
            rng.gen_range(range.min..=range.max)
        } else {
            range.min
        }
    };
    let site_dwell_h: Vec<f64> = match &script.site_dwell_h {
        Some(d) => d.clone(),
        None => (0..script.n_sites)
            .map(|_| draw(script.dwell_h, &mut rng))
            .collect(),
    };
    script.validate(&sites, &site_dwell_h)?;

    let dt_s = script.sample_interval_s as f64;
    let to_ticks = |h: f64| ((h * 3600.0) / dt_s).round().max(1.0) as i64;
    let step_m = script.transit_speed_knots * KNOT_MPS * dt_s;
    let r = script.radius_m;
    let berth = script.harbor;

    let mut itinerary: Vec<(Stop, i64)> = Vec::new();
    for batch in (0..script.n_sites)
        .collect::<Vec<_>>()
        .chunks(script.batch_size)
    {
        itinerary.push((Stop::Berth, to_ticks(draw(script.port_call_h, &mut rng))));
        for &s in batch {
            itinerary.push((Stop::Site(s), to_ticks(site_dwell_h[s])));
        }
    }
    let position = |stop: Stop| match stop {
        Stop::Berth => berth,
        Stop::Site(i) => sites[i],
    };
    let classify = |p: GeoPoint| -> TruthLabel {
        if haversine(p, berth) <= r {
            return TruthLabel::Berth;
        }
        sites
            .iter()
            .position(|&s| haversine(p, s) <= r)
            .map_or(TruthLabel::Transit, TruthLabel::Site)
    };

    let mut samples: Vec<Sample> = Vec::new();
    let mut site_truth: Vec<Option<SiteTruth>> = vec![None; script.n_sites];
    let mut port_calls = Vec::new();
    let mut pos = berth;
    let mut tick: i64 = 0;
    let ts = |tick: i64| {
        script.start + TimeDelta::milliseconds(tick * script.sample_interval_s as i64 * 1000)
    };

    for (idx, &(stop, dwell_ticks)) in itinerary.iter().enumerate() {
        let target = position(stop);
        let mut enter_tick = None;
        if idx == 0 {
            samples.push(Sample {
                tick,
                truth: pos,
                label: classify(pos),
                moving: false,
            });
            enter_tick = Some(tick);
        } else {
            loop {
                let d = haversine(pos, target);
                pos = if d <= step_m {
                    target
                } else {
                    step_toward(pos, target, step_m)
                };
                tick += 1;
                let arrived = pos == target;
                samples.push(Sample {
                    tick,
                    truth: pos,
                    label: classify(pos),
                    moving: !arrived,
                });
                if enter_tick.is_none() && haversine(pos, target) <= r {
                    enter_tick = Some(tick);
                }
                if arrived {
                    break;
                }
            }
        }
        let enter_tick = enter_tick.expect("target reached");
        // in-radius samples the departure will add
        let departing = match itinerary.get(idx + 1) {
            None => 0,
            Some(&(next, _)) => {
                let next = position(next);
                let mut m = 0;
                let mut p = target;
                loop {
                    p = step_toward(p, next, step_m);
                    if haversine(p, target) > r {
                        break;
                    }
                    m += 1;
                }
                m
            }
        };
        let exit_tick = enter_tick + dwell_ticks;
        let last_stationary = exit_tick - departing;
        if last_stationary < tick {
            return Err(Error::Config(format!(
                "stop {idx} is too short to cover the approach and departure inside the radius"
            )));
        }
        while tick < last_stationary {
            tick += 1;
            samples.push(Sample {
                tick,
                truth: target,
                label: classify(target),
                moving: false,
            });
        }
        let (enter, exit) = (ts(enter_tick), ts(exit_tick));
        match stop {
            Stop::Berth => port_calls.push(PortCallTruth {
                enter,
                exit,
                duration_s: (exit_tick - enter_tick) as f64 * dt_s,
            }),
            Stop::Site(i) => {
                site_truth[i] = Some(SiteTruth {
                    id: i,
                    center: target,
                    dwell_s: (exit_tick - enter_tick) as f64 * dt_s,
                    enter,
                    exit,
                })
            }
        }
    }
    // the departure loop of the next stop emits the in-radius departure
    // samples, so the scripted exit is only reached there

    let samples_generated = samples.len();
    let deleted = inject_gaps(&samples, &script.gaps, &mut rng);
    let mmsi = Mmsi(script.mmsi);
    let mut records = Vec::with_capacity(samples_generated);
    let mut labels = Vec::with_capacity(samples_generated);
    let speed_kn = script.transit_speed_knots;
    for (s, gone) in samples.iter().zip(&deleted) {
        let observed = jitter(s.truth, script.gps_jitter_m, &mut rng);
        if *gone {
            continue;
        }
        let rec = PositionRecord::new(ts(s.tick), mmsi, observed.lat, observed.lon)
            .expect("generated positions are valid")
            .with_kinematics(Some(if s.moving { speed_kn } else { 0.0 }), None, None);
        records.push(rec);
        labels.push(s.label);
    }
    let window = AnalysisWindow::new(ts(samples[0].tick), ts(samples[samples.len() - 1].tick))?;
    let traj = Trajectory {
        mmsi: Some(mmsi),
        records,
        source: format!("synthetic campaign, seed {}", script.seed),
    };
    let truth = GroundTruth {
        sites: site_truth
            .into_iter()
            .map(|s| s.expect("every site visited"))
            .collect(),
        port_calls,
        berth,
        window,
        sample_interval_s: script.sample_interval_s,
        samples_generated,
        samples_deleted: deleted.iter().filter(|d| **d).count(),
        labels,
    };
    Ok((traj, truth))
}

/// Deletes contiguous runs of samples. A run, and the samples on either side
/// of it, must share one truth label, so every radius crossing stays
/// observable.
fn inject_gaps(samples: &[Sample], spec: &GapSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = samples.len();
    let mut deleted = vec![false; n];
    let target = (spec.fraction * n as f64).round() as usize;
    if target == 0 || n < spec.max_len + 2 {
        return deleted;
    }
    let mut removed = 0;
    let mut attempts = 0;
    while removed < target && attempts < 100_000 {
        attempts += 1;
        let len = rng
            .gen_range(spec.min_len..=spec.max_len)
            .min(target - removed);
        let start = rng.gen_range(1..n - len);
        let label = samples[start - 1].label;
        let span = start - 1..=start + len;
        if span
            .clone()
            .any(|i| deleted[i] || samples[i].label != label)
        {
            continue;
        }
        deleted[start..start + len]
            .iter_mut()
            .for_each(|d| *d = true);
        removed += len;
    }
    deleted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{extract_dwell_segments, label_points, DwellKind};

    fn quiet(n_sites: usize) -> CampaignScript {
        CampaignScript {
            n_sites,
            gps_jitter_m: 0.0,
            layout_jitter_m: 0.0,
            gaps: GapSpec::default(),
            dwell_h: HoursRange { min: 3.0, max: 6.0 },
            port_call_h: HoursRange { min: 2.0, max: 4.0 },
            ..CampaignScript::default()
        }
    }

    #[test]
    fn single_site_dwell_is_exact() {
        let script = CampaignScript {
            batch_size: 1,
            site_dwell_h: Some(vec![30.0]),
            ..quiet(1)
        };
        let (traj, truth) = generate_campaign(&script).unwrap();
        let site = &truth.sites[0];
        let segs = extract_dwell_segments(
            &traj.records,
            site.center,
            100.0,
            DwellKind::Installation,
            0,
        );
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].duration(), TimeDelta::hours(30));
        assert_eq!(site.dwell_s, 30.0 * 3600.0);
    }

    #[test]
    fn port_calls_follow_batches() {
        let (_, truth) = generate_campaign(&CampaignScript {
            batch_size: 4,
            ..quiet(20)
        })
        .unwrap();
        assert_eq!(truth.port_calls.len(), 5);
        assert_eq!(truth.sites.len(), 20);
    }

    #[test]
    fn trajectory_is_well_formed_and_reproducible() {
        let script = CampaignScript {
            n_sites: 8,
            gaps: GapSpec {
                fraction: 0.02,
                ..GapSpec::default()
            },
            ..CampaignScript::default()
        };
        let (a, ta) = generate_campaign(&script).unwrap();
        let (b, tb) = generate_campaign(&script).unwrap();
        assert!(a.is_well_formed());
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.len(), ta.labels.len());
        let frac = ta.samples_deleted as f64 / ta.samples_generated as f64;
        assert!((frac - 0.02).abs() < 0.002, "{frac}");
    }

    #[test]
    fn labels_match_label_points_without_noise() {
        let (traj, truth) = generate_campaign(&quiet(9)).unwrap();
        let centers: Vec<GeoPoint> = truth.sites.iter().map(|s| s.center).collect();
        let got = label_points(&traj.records, &centers, &[truth.berth], 100.0);
        assert_eq!(got.len(), truth.labels.len());
        for (g, t) in got.iter().zip(&truth.labels) {
            assert_eq!(g.label, t.activity());
        }
    }

    #[test]
    fn truth_durations_match_segments_without_noise() {
        let (traj, truth) = generate_campaign(&quiet(6)).unwrap();
        for site in &truth.sites {
            let segs = extract_dwell_segments(
                &traj.records,
                site.center,
                100.0,
                DwellKind::Installation,
                site.id,
            );
            let long: Vec<_> = segs
                .iter()
                .filter(|s| s.duration() >= TimeDelta::hours(1))
                .collect();
            assert_eq!(long.len(), 1);
            assert_eq!((long[0].enter, long[0].exit), (site.enter, site.exit));
        }
        let total = truth.installation_total() + truth.harbor_total();
        assert!(total <= truth.window.length());
    }

    #[test]
    fn infeasible_spacing_is_rejected() {
        let script = CampaignScript {
            site_spacing_m: 150.0,
            ..quiet(4)
        };
        assert!(matches!(generate_campaign(&script), Err(Error::Config(_))));
    }

    #[test]
    fn ground_truth_file_round_trips() {
        let (_, truth) = generate_campaign(&quiet(3)).unwrap();
        let file = GroundTruthFile::from(&truth);
        let json = serde_json::to_string(&file).unwrap();
        let back: GroundTruth = serde_json::from_str::<GroundTruthFile>(&json)
            .unwrap()
            .into();
        assert_eq!(back, truth);
    }
}
