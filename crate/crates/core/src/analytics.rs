//! Campaign statistics: per-farm duration statistics, time shares, the
//! cumulative duration histogram, the naive per-turbine average and the
//! wind-speed join.

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AnalysisWindow;
use crate::segmentation::{compute_transit, InstallationRecord};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

pub fn hours(d: TimeDelta) -> f64 {
    d.num_milliseconds() as f64 / 1000.0 / SECONDS_PER_HOUR
}

/// Median of an already sorted, non-empty slice.
pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Mean, sample standard deviation and order statistics of a set of
/// durations in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub n: usize,
    pub total_h: f64,
    pub avg_h: f64,
    pub sd_h: f64,
    pub min_h: f64,
    pub median_h: f64,
    pub max_h: f64,
}

pub fn duration_stats(durations_h: &[f64]) -> Result<DurationStats> {
    if durations_h.is_empty() {
        return Err(Error::InsufficientData("no durations to summarize".into()));
    }
    let n = durations_h.len();
    let total_h: f64 = durations_h.iter().sum();
    let avg_h = total_h / n as f64;
    let sd_h = if n > 1 {
        let ss: f64 = durations_h.iter().map(|d| (d - avg_h).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = durations_h.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DurationStats {
        n,
        total_h,
        avg_h,
        sd_h,
        min_h: sorted[0],
        median_h: median_sorted(&sorted),
        max_h: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmStats {
    pub n_identified: usize,
    pub avg_h: f64,
    pub sd_h: f64,
    pub min_h: f64,
    pub median_h: f64,
    pub max_h: f64,
    pub n_actual: usize,
    pub coverage_pct: u32,
}

pub fn farm_stats(durations_h: &[f64], n_actual: usize) -> Result<FarmStats> {
    let s = duration_stats(durations_h)?;
    if n_actual == 0 {
        return Err(Error::Config("farm has zero turbines".into()));
    }
    if s.n > n_actual {
        log::warn!(
            "identified {} installations but the farm has {} turbines",
            s.n,
            n_actual
        );
    }
    if s.avg_h < s.median_h {
        log::warn!(
            "median installation time {:.1} h exceeds the mean {:.1} h",
            s.median_h,
            s.avg_h
        );
    }
    Ok(FarmStats {
        n_identified: s.n,
        avg_h: s.avg_h,
        sd_h: s.sd_h,
        min_h: s.min_h,
        median_h: s.median_h,
        max_h: s.max_h,
        n_actual,
        coverage_pct: (100.0 * s.n as f64 / n_actual as f64).round() as u32,
    })
}

/// Support points `(d_i, i/n)` of the empirical CDF of the durations.
pub fn cumulative_histogram(durations_h: &[f64]) -> Result<Vec<(f64, f64)>> {
    if durations_h.is_empty() {
        return Err(Error::InsufficientData("no durations for histogram".into()));
    }
    let mut sorted = durations_h.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            (
                d,
                if i + 1 == n {
                    1.0
                } else {
                    (i + 1) as f64 / n as f64
                },
            )
        })
        .collect())
}

/// Empirical CDF value at `x`: fraction of durations not exceeding it.
pub fn fraction_at(histogram: &[(f64, f64)], x: f64) -> f64 {
    histogram
        .iter()
        .take_while(|(d, _)| *d <= x)
        .last()
        .map_or(0.0, |(_, f)| *f)
}

/// Window length divided by the turbine count, in hours.
pub fn naive_average(window: &AnalysisWindow, n_turbines: usize) -> Result<f64> {
    if n_turbines == 0 {
        return Err(Error::Config(
            "naive average needs at least one turbine".into(),
        ));
    }
    Ok(hours(window.length()) / n_turbines as f64)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Installation / harbor / transit decomposition of a campaign window.
/// Durations are kept in milliseconds so the parts sum to the total exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeShare {
    pub transit_ms: i64,
    pub installation_ms: i64,
    pub harbor_ms: i64,
    pub total_ms: i64,
    pub transit_h: f64,
    pub installation_h: f64,
    pub harbor_h: f64,
    pub total_h: f64,
    pub transit_pct: f64,
    pub installation_pct: f64,
    pub harbor_pct: f64,
}

pub fn time_share(
    window: &AnalysisWindow,
    installation: TimeDelta,
    harbor: TimeDelta,
) -> Result<TimeShare> {
    let transit = compute_transit(window, installation, harbor)?;
    let total = window.length();
    let pct = |d: TimeDelta| {
        round1(100.0 * d.num_milliseconds() as f64 / total.num_milliseconds() as f64)
    };
    Ok(TimeShare {
        transit_ms: transit.num_milliseconds(),
        installation_ms: installation.num_milliseconds(),
        harbor_ms: harbor.num_milliseconds(),
        total_ms: total.num_milliseconds(),
        transit_h: hours(transit),
        installation_h: hours(installation),
        harbor_h: hours(harbor),
        total_h: hours(total),
        transit_pct: pct(transit),
        installation_pct: pct(installation),
        harbor_pct: pct(harbor),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub timestamp: DateTime<Utc>,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindJoinRow {
    pub cluster_id: usize,
    pub avg_wind_mps: f64,
    pub n_samples: usize,
    pub duration_h: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindJoin {
    pub rows: Vec<WindJoinRow>,
    /// Installations without a single wind sample inside their segments.
    pub flagged: Vec<usize>,
}

/// Averages the wind samples falling inside each installation's dwell
/// segments (endpoints inclusive).
pub fn wind_join(installations: &[InstallationRecord], wind: &[WindSample]) -> Result<WindJoin> {
    if let Some(i) = wind
        .windows(2)
        .position(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(Error::Ingest(format!(
            "wind series is not sorted at sample {}",
            i + 1
        )));
    }
    let mut out = WindJoin::default();
    for inst in installations {
        let mut sum = 0.0;
        let mut n = 0;
        for seg in &inst.segments {
            let lo = wind.partition_point(|s| s.timestamp < seg.enter);
            let hi = wind.partition_point(|s| s.timestamp <= seg.exit);
            for s in &wind[lo..hi] {
                sum += s.speed_mps;
                n += 1;
            }
        }
        if n == 0 {
            out.flagged.push(inst.cluster_id);
            continue;
        }
        out.rows.push(WindJoinRow {
            cluster_id: inst.cluster_id,
            avg_wind_mps: sum / n as f64,
            n_samples: n,
            duration_h: hours(inst.total_duration),
        });
    }
    Ok(out)
}

/// Reads `timestamp_utc,wind_speed_mps`.
pub fn read_wind_csv<R: std::io::Read>(input: R) -> Result<Vec<WindSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.into(),
            })
    };
    let (ts_i, v_i) = (col("timestamp_utc")?, col("wind_speed_mps")?);
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let bad = || Error::Ingest(format!("wind row {}: malformed", line + 1));
        let timestamp = DateTime::parse_from_rfc3339(&row[ts_i])
            .map_err(|_| bad())?
            .with_timezone(&Utc);
        let speed_mps: f64 = row[v_i].parse().map_err(|_| bad())?;
        out.push(WindSample {
            timestamp,
            speed_mps,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::segmentation::{aggregate_installation, DwellKind, DwellSegment};

    fn window_h(h: f64) -> AnalysisWindow {
        let start = DateTime::from_timestamp(1_530_403_200, 0).unwrap();
        AnalysisWindow::new(
            start,
            start + TimeDelta::milliseconds((h * 3_600_000.0) as i64),
        )
        .unwrap()
    }

    fn td_h(h: f64) -> TimeDelta {
        TimeDelta::milliseconds((h * 3_600_000.0).round() as i64)
    }

    #[test]
    fn small_farm_stats() {
        let s = farm_stats(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(
            (s.avg_h, s.sd_h, s.median_h, s.coverage_pct),
            (2.0, 1.0, 2.0, 100)
        );
        assert_eq!((s.min_h, s.max_h), (1.0, 3.0));
        assert!(matches!(
            farm_stats(&[], 3),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn coverage_rounding() {
        // Westermost Rough: 35 turbines at 83 % coverage
        let durations = vec![40.0; 29];
        assert_eq!(farm_stats(&durations, 35).unwrap().coverage_pct, 83);
    }

    #[test]
    fn even_median_is_mean_of_middle_pair() {
        assert_eq!(farm_stats(&[4.0, 1.0, 3.0, 2.0], 4).unwrap().median_h, 2.5);
    }

    #[test]
    fn stats_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d: Vec<f64> = (0..200).map(|_| rng.gen_range(10.0..300.0)).collect();
        let s = farm_stats(&d, 200).unwrap();

        // second implementation: Welford for mean/variance, selection by counting
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (i, x) in d.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let sd = (m2 / 199.0).sqrt();
        let rank = |x: f64| d.iter().filter(|&&y| y < x).count();
        let min = d.iter().copied().find(|&x| rank(x) == 0).unwrap();
        let max = d.iter().copied().find(|&x| rank(x) == 199).unwrap();
        let lo = d.iter().copied().find(|&x| rank(x) == 99).unwrap();
        let hi = d.iter().copied().find(|&x| rank(x) == 100).unwrap();

        assert!((s.avg_h - mean).abs() < 1e-9);
        assert!((s.sd_h - sd).abs() < 1e-9);
        assert_eq!((s.min_h, s.max_h), (min, max));
        assert_eq!(s.median_h, (lo + hi) / 2.0);
    }

    #[test]
    fn histogram_examples() {
        let h = cumulative_histogram(&[40.0, 10.0, 30.0, 20.0]).unwrap();
        assert_eq!(h[1], (20.0, 0.5));
        assert_eq!(fraction_at(&h, 20.0), 0.5);
        assert_eq!(h.last().unwrap().1, 1.0);
        assert_eq!(cumulative_histogram(&[7.0]).unwrap(), vec![(7.0, 1.0)]);
        assert!(cumulative_histogram(&[]).is_err());
    }

    #[test]
    fn histogram_of_gode_wind_like_sample() {
        // 40 % of installations under 20 h, 80 % under 40 h
        let mut d: Vec<f64> = (0..40).map(|i| 15.0 + i as f64 * 0.1).collect();
        d.extend((0..40).map(|i| 22.0 + i as f64 * 0.4));
        d.extend((0..20).map(|i| 45.0 + i as f64 * 10.0));
        let h = cumulative_histogram(&d).unwrap();
        assert!((fraction_at(&h, 20.0) - 0.4).abs() < 1e-12);
        assert!((fraction_at(&h, 40.0) - 0.8).abs() < 1e-12);
        assert!(h.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }

    #[test]
    fn naive_average_examples() {
        assert!((naive_average(&window_h(4932.5), 49).unwrap() - 100.66).abs() < 0.05);
        assert_eq!(naive_average(&window_h(100.0), 10).unwrap(), 10.0);
        assert_eq!(naive_average(&window_h(49.0), 49).unwrap(), 1.0);
        assert!(naive_average(&window_h(49.0), 0).is_err());
    }

    #[test]
    fn horns_rev_time_share() {
        let t = time_share(&window_h(4932.5), td_h(2821.0), td_h(1732.0)).unwrap();
        assert_eq!(t.transit_h, 379.5);
        assert_eq!(
            (t.transit_pct, t.installation_pct, t.harbor_pct),
            (7.7, 57.2, 35.1)
        );
        assert_eq!(t.transit_ms + t.installation_ms + t.harbor_ms, t.total_ms);
    }

    #[test]
    fn degenerate_time_shares() {
        let t = time_share(&window_h(100.0), TimeDelta::zero(), TimeDelta::zero()).unwrap();
        assert_eq!(t.transit_pct, 100.0);
        let t = time_share(&window_h(100.0), td_h(50.0), td_h(50.0)).unwrap();
        assert_eq!(
            (t.transit_pct, t.installation_pct, t.harbor_pct),
            (0.0, 50.0, 50.0)
        );
        assert!(matches!(
            time_share(&window_h(10.0), td_h(8.0), td_h(3.0)),
            Err(Error::Inconsistent { .. })
        ));
    }

    fn installation(id: usize, enter_h: f64, exit_h: f64) -> InstallationRecord {
        let t0 = DateTime::from_timestamp(1_530_403_200, 0).unwrap();
        let seg = DwellSegment {
            cluster_id: id,
            kind: DwellKind::Installation,
            enter: t0 + td_h(enter_h),
            exit: t0 + td_h(exit_h),
            bracket_lo: t0 + td_h(enter_h),
            bracket_hi: t0 + td_h(exit_h),
        };
        aggregate_installation(
            id,
            GeoPoint {
                lat: 55.0,
                lon: 7.0,
            },
            vec![seg],
        )
        .unwrap()
    }

    fn wind_at(hours_: &[(f64, f64)]) -> Vec<WindSample> {
        let t0 = DateTime::from_timestamp(1_530_403_200, 0).unwrap();
        hours_
            .iter()
            .map(|&(h, v)| WindSample {
                timestamp: t0 + td_h(h),
                speed_mps: v,
            })
            .collect()
    }

    #[test]
    fn wind_join_examples() {
        let inst = [installation(0, 0.0, 2.0), installation(1, 10.0, 11.0)];
        let j = wind_join(&inst, &wind_at(&[(0.0, 5.0), (2.0, 7.0), (3.0, 100.0)])).unwrap();
        assert_eq!(j.rows.len(), 1);
        assert_eq!(j.rows[0].avg_wind_mps, 6.0);
        assert_eq!(j.rows[0].duration_h, 2.0);
        assert_eq!(j.flagged, vec![1]);
        assert!(wind_join(&inst, &wind_at(&[(2.0, 1.0), (1.0, 1.0)])).is_err());
    }

    #[test]
    fn wind_join_dense_and_sparse_agree_with_continuous_signal() {
        // v(t) = 8 + 3 sin(2πt/24); the exact mean over [5 h, 29 h] is 8
        let signal = |h: f64| 8.0 + 3.0 * (2.0 * std::f64::consts::PI * h / 24.0).sin();
        let inst = [installation(0, 5.0, 29.0)];
        let sample = |step: f64| {
            let n = (40.0 / step) as usize;
            wind_at(
                &(0..=n)
                    .map(|i| (i as f64 * step, signal(i as f64 * step)))
                    .collect::<Vec<_>>(),
            )
        };
        let dense = wind_join(&inst, &sample(1.0 / 60.0)).unwrap().rows[0].avg_wind_mps;
        let sparse = wind_join(&inst, &sample(1.0)).unwrap().rows[0].avg_wind_mps;
        assert!((dense - 8.0).abs() < 0.01, "dense {dense}");
        // hourly sampling of a 24 h sinusoid over a full period, endpoints doubled
        assert!((sparse - 8.0).abs() < 0.15, "sparse {sparse}");
    }

    #[test]
    fn wind_csv_parses() {
        let data = "timestamp_utc,wind_speed_mps\n2018-07-01T00:00:00Z,5.5\n";
        let w = read_wind_csv(data.as_bytes()).unwrap();
        assert_eq!(w[0].speed_mps, 5.5);
    }
}
