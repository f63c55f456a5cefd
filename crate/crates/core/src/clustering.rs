//! K-means over raw (longitude, latitude) pairs.
//!
//! Lloyd iterations from a seeded greedy k-means++ start. Points are sorted
//! canonically before seeding so the result does not depend on input order.
//! Parallel steps reduce over fixed-size chunks in chunk order, which keeps
//! every fit bit-identical regardless of the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, within, GeoPoint};
use crate::ingest::PositionRecord;
use crate::segmentation::{extract_dwell_segments, DwellKind};

const CHUNK: usize = 4096;

/// Cluster count: turbines plus extra clusters to soak up transit legs.
pub fn select_k(n_turbines: usize, extra: usize) -> Result<usize> {
    if n_turbines == 0 {
        return Err(Error::Config("n_turbines must be at least 1".into()));
    }
    Ok(n_turbines + extra)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Largest center movement, in degrees, treated as converged.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centers: Vec<GeoPoint>,
    /// Cluster index per input point, in input order.
    #[serde(skip)]
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
    /// Sum of squared degree-space distances to the assigned centers.
    pub inertia: f64,
    pub iterations_run: usize,
    /// True when the last iteration changed no assignment.
    pub converged: bool,
    /// Objective after every assignment and every update step.
    pub objective_trace: Vec<f64>,
}

type Xy = [f64; 2];

#[inline]
fn d2(a: &Xy, b: &Xy) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn xy(p: &GeoPoint) -> Xy {
    [p.lon, p.lat]
}

/// Points in canonical (lat, lon) order plus the permutation back to input.
struct Prepared {
    xs: Vec<Xy>,
    order: Vec<usize>,
}

impl Prepared {
    fn new(points: &[GeoPoint]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&points[a], &points[b]);
            pa.lat.total_cmp(&pb.lat).then(pa.lon.total_cmp(&pb.lon))
        });
        let xs = order.iter().map(|&i| xy(&points[i])).collect();
        Prepared { xs, order }
    }
}

/// Sum of `f(i)` over all indices, reduced per chunk and then in chunk order.
fn chunked_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    partials.iter().sum()
}

fn objective(xs: &[Xy], centers: &[Xy], assign: &[usize]) -> f64 {
    chunked_sum(xs.len(), |i| d2(&xs[i], &centers[assign[i]]))
}

/// Greedy k-means++: each new center is the best of several D²-weighted
/// candidates.
fn init_centers(xs: &[Xy], k: usize, rng: &mut ChaCha8Rng) -> Vec<Xy> {
    let n = xs.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![xs[rng.gen_range(0..n)]];
    let mut closest: Vec<f64> = xs.par_iter().map(|x| d2(x, &centers[0])).collect();
    let mut potential = chunked_sum(n, |i| closest[i]);
    let mut cumulative = vec![0.0; n];
    while centers.len() < k {
        let candidates: Vec<usize> = if potential > 0.0 {
            let mut acc = 0.0;
            for (c, d) in cumulative.iter_mut().zip(&closest) {
                acc += d;
                *c = acc;
            }
            (0..trials)
                .map(|_| {
                    let r = rng.gen::<f64>() * acc;
                    cumulative.partition_point(|&c| c <= r).min(n - 1)
                })
                .collect()
        } else {
            // every point already sits on a center
            vec![rng.gen_range(0..n)]
        };
        let mut best: Option<(f64, usize)> = None;
        for &cand in &candidates {
            let c = xs[cand];
            let pot = chunked_sum(n, |i| closest[i].min(d2(&xs[i], &c)));
            if best.is_none_or(|(b, _)| pot < b) {
                best = Some((pot, cand));
            }
        }
        let (pot, chosen) = best.expect("at least one candidate");
        let c = xs[chosen];
        closest
            .par_iter_mut()
            .zip(xs.par_iter())
            .for_each(|(cl, x)| {
                *cl = cl.min(d2(x, &c));
            });
        potential = pot;
        centers.push(c);
    }
    centers
}

/// Distance bounds carried between iterations so most points skip the
/// full nearest-center scan. Skips use strict inequalities, so every
/// assignment equals the one a full scan would make.
struct Bounds {
    /// Upper bound on the distance to the assigned center.
    upper: Vec<f64>,
    /// Lower bound on the distance to every other center.
    lower: Vec<f64>,
}

/// Half the distance from each center to its nearest other center.
fn half_separation(centers: &[Xy]) -> Vec<f64> {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| {
            centers
                .iter()
                .enumerate()
                .filter(|&(o, _)| o != j)
                .map(|(_, o)| d2(c, o))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
                / 2.0
        })
        .collect()
}

/// Assigns every point to its nearest center; returns how many changed.
fn assign_step(xs: &[Xy], centers: &[Xy], assign: &mut [usize], bounds: &mut Bounds) -> usize {
    let sep = half_separation(centers);
    assign
        .par_chunks_mut(CHUNK)
        .zip(bounds.upper.par_chunks_mut(CHUNK))
        .zip(bounds.lower.par_chunks_mut(CHUNK))
        .zip(xs.par_chunks(CHUNK))
        .map(|(((a, up), lo), x)| {
            let mut changed = 0;
            for i in 0..a.len() {
                let cur = a[i];
                if cur != usize::MAX {
                    let m = sep[cur].max(lo[i]);
                    if up[i] < m {
                        continue;
                    }
                    up[i] = d2(&x[i], &centers[cur]).sqrt();
                    if up[i] < m {
                        continue;
                    }
                }
                let (mut best, mut best_d, mut second_d) = (0, f64::INFINITY, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = d2(&x[i], c);
                    if d < best_d {
                        second_d = best_d;
                        best_d = d;
                        best = j;
                    } else if d < second_d {
                        second_d = d;
                    }
                }
                up[i] = best_d.sqrt();
                lo[i] = second_d.sqrt();
                if cur != best {
                    a[i] = best;
                    changed += 1;
                }
            }
            changed
        })
        .sum()
}

/// Loosens the bounds after the centers moved by `shifts`.
fn relax_bounds(assign: &[usize], bounds: &mut Bounds, shifts: &[f64]) {
    let (mut top, mut top_j, mut runner_up) = (0.0f64, usize::MAX, 0.0f64);
    for (j, &d) in shifts.iter().enumerate() {
        if d > top {
            runner_up = top;
            top = d;
            top_j = j;
        } else if d > runner_up {
            runner_up = d;
        }
    }
    if top == 0.0 {
        return;
    }
    bounds
        .upper
        .par_iter_mut()
        .zip(bounds.lower.par_iter_mut())
        .zip(assign.par_iter())
        .for_each(|((up, lo), &a)| {
            *up += shifts[a];
            *lo -= if a == top_j { runner_up } else { top };
        });
}

/// Moves centers to their cluster means and re-seeds empty clusters.
/// Returns each center's displacement.
fn update_step(
    xs: &[Xy],
    centers: &mut [Xy],
    assign: &mut [usize],
    counts: &mut [usize],
    bounds: &mut Bounds,
) -> Vec<f64> {
    let k = centers.len();
    let mut sums = vec![[0.0f64; 2]; k];
    counts.iter_mut().for_each(|c| *c = 0);
    // sequential so each cluster's sum has a fixed order
    for (x, &a) in xs.iter().zip(assign.iter()) {
        sums[a][0] += x[0];
        sums[a][1] += x[1];
        counts[a] += 1;
    }
    let mut shift = vec![0.0f64; k];
    for j in 0..k {
        if counts[j] > 0 {
            let m = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            shift[j] = d2(&m, &centers[j]).sqrt();
            centers[j] = m;
        }
    }
    let mut moved = vec![false; xs.len()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        // farthest point from its own center
        let far = (0..xs.len())
            .filter(|&i| !moved[i] && counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                d2(&xs[a], &centers[assign[a]])
                    .total_cmp(&d2(&xs[b], &centers[assign[b]]))
                    .then(b.cmp(&a))
            });
        let Some(i) = far else { continue };
        shift[j] = d2(&xs[i], &centers[j]).sqrt();
        counts[assign[i]] -= 1;
        centers[j] = xs[i];
        assign[i] = j;
        counts[j] = 1;
        moved[i] = true;
        // the point now sits exactly on its new center
        bounds.upper[i] = 0.0;
        bounds.lower[i] = 0.0;
    }
    shift
}

fn fit_prepared(prep: &Prepared, k: usize, seed: u64, params: &KMeansParams) -> ClusterModel {
    let xs = &prep.xs;
    let n = xs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = init_centers(xs, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut counts = vec![0usize; k];
    let mut bounds = Bounds {
        upper: vec![f64::INFINITY; n],
        lower: vec![0.0; n],
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for iter in 1..=params.max_iter.max(1) {
        iterations_run = iter;
        let changed = assign_step(xs, &centers, &mut assign, &mut bounds);
        trace.push(objective(xs, &centers, &assign));
        if changed == 0 {
            converged = true;
            break;
        }
        let shifts = update_step(xs, &mut centers, &mut assign, &mut counts, &mut bounds);
        relax_bounds(&assign, &mut bounds, &shifts);
        trace.push(objective(xs, &centers, &assign));
        if shifts.iter().all(|&d| d <= params.tol) {
            let changed = assign_step(xs, &centers, &mut assign, &mut bounds);
            trace.push(objective(xs, &centers, &assign));
            if changed == 0 {
                converged = true;
            } else {
                update_step(xs, &mut centers, &mut assign, &mut counts, &mut bounds);
                trace.push(objective(xs, &centers, &assign));
            }
            break;
        }
    }
    counts.iter_mut().for_each(|c| *c = 0);
    for &a in &assign {
        counts[a] += 1;
    }

    let mut assignments = vec![0; n];
    for (sorted_i, &orig) in prep.order.iter().enumerate() {
        assignments[orig] = assign[sorted_i];
    }
    ClusterModel {
        k,
        seed,
        centers: centers
            .iter()
            .map(|c| GeoPoint {
                lat: c[1],
                lon: c[0],
            })
            .collect(),
        assignments,
        counts,
        inertia: objective(xs, &centers, &assign),
        iterations_run,
        converged,
        objective_trace: trace,
    }
}

fn check_feasible(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Infeasible("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Infeasible(format!(
            "{n} points cannot form {k} clusters"
        )));
    }
    Ok(())
}

/// One seeded K-means fit.
pub fn kmeans_fit(
    points: &[GeoPoint],
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterModel> {
    check_feasible(points.len(), k)?;
    Ok(fit_prepared(&Prepared::new(points), k, seed, params))
}

/// Best of several seeded fits by inertia; ties go to the lowest seed.
pub fn restarts(
    points: &[GeoPoint],
    k: usize,
    seeds: &[u64],
    params: &KMeansParams,
) -> Result<ClusterModel> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    check_feasible(points.len(), k)?;
    let prep = Prepared::new(points);
    let fits: Vec<ClusterModel> = seeds
        .par_iter()
        .map(|&seed| fit_prepared(&prep, k, seed, params))
        .collect();
    Ok(fits
        .into_iter()
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia).then(a.seed.cmp(&b.seed)))
        .expect("non-empty seeds"))
}

/// Recomputes the objective of a model against its points.
pub fn inertia_of(points: &[GeoPoint], centers: &[GeoPoint], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| d2(&xy(p), &xy(&centers[a])))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub cluster: usize,
    pub point_count: usize,
    /// Time the cluster's own fixes spent within the radius of its center.
    pub dwell_seconds: f64,
    pub kept: bool,
    pub reason: String,
}

pub const REASON_BELOW: &str = "below point threshold";
pub const REASON_KEPT: &str = "meets point threshold";
pub const REASON_COINCIDENT: &str = "within radius of cluster";

/// Marks clusters with fewer than `min_points` members as transit path
/// clusters. `records` must be the fixes the model was fit on, in the same
/// order and sorted by time.
pub fn discard_path_clusters(
    model: &ClusterModel,
    records: &[PositionRecord],
    min_points: usize,
    radius_m: f64,
) -> Vec<ClusterVerdict> {
    assert_eq!(
        model.assignments.len(),
        records.len(),
        "assignments do not cover the records"
    );
    let mut members: Vec<Vec<PositionRecord>> = vec![Vec::new(); model.k];
    for (r, &a) in records.iter().zip(&model.assignments) {
        members[a].push(r.clone());
    }
    members
        .par_iter()
        .enumerate()
        .map(|(j, recs)| {
            let dwell: f64 = extract_dwell_segments(
                recs,
                model.centers[j],
                radius_m,
                DwellKind::Installation,
                j,
            )
            .iter()
            .map(|s| s.duration().num_milliseconds() as f64 / 1000.0)
            .sum();
            let kept = recs.len() >= min_points;
            ClusterVerdict {
                cluster: j,
                point_count: recs.len(),
                dwell_seconds: dwell,
                kept,
                reason: if kept { REASON_KEPT } else { REASON_BELOW }.to_string(),
            }
        })
        .collect()
}

/// Mean of the member points lying within `radius_m` of the center,
/// iterated until it settles. Transit fixes far from a stop still pull the
/// K-means mean toward them; this keeps only the dwell fixes. Returns the
/// center unchanged if no member is inside the radius.
pub fn refine_center(members: &[GeoPoint], center: GeoPoint, radius_m: f64) -> GeoPoint {
    let mut c = center;
    for _ in 0..20 {
        let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
        for p in members.iter().filter(|p| within(**p, c, radius_m)) {
            lat += p.lat;
            lon += p.lon;
            n += 1;
        }
        if n == 0 {
            break;
        }
        let next = GeoPoint {
            lat: lat / n as f64,
            lon: lon / n as f64,
        };
        let settled = (next.lat - c.lat).abs() < 1e-12 && (next.lon - c.lon).abs() < 1e-12;
        c = next;
        if settled {
            break;
        }
    }
    c
}

/// Among kept clusters, drops any whose center lies within `radius_m` of a
/// kept cluster with more points. Both would claim the same dwell time.
pub fn drop_coincident(verdicts: &mut [ClusterVerdict], centers: &[GeoPoint], radius_m: f64) {
    let mut order: Vec<usize> = (0..verdicts.len()).filter(|&i| verdicts[i].kept).collect();
    order.sort_by_key(|&i| {
        (
            std::cmp::Reverse(verdicts[i].point_count),
            verdicts[i].cluster,
        )
    });
    let mut accepted: Vec<usize> = Vec::new();
    for i in order {
        let c = centers[verdicts[i].cluster];
        match accepted
            .iter()
            .find(|&&a| haversine(centers[verdicts[a].cluster], c) <= radius_m)
        {
            Some(&a) => {
                verdicts[i].kept = false;
                verdicts[i].reason = format!("{REASON_COINCIDENT} {}", verdicts[a].cluster);
            }
            None => accepted.push(i),
        }
    }
}
