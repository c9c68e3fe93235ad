//! Learning patterns: power-law curves `y = a·x^b` fitted per learner, and
//! K-means++ clustering of the standardized `(a, b)` pairs.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    /// Initial ability.
    pub a: f64,
    /// Learning rate.
    pub b: f64,
    /// Coefficient of determination in log-log space.
    pub r2: f64,
    pub n_points: usize,
}

/// Fits `y_m = a·m^b` for `m = 1..=M` by least squares on `ln y` against `ln m`.
///
/// Values are floored at `epsilon` before the log. Values above 1 are kept
/// as they are, so exact power laws that leave the unit interval still fit
/// exactly.
pub fn fit_power_law(series: &[f64], epsilon: f64) -> Result<CurveParams> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientPoints(n));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} not in (0, 1)")));
    }
    if let Some(v) = series.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {v} in series")));
    }
    let ys: Vec<f64> = series.iter().map(|&y| y.max(epsilon).ln()).collect();
    if ys.iter().all(|&y| y == ys[0]) {
        return Ok(CurveParams {
            a: ys[0].exp(),
            b: 0.0,
            r2: 1.0,
            n_points: n,
        });
    }
    let xs: Vec<f64> = (1..=n).map(|m| (m as f64).ln()).collect();
    let nf = n as f64;
    let x_mean = xs.iter().sum::<f64>() / nf;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - x_mean, y - y_mean);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let b = sxy / sxx;
    let intercept = y_mean - b * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - b * x).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(CurveParams {
        a: intercept.exp(),
        b,
        r2,
        n_points: n,
    })
}

/// Row-wise [`fit_power_law`].
pub fn fit_all(slice: &Matrix, epsilon: f64) -> Result<Vec<CurveParams>> {
    if slice.cols() < 2 {
        return Err(Error::InsufficientPoints(slice.cols()));
    }
    slice.iter_rows().map(|r| fit_power_law(r, epsilon)).collect()
}

/// Writes `learner_id,a,b,r2`.
pub fn write_params_csv<W: Write>(mut w: W, ids: &[String], params: &[CurveParams]) -> std::io::Result<()> {
    writeln!(w, "learner_id,a,b,r2")?;
    for (id, p) in ids.iter().zip(params) {
        writeln!(w, "{id},{},{},{}", p.a, p.b, p.r2)?;
    }
    Ok(())
}

/// Reads the CSV written by [`write_params_csv`]. `n_points` is not stored
/// and comes back as 0.
pub fn read_params_csv(s: &str) -> Result<(Vec<String>, Vec<CurveParams>)> {
    let mut lines = s.lines();
    if lines.next().map(str::trim) != Some("learner_id,a,b,r2") {
        return Err(Error::Schema("params CSV header must be learner_id,a,b,r2".into()));
    }
    let mut ids = Vec::new();
    let mut params = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Schema(format!("params CSV row {}: {line:?}", i + 2));
        let f: Vec<&str> = line.rsplitn(4, ',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        ids.push(f[3].to_string());
        params.push(CurveParams {
            a: f[2].trim().parse().map_err(|_| bad())?,
            b: f[1].trim().parse().map_err(|_| bad())?,
            r2: f[0].trim().parse().map_err(|_| bad())?,
            n_points: 0,
        });
    }
    Ok((ids, params))
}

/// Per-dimension z-score (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn transform(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

pub fn standardize(points: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Scaler)> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints { k: 2, n: points.len() });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have mixed dimensions".into()));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for d in 0..dim {
        mean[d] = points.iter().map(|p| p[d]).sum::<f64>() / n;
        sd[d] = (points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd[d] > 1e-12 * mean[d].abs().max(1.0)) {
            return Err(Error::DegenerateDimension(d));
        }
    }
    let scaler = Scaler { mean, sd };
    let scaled = points.iter().map(|p| scaler.transform(p)).collect();
    Ok((scaled, scaler))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in the space the points were clustered in.
    pub centroids: Vec<Vec<f64>>,
    /// Centroids mapped back through `scaler`; equal to `centroids` without one.
    pub centroids_original: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub scaler: Option<Scaler>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn with_scaler(mut self, scaler: Scaler) -> Self {
        self.centroids_original = self.centroids.iter().map(|c| scaler.inverse(c)).collect();
        self.scaler = Some(scaler);
        self
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.assignments.iter().for_each(|&a| s[a] += 1);
        s
    }

    /// Largest cluster, ties to the lower id.
    pub fn largest(&self) -> usize {
        let sizes = self.sizes();
        (0..self.k).fold(0, |best, c| if sizes[c] > sizes[best] { c } else { best })
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Nearest centroid, ties to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeanspp_seed(points: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

fn means(points: &[Vec<f64>], assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..points.len())
            .filter(|&i| counts[assign[i]] > 1)
            .map(|i| (i, sq_dist(&points[i], &centroids[assign[i]])))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((i, _)) = far else { return };
        assign[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

/// K-means with D²-weighted seeding followed by Lloyd iterations.
///
/// Stops when no centroid moves by `tol` or more (Euclidean) and the
/// assignments are a fixed point, or after `max_iters` iterations.
pub fn kmeanspp_cluster(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterModel> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, n });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have mixed dimensions".into()));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = kmeanspp_seed(points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters.max(1) {
        iterations += 1;
        repair_empty(points, &mut centroids, &mut assign, k);
        let next = means(points, &assign, k, dim);
        let shift = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        trace.push(inertia(points, &centroids, &assign));

        let reassigned: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let stable = reassigned == assign;
        assign = reassigned;
        if stable && shift < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("k-means hit max_iters={max_iters} before converging");
    }
    let inertia = inertia(points, &centroids, &assign);
    Ok(ClusterModel {
        k,
        centroids_original: centroids.clone(),
        centroids,
        assignments: assign,
        scaler: None,
        inertia,
        iterations,
        inertia_trace: trace,
    })
}

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const RESTARTS: usize = 3;

/// Best-inertia model over [`RESTARTS`] seeded restarts.
pub fn best_of_restarts(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..RESTARTS {
        let m = kmeanspp_cluster(points, k, seed::derive(seed, "kmeans-restart", &[k as u64, r as u64]), DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette coefficient; singleton clusters score 0.
pub fn mean_silhouette(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let n = points.len();
    let mut sizes = vec![0usize; k];
    assign.iter().for_each(|&a| sizes[a] += 1);
    let mut total = 0.0;
    for i in 0..n {
        if sizes[assign[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[assign[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let own = assign[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Picks the cluster count with the highest mean silhouette (ties to the
/// smaller k).
pub fn choose_k_silhouette(points: &[Vec<f64>], k_lo: usize, k_hi: usize, seed: u64) -> Result<(usize, Vec<(usize, f64)>)> {
    if k_lo < 2 || k_hi < k_lo {
        return Err(Error::InvalidArgument(format!("cluster range [{k_lo}, {k_hi}] must lie in [2, n-1]")));
    }
    if k_hi + 1 > points.len() {
        return Err(Error::TooFewPoints { k: k_hi + 1, n: points.len() });
    }
    let mut scores = Vec::with_capacity(k_hi - k_lo + 1);
    for k in k_lo..=k_hi {
        let m = best_of_restarts(points, k, seed)?;
        scores.push((k, mean_silhouette(points, &m.assignments, k)));
    }
    let best = scores
        .iter()
        .fold(scores[0], |b, &s| if s.1 > b.1 { s } else { b });
    Ok((best.0, scores))
}

/// Standardizes `(a, b)` and clusters with the best of three restarts.
pub fn cluster_params(params: &[CurveParams], k: usize, seed: u64) -> Result<ClusterModel> {
    let points: Vec<Vec<f64>> = params.iter().map(|p| vec![p.a, p.b]).collect();
    let (scaled, scaler) = standardize(&points)?;
    Ok(best_of_restarts(&scaled, k, seed)?.with_scaler(scaler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn values_above_one_are_not_capped() {
        let ys: Vec<f64> = (1..=10).map(|m| 0.9 * (m as f64).powf(0.3)).collect();
        let p = fit_power_law(&ys, DEFAULT_EPSILON).unwrap();
        assert!((p.a - 0.9).abs() < 1e-9 && (p.b - 0.3).abs() < 1e-9);
    }

    #[test]
    fn exact_power_law_recovered() {
        let ys: Vec<f64> = (1..=5).map(|m| 0.5 * (m as f64).powf(0.2)).collect();
        let p = fit_power_law(&ys, DEFAULT_EPSILON).unwrap();
        assert!((p.a - 0.5).abs() < 1e-9 && (p.b - 0.2).abs() < 1e-9);
        assert!((p.r2 - 1.0).abs() < 1e-12);
        // the listed 4-decimal values fit to the same curve up to rounding
        let listed = [0.5, 0.5743, 0.6229, 0.6607, 0.6899];
        let q = fit_power_law(&listed, DEFAULT_EPSILON).unwrap();
        assert!((q.a - 0.5).abs() < 1e-3 && (q.b - 0.2).abs() < 1e-3);
    }

    #[test]
    fn flat_curve() {
        let p = fit_power_law(&[0.7, 0.7, 0.7], DEFAULT_EPSILON).unwrap();
        assert_eq!((p.a, p.b, p.r2), (0.7f64.ln().exp(), 0.0, 1.0));
        assert!((p.a - 0.7).abs() < 1e-15);
    }

    /// Normal equations solved by Cramer's rule, independent of the centred
    /// formulation used by `fit_power_law`.
    fn normal_equations(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        ((sxx * sy - sx * sxy) / det, (n * sxy - sx * sy) / det)
    }

    #[test]
    fn zero_value_is_floored_at_epsilon() {
        let series = [0.4, 0.0, 0.6, 0.65];
        let p = fit_power_law(&series, 1e-3).unwrap();
        let xs: Vec<f64> = (1..=4).map(|m| (m as f64).ln()).collect();
        let ys = [0.4f64.ln(), 1e-3f64.ln(), 0.6f64.ln(), 0.65f64.ln()];
        let (c, b) = normal_equations(&xs, &ys);
        assert!((p.a - c.exp()).abs() < 1e-12, "{} vs {}", p.a, c.exp());
        assert!((p.b - b).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_power_law(&[0.5], 1e-3), Err(Error::InsufficientPoints(1))));
        let m = Matrix::from_rows(&[vec![0.5], vec![0.6]]).unwrap();
        assert!(matches!(fit_all(&m, 1e-3), Err(Error::InsufficientPoints(1))));
    }

    #[test]
    fn fit_all_rows() {
        let curves = [(0.3, 0.1), (0.6, -0.05), (0.9, 0.0)];
        let rows: Vec<Vec<f64>> = curves
            .iter()
            .map(|&(a, b)| (1..=6).map(|m| a * (m as f64).powf(b)).collect())
            .collect();
        let fitted = fit_all(&Matrix::from_rows(&rows).unwrap(), 1e-3).unwrap();
        for (p, &(a, b)) in fitted.iter().zip(&curves) {
            assert!((p.a - a).abs() < 1e-9 && (p.b - b).abs() < 1e-9);
        }
        let same = fit_all(&Matrix::from_rows(&[rows[0].clone(), rows[0].clone()]).unwrap(), 1e-3).unwrap();
        assert_eq!(same[0], same[1]);
    }

    #[test]
    fn params_csv_round_trip() {
        let ids = vec!["L1".to_string(), "odd,id".to_string()];
        let ps = vec![
            CurveParams { a: 0.5, b: 0.1, r2: 0.9, n_points: 0 },
            CurveParams { a: 0.25, b: -0.3, r2: 1.0, n_points: 0 },
        ];
        let mut buf = Vec::new();
        write_params_csv(&mut buf, &ids, &ps).unwrap();
        let (ids2, ps2) = read_params_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!((ids2, ps2), (ids, ps));
    }

    #[test]
    fn two_point_zscore() {
        let (s, scaler) = standardize(&[vec![1.0, 0.0], vec![3.0, 0.4]]).unwrap();
        assert_eq!(s, vec![vec![-1.0, -1.0], vec![1.0, 1.0]]);
        assert!(matches!(standardize(&[vec![1.0, 0.0], vec![1.0, 0.4]]), Err(Error::DegenerateDimension(0))));
        let back = scaler.inverse(&s[1]);
        assert!((back[0] - 3.0).abs() < 1e-12 && (back[1] - 0.4).abs() < 1e-12);
    }

    fn four_points() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]]
    }

    #[test]
    fn separated_pairs_split_for_every_seed() {
        let (pts, _) = standardize(&four_points()).unwrap();
        for seed in 0..50 {
            let m = kmeanspp_cluster(&pts, 2, seed, 100, 1e-6).unwrap();
            let a = &m.assignments;
            assert_eq!(a[0], a[1]);
            assert_eq!(a[2], a[3]);
            assert_ne!(a[0], a[2]);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = four_points();
        let m = kmeanspp_cluster(&pts, 1, 3, 100, 1e-6).unwrap();
        assert_eq!(m.centroids[0], vec![5.0, 5.5]);
        let tv: f64 = pts.iter().map(|p| sq_dist(p, &[5.0, 5.5])).sum();
        assert!((m.inertia - tv).abs() < 1e-12);
    }

    #[test]
    fn one_point_per_cluster() {
        let m = kmeanspp_cluster(&four_points(), 4, 1, 100, 1e-6).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(matches!(kmeanspp_cluster(&four_points(), 5, 1, 100, 1e-6), Err(Error::TooFewPoints { k: 5, n: 4 })));
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let m = kmeanspp_cluster(&pts, 3, 0, 100, 1e-6).unwrap();
        // coincident centroids: ties resolve to the lowest index
        assert_eq!(m.sizes().iter().sum::<usize>(), 5);
        assert_eq!(m.centroids.len(), 3);
        assert_eq!(m.inertia, 0.0);
    }

    /// Brute-force silhouette straight from the definition.
    fn silhouette_oracle(points: &[Vec<f64>], assign: &[usize]) -> f64 {
        let n = points.len();
        let d = |i: usize, j: usize| sq_dist(&points[i], &points[j]).sqrt();
        let clusters: std::collections::BTreeSet<usize> = assign.iter().copied().collect();
        let mut s = 0.0;
        for i in 0..n {
            let same: Vec<usize> = (0..n).filter(|&j| j != i && assign[j] == assign[i]).collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| d(i, j)).sum::<f64>() / same.len() as f64;
            let b = clusters
                .iter()
                .filter(|&&c| c != assign[i])
                .map(|&c| {
                    let other: Vec<usize> = (0..n).filter(|&j| assign[j] == c).collect();
                    other.iter().map(|&j| d(i, j)).sum::<f64>() / other.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            s += (b - a) / a.max(b);
        }
        s / n as f64
    }

    fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, Normal};
        let mut rng = seed::rng(seed);
        let normal = Normal::new(0.0, sd).unwrap();
        centers
            .iter()
            .flat_map(|c| (0..per).map(|_| vec![c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn silhouette_matches_oracle_and_picks_three_blobs() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]], 15, 1.0, 21);
        let m = best_of_restarts(&pts, 3, 5).unwrap();
        let got = mean_silhouette(&pts, &m.assignments, 3);
        assert!((got - silhouette_oracle(&pts, &m.assignments)).abs() < 1e-12);
        let (k, scores) = choose_k_silhouette(&pts, 2, 6, 5).unwrap();
        assert_eq!(k, 3);
        assert_eq!(scores.len(), 5);
        assert_eq!(choose_k_silhouette(&pts, 2, 2, 5).unwrap().0, 2);
    }

    #[test]
    fn two_blob_silhouette_is_high() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 10.0]], 20, 1.0, 3);
        let assign: Vec<usize> = (0..40).map(|i| i / 20).collect();
        let s = silhouette_oracle(&pts, &assign);
        assert!(s > 0.8, "{s}");
        assert!((mean_silhouette(&pts, &assign, 2) - s).abs() < 1e-12);
    }

    #[test]
    fn lloyd_inertia_never_rises_and_result_is_fixed_point() {
        for seed in 0..20 {
            let pts = blobs(&[[0.0, 0.0], [3.0, 0.0], [1.5, 2.5], [4.0, 4.0]], 12, 1.2, seed);
            let m = kmeanspp_cluster(&pts, 4, seed, 100, 1e-6).unwrap();
            for w in m.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "seed {seed}: {:?}", m.inertia_trace);
            }
            let again: Vec<usize> = pts.iter().map(|p| nearest(p, &m.centroids).0).collect();
            assert_eq!(again, m.assignments);
            let means = means(&pts, &m.assignments, 4, 2);
            for (a, b) in means.iter().zip(&m.centroids) {
                assert!(sq_dist(a, b) < 1e-24);
            }
            assert_eq!(kmeanspp_cluster(&pts, 4, seed, 100, 1e-6).unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn scaling_series_scales_a_only(
            a in 0.05f64..0.5,
            b in -0.3f64..0.3,
            c in 0.5f64..1.9,
            noise in proptest::collection::vec(-0.01f64..0.01, 6),
        ) {
            let ys: Vec<f64> = (1..=6).map(|m| (a * (m as f64).powf(b) + noise[m - 1] * a).clamp(0.002, 0.5)).collect();
            let scaled: Vec<f64> = ys.iter().map(|y| y * c).collect();
            prop_assume!(scaled.iter().all(|&y| y > 1e-3 && y <= 1.0));
            let p = fit_power_law(&ys, 1e-3).unwrap();
            let q = fit_power_law(&scaled, 1e-3).unwrap();
            prop_assert!((q.a - c * p.a).abs() < 1e-9);
            prop_assert!((q.b - p.b).abs() < 1e-9);
        }

        #[test]
        fn standardize_round_trips(pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..20)) {
            let pts: Vec<Vec<f64>> = pts.into_iter().map(|(x, y)| vec![x, y]).collect();
            if let Ok((scaled, scaler)) = standardize(&pts) {
                for (p, s) in pts.iter().zip(&scaled) {
                    let back = scaler.inverse(s);
                    prop_assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
                }
            }
        }
    }
}
