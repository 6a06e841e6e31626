//! One-dimensional k-means with elbow selection, used to turn operational
//! counts and times into ordinal levels.
//!
//! In one dimension the optimal k-partition is contiguous in sorted order, so
//! the global optimum is found by dynamic programming over the distinct
//! values. Lloyd iterations then run to the assignment fixpoint from both the
//! optimal partition and a seeded k-means++ start; the lower WCSS wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub k: usize,
    /// Strictly increasing.
    pub centroids: Vec<f64>,
    /// Midpoints of adjacent centroids (`k - 1` entries).
    pub boundaries: Vec<f64>,
    pub wcss: f64,
    /// Cluster index per input value, in input order.
    pub assignments: Vec<usize>,
}

/// Distinct sorted values with multiplicities.
fn distinct(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut uniq: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for v in sorted {
        if uniq.last() == Some(&v) {
            *counts.last_mut().unwrap() += 1.0;
        } else {
            uniq.push(v);
            counts.push(1.0);
        }
    }
    (uniq, counts)
}

struct PrefixSums {
    w: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl PrefixSums {
    fn new(values: &[f64], weights: &[f64], shift: f64) -> Self {
        let n = values.len();
        let (mut w, mut s1, mut s2) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
        for i in 0..n {
            let x = values[i] - shift;
            w[i + 1] = w[i] + weights[i];
            s1[i + 1] = s1[i] + weights[i] * x;
            s2[i + 1] = s2[i] + weights[i] * x * x;
        }
        Self { w, s1, s2 }
    }

    /// Weighted sum of squared deviations of `values[i..=j]`.
    fn cost(&self, i: usize, j: usize) -> f64 {
        let w = self.w[j + 1] - self.w[i];
        let s1 = self.s1[j + 1] - self.s1[i];
        let s2 = self.s2[j + 1] - self.s2[i];
        (s2 - s1 * s1 / w).max(0.0)
    }
}

/// Exact optimal contiguous k-partition of the distinct values; returns the
/// start index of each cluster.
fn optimal_partition(values: &[f64], weights: &[f64], k: usize) -> Vec<usize> {
    let m = values.len();
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let sums = PrefixSums::new(values, weights, mean);

    // layer[q][j]: best cost of q+1 clusters over values[0..=j]
    let mut cost = vec![vec![f64::INFINITY; m]; k];
    let mut arg = vec![vec![0usize; m]; k];
    for j in 0..m {
        cost[0][j] = sums.cost(0, j);
    }
    for q in 1..k {
        let (done, rest) = cost.split_at_mut(q);
        let prev = &done[q - 1];
        let cur = &mut rest[0];
        fill_layer(&sums, prev, cur, &mut arg[q], q, q, m - 1, q, m - 1);
    }

    let mut starts = vec![0usize; k];
    let mut j = m - 1;
    for q in (1..k).rev() {
        let i = arg[q][j];
        starts[q] = i;
        j = i - 1;
    }
    starts
}

/// Divide-and-conquer layer fill: the optimal split point is monotone in `j`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    sums: &PrefixSums,
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [usize],
    q: usize,
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let mut best = f64::INFINITY;
    let mut best_i = opt_lo.max(q);
    for i in opt_lo.max(q)..=opt_hi.min(mid) {
        let c = prev[i - 1] + sums.cost(i, mid);
        if c < best {
            best = c;
            best_i = i;
        }
    }
    cur[mid] = best;
    arg[mid] = best_i;
    if mid > lo {
        fill_layer(sums, prev, cur, arg, q, lo, mid - 1, opt_lo, best_i);
    }
    fill_layer(sums, prev, cur, arg, q, mid + 1, hi, best_i, opt_hi);
}

fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = (v - centroids[0]).abs();
    for (c, &m) in centroids.iter().enumerate().skip(1) {
        let d = (v - m).abs();
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd iterations to the assignment fixpoint.
fn lloyd(values: &[f64], mut centroids: Vec<f64>) -> (Vec<f64>, Vec<usize>) {
    let mut assignments: Vec<usize> = values.iter().map(|&v| nearest(&centroids, v)).collect();
    loop {
        let k = centroids.len();
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&v, &a) in values.iter().zip(&assignments) {
            sum[a] += v;
            count[a] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centroids[c] = sum[c] / count[c] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|&v| nearest(&centroids, v)).collect();
        if next == assignments {
            return (centroids, assignments);
        }
        assignments = next;
    }
}

fn wcss_of(values: &[f64], centroids: &[f64], assignments: &[usize]) -> f64 {
    values
        .iter()
        .zip(assignments)
        .map(|(v, &a)| (v - centroids[a]).powi(2))
        .sum()
}

/// k-means++ seeding over the distinct values.
fn plus_plus_seeds(values: &[f64], k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|&v| {
                centers
                    .iter()
                    .map(|&c| (v - c).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(values[pick]);
    }
    centers.sort_by(|a, b| a.total_cmp(b));
    centers
}

fn finish(values: &[f64], centroids: Vec<f64>, assignments: Vec<usize>) -> ClusterResult {
    let boundaries = centroids.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let wcss = wcss_of(values, &centroids, &assignments);
    ClusterResult {
        k: centroids.len(),
        centroids,
        boundaries,
        wcss,
        assignments,
    }
}

pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<ClusterResult> {
    if values.is_empty() {
        return Err(Error::domain("k-means needs at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("k-means values must be finite"));
    }
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    let (uniq, counts) = distinct(values);
    if k > uniq.len() {
        return Err(Error::InfeasibleK {
            k,
            distinct: uniq.len(),
        });
    }

    let starts = optimal_partition(&uniq, &counts, k);
    let init: Vec<f64> = (0..k)
        .map(|c| {
            let lo = starts[c];
            let hi = if c + 1 < k { starts[c + 1] } else { uniq.len() };
            let w: f64 = counts[lo..hi].iter().sum();
            (lo..hi).map(|i| uniq[i] * counts[i]).sum::<f64>() / w
        })
        .collect();
    let (c_opt, a_opt) = lloyd(values, init);
    let best = finish(values, c_opt, a_opt);

    let (c_pp, a_pp) = lloyd(values, plus_plus_seeds(&uniq, k, seed));
    let alt = finish(values, c_pp, a_pp);
    if alt.wcss < best.wcss && alt.centroids.windows(2).all(|w| w[0] < w[1]) {
        Ok(alt)
    } else {
        Ok(best)
    }
}

/// Rule turning a WCSS-vs-k curve into a cluster count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ElbowCriterion {
    /// Maximize `log W(k-1) - 2 log W(k) + log W(k+1)`.
    #[default]
    LogSecondDifference,
    /// Maximize `W(k-1) - 2 W(k) + W(k+1)`.
    SecondDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElbowResult {
    pub k: usize,
    /// `(k, wcss)` for `k = 1..=k_max` (or fewer when truncated).
    pub curve: Vec<(usize, f64)>,
    /// Set when fewer distinct values than `k_max` were available.
    pub truncated: bool,
}

pub fn elbow_select(values: &[f64], k_max: usize, seed: u64) -> Result<ElbowResult> {
    elbow_select_with(values, k_max, seed, ElbowCriterion::default())
}

pub fn elbow_select_with(
    values: &[f64],
    k_max: usize,
    seed: u64,
    criterion: ElbowCriterion,
) -> Result<ElbowResult> {
    if k_max < 2 {
        return Err(Error::domain("elbow selection needs k_max >= 2"));
    }
    if values.is_empty() {
        return Err(Error::domain("elbow selection needs at least one value"));
    }
    let n_distinct = distinct(values).0.len();
    let top = k_max.min(n_distinct);
    let curve = (1..=top)
        .map(|k| kmeans_1d(values, k, seed).map(|r| (k, r.wcss)))
        .collect::<Result<Vec<_>>>()?;
    let truncated = top < k_max;

    let w1 = curve[0].1;
    let k = if w1 <= 0.0 || curve.len() == 1 {
        1
    } else if curve.len() == 2 {
        2
    } else {
        let floor = w1 * 1e-12;
        let t = |w: f64| match criterion {
            ElbowCriterion::LogSecondDifference => w.max(floor).ln(),
            ElbowCriterion::SecondDifference => w,
        };
        let mut best_k = 2;
        let mut best = f64::NEG_INFINITY;
        for k in 2..curve.len() {
            let d = t(curve[k - 2].1) - 2.0 * t(curve[k - 1].1) + t(curve[k].1);
            if d > best {
                best = d;
                best_k = k;
            }
        }
        best_k
    };
    Ok(ElbowResult {
        k,
        curve,
        truncated,
    })
}

/// Maps each value to its cluster label: `value <= boundaries[i]` selects
/// cluster `i` (ties go to the lower cluster).
pub fn bin_by_clusters(
    values: &[f64],
    result: &ClusterResult,
    labels: &[String],
) -> Result<Vec<String>> {
    if labels.len() != result.k {
        return Err(Error::Arity {
            what: "cluster labels".into(),
            expected: result.k,
            found: labels.len(),
        });
    }
    Ok(values
        .iter()
        .map(|&v| {
            let c = result
                .boundaries
                .iter()
                .position(|&b| v <= b)
                .unwrap_or(result.k - 1);
            labels[c].clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over contiguous partitions of the sorted sample.
    fn brute_force_wcss(values: &[f64], k: usize) -> f64 {
        let mut x = values.to_vec();
        x.sort_by(|a, b| a.total_cmp(b));
        fn sse(s: &[f64]) -> f64 {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum()
        }
        fn rec(x: &[f64], k: usize) -> f64 {
            if k == 1 {
                return sse(x);
            }
            (1..=x.len() - k + 1)
                .map(|cut| sse(&x[..cut]) + rec(&x[cut..], k - 1))
                .fold(f64::INFINITY, f64::min)
        }
        rec(&x, k)
    }

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let v = [1.0, 4.0, 2.0, 9.0];
        let r = kmeans_1d(&v, 1, 3).unwrap();
        assert!((r.centroids[0] - 4.0).abs() < 1e-12);
        assert!((r.wcss - (9.0 + 0.0 + 4.0 + 25.0)).abs() < 1e-12);
        assert!(r.boundaries.is_empty());
    }

    #[test]
    fn constant_data() {
        let r = kmeans_1d(&[2.0, 2.0, 2.0], 1, 0).unwrap();
        assert_eq!(r.centroids, vec![2.0]);
        assert_eq!(r.wcss, 0.0);
    }

    #[test]
    fn infeasible_k() {
        assert!(matches!(
            kmeans_1d(&[1.0, 1.0, 2.0], 3, 0),
            Err(Error::InfeasibleK { k: 3, distinct: 2 })
        ));
    }

    #[test]
    fn three_packets() {
        let mut v = Vec::new();
        for (i, c) in [1.0, 5.0, 10.0].iter().enumerate() {
            for j in 0..7 {
                v.push(c + 0.02 * (j as f64 - 3.0) + 0.001 * i as f64);
            }
        }
        let r = kmeans_1d(&v, 3, 11).unwrap();
        for (got, want) in r.centroids.iter().zip([1.0, 5.0, 10.0]) {
            assert!((got - want).abs() < 0.1);
        }
        assert!((r.wcss - brute_force_wcss(&v, 3)).abs() < 1e-9);
        assert!((r.boundaries[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn bins_follow_boundaries() {
        let r = ClusterResult {
            k: 3,
            centroids: vec![1.0, 5.0, 10.0],
            boundaries: vec![2.5, 7.5],
            wcss: 0.0,
            assignments: vec![],
        };
        let l = labels(&["Low", "Medium", "High"]);
        assert_eq!(bin_by_clusters(&[2.0], &r, &l).unwrap(), vec!["Low"]);
        assert_eq!(bin_by_clusters(&[2.5], &r, &l).unwrap(), vec!["Low"]);
        assert_eq!(bin_by_clusters(&[7.6], &r, &l).unwrap(), vec!["High"]);
        assert!(matches!(
            bin_by_clusters(&[1.0], &r, &l[..2]),
            Err(Error::Arity { .. })
        ));

        let r4 = ClusterResult {
            k: 4,
            centroids: vec![2.0, 7.0, 16.0, 31.0],
            boundaries: vec![4.5, 11.5, 23.5],
            wcss: 0.0,
            assignments: vec![],
        };
        let l4 = labels(&["Low", "Medium", "High", "Very High"]);
        assert_eq!(
            bin_by_clusters(&[25.0], &r4, &l4).unwrap(),
            vec!["Very High"]
        );
    }

    #[test]
    fn elbow_on_constant_data() {
        let e = elbow_select(&[3.0; 10], 5, 0).unwrap();
        assert_eq!(e.k, 1);
        assert!(e.truncated);
        assert!(e.curve.iter().all(|&(_, w)| w == 0.0));
    }

    #[test]
    fn elbow_truncates_with_few_distinct_values() {
        let e = elbow_select(&[1.0, 1.0, 5.0, 9.0], 6, 0).unwrap();
        assert!(e.truncated);
        assert_eq!(e.curve.len(), 3);
    }

    fn packets(centres: &[f64], per: usize, width: f64) -> Vec<f64> {
        let mut v = Vec::new();
        for &c in centres {
            for j in 0..per {
                v.push(c + width * (j as f64 / (per - 1) as f64 - 0.5));
            }
        }
        v
    }

    #[test]
    fn raw_second_difference_misses_uneven_elbows() {
        let v = packets(&[5.0, 15.0, 27.0, 40.0], 8, 0.5);
        let raw = elbow_select_with(&v, 6, 0, ElbowCriterion::SecondDifference).unwrap();
        let log = elbow_select(&v, 6, 0).unwrap();
        assert_eq!(raw.k, 2);
        assert_eq!(log.k, 4);
    }

    proptest! {
        #[test]
        fn matches_contiguous_brute_force(
            v in proptest::collection::vec(-50.0f64..50.0, 4..11),
            k in 1usize..4,
            seed in 0u64..100,
        ) {
            let r = kmeans_1d(&v, k, seed).unwrap();
            let oracle = brute_force_wcss(&v, k);
            prop_assert!((r.wcss - oracle).abs() <= 1e-9 * (1.0 + oracle));
            let recomputed: f64 = v.iter().zip(&r.assignments)
                .map(|(x, &a)| (x - r.centroids[a]).powi(2)).sum();
            prop_assert!((recomputed - r.wcss).abs() <= 1e-12 * (1.0 + r.wcss));
            prop_assert!(r.centroids.windows(2).all(|w| w[0] < w[1]));
            for (x, &a) in v.iter().zip(&r.assignments) {
                prop_assert_eq!(a, nearest(&r.centroids, *x));
            }
        }

        #[test]
        fn wcss_non_increasing_in_k(v in proptest::collection::vec(0.0f64..100.0, 8..30)) {
            let e = elbow_select(&v, 6, 1).unwrap();
            for w in e.curve.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 + 1e-9);
            }
        }

        #[test]
        fn permutation_keeps_centroids(
            v in proptest::collection::vec(0.0f64..100.0, 6..25),
            shift in 1usize..5,
        ) {
            let mut p = v.clone();
            p.rotate_left(shift % v.len());
            let a = kmeans_1d(&v, 3, 5).unwrap();
            let b = kmeans_1d(&p, 3, 5).unwrap();
            for (x, y) in a.centroids.iter().zip(&b.centroids) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
