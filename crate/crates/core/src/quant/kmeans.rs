//! Exact weighted k-means in one dimension.
//!
//! Optimal 1-D clusters are contiguous runs of the sorted values, so the
//! problem reduces to choosing `k - 1` cut points. The cut points are found by
//! dynamic programming over the sorted positive-weight values; each layer of
//! the table is filled with the divide-and-conquer optimization, which is valid
//! because the within-cluster cost satisfies the quadrangle inequality.

use crate::error::{Error, Result};

/// Result of [`kmeans_1d_weighted`].
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// `k` centroids, ascending.
    pub centroids: Vec<f64>,
    /// Cluster index of every input value.
    pub assignments: Vec<usize>,
    /// Weighted squared error of each cluster around its centroid.
    pub cluster_sse: Vec<f64>,
    /// Set when fewer than `k` distinct positive-weight values exist and the
    /// tail clusters are empty copies of the largest centroid.
    pub padded: bool,
}

impl Clustering {
    /// Total weighted squared error.
    pub fn sse(&self) -> f64 {
        self.cluster_sse.iter().sum()
    }
}

/// Weighted mean of `members` (pairs of value and weight).
///
/// Returns the common value exactly when every member has the same value.
pub(crate) fn weighted_mean(members: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let mut first = None;
    let mut all_equal = true;
    let (mut sw, mut swx) = (0.0f64, 0.0f64);
    for (x, w) in members {
        match first {
            None => first = Some(x),
            Some(f) => all_equal &= f == x,
        }
        sw += w;
        swx += w * x;
    }
    match first {
        Some(f) if all_equal => f,
        _ => swx / sw,
    }
}

/// Weighted squared error of `members` around `center`.
pub(crate) fn weighted_sse(members: impl Iterator<Item = (f64, f64)>, center: f64) -> f64 {
    members
        .map(|(x, w)| {
            let d = x - center;
            w * d * d
        })
        .sum()
}

/// Index of the nearest centroid; equal distances go to the lower index.
pub(crate) fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centroids.iter().enumerate() {
        let d = (x - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn validate(values: &[f64], weights: &[f64], k: usize) -> Result<()> {
    if values.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(Error::Parameter("cannot cluster an empty vector".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("value {i} is not finite")));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Parameter(format!(
            "weight {i} is negative or not finite"
        )));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Parameter("total weight must be positive".into()));
    }
    Ok(())
}

/// Prefix sums of weight, weight·x and weight·x² over sorted points, centered
/// on the overall weighted mean to limit cancellation.
struct SegmentCost {
    w: Vec<f64>,
    wx: Vec<f64>,
    wxx: Vec<f64>,
}

impl SegmentCost {
    fn new(points: &[(f64, f64)]) -> Self {
        let center = weighted_mean(points.iter().copied());
        let n = points.len();
        let mut w = Vec::with_capacity(n + 1);
        let mut wx = Vec::with_capacity(n + 1);
        let mut wxx = Vec::with_capacity(n + 1);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        w.push(a);
        wx.push(b);
        wxx.push(c);
        for &(x, wt) in points {
            let d = x - center;
            a += wt;
            b += wt * d;
            c += wt * d * d;
            w.push(a);
            wx.push(b);
            wxx.push(c);
        }
        Self { w, wx, wxx }
    }

    /// Cost of the half-open segment `[j, i)`.
    #[inline]
    fn cost(&self, j: usize, i: usize) -> f64 {
        let w = self.w[i] - self.w[j];
        if w <= 0.0 {
            return 0.0;
        }
        let s = self.wx[i] - self.wx[j];
        let q = self.wxx[i] - self.wxx[j];
        (q - s * s / w).max(0.0)
    }
}

/// Fills `cur[i]` for `i` in `lo..=hi` with the best last cut, searching
/// `opt_lo..=opt_hi`. Ties keep the smallest cut.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    cost: &SegmentCost,
    prev: &[f64],
    cur: &mut [f64],
    back: &mut [u32],
    min_cut: usize,
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let start = opt_lo.max(min_cut);
    let end = opt_hi.min(mid - 1);
    let mut best = f64::INFINITY;
    let mut best_j = start;
    for j in start..=end {
        let v = prev[j] + cost.cost(j, mid);
        if v < best {
            best = v;
            best_j = j;
        }
    }
    cur[mid] = best;
    back[mid] = best_j as u32;
    if mid > lo {
        fill_layer(cost, prev, cur, back, min_cut, lo, mid - 1, opt_lo, best_j);
    }
    fill_layer(cost, prev, cur, back, min_cut, mid + 1, hi, best_j, opt_hi);
}

/// Cut points `0 = b_0 < b_1 < ... < b_k = n` of the optimal partition of
/// `points` (sorted) into `k` nonempty segments.
fn optimal_cuts(points: &[(f64, f64)], k: usize) -> Vec<usize> {
    let n = points.len();
    debug_assert!(k >= 1 && k <= n);
    let cost = SegmentCost::new(points);

    let mut prev: Vec<f64> = (0..=n).map(|i| cost.cost(0, i)).collect();
    let mut cur = vec![f64::INFINITY; n + 1];
    // back[m][i]: start of the last segment when the first i points form m + 1 clusters.
    let mut back = vec![vec![0u32; n + 1]; k];
    for m in 1..k {
        cur.iter_mut().for_each(|v| *v = f64::INFINITY);
        let (lo, hi) = (m + 1, n - (k - 1 - m));
        fill_layer(&cost, &prev, &mut cur, &mut back[m], m, lo, hi, m, hi - 1);
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut cuts = vec![0usize; k + 1];
    cuts[k] = n;
    let mut i = n;
    for m in (1..k).rev() {
        i = back[m][i] as usize;
        cuts[m] = i;
    }
    cuts
}

/// Globally optimal weighted k-means of `values`.
///
/// Only positive-weight values shape the partition; zero-weight values are
/// assigned to their nearest centroid afterwards. When fewer than `k` distinct
/// positive-weight values exist, one cluster per distinct value is produced and
/// the remaining clusters are empty duplicates of the largest centroid.
pub fn kmeans_1d_weighted(values: &[f64], weights: &[f64], k: usize) -> Result<Clustering> {
    validate(values, weights, k)?;

    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let points: Vec<(f64, f64)> = order.iter().map(|&i| (values[i], weights[i])).collect();

    let distinct = 1 + points.windows(2).filter(|p| p[0].0 != p[1].0).count();
    let k_eff = k.min(distinct);
    let cuts = optimal_cuts(&points, k_eff);

    let mut centroids = Vec::with_capacity(k);
    let mut cluster_sse = Vec::with_capacity(k);
    let mut assignments = vec![usize::MAX; values.len()];
    for c in 0..k_eff {
        let seg = &points[cuts[c]..cuts[c + 1]];
        let mean = weighted_mean(seg.iter().copied());
        centroids.push(mean);
        cluster_sse.push(weighted_sse(seg.iter().copied(), mean));
        for &i in &order[cuts[c]..cuts[c + 1]] {
            assignments[i] = c;
        }
    }
    let padded = k_eff < k;
    if padded {
        let top = *centroids.last().expect("at least one cluster");
        centroids.resize(k, top);
        cluster_sse.resize(k, 0.0);
    }
    for (i, a) in assignments.iter_mut().enumerate() {
        if *a == usize::MAX {
            *a = nearest(&centroids, values[i]);
        }
    }

    Ok(Clustering {
        centroids,
        assignments,
        cluster_sse,
        padded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_values_single_cluster() {
        let c = kmeans_1d_weighted(&[1.0; 4], &[1.0; 4], 1).unwrap();
        assert_eq!(c.centroids, vec![1.0]);
        assert_eq!(c.sse(), 0.0);
        assert!(!c.padded);
    }

    #[test]
    fn symmetric_two_clusters() {
        let c = kmeans_1d_weighted(&[0.0, 1.0, 10.0, 11.0], &[1.0; 4], 2).unwrap();
        assert_eq!(c.centroids, vec![0.5, 10.5]);
        assert_eq!(c.assignments, vec![0, 0, 1, 1]);
    }

    #[test]
    fn unsorted_input_is_handled() {
        let c = kmeans_1d_weighted(&[11.0, 0.0, 10.0, 1.0], &[1.0; 4], 2).unwrap();
        assert_eq!(c.centroids, vec![0.5, 10.5]);
        assert_eq!(c.assignments, vec![1, 0, 1, 0]);
    }

    #[test]
    fn k_above_distinct_count_pads() {
        let c = kmeans_1d_weighted(&[3.0, 1.0, 3.0], &[1.0; 3], 4).unwrap();
        assert!(c.padded);
        assert_eq!(c.centroids, vec![1.0, 3.0, 3.0, 3.0]);
        assert_eq!(c.assignments, vec![1, 0, 1]);
        assert_eq!(c.sse(), 0.0);
    }

    #[test]
    fn zero_weight_values_follow_nearest_centroid() {
        let values = [0.0, 1.0, 10.0, 11.0, 6.0];
        let weights = [1.0, 1.0, 1.0, 1.0, 0.0];
        let c = kmeans_1d_weighted(&values, &weights, 2).unwrap();
        assert_eq!(c.centroids, vec![0.5, 10.5]);
        assert_eq!(c.assignments[4], 1);
    }

    #[test]
    fn equidistant_zero_weight_goes_low() {
        let c = kmeans_1d_weighted(&[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(c.assignments[2], 0);
    }

    #[test]
    fn weights_pull_centroid() {
        let c = kmeans_1d_weighted(&[0.0, 4.0], &[3.0, 1.0], 1).unwrap();
        assert_eq!(c.centroids, vec![1.0]);
        assert_eq!(c.sse(), 12.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kmeans_1d_weighted(&[1.0, 2.0], &[1.0], 1),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            kmeans_1d_weighted(&[1.0], &[1.0], 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            kmeans_1d_weighted(&[], &[], 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            kmeans_1d_weighted(&[1.0, 2.0], &[0.0, 0.0], 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            kmeans_1d_weighted(&[1.0, 2.0], &[1.0, -1.0], 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn exact_mean_for_repeated_value() {
        let c = kmeans_1d_weighted(&[0.1, 0.1, 0.1], &[3.0, 7.0, 1.3], 1).unwrap();
        assert_eq!(c.centroids[0], 0.1);
        assert_eq!(c.sse(), 0.0);
    }
}
