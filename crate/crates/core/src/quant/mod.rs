//! Seed quantization and incremental upscaling.

mod kmeans;
mod layer;
mod sensitivity;

pub use kmeans::{kmeans_1d_weighted, Clustering};
pub(crate) use layer::validate_tables;
pub use layer::{
    build_any_precision, build_channel, extend_any_precision, AnyPrecisionLayer, BuildReport, CentroidTable,
};
pub use sensitivity::{estimate_sensitivity_diag, SensitivityEstimate, SensitivityMap};

use crate::error::{Error, Result};
use crate::{MAX_BITS, MIN_BITS};
use kmeans::{nearest, weighted_mean, weighted_sse};

/// One output channel quantized at a single bit-width.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelQuantization {
    bit_width: u8,
    codes: Vec<u8>,
    centroids: Vec<f64>,
    cluster_sse: Vec<f64>,
}

impl ChannelQuantization {
    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// `2^bit_width` centroids, non-decreasing.
    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn cluster_sse(&self) -> &[f64] {
        &self.cluster_sse
    }

    /// Weighted SSE of the channel.
    ///
    /// Summed as a balanced binary tree over cluster indices, so that the
    /// `k + 1`-bit tree is the `k`-bit tree with each leaf replaced by the sum
    /// of its two sub-clusters. Since upscaling only accepts splits whose
    /// pair sum does not exceed the parent, the total is non-increasing in
    /// bit-width in floating point, not only in exact arithmetic.
    pub fn sse(&self) -> f64 {
        tree_sum(&self.cluster_sse)
    }

    /// Dequantized value of every weight.
    pub fn dequantized(&self) -> Vec<f64> {
        self.codes
            .iter()
            .map(|&c| self.centroids[c as usize])
            .collect()
    }

    /// Rebuilds a channel quantization from existing codes: centroids become
    /// the weighted means of their members. Clusters without positive-weight
    /// members take the matching entry of `fallback`, clamped between the
    /// neighbouring centroids.
    pub fn from_codes(
        row: &[f64],
        sens: &[f64],
        codes: &[u8],
        bit_width: u8,
        fallback: &[f64],
    ) -> Result<Self> {
        check_bits(bit_width)?;
        let k = 1usize << bit_width;
        if row.len() != sens.len() || row.len() != codes.len() || fallback.len() != k {
            return Err(Error::Shape(format!(
                "row {}, sensitivity {}, codes {}, fallback {} (expected {k})",
                row.len(),
                sens.len(),
                codes.len(),
                fallback.len()
            )));
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in codes.iter().enumerate() {
            if c as usize >= k {
                return Err(Error::CodeRange {
                    row: 0,
                    col: i,
                    code: c as u32,
                    bits: bit_width,
                });
            }
            if sens[i] > 0.0 {
                members[c as usize].push(i);
            }
        }
        let mut centroids: Vec<Option<f64>> = Vec::with_capacity(k);
        let mut cluster_sse = Vec::with_capacity(k);
        for m in &members {
            let pts = || m.iter().map(|&i| (row[i], sens[i]));
            if m.is_empty() {
                centroids.push(None);
                cluster_sse.push(0.0);
            } else {
                let c = weighted_mean(pts());
                centroids.push(Some(c));
                cluster_sse.push(weighted_sse(pts(), c));
            }
        }
        // Empty clusters take the fallback, held between their neighbours.
        let mut next_known = vec![f64::INFINITY; k + 1];
        for b in (0..k).rev() {
            next_known[b] = centroids[b].unwrap_or(next_known[b + 1]);
        }
        let mut prev = f64::NEG_INFINITY;
        let centroids: Vec<f64> = (0..k)
            .map(|b| {
                let c = centroids[b].unwrap_or_else(|| fallback[b].clamp(prev, next_known[b + 1].max(prev)));
                prev = c;
                c
            })
            .collect();
        if centroids.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Parameter(
                "codes do not induce sorted centroids".into(),
            ));
        }
        Ok(Self {
            bit_width,
            codes: codes.to_vec(),
            centroids,
            cluster_sse,
        })
    }
}

pub(crate) fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Parameter(format!(
            "bit-width {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

/// Quantizes one channel at `bits` with optimal weighted 1-D clustering.
///
/// An all-zero sensitivity vector falls back to uniform weights; the second
/// element of the result reports whether that happened.
pub fn quantize_channel(row: &[f64], sens: &[f64], bits: u8) -> Result<(ChannelQuantization, bool)> {
    check_bits(bits)?;
    let uniform;
    let (weights, fallback) = if sens.iter().any(|&s| s > 0.0) {
        (sens, false)
    } else {
        uniform = vec![1.0; sens.len()];
        (&uniform[..], true)
    };
    let cl = kmeans_1d_weighted(row, weights, 1usize << bits)?;
    Ok((
        ChannelQuantization {
            bit_width: bits,
            codes: cl.assignments.iter().map(|&a| a as u8).collect(),
            centroids: cl.centroids,
            cluster_sse: cl.cluster_sse,
        },
        fallback,
    ))
}

/// Seed quantization of every output channel of `w` at `n1` bits.
///
/// Returns the per-channel quantizations and the indices of channels whose
/// sensitivity was entirely zero (quantized with uniform weights instead).
pub fn quantize_seed(
    w: &crate::Matrix,
    s: &SensitivityMap,
    n1: u8,
) -> Result<(Vec<ChannelQuantization>, Vec<usize>)> {
    use rayon::prelude::*;
    check_bits(n1)?;
    if w.shape() != s.shape() {
        return Err(Error::Shape(format!(
            "weights {:?} vs sensitivity {:?}",
            w.shape(),
            s.shape()
        )));
    }
    let results: Vec<_> = (0..w.rows())
        .into_par_iter()
        .map(|r| {
            let (row, sens, fallback) = row_pair(w, s, r);
            quantize_channel(&row, &sens, n1).map(|(cq, _)| (cq, fallback))
        })
        .collect::<Result<_>>()?;
    let mut fallbacks = Vec::new();
    let mut channels = Vec::with_capacity(results.len());
    for (r, (cq, fb)) in results.into_iter().enumerate() {
        if fb {
            log::warn!("channel {r} has zero sensitivity; using uniform weights");
            fallbacks.push(r);
        }
        channels.push(cq);
    }
    Ok((channels, fallbacks))
}

/// Row `r` of the weights and sensitivities in `f64`. An all-zero
/// sensitivity row is replaced by ones, reported by the flag.
pub(crate) fn row_pair(
    w: &crate::Matrix,
    s: &SensitivityMap,
    r: usize,
) -> (Vec<f64>, Vec<f64>, bool) {
    let row: Vec<f64> = w.row(r).iter().map(|&v| v as f64).collect();
    let mut sens: Vec<f64> = s.values().row(r).iter().map(|&v| v as f64).collect();
    let fallback = !sens.iter().any(|&v| v > 0.0);
    if fallback {
        sens.iter_mut().for_each(|v| *v = 1.0);
    }
    (row, sens, fallback)
}

/// Splits every cluster of `cq` into two sub-clusters, appending one bit.
///
/// A cluster with code `b` becomes `2b` and `2b + 1` through exact weighted
/// 2-means over its positive-weight members (an optimal threshold over the
/// sorted members). Clusters with fewer than two distinct positive-weight
/// values are not split: both sub-centroids equal the parent centroid and all
/// members take code `2b`. A split is also rejected if its computed SSE would
/// exceed the parent's. Zero-weight members follow the nearer sub-centroid.
pub fn upscale(cq: &ChannelQuantization, row: &[f64], sens: &[f64]) -> Result<ChannelQuantization> {
    upscale_in_order(cq, row, sens, &sorted_order(row))
}

/// Indices of `row` ordered by value, ties by index.
pub(crate) fn sorted_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &c| row[a].total_cmp(&row[c]).then(a.cmp(&c)));
    order
}

/// [`upscale`] given the channel's [`sorted_order`]. Clusters are value
/// intervals, so bucketing that order by code leaves every cluster sorted.
pub(crate) fn upscale_in_order(
    cq: &ChannelQuantization,
    row: &[f64],
    sens: &[f64],
    order: &[usize],
) -> Result<ChannelQuantization> {
    if cq.bit_width >= MAX_BITS {
        return Err(Error::Parameter(format!(
            "cannot upscale beyond {MAX_BITS} bits"
        )));
    }
    if row.len() != cq.codes.len() || sens.len() != cq.codes.len() {
        return Err(Error::Shape(format!(
            "channel has {} codes but row {} and sensitivity {}",
            cq.codes.len(),
            row.len(),
            sens.len()
        )));
    }
    if order.len() != row.len() {
        return Err(Error::Shape(format!("order has {} entries for {} values", order.len(), row.len())));
    }
    let k = cq.centroids.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in order {
        members[cq.codes[i] as usize].push(i);
    }

    let mut codes = vec![0u8; cq.codes.len()];
    let mut centroids = vec![0.0; 2 * k];
    let mut cluster_sse = vec![0.0; 2 * k];
    let mut sorted: Vec<usize> = Vec::new();
    for (b, m) in members.iter().enumerate() {
        let parent = cq.centroids[b];
        let parent_sse = cq.cluster_sse[b];
        let (lo, hi) = (2 * b, 2 * b + 1);

        sorted.clear();
        sorted.extend(m.iter().copied().filter(|&i| sens[i] > 0.0));

        let split = best_split(&sorted, row, sens, parent).and_then(|t| {
            let pts = |ix: &[usize]| ix.iter().map(|&i| (row[i], sens[i])).collect::<Vec<_>>();
            let (left, right) = (pts(&sorted[..t]), pts(&sorted[t..]));
            let cl = weighted_mean(left.iter().copied());
            let cr = weighted_mean(right.iter().copied());
            let sl = weighted_sse(left.iter().copied(), cl);
            let sr = weighted_sse(right.iter().copied(), cr);
            (sl + sr <= parent_sse).then_some((t, cl, cr, sl, sr))
        });

        match split {
            Some((t, cl, cr, sl, sr)) => {
                centroids[lo] = cl;
                centroids[hi] = cr;
                cluster_sse[lo] = sl;
                cluster_sse[hi] = sr;
                for &i in &sorted[..t] {
                    codes[i] = lo as u8;
                }
                for &i in &sorted[t..] {
                    codes[i] = hi as u8;
                }
                for &i in m.iter().filter(|&&i| sens[i] <= 0.0) {
                    codes[i] = (lo + nearest(&[cl, cr], row[i])) as u8;
                }
            }
            None => {
                centroids[lo] = parent;
                centroids[hi] = parent;
                cluster_sse[lo] = parent_sse;
                cluster_sse[hi] = 0.0;
                for &i in m {
                    codes[i] = lo as u8;
                }
            }
        }
    }

    Ok(ChannelQuantization {
        bit_width: cq.bit_width + 1,
        codes,
        centroids,
        cluster_sse,
    })
}

/// Optimal 2-means threshold over sorted members: the returned `t` puts
/// `sorted[..t]` in the lower sub-cluster. Cuts are only placed between
/// distinct values; ties keep the smallest `t`. `None` when fewer than two
/// distinct values exist.
fn best_split(sorted: &[usize], row: &[f64], sens: &[f64], center: f64) -> Option<usize> {
    let n = sorted.len();
    if n < 2 {
        return None;
    }
    let (mut tw, mut twx, mut twxx) = (0.0, 0.0, 0.0);
    for &i in sorted {
        let d = row[i] - center;
        tw += sens[i];
        twx += sens[i] * d;
        twxx += sens[i] * d * d;
    }
    let (mut lw, mut lwx, mut lwxx) = (0.0, 0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for t in 1..n {
        let i = sorted[t - 1];
        let d = row[i] - center;
        lw += sens[i];
        lwx += sens[i] * d;
        lwxx += sens[i] * d * d;
        if row[sorted[t]] == row[i] {
            continue;
        }
        let (rw, rwx, rwxx) = (tw - lw, twx - lwx, twxx - lwxx);
        let cost = (lwxx - lwx * lwx / lw) + (rwxx - rwx * rwx / rw);
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((t, cost));
        }
    }
    best.map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel(row: &[f64], sens: &[f64], bits: u8) -> ChannelQuantization {
        quantize_channel(row, sens, bits).unwrap().0
    }

    #[test]
    fn seed_collapses_to_distinct_values() {
        let cq = channel(&[-1.0, -1.0, 1.0, 1.0], &[1.0; 4], 2);
        assert_eq!(cq.sse(), 0.0);
        let distinct: std::collections::BTreeSet<_> =
            cq.centroids().iter().map(|c| c.to_bits()).collect();
        assert_eq!(distinct.len(), 2);
        assert_eq!(cq.dequantized(), vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn seed_rank_order_when_k_matches_distinct() {
        let row = [5.0, -2.0, 7.0, 0.5, 3.0, -9.0, 1.5, 2.0];
        let cq = channel(&row, &[1.0; 8], 3);
        assert_eq!(cq.sse(), 0.0);
        assert_eq!(cq.codes(), &[6, 1, 7, 2, 5, 0, 3, 4]);
    }

    #[test]
    fn zero_sensitivity_channel_falls_back() {
        let (cq, fb) = quantize_channel(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4], 2).unwrap();
        assert!(fb);
        assert_eq!(cq.sse(), 0.0);
    }

    fn single_cluster(members: &[f64], weights: &[f64]) -> ChannelQuantization {
        // One populated cluster; the empty ones sit at the top as copies.
        let mut cq =
            ChannelQuantization::from_codes(members, weights, &vec![0; members.len()], 2, &[f64::MAX; 4])
                .unwrap();
        cq.centroids = vec![cq.centroids[0]; 4];
        cq
    }

    #[test]
    fn upscale_identical_members() {
        let cq = single_cluster(&[2.0, 2.0], &[1.0, 1.0]);
        let up = upscale(&cq, &[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(&up.centroids()[..2], &[2.0, 2.0]);
        assert_eq!(up.codes(), &[0, 0]);
        assert_eq!(up.cluster_sse()[0] + up.cluster_sse()[1], 0.0);
    }

    #[test]
    fn upscale_splits_outlier() {
        let row = [0.0, 0.0, 3.0];
        let cq = single_cluster(&row, &[1.0; 3]);
        assert_eq!(cq.centroids()[0], 1.0);
        assert_eq!(cq.cluster_sse()[0], 6.0);
        let up = upscale(&cq, &row, &[1.0; 3]).unwrap();
        assert_eq!(&up.centroids()[..2], &[0.0, 3.0]);
        assert_eq!(up.codes(), &[0, 0, 1]);
        assert_eq!(up.cluster_sse()[0] + up.cluster_sse()[1], 0.0);
    }

    #[test]
    fn upscale_weighted_pair() {
        let row = [0.0, 4.0];
        let sens = [3.0, 1.0];
        let cq = single_cluster(&row, &sens);
        assert_eq!(cq.centroids()[0], 1.0);
        let up = upscale(&cq, &row, &sens).unwrap();
        assert_eq!(&up.centroids()[..2], &[0.0, 4.0]);
        assert_eq!(up.codes(), &[0, 1]);
    }

    #[test]
    fn upscale_singleton_and_empty() {
        let row = [1.5];
        let cq = single_cluster(&row, &[1.0]);
        let up = upscale(&cq, &row, &[1.0]).unwrap();
        assert_eq!(up.codes(), &[0]);
        assert_eq!(&up.centroids()[..2], &[1.5, 1.5]);
        // Clusters 1..4 were empty: both children copy the parent centroid.
        for b in 1..4 {
            assert_eq!(up.centroids()[2 * b], cq.centroids()[b]);
            assert_eq!(up.centroids()[2 * b + 1], cq.centroids()[b]);
        }
    }

    #[test]
    fn upscale_refuses_past_eight_bits() {
        let row: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let sens = vec![1.0; 300];
        let cq = channel(&row, &sens, 8);
        assert!(matches!(upscale(&cq, &row, &sens), Err(Error::Parameter(_))));
    }

    #[test]
    fn tree_sum_pairs_leaves() {
        assert_eq!(tree_sum(&[1.0, 2.0, 3.0, 4.0]), 10.0);
        assert_eq!(tree_sum(&[]), 0.0);
    }
}
