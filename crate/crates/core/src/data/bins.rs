use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// Maps millisecond durations to bin indices.
///
/// A duration equal to an edge belongs to the lower bin, so
/// `bin(d) = #{edges < d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationBinner {
    pub k: usize,
    pub edges: Vec<f64>,
    pub bin_means: Vec<f64>,
}

impl DurationBinner {
    /// Quantile binning: cut points sit between distinct values as close as
    /// possible to ranks `i * N / k`, so each bin holds about `N / k` values.
    pub fn fit_quantile(durations: &[u32], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::domain("k", "need at least two bins"));
        }
        let mut sorted = durations.to_vec();
        sorted.sort_unstable();
        // positions j where sorted[j - 1] < sorted[j]
        let boundaries: Vec<usize> = (1..sorted.len())
            .filter(|&j| sorted[j - 1] < sorted[j])
            .collect();
        if boundaries.len() + 1 < k {
            return Err(Error::domain(
                "k",
                format!(
                    "{k} bins requested but only {} distinct durations",
                    boundaries.len() + 1
                ),
            ));
        }
        let n = sorted.len();
        let mut edges = Vec::with_capacity(k - 1);
        let mut lo = 0; // first admissible index into `boundaries`
        for i in 1..k {
            let target = i * n / k;
            // leave enough boundaries for the remaining cuts
            let hi = boundaries.len() - (k - 1 - i);
            let window = &boundaries[lo..hi];
            let pick = window
                .iter()
                .enumerate()
                .min_by_key(|(_, &j)| j.abs_diff(target))
                .map(|(p, _)| lo + p)
                .expect("window is non-empty by the distinct-count check");
            let j = boundaries[pick];
            edges.push((f64::from(sorted[j - 1]) + f64::from(sorted[j])) / 2.0);
            lo = pick + 1;
        }
        Ok(Self::with_edges(edges, &sorted))
    }

    /// Equal-width bins over `[min, max]`.
    pub fn fit_uniform(durations: &[u32], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::domain("k", "need at least two bins"));
        }
        let min = durations.iter().copied().min().ok_or_else(|| Error::invalid("no durations"))?;
        let max = durations.iter().copied().max().unwrap_or(min);
        if max == min {
            return Err(Error::domain("k", "all durations are equal"));
        }
        let width = f64::from(max - min) / k as f64;
        let edges = (1..k).map(|i| f64::from(min) + width * i as f64).collect();
        Ok(Self::with_edges(edges, durations))
    }

    fn with_edges(edges: Vec<f64>, durations: &[u32]) -> Self {
        let k = edges.len() + 1;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        let mut binner = DurationBinner {
            k,
            edges,
            bin_means: Vec::new(),
        };
        for &d in durations {
            let b = binner.bin(d);
            sums[b] += f64::from(d);
            counts[b] += 1;
        }
        binner.bin_means = (0..k)
            .map(|b| {
                if counts[b] > 0 {
                    sums[b] / counts[b] as f64
                } else {
                    // empty equal-width bin: use its midpoint
                    let lo = if b == 0 { binner.edges[0] } else { binner.edges[b - 1] };
                    let hi = binner.edges.get(b).copied().unwrap_or(lo);
                    (lo + hi) / 2.0
                }
            })
            .collect();
        binner
    }

    pub fn bin(&self, duration_ms: u32) -> usize {
        let d = f64::from(duration_ms);
        self.edges.partition_point(|&e| e < d)
    }

    pub fn counts(&self, durations: &[u32]) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &d in durations {
            counts[self.bin(d)] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        if self.k != self.edges.len() + 1 || self.bin_means.len() != self.k {
            return Err(Error::domain("edges", "edge/bin count mismatch"));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("edges", "edges must be strictly ascending"));
        }
        Ok(())
    }
}

/// Quantile bins over every fixation duration in `corpus`.
pub fn fit_duration_bins(corpus: &Corpus, k: usize) -> Result<DurationBinner> {
    DurationBinner::fit_quantile(&corpus.durations(), k)
}

pub fn bin_duration(binner: &DurationBinner, duration_ms: u32) -> usize {
    binner.bin(duration_ms)
}
