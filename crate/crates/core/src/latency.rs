//! Average-latency accounting from a candidate-rank distribution.
//!
//! A request answered by candidate `r` costs one encode, one search and `r`
//! evaluations; a miss costs `k` evaluations (generation is excluded).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of an exact rank distribution.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Proportions of requests answered by each candidate rank, plus misses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    ranks: Vec<f64>,
    miss: f64,
}

impl RankDistribution {
    /// `ranks[r - 1]` is the proportion answered by rank `r`. The total must be 1 within 1e-6.
    pub fn new(ranks: Vec<f64>, miss: f64) -> Result<Self> {
        Self::with_tolerance(ranks, miss, SUM_TOLERANCE)
    }

    /// Builds a distribution from a published percentage table whose entries
    /// were rounded to `decimals` places; the sum may then be off by up to half
    /// a unit in the last place per entry.
    pub fn from_rounded_percentages(ranks_pct: &[f64], miss_pct: f64, decimals: u32) -> Result<Self> {
        let entries = (ranks_pct.len() + 1) as f64;
        let tolerance = entries * 0.5 * 10f64.powi(-(decimals as i32)) / 100.0 + 1e-12;
        Self::with_tolerance(
            ranks_pct.iter().map(|p| p / 100.0).collect(),
            miss_pct / 100.0,
            tolerance,
        )
    }

    /// Proportions from raw counts.
    pub fn from_counts(rank_counts: &[u64], misses: u64) -> Result<Self> {
        let total = rank_counts.iter().sum::<u64>() + misses;
        if total == 0 {
            return Err(Error::invalid("no requests counted"));
        }
        let t = total as f64;
        Self::new(rank_counts.iter().map(|&c| c as f64 / t).collect(), misses as f64 / t)
    }

    fn with_tolerance(ranks: Vec<f64>, miss: f64, tolerance: f64) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::invalid("distribution needs at least one rank"));
        }
        if let Some(p) = ranks
            .iter()
            .chain(std::iter::once(&miss))
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::invalid(format!("proportion {p} outside [0, 1]")));
        }
        let sum: f64 = ranks.iter().sum::<f64>() + miss;
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::invalid(format!("proportions sum to {sum}, not 1")));
        }
        Ok(RankDistribution { ranks, miss })
    }

    pub fn k(&self) -> usize {
        self.ranks.len()
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    pub fn miss(&self) -> f64 {
        self.miss
    }

    pub fn hit_rate(&self) -> f64 {
        self.ranks.iter().sum()
    }

    /// Mean number of evaluations per request.
    pub fn expected_evaluations(&self) -> f64 {
        let ranked: f64 = self.ranks.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
        ranked + self.k() as f64 * self.miss
    }
}

/// Mean per-stage latencies in milliseconds; `eval_ms` is per single evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentLatency {
    pub encode_ms: f64,
    pub search_ms: f64,
    pub eval_ms: f64,
}

impl ComponentLatency {
    pub fn new(encode_ms: f64, search_ms: f64, eval_ms: f64) -> Result<Self> {
        for (name, v) in [("encode", encode_ms), ("search", search_ms), ("eval", eval_ms)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} latency {v} must be finite and >= 0")));
            }
        }
        Ok(ComponentLatency {
            encode_ms,
            search_ms,
            eval_ms,
        })
    }
}

/// `encode + search + eval * E[evaluations]`, in milliseconds.
pub fn expected_latency(distribution: &RankDistribution, latency: ComponentLatency) -> f64 {
    latency.encode_ms + latency.search_ms + latency.eval_ms * distribution.expected_evaluations()
}

/// Mean, population standard deviation and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub std_dev: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(LatencyStats {
            mean,
            std_dev: var.sqrt(),
            max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_evaluation() {
        let d = RankDistribution::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let l = ComponentLatency::new(10.5, 1.0, 98.7).unwrap();
        assert_abs_diff_eq!(expected_latency(&d, l), 110.2, epsilon = 1e-9);
    }

    #[test]
    fn miss_costs_k_evaluations() {
        let d = RankDistribution::new(vec![0.0; 5], 1.0).unwrap();
        assert_eq!(d.expected_evaluations(), 5.0);
        let d = RankDistribution::new(vec![0.0; 3], 1.0).unwrap();
        assert_eq!(d.expected_evaluations(), 3.0);
    }

    #[test]
    fn sum_is_checked() {
        assert!(RankDistribution::new(vec![0.5, 0.2], 0.2).is_err());
        assert!(RankDistribution::new(vec![0.5, 0.5], 1e-7).is_ok());
        assert!(RankDistribution::new(vec![1.2, -0.2], 0.0).is_err());
        assert!(RankDistribution::new(vec![], 1.0).is_err());
        // Two-decimal percentages may drift by up to 6 * 0.005 points.
        assert!(RankDistribution::from_rounded_percentages(&[57.72, 15.73, 8.55, 4.99, 2.72], 10.31, 2).is_ok());
        assert!(RankDistribution::from_rounded_percentages(&[57.72, 15.73, 8.55, 4.99, 2.72], 10.5, 2).is_err());
    }

    #[test]
    fn from_counts() {
        let d = RankDistribution::from_counts(&[2, 1, 0], 1).unwrap();
        assert_eq!(d.ranks(), &[0.5, 0.25, 0.0]);
        assert_eq!(d.miss(), 0.25);
        assert_eq!(d.hit_rate(), 0.75);
        assert!(RankDistribution::from_counts(&[0], 0).is_err());
    }

    #[test]
    fn negative_latency_rejected() {
        assert!(ComponentLatency::new(-1.0, 0.0, 0.0).is_err());
        assert!(ComponentLatency::new(0.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn stats() {
        let s = LatencyStats::from_samples(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std_dev, s.max), (2.0, 1.0, 3.0));
        assert!(LatencyStats::from_samples(&[]).is_none());
    }
}
