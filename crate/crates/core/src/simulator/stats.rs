use serde::Serialize;

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(mut self, other: RunningStats) -> RunningStats {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let total = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / total as f64;
        self.m2 += other.m2 + d * d * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
        self
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = self.m2 / (self.count - 1) as f64;
        (var.max(0.0) / self.count as f64).sqrt()
    }
}

/// Monte Carlo point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: u64,
    pub seed: u64,
    /// Set when fewer than 100 replications were run.
    pub low_replications: bool,
}

impl SimEstimate {
    pub(crate) fn from_stats(stats: RunningStats, seed: u64) -> Self {
        SimEstimate {
            mean: stats.mean(),
            std_error: stats.std_error(),
            replications: stats.count,
            seed,
            low_replications: stats.count < 100,
        }
    }

    /// `|mean - target|` in units of the standard error. Zero error with an
    /// exact match counts as zero.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}
