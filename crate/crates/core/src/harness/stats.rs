//! Streaming mean/variance with an exact-order merge.

use serde::{Deserialize, Serialize};

/// Welford accumulator. Merging follows Chan et al.'s pairwise update, so a
/// fixed merge order gives bit-identical results.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStat {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStat) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (n − 1 denominator); zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// `sample_std / √n`.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            stderr: self.stderr(),
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass() {
        let data: Vec<f64> = (0..1000)
            .map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0)
            .collect();
        let mean = data.iter().sum::<f64>() / 1000.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        let mut s = RunningStat::default();
        data.iter().for_each(|&v| s.push(v));
        assert!((s.mean() - mean).abs() < 1e-12);
        assert!((s.variance() - var).abs() < 1e-10);
        let mut a = RunningStat::default();
        let mut b = RunningStat::default();
        data[..333].iter().for_each(|&v| a.push(v));
        data[333..].iter().for_each(|&v| b.push(v));
        a.merge(&b);
        assert_eq!(a.count(), 1000);
        assert!((a.mean() - mean).abs() < 1e-12);
        assert!((a.variance() - var).abs() < 1e-10);
    }

    #[test]
    fn constant_data_has_exact_zero_spread() {
        let mut a = RunningStat::default();
        let mut b = RunningStat::default();
        for _ in 0..10 {
            a.push(0.1);
            b.push(0.1);
        }
        a.merge(&b);
        assert_eq!(a.stderr(), 0.0);
        assert_eq!(a.mean(), 0.1);
    }

    #[test]
    fn empty_merge_is_identity() {
        let mut a = RunningStat::default();
        a.push(3.0);
        let before = a;
        a.merge(&RunningStat::default());
        assert_eq!(a, before);
        let mut e = RunningStat::default();
        e.merge(&before);
        assert_eq!(e, before);
    }
}
