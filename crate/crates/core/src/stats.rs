//! Binomial intervals and small summary helpers.

use serde::{Deserialize, Serialize};

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson(successes: u64, n: u64, z: f64) -> Interval {
    if n == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Interval { lo: (center - half).max(0.0), hi: (center + half).min(1.0) }
}

pub fn wilson95(successes: u64, n: u64) -> Interval {
    wilson(successes, n, Z95)
}

/// A fraction with its 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub n: u64,
    pub value: f64,
    pub interval: Interval,
}

impl Proportion {
    pub fn new(successes: u64, n: u64) -> Self {
        let value = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
        Self { successes, n, value, interval: wilson95(successes, n) }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_pop(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Normal-approximation 95% interval for a difference of two proportions.
pub fn diff_interval(a: Proportion, b: Proportion) -> Interval {
    let d = a.value - b.value;
    let var = |p: Proportion| if p.n == 0 { 0.0 } else { p.value * (1.0 - p.value) / p.n as f64 };
    let half = Z95 * (var(a) + var(b)).sqrt();
    Interval { lo: d - half, hi: d + half }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_values() {
        // 8/10: textbook value (0.4902, 0.9433)
        let i = wilson95(8, 10);
        assert!((i.lo - 0.4902).abs() < 1e-4 && (i.hi - 0.9433).abs() < 1e-4, "{i:?}");
        let i = wilson95(0, 20);
        assert_eq!(i.lo, 0.0);
        assert!((i.hi - 0.1611).abs() < 1e-4);
    }

    #[test]
    fn std_is_population() {
        assert_eq!(std_pop(&[1.0, 0.0, 0.0, 1.0]), 0.5);
    }
}
