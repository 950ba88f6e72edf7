//! Running moments, least-squares lines and the two-sample KS test.

use core::f64::consts::PI;

use crate::error::{Error, Result};

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Count, mean, mean of squares, min and max of a stream of reals.
#[derive(Debug, Clone, Copy)]
pub struct SampleStats {
    count: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
    min: f64,
    max: f64,
}

impl Default for SampleStats {
    fn default() -> Self {
        SampleStats {
            count: 0,
            sum: CompensatedSum::default(),
            sum_sq: CompensatedSum::default(),
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl SampleStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Self::new();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, other: &SampleStats) {
        self.count += other.count;
        self.sum.add(other.sum.value());
        self.sum_sq.add(other.sum_sq.value());
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum.value()
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum.value() / self.count as f64
    }

    /// Mean of squares.
    pub fn second_moment(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum_sq.value() / self.count as f64
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Unbiased sample variance, floored at zero.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        ((self.second_moment() - m * m) * n / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        libm::sqrt(self.variance() / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), found: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::invalid("linear fit needs at least two points"));
    }
    crate::vector::check_finite(xs)?;
    crate::vector::check_finite(ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("linear fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test on ascending-sorted samples.
///
/// The p-value is the asymptotic Kolmogorov tail at `sqrt(n_e) * D` with
/// `n_e = n m / (n + m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("ks_two_sample needs two nonempty samples"));
    }
    crate::vector::check_finite(a)?;
    crate::vector::check_finite(b)?;
    if !is_sorted(a) || !is_sorted(b) {
        return Err(Error::invalid("ks_two_sample needs ascending samples"));
    }
    let statistic = ks_statistic(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let n_e = n * m / (n + m);
    Ok(KsResult { statistic, p_value: kolmogorov_tail(libm::sqrt(n_e) * statistic) })
}

fn is_sorted(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        // step past every copy of the smallest remaining value in both samples
        let t = a[i].min(b[j]);
        while i < n && a[i] == t {
            i += 1;
        }
        while j < m && b[j] == t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`, clamped to `[0, 1]`.
///
/// Below λ = 1.18 the alternating series converges slowly and cancels
/// badly, so the equivalent Jacobi theta form
/// `1 − (√(2π)/λ) Σ_{k≥1} exp(−(2k−1)²π²/(8λ²))` is summed instead.
/// Both series stop once a term drops below 1e-12.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 { tail_theta(lambda) } else { tail_alternating(lambda) };
    p.clamp(0.0, 1.0)
}

pub(crate) fn tail_alternating(lambda: f64) -> f64 {
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=10_000u32 {
        let k = k as f64;
        let term = libm::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    2.0 * sum
}

pub(crate) fn tail_theta(lambda: f64) -> f64 {
    let c = PI * PI / (8.0 * lambda * lambda);
    let mut sum = 0.0;
    for k in 1..=10_000u32 {
        let o = (2 * k - 1) as f64;
        let term = libm::exp(-o * o * c);
        sum += term;
        if term < 1e-12 {
            break;
        }
    }
    1.0 - libm::sqrt(2.0 * PI) / lambda * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn identical_samples() {
        let a = [0.1, 0.2, 0.2, 0.7];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn disjoint_halves_reject() {
        let mut rng = crate::RngStream::new(9, 1);
        let mut a: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
        let mut b: Vec<f64> = (0..1000).map(|_| 0.5 + rng.uniform()).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let r = ks_two_sample(&a, &b).unwrap();
        assert!(r.statistic >= 0.45);
        // oracle: Q(sqrt(500) * 0.45) evaluated by the first series term
        let bound = 2.0 * libm::exp(-2.0 * 500.0 * 0.45 * 0.45);
        assert!(r.p_value <= bound && r.p_value < 1e-6, "{r:?}");
    }

    #[test]
    fn hand_statistic() {
        // ECDF gap is largest after 1 and 2: a at 2/3, b at 0
        let r = ks_two_sample(&[1.0, 2.0, 5.0], &[3.0, 4.0]).unwrap();
        assert!((r.statistic - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_across_samples() {
        let r = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((r.statistic - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn both_series_agree_where_they_overlap() {
        for i in 0..=40 {
            let lambda = 0.6 + 0.025 * i as f64;
            let a = tail_alternating(lambda);
            let t = tail_theta(lambda);
            assert!((a - t).abs() < 1e-11, "{lambda}: {a} vs {t}");
        }
    }

    #[test]
    fn known_kolmogorov_quantiles() {
        // standard table: Q(1.3581) = 0.05, Q(1.6276) = 0.01
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn bad_inputs() {
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ks_two_sample(&[2.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn sample_stats_moments() {
        let s = SampleStats::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.count(), 4);
        assert_eq!(s.mean(), 2.5);
        assert_eq!(s.second_moment(), 7.5);
        assert_eq!((s.min(), s.max()), (1.0, 4.0));
        assert!((s.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut a = SampleStats::from_slice(&xs[..37]);
        a.merge(&SampleStats::from_slice(&xs[37..]));
        let b = SampleStats::from_slice(&xs);
        assert!((a.mean() - b.mean()).abs() < 1e-15);
        assert_eq!(a.min(), b.min());
    }

    #[test]
    fn line_through_points() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
    }
}
