//! Streaming moment accumulators and small regression helpers.

/// Running mean and variance (Welford), mergeable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

impl Extend<f64> for Moments {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr<I: IntoIterator<Item = f64>>(xs: I) -> (f64, f64) {
    let m: Moments = xs.into_iter().collect();
    (m.mean(), m.stderr())
}

/// Ordinary least squares `y ≈ intercept + slope·x`; returns `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Mean and standard error of a stationary series by non-overlapping batch
/// means.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let batches = batches.max(2).min(series.len().max(1));
    let size = series.len() / batches;
    if size == 0 {
        return mean_stderr(series.iter().copied());
    }
    mean_stderr(
        series
            .chunks_exact(size)
            .map(|c| c.iter().sum::<f64>() / size as f64),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        let m: Moments = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        assert_eq!(m.mean(), 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
        assert!((m.stderr() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(Moments::new().mean().is_nan());
        assert_eq!(Moments::new().variance(), 0.0);
    }

    #[test]
    fn line_fit_is_exact_on_lines() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.5 * v).collect();
        let (s, c) = fit_line(&x, &y).unwrap();
        assert!((s + 3.5).abs() < 1e-12 && (c - 2.0).abs() < 1e-12);
        assert!(fit_line(&[1.0], &[1.0]).is_none());
        assert!(fit_line(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn batch_means_of_constant() {
        let (m, s) = batch_means(&[0.5; 100], 10);
        assert_eq!(m, 0.5);
        assert_eq!(s, 0.0);
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 0..60), split in 0usize..60) {
            let split = split.min(xs.len());
            let whole: Moments = xs.iter().copied().collect();
            let mut a: Moments = xs[..split].iter().copied().collect();
            let b: Moments = xs[split..].iter().copied().collect();
            a.merge(&b);
            prop_assert_eq!(a.count(), whole.count());
            if whole.count() > 0 {
                prop_assert!((a.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
                prop_assert!((a.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
            }
        }
    }
}
