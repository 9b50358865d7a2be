//! Compensated summation.

use std::iter::Sum;
use std::ops::AddAssign;

/// Kahan–Babuška (Neumaier) accumulator.
///
/// Keeps a running compensation term so that long sums of same-signed
/// terms of very different magnitude (lattice sums over 10⁵ sites) keep
/// close to full double precision.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    /// Merge another partial accumulator into this one.
    pub fn merge(&mut self, other: CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl AddAssign<f64> for CompensatedSum {
    fn add_assign(&mut self, rhs: f64) {
        self.add(rhs);
    }
}

impl Sum<f64> for CompensatedSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator of values.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().sum::<CompensatedSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_small_terms_lost_by_naive_sum() {
        let mut values = vec![1.0];
        values.extend(std::iter::repeat(1e-16).take(10_000));
        let naive: f64 = values.iter().sum();
        assert_eq!(naive, 1.0);
        let kahan = compensated_sum(values.iter().copied());
        assert!((kahan - (1.0 + 1e-12)).abs() < 1e-27);
    }

    #[test]
    fn cancellation_case() {
        assert_eq!(compensated_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
    }

    #[test]
    fn merge_matches_sequential() {
        let xs: Vec<f64> = (1..=1000).map(|k| 1.0 / k as f64).collect();
        let whole = compensated_sum(xs.iter().copied());
        let mut a: CompensatedSum = xs[..400].iter().copied().sum();
        let b: CompensatedSum = xs[400..].iter().copied().sum();
        a.merge(b);
        assert!((a.value() - whole).abs() <= 1e-15 * whole);
    }

    proptest! {
        #[test]
        fn order_independent(mut xs in proptest::collection::vec(1e-8f64..1e3, 1..400), seed in any::<u64>()) {
            let forward = compensated_sum(xs.iter().copied());
            // deterministic shuffle
            let mut s = seed | 1;
            for i in (1..xs.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                xs.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let shuffled = compensated_sum(xs.iter().copied());
            prop_assert!((forward - shuffled).abs() <= 1e-14 * forward.abs());
        }
    }
}
