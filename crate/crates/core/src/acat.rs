//! Cauchy combination of base-test p-values.
//!
//! Each p-value is mapped to `tan((1/2 - p) pi)`, the transforms are averaged
//! with equal weights, and the average is read off the standard Cauchy tail.

use std::f64::consts::PI;

use crate::dist::{cauchy_sf, cauchy_sf_unclamped, clamp_prob};
use crate::error::{Error, Result};

/// Transforms are accumulated pre-scaled by this power of two so that a sum
/// of up to 2^32 values near `f64::MAX` cannot overflow. Scaling by a power of
/// two is exact.
const SCALE: f64 = 1.0 / 4_294_967_296.0;

/// `tan((1/2 - p) pi)`.
///
/// Away from `p = 1/2` the argument of `tan` sits close to a pole, so the
/// equivalent `cot(p pi)` and `-cot((1 - p) pi)` are used there. The result
/// saturates at `±f64::MAX` for `p` below about `1.8e-309`.
pub fn transform_p(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("transform_p: {p} is not in (0, 1)")));
    }
    Ok(transform_unchecked(p))
}

pub(crate) fn transform_unchecked(p: f64) -> f64 {
    let t = if p < 0.25 {
        1.0 / (p * PI).tan()
    } else if p > 0.75 {
        -1.0 / ((1.0 - p) * PI).tan()
    } else {
        ((0.5 - p) * PI).tan()
    };
    t.clamp(-f64::MAX, f64::MAX)
}

/// Ensemble statistic and its p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub statistic: f64,
    pub p_value: f64,
}

/// Averages transformed p-values in index order.
pub fn combine(p_values: &[f64]) -> Result<Combined> {
    if p_values.is_empty() {
        return Err(Error::domain("combine: no p-values"));
    }
    let mut acc = CauchyAccumulator::default();
    for &p in p_values {
        acc.push(p)?;
    }
    Ok(acc.combined())
}

/// Running equal-weight Cauchy combination with Neumaier-compensated
/// summation. Reading the state after `k` pushes gives exactly what
/// [`combine`] returns for the first `k` p-values.
#[derive(Debug, Clone, Default)]
pub struct CauchyAccumulator {
    sum: f64,
    compensation: f64,
    count: usize,
}

impl CauchyAccumulator {
    pub fn push(&mut self, p: f64) -> Result<()> {
        self.push_transformed(transform_p(p)?);
        Ok(())
    }

    /// Adds a value already on the Cauchy scale.
    pub fn push_transformed(&mut self, t: f64) {
        let x = t * SCALE;
        let s = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - s) + x;
        } else {
            self.compensation += (x - s) + self.sum;
        }
        self.sum = s;
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn statistic(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        ((self.sum + self.compensation) / self.count as f64) / SCALE
    }

    pub fn combined(&self) -> Combined {
        let statistic = self.statistic();
        Combined {
            statistic,
            p_value: clamp_prob(cauchy_sf_unclamped(statistic)),
        }
    }
}

/// p-value of an ensemble statistic already on the Cauchy scale.
pub fn statistic_p_value(statistic: f64) -> Result<f64> {
    cauchy_sf(statistic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn transform_examples() {
        assert_eq!(transform_p(0.5).unwrap(), 0.0);
        assert!((transform_p(0.25).unwrap() - 1.0).abs() < 1e-15);
        assert!((transform_p(0.75).unwrap() + 1.0).abs() < 1e-15);
        // cot(pi * 1e-12) at 40 digits.
        assert!(rel(transform_p(1e-12).unwrap(), 318309886183.79067154) < 1e-12);
        assert!(transform_p(1e-320).unwrap().is_finite());
        assert!(transform_p(1.0 - f64::EPSILON / 2.0).unwrap().is_finite());
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(transform_p(bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn combine_examples() {
        let one = combine(&[0.01]).unwrap();
        assert!((one.p_value - 0.01).abs() < 1e-12);

        let flat = combine(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(flat.statistic, 0.0);
        assert_eq!(flat.p_value, 0.5);

        // cot(pi 1e-6)/2 and its Cauchy tail at 40 digits.
        let c = combine(&[1e-6, 0.5]).unwrap();
        assert!(rel(c.statistic, 159154.94309137173699) < 1e-12);
        assert!(rel(c.p_value, 1.9999999999802607912e-6) < 1e-10);

        assert!(matches!(combine(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn single_value_round_trip_on_log_grid() {
        for k in 0..1000 {
            let p = 10f64.powf(-15.0 + k as f64 * (15.0 - 0.5f64.log10().abs()) / 999.0);
            let p = p.min(0.5);
            let got = combine(&[p]).unwrap().p_value;
            assert!((got - p).abs() <= 1e-10 && rel(got, p) < 1e-12, "p={p:e} got={got:e}");
        }
    }

    #[test]
    fn saturated_inputs_stay_finite() {
        let c = combine(&[1e-320, 1e-320, 0.5]).unwrap();
        assert!(c.statistic.is_finite());
        assert!(c.p_value > 0.0 && c.p_value < 1e-300);
    }

    #[test]
    fn accumulator_prefixes_match_combine() {
        let ps: Vec<f64> = (1..=50).map(|i| (i as f64 * 0.37).fract().max(1e-9)).collect();
        let mut acc = CauchyAccumulator::default();
        for (k, &p) in ps.iter().enumerate() {
            acc.push(p).unwrap();
            assert_eq!(acc.combined(), combine(&ps[..=k]).unwrap());
        }
    }

    proptest! {
        #[test]
        fn lowering_one_p_value_raises_statistic(
            ps in prop::collection::vec(1e-12f64..0.999, 1..20),
            idx in any::<prop::sample::Index>(),
            factor in 0.01f64..0.99,
        ) {
            let k = idx.index(ps.len());
            let before = combine(&ps).unwrap();
            let mut lowered = ps.clone();
            lowered[k] *= factor;
            let after = combine(&lowered).unwrap();
            prop_assert!(after.statistic > before.statistic);
            prop_assert!(after.p_value < before.p_value);
        }

        #[test]
        fn order_does_not_matter(
            ps in prop::collection::vec(1e-15f64..0.999999, 2..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = ps.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = combine(&ps).unwrap();
            let b = combine(&shuffled).unwrap();
            prop_assert!(rel(a.statistic, b.statistic) <= 1e-12 || (a.statistic - b.statistic).abs() < 1e-12);
            prop_assert!(rel(a.p_value, b.p_value) <= 1e-12);
        }
    }
}
