//! Special functions and small numeric kernels.
//!
//! Bessel functions of the first kind are evaluated by Miller's downward
//! recurrence normalised with `J_0 + 2 Σ J_2k = 1`, with a power series for
//! `|x| < 1`. Both paths reach an absolute error around `1e-15` for integer
//! orders and `|x| ≤ 50`.

use crate::{Error, Result};

/// Largest `|x|` accepted by the Bessel routines.
pub const MAX_ARGUMENT: f64 = 50.0;

/// Default truncation tolerance for Jacobi-Anger sums.
pub const DEFAULT_EPSILON: f64 = 1e-10;

const RESCALE_THRESHOLD: f64 = 1e250;
const RESCALE_FACTOR: f64 = 1e-250;

/// Highest order and truncation tolerance of a Jacobi-Anger sum `Σ_{|m|≤M}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesselOrderRange {
    max_order: usize,
    epsilon: f64,
}

impl BesselOrderRange {
    pub fn new(max_order: usize, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { max_order, epsilon })
    }

    /// Smallest range whose squared Bessel weights at `beta` miss unity by less than `epsilon`.
    pub fn for_beta(beta: f64, epsilon: f64) -> Result<Self> {
        let max_order = truncation_order(beta, epsilon)?;
        Ok(Self { max_order, epsilon })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Signed orders `-M..=M`.
    pub fn orders(&self) -> std::ops::RangeInclusive<i32> {
        let m = self.max_order as i32;
        -m..=m
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("epsilon", epsilon, "must lie in (0, 1)"))
    }
}

fn check_argument(x: f64) -> Result<()> {
    if x.is_finite() && x.abs() <= MAX_ARGUMENT {
        Ok(())
    } else {
        Err(Error::domain(
            "x",
            x,
            "Bessel argument must satisfy |x| <= 50",
        ))
    }
}

/// Bessel function of the first kind `J_order(x)` for integer order.
///
/// Negative orders follow `J_{-m}(x) = (-1)^m J_m(x)`.
pub fn bessel_j(order: i32, x: f64) -> Result<f64> {
    let m = order.unsigned_abs() as usize;
    let value = bessel_j_sequence(m, x)?[m];
    if order < 0 && m % 2 == 1 {
        Ok(-value)
    } else {
        Ok(value)
    }
}

/// Returns `[J_0(x), J_1(x), ..., J_max_order(x)]`.
pub fn bessel_j_sequence(max_order: usize, x: f64) -> Result<Vec<f64>> {
    check_argument(x)?;
    let ax = x.abs();
    let mut values = if ax == 0.0 {
        let mut v = vec![0.0; max_order + 1];
        v[0] = 1.0;
        v
    } else if ax < 1.0 {
        (0..=max_order).map(|n| power_series(n, ax)).collect()
    } else {
        miller(max_order, ax)
    };
    if x < 0.0 {
        for v in values.iter_mut().skip(1).step_by(2) {
            *v = -*v;
        }
    }
    Ok(values)
}

fn power_series(order: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
        if term == 0.0 {
            return 0.0;
        }
    }
    let q = half * half;
    let mut sum = term;
    let mut k = 0usize;
    loop {
        k += 1;
        term *= -q / (k as f64 * (order + k) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            return sum;
        }
    }
}

fn miller(max_order: usize, x: f64) -> Vec<f64> {
    let top = max_order.max(x.ceil() as usize);
    let start = (top + 20 + (4.0 * (top as f64).sqrt()) as usize) | 1;
    let mut values = vec![0.0; max_order + 1];
    let mut next = 0.0;
    let mut current = 1e-30;
    let mut norm = 0.0;
    let mut k = start;
    loop {
        if k <= max_order {
            values[k] = current;
        }
        if k.is_multiple_of(2) {
            norm += if k == 0 { current } else { 2.0 * current };
        }
        if k == 0 {
            break;
        }
        let previous = (2.0 * k as f64 / x) * current - next;
        next = current;
        current = previous;
        k -= 1;
        if current.abs() > RESCALE_THRESHOLD {
            current *= RESCALE_FACTOR;
            next *= RESCALE_FACTOR;
            norm *= RESCALE_FACTOR;
            for v in values.iter_mut() {
                *v *= RESCALE_FACTOR;
            }
        }
    }
    for v in values.iter_mut() {
        *v /= norm;
    }
    values
}

/// Smallest `M` with `1 - Σ_{|m|≤M} J_m(beta)² < epsilon`.
///
/// The residual is accumulated directly as `2 Σ_{m>M} J_m²` so it stays
/// accurate far below the rounding level of `1 - Σ`.
pub fn truncation_order(beta: f64, epsilon: f64) -> Result<usize> {
    check_epsilon(epsilon)?;
    if !(beta >= 0.0) {
        return Err(Error::domain("beta", beta, "modulation index must be >= 0"));
    }
    let horizon = beta.ceil() as usize + 60;
    let j = bessel_j_sequence(horizon, beta)?;
    let mut tail = 0.0;
    let mut tails = vec![0.0; horizon + 1];
    for m in (0..=horizon).rev() {
        tails[m] = tail;
        tail += 2.0 * j[m] * j[m];
    }
    Ok(tails.iter().position(|&t| t < epsilon).unwrap_or(horizon))
}

/// Gaussian `exp(-(x/width)²)`.
#[inline]
pub fn gaussian(x: f64, width: f64) -> f64 {
    let s = x / width;
    (-s * s).exp()
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
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

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

const TWO_PI_HI: f64 = std::f64::consts::TAU;
const TWO_PI_LO: f64 = 2.449_293_598_294_706_4e-16;

/// `(a·b) mod 2π` in `[0, 2π)`, keeping the rounding error of the product.
///
/// Used for carrier phases `ω0·T` where the product is ~5e4 rad.
pub fn mul_mod_two_pi(a: f64, b: f64) -> f64 {
    let p = a * b;
    let err = a.mul_add(b, -p);
    let q = (p / TWO_PI_HI).floor();
    let mut r = q.mul_add(-TWO_PI_HI, p);
    r = q.mul_add(-TWO_PI_LO, r) + err;
    if r < 0.0 {
        r += TWO_PI_HI;
    } else if r >= TWO_PI_HI {
        r -= TWO_PI_HI;
    }
    r
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TWO_PI_HI);
    if r >= TWO_PI_HI {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// `J_n(x) = (1/π) ∫_0^π cos(nt − x sin t) dt`; the trapezoid rule is
    /// spectrally accurate for this periodic integrand.
    fn integral_oracle(n: i32, x: f64) -> f64 {
        let steps = 4096;
        let h = PI / steps as f64;
        let mut s = 0.5 * (1.0 + (n as f64 * PI).cos());
        for k in 1..steps {
            let t = k as f64 * h;
            s += (n as f64 * t - x * t.sin()).cos();
        }
        s * h / PI
    }

    #[test]
    fn trivial_values() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(3, 0.0).unwrap(), 0.0);
        assert!(bessel_j(0, 2.404826).unwrap().abs() < 1e-5);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn frozen_reference_values() {
        // 40-digit reference values
        let cases = [
            (0, 1.0, 0.765_197_686_557_966_55),
            (1, 1.0, 0.440_050_585_744_933_52),
            (5, 10.0, -0.234_061_528_186_793_64),
            (0, 50.0, 0.055_812_327_669_251_815),
            (30, 50.0, 0.048_434_257_245_509_417),
            (3, 0.5, 0.002_563_729_994_587_244),
            (0, 2.404826, -2.296_211_114_436_532_5e-7),
            (10, 0.3, 1.585_846_515_700_256_7e-15),
            (2, -3.7, 0.428_329_656_206_575_87),
            (49, 50.0, 0.151_195_142_521_472_24),
            (60, 20.0, 2.280_926_388_733_559_6e-23),
        ];
        for (n, x, want) in cases {
            let got = bessel_j(n, x).unwrap();
            assert!(
                (got - want).abs() < 1e-12,
                "J_{n}({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn matches_integral_oracle_on_grid() {
        for &x in &[
            0.01, 0.7, 0.999, 1.0, 2.5, 5.42, 9.9, 17.3, 33.0, 49.99, -4.48,
        ] {
            for n in 0..=70 {
                let got = bessel_j(n, x).unwrap();
                let want = integral_oracle(n, x);
                assert!((got - want).abs() < 1e-12, "J_{n}({x}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn out_of_range_argument_is_domain_error() {
        assert!(matches!(bessel_j(0, 50.5), Err(Error::Domain { .. })));
        assert!(matches!(bessel_j(0, f64::NAN), Err(Error::Domain { .. })));
    }

    #[test]
    fn truncation_orders_match_exhaustive_summation() {
        // exhaustive high-precision summation of J_m(beta)^2
        assert_eq!(truncation_order(0.0, 1e-12).unwrap(), 0);
        assert_eq!(truncation_order(5.42, 1e-10).unwrap(), 14);
        assert_eq!(truncation_order(1.0, 1e-6).unwrap(), 4);
        assert_eq!(truncation_order(4.48, 1e-10).unwrap(), 12);
        assert_eq!(truncation_order(1.2, 1e-10).unwrap(), 6);
    }

    #[test]
    fn truncation_rejects_bad_epsilon() {
        assert!(truncation_order(1.0, 0.0).is_err());
        assert!(truncation_order(1.0, 1.0).is_err());
        assert!(BesselOrderRange::new(3, 2.0).is_err());
        let r = BesselOrderRange::for_beta(1.0, 1e-6).unwrap();
        assert_eq!(r.orders(), -4..=4);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let acc: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(acc.value(), 2.0);
    }

    #[test]
    fn mul_mod_two_pi_reduces_large_products() {
        let omega0 = 2.0 * PI * SPEED / 809.0;
        let t = 20.1;
        let r = mul_mod_two_pi(omega0, t);
        assert!((0.0..2.0 * PI).contains(&r));
        let naive = (omega0 * t).rem_euclid(2.0 * PI);
        assert!((r - naive).abs() < 1e-9);
        let full_turn = mul_mod_two_pi(PI, 2.0);
        assert!(!(1e-15..=2.0 * PI - 1e-15).contains(&full_turn));
        assert_eq!(mul_mod_two_pi(0.5, 3.0), 1.5);
    }

    const SPEED: f64 = crate::SPEED_OF_LIGHT_NM_PER_PS;

    proptest! {
        #[test]
        fn normalization_within_truncation(beta in 0.0f64..10.0, exp in 3i32..12) {
            let eps = 10f64.powi(-exp);
            let m = truncation_order(beta, eps).unwrap();
            let j = bessel_j_sequence(m, beta).unwrap();
            let s: f64 = j[0] * j[0] + 2.0 * j[1..].iter().map(|v| v * v).sum::<f64>();
            prop_assert!(s >= 1.0 - eps && s <= 1.0 + 4.0 * f64::EPSILON, "sum {}", s);
        }

        #[test]
        fn parity_is_exact(m in 0i32..40, x in -50.0f64..50.0) {
            let pos = bessel_j(m, x).unwrap();
            let neg = bessel_j(-m, x).unwrap();
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert!((neg - sign * pos).abs() <= 1e-14);
        }

        #[test]
        fn recurrence_consistency(m in 1i32..=30, x in 0.5f64..20.0) {
            let lhs = bessel_j(m - 1, x).unwrap() + bessel_j(m + 1, x).unwrap();
            let rhs = 2.0 * m as f64 / x * bessel_j(m, x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
