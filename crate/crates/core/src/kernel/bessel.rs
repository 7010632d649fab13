//! Bessel function of the first kind, order zero.
//!
//! Three regimes, each accurate to about 1e-15 absolute:
//! power series for `r < 8`, Miller's backward recurrence for `8 <= r < 25`
//! and the Hankel asymptotic expansion beyond.

use std::f64::consts::{FRAC_PI_4, PI};

const SERIES_LIMIT: f64 = 8.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

pub fn bessel_j0(x: f64) -> f64 {
    let r = x.abs();
    if r < SERIES_LIMIT {
        series(r)
    } else if r < ASYMPTOTIC_LIMIT {
        backward_recurrence(r)
    } else {
        hankel(r)
    }
}

fn series(r: f64) -> f64 {
    let q = -0.25 * r * r;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..80 {
        let k = k as f64;
        term *= q / (k * k);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Miller's algorithm normalised by `J0 + 2 sum_{k>=1} J_{2k} = 1`.
fn backward_recurrence(r: f64) -> f64 {
    let mut m = (r as usize) + 40;
    if m % 2 == 1 {
        m += 1;
    }
    let mut j_next = 0.0; // J_{k+1}
    let mut j_cur = 1e-30; // J_k
    let mut norm = 0.0;
    let mut j0 = 0.0;
    for k in (1..=m).rev() {
        let j_prev = 2.0 * k as f64 / r * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        let idx = k - 1;
        if idx > 0 && idx % 2 == 0 {
            norm += 2.0 * j_cur;
        }
        if idx == 0 {
            j0 = j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
        }
    }
    norm += j0;
    j0 / norm
}

fn hankel(r: f64) -> f64 {
    // a_k = prod_{j=1}^k (-(2j-1)^2) / (k! 8^k)
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..60i32 {
        let term = a / r.powi(k);
        if term.abs() > prev {
            break;
        }
        prev = term.abs();
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if term.abs() < 1e-17 {
            break;
        }
        let j = (2 * k + 1) as f64;
        a *= -(j * j) / ((k + 1) as f64 * 8.0);
    }
    let phase = r - FRAC_PI_4;
    (2.0 / (PI * r)).sqrt() * (p * phase.cos() - q * phase.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;

    /// `J0(r) = (1/pi) int_0^pi cos(r sin t) dt`.
    fn integral_oracle(r: f64) -> f64 {
        quadrature::integrate(|t| (r * t.sin()).cos(), 0.0, PI, 8 + (r as usize) / 2) / PI
    }

    /// Bisection root of the 50-term power series near the first zero.
    fn first_zero_oracle() -> f64 {
        let f = |r: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..50 {
                term *= -0.25 * r * r / (k as f64 * k as f64);
                sum += term;
            }
            sum
        };
        let (mut lo, mut hi) = (2.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn known_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!((bessel_j0(1.0) - 0.7651976865579666).abs() < 1e-15);
        let z = first_zero_oracle();
        assert!((z - 2.404825557695773).abs() < 1e-12);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-10);
    }

    #[test]
    fn agrees_with_integral_representation() {
        for k in 0..400 {
            let r = 0.137 * k as f64;
            let d = (bessel_j0(r) - integral_oracle(r)).abs();
            assert!(d < 1e-12, "r={r} diff={d:e}");
        }
    }

    #[test]
    fn regimes_agree_at_switch_points() {
        for &r in &[SERIES_LIMIT, ASYMPTOTIC_LIMIT] {
            let lo = bessel_j0(r - 1e-12);
            let hi = bessel_j0(r);
            assert!((lo - hi).abs() < 1e-12);
            assert!((hi - integral_oracle(r)).abs() < 1e-13);
        }
    }

    #[test]
    fn bounded_and_decaying() {
        for k in 0..5000 {
            let r = 0.01 * k as f64;
            assert!(bessel_j0(r).abs() <= 1.0 + 1e-15);
        }
        for k in 0..20_000 {
            let r = 5.0 + 0.05 * k as f64;
            assert!(bessel_j0(r).abs() * r.sqrt() <= 0.8, "r={r}");
        }
    }
}
