//! The planar Coulomb kernel `g(x) = -log|x|` and its smeared variants.
//!
//! `phi_eta` denotes the uniform probability measure on the circle of radius
//! `eta`, and `psi_{2 eta} = phi_eta * phi_eta`. Because `g` is harmonic away
//! from the origin, `g * phi_eta = -log max(|x|, eta)` and `g * psi_{2 eta}`
//! coincides with `g` outside the closed ball of radius `2 eta`.

mod bessel;

pub use bessel::bessel_j0;

use crate::error::{Error, Result};
use crate::geometry::{Displacement2, Frequency2, Vec2};
use crate::quadrature;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Radius of a circle smearing, strictly positive and finite.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SmearingRadius(f64);

impl SmearingRadius {
    pub fn new(eta: f64) -> Result<Self> {
        if eta.is_finite() && eta > 0.0 {
            Ok(Self(eta))
        } else {
            Err(Error::InvalidParameter(format!(
                "smearing radius must be positive and finite, got {eta}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SmearingRadius {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SmearingRadius> for f64 {
    fn from(r: SmearingRadius) -> f64 {
        r.0
    }
}

/// `-log|x|`. The diagonal is the caller's responsibility.
pub fn coulomb_g(x: Displacement2) -> Result<f64> {
    let r2 = x.norm2();
    if r2 == 0.0 || !r2.is_finite() {
        return Err(Error::Singularity(format!("g evaluated at |x| = {}", r2.sqrt())));
    }
    Ok(-0.5 * r2.ln())
}

/// `-log r` from a squared distance, without the singularity check.
#[inline]
pub fn g_from_r2(r2: f64) -> f64 {
    -0.5 * r2.ln()
}

/// `(g * phi_eta)(x) = -log max(|x|, eta)`.
#[inline]
pub fn smeared_g(x: Displacement2, eta: SmearingRadius) -> f64 {
    -(x.norm().max(eta.get())).ln()
}

/// `(g * psi_{2 eta})(x)`: one circle average of [`smeared_g`].
///
/// For `|x| >= 2 eta` this is exactly `g(x)`. Inside, the angular integral is
/// split at the angle where the averaged point enters the ball of radius
/// `eta`, so each piece has an analytic integrand.
pub fn psi_smeared_g(x: Displacement2, eta: SmearingRadius) -> f64 {
    let r = x.norm();
    let e = eta.get();
    if r >= 2.0 * e {
        return -r.ln();
    }
    if r == 0.0 {
        return -e.ln();
    }
    // |x + eta e^{it}|^2 = r^2 + e^2 + 2 r e cos t, symmetric in t about 0.
    // It exceeds e^2 exactly when cos t > -r / (2e).
    let t_star = (-r / (2.0 * e)).acos();
    let outer = quadrature::integrate(|t| -0.5 * (r * r + e * e + 2.0 * r * e * t.cos()).ln(), 0.0, t_star, 4);
    let inner = (PI - t_star) * (-e.ln());
    (outer + inner) / PI
}

/// Radial profile `(g - g * psi_{2 eta})(r)`, nonnegative and supported in
/// `r <= 2 eta`. Returns `None` at `r = 0` where `g` is singular.
pub fn psi_gap(r: f64, eta: SmearingRadius) -> Option<f64> {
    if r <= 0.0 {
        return None;
    }
    if r >= 2.0 * eta.get() {
        return Some(0.0);
    }
    Some(-r.ln() - psi_smeared_g(Displacement2::new(r, 0.0), eta))
}

/// L1 norm of `g - g * phi_eta`, both in closed form and by quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelGapL1 {
    pub closed_form: f64,
    pub quadrature: f64,
}

/// `int |g - g * phi_eta| = int_{B_eta} log(eta / |x|) dx = pi eta^2 / 2`.
pub fn kernel_gap_l1(eta: SmearingRadius) -> KernelGapL1 {
    let e = eta.get();
    let closed_form = 0.5 * PI * e * e;
    // 2 pi int_0^eta r log(eta / r) dr; substitute r = eta exp(-u).
    let quadrature = 2.0 * PI * e * e * quadrature::integrate(|u| u * (-2.0 * u).exp(), 0.0, 40.0, 16);
    KernelGapL1 {
        closed_form,
        quadrature,
    }
}

/// Fourier transform of the unit circle measure: `J_0(|xi|)`.
///
/// The transform uses the `exp(-2 pi i x.xi)` convention in [`kernel_fourier`];
/// here the argument is the already-scaled radius, matching `phi_1_hat(xi)`.
#[inline]
pub fn sphere_fourier(xi: Frequency2) -> f64 {
    bessel_j0(xi.norm())
}

/// `g_hat(xi) = 1 / (2 pi |xi|^2)` for the convention `exp(-2 pi i x.xi)`.
pub fn kernel_fourier(xi: Frequency2) -> Result<f64> {
    let k2 = xi.norm2();
    if k2 == 0.0 || !k2.is_finite() {
        return Err(Error::Singularity("g_hat evaluated at the zero frequency".into()));
    }
    Ok(1.0 / (2.0 * PI * k2))
}

/// `int_{[x0,x1] x [y0,y1]} -log|z| dz` in closed form.
pub fn rect_neg_log_integral(x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let a = |x: f64, y: f64| -> f64 {
        // int_0^x int_0^y log(s^2 + t^2) dt ds, odd in each argument.
        if x == 0.0 || y == 0.0 {
            return 0.0;
        }
        x * y * ((x * x + y * y).ln() - 3.0) + x * x * (y / x).atan() + y * y * (x / y).atan()
    };
    let total = a(x1, y1) - a(x0, y1) - a(x1, y0) + a(x0, y0);
    -0.5 * total
}

/// `int_S int_{S + u} -log|x - y| dx dy` for the square `S` of side `h`.
///
/// Built from `B` with `d_xxyy B = log(x^2 + y^2)` by a second difference in
/// each axis, which integrates the tent-shaped law of `x - y` exactly.
pub fn square_pair_neg_log_integral(u: Vec2, h: f64) -> f64 {
    let b = |x: f64, y: f64| -> f64 {
        let (x2, y2) = (x * x, y * y);
        let r2 = x2 + y2;
        if r2 == 0.0 {
            return 0.0;
        }
        let mut v = -25.0 / 24.0 * x2 * y2 + (-x2 * x2 / 24.0 + x2 * y2 / 4.0 - y2 * y2 / 24.0) * r2.ln();
        if x != 0.0 && y != 0.0 {
            v += x2 * x * y * (y / x).atan() / 3.0 + x * y2 * y * (x / y).atan() / 3.0;
        }
        v
    };
    const C: [f64; 3] = [1.0, -2.0, 1.0];
    let mut total = 0.0;
    for (s, cs) in C.iter().enumerate() {
        for (t, ct) in C.iter().enumerate() {
            total += cs * ct * b(u.x + (s as f64 - 1.0) * h, u.y + (t as f64 - 1.0) * h);
        }
    }
    -0.5 * total
}

/// Mean of `-log|z|` over a square of side `h` centred at the origin:
/// `-log h + log(2)/2 + 3/2 - pi/4`.
#[inline]
pub fn square_self_average(h: f64) -> f64 {
    -h.ln() + 0.5 * std::f64::consts::LN_2 + 1.5 - 0.5 * FRAC_PI_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use approx::assert_relative_eq;

    /// Trapezoid rule on the circle; spectrally accurate for smooth periodic
    /// integrands and independent of the split quadrature above.
    fn circle_average<F: Fn(Vec2) -> f64>(f: F, center: Vec2, radius: f64, m: usize) -> f64 {
        (0..m)
            .map(|k| f(center + Vec2::polar(radius, 2.0 * PI * k as f64 / m as f64)))
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn coulomb_examples() {
        assert_eq!(coulomb_g(Vec2::new(1.0, 0.0)).unwrap(), 0.0);
        let e_inv = (-1.0f64).exp();
        assert_relative_eq!(coulomb_g(Vec2::new(0.0, e_inv)).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            coulomb_g(Vec2::new(2.0, 0.0)).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert!(matches!(coulomb_g(Vec2::ZERO), Err(Error::Singularity(_))));
    }

    #[test]
    fn smeared_matches_circle_quadrature() {
        let eta = SmearingRadius::new(0.01).unwrap();
        let x = Vec2::new(0.02, 0.0);
        let oracle = circle_average(|y| -0.5 * y.norm2().ln(), x, 0.01, 4096);
        assert_relative_eq!(smeared_g(x, eta), -(0.02f64).ln(), max_relative = 1e-14);
        assert_relative_eq!(smeared_g(x, eta), oracle, max_relative = 1e-10);

        let half = SmearingRadius::new(0.5).unwrap();
        let oracle0 = circle_average(|y| -0.5 * y.norm2().ln(), Vec2::ZERO, 0.5, 4096);
        assert_relative_eq!(smeared_g(Vec2::ZERO, half), -(0.5f64).ln(), max_relative = 1e-14);
        assert_relative_eq!(oracle0, -(0.5f64).ln(), max_relative = 1e-10);

        let tenth = SmearingRadius::new(0.1).unwrap();
        assert_eq!(smeared_g(Vec2::new(0.6, 0.8), tenth), 0.0);
    }

    #[test]
    fn smeared_equals_g_outside_ball() {
        for &eta in &[0.01, 0.3, 2.0] {
            let s = SmearingRadius::new(eta).unwrap();
            for k in 0..50 {
                let r = eta * (1.0 + 0.37 * k as f64);
                let x = Vec2::polar(r, 0.3 * k as f64);
                assert_relative_eq!(smeared_g(x, s), coulomb_g(x).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gap_nonnegative_and_supported_in_ball() {
        let eta = SmearingRadius::new(0.25).unwrap();
        for k in 1..200 {
            let r = 0.005 * k as f64;
            let x = Vec2::new(r, 0.0);
            let gap = coulomb_g(x).unwrap() - smeared_g(x, eta);
            assert!(gap >= -1e-15);
            if r >= 0.25 {
                assert!(gap.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn psi_outside_and_on_boundary() {
        let eta = SmearingRadius::new(0.1).unwrap();
        let x = Vec2::new(0.3, 0.0);
        assert_relative_eq!(psi_smeared_g(x, eta), coulomb_g(x).unwrap(), epsilon = 1e-14);
        let b = Vec2::new(0.0, 0.2);
        assert_relative_eq!(psi_smeared_g(b, eta), coulomb_g(b).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn psi_matches_nested_quadrature() {
        let eta = SmearingRadius::new(0.5).unwrap();
        let oracle = circle_average(|y| smeared_g(y, eta), Vec2::ZERO, 0.5, 4096);
        assert_relative_eq!(psi_smeared_g(Vec2::ZERO, eta), oracle, max_relative = 1e-8);

        // 100 pseudo-random points inside the 2 eta ball.
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let x = Vec2::polar(1.2 * next(), 2.0 * PI * next());
            // smeared_g has a kink on the circle, so the trapezoid oracle
            // converges only algebraically; use many nodes.
            let oracle = circle_average(|y| smeared_g(y, eta), x, 0.5, 1 << 17);
            assert_relative_eq!(psi_smeared_g(x, eta), oracle, max_relative = 1e-8);
        }
    }

    #[test]
    fn psi_gap_integrates_to_pi_eta_squared() {
        // int (g - g*psi_{2eta}) = 2 * int (g - g*phi_eta) = pi eta^2.
        let eta = SmearingRadius::new(0.2).unwrap();
        let v = 2.0 * PI * quadrature::integrate(|r| r * psi_gap(r, eta).unwrap(), 0.0, 0.4, 64);
        assert_relative_eq!(v, PI * 0.04, max_relative = 1e-6);
    }

    #[test]
    fn gap_l1_values_and_scaling() {
        let one = kernel_gap_l1(SmearingRadius::new(1.0).unwrap());
        assert_relative_eq!(one.closed_form, FRAC_PI_2, max_relative = 1e-15);
        assert_relative_eq!(one.quadrature, FRAC_PI_2, max_relative = 1e-12);
        let tenth = kernel_gap_l1(SmearingRadius::new(0.1).unwrap());
        assert_relative_eq!(tenth.closed_form, PI * 0.01 / 2.0, max_relative = 1e-14);
        for &eta in &[1.0, 0.5, 0.1, 0.01] {
            let v = kernel_gap_l1(SmearingRadius::new(eta).unwrap());
            assert_relative_eq!(v.closed_form / (eta * eta), FRAC_PI_2, max_relative = 1e-10);
            assert_relative_eq!(v.quadrature / (eta * eta), FRAC_PI_2, max_relative = 1e-10);
            let doubled = kernel_gap_l1(SmearingRadius::new(2.0 * eta).unwrap());
            assert_relative_eq!(doubled.closed_form, 4.0 * v.closed_form, max_relative = 1e-14);
        }
    }

    #[test]
    fn kernel_fourier_values() {
        assert_relative_eq!(kernel_fourier(Vec2::new(1.0, 0.0)).unwrap(), 1.0 / (2.0 * PI));
        assert_relative_eq!(kernel_fourier(Vec2::new(0.0, 2.0)).unwrap(), 1.0 / (8.0 * PI));
        assert!(kernel_fourier(Vec2::ZERO).is_err());
    }

    #[test]
    fn rect_integral_matches_quadrature() {
        let cases = [
            (0.1, 0.4, -0.2, 0.3),
            (-0.05, 0.05, -0.05, 0.05),
            (0.0, 1.0, 0.0, 1.0),
            (1.0, 2.0, 3.0, 3.5),
        ];
        for (x0, x1, y0, y1) in cases {
            // Split at the axes so each panel has the singularity at a corner at most.
            let mut xs = vec![x0, x1];
            if x0 < 0.0 && x1 > 0.0 {
                xs.insert(1, 0.0);
            }
            let mut ys = vec![y0, y1];
            if y0 < 0.0 && y1 > 0.0 {
                ys.insert(1, 0.0);
            }
            let mut oracle = 0.0;
            for wx in xs.windows(2) {
                for wy in ys.windows(2) {
                    oracle += quadrature::integrate(
                        |x| quadrature::integrate(|y| -0.5 * (x * x + y * y).ln(), wy[0], wy[1], 16),
                        wx[0],
                        wx[1],
                        16,
                    );
                }
            }
            assert_relative_eq!(rect_neg_log_integral(x0, x1, y0, y1), oracle, max_relative = 1e-7);
        }
    }

    #[test]
    fn self_average_matches_rectangle_formula() {
        for &h in &[0.01, 0.3, 1.0, 4.0] {
            let direct = rect_neg_log_integral(-h / 2.0, h / 2.0, -h / 2.0, h / 2.0) / (h * h);
            assert_relative_eq!(square_self_average(h), direct, max_relative = 1e-12);
        }
    }
}
