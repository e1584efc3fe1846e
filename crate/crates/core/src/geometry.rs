//! Hyperbolic metric on the Poincaré ball in polar coordinates, connection thresholds and the
//! radial depth law.
//!
//! Points are kept in hyperbolic polar form: a radius `r = d(0, x)` (or its depth
//! `t = R - r` below the rim of the sampling ball) together with a unit direction in `R^d`.
//! Distances go through the hyperbolic law of cosines written in half-angle form,
//!
//! ```text
//! cosh(zeta d) - 1 = 2 sinh^2(zeta (r1 - r2) / 2) + 2 sinh(zeta r1) sinh(zeta r2) sin^2(theta / 2)
//! ```
//!
//! which avoids the cancellation of the textbook form for nearby points and never needs an
//! `arccos` of a number close to one.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `kappa_m = \int_0^pi sin^m(theta) d theta`, by the Wallis recurrence.
pub fn kappa(m: usize) -> f64 {
    let (mut k, start) = if m.is_multiple_of(2) { (PI, 2) } else { (2.0, 3) };
    let mut j = start;
    while j <= m {
        k *= (j as f64 - 1.0) / j as f64;
        j += 2;
    }
    k
}

/// `\int_0^x sin^m(s) ds` for `x` in `[0, pi]`.
pub fn sin_power_integral(m: usize, x: f64) -> f64 {
    let (s, c) = x.sin_cos();
    // J_m = -sin^{m-1} cos / m + (m - 1)/m J_{m-2}
    let mut acc = if m.is_multiple_of(2) { x } else { 1.0 - c };
    let mut j = if m.is_multiple_of(2) { 2 } else { 3 };
    while j <= m {
        let jf = j as f64;
        acc = -s.powi(j as i32 - 1) * c / jf + (jf - 1.0) / jf * acc;
        j += 2;
    }
    acc
}

/// `log log R`, the margin below `R` on which the asymptotic distance and connection formulas
/// hold uniformly. Only meaningful for `R > e`.
pub fn omega(radius: f64) -> f64 {
    radius.ln().ln()
}

/// Unit vector in `R^d` for the spherical angles `(theta_1, ..., theta_{d-1})`.
pub fn angles_to_direction(angles: &[f64]) -> Vec<f64> {
    let d = angles.len() + 1;
    let mut out = Vec::with_capacity(d);
    let mut sin_prod = 1.0;
    for &a in angles {
        let (s, c) = a.sin_cos();
        out.push(sin_prod * c);
        sin_prod *= s;
    }
    out.push(sin_prod);
    out
}

/// A point of the sampling ball in hyperbolic polar coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicPoint {
    /// Depth below the rim, `R - d(0, x)`.
    pub t: f64,
    /// Hyperbolic distance to the origin.
    pub r: f64,
    /// `theta_1..theta_{d-2}` in `[0, pi]`, `theta_{d-1}` in `[0, 2 pi)`.
    pub angles: Vec<f64>,
    /// Cached image of `angles` on the unit sphere.
    pub direction: Vec<f64>,
}

impl HyperbolicPoint {
    pub fn from_depth(t: f64, radius: f64, angles: Vec<f64>) -> Self {
        let direction = angles_to_direction(&angles);
        Self { t, r: radius - t, angles, direction }
    }

    pub fn from_radius(r: f64, radius: f64, angles: Vec<f64>) -> Self {
        let direction = angles_to_direction(&angles);
        Self { t: radius - r, r, angles, direction }
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// Same depth and same angles. Such pairs sit at distance zero and never share an edge.
    pub fn coincides_with(&self, other: &Self) -> bool {
        self.t == other.t && self.angles == other.angles
    }

    /// Euclidean coordinates of this point in the unit-ball model with curvature `-zeta^2`.
    pub fn to_poincare(&self, zeta: f64) -> Vec<f64> {
        let rho = (0.5 * zeta * self.r).tanh();
        self.direction.iter().map(|u| rho * u).collect()
    }
}

/// `|u - v|^2` for two unit directions, which equals `4 sin^2(theta_uv / 2)`.
pub(crate) fn chord_sq(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Relative angle in `[0, pi]` between the rays through `a` and `b`.
pub fn relative_angle(a: &HyperbolicPoint, b: &HyperbolicPoint) -> f64 {
    direction_angle(&a.direction, &b.direction)
}

/// Angle between two unit vectors, `2 atan2(|u - v|, |u + v|)`.
pub fn direction_angle(u: &[f64], v: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (a, b) in u.iter().zip(v) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// `ln sinh(x)` for `x > 0` without overflow.
fn ln_sinh(x: f64) -> f64 {
    x - LN_2 + (-(-2.0 * x).exp_m1()).ln()
}

/// `arccosh(1 + u)` accurate for small `u`.
fn acosh1p(u: f64) -> f64 {
    let u = u.max(0.0);
    if u > 1e8 {
        let x = 1.0 + u;
        return x.ln() + (1.0 - 1.0 / (x * x)).sqrt().ln_1p();
    }
    (u + (u * (u + 2.0)).sqrt()).ln_1p()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Hyperbolic distance between points at radii `r1`, `r2` separated by angle `theta12`, under
/// curvature `-zeta^2`.
pub fn hyperbolic_distance(r1: f64, r2: f64, theta12: f64, zeta: f64) -> f64 {
    let a = zeta * r1;
    let b = zeta * r2;
    let half = 0.5 * theta12.clamp(0.0, PI);
    let sin_half = half.sin();
    if a.max(b) < 300.0 {
        let radial = (0.5 * (a - b)).sinh();
        let u = 2.0 * radial * radial + 2.0 * a.sinh() * b.sinh() * sin_half * sin_half;
        return acosh1p(u) / zeta;
    }
    // log-space branch; cosh(zeta d) is far beyond f64 range here
    let radial_term = if a == b {
        f64::NEG_INFINITY
    } else {
        LN_2 + 2.0 * ln_sinh(0.5 * (a - b).abs())
    };
    let angular_term = if a == 0.0 || b == 0.0 || sin_half == 0.0 {
        f64::NEG_INFINITY
    } else {
        LN_2 + ln_sinh(a) + ln_sinh(b) + 2.0 * sin_half.ln()
    };
    let ln_u = log_add_exp(radial_term, angular_term);
    if ln_u < 30.0 {
        return acosh1p(ln_u.exp()) / zeta;
    }
    // arccosh(1 + u) = ln(2u) + O(1/u)
    (LN_2 + ln_u) / zeta
}

/// Distance in the unit-ball model between two Euclidean points with norm below one.
///
/// Serves as an independent check on [`hyperbolic_distance`].
pub fn poincare_distance_oracle(x: &[f64], y: &[f64], zeta: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("dimension mismatch {} vs {}", x.len(), y.len())));
    }
    let nx: f64 = x.iter().map(|v| v * v).sum();
    let ny: f64 = y.iter().map(|v| v * v).sum();
    if nx >= 1.0 || ny >= 1.0 {
        return Err(Error::Domain("points must lie in the open unit ball".into()));
    }
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let u = 2.0 * diff / ((1.0 - nx) * (1.0 - ny));
    Ok(acosh1p(u) / zeta)
}

/// Boundary approximation `2R - (t1 + t2) + (2/zeta) log sin(theta12 / 2)` of the distance
/// between two points at depths `t1`, `t2`.
///
/// Intended for `t1 + t2 <= R - omega(R)`; the error is of order
/// `(approximation_scale / theta12)^2`.
pub fn distance_approximation(t1: f64, t2: f64, theta12: f64, radius: f64, zeta: f64) -> Result<f64> {
    if theta12 <= 0.0 {
        return Err(Error::Domain("relative angle must be positive".into()));
    }
    Ok(2.0 * radius - (t1 + t2) + 2.0 / zeta * (0.5 * theta12).sin().ln())
}

/// `hat theta_12 = (e^{-2 zeta (R - t1)} + e^{-2 zeta (R - t2)})^{1/2}`, the angle scale below which
/// [`distance_approximation`] stops being accurate.
pub fn approximation_scale(t1: f64, t2: f64, radius: f64, zeta: f64) -> f64 {
    ((-2.0 * zeta * (radius - t1)).exp() + (-2.0 * zeta * (radius - t2)).exp()).sqrt()
}

/// `sin^2(theta* / 2)` for the critical angle at which two points at radii `r1`, `r2` are exactly
/// `radius` apart. Values above one mean every angle connects, negative values that none does.
pub(crate) fn threshold_half_sin_sq(r1: f64, r2: f64, radius: f64, zeta: f64) -> f64 {
    let delta = (r1 - r2).abs();
    if delta > radius {
        return -1.0;
    }
    if r1.min(r2) <= 0.0 {
        // the origin is at distance r2 from everything on its sphere
        return if delta <= radius { f64::INFINITY } else { -1.0 };
    }
    // (cosh(zR) - cosh(z delta)) / (2 sinh(z r1) sinh(z r2)), written in scaled exponentials
    let zr = zeta * radius;
    let zd = zeta * delta;
    let num = (-(-(zr + zd)).exp_m1()) * (-(-(zr - zd)).exp_m1());
    let den = (-(-2.0 * zeta * r1).exp_m1()) * (-(-2.0 * zeta * r2).exp_m1());
    (zeta * (radius - r1 - r2)).exp() * num / den
}

/// The angle `theta*` in `[0, pi]` at which `hyperbolic_distance(r1, r2, theta*) = radius`; points
/// at relative angle `theta` are within `radius` of each other exactly when `theta <= theta*`.
pub fn connection_angle_threshold(r1: f64, r2: f64, radius: f64, zeta: f64) -> f64 {
    let s2 = threshold_half_sin_sq(r1, r2, radius, zeta);
    if s2 >= 1.0 {
        PI
    } else if s2 <= 0.0 {
        0.0
    } else {
        2.0 * s2.sqrt().asin()
    }
}

/// Boundary asymptotic of the probability that two points at depths `t1`, `t2` with independent
/// uniform directions are within `radius`:
/// `2^{d-1} / ((d-1) kappa_{d-2}) e^{-zeta (d-1) (R - t1 - t2) / 2}`, capped at one.
pub fn connection_probability_asymptotic(t1: f64, t2: f64, radius: f64, d: usize, zeta: f64) -> f64 {
    let dm1 = d as f64 - 1.0;
    let c = 2f64.powi(d as i32 - 1) / (dm1 * kappa(d - 2));
    (c * (-zeta * dm1 * (radius - t1 - t2) / 2.0).exp()).min(1.0)
}

/// Exact probability that two points at depths `t1`, `t2` with independent uniform directions are
/// within `radius`: the relative angle has density `sin^{d-2}/kappa_{d-2}` on `[0, pi]`.
pub fn connection_probability_exact(t1: f64, t2: f64, radius: f64, d: usize, zeta: f64) -> f64 {
    let theta = connection_angle_threshold(radius - t1, radius - t2, radius, zeta);
    (sin_power_integral(d - 2, theta) / kappa(d - 2)).clamp(0.0, 1.0)
}

/// Closed form of the depth law `bar rho(t) = sinh^{d-1}(alpha (R - t)) / \int_0^R sinh^{d-1}(alpha s) ds`
/// for `t` in `[0, R]`.
///
/// `sinh^{d-1}` is expanded binomially into exponentials, so the normalizer and the CDF are exact
/// finite sums. Everything is scaled by `e^{-(d-1) alpha R}` to stay in range.
#[derive(Debug, Clone)]
pub struct RadialDepthLaw {
    m: usize,
    alpha: f64,
    radius: f64,
    /// `2^{-m} C(m, j) (-1)^j` for `j = 0..=m`
    coeffs: Vec<f64>,
    total: f64,
}

impl RadialDepthLaw {
    pub fn new(d: usize, alpha: f64, radius: f64) -> Self {
        let m = d - 1;
        let mut coeffs = Vec::with_capacity(m + 1);
        let mut binom = 1.0;
        for j in 0..=m {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            coeffs.push(sign * binom * 0.5f64.powi(m as i32));
            binom = binom * (m - j) as f64 / (j + 1) as f64;
        }
        let mut law = Self { m, alpha, radius, coeffs, total: 1.0 };
        law.total = law.scaled_integral(0.0, radius);
        law
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `e^{-m alpha R} \int_a^b sinh^m(alpha s) ds` for `0 <= a <= b <= R`.
    fn scaled_integral(&self, a: f64, b: f64) -> f64 {
        let mar = self.m as f64 * self.alpha * self.radius;
        let width = b - a;
        let mut acc = 0.0;
        for (j, coef) in self.coeffs.iter().enumerate() {
            let c = (self.m as f64 - 2.0 * j as f64) * self.alpha;
            let term = if c > 0.0 {
                (c * b - mar).exp() * (-(-c * width).exp_m1()) / c
            } else if c < 0.0 {
                (c * a - mar).exp() * (-(c * width).exp_m1()) / (-c)
            } else {
                width * (-mar).exp()
            };
            acc += coef * term;
        }
        acc
    }

    /// Exact density of the depth `T = R - d(0, X)`.
    pub fn density(&self, t: f64) -> f64 {
        if !(0.0..=self.radius).contains(&t) {
            return 0.0;
        }
        let r = self.radius - t;
        let shape = 0.5f64.powi(self.m as i32)
            * (-(self.m as f64) * self.alpha * t).exp()
            * (-(-2.0 * self.alpha * r).exp_m1()).powi(self.m as i32);
        shape / self.total
    }

    /// `alpha (d - 1) e^{-alpha (d - 1) t}`, the large-`R` approximation of [`Self::density`].
    pub fn approx_density(&self, t: f64) -> f64 {
        let ma = self.m as f64 * self.alpha;
        ma * (-ma * t).exp()
    }

    /// `P(T <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.radius {
            return 1.0;
        }
        (self.scaled_integral(self.radius - t, self.radius) / self.total).clamp(0.0, 1.0)
    }

    /// Smallest `t` with `P(T <= t) >= u`, to absolute accuracy `1e-12 R`.
    ///
    /// Newton steps on the closed-form CDF, falling back to bisection whenever a step leaves the
    /// current bracket.
    pub fn quantile(&self, u: f64) -> f64 {
        let tol = 1e-12 * self.radius;
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return self.radius;
        }
        let (mut lo, mut hi) = (0.0, self.radius);
        let ma = self.m as f64 * self.alpha;
        let mut t = (-(-u).ln_1p() / ma).clamp(lo, hi);
        for _ in 0..200 {
            let f = self.cdf(t) - u;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let dens = self.density(t);
            let mut next = if dens > 0.0 { t - f / dens } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - t).abs();
            t = next;
            if step < tol || hi - lo < tol {
                break;
            }
        }
        t
    }
}

/// Exact depth density at `t` for the radius `radius`.
pub fn radial_depth_density(t: f64, d: usize, alpha: f64, radius: f64) -> f64 {
    RadialDepthLaw::new(d, alpha, radius).density(t)
}

/// Large-radius approximation `alpha (d-1) e^{-alpha (d-1) t}` of [`radial_depth_density`].
pub fn radial_depth_density_approx(t: f64, d: usize, alpha: f64) -> f64 {
    let ma = (d as f64 - 1.0) * alpha;
    ma * (-ma * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(0), PI);
        assert_eq!(kappa(1), 2.0);
        let oracle = integrate(|x: f64| x.sin().powi(2), 0.0, PI, 1e-14);
        assert!(close(kappa(2), oracle, 1e-12));
        assert!(close(kappa(2), PI / 2.0, 1e-15));
        for m in 0..9 {
            let q = integrate(|x: f64| x.sin().powi(m as i32), 0.0, PI, 1e-14);
            assert!(close(kappa(m), q, 1e-11), "m={m}");
        }
    }

    #[test]
    fn sin_power_integral_matches_quadrature() {
        for m in 0..7 {
            for &x in &[0.0, 0.1, 1.0, 2.5, PI] {
                let q = integrate(|s: f64| s.sin().powi(m as i32), 0.0, x, 1e-14);
                assert!((sin_power_integral(m, x) - q).abs() < 1e-12, "m={m} x={x}");
            }
        }
    }

    #[test]
    fn direction_is_unit_and_spherical() {
        let dir = angles_to_direction(&[0.7, 1.1, 4.0]);
        let norm: f64 = dir.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((dir[0] - 0.7f64.cos()).abs() < 1e-15);
        assert!((dir[3] - 0.7f64.sin() * 1.1f64.sin() * 4.0f64.sin()).abs() < 1e-15);
        assert_eq!(angles_to_direction(&[0.3]), vec![0.3f64.cos(), 0.3f64.sin()]);
    }

    #[test]
    fn relative_angle_examples() {
        let a = HyperbolicPoint::from_depth(1.0, 10.0, vec![0.3]);
        assert_eq!(relative_angle(&a, &a), 0.0);
        let b = HyperbolicPoint::from_depth(1.0, 10.0, vec![0.3 + PI]);
        assert!((relative_angle(&a, &b) - PI).abs() < 1e-12);
        let c = HyperbolicPoint::from_depth(2.0, 10.0, vec![2.0 * PI - 0.3]);
        // direct 2D dot product
        let dot = 0.3f64.cos() * (2.0 * PI - 0.3).cos() + 0.3f64.sin() * (2.0 * PI - 0.3).sin();
        assert!((relative_angle(&a, &c) - dot.acos()).abs() < 1e-12);
        assert!((relative_angle(&a, &c) - 0.6).abs() < 1e-12);
        let p = HyperbolicPoint::from_depth(0.0, 5.0, vec![0.0, 0.0]);
        let q = HyperbolicPoint::from_depth(0.0, 5.0, vec![PI, 0.0]);
        assert!((relative_angle(&p, &q) - PI).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(hyperbolic_distance(3.0, 3.0, 0.0, 1.0), 0.0);
        for &r in &[0.5, 3.0, 12.0] {
            assert!(close(hyperbolic_distance(r, r, PI, 1.0), 2.0 * r, 1e-12));
            assert!(close(hyperbolic_distance(r, r, PI, 0.5), 2.0 * r, 1e-12));
        }
        assert!(close(hyperbolic_distance(2.0, 7.0, 0.0, 1.0), 5.0, 1e-12));
        // textbook law of cosines at moderate radii
        let (r1, r2, th) = (5.0f64, 7.0f64, 0.01f64);
        let direct = (r1.cosh() * r2.cosh() - r1.sinh() * r2.sinh() * th.cos()).acosh();
        assert!(close(hyperbolic_distance(r1, r2, th, 1.0), direct, 1e-9));
    }

    #[test]
    fn distance_cross_checks_poincare_oracle() {
        let a = HyperbolicPoint::from_radius(5.0, 10.0, vec![1.0]);
        let b = HyperbolicPoint::from_radius(7.0, 10.0, vec![1.01]);
        let exact = hyperbolic_distance(5.0, 7.0, relative_angle(&a, &b), 1.0);
        let oracle = poincare_distance_oracle(&a.to_poincare(1.0), &b.to_poincare(1.0), 1.0).unwrap();
        assert!(close(exact, oracle, 1e-9));
    }

    #[test]
    fn large_radius_branch_is_continuous() {
        for &th in &[1e-6, 1e-3, 0.5, 3.0] {
            let below = hyperbolic_distance(299.0, 298.5, th, 1.0);
            let above = hyperbolic_distance(301.0, 300.5, th, 1.0);
            assert!(close(above - below, 4.0, 1e-9), "th={th} {above} {below}");
            let boundary_form = 601.5 + 2.0 * (0.5 * th).sin().ln();
            assert!(close(above, boundary_form, 1e-9));
        }
        assert!(close(hyperbolic_distance(800.0, 800.0, PI, 1.0), 1600.0, 1e-12));
        assert!(close(hyperbolic_distance(800.0, 790.0, 0.0, 1.0), 10.0, 1e-9));
    }

    #[test]
    fn poincare_oracle_basics() {
        let x = [0.1, -0.2, 0.3];
        assert_eq!(poincare_distance_oracle(&x, &x, 1.0).unwrap(), 0.0);
        let rho = 0.8f64;
        let d = poincare_distance_oracle(&[0.0, 0.0], &[0.0, rho], 1.5).unwrap();
        assert!(close(d, ((1.0 + rho) / (1.0 - rho)).ln() / 1.5, 1e-12));
        assert!(poincare_distance_oracle(&[1.0, 0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(poincare_distance_oracle(&[0.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn distance_approximation_examples() {
        let r = 30.0;
        assert!(close(distance_approximation(2.0, 3.0, PI, r, 1.0).unwrap(), 55.0, 1e-12));
        assert!(distance_approximation(1.0, 1.0, 0.0, r, 1.0).is_err());
        let r = 8.0;
        let exact = hyperbolic_distance(r - 2.0, r - 2.0, 0.1, 1.0);
        let approx = distance_approximation(2.0, 2.0, 0.1, r, 1.0).unwrap();
        let scale = (approximation_scale(2.0, 2.0, r, 1.0) / 0.1).powi(2);
        assert!((exact - approx).abs() <= 10.0 * scale, "{} vs {}", (exact - approx).abs(), scale);
        let err = |r: f64| {
            (hyperbolic_distance(r - 2.0, r - 2.0, 0.1, 1.0)
                - distance_approximation(2.0, 2.0, 0.1, r, 1.0).unwrap())
            .abs()
        };
        assert!(err(6.0) > err(8.0) && err(8.0) > err(10.0));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(connection_angle_threshold(3.0, 4.0, 10.0, 1.0), PI);
        assert_eq!(connection_angle_threshold(0.0, 4.0, 10.0, 1.0), PI);
        assert_eq!(connection_angle_threshold(0.0, 14.0, 10.0, 1.0), 0.0);
        assert_eq!(connection_angle_threshold(2.0, 14.0, 10.0, 1.0), 0.0);
        // r1 = r2 = R: bisection root of the law of cosines
        let (r, zeta) = (10.0, 1.0);
        let th = connection_angle_threshold(r, r, r, zeta);
        let (mut lo, mut hi) = (0.0, PI);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let d = (r.cosh() * r.cosh() - r.sinh() * r.sinh() * mid.cos()).acosh();
            if d > r {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!(th > 0.0 && th < 0.1);
        assert!((th - lo).abs() < 1e-7 * lo, "{th} vs {lo}");
        assert!(close(hyperbolic_distance(r, r, th, zeta), r, 1e-12));
    }

    #[test]
    fn threshold_monotone_outside_inner_radius() {
        let radius = 12.0;
        for i in 0..60 {
            let r2 = 0.25 * i as f64;
            let mut prev = PI;
            for j in 0..120 {
                let r1 = r2 + 0.2 * j as f64;
                let th = connection_angle_threshold(r1, r2, radius, 1.0);
                assert!(th <= prev + 1e-12, "r1={r1} r2={r2}");
                prev = th;
            }
        }
    }

    #[test]
    fn asymptotic_probability_examples() {
        let p = connection_probability_asymptotic(0.0, 0.0, 30.0, 2, 1.0);
        assert!(close(p, 2.0 / PI * (-15.0f64).exp(), 1e-14));
        let a = connection_probability_asymptotic(1.0, 2.0, 30.0, 3, 0.7);
        let b = connection_probability_asymptotic(1.5, 2.5, 30.0, 3, 0.7);
        assert!(close(b / a, (0.7f64 * 2.0 * 1.0 / 2.0).exp(), 1e-12));
        assert_eq!(connection_probability_asymptotic(20.0, 20.0, 30.0, 2, 1.0), 1.0);
    }

    #[test]
    fn depth_law_normalizes() {
        for &(d, alpha, r) in &[(2, 1.0, 10.0), (3, 0.8, 12.0), (5, 2.0, 7.0), (4, 0.3, 20.0)] {
            let law = RadialDepthLaw::new(d, alpha, r);
            let mass = integrate(|t| law.density(t), 0.0, r, 1e-14);
            assert!((mass - 1.0).abs() < 1e-10, "d={d} mass={mass}");
            for &t in &[0.0, 0.3 * r, 0.9 * r, r] {
                let q = integrate(|s| law.density(s), 0.0, t, 1e-14);
                assert!((law.cdf(t) - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn depth_law_two_dimensional_closed_form() {
        let (alpha, r) = (1.0, 9.0);
        let law = RadialDepthLaw::new(2, alpha, r);
        for &t in &[0.0, 1.0, 4.5, 8.0, 9.0] {
            let direct = (r - t).sinh() / (r.cosh() - 1.0);
            assert!(close(law.density(t), direct, 1e-12), "t={t}");
        }
    }

    #[test]
    fn depth_law_approaches_exponential() {
        let mut worst = Vec::new();
        for &r in &[10.0, 20.0, 40.0] {
            let law = RadialDepthLaw::new(3, 0.7, r);
            let w = (0..=90)
                .map(|i| 0.5 * r * i as f64 / 90.0)
                .map(|t| (law.density(t) / law.approx_density(t) - 1.0).abs())
                .fold(0.0, f64::max);
            worst.push(w);
            for i in 0..=100 {
                let t = r * i as f64 / 100.0;
                assert!(law.density(t) <= (1.0 + 1e-3) * law.approx_density(t) + 1e-300 || r < 15.0);
            }
        }
        assert!(worst[0] > worst[1] && worst[1] > worst[2] && worst[2] < 1e-3, "{worst:?}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        let law = RadialDepthLaw::new(3, 1.3, 25.0);
        for &u in &[1e-9, 0.01, 0.3, 0.5, 0.9, 0.999999, 1.0 - 1e-13] {
            let t = law.quantile(u);
            assert!((0.0..=25.0).contains(&t));
            assert!((law.cdf(t) - u).abs() < 1e-9, "u={u}");
        }
        assert_eq!(law.quantile(0.0), 0.0);
        assert_eq!(law.quantile(1.0), 25.0);
    }

    #[test]
    fn exact_connection_probability_by_quadrature() {
        for &d in &[2usize, 3, 4] {
            let (t1, t2, r) = (3.0, 5.0, 14.0);
            let q = integrate(
                |th| {
                    let dist = hyperbolic_distance(r - t1, r - t2, th, 1.0);
                    if dist <= r {
                        th.sin().powi(d as i32 - 2) / kappa(d - 2)
                    } else {
                        0.0
                    }
                },
                0.0,
                PI,
                1e-12,
            );
            let p = connection_probability_exact(t1, t2, r, d, 1.0);
            assert!((p - q).abs() < 1e-6 * q.max(1e-12) + 1e-12, "d={d} {p} {q}");
        }
    }
}
