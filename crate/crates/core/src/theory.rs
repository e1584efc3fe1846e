//! Closed-form expectation and variance orders of tree counts, regime classification and the
//! Malliavin–Stein normal-approximation bounds.
//!
//! Throughout, `R` is the ball radius and `gamma` the annulus fraction taken from
//! [`ModelParams::gamma`]. Degree sequences are those of the tree; `d_(k)` is the largest degree.

use serde::{Deserialize, Serialize};

use crate::census::TreeSpec;
use crate::error::{Error, Result};
use crate::geometry::{connection_probability_exact, kappa, RadialDepthLaw};
use crate::params::{ModelParams, RadiusRule};
use crate::quadrature::composite_grid;

/// `max(a, 0)`, with exact ties mapped to zero.
pub fn positive_part(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        0.0
    }
}

fn a_gamma_rate(p: usize, params: &ModelParams) -> f64 {
    params.zeta * (params.d as f64 - 1.0) * (p as f64 - 2.0 * params.alpha / params.zeta) / 2.0
}

/// `a^{(gamma)}(p) = \int_0^{gamma R} e^{c t} dt` with `c = zeta (d - 1)(p - 2 alpha / zeta) / 2`.
pub fn a_gamma(p: usize, params: &ModelParams, radius: f64) -> f64 {
    let c = a_gamma_rate(p, params);
    let x = params.gamma * radius;
    if c.abs() > 1e-12 {
        (c * x).exp_m1() / c
    } else {
        x
    }
}

/// `ln a^{(gamma)}(p)`, finite even when `a^{(gamma)}(p)` overflows.
pub fn ln_a_gamma(p: usize, params: &ModelParams, radius: f64) -> f64 {
    let c = a_gamma_rate(p, params);
    let x = params.gamma * radius;
    if c > 1e-12 {
        c * x + (-(-c * x).exp_m1()).ln() - c.ln()
    } else if c < -1e-12 {
        (-(c * x).exp_m1()).ln() - (-c).ln()
    } else {
        x.ln()
    }
}

fn check_tree_dim(tree: &TreeSpec, params: &ModelParams) -> Result<()> {
    params.validate()?;
    if tree.k() < 2 {
        return Err(Error::InvalidTree("need k >= 2".into()));
    }
    Ok(())
}

/// Natural log of the boundary asymptotic of `E S^{(gamma)}`:
/// `(2^{d-1}/kappa_{d-2})^{k-1} alpha^k (d-1) n^k e^{-zeta (d-1)(k-1) R / 2} prod_i a^{(gamma)}(d_i)`.
pub fn ln_expected_subtree_asymptotic(tree: &TreeSpec, params: &ModelParams, radius: f64) -> f64 {
    let k = tree.k() as f64;
    let dm1 = params.d as f64 - 1.0;
    let base = (2f64.powi(params.d as i32 - 1) / kappa(params.d - 2)).ln();
    (k - 1.0) * base + k * params.alpha.ln() + dm1.ln() + k * params.n.ln()
        - params.zeta * dm1 * (k - 1.0) * radius / 2.0
        + tree.degrees().iter().map(|&p| ln_a_gamma(p, params, radius)).sum::<f64>()
}

/// Boundary asymptotic of `E S^{(gamma)}`; see [`ln_expected_subtree_asymptotic`].
///
/// For `gamma = 1/2` this is only the order of the expectation, see [`RegimeReport::theta_only`].
pub fn expected_subtree_asymptotic(tree: &TreeSpec, params: &ModelParams, radius: f64) -> Result<f64> {
    check_tree_dim(tree, params)?;
    Ok(ln_expected_subtree_asymptotic(tree, params, radius).exp())
}

/// Constant `(2^{d-1}/((d-1) kappa_{d-2}))^{k-1} alpha^k prod_i (alpha - zeta d_i / 2)^{-1}` of the
/// full count, defined when `2 alpha / zeta > d_(k)`.
pub fn full_count_constant(tree: &TreeSpec, params: &ModelParams) -> Result<f64> {
    check_tree_dim(tree, params)?;
    let ratio = 2.0 * params.alpha / params.zeta;
    let dk = tree.max_degree() as f64;
    if ratio <= dk {
        return Err(Error::Regime(format!("2 alpha / zeta = {ratio} must exceed the maximum degree {dk}")));
    }
    let d = params.d;
    let base = 2f64.powi(d as i32 - 1) / ((d as f64 - 1.0) * kappa(d - 2));
    let poles: f64 = tree.degrees().iter().map(|&p| params.alpha - params.zeta * p as f64 / 2.0).product();
    Ok(base.powi(tree.k() as i32 - 1) * params.alpha.powi(tree.k() as i32) / poles)
}

/// `E S` for the full count: [`full_count_constant`] times `n^k e^{-zeta (d-1)(k-1) R / 2}`.
pub fn expected_subtree_full(tree: &TreeSpec, params: &ModelParams, radius: f64) -> Result<f64> {
    let c = full_count_constant(tree, params)?;
    let k = tree.k() as f64;
    let dm1 = params.d as f64 - 1.0;
    Ok(c * (k * params.n.ln() - params.zeta * dm1 * (k - 1.0) * radius / 2.0).exp())
}

/// Growth exponent of `E S^{(gamma)}` in `n` under the thermodynamic radius rule:
/// `1 + gamma sum_i (d_i - 2 alpha / zeta)_+`.
pub fn expectation_exponent(tree: &TreeSpec, params: &ModelParams) -> f64 {
    let ratio = 2.0 * params.alpha / params.zeta;
    1.0 + params.gamma * tree.degrees().iter().map(|&p| positive_part(p as f64 - ratio)).sum::<f64>()
}

/// Which of the two star-tree limits of `ln E S / ln n` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarBranch {
    /// `1 < 2 alpha / zeta <= k - 1`.
    Intermediate,
    /// `0 < 2 alpha / zeta <= 1`.
    Heavy,
}

/// Limit of `log E S / log n` for a star with `k - 1` leaves when `n e^{-zeta (d-1) R / 2}` tends to
/// `c` in `[0, inf]` (`f64::INFINITY` allowed).
pub fn log_expectation_limit(k: usize, c: f64, alpha: f64, zeta: f64, d: usize, branch: StarBranch) -> Result<f64> {
    if k < 2 || d < 2 || !(alpha > 0.0 && zeta > 0.0) || c.is_nan() || c < 0.0 {
        return Err(Error::InvalidParams(format!("bad inputs k={k} c={c} alpha={alpha} zeta={zeta} d={d}")));
    }
    let ratio = 2.0 * alpha / zeta;
    let in_regime = match branch {
        StarBranch::Intermediate => ratio > 1.0 && ratio <= k as f64 - 1.0,
        StarBranch::Heavy => ratio > 0.0 && ratio <= 1.0,
    };
    if !in_regime {
        return Err(Error::Regime(format!("2 alpha / zeta = {ratio} outside the {branch:?} branch for k = {k}")));
    }
    let first = if c.is_infinite() { 0.0 } else { 1.0 / c.max(1.0) };
    let second = if c == 0.0 {
        0.0
    } else if c.is_infinite() {
        1.0
    } else {
        1.0 / (1.0f64).max(1.0 / c)
    };
    let kf = k as f64;
    let dm1 = d as f64 - 1.0;
    Ok(match branch {
        StarBranch::Intermediate => kf * first - alpha * dm1 * second,
        StarBranch::Heavy => kf * first - dm1 * (alpha * kf - zeta * (kf - 1.0) / 2.0) * second,
    })
}

/// Orders of `Var S^{(gamma)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceOrders {
    /// `n^{2k-1} e^{-zeta (d-1)(k-1) R} a(2 d_(k)) prod_{i<k} a(d_(i))^2`.
    pub lower_bound_pair_term: f64,
    /// `n^k e^{-zeta (d-1)(k-1) R / 2} prod_i a(d_i)`.
    pub lower_bound_single_term: f64,
    /// `(n^{2k-1} e^{-zeta (d-1)(k-1) R}, n^k e^{-zeta (d-1)(k-1) R / 2})` when `alpha / zeta > d_(k)`;
    /// the variance is their maximum up to a constant.
    pub exact_order: Option<(f64, f64)>,
}

impl VarianceOrders {
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound_pair_term.max(self.lower_bound_single_term)
    }

    pub fn exact_order_max(&self) -> Option<f64> {
        self.exact_order.map(|(a, b)| a.max(b))
    }
}

pub fn variance_orders(tree: &TreeSpec, params: &ModelParams, radius: f64) -> Result<VarianceOrders> {
    check_tree_dim(tree, params)?;
    let k = tree.k() as f64;
    let dm1 = params.d as f64 - 1.0;
    let ln_n = params.n.ln();
    let sorted = tree.sorted_degrees();
    let (&dk, rest) = sorted.split_last().expect("k >= 2");
    let ln_pair = (2.0 * k - 1.0) * ln_n - params.zeta * dm1 * (k - 1.0) * radius;
    let ln_single = k * ln_n - params.zeta * dm1 * (k - 1.0) * radius / 2.0;
    let pair = ln_pair
        + ln_a_gamma(2 * dk, params, radius)
        + 2.0 * rest.iter().map(|&p| ln_a_gamma(p, params, radius)).sum::<f64>();
    let single = ln_single + sorted.iter().map(|&p| ln_a_gamma(p, params, radius)).sum::<f64>();
    let exact_order = (params.alpha / params.zeta > dk as f64).then(|| (ln_pair.exp(), ln_single.exp()));
    Ok(VarianceOrders { lower_bound_pair_term: pair.exp(), lower_bound_single_term: single.exp(), exact_order })
}

/// The two variance lower-bound exponents under the thermodynamic rule:
/// `1 + 2 gamma (d_(k) - alpha/zeta)_+ + 2 gamma sum_{i<k} (d_(i) - 2 alpha/zeta)_+` and the
/// expectation exponent.
pub fn variance_lower_exponents(tree: &TreeSpec, params: &ModelParams) -> [f64; 2] {
    let sorted = tree.sorted_degrees();
    let (&dk, rest) = sorted.split_last().expect("k >= 2");
    let ratio = params.alpha / params.zeta;
    let pair = 1.0
        + 2.0 * params.gamma * positive_part(dk as f64 - ratio)
        + 2.0 * params.gamma * rest.iter().map(|&p| positive_part(p as f64 - 2.0 * ratio)).sum::<f64>();
    [pair, expectation_exponent(tree, params)]
}

/// Phase of `alpha / zeta` relative to the tree, in increasing order of `alpha / zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPhase {
    /// `alpha / zeta < 1/2`.
    BelowHalf,
    /// `1/2 <= alpha / zeta <= 1 - 1/k`.
    HalfToLower,
    /// `1 - 1/k < alpha / zeta < 1`.
    LowerToOne,
    /// `1 <= alpha / zeta <= d_(k) / 2`.
    OneToHalfMaxDegree,
    /// `alpha / zeta > d_(k) / 2`.
    AboveHalfMaxDegree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub ratio_2alpha_zeta: f64,
    pub ratio_alpha_zeta: f64,
    pub two_alpha_zeta_above_max_degree: bool,
    pub alpha_zeta_above_max_degree: bool,
    pub two_alpha_zeta_above_one: bool,
    pub two_alpha_zeta_at_most_one: bool,
    pub phase: AlphaPhase,
    /// Exponent of `n` in `E S^{(gamma)}` under the thermodynamic rule.
    pub expectation_exponent: f64,
    /// See [`variance_lower_exponents`].
    pub variance_lower_exponents: [f64; 2],
    pub clt_applicable: bool,
    /// `2 alpha / zeta` is an integer, so some `a^{(gamma)}` grows like `R` and the power laws pick up
    /// logarithmic factors.
    pub log_correction: bool,
    /// `gamma = 1/2`: the asymptotic is an order, not an equivalence.
    pub theta_only: bool,
    pub warnings: Vec<String>,
}

pub fn regime_classify(tree: &TreeSpec, params: &ModelParams) -> RegimeReport {
    let ratio1 = params.alpha / params.zeta;
    let ratio2 = 2.0 * ratio1;
    let dk = tree.max_degree() as f64;
    let k = tree.k() as f64;
    let phase = if ratio1 < 0.5 {
        AlphaPhase::BelowHalf
    } else if ratio1 <= 1.0 - 1.0 / k {
        AlphaPhase::HalfToLower
    } else if ratio1 < 1.0 {
        AlphaPhase::LowerToOne
    } else if ratio1 <= dk / 2.0 {
        AlphaPhase::OneToHalfMaxDegree
    } else {
        AlphaPhase::AboveHalfMaxDegree
    };
    let log_correction = (ratio2 - ratio2.round()).abs() < 1e-12;
    let theta_only = params.gamma == 0.5;
    let clt_applicable = ratio1 > dk;
    let mut warnings = Vec::new();
    if log_correction {
        warnings.push(format!(
            "2 alpha / zeta = {ratio2} is an integer; exponents omit logarithmic corrections"
        ));
    }
    if theta_only {
        warnings.push("gamma = 1/2: the expectation formula gives only the order".into());
    }
    if !clt_applicable {
        warnings.push(format!("alpha / zeta = {ratio1} does not exceed d_(k) = {dk}; no full-count CLT"));
    }
    if !matches!(params.radius_rule, RadiusRule::Thermodynamic { .. }) {
        warnings.push("exponents refer to the thermodynamic radius rule".into());
    }
    RegimeReport {
        ratio_2alpha_zeta: ratio2,
        ratio_alpha_zeta: ratio1,
        two_alpha_zeta_above_max_degree: ratio2 > dk,
        alpha_zeta_above_max_degree: ratio1 > dk,
        two_alpha_zeta_above_one: ratio2 > 1.0,
        two_alpha_zeta_at_most_one: ratio2 <= 1.0,
        phase,
        expectation_exponent: expectation_exponent(tree, params),
        variance_lower_exponents: variance_lower_exponents(tree, params),
        clt_applicable,
        log_correction,
        theta_only,
        warnings,
    }
}

/// Inputs to [`stein_bounds`].
///
/// `c3` is `\int E|D_x F|^3 lambda(dx)`. The `q` entries are the full `lambda`-integrals
/// `\int [P(D^2_{x1,x3} != 0) P(D^2_{x2,x3} != 0)]^{1/20} lambda^3`, the same with power `1/10`,
/// and `\int P(D^2_{x1,x2} != 0)^{1/10} lambda^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinInputs {
    pub variance: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub lambda_total: f64,
    pub q: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinBounds {
    pub w: [f64; 6],
    /// `W1 + W2 + W3`.
    pub wasserstein: f64,
    /// `W1 + .. + W6`.
    pub kolmogorov: f64,
}

pub fn stein_bounds(inp: &SteinInputs) -> Result<SteinBounds> {
    let SteinInputs { variance: v, c1, c2, c3, lambda_total: lam, q } = *inp;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParams(format!("variance must be positive, got {v}")));
    }
    if [c1, c2, c3, lam, q[0], q[1], q[2]].iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParams("moment and integral inputs must be nonnegative".into()));
    }
    let c12 = (c1 * c2).powf(0.2);
    let c2_25 = c2.powf(0.4);
    let w1 = 2.0 * c12 / v * q[0].sqrt();
    let w2 = c2_25 / v * q[1].sqrt();
    let w3 = c3 / v.powf(1.5);
    let w4 = c1.powf(0.6) * lam / v.powf(1.5)
        + (c1.powf(0.8) * lam.powf(1.25) + 2.0 * c1.powf(0.8) * lam.powf(1.5)) / (v * v);
    let w5 = c1.powf(0.4) * lam.sqrt() / v;
    let w6 = (6f64.sqrt() * c12 + 3f64.sqrt() * c2_25) / v * q[2].sqrt();
    let w = [w1, w2, w3, w4, w5, w6];
    Ok(SteinBounds { w, wasserstein: w1 + w2 + w3, kolmogorov: w.iter().sum() })
}

/// `E S^{(gamma)}` evaluated without asymptotics: `n^k` times the integral over depths
/// `[0, gamma R]^k` of `prod_i bar rho(t_i) prod_{ij in E} p(t_i, t_j)`, where `p` is the exact
/// connection probability. Relative angles along a tree are independent, which makes the integral
/// a product of one-dimensional kernels, evaluated by a tree recursion on a Gauss–Legendre grid.
pub fn expected_subtree_exact(tree: &TreeSpec, params: &ModelParams, radius: f64) -> Result<f64> {
    check_tree_dim(tree, params)?;
    let upper = params.gamma * radius;
    let law = RadialDepthLaw::new(params.d, params.alpha, radius);
    let panels = ((upper / 0.25).ceil() as usize).clamp(16, 400);
    let (ts, ws) = composite_grid(0.0, upper, panels, 12);
    let m = ts.len();
    let weight: Vec<f64> = ts.iter().zip(&ws).map(|(&t, &w)| w * law.density(t)).collect();
    let kernel: Vec<f64> = (0..m * m)
        .map(|ij| connection_probability_exact(ts[ij / m], ts[ij % m], radius, params.d, params.zeta))
        .collect();
    // message[v][i]: integral over the subtree below v given t_v = ts[i], excluding v's own weight
    fn message(tree: &TreeSpec, v: usize, parent: usize, kernel: &[f64], weight: &[f64], m: usize) -> Vec<f64> {
        let mut acc = vec![1.0; m];
        for &c in tree.neighbors(v) {
            if c == parent {
                continue;
            }
            let child = message(tree, c, v, kernel, weight, m);
            let mass: Vec<f64> = child.iter().zip(weight).map(|(a, w)| a * w).collect();
            for (i, a) in acc.iter_mut().enumerate() {
                *a *= kernel[i * m..(i + 1) * m].iter().zip(&mass).map(|(p, x)| p * x).sum::<f64>();
            }
        }
        acc
    }
    let root = message(tree, 0, usize::MAX, &kernel, &weight, m);
    let integral: f64 = root.iter().zip(&weight).map(|(a, w)| a * w).sum();
    Ok(integral * params.n.powi(tree.k() as i32))
}
