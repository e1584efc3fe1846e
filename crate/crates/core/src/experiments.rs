//! Monte Carlo harness: replicate clouds, count trees, compare with theory.
//!
//! Every replicate draws from its own [`RngStream`] keyed by `(master_seed, grid index, replicate)`,
//! results are collected in replicate order and all floating-point reductions run sequentially
//! afterwards, so a configuration and seed reproduce the same output on any number of threads.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::census::{add_one_cost, count_tree_embeddings, second_difference, TreeSpec};
use crate::error::{Error, Result};
use crate::geometry::{connection_probability_exact, HyperbolicPoint, RadialDepthLaw};
use crate::graph::{build_euclidean_graph, build_hyperbolic_graph, hyperbolic_connected};
use crate::params::{ModelParams, RadiusRule};
use crate::rng::{replicate_stream, RngStream};
use crate::sampling::{sample_euclidean_cloud, sample_point_cloud_from, AngleSampler, PointCloud};
use crate::stats::{ks_p_value, ks_statistic_normal, log_log_fit, mean, sample_variance, standardize, LinearFit};
use crate::theory::{
    expectation_exponent, expected_subtree_asymptotic, expected_subtree_exact, expected_subtree_full,
    regime_classify, stein_bounds, variance_orders, SteinBounds, SteinInputs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Expectation,
    Variance,
    Clt,
    Palm,
    EuclidBaseline,
    Stein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EuclidRegime {
    /// Connection radius equal to the ball radius.
    Dense,
    /// Connection radius `n^{-1/d}` times the ball radius.
    Thermodynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuclidConfig {
    pub regime: EuclidRegime,
    #[serde(default = "one")]
    pub ball_radius: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmConfig {
    /// iid tuples for the right-hand side.
    pub iid_draws: usize,
    /// Intensity of the second-moment check; skipped when absent.
    #[serde(default)]
    pub second_moment_n: Option<f64>,
}

impl Default for PalmConfig {
    fn default() -> Self {
        Self { iid_draws: 1_000_000, second_moment_n: Some(30.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinConfig {
    /// Depths `i gamma R / (depth_levels - 1)` used for the suprema.
    pub depth_levels: usize,
    /// Random directions per depth level.
    pub angle_samples: usize,
    /// Clouds averaged over for each expectation.
    pub cloud_samples: usize,
    /// Points or tuples drawn for each of the integrals.
    pub integral_samples: usize,
}

impl Default for SteinConfig {
    fn default() -> Self {
        Self { depth_levels: 5, angle_samples: 3, cloud_samples: 40, integral_samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `params.n` is ignored; the intensities come from `n_grid`.
    pub params: ModelParams,
    pub tree: TreeSpec,
    pub replicates: usize,
    pub n_grid: Vec<f64>,
    pub master_seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub euclid: Option<EuclidConfig>,
    #[serde(default)]
    pub palm: Option<PalmConfig>,
    #[serde(default)]
    pub stein: Option<SteinConfig>,
    /// Also evaluate the semi-analytic exact expectation at every grid point.
    #[serde(default)]
    pub exact_theory: bool,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, tree: TreeSpec, mode: Mode, n_grid: Vec<f64>, replicates: usize, master_seed: u64) -> Self {
        Self { params, tree, replicates, n_grid, master_seed, mode, euclid: None, palm: None, stein: None, exact_theory: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_grid.is_empty() {
            return Err(Error::InvalidParams("n_grid is empty".into()));
        }
        for &n in &self.n_grid {
            self.params.with_n(n)?;
        }
        if self.replicates < 1 {
            return Err(Error::InvalidParams("need at least one replicate".into()));
        }
        if matches!(self.mode, Mode::Variance | Mode::Clt | Mode::Stein) && self.replicates < 2 {
            return Err(Error::InvalidParams(format!("{:?} mode needs at least two replicates", self.mode)));
        }
        if self.mode == Mode::EuclidBaseline && self.euclid.is_none() {
            return Err(Error::InvalidParams("euclid-baseline mode needs an `euclid` section".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NRecord {
    pub n: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub mc_mean: f64,
    pub mc_variance: f64,
    /// Sample standard deviation over `sqrt(replicates)`.
    pub std_error: f64,
    pub theory_value: Option<f64>,
    /// `mc_mean / theory_value` (`mc_variance / theory_value` in variance mode).
    pub ratio: Option<f64>,
    #[serde(default)]
    pub exact_value: Option<f64>,
    pub count_replicates: usize,
    pub counts: Vec<u128>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRecord {
    pub n: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub standardized_samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentComparison {
    pub lhs: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub z: f64,
}

impl MomentComparison {
    fn new(lhs: f64, lhs_std_error: f64, rhs: f64, rhs_std_error: f64) -> Self {
        let se = (lhs_std_error.powi(2) + rhs_std_error.powi(2)).sqrt();
        Self { lhs, lhs_std_error, rhs, rhs_std_error, z: (lhs - rhs) / se }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmRecord {
    pub n: f64,
    /// `E S` against `n^k E g(X_1..X_k)`.
    pub first_moment: MomentComparison,
    /// Annulus point count against `n P(T <= gamma R)`; the right side is exact.
    pub point_count: MomentComparison,
    /// `E S^2` against its decomposition over overlap patterns.
    pub second_moment: Option<MomentComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinRecord {
    pub n: f64,
    pub inputs: SteinInputs,
    pub bounds: SteinBounds,
    pub empirical_ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub records: Vec<NRecord>,
    #[serde(default)]
    pub clt: Option<Vec<CltRecord>>,
    #[serde(default)]
    pub palm: Option<Vec<PalmRecord>>,
    #[serde(default)]
    pub stein: Option<Vec<SteinRecord>>,
    pub fitted_exponent: Option<LinearFit>,
    /// Exponent the fitted slope should approach, where one is known.
    pub expected_exponent: Option<f64>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl ExperimentResult {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            mode: cfg.mode,
            records: Vec::new(),
            clt: None,
            palm: None,
            stein: None,
            fitted_exponent: None,
            expected_exponent: None,
            warnings: Vec::new(),
            provenance: Provenance {
                config_hash: cfg.hash(),
                master_seed: cfg.master_seed,
                library_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    /// CSV with header `n,R,mc_mean,mc_var,std_err,theory,ratio`; missing values are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,R,mc_mean,mc_var,std_err,theory,ratio")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n,
                r.radius,
                r.mc_mean,
                r.mc_variance,
                r.std_error,
                opt(r.theory_value),
                opt(r.ratio)
            )?;
        }
        Ok(())
    }

    /// CSV `n,replicate,z` of the standardized CLT samples.
    pub fn write_standardized_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,replicate,z")?;
        for rec in self.clt.iter().flatten() {
            for (i, z) in rec.standardized_samples.iter().enumerate() {
                writeln!(w, "{},{i},{z}", rec.n)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Stream indices outside the replicate range, for auxiliary draws.
fn aux_stream(purpose: u64, grid_index: usize, chunk: usize) -> u64 {
    (purpose << 56) | ((grid_index as u64) << 32) | chunk as u64
}

fn cloud_for(params: &ModelParams, seed: u64, stream: u64) -> Result<PointCloud> {
    let cloud = sample_point_cloud_from(params, &mut RngStream::new(seed, stream))?;
    if params.gamma < 1.0 {
        cloud.restrict(params.gamma)
    } else {
        Ok(cloud)
    }
}

/// Tree counts for `replicates` independent clouds at one grid point, in replicate order. With
/// `gamma < 1` the cloud is cut to the annulus before the graph is built.
pub fn replicate_counts(params: &ModelParams, tree: &TreeSpec, seed: u64, grid_index: usize, replicates: usize) -> Result<Vec<u128>> {
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let cloud = cloud_for(params, seed, replicate_stream(grid_index, rep))?;
            count_tree_embeddings(&build_hyperbolic_graph(&cloud), tree, None)
        })
        .collect()
}

fn summarize(n: f64, radius: f64, counts: Vec<u128>) -> NRecord {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = mean(&xs);
    let v = if xs.len() > 1 { sample_variance(&xs) } else { 0.0 };
    NRecord {
        n,
        radius,
        mc_mean: m,
        mc_variance: v,
        std_error: (v / xs.len() as f64).sqrt(),
        theory_value: None,
        ratio: None,
        exact_value: None,
        count_replicates: xs.len(),
        counts,
    }
}

fn ratio(value: f64, theory: Option<f64>) -> Option<f64> {
    theory.filter(|t| t.is_finite() && *t > 0.0).map(|t| value / t)
}

fn fit(records: &[NRecord], value: impl Fn(&NRecord) -> f64) -> Option<LinearFit> {
    if records.len() < 3 {
        return None;
    }
    let ns: Vec<f64> = records.iter().map(|r| r.n).collect();
    let ys: Vec<f64> = records.iter().map(value).collect();
    log_log_fit(&ns, &ys).ok()
}

/// Theory value for `E S^{(gamma)}` (annulus) or `E S` (full count, when its constant exists).
fn expectation_theory(cfg: &ExperimentConfig, p: &ModelParams, radius: f64) -> Option<f64> {
    if p.gamma < 1.0 {
        expected_subtree_asymptotic(&cfg.tree, p, radius).ok()
    } else {
        expected_subtree_full(&cfg.tree, p, radius).or_else(|_| expected_subtree_asymptotic(&cfg.tree, p, radius)).ok()
    }
}

pub fn run_expectation_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut out = ExperimentResult::new(cfg);
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let p = cfg.params.with_n(n)?;
        let radius = p.radius();
        let mut rec = summarize(n, radius, replicate_counts(&p, &cfg.tree, cfg.master_seed, g, cfg.replicates)?);
        rec.theory_value = expectation_theory(cfg, &p, radius);
        rec.ratio = ratio(rec.mc_mean, rec.theory_value);
        if cfg.exact_theory {
            rec.exact_value = expected_subtree_exact(&cfg.tree, &p, radius).ok();
        }
        out.records.push(rec);
    }
    out.fitted_exponent = fit(&out.records, |r| r.mc_mean);
    if matches!(cfg.params.radius_rule, RadiusRule::Thermodynamic { .. }) {
        out.expected_exponent = Some(expectation_exponent(&cfg.tree, &cfg.params));
    }
    let report = regime_classify(&cfg.tree, &cfg.params);
    if report.theta_only {
        out.warnings.push("gamma = 1/2: theory gives only the order".into());
    }
    Ok(out)
}

pub fn run_variance_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut out = ExperimentResult::new(cfg);
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let p = cfg.params.with_n(n)?;
        let radius = p.radius();
        let mut rec = summarize(n, radius, replicate_counts(&p, &cfg.tree, cfg.master_seed, g, cfg.replicates)?);
        let orders = variance_orders(&cfg.tree, &p, radius)?;
        rec.theory_value = Some(orders.exact_order_max().unwrap_or_else(|| orders.lower_bound()));
        rec.ratio = ratio(rec.mc_variance, rec.theory_value);
        out.records.push(rec);
    }
    out.fitted_exponent = fit(&out.records, |r| r.mc_variance);
    let report = regime_classify(&cfg.tree, &cfg.params);
    if matches!(cfg.params.radius_rule, RadiusRule::Thermodynamic { .. }) {
        out.expected_exponent = Some(if report.clt_applicable {
            1.0
        } else {
            report.variance_lower_exponents[0].max(report.variance_lower_exponents[1])
        });
    }
    if !report.clt_applicable {
        out.warnings.push("alpha / zeta <= d_(k): theory value is a lower bound".into());
    }
    Ok(out)
}

pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut out = ExperimentResult::new(cfg);
    let report = regime_classify(&cfg.tree, &cfg.params);
    if cfg.params.gamma >= 1.0 && !report.clt_applicable {
        out.warnings.push(format!(
            "alpha / zeta = {} does not exceed d_(k) = {}; the full-count CLT is not covered",
            report.ratio_alpha_zeta,
            cfg.tree.max_degree()
        ));
    }
    let mut clt = Vec::new();
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let p = cfg.params.with_n(n)?;
        let rec = summarize(n, p.radius(), replicate_counts(&p, &cfg.tree, cfg.master_seed, g, cfg.replicates)?);
        let xs: Vec<f64> = rec.counts.iter().map(|&c| c as f64).collect();
        let z = standardize(&xs)?;
        let ks = ks_statistic_normal(&z);
        clt.push(CltRecord { n, ks_statistic: ks, ks_p_value: ks_p_value(ks, z.len()), standardized_samples: z });
        out.records.push(rec);
    }
    out.clt = Some(clt);
    Ok(out)
}

/// Samples iid points from the depth law and uniform directions.
struct IidSampler {
    law: RadialDepthLaw,
    angles: AngleSampler,
    radius: f64,
}

impl IidSampler {
    fn new(p: &ModelParams) -> Self {
        let radius = p.radius();
        Self { law: RadialDepthLaw::new(p.d, p.alpha, radius), angles: AngleSampler::new(p.d), radius }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperbolicPoint {
        let t = self.law.sample(rng);
        HyperbolicPoint::from_depth(t, self.radius, self.angles.sample(rng))
    }
}

/// `g(x_1..x_k) = prod_i 1{t_i <= gamma R} prod_{ij in E} 1{x_i ~ x_j}`.
fn tree_indicator(tree: &TreeSpec, xs: &[HyperbolicPoint], p: &ModelParams, radius: f64) -> bool {
    let bound = p.gamma * radius;
    xs.iter().all(|x| x.t <= bound)
        && tree.edges().iter().all(|&(a, b)| hyperbolic_connected(&xs[a], &xs[b], radius, p.zeta))
}

const CHUNK: usize = 10_000;

/// Clouds used to estimate `P(D^2_{x,y} != 0)` in the Stein integrals for trees beyond an edge.
const STEIN_PROBE_CLOUDS: usize = 8;

/// Mean and standard error of `f` over `draws` evaluations, each on a fresh set of iid points,
/// chunked over auxiliary streams.
fn iid_mean<F>(seed: u64, purpose: u64, grid_index: usize, draws: usize, f: F) -> (f64, f64)
where
    F: Fn(&mut RngStream) -> f64 + Sync,
{
    let chunks = draws.div_ceil(CHUNK);
    let sums: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, aux_stream(purpose, grid_index, c));
            let len = CHUNK.min(draws - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let v = f(&mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2, len)
        })
        .collect();
    let (s, s2, m) = sums.iter().fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mf = m as f64;
    let mean = s / mf;
    let var = ((s2 - mf * mean * mean) / (mf - 1.0)).max(0.0);
    (mean, (var / mf).sqrt())
}

/// Ways two copies of a `k`-tuple can overlap: each entry maps a position of the second copy to
/// a position of the first, or to nothing. Only injective maps are listed.
pub fn overlap_patterns(k: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(k: usize, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(k, cur, out);
        cur.pop();
        for j in 0..k {
            if !cur.contains(&Some(j)) {
                cur.push(Some(j));
                rec(k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(k, &mut Vec::with_capacity(k), &mut out);
    out
}

pub fn run_palm_check(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let palm = cfg.palm.unwrap_or_default();
    let mut out = ExperimentResult::new(cfg);
    let k = cfg.tree.k();
    let mut records = Vec::new();
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let p = cfg.params.with_n(n)?;
        let radius = p.radius();
        let bound = p.gamma * radius;
        let per_rep: Vec<(u128, usize)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let cloud = cloud_for(&p, cfg.master_seed, replicate_stream(g, rep))?;
                let c = count_tree_embeddings(&build_hyperbolic_graph(&cloud), &cfg.tree, None)?;
                Ok((c, cloud.len()))
            })
            .collect::<Result<_>>()?;
        let rec = summarize(n, radius, per_rep.iter().map(|x| x.0).collect());

        let sampler = IidSampler::new(&p);
        let (g_mean, g_se) = iid_mean(cfg.master_seed, 1, g, palm.iid_draws, |rng| {
            let xs: Vec<HyperbolicPoint> = (0..k).map(|_| sampler.draw(rng)).collect();
            tree_indicator(&cfg.tree, &xs, &p, radius) as u8 as f64
        });
        let nk = n.powi(k as i32);
        let first_moment = MomentComparison::new(rec.mc_mean, rec.std_error, nk * g_mean, nk * g_se);

        let pts: Vec<f64> = per_rep.iter().map(|x| x.1 as f64).collect();
        let point_count = MomentComparison::new(
            mean(&pts),
            (sample_variance(&pts) / pts.len() as f64).sqrt(),
            n * sampler.law.cdf(bound),
            0.0,
        );
        records.push((rec, first_moment, point_count));
    }

    let second = match palm.second_moment_n {
        Some(n2) => Some(second_moment_check(cfg, n2, palm.iid_draws)?),
        None => None,
    };
    let mut palm_records = Vec::new();
    for (i, (rec, first_moment, point_count)) in records.into_iter().enumerate() {
        palm_records.push(PalmRecord {
            n: rec.n,
            first_moment,
            point_count,
            second_moment: if i == 0 { second } else { None },
        });
        out.records.push(rec);
    }
    out.palm = Some(palm_records);
    Ok(out)
}

/// `E S^2` by simulation against `sum_patterns n^{2k-p} E[g(x) g(y)]`, where `y` reuses the points
/// of `x` named by the overlap pattern and `p` is the number of shared points.
fn second_moment_check(cfg: &ExperimentConfig, n: f64, draws: usize) -> Result<MomentComparison> {
    let p = cfg.params.with_n(n)?;
    let radius = p.radius();
    let k = cfg.tree.k();
    let grid = cfg.n_grid.len();
    let squares: Vec<f64> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let cloud = cloud_for(&p, cfg.master_seed, replicate_stream(grid, rep))?;
            let c = count_tree_embeddings(&build_hyperbolic_graph(&cloud), &cfg.tree, None)? as f64;
            Ok(c * c)
        })
        .collect::<Result<_>>()?;
    let lhs = mean(&squares);
    let lhs_se = (sample_variance(&squares) / squares.len() as f64).sqrt();

    let sampler = IidSampler::new(&p);
    let (mut rhs, mut rhs_var) = (0.0, 0.0);
    for (idx, pattern) in overlap_patterns(k).iter().enumerate() {
        let shared = pattern.iter().filter(|x| x.is_some()).count();
        let (m, se) = iid_mean(cfg.master_seed, 2, idx, draws, |rng| {
            let xs: Vec<HyperbolicPoint> = (0..k).map(|_| sampler.draw(rng)).collect();
            if !tree_indicator(&cfg.tree, &xs, &p, radius) {
                return 0.0;
            }
            let ys: Vec<HyperbolicPoint> =
                pattern.iter().map(|slot| slot.map_or_else(|| sampler.draw(rng), |j| xs[j].clone())).collect();
            tree_indicator(&cfg.tree, &ys, &p, radius) as u8 as f64
        });
        let scale = n.powi((2 * k - shared) as i32);
        rhs += scale * m;
        rhs_var += (scale * se).powi(2);
    }
    Ok(MomentComparison::new(lhs, lhs_se, rhs, rhs_var.sqrt()))
}

pub fn run_euclidean_baseline(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let eu = cfg.euclid.expect("validated");
    let d = cfg.params.d;
    let mut out = ExperimentResult::new(cfg);
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let s = match eu.regime {
            EuclidRegime::Dense => eu.ball_radius,
            EuclidRegime::Thermodynamic => n.powf(-1.0 / d as f64) * eu.ball_radius,
        };
        let counts: Vec<u128> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = RngStream::new(cfg.master_seed, replicate_stream(g, rep));
                let cloud = sample_euclidean_cloud(n, eu.ball_radius, d, &mut rng);
                count_tree_embeddings(&build_euclidean_graph(&cloud, s)?, &cfg.tree, None)
            })
            .collect::<Result<_>>()?;
        out.records.push(summarize(n, eu.ball_radius, counts));
    }
    out.fitted_exponent = fit(&out.records, |r| r.mc_mean);
    out.expected_exponent = Some(match eu.regime {
        EuclidRegime::Dense => cfg.tree.k() as f64,
        EuclidRegime::Thermodynamic => 1.0,
    });
    Ok(out)
}

/// Reference points at depths `i gamma R / (levels - 1)` with random directions.
fn depth_grid(p: &ModelParams, sc: &SteinConfig, rng: &mut RngStream) -> Vec<HyperbolicPoint> {
    let radius = p.radius();
    let angles = AngleSampler::new(p.d);
    let levels = sc.depth_levels.max(2);
    (0..levels)
        .flat_map(|i| {
            let t = p.gamma * radius * i as f64 / (levels - 1) as f64;
            (0..sc.angle_samples.max(1)).map(move |_| t).collect::<Vec<_>>()
        })
        .map(|t| HyperbolicPoint::from_depth(t, radius, angles.sample(rng)))
        .collect()
}

pub fn run_stein_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sc = cfg.stein.unwrap_or_default();
    let mut out = ExperimentResult::new(cfg);
    let mut stein = Vec::new();
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let p = cfg.params.with_n(n)?;
        let radius = p.radius();
        let clouds: Vec<PointCloud> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| cloud_for(&p, cfg.master_seed, replicate_stream(g, rep)))
            .collect::<Result<_>>()?;
        let graphs: Vec<_> = clouds.par_iter().map(build_hyperbolic_graph).collect();
        let counts: Vec<u128> = graphs
            .par_iter()
            .map(|gr| count_tree_embeddings(gr, &cfg.tree, None))
            .collect::<Result<_>>()?;
        let rec = summarize(n, radius, counts);
        if clouds.iter().all(PointCloud::is_empty) || !(rec.mc_variance > 0.0) {
            out.warnings.push(format!("n = {n}: empty clouds or zero variance, bounds skipped"));
            out.records.push(rec);
            continue;
        }
        let xs: Vec<f64> = rec.counts.iter().map(|&c| c as f64).collect();
        let empirical_ks = ks_statistic_normal(&standardize(&xs)?);

        let used = sc.cloud_samples.min(clouds.len()).max(1);
        let pairs: Vec<(&PointCloud, &crate::graph::Graph)> = clouds.iter().zip(&graphs).take(used).collect();
        let mut rng = RngStream::new(cfg.master_seed, aux_stream(3, g, 0));
        let refs = depth_grid(&p, &sc, &mut rng);

        // c1: largest fifth moment of D_x over the reference points
        let c1 = refs
            .par_iter()
            .map(|x| -> Result<f64> {
                let mut acc = 0.0;
                for (cl, gr) in &pairs {
                    acc += (add_one_cost(gr, cl, x, &cfg.tree, p.gamma)? as f64).powi(5);
                }
                Ok(acc / pairs.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);

        // c2: largest fifth moment of D^2 over pairs of reference points, plus near-coincident pairs
        let mut ref_pairs: Vec<(HyperbolicPoint, HyperbolicPoint)> = Vec::new();
        for (i, x) in refs.iter().enumerate() {
            for y in &refs[i + 1..] {
                if !x.coincides_with(y) {
                    ref_pairs.push((x.clone(), y.clone()));
                }
            }
            let mut near = x.angles.clone();
            *near.last_mut().unwrap() += 1e-3;
            ref_pairs.push((x.clone(), HyperbolicPoint::from_depth(x.t, radius, near)));
        }
        let c2 = ref_pairs
            .par_iter()
            .map(|(x, y)| -> Result<f64> {
                let mut acc = 0.0;
                for (cl, gr) in &pairs {
                    acc += (second_difference(gr, cl, x, y, &cfg.tree, p.gamma)? as f64).powi(5);
                }
                Ok(acc / pairs.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);

        // integrals against lambda restricted to the annulus, where every difference operator lives
        let law = RadialDepthLaw::new(p.d, p.alpha, radius);
        let mass = law.cdf(p.gamma * radius);
        let lambda_total = n * mass;
        let sampler = IidSampler::new(&p);
        let annulus_draw = |rng: &mut RngStream| loop {
            let x = sampler.draw(rng);
            if x.t <= p.gamma * radius {
                return x;
            }
        };
        let m = sc.integral_samples.max(2);
        let mut rng = RngStream::new(cfg.master_seed, aux_stream(4, g, 0));
        let c3_points: Vec<(HyperbolicPoint, usize)> =
            (0..m).map(|i| (annulus_draw(&mut rng), i % pairs.len())).collect();
        let cubes: Vec<f64> = c3_points
            .par_iter()
            .map(|(x, j)| Ok((add_one_cost(pairs[*j].1, pairs[*j].0, x, &cfg.tree, p.gamma)? as f64).powi(3)))
            .collect::<Result<_>>()?;
        let c3 = lambda_total * mean(&cubes);

        let lam3 = lambda_total.powi(3);
        let q = if cfg.tree.k() == 2 {
            // D^2_{x,y} of the edge count is 2 1{x ~ y}, so given the depths each probability is
            // the connection kernel and angles can be integrated out exactly
            let terms: Vec<(f64, f64)> = (0..m)
                .map(|_| {
                    let [a, b, c] = [annulus_draw(&mut rng), annulus_draw(&mut rng), annulus_draw(&mut rng)];
                    let kern = |u: &HyperbolicPoint, v: &HyperbolicPoint| {
                        connection_probability_exact(u.t, v.t, radius, p.d, p.zeta)
                    };
                    (kern(&a, &c) * kern(&b, &c), kern(&a, &b))
                })
                .collect();
            let pair = mean(&terms.iter().map(|t| t.0).collect::<Vec<_>>());
            [lam3 * pair, lam3 * pair, lambda_total.powi(2) * mean(&terms.iter().map(|t| t.1).collect::<Vec<_>>())]
        } else {
            let probe = &pairs[..pairs.len().min(STEIN_PROBE_CLOUDS)];
            let nonzero = |x: &HyperbolicPoint, y: &HyperbolicPoint| -> Result<f64> {
                if x.coincides_with(y) {
                    return Ok(0.0);
                }
                let mut hits = 0usize;
                for (cl, gr) in probe {
                    hits += (second_difference(gr, cl, x, y, &cfg.tree, p.gamma)? > 0) as usize;
                }
                Ok(hits as f64 / probe.len() as f64)
            };
            let triples: Vec<[HyperbolicPoint; 3]> =
                (0..m).map(|_| [annulus_draw(&mut rng), annulus_draw(&mut rng), annulus_draw(&mut rng)]).collect();
            let terms: Vec<(f64, f64, f64)> = triples
                .par_iter()
                .map(|[a, b, c]| {
                    let prod = nonzero(a, c)? * nonzero(b, c)?;
                    Ok((prod.powf(0.05), prod.powf(0.1), nonzero(a, b)?.powf(0.1)))
                })
                .collect::<Result<_>>()?;
            [
                lam3 * mean(&terms.iter().map(|t| t.0).collect::<Vec<_>>()),
                lam3 * mean(&terms.iter().map(|t| t.1).collect::<Vec<_>>()),
                lambda_total.powi(2) * mean(&terms.iter().map(|t| t.2).collect::<Vec<_>>()),
            ]
        };
        let inputs = SteinInputs { variance: rec.mc_variance, c1, c2, c3, lambda_total, q };
        let bounds = stein_bounds(&inputs)?;
        stein.push(SteinRecord { n, inputs, bounds, empirical_ks });
        out.records.push(rec);
    }
    out.stein = Some(stein);
    Ok(out)
}

/// Dispatches on [`ExperimentConfig::mode`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.mode {
        Mode::Expectation => run_expectation_experiment(cfg),
        Mode::Variance => run_variance_experiment(cfg),
        Mode::Clt => run_clt_experiment(cfg),
        Mode::Palm => run_palm_check(cfg),
        Mode::EuclidBaseline => run_euclidean_baseline(cfg),
        Mode::Stein => run_stein_experiment(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Mode, alpha: f64, gamma: f64, grid: Vec<f64>, reps: usize) -> ExperimentConfig {
        let params = ModelParams::new(2, alpha, 1.0, grid[0], RadiusRule::Thermodynamic { nu: 1.0 })
            .unwrap()
            .with_gamma(gamma)
            .unwrap();
        ExperimentConfig::new(params, TreeSpec::edge(), mode, grid, reps, 7)
    }

    #[test]
    fn validation() {
        assert!(cfg(Mode::Variance, 2.0, 1.0, vec![100.0], 1).validate().is_err());
        let mut c = cfg(Mode::Expectation, 2.0, 1.0, vec![100.0], 1);
        c.n_grid.clear();
        assert!(c.validate().is_err());
        assert!(cfg(Mode::EuclidBaseline, 2.0, 1.0, vec![100.0], 3).validate().is_err());
        let mut c = cfg(Mode::Expectation, 2.0, 1.0, vec![100.0], 3);
        c.n_grid.push(0.5);
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = cfg(Mode::Expectation, 2.0, 1.0, vec![100.0], 3);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn tiny_intensity_is_finite() {
        let r = run_expectation_experiment(&cfg(Mode::Expectation, 2.0, 1.0, vec![5.0], 20)).unwrap();
        let rec = &r.records[0];
        assert!(rec.mc_mean.is_finite() && rec.mc_mean >= 0.0);
        assert!(rec.ratio.is_none_or(|x| x.is_finite()));
        assert_eq!(rec.count_replicates, 20);
    }

    #[test]
    fn std_error_from_dispersion() {
        let r = run_expectation_experiment(&cfg(Mode::Expectation, 2.0, 1.0, vec![200.0], 30)).unwrap();
        let rec = &r.records[0];
        let xs: Vec<f64> = rec.counts.iter().map(|&c| c as f64).collect();
        assert_eq!(rec.std_error, (sample_variance(&xs) / 30.0).sqrt());
        assert_eq!(rec.ratio.unwrap(), rec.mc_mean / rec.theory_value.unwrap());
    }

    #[test]
    fn annulus_path_with_gamma_one_is_full_count() {
        let c = cfg(Mode::Expectation, 1.2, 1.0, vec![300.0], 4);
        let p = c.params.with_n(300.0).unwrap();
        let annulus = replicate_counts(&p, &c.tree, 7, 0, 4).unwrap();
        let full: Vec<u128> = (0..4)
            .map(|rep| {
                let cloud = sample_point_cloud_from(&p, &mut RngStream::new(7, replicate_stream(0, rep))).unwrap();
                let g = build_hyperbolic_graph(&cloud);
                count_tree_embeddings(&g, &c.tree, Some(1.0)).unwrap()
            })
            .collect();
        assert_eq!(annulus, full);
    }

    #[test]
    fn constant_sample_is_rejected() {
        // with a vanishing intensity every replicate counts zero
        let params = ModelParams::new(2, 2.0, 1.0, 1e-9, RadiusRule::Explicit { radius: 3.0 }).unwrap();
        let c = ExperimentConfig::new(params, TreeSpec::edge(), Mode::Clt, vec![1e-9], 10, 1);
        assert!(matches!(run_clt_experiment(&c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn overlap_pattern_counts() {
        // sum over p of C(k,p)^2 p!
        assert_eq!(overlap_patterns(2).len(), 7);
        assert_eq!(overlap_patterns(3).len(), 34);
    }

    #[test]
    fn csv_layout() {
        let r = run_expectation_experiment(&cfg(Mode::Expectation, 2.0, 1.0, vec![50.0, 80.0], 3)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,R,mc_mean,mc_var,std_err,theory,ratio");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 7);
        let json = r.to_json().unwrap();
        let back: ExperimentResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(json.contains("config_hash") && json.contains("library_version"));
    }
}
