//! Seeded Poisson point clouds on the hyperbolic ball and in Euclidean balls.
//!
//! A hyperbolic cloud has a Poisson(`n`) number of points. Each point has an independent depth
//! drawn by inverting the exact radial CDF, and independent angles from the uniform law on the
//! sphere. Clouds are immutable once built and can be regenerated bit for bit from
//! `(params, seed, stream)`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HyperbolicPoint, RadialDepthLaw};
use crate::params::ModelParams;
use crate::rng::RngStream;

/// A Poisson(`n`) draw.
pub fn sample_point_count<R: Rng + ?Sized>(n: f64, rng: &mut R) -> u64 {
    assert!(n > 0.0, "intensity must be positive");
    let draw: f64 = Poisson::new(n).expect("positive finite mean").sample(rng);
    draw as u64
}

impl RadialDepthLaw {
    /// One depth `t = R - r` by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

/// One depth `t = R - r`, where `r` has density proportional to `sinh^{d-1}(alpha r)` on `[0, R]`.
pub fn sample_radial_depth<R: Rng + ?Sized>(params: &ModelParams, radius: f64, rng: &mut R) -> f64 {
    RadialDepthLaw::new(params.d, params.alpha, radius).sample(rng)
}

/// Samplers for the spherical angles; `theta_i` has density proportional to
/// `sin^{d-i-1}(theta)` on `[0, pi]` and the last angle is uniform on `[0, 2 pi)`.
#[derive(Debug, Clone)]
pub struct AngleSampler {
    polar: Vec<Option<Beta<f64>>>,
}

impl AngleSampler {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2, "dimension must be at least 2");
        let polar = (1..=d - 2)
            .map(|i| {
                let m = (d - i - 1) as f64;
                // cos(theta) = 1 - 2V with V ~ Beta((m+1)/2, (m+1)/2) has density sin^m on [0, pi]
                if m == 0.0 {
                    None
                } else {
                    Some(Beta::new((m + 1.0) / 2.0, (m + 1.0) / 2.0).expect("positive shape"))
                }
            })
            .collect();
        Self { polar }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.polar.len() + 1);
        for beta in &self.polar {
            let theta = match beta {
                Some(b) => {
                    let v: f64 = b.sample(rng);
                    (1.0 - 2.0 * v).clamp(-1.0, 1.0).acos()
                }
                None => rng.random::<f64>() * PI,
            };
            out.push(theta);
        }
        out.push(rng.random::<f64>() * 2.0 * PI);
        out
    }
}

pub fn sample_angles<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    AngleSampler::new(d).sample(rng)
}

/// A realized Poisson point cloud in the hyperbolic ball of radius `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub params: ModelParams,
    pub radius: f64,
    pub points: Vec<HyperbolicPoint>,
    pub seed: u64,
    pub stream: u64,
    /// Set when the cloud holds only points of depth at most `gamma * radius`.
    pub annulus_gamma: Option<f64>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    /// Points with depth `t <= gamma * radius`, in their original order.
    pub fn restrict(&self, gamma: f64) -> Result<PointCloud> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParams(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if gamma == 1.0 {
            return Ok(self.clone());
        }
        let bound = gamma * self.radius;
        let points = self.points.iter().filter(|p| p.t <= bound).cloned().collect();
        let gamma = match self.annulus_gamma {
            Some(g) => g.min(gamma),
            None => gamma,
        };
        Ok(PointCloud { points, annulus_gamma: Some(gamma), ..self.clone_meta() })
    }

    /// Copy of the cloud with extra points appended at the end.
    pub fn with_points(&self, extra: &[HyperbolicPoint]) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(extra);
        PointCloud { points, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> PointCloud {
        PointCloud {
            params: self.params,
            radius: self.radius,
            points: Vec::new(),
            seed: self.seed,
            stream: self.stream,
            annulus_gamma: self.annulus_gamma,
        }
    }

    /// CSV with header `t,theta_1,...,theta_{d-1}`, one row per point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..self.d()).map(|i| format!("theta_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for p in &self.points {
            write!(w, "{}", p.t)?;
            for a in &p.angles {
                write!(w, ",{a}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn metadata(&self) -> CloudMetadata {
        CloudMetadata {
            params: self.params,
            seed: self.seed,
            stream: self.stream,
            radius: self.radius,
            annulus_gamma: self.annulus_gamma,
            num_points: self.points.len(),
        }
    }

    /// Rebuilds a cloud from its CSV rows and JSON sidecar.
    pub fn read_csv<B: BufRead>(meta: &CloudMetadata, reader: B) -> Result<PointCloud> {
        let d = meta.params.d;
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty point file".into()))??;
        if header.split(',').count() != d {
            return Err(Error::Parse(format!("header `{header}` does not have {d} columns")));
        }
        let mut points = Vec::with_capacity(meta.num_points);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))?;
            if vals.len() != d {
                return Err(Error::Parse(format!("row {} has {} columns", lineno + 2, vals.len())));
            }
            points.push(HyperbolicPoint::from_depth(vals[0], meta.radius, vals[1..].to_vec()));
        }
        Ok(PointCloud {
            params: meta.params,
            radius: meta.radius,
            points,
            seed: meta.seed,
            stream: meta.stream,
            annulus_gamma: meta.annulus_gamma,
        })
    }
}

/// JSON sidecar for a point-cloud CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMetadata {
    pub params: ModelParams,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(default)]
    pub annulus_gamma: Option<f64>,
    pub num_points: usize,
}

/// Cloud for `params` drawn from stream 0 of `seed`.
pub fn sample_point_cloud(params: &ModelParams, seed: u64) -> Result<PointCloud> {
    sample_point_cloud_from(params, &mut RngStream::new(seed, 0))
}

/// Cloud for `params` drawn from an explicit stream.
pub fn sample_point_cloud_from(params: &ModelParams, rng: &mut RngStream) -> Result<PointCloud> {
    params.validate()?;
    let radius = params.radius();
    let law = RadialDepthLaw::new(params.d, params.alpha, radius);
    let angles = AngleSampler::new(params.d);
    let count = sample_point_count(params.n, rng);
    let points = (0..count)
        .map(|_| {
            let t = law.sample(rng);
            HyperbolicPoint::from_depth(t, radius, angles.sample(rng))
        })
        .collect();
    Ok(PointCloud {
        params: *params,
        radius,
        points,
        seed: rng.master_seed(),
        stream: rng.stream_index(),
        annulus_gamma: None,
    })
}

/// Poisson(`n`) points uniform in the Euclidean `d`-ball of radius `ball_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanCloud {
    pub d: usize,
    pub ball_radius: f64,
    pub points: Vec<Vec<f64>>,
}

impl EuclideanCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn sample_euclidean_cloud<R: Rng + ?Sized>(n: f64, ball_radius: f64, d: usize, rng: &mut R) -> EuclideanCloud {
    assert!(ball_radius > 0.0 && d >= 1);
    let count = sample_point_count(n, rng);
    let points = (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u: f64 = rng.random();
            let scale = ball_radius * u.powf(1.0 / d as f64) / norm;
            v.iter_mut().for_each(|x| *x *= scale);
            v
        })
        .collect();
    EuclideanCloud { d, ball_radius, points }
}
