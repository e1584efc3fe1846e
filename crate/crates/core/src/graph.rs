//! Random geometric graphs on hyperbolic and Euclidean point clouds, stored in CSR form.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{chord_sq, threshold_half_sin_sq, HyperbolicPoint};
use crate::params::ModelParams;
use crate::sampling::{EuclideanCloud, PointCloud};

/// Above this many vertices a two-dimensional cloud is built with the angular sweep.
pub const SWEEP_CROSSOVER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Hyperbolic,
    Euclidean,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Hyperbolic => "hyperbolic",
            Model::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Model::Hyperbolic),
            "euclidean" => Ok(Model::Euclidean),
            other => Err(Error::Parse(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildStrategy {
    /// Every pair tested.
    Naive,
    /// Two-dimensional angular sweep over radial bands.
    AngularSweep,
    /// Uniform grid of cells with side equal to the connection radius.
    Grid,
    /// Read back from an edge list.
    Loaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub model: Model,
    pub params: Option<ModelParams>,
    /// Hyperbolic: the sampling radius `R`. Euclidean: the ball radius.
    pub radius: f64,
    pub connection_radius: f64,
    pub strategy: BuildStrategy,
}

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    /// Depth `t` per vertex for hyperbolic graphs, Euclidean norm for Euclidean ones.
    pub vertex_payload: Vec<f64>,
    pub meta: BuildMeta,
}

impl Graph {
    /// Builds from a list of edges; duplicates and orientation are normalized, self-loops rejected.
    pub fn from_edges(num_vertices: usize, edges: &[(u32, u32)], payload: Vec<f64>, meta: BuildMeta) -> Result<Self> {
        let mut lists = vec![Vec::new(); num_vertices];
        for &(u, v) in edges {
            if u == v {
                return Err(Error::InvalidParams(format!("self-loop at vertex {u}")));
            }
            if u as usize >= num_vertices || v as usize >= num_vertices {
                return Err(Error::InvalidParams(format!("edge ({u}, {v}) out of range")));
            }
            lists[u as usize].push(v);
            lists[v as usize].push(u);
        }
        Ok(Self::from_lists(lists, payload, meta))
    }

    /// `lists[i]` may hold any subset of neighbors of `i` as long as each edge appears on at least
    /// one side; the result is symmetrized, sorted and deduplicated.
    fn from_upper_lists(upper: Vec<Vec<u32>>, payload: Vec<f64>, meta: BuildMeta) -> Self {
        let mut lists = upper.clone();
        for (i, ups) in upper.iter().enumerate() {
            for &j in ups {
                lists[j as usize].push(i as u32);
            }
        }
        Self::from_lists(lists, payload, meta)
    }

    fn from_lists(mut lists: Vec<Vec<u32>>, payload: Vec<f64>, meta: BuildMeta) -> Self {
        lists.par_iter_mut().for_each(|l| {
            l.sort_unstable();
            l.dedup();
        });
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        for l in &lists {
            offsets.push(offsets.last().unwrap() + l.len());
        }
        let neighbors = lists.into_iter().flatten().collect();
        Graph { offsets, neighbors, vertex_payload: payload, meta }
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_vertices()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_vertices()).flat_map(move |u| {
            self.neighbors(u).iter().filter(move |&&v| v as usize > u).map(move |&v| (u as u32, v))
        })
    }

    /// Checks symmetry, sortedness and absence of self-loops.
    pub fn check_invariants(&self) -> Result<()> {
        for u in 0..self.num_vertices() {
            let nb = self.neighbors(u);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParams(format!("adjacency of {u} not strictly sorted")));
            }
            for &v in nb {
                if v as usize == u {
                    return Err(Error::InvalidParams(format!("self-loop at {u}")));
                }
                if !self.has_edge(v as usize, u) {
                    return Err(Error::InvalidParams(format!("edge ({u}, {v}) not symmetric")));
                }
            }
        }
        Ok(())
    }

    /// Subgraph induced on `keep` (in the given order), relabeled `0..keep.len()`.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Graph {
        let mut relabel = vec![u32::MAX; self.num_vertices()];
        for (new, &old) in keep.iter().enumerate() {
            relabel[old] = new as u32;
        }
        let lists = keep
            .iter()
            .map(|&old| {
                self.neighbors(old)
                    .iter()
                    .filter_map(|&v| Some(relabel[v as usize]).filter(|&x| x != u32::MAX))
                    .collect()
            })
            .collect();
        let payload = keep.iter().map(|&v| self.vertex_payload.get(v).copied().unwrap_or(0.0)).collect();
        Self::from_lists(lists, payload, self.meta.clone())
    }

    /// Writes `# vertices=<N> R=<R> model=<model>` followed by one `u v` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# vertices={} R={} model={}", self.num_vertices(), self.meta.radius, self.meta.model)?;
        for (u, v) in self.edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Reads the format of [`Graph::write_edge_list`]. Vertex payloads are not stored and come
    /// back as zeros.
    pub fn read_edge_list<B: BufRead>(reader: B) -> Result<Graph> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge list".into()))??;
        let body = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse(format!("bad header `{header}`")))?;
        let mut vertices = None;
        let mut radius = None;
        let mut model = None;
        for field in body.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
            match key {
                "vertices" => vertices = Some(value.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
                "R" => radius = Some(value.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?),
                "model" => model = Some(value.parse::<Model>()?),
                _ => {}
            }
        }
        let (vertices, radius, model) = match (vertices, radius, model) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Parse(format!("incomplete header `{header}`"))),
        };
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(|s| s.parse::<u32>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => return Err(Error::Parse(format!("bad edge line `{line}`"))),
            }
        }
        let meta = BuildMeta { model, params: None, radius, connection_radius: radius, strategy: BuildStrategy::Loaded };
        Graph::from_edges(vertices, &edges, vec![0.0; vertices], meta)
    }
}

/// Whether two points are joined in the hyperbolic graph: `0 < d(a, b) <= radius`.
pub fn hyperbolic_connected(a: &HyperbolicPoint, b: &HyperbolicPoint, radius: f64, zeta: f64) -> bool {
    let c = chord_sq(&a.direction, &b.direction);
    if c == 0.0 && a.r == b.r {
        return false;
    }
    let s2 = threshold_half_sin_sq(a.r, b.r, radius, zeta);
    0.25 * c <= s2
}

/// Hyperbolic graph on a cloud, choosing the build strategy from dimension and size.
pub fn build_hyperbolic_graph(cloud: &PointCloud) -> Graph {
    let strategy = if cloud.d() == 2 && cloud.len() > SWEEP_CROSSOVER {
        BuildStrategy::AngularSweep
    } else {
        BuildStrategy::Naive
    };
    build_hyperbolic_graph_with(cloud, strategy).expect("strategy chosen to match the cloud")
}

/// Hyperbolic graph with an explicit build strategy.
pub fn build_hyperbolic_graph_with(cloud: &PointCloud, strategy: BuildStrategy) -> Result<Graph> {
    let zeta = cloud.params.zeta;
    let radius = cloud.radius;
    let upper = match strategy {
        BuildStrategy::Naive => naive_upper(&cloud.points, radius, zeta),
        BuildStrategy::AngularSweep => {
            if cloud.d() != 2 {
                return Err(Error::InvalidParams("the angular sweep needs d = 2".into()));
            }
            sweep_upper(&cloud.points, radius, zeta)
        }
        other => return Err(Error::InvalidParams(format!("{other:?} does not apply to hyperbolic clouds"))),
    };
    let meta = BuildMeta {
        model: Model::Hyperbolic,
        params: Some(cloud.params),
        radius,
        connection_radius: radius,
        strategy,
    };
    let graph = Graph::from_upper_lists(upper, cloud.points.iter().map(|p| p.t).collect(), meta);
    debug_assert!(graph.check_invariants().is_ok());
    Ok(graph)
}

fn naive_upper(points: &[HyperbolicPoint], radius: f64, zeta: f64) -> Vec<Vec<u32>> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            (i + 1..points.len())
                .filter(|&j| hyperbolic_connected(&points[i], &points[j], radius, zeta))
                .map(|j| j as u32)
                .collect()
        })
        .collect()
}

struct Band {
    r_lo: f64,
    /// `(angle, vertex)` sorted by angle.
    members: Vec<(f64, u32)>,
}

/// For each vertex, scans only radial bands at least as far out as itself, using the window
/// `theta*(r_i, max(r_lo, r_i))`. `theta*` shrinks as the outer radius grows, so this window
/// covers every partner in the band. Each pair is recorded once by its inner endpoint.
fn sweep_upper(points: &[HyperbolicPoint], radius: f64, zeta: f64) -> Vec<Vec<u32>> {
    if points.is_empty() {
        return Vec::new();
    }
    let angle = |p: &HyperbolicPoint| p.direction[1].atan2(p.direction[0]).rem_euclid(2.0 * PI);
    let r_min = points.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
    let r_max = points.iter().map(|p| p.r).fold(f64::NEG_INFINITY, f64::max);
    let width = 0.5 / zeta;
    let num_bands = (((r_max - r_min) / width).floor() as usize + 1).min(4096);
    let width = ((r_max - r_min) / num_bands as f64).max(f64::MIN_POSITIVE);
    let band_of = |r: f64| (((r - r_min) / width) as usize).min(num_bands - 1);
    let mut bands: Vec<Band> = (0..num_bands)
        .map(|b| Band { r_lo: r_min + b as f64 * width, members: Vec::new() })
        .collect();
    let angles: Vec<f64> = points.iter().map(angle).collect();
    for (i, p) in points.iter().enumerate() {
        bands[band_of(p.r)].members.push((angles[i], i as u32));
    }
    for band in &mut bands {
        band.members.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = &points[i];
            let mut out = Vec::new();
            let accept = |j: usize, out: &mut Vec<u32>| {
                let q = &points[j];
                let outer = q.r > p.r || (q.r == p.r && j > i);
                if outer && hyperbolic_connected(p, q, radius, zeta) {
                    out.push(j as u32);
                }
            };
            for band in &bands[band_of(p.r)..] {
                if band.members.is_empty() {
                    continue;
                }
                let s2 = threshold_half_sin_sq(p.r, band.r_lo.max(p.r), radius, zeta);
                if s2 < 0.0 {
                    continue;
                }
                // small slack keeps borderline pairs for the exact test
                let window = if s2 >= 1.0 { PI } else { 2.0 * s2.sqrt().asin() * (1.0 + 1e-9) + 1e-12 };
                if window >= PI {
                    band.members.iter().for_each(|&(_, j)| accept(j as usize, &mut out));
                    continue;
                }
                let a = angles[i];
                scan_arc(&band.members, a - window, a + window, |j| accept(j as usize, &mut out));
            }
            out
        })
        .collect()
}

/// Calls `f` on every member whose angle lies in the circular arc `[lo, hi]` with `hi - lo < 2 pi`.
fn scan_arc(members: &[(f64, u32)], lo: f64, hi: f64, mut f: impl FnMut(u32)) {
    let two_pi = 2.0 * PI;
    let range = |a: f64, b: f64, f: &mut dyn FnMut(u32)| {
        let start = members.partition_point(|m| m.0 < a);
        for m in &members[start..] {
            if m.0 > b {
                break;
            }
            f(m.1);
        }
    };
    if lo < 0.0 {
        range(lo + two_pi, two_pi, &mut f);
        range(0.0, hi, &mut f);
    } else if hi >= two_pi {
        range(lo, two_pi, &mut f);
        range(0.0, hi - two_pi, &mut f);
    } else {
        range(lo, hi, &mut f);
    }
}

/// Cloud restricted to depths `t <= gamma * R`.
pub fn restrict_annulus(cloud: &PointCloud, gamma: f64) -> Result<PointCloud> {
    cloud.restrict(gamma)
}

/// Euclidean geometric graph: edge iff `0 < |x_i - x_j| <= s`.
pub fn build_euclidean_graph(cloud: &EuclideanCloud, s: f64) -> Result<Graph> {
    if !(s > 0.0) {
        return Err(Error::InvalidParams(format!("connection radius must be positive, got {s}")));
    }
    let pts = &cloud.points;
    let s2 = s * s;
    let close = |i: usize, j: usize| {
        let d2: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 > 0.0 && d2 <= s2
    };
    let use_grid = s < cloud.ball_radius && cloud.d <= 4;
    let upper: Vec<Vec<u32>> = if use_grid {
        let key = |x: &[f64]| x.iter().map(|c| (c / s).floor() as i64).collect::<Vec<_>>();
        let mut cells: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            cells.entry(key(p)).or_default().push(i as u32);
        }
        let offsets: Vec<Vec<i64>> = (0..3usize.pow(cloud.d as u32))
            .map(|mut code| {
                (0..cloud.d)
                    .map(|_| {
                        let o = (code % 3) as i64 - 1;
                        code /= 3;
                        o
                    })
                    .collect()
            })
            .collect();
        (0..pts.len())
            .into_par_iter()
            .map(|i| {
                let base = key(&pts[i]);
                let mut out = Vec::new();
                for off in &offsets {
                    let cell: Vec<i64> = base.iter().zip(off).map(|(a, b)| a + b).collect();
                    if let Some(members) = cells.get(&cell) {
                        out.extend(members.iter().copied().filter(|&j| j as usize > i && close(i, j as usize)));
                    }
                }
                out
            })
            .collect()
    } else {
        (0..pts.len())
            .into_par_iter()
            .map(|i| (i + 1..pts.len()).filter(|&j| close(i, j)).map(|j| j as u32).collect())
            .collect()
    };
    let meta = BuildMeta {
        model: Model::Euclidean,
        params: None,
        radius: cloud.ball_radius,
        connection_radius: s,
        strategy: if use_grid { BuildStrategy::Grid } else { BuildStrategy::Naive },
    };
    let payload = pts.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    Ok(Graph::from_upper_lists(upper, payload, meta))
}
