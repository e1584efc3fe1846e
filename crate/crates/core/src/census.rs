//! Ordered injective tree embeddings and their add-one costs.
//!
//! A count is the number of ordered tuples of distinct vertices `(v_1, .., v_k)` with `v_i ~ v_j`
//! for every tree edge `{i, j}`. Nothing is divided by automorphisms.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HyperbolicPoint;
use crate::graph::{hyperbolic_connected, Graph};
use crate::sampling::PointCloud;

/// Largest graph accepted by the brute-force counters.
pub const BRUTEFORCE_CAP: usize = 14;

/// A labeled tree on `k` vertices, stored with zero-based labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeJson", into = "TreeJson")]
pub struct TreeSpec {
    k: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

/// On-disk form, one-based: `{"k":4,"edges":[[1,2],[1,3],[1,4]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeJson {
    k: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<TreeJson> for TreeSpec {
    type Error = Error;

    fn try_from(j: TreeJson) -> Result<Self> {
        let mut edges = Vec::with_capacity(j.edges.len());
        for [a, b] in j.edges {
            if a == 0 || b == 0 {
                return Err(Error::InvalidTree("labels are one-based".into()));
            }
            edges.push((a - 1, b - 1));
        }
        TreeSpec::new(j.k, edges)
    }
}

impl From<TreeSpec> for TreeJson {
    fn from(t: TreeSpec) -> Self {
        TreeJson { k: t.k, edges: t.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect() }
    }
}

impl TreeSpec {
    /// Validates a spanning tree given by zero-based edges.
    pub fn new(k: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidTree(format!("need at least 2 vertices, got {k}")));
        }
        if edges.len() != k - 1 {
            return Err(Error::InvalidTree(format!("{} edges for {k} vertices", edges.len())));
        }
        let mut adjacency = vec![Vec::new(); k];
        let mut seen = HashSet::new();
        for &(a, b) in &edges {
            if a >= k || b >= k {
                return Err(Error::InvalidTree(format!("edge ({}, {}) out of range", a + 1, b + 1)));
            }
            if a == b {
                return Err(Error::InvalidTree(format!("self-loop at {}", a + 1)));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidTree(format!("duplicate edge ({}, {})", a + 1, b + 1)));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|l| l.sort_unstable());
        let mut reached = vec![false; k];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adjacency[v] {
                if !reached[w] {
                    reached[w] = true;
                    stack.push(w);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(Error::InvalidTree("edges do not connect all vertices".into()));
        }
        Ok(Self { k, edges, adjacency })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }

    /// The single edge `K_2`.
    pub fn edge() -> Self {
        Self::new(2, vec![(0, 1)]).unwrap()
    }

    /// Star with centre `0` and `k - 1` leaves.
    pub fn star(k: usize) -> Result<Self> {
        Self::new(k, (1..k).map(|i| (0, i)).collect())
    }

    pub fn path(k: usize) -> Result<Self> {
        Self::new(k, (1..k).map(|i| (i - 1, i)).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Zero-based edges.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Degrees in non-decreasing order; the last entry is the largest degree.
    pub fn sorted_degrees(&self) -> Vec<usize> {
        let mut d = self.degrees();
        d.sort_unstable();
        d
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Order of the automorphism group.
    pub fn automorphism_count(&self) -> u128 {
        match self.centers() {
            (c, None) => self.rooted(c, usize::MAX).1,
            (a, Some(b)) => {
                let (ca, na) = self.rooted(a, b);
                let (cb, nb) = self.rooted(b, a);
                na * nb * if ca == cb { 2 } else { 1 }
            }
        }
    }

    /// A string equal for two trees exactly when they are isomorphic.
    pub fn canonical_form(&self) -> String {
        match self.centers() {
            (c, None) => self.rooted(c, usize::MAX).0,
            (a, Some(b)) => {
                let ca = self.rooted(a, b).0;
                let cb = self.rooted(b, a).0;
                if ca <= cb {
                    format!("[{ca}{cb}]")
                } else {
                    format!("[{cb}{ca}]")
                }
            }
        }
    }

    /// Canonical string and automorphism count of the subtree at `v` hanging away from `parent`.
    fn rooted(&self, v: usize, parent: usize) -> (String, u128) {
        let mut children: Vec<(String, u128)> =
            self.adjacency[v].iter().filter(|&&w| w != parent).map(|&w| self.rooted(w, v)).collect();
        children.sort();
        let mut aut: u128 = children.iter().map(|c| c.1).product();
        let mut run = 1u128;
        for i in 1..=children.len() {
            if i < children.len() && children[i].0 == children[i - 1].0 {
                run += 1;
            } else {
                aut *= (1..=run).product::<u128>();
                run = 1;
            }
        }
        let body: String = children.iter().map(|c| c.0.as_str()).collect();
        (format!("({body})"), aut)
    }

    /// One or two centres, found by peeling leaves.
    fn centers(&self) -> (usize, Option<usize>) {
        let mut deg = self.degrees();
        let mut layer: Vec<usize> = (0..self.k).filter(|&v| deg[v] <= 1).collect();
        let mut remaining = self.k;
        while remaining > 2 {
            remaining -= layer.len();
            let mut next = Vec::new();
            for &v in &layer {
                for &w in &self.adjacency[v] {
                    deg[w] -= 1;
                    if deg[w] == 1 {
                        next.push(w);
                    }
                }
            }
            layer = next;
        }
        match layer.as_slice() {
            [c] => (*c, None),
            [a, b] => (*a.min(b), Some(*a.max(b))),
            _ => unreachable!("a tree has one or two centres"),
        }
    }

    /// One representative of every isomorphism class of trees on `k` vertices.
    pub fn all_nonisomorphic(k: usize) -> Result<Vec<TreeSpec>> {
        if !(2..=9).contains(&k) {
            return Err(Error::InvalidTree(format!("enumeration supports 2 <= k <= 9, got {k}")));
        }
        if k == 2 {
            return Ok(vec![Self::edge()]);
        }
        let mut seen = BTreeMap::new();
        let mut seq = vec![0usize; k - 2];
        loop {
            let tree = Self::from_prufer(k, &seq);
            seen.entry(tree.canonical_form()).or_insert(tree);
            let mut i = 0;
            loop {
                if i == seq.len() {
                    return Ok(seen.into_values().collect());
                }
                seq[i] += 1;
                if seq[i] < k {
                    break;
                }
                seq[i] = 0;
                i += 1;
            }
        }
    }

    fn from_prufer(k: usize, seq: &[usize]) -> TreeSpec {
        let mut degree = vec![1usize; k];
        seq.iter().for_each(|&s| degree[s] += 1);
        let mut edges = Vec::with_capacity(k - 1);
        for &s in seq {
            let leaf = (0..k).find(|&v| degree[v] == 1).unwrap();
            edges.push((leaf, s));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..k).filter(|&v| degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        TreeSpec::new(k, edges).expect("Prüfer decoding yields a tree")
    }
}

/// A host graph as seen by the backtracking counter.
trait Host: Sync {
    fn num_vertices(&self) -> usize;
    fn degree(&self, v: usize) -> usize;
    fn neighbors(&self, v: usize) -> Cow<'_, [u32]>;
    fn adjacent(&self, u: usize, v: usize) -> bool;
    fn allowed(&self, v: usize) -> bool;
}

struct GraphHost<'a> {
    g: &'a Graph,
    depth_bound: Option<f64>,
}

impl<'a> GraphHost<'a> {
    fn new(g: &'a Graph, gamma: Option<f64>) -> Result<Self> {
        let depth_bound = match gamma {
            None => None,
            Some(x) if !(x > 0.0 && x <= 1.0) => {
                return Err(Error::InvalidParams(format!("gamma must lie in (0, 1], got {x}")))
            }
            Some(1.0) => None,
            Some(x) => Some(x * g.meta.radius),
        };
        Ok(Self { g, depth_bound })
    }
}

impl Host for GraphHost<'_> {
    fn num_vertices(&self) -> usize {
        self.g.num_vertices()
    }

    fn degree(&self, v: usize) -> usize {
        self.g.degree(v)
    }

    fn neighbors(&self, v: usize) -> Cow<'_, [u32]> {
        Cow::Borrowed(self.g.neighbors(v))
    }

    fn adjacent(&self, u: usize, v: usize) -> bool {
        self.g.has_edge(u, v)
    }

    fn allowed(&self, v: usize) -> bool {
        match self.depth_bound {
            None => true,
            Some(b) => self.g.vertex_payload[v] <= b,
        }
    }
}

/// A graph with a few extra vertices appended after the last base vertex.
struct ExtendedHost<'a> {
    base: GraphHost<'a>,
    /// Sorted base neighbors of each extra vertex.
    extra_base: Vec<Vec<u32>>,
    /// Adjacency among extra vertices.
    extra_pairs: Vec<Vec<bool>>,
}

impl ExtendedHost<'_> {
    fn extra_index(&self, v: usize) -> Option<usize> {
        v.checked_sub(self.base.num_vertices())
    }
}

impl Host for ExtendedHost<'_> {
    fn num_vertices(&self) -> usize {
        self.base.num_vertices() + self.extra_base.len()
    }

    fn degree(&self, v: usize) -> usize {
        match self.extra_index(v) {
            Some(e) => self.extra_base[e].len() + self.extra_pairs[e].iter().filter(|&&b| b).count(),
            None => {
                self.base.degree(v)
                    + self.extra_base.iter().filter(|nb| nb.binary_search(&(v as u32)).is_ok()).count()
            }
        }
    }

    fn neighbors(&self, v: usize) -> Cow<'_, [u32]> {
        let n = self.base.num_vertices();
        match self.extra_index(v) {
            Some(e) => {
                let mut out = self.extra_base[e].clone();
                out.extend(
                    self.extra_pairs[e].iter().enumerate().filter(|(_, &b)| b).map(|(f, _)| (n + f) as u32),
                );
                Cow::Owned(out)
            }
            None => {
                let extras: Vec<u32> = (0..self.extra_base.len())
                    .filter(|&e| self.extra_base[e].binary_search(&(v as u32)).is_ok())
                    .map(|e| (n + e) as u32)
                    .collect();
                if extras.is_empty() {
                    self.base.neighbors(v)
                } else {
                    let mut out = self.base.neighbors(v).into_owned();
                    out.extend(extras);
                    Cow::Owned(out)
                }
            }
        }
    }

    fn adjacent(&self, u: usize, v: usize) -> bool {
        match (self.extra_index(u), self.extra_index(v)) {
            (Some(a), Some(b)) => self.extra_pairs[a][b],
            (Some(a), None) => self.extra_base[a].binary_search(&(v as u32)).is_ok(),
            (None, Some(b)) => self.extra_base[b].binary_search(&(u as u32)).is_ok(),
            (None, None) => self.base.adjacent(u, v),
        }
    }

    fn allowed(&self, v: usize) -> bool {
        // extra points are admitted by the caller
        self.extra_index(v).is_some() || self.base.allowed(v)
    }
}

/// Traversal of the tree used by the backtracking counter.
struct Plan {
    /// Tree vertex at each step.
    order: Vec<usize>,
    /// Step index of the parent of each step; unused at step 0.
    parent: Vec<usize>,
    tree_degree: Vec<usize>,
    /// Host vertex pinned to each step, if any.
    forced: Vec<Option<usize>>,
    /// Host vertices that only their pinned step may use.
    reserved: Vec<usize>,
    /// From this step on, every step is an unpinned leaf hanging from the same parent.
    leaf_block: usize,
}

impl Plan {
    fn new(tree: &TreeSpec, root: usize, pins: &[(usize, usize)]) -> Plan {
        let k = tree.k();
        let mut order = vec![root];
        let mut step_of = vec![usize::MAX; k];
        step_of[root] = 0;
        let mut parent = vec![0];
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            for &w in tree.neighbors(v) {
                if step_of[w] == usize::MAX {
                    step_of[w] = order.len();
                    order.push(w);
                    parent.push(head);
                }
            }
            head += 1;
        }
        let pin_of = |v: usize| pins.iter().find(|p| p.0 == v).map(|p| p.1);
        let is_free_leaf = |v: usize| v != root && tree.neighbors(v).len() == 1 && pin_of(v).is_none();

        // move the largest group of free leaves sharing a parent to the end
        let mut best: Option<(usize, usize)> = None;
        for s in 0..k {
            let leaves = (1..k).filter(|&i| parent[i] == s && is_free_leaf(order[i])).count();
            if leaves > 0 && best.is_none_or(|b| leaves > b.1) {
                best = Some((s, leaves));
            }
        }
        let mut leaf_block = k;
        if let Some((s, m)) = best {
            let (mut head_steps, mut tail_steps): (Vec<usize>, Vec<usize>) =
                (0..k).partition(|&i| !(i > 0 && parent[i] == s && is_free_leaf(order[i])));
            let mut perm = Vec::with_capacity(k);
            perm.append(&mut head_steps);
            perm.append(&mut tail_steps);
            let mut new_index = vec![0; k];
            for (new, &old) in perm.iter().enumerate() {
                new_index[old] = new;
            }
            let new_order: Vec<usize> = perm.iter().map(|&i| order[i]).collect();
            let new_parent: Vec<usize> = perm.iter().map(|&i| new_index[parent[i]]).collect();
            order = new_order;
            parent = new_parent;
            leaf_block = k - m;
        }
        let tree_degree = order.iter().map(|&v| tree.neighbors(v).len()).collect();
        let forced = order.iter().map(|&v| pin_of(v)).collect();
        Plan { order, parent, tree_degree, forced, reserved: pins.iter().map(|p| p.1).collect(), leaf_block }
    }

    fn k(&self) -> usize {
        self.order.len()
    }
}

fn falling_factorial(c: usize, m: usize) -> Result<u128> {
    if c < m {
        return Ok(0);
    }
    (0..m).try_fold(1u128, |acc, i| acc.checked_mul((c - i) as u128).ok_or(Error::CountOverflow))
}

fn extend<H: Host>(host: &H, plan: &Plan, step: usize, image: &mut [usize]) -> Result<u128> {
    let k = plan.k();
    if step == k {
        return Ok(1);
    }
    let p = image[plan.parent[step]];
    let taken = |v: usize, image: &[usize]| image[..step].contains(&v);
    if step == plan.leaf_block {
        let free = host
            .neighbors(p)
            .iter()
            .filter(|&&w| {
                let w = w as usize;
                host.allowed(w) && !taken(w, image) && !plan.reserved.contains(&w)
            })
            .count();
        return falling_factorial(free, k - step);
    }
    if let Some(v) = plan.forced[step] {
        if taken(v, image) || !host.adjacent(p, v) || host.degree(v) < plan.tree_degree[step] {
            return Ok(0);
        }
        image[step] = v;
        return extend(host, plan, step + 1, image);
    }
    let mut total = 0u128;
    for &w in host.neighbors(p).iter() {
        let w = w as usize;
        if !host.allowed(w) || taken(w, image) || plan.reserved.contains(&w) {
            continue;
        }
        if host.degree(w) < plan.tree_degree[step] {
            continue;
        }
        image[step] = w;
        let sub = extend(host, plan, step + 1, image)?;
        total = total.checked_add(sub).ok_or(Error::CountOverflow)?;
    }
    Ok(total)
}

fn count_with_plan<H: Host>(host: &H, plan: &Plan) -> Result<u128> {
    let k = plan.k();
    let root_ok = |v: usize| host.allowed(v) && host.degree(v) >= plan.tree_degree[0];
    let run = |v: usize| -> Result<u128> {
        let mut image = vec![0usize; k];
        image[0] = v;
        extend(host, plan, 1, &mut image)
    };
    if let Some(v) = plan.forced[0] {
        return if root_ok(v) { run(v) } else { Ok(0) };
    }
    (0..host.num_vertices())
        .into_par_iter()
        .filter(|&v| root_ok(v) && !plan.reserved.contains(&v))
        .map(run)
        .try_reduce(|| 0u128, |a, b| a.checked_add(b).ok_or(Error::CountOverflow))
}

/// Root of the backtracking: a vertex of maximum degree, smallest label on ties.
fn default_root(tree: &TreeSpec) -> usize {
    let degrees = tree.degrees();
    let max = *degrees.iter().max().unwrap();
    degrees.iter().position(|&d| d == max).unwrap()
}

/// Number of ordered injective embeddings of `tree` into `g`.
///
/// With `gamma = Some(x)`, only vertices of depth at most `x * R` take part.
pub fn count_tree_embeddings(g: &Graph, tree: &TreeSpec, gamma: Option<f64>) -> Result<u128> {
    count_tree_embeddings_rooted(g, tree, gamma, default_root(tree))
}

/// [`count_tree_embeddings`] with an explicit backtracking root; the result does not depend on it.
pub fn count_tree_embeddings_rooted(g: &Graph, tree: &TreeSpec, gamma: Option<f64>, root: usize) -> Result<u128> {
    if root >= tree.k() {
        return Err(Error::InvalidParams(format!("root {root} outside tree")));
    }
    let host = GraphHost::new(g, gamma)?;
    count_with_plan(&host, &Plan::new(tree, root, &[]))
}

/// Literal sum over ordered tuples of distinct vertices; for testing only.
pub fn count_tree_embeddings_bruteforce(g: &Graph, tree: &TreeSpec, gamma: Option<f64>) -> Result<u128> {
    count_pattern_bruteforce(g, tree.k(), tree.edges(), gamma)
}

/// Ordered tuples of `k` distinct vertices carrying every pattern edge. The pattern need not be
/// connected.
pub fn count_pattern_bruteforce(g: &Graph, k: usize, edges: &[(usize, usize)], gamma: Option<f64>) -> Result<u128> {
    if g.num_vertices() > BRUTEFORCE_CAP {
        return Err(Error::SizeCap { vertices: g.num_vertices(), cap: BRUTEFORCE_CAP });
    }
    let host = GraphHost::new(g, gamma)?;
    let vertices: Vec<usize> = (0..g.num_vertices()).filter(|&v| host.allowed(v)).collect();
    fn rec(g: &Graph, vs: &[usize], k: usize, edges: &[(usize, usize)], tuple: &mut Vec<usize>) -> u128 {
        if tuple.len() == k {
            return edges.iter().all(|&(a, b)| g.has_edge(tuple[a], tuple[b])) as u128;
        }
        let mut total = 0;
        for &v in vs {
            if !tuple.contains(&v) {
                tuple.push(v);
                total += rec(g, vs, k, edges, tuple);
                tuple.pop();
            }
        }
        total
    }
    Ok(rec(g, &vertices, k, edges, &mut Vec::with_capacity(k)))
}

fn extended_host<'a>(g: &'a Graph, cloud: &PointCloud, extras: &[&HyperbolicPoint], gamma: f64) -> Result<ExtendedHost<'a>> {
    if g.num_vertices() != cloud.len() {
        return Err(Error::InvalidParams(format!(
            "graph has {} vertices but the cloud has {} points",
            g.num_vertices(),
            cloud.len()
        )));
    }
    let (radius, zeta) = (cloud.radius, cloud.params.zeta);
    let extra_base = extras
        .iter()
        .map(|x| {
            (0..cloud.len())
                .into_par_iter()
                .filter(|&i| hyperbolic_connected(x, &cloud.points[i], radius, zeta))
                .map(|i| i as u32)
                .collect()
        })
        .collect();
    let extra_pairs = extras
        .iter()
        .map(|x| extras.iter().map(|y| hyperbolic_connected(x, y, radius, zeta)).collect())
        .collect();
    Ok(ExtendedHost { base: GraphHost::new(g, Some(gamma))?, extra_base, extra_pairs })
}

/// `D_x S = S(P + x) - S(P)` restricted to depths at most `gamma * R`: the embeddings into the
/// graph on `P + x` that use `x`, summed over the position `x` occupies.
pub fn add_one_cost(g: &Graph, cloud: &PointCloud, x: &HyperbolicPoint, tree: &TreeSpec, gamma: f64) -> Result<u128> {
    if x.t > gamma * cloud.radius {
        return Ok(0);
    }
    let host = extended_host(g, cloud, &[x], gamma)?;
    let xv = g.num_vertices();
    (0..tree.k()).try_fold(0u128, |acc, pos| {
        let c = count_with_plan(&host, &Plan::new(tree, pos, &[(pos, xv)]))?;
        acc.checked_add(c).ok_or(Error::CountOverflow)
    })
}

/// `D^2_{x,y} S`: embeddings into the graph on `P + x + y` that use both `x` and `y`, summed over
/// ordered pairs of distinct positions.
pub fn second_difference(
    g: &Graph,
    cloud: &PointCloud,
    x: &HyperbolicPoint,
    y: &HyperbolicPoint,
    tree: &TreeSpec,
    gamma: f64,
) -> Result<u128> {
    if x.coincides_with(y) {
        return Err(Error::InvalidParams("x and y must be distinct".into()));
    }
    let bound = gamma * cloud.radius;
    if x.t > bound || y.t > bound {
        return Ok(0);
    }
    let host = extended_host(g, cloud, &[x, y], gamma)?;
    let (xv, yv) = (g.num_vertices(), g.num_vertices() + 1);
    let mut total = 0u128;
    for a in 0..tree.k() {
        for b in 0..tree.k() {
            if a != b {
                let c = count_with_plan(&host, &Plan::new(tree, a, &[(a, xv), (b, yv)]))?;
                total = total.checked_add(c).ok_or(Error::CountOverflow)?;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusResult {
    pub count: u128,
    pub tree: TreeSpec,
    pub gamma: Option<f64>,
    pub elapsed_secs: f64,
}

/// [`count_tree_embeddings`] with timing.
pub fn census(g: &Graph, tree: &TreeSpec, gamma: Option<f64>) -> Result<CensusResult> {
    let start = Instant::now();
    let count = count_tree_embeddings(g, tree, gamma)?;
    Ok(CensusResult { count, tree: tree.clone(), gamma, elapsed_secs: start.elapsed().as_secs_f64() })
}
