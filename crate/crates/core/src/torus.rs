//! 3D torus platform model: coordinates, dimension-ordered routing and the
//! all-pairs topology graph consumed by the mappers.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node in lexicographic `(x, y, z)` order.
pub type NodeId = usize;

/// Extra cost, in multiples of the hop cost, for a link touching a node with a
/// non-zero outage probability.
pub const FAULT_PENALTY: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TorusDims {
    dx: usize,
    dy: usize,
    dz: usize,
}

impl TorusDims {
    pub fn new(dx: usize, dy: usize, dz: usize) -> Result<Self> {
        if dx == 0 || dy == 0 || dz == 0 {
            return Err(Error::ZeroDimension(dx, dy, dz));
        }
        Ok(TorusDims { dx, dy, dz })
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn dy(&self) -> usize {
        self.dy
    }

    pub fn dz(&self) -> usize {
        self.dz
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn node_count(&self) -> usize {
        self.dx * self.dy * self.dz
    }

    pub fn coord_of(&self, id: NodeId) -> Coord {
        debug_assert!(id < self.node_count());
        let plane = self.dy * self.dz;
        Coord {
            x: id / plane,
            y: (id % plane) / self.dz,
            z: id % self.dz,
        }
    }

    pub fn id_of(&self, c: Coord) -> NodeId {
        debug_assert!(c.x < self.dx && c.y < self.dy && c.z < self.dz);
        c.x * self.dy * self.dz + c.y * self.dz + c.z
    }

    /// Shortest wraparound distance, summed over the three dimensions.
    pub fn hop_distance(&self, u: NodeId, v: NodeId) -> usize {
        let (a, b) = (self.coord_of(u).as_array(), self.coord_of(v).as_array());
        self.as_array()
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(&dim, (&s, &t))| {
                let fwd = (t + dim - s) % dim;
                fwd.min(dim - fwd)
            })
            .sum()
    }

    /// Largest hop distance between any two nodes.
    pub fn diameter(&self) -> usize {
        self.as_array().iter().map(|d| d / 2).sum()
    }
}

impl fmt::Display for TorusDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.dx, self.dy, self.dz)
    }
}

impl FromStr for TorusDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .trim()
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::BadDims(s.to_string()))?;
        match parts[..] {
            [dx, dy, dz] => TorusDims::new(dx, dy, dz),
            _ => Err(Error::BadDims(s.to_string())),
        }
    }
}

impl TryFrom<String> for TorusDims {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TorusDims> for String {
    fn from(d: TorusDims) -> String {
        d.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Coord {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Coord { x, y, z }
    }

    fn as_array(self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }
}

/// A directed hop between two torus-adjacent nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Link {
    pub source: NodeId,
    pub target: NodeId,
}

impl Link {
    /// Direction-agnostic key, used when links are treated as full-duplex
    /// physical cables.
    pub fn undirected(&self) -> (NodeId, NodeId) {
        (self.source.min(self.target), self.source.max(self.target))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Route {
    pub links: Vec<Link>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Nodes strictly between the endpoints.
    pub fn intermediates(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.links.iter().skip(1).map(|l| l.source)
    }
}

/// Iterator over the links of a dimension-ordered route.
#[derive(Debug, Clone)]
pub struct RouteIter {
    dims: [usize; 3],
    strides: [usize; 3],
    cur: [usize; 3],
    /// Remaining steps and direction (+1 or -1) per dimension.
    steps: [(usize, bool); 3],
    axis: usize,
}

impl Iterator for RouteIter {
    type Item = Link;

    fn next(&mut self) -> Option<Link> {
        while self.axis < 3 && self.steps[self.axis].0 == 0 {
            self.axis += 1;
        }
        if self.axis == 3 {
            return None;
        }
        let a = self.axis;
        let source: usize = (0..3).map(|i| self.cur[i] * self.strides[i]).sum();
        let dim = self.dims[a];
        self.cur[a] = if self.steps[a].1 {
            (self.cur[a] + 1) % dim
        } else {
            (self.cur[a] + dim - 1) % dim
        };
        self.steps[a].0 -= 1;
        let target: usize = (0..3).map(|i| self.cur[i] * self.strides[i]).sum();
        Some(Link { source, target })
    }
}

/// Immutable 3D torus with fixed dimension-ordered routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorusTopology {
    dims: TorusDims,
}

impl TorusTopology {
    pub fn new(dims: TorusDims) -> Self {
        TorusTopology { dims }
    }

    pub fn dims(&self) -> TorusDims {
        self.dims
    }

    pub fn node_count(&self) -> usize {
        self.dims.node_count()
    }

    pub fn coord_of(&self, id: NodeId) -> Coord {
        self.dims.coord_of(id)
    }

    pub fn id_of(&self, c: Coord) -> NodeId {
        self.dims.id_of(c)
    }

    pub fn check_node(&self, node: NodeId) -> Result<()> {
        if node >= self.node_count() {
            return Err(Error::NodeOutOfRange {
                node,
                nodes: self.node_count(),
            });
        }
        Ok(())
    }

    pub fn hop_distance(&self, u: NodeId, v: NodeId) -> usize {
        self.dims.hop_distance(u, v)
    }

    pub fn diameter(&self) -> usize {
        self.dims.diameter()
    }

    /// Whether `u` and `v` differ by one step (mod dim) in exactly one
    /// coordinate.
    pub fn adjacent(&self, u: NodeId, v: NodeId) -> bool {
        if u == v {
            return false;
        }
        let (a, b) = (self.coord_of(u).as_array(), self.coord_of(v).as_array());
        let dims = self.dims.as_array();
        let mut differing = 0;
        for i in 0..3 {
            if a[i] != b[i] {
                differing += 1;
                let fwd = (b[i] + dims[i] - a[i]) % dims[i];
                if fwd != 1 && fwd != dims[i] - 1 {
                    return false;
                }
            }
        }
        differing == 1
    }

    /// Links traversed from `u` to `v`: X first, then Y, then Z, taking the
    /// shorter wraparound direction in each dimension and the positive one on
    /// ties.
    pub fn route_iter(&self, u: NodeId, v: NodeId) -> RouteIter {
        let dims = self.dims.as_array();
        let (a, b) = (self.coord_of(u).as_array(), self.coord_of(v).as_array());
        let mut steps = [(0, true); 3];
        for i in 0..3 {
            let fwd = (b[i] + dims[i] - a[i]) % dims[i];
            let back = (dims[i] - fwd) % dims[i];
            steps[i] = if fwd <= back { (fwd, true) } else { (back, false) };
        }
        RouteIter {
            dims,
            strides: [dims[1] * dims[2], dims[2], 1],
            cur: a,
            steps,
            axis: 0,
        }
    }

    pub fn route(&self, u: NodeId, v: NodeId) -> Route {
        Route {
            links: self.route_iter(u, v).collect(),
        }
    }

    /// Plain hop-count topology graph with cost `c` per hop.
    pub fn hop_graph(&self, c: f64) -> Result<TopologyGraph> {
        fault_weight_matrix(self, &vec![0.0; self.node_count()], c)
    }

    /// Loads a topology file of `id x y z` lines. Ids must cover `[0, N)` and
    /// follow the lexicographic numbering of the implied dimensions.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(i + 1, format!("{e}")))?;
            if fields.len() != 4 {
                return Err(parse_err(i + 1, "expected `id x y z`".into()));
            }
            entries.push((i + 1, fields[0], Coord::new(fields[1], fields[2], fields[3])));
        }
        if entries.is_empty() {
            return Err(parse_err(0, "topology file has no nodes".into()));
        }
        let max = entries
            .iter()
            .fold([0; 3], |m, (_, _, c)| [m[0].max(c.x), m[1].max(c.y), m[2].max(c.z)]);
        let dims = TorusDims::new(max[0] + 1, max[1] + 1, max[2] + 1)?;
        let mut seen = vec![false; dims.node_count()];
        for &(line, id, c) in &entries {
            if id >= dims.node_count() || dims.id_of(c) != id {
                return Err(parse_err(
                    line,
                    format!(
                        "node {id} at ({}, {}, {}) breaks lexicographic numbering for {dims}",
                        c.x, c.y, c.z
                    ),
                ));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(parse_err(line, format!("node {id} listed twice")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(parse_err(0, format!("node {missing} missing from {dims} torus")));
        }
        Ok(TorusTopology::new(dims))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for id in 0..self.node_count() {
            let c = self.coord_of(id);
            writeln!(out, "{id} {} {} {}", c.x, c.y, c.z)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// All-pairs path costs over a set of torus nodes (the graph `H`).
///
/// Entry `(i, j)` is the cost of the fixed route from `nodes[i]` to
/// `nodes[j]`. Without faults the matrix is symmetric; with faults the two
/// directions may traverse different intermediate nodes and so may differ.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyGraph {
    dims: TorusDims,
    nodes: Vec<NodeId>,
    weight: Array2<f64>,
    hop_cost: f64,
}

impl TopologyGraph {
    pub fn dims(&self) -> TorusDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Original torus id of local vertex `i`.
    pub fn node(&self, i: usize) -> NodeId {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weight[[i, j]]
    }

    /// Cost of exchanging traffic both ways between local vertices `i` and `j`.
    pub fn round_trip(&self, i: usize, j: usize) -> f64 {
        self.weight[[i, j]] + self.weight[[j, i]]
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn hop_cost(&self) -> f64 {
        self.hop_cost
    }

    /// Hop distance between local vertices, ignoring penalties.
    pub fn hops(&self, i: usize, j: usize) -> usize {
        self.dims.hop_distance(self.nodes[i], self.nodes[j])
    }

    pub fn coord(&self, i: usize) -> Coord {
        self.dims.coord_of(self.nodes[i])
    }
}

/// Builds `H` with edge costs `sum over route links of c + 100c * [either
/// endpoint has p_f > 0]`.
pub fn fault_weight_matrix(topo: &TorusTopology, outage: &[f64], c: f64) -> Result<TopologyGraph> {
    let n = topo.node_count();
    if outage.len() != n {
        return Err(Error::OutageLength {
            expected: n,
            got: outage.len(),
        });
    }
    if let Some((node, &value)) = outage.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidProbability { node, value });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidCost(c));
    }
    let faulty: Vec<bool> = outage.iter().map(|&p| p > 0.0).collect();
    let mut weight = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            weight[[u, v]] = topo
                .route_iter(u, v)
                .map(|l| {
                    if faulty[l.source] || faulty[l.target] {
                        c + c * FAULT_PENALTY
                    } else {
                        c
                    }
                })
                .sum();
        }
    }
    Ok(TopologyGraph {
        dims: topo.dims(),
        nodes: (0..n).collect(),
        weight,
        hop_cost: c,
    })
}

/// Restricts `graph` to the torus nodes in `keep`, in the given order. Pair
/// costs are carried over unchanged, so penalties from routes that transit
/// dropped nodes persist.
pub fn extract_subtopology(graph: &TopologyGraph, keep: &[NodeId]) -> Result<TopologyGraph> {
    if keep.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    let nodes = graph.dims.node_count();
    let mut local = vec![usize::MAX; nodes];
    for (i, &id) in graph.nodes.iter().enumerate() {
        local[id] = i;
    }
    let mut seen = vec![false; nodes];
    let mut idx = Vec::with_capacity(keep.len());
    for &id in keep {
        if id >= nodes || local[id] == usize::MAX {
            return Err(Error::NodeOutOfRange { node: id, nodes });
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::DuplicateNode(id));
        }
        idx.push(local[id]);
    }
    let weight = Array2::from_shape_fn((idx.len(), idx.len()), |(i, j)| graph.weight[[idx[i], idx[j]]]);
    Ok(TopologyGraph {
        dims: graph.dims,
        nodes: keep.to_vec(),
        weight,
        hop_cost: graph.hop_cost,
    })
}
