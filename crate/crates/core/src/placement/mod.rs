//! Process-to-node placement engines and mapping-quality metrics.

mod rb;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm_graph::{CommGraph, EdgeWeight, TrafficMatrix};
use crate::error::{Error, Result};
use crate::torus::{extract_subtopology, fault_weight_matrix, NodeId, TopologyGraph, TorusTopology};

pub use rb::place_rb;

/// Entry `p` is the node hosting process `p`; one process per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mapping {
    nodes: Vec<NodeId>,
}

impl Mapping {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Mapping { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_of(&self, process: usize) -> NodeId {
        self.nodes[process]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Checks that every node exists and hosts at most one process.
    pub fn validate(&self, node_count: usize) -> Result<()> {
        let mut used = vec![false; node_count];
        for (p, &n) in self.nodes.iter().enumerate() {
            if n >= node_count {
                return Err(Error::InvalidMapping(format!(
                    "process {p} on node {n}, topology has {node_count} nodes"
                )));
            }
            if std::mem::replace(&mut used[n], true) {
                return Err(Error::InvalidMapping(format!("node {n} hosts more than one process")));
            }
        }
        Ok(())
    }

    /// Writes the `process_id,node_id` machine file.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (process_id, &node_id) in self.nodes.iter().enumerate() {
            w.serialize(MappingRow { process_id, node_id })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows: Vec<MappingRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.process_id);
        for (i, row) in rows.iter().enumerate() {
            if row.process_id != i {
                return Err(Error::InvalidMapping(format!("process ids are not contiguous at {i}")));
            }
        }
        Ok(Mapping::new(rows.into_iter().map(|r| r.node_id).collect()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MappingRow {
    process_id: usize,
    node_id: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementPolicy {
    /// Processes on nodes `0, 1, 2, ...` (the resource manager's default).
    Sequential,
    Random,
    Greedy,
    /// Recursive-bipartitioning mapping onto the plain hop-count topology.
    Rb,
    /// Topology- and fault-aware placement.
    Tofa,
}

impl PlacementPolicy {
    pub const ALL: [PlacementPolicy; 5] = [
        PlacementPolicy::Sequential,
        PlacementPolicy::Random,
        PlacementPolicy::Greedy,
        PlacementPolicy::Rb,
        PlacementPolicy::Tofa,
    ];
}

impl fmt::Display for PlacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlacementPolicy::Sequential => "sequential",
            PlacementPolicy::Random => "random",
            PlacementPolicy::Greedy => "greedy",
            PlacementPolicy::Rb => "rb",
            PlacementPolicy::Tofa => "tofa",
        })
    }
}

impl FromStr for PlacementPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlacementPolicy::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown placement policy `{s}`")))
    }
}

/// Knobs shared by the placement engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementOptions {
    pub weights: EdgeWeight,
    /// Hop cost `c` of the topology graph.
    pub penalty_c: f64,
    /// Nodes with outage probability at most this value count as fault-free
    /// when searching for a consecutive window.
    pub fault_threshold: f64,
    pub seed: u64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            weights: EdgeWeight::Volume,
            penalty_c: 1.0,
            fault_threshold: 0.0,
            seed: 0,
        }
    }
}

fn check_fits(procs: usize, nodes: usize) -> Result<()> {
    if procs > nodes {
        return Err(Error::TooManyProcesses { procs, nodes });
    }
    Ok(())
}

pub fn place_sequential(n_procs: usize, topo: &TorusTopology) -> Result<Mapping> {
    check_fits(n_procs, topo.node_count())?;
    Ok(Mapping::new((0..n_procs).collect()))
}

/// Uniform injective sample of nodes.
pub fn place_random(n_procs: usize, topo: &TorusTopology, seed: u64) -> Result<Mapping> {
    check_fits(n_procs, topo.node_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<NodeId> = (0..topo.node_count()).collect();
    let (chosen, _) = nodes.partial_shuffle(&mut rng, n_procs);
    Ok(Mapping::new(chosen.to_vec()))
}

/// Visits process pairs from heaviest to lightest and places each unplaced
/// endpoint on the free node closest to its partner (or, when neither endpoint
/// is placed yet, on the lowest-id closest free pair). Processes without
/// traffic fill the remaining lowest-id nodes.
pub fn place_greedy(g: &CommGraph, h: &TopologyGraph) -> Result<Mapping> {
    let n = g.n();
    check_fits(n, h.len())?;
    let mut by_id: Vec<usize> = (0..h.len()).collect();
    by_id.sort_by_key(|&i| h.node(i));

    let mut pairs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, g.weight(i, j)))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));

    let mut placed: Vec<Option<usize>> = vec![None; n];
    let mut free = vec![true; h.len()];
    let closest_to = |anchor: usize, free: &[bool]| {
        by_id
            .iter()
            .copied()
            .filter(|&v| free[v])
            .min_by(|&a, &b| h.round_trip(anchor, a).total_cmp(&h.round_trip(anchor, b)))
    };
    for (i, j, _) in pairs {
        match (placed[i], placed[j]) {
            (Some(_), Some(_)) => {}
            (Some(u), None) | (None, Some(u)) => {
                let other = if placed[i].is_none() { i } else { j };
                let v = closest_to(u, &free).expect("free node exists while processes remain");
                free[v] = false;
                placed[other] = Some(v);
            }
            (None, None) => {
                let mut best: Option<(f64, usize, usize)> = None;
                for (ai, &a) in by_id.iter().enumerate() {
                    if !free[a] {
                        continue;
                    }
                    for &b in &by_id[ai + 1..] {
                        if free[b] && best.is_none_or(|(d, _, _)| h.round_trip(a, b) < d) {
                            best = Some((h.round_trip(a, b), a, b));
                        }
                    }
                }
                let (_, a, b) = best.expect("two free nodes exist while a pair is unplaced");
                free[a] = false;
                free[b] = false;
                placed[i] = Some(a);
                placed[j] = Some(b);
            }
        }
    }
    let mut rest = by_id.iter().copied().filter(|&v| free[v]);
    let nodes = placed
        .into_iter()
        .map(|p| h.node(p.unwrap_or_else(|| rest.next().expect("enough free nodes"))))
        .collect();
    Ok(Mapping::new(nodes))
}

/// First run of `n_needed` consecutive node ids (no wraparound) whose outage
/// probability is zero.
pub fn find_consecutive_fault_free(outage: &[f64], n_needed: usize) -> Result<Option<Vec<NodeId>>> {
    find_consecutive_below(outage, n_needed, 0.0)
}

/// Like [`find_consecutive_fault_free`], accepting nodes with outage
/// probability at most `threshold`.
pub fn find_consecutive_below(outage: &[f64], n_needed: usize, threshold: f64) -> Result<Option<Vec<NodeId>>> {
    if n_needed == 0 || n_needed > outage.len() {
        return Err(Error::WindowTooLarge {
            needed: n_needed,
            nodes: outage.len(),
        });
    }
    let mut run = 0;
    for (id, &p) in outage.iter().enumerate() {
        run = if p <= threshold { run + 1 } else { 0 };
        if run == n_needed {
            let start = id + 1 - n_needed;
            return Ok(Some((start..=id).collect()));
        }
    }
    Ok(None)
}

/// Fault-aware placement: build the penalized topology graph, then map onto
/// the first consecutive fault-free window when one exists, otherwise onto
/// the whole machine.
pub fn tofa_place(g: &CommGraph, topo: &TorusTopology, outage: &[f64], opts: &PlacementOptions) -> Result<Mapping> {
    let n = g.n();
    check_fits(n, topo.node_count())?;
    let h = fault_weight_matrix(topo, outage, opts.penalty_c)?;
    if n == 0 {
        return Ok(Mapping::new(Vec::new()));
    }
    match find_consecutive_below(outage, n, opts.fault_threshold)? {
        Some(window) => place_rb(g, &extract_subtopology(&h, &window)?),
        None => place_rb(g, &h),
    }
}

/// Runs `policy` for `traffic` on `topo`. `outage` is only consulted by
/// [`PlacementPolicy::Tofa`].
pub fn place(
    policy: PlacementPolicy,
    traffic: &TrafficMatrix,
    topo: &TorusTopology,
    outage: &[f64],
    opts: &PlacementOptions,
) -> Result<Mapping> {
    let n = traffic.n();
    match policy {
        PlacementPolicy::Sequential => place_sequential(n, topo),
        PlacementPolicy::Random => place_random(n, topo, opts.seed),
        PlacementPolicy::Greedy => place_greedy(&traffic.graph(opts.weights), &topo.hop_graph(opts.penalty_c)?),
        PlacementPolicy::Rb => place_rb(&traffic.graph(opts.weights), &topo.hop_graph(opts.penalty_c)?),
        PlacementPolicy::Tofa => tofa_place(&traffic.graph(opts.weights), topo, outage, opts),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingQuality {
    /// Sum over process pairs of bytes times hop distance.
    pub hop_bytes: u64,
    /// Largest hop distance between communicating processes.
    pub dilation: usize,
    /// Largest byte count carried by one physical link.
    pub congestion: f64,
}

/// Hop-bytes, dilation and congestion of `mapping`. For congestion each
/// pair's volume is split evenly between the routes of the two directions,
/// and both directions of a cable count against the same link.
pub fn mapping_quality(mapping: &Mapping, traffic: &TrafficMatrix, topo: &TorusTopology) -> Result<MappingQuality> {
    if mapping.len() != traffic.n() {
        return Err(Error::SizeMismatch {
            traffic: traffic.n(),
            mapping: mapping.len(),
        });
    }
    mapping.validate(topo.node_count())?;
    let mut hop_bytes = 0u64;
    let mut dilation = 0;
    let mut load: HashMap<(NodeId, NodeId), f64> = HashMap::new();
    for (i, j) in traffic.communicating_pairs() {
        let (a, b) = (mapping.node_of(i), mapping.node_of(j));
        let hops = topo.hop_distance(a, b);
        let vol = traffic.vol(i, j);
        hop_bytes += vol * hops as u64;
        dilation = dilation.max(hops);
        if vol > 0 {
            let half = vol as f64 / 2.0;
            for link in topo.route_iter(a, b).chain(topo.route_iter(b, a)) {
                *load.entry(link.undirected()).or_default() += half;
            }
        }
    }
    let congestion = load.values().copied().fold(0.0, f64::max);
    Ok(MappingQuality {
        hop_bytes,
        dilation,
        congestion,
    })
}
