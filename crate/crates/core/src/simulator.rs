//! Analytic runtime model and Monte-Carlo batch simulation under node
//! failures.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comm_graph::TrafficMatrix;
use crate::error::{Error, Result};
use crate::fault::FaultScenario;
use crate::placement::{mapping_quality, place, Mapping, MappingQuality, PlacementOptions, PlacementPolicy};
use crate::torus::{NodeId, TorusTopology};

pub const DEFAULT_INSTANCES: usize = 100;
pub const DEFAULT_MAX_ATTEMPTS: u64 = 1000;

/// Simulated machine characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    /// Floating-point operations per second of one node.
    pub node_flops: f64,
    /// Link bandwidth in bits per second.
    pub link_bandwidth: f64,
    /// Per-hop link latency in seconds.
    pub link_latency: f64,
}

impl Default for Platform {
    fn default() -> Self {
        Platform {
            node_flops: 6e9,
            link_bandwidth: 10e9,
            link_latency: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub traffic: TrafficMatrix,
    /// Floating-point work of each process.
    pub compute_flops: f64,
    pub platform: Platform,
}

impl JobSpec {
    pub fn new(traffic: TrafficMatrix, compute_flops: f64) -> Result<Self> {
        let job = JobSpec {
            traffic,
            compute_flops,
            platform: Platform::default(),
        };
        job.validate()?;
        Ok(job)
    }

    pub fn n_procs(&self) -> usize {
        self.traffic.n()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.platform;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(self.compute_flops >= 0.0 && self.compute_flops.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "compute_flops {} must be finite and >= 0",
                self.compute_flops
            )));
        }
        if !(positive(p.node_flops) && positive(p.link_bandwidth) && p.link_latency >= 0.0) {
            return Err(Error::InvalidConfig("platform rates must be positive".into()));
        }
        Ok(())
    }
}

/// Successful-run time split into its cost-model terms, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeEstimate {
    pub compute: f64,
    /// Bytes on the most loaded link over the link bandwidth.
    pub bandwidth: f64,
    /// Link latency times the largest `messages * hops` over process pairs.
    pub latency: f64,
}

impl RuntimeEstimate {
    pub fn total(&self) -> f64 {
        self.compute + self.bandwidth + self.latency
    }
}

pub fn runtime_breakdown(
    job: &JobSpec,
    mapping: &Mapping,
    topo: &TorusTopology,
) -> Result<(RuntimeEstimate, MappingQuality)> {
    let q = mapping_quality(mapping, &job.traffic, topo)?;
    let p = &job.platform;
    let latency_hops = job
        .traffic
        .communicating_pairs()
        .map(|(i, j)| job.traffic.msg(i, j) * topo.hop_distance(mapping.node_of(i), mapping.node_of(j)) as u64)
        .max()
        .unwrap_or(0);
    let est = RuntimeEstimate {
        compute: job.compute_flops / p.node_flops,
        bandwidth: q.congestion * 8.0 / p.link_bandwidth,
        latency: p.link_latency * latency_hops as f64,
    };
    Ok((est, q))
}

/// Duration of one successful run of `job` under `mapping`.
pub fn estimate_runtime(job: &JobSpec, mapping: &Mapping, topo: &TorusTopology) -> Result<f64> {
    Ok(runtime_breakdown(job, mapping, topo)?.0.total())
}

/// Nodes whose failure kills the job: every mapped node plus every node
/// forwarding traffic between processes that exchange bytes.
pub fn used_nodes(mapping: &Mapping, traffic: &TrafficMatrix, topo: &TorusTopology) -> BTreeSet<NodeId> {
    let mut used: BTreeSet<NodeId> = mapping.nodes().iter().copied().collect();
    for (i, j) in traffic.communicating_pairs() {
        if traffic.vol(i, j) == 0 {
            continue;
        }
        let (a, b) = (mapping.node_of(i), mapping.node_of(j));
        for link in topo.route_iter(a, b).chain(topo.route_iter(b, a)) {
            used.insert(link.target);
        }
    }
    used
}

/// `1 - prod(1 - p_f)` over the failure-prone nodes the job depends on.
pub fn analytic_abort_probability(used: &BTreeSet<NodeId>, scenario: &FaultScenario) -> f64 {
    let hit = scenario.faulty.iter().filter(|n| used.contains(n)).count();
    1.0 - (1.0 - scenario.p_f).powi(hit as i32)
}

/// A job with its placement resolved into the quantities the simulation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedJob {
    pub mapping: Mapping,
    pub used: BTreeSet<NodeId>,
    pub t_success: f64,
    pub quality: MappingQuality,
}

impl PlacedJob {
    pub fn new(job: &JobSpec, mapping: Mapping, topo: &TorusTopology) -> Result<Self> {
        let (est, quality) = runtime_breakdown(job, &mapping, topo)?;
        let used = used_nodes(&mapping, &job.traffic, topo);
        Ok(PlacedJob {
            mapping,
            used,
            t_success: est.total(),
            quality,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLog {
    pub index: u64,
    pub attempts: u64,
    /// `attempts * t_success`.
    pub time: f64,
    /// Distinct used nodes that were down in some aborted attempt.
    pub failed_nodes_hit: Vec<NodeId>,
    /// False when the attempt cap was reached without a successful run.
    pub completed: bool,
}

impl InstanceLog {
    pub fn aborted(&self) -> bool {
        self.attempts > 1 || !self.completed
    }
}

/// Runs instance `index` until an attempt finds none of its used nodes
/// failed, redrawing failures for every attempt; gives up after
/// `max_attempts` attempts.
pub fn simulate_instance(placed: &PlacedJob, scenario: &FaultScenario, index: u64, max_attempts: u64) -> InstanceLog {
    let mut hit = BTreeSet::new();
    let mut attempts = 0;
    let mut completed = false;
    while attempts < max_attempts {
        let failed = scenario.sample_attempt(index, attempts);
        attempts += 1;
        if failed.is_disjoint(&placed.used) {
            completed = true;
            break;
        }
        hit.extend(failed.intersection(&placed.used).copied());
    }
    InstanceLog {
        index,
        attempts,
        time: attempts as f64 * placed.t_success,
        failed_nodes_hit: hit.into_iter().collect(),
        completed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub instances: usize,
    pub scenario: FaultScenario,
    pub policy: PlacementPolicy,
    /// Recompute the placement for every instance instead of once per batch.
    pub remap_each_instance: bool,
    pub max_attempts: u64,
    pub placement: PlacementOptions,
}

impl BatchConfig {
    pub fn new(scenario: FaultScenario, policy: PlacementPolicy) -> Self {
        BatchConfig {
            instances: DEFAULT_INSTANCES,
            scenario,
            policy,
            remap_each_instance: false,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            placement: PlacementOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub policy: PlacementPolicy,
    pub instances: usize,
    /// Sum of all instance times, in seconds.
    pub completion_time: f64,
    /// Fraction of instances that needed more than one attempt.
    pub abort_ratio: f64,
    pub aborted: usize,
    pub nonterminating: usize,
    /// Mean over instances of the successful-run time.
    pub t_success: f64,
    /// Mean over instances of the independent-failure abort probability.
    pub analytic_abort_probability: f64,
    pub hop_bytes: u64,
    pub dilation: usize,
    pub congestion: f64,
    pub faulty_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub summary: BatchSummary,
    /// Placement used by the first instance.
    pub mapping: Mapping,
    pub instances: Vec<InstanceLog>,
}

fn instance_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn simulate_batch(job: &JobSpec, config: &BatchConfig, topo: &TorusTopology) -> Result<BatchReport> {
    job.validate()?;
    config.scenario.validate()?;
    if config.instances == 0 {
        return Err(Error::InvalidConfig("a batch needs at least one instance".into()));
    }
    if config.max_attempts == 0 {
        return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
    }
    if config.scenario.nodes != topo.node_count() {
        return Err(Error::InvalidScenario(format!(
            "scenario covers {} nodes, topology has {}",
            config.scenario.nodes,
            topo.node_count()
        )));
    }
    let outage = config.scenario.outage_vector();
    let place_for = |index: u64| -> Result<PlacedJob> {
        let mut opts = config.placement;
        if config.remap_each_instance {
            opts.seed = instance_seed(opts.seed, index);
        }
        let mapping = place(config.policy, &job.traffic, topo, &outage, &opts)?;
        PlacedJob::new(job, mapping, topo)
    };

    let first = place_for(0)?;
    let mut logs = Vec::with_capacity(config.instances);
    let (mut t_sum, mut analytic_sum) = (0.0, 0.0);
    for index in 0..config.instances as u64 {
        let remapped;
        let placed = if config.remap_each_instance && index > 0 {
            remapped = place_for(index)?;
            &remapped
        } else {
            &first
        };
        t_sum += placed.t_success;
        analytic_sum += analytic_abort_probability(&placed.used, &config.scenario);
        logs.push(simulate_instance(placed, &config.scenario, index, config.max_attempts));
    }

    let count = config.instances as f64;
    let aborted = logs.iter().filter(|l| l.aborted()).count();
    let summary = BatchSummary {
        policy: config.policy,
        instances: config.instances,
        completion_time: logs.iter().map(|l| l.time).sum(),
        abort_ratio: aborted as f64 / count,
        aborted,
        nonterminating: logs.iter().filter(|l| !l.completed).count(),
        t_success: t_sum / count,
        analytic_abort_probability: analytic_sum / count,
        hop_bytes: first.quality.hop_bytes,
        dilation: first.quality.dilation,
        congestion: first.quality.congestion,
        faulty_nodes: config.scenario.faulty.clone(),
    };
    Ok(BatchReport {
        summary,
        mapping: first.mapping,
        instances: logs,
    })
}

#[derive(Serialize)]
struct SummaryRow {
    batch: usize,
    policy: PlacementPolicy,
    instances: usize,
    completion_time: f64,
    abort_ratio: f64,
    aborted: usize,
    nonterminating: usize,
    t_success: f64,
    analytic_abort_probability: f64,
    hop_bytes: u64,
    dilation: usize,
    congestion: f64,
}

/// Writes the full reports as JSON and one CSV summary row per batch.
pub fn write_batch_reports(reports: &[BatchReport], json_path: &Path, csv_path: &Path) -> Result<()> {
    fs::write(json_path, serde_json::to_string_pretty(reports)? + "\n")?;
    let mut w = csv::Writer::from_path(csv_path)?;
    for (batch, r) in reports.iter().enumerate() {
        let s = &r.summary;
        w.serialize(SummaryRow {
            batch,
            policy: s.policy,
            instances: s.instances,
            completion_time: s.completion_time,
            abort_ratio: s.abort_ratio,
            aborted: s.aborted,
            nonterminating: s.nonterminating,
            t_success: s.t_success,
            analytic_abort_probability: s.analytic_abort_probability,
            hop_bytes: s.hop_bytes,
            dilation: s.dilation,
            congestion: s.congestion,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm_graph::{gen_synthetic, Communicator, Synthetic};
    use crate::placement::place_sequential;

    fn torus(s: &str) -> TorusTopology {
        TorusTopology::new(s.parse().unwrap())
    }

    fn pair(n: usize, i: usize, j: usize, bytes: u64) -> TrafficMatrix {
        let mut m = TrafficMatrix::zeros(n);
        m.record_p2p(&Communicator::world(n), i, j, bytes).unwrap();
        m
    }

    #[test]
    fn runtime_examples() {
        let t = torus("4x4x4");
        let job = JobSpec::new(TrafficMatrix::zeros(4), 12e9).unwrap();
        let m = place_sequential(4, &t).unwrap();
        assert_eq!(estimate_runtime(&job, &m, &t).unwrap(), 2.0);

        // 10 Gbit between neighbours over a 10 Gbps link
        let job = JobSpec::new(pair(2, 0, 1, 1_250_000_000), 0.0).unwrap();
        let m = place_sequential(2, &t).unwrap();
        let (est, _) = runtime_breakdown(&job, &m, &t).unwrap();
        assert_eq!(est.bandwidth, 1.0);
        assert_eq!(est.latency, 1e-6);
    }

    #[test]
    fn runtime_monotone_in_congestion() {
        let t = torus("8x1x1");
        let job = JobSpec::new(pair(2, 0, 1, 1_000_000), 1e9).unwrap();
        let near = Mapping::new(vec![0, 1]);
        let far = Mapping::new(vec![0, 3]);
        assert!(estimate_runtime(&job, &near, &t).unwrap() < estimate_runtime(&job, &far, &t).unwrap());
    }

    #[test]
    fn used_nodes_examples() {
        let t = torus("8x1x1");
        let g = pair(2, 0, 1, 5);
        assert_eq!(used_nodes(&Mapping::new(vec![2, 3]), &g, &t), BTreeSet::from([2, 3]));
        assert_eq!(
            used_nodes(&Mapping::new(vec![0, 3]), &g, &t),
            BTreeSet::from([0, 1, 2, 3])
        );
        let zero = TrafficMatrix::zeros(2);
        assert_eq!(used_nodes(&Mapping::new(vec![0, 3]), &zero, &t), BTreeSet::from([0, 3]));
    }

    #[test]
    fn analytic_examples() {
        let used = BTreeSet::from([1, 2, 3, 4]);
        let s = |f: Vec<usize>| FaultScenario::new(8, f, 0.02, 0).unwrap();
        assert_eq!(analytic_abort_probability(&used, &s(vec![6, 7])), 0.0);
        assert!((analytic_abort_probability(&used, &s(vec![2, 7])) - 0.02).abs() < 1e-15);
        let three = analytic_abort_probability(&used, &s(vec![1, 2, 3]));
        assert!((three - (1.0 - 0.98f64.powi(3))).abs() < 1e-15);
        assert!((three - 0.058808).abs() < 1e-6);
    }

    #[test]
    fn instance_without_faults_runs_once() {
        let t = torus("4x1x1");
        let job = JobSpec::new(pair(2, 0, 1, 10), 6e9).unwrap();
        let placed = PlacedJob::new(&job, Mapping::new(vec![0, 1]), &t).unwrap();
        let s = FaultScenario::new(4, vec![0, 1], 0.0, 1).unwrap();
        let log = simulate_instance(&placed, &s, 0, 10);
        assert_eq!(log.attempts, 1);
        assert_eq!(log.time, placed.t_success);
        assert!(!log.aborted());
    }

    #[test]
    fn certain_failure_hits_attempt_cap() {
        let t = torus("4x1x1");
        let job = JobSpec::new(pair(2, 0, 1, 10), 6e9).unwrap();
        let placed = PlacedJob::new(&job, Mapping::new(vec![0, 1]), &t).unwrap();
        let s = FaultScenario::new(4, vec![1], 1.0, 1).unwrap();
        let log = simulate_instance(&placed, &s, 3, 5);
        assert_eq!(log.attempts, 5);
        assert!(!log.completed);
        assert_eq!(log.failed_nodes_hit, vec![1]);
        assert_eq!(log.time, 5.0 * placed.t_success);
    }

    #[test]
    fn fault_free_batch() {
        let t = torus("4x4x4");
        let job = JobSpec::new(gen_synthetic(Synthetic::Band { k: 1 }, 16, 1000).unwrap(), 6e9).unwrap();
        let cfg = BatchConfig::new(FaultScenario::fault_free(64, 3), PlacementPolicy::Tofa);
        let r = simulate_batch(&job, &cfg, &t).unwrap();
        assert_eq!(r.summary.abort_ratio, 0.0);
        assert_eq!(r.summary.completion_time, 100.0 * r.summary.t_success);
        assert_eq!(r.instances.len(), 100);
    }

    #[test]
    fn batch_rejects_bad_config() {
        let t = torus("2x2x2");
        let job = JobSpec::new(TrafficMatrix::zeros(2), 1.0).unwrap();
        let mut cfg = BatchConfig::new(FaultScenario::fault_free(8, 0), PlacementPolicy::Sequential);
        cfg.instances = 0;
        assert!(simulate_batch(&job, &cfg, &t).is_err());
        let cfg = BatchConfig::new(FaultScenario::fault_free(9, 0), PlacementPolicy::Sequential);
        assert!(simulate_batch(&job, &cfg, &t).is_err());
        assert!(JobSpec::new(TrafficMatrix::zeros(2), -1.0).is_err());
    }

    #[test]
    fn remap_each_instance_varies_random_placement() {
        let t = torus("4x4x4");
        let job = JobSpec::new(gen_synthetic(Synthetic::Band { k: 1 }, 8, 10).unwrap(), 1e9).unwrap();
        let mut cfg = BatchConfig::new(FaultScenario::random(64, 8, 0.5, 2).unwrap(), PlacementPolicy::Random);
        cfg.instances = 20;
        let fixed = simulate_batch(&job, &cfg, &t).unwrap();
        cfg.remap_each_instance = true;
        let remapped = simulate_batch(&job, &cfg, &t).unwrap();
        assert_eq!(fixed.mapping, remapped.mapping);
        assert_ne!(fixed.instances, remapped.instances);
    }

    #[test]
    fn reports_written() {
        let dir = tempfile::tempdir().unwrap();
        let t = torus("2x2x2");
        let job = JobSpec::new(pair(2, 0, 1, 10), 1.0).unwrap();
        let mut cfg = BatchConfig::new(
            FaultScenario::new(8, vec![1], 0.5, 0).unwrap(),
            PlacementPolicy::Sequential,
        );
        cfg.instances = 4;
        let r = simulate_batch(&job, &cfg, &t).unwrap();
        let (j, c) = (dir.path().join("r.json"), dir.path().join("r.csv"));
        write_batch_reports(&[r.clone(), r], &j, &c).unwrap();
        let back: Vec<BatchReport> = serde_json::from_str(&fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(fs::read_to_string(&c).unwrap().lines().count(), 3);
    }
}
