//! Heartbeat histories, outage-probability estimation and failure sampling.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::NodeId;

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_EWMA_ALPHA: f64 = 0.1;

/// Sliding window of heartbeat replies per node; `true` means answered.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartbeatLog {
    window: usize,
    logs: Vec<VecDeque<(u64, bool)>>,
}

impl HeartbeatLog {
    pub fn new(nodes: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("heartbeat window must be at least 1".into()));
        }
        Ok(HeartbeatLog {
            window,
            logs: vec![VecDeque::with_capacity(window); nodes],
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn nodes(&self) -> usize {
        self.logs.len()
    }

    /// Appends the outcome of heartbeat `t` for `node`, dropping the oldest
    /// entry once the window is full.
    pub fn record(&mut self, node: NodeId, t: u64, answered: bool) -> Result<()> {
        let nodes = self.logs.len();
        let log = self.logs.get_mut(node).ok_or(Error::NodeOutOfRange { node, nodes })?;
        if log.len() == self.window {
            log.pop_front();
        }
        log.push_back((t, answered));
        Ok(())
    }

    /// Replies of `node`, oldest first.
    pub fn history(&self, node: NodeId) -> impl Iterator<Item = bool> + '_ {
        self.logs[node].iter().map(|&(_, a)| a)
    }

    pub fn estimate(&self, policy: OutagePolicy) -> OutageEstimate {
        let mut empty = Vec::new();
        let probabilities = self
            .logs
            .iter()
            .enumerate()
            .map(|(node, log)| {
                if log.is_empty() {
                    empty.push(node);
                    return 0.0;
                }
                match policy {
                    OutagePolicy::WindowAverage => {
                        let missed = log.iter().filter(|(_, a)| !a).count();
                        missed as f64 / self.window as f64
                    }
                    OutagePolicy::Ewma { alpha } => log.iter().fold(0.0, |acc, &(_, a)| {
                        let miss = if a { 0.0 } else { 1.0 };
                        alpha * miss + (1.0 - alpha) * acc
                    }),
                }
            })
            .collect();
        OutageEstimate {
            probabilities,
            empty_nodes: empty,
        }
    }

    /// Writes `node,t,answered` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (node, log) in self.logs.iter().enumerate() {
            for &(t, answered) in log {
                w.serialize(HeartbeatRow { node, t, answered })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Replays a `node,t,answered` dump in file order.
    pub fn load_csv(path: &Path, nodes: usize, window: usize) -> Result<Self> {
        let mut log = HeartbeatLog::new(nodes, window)?;
        let mut r = csv::Reader::from_path(path)?;
        for row in r.deserialize() {
            let row: HeartbeatRow = row?;
            log.record(row.node, row.t, row.answered)?;
        }
        Ok(log)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeartbeatRow {
    node: NodeId,
    t: u64,
    answered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
#[derive(Default)]
pub enum OutagePolicy {
    /// Missed heartbeats divided by the window length.
    #[default]
    WindowAverage,
    /// Exponentially weighted average of misses, newest weighted by `alpha`.
    Ewma { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutageEstimate {
    pub probabilities: Vec<f64>,
    /// Nodes with no recorded heartbeat; their probability is reported as 0.
    pub empty_nodes: Vec<NodeId>,
}

/// Failure-prone node set `N_f` sharing one outage probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScenario {
    pub nodes: usize,
    pub faulty: Vec<NodeId>,
    pub p_f: f64,
    pub seed: u64,
}

impl FaultScenario {
    pub fn new(nodes: usize, faulty: Vec<NodeId>, p_f: f64, seed: u64) -> Result<Self> {
        let s = FaultScenario {
            nodes,
            faulty,
            p_f,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// No failure-prone nodes at all.
    pub fn fault_free(nodes: usize, seed: u64) -> Self {
        FaultScenario {
            nodes,
            faulty: Vec::new(),
            p_f: 0.0,
            seed,
        }
    }

    /// Picks `n_faulty` distinct nodes uniformly at random.
    pub fn random(nodes: usize, n_faulty: usize, p_f: f64, seed: u64) -> Result<Self> {
        if n_faulty > nodes {
            return Err(Error::InvalidScenario(format!(
                "cannot pick {n_faulty} faulty nodes out of {nodes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut faulty = index::sample(&mut rng, nodes, n_faulty).into_vec();
        faulty.sort_unstable();
        FaultScenario::new(nodes, faulty, p_f, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_f) {
            return Err(Error::InvalidScenario(format!("p_f = {} outside [0, 1]", self.p_f)));
        }
        let mut seen = BTreeSet::new();
        for &n in &self.faulty {
            if n >= self.nodes {
                return Err(Error::NodeOutOfRange {
                    node: n,
                    nodes: self.nodes,
                });
            }
            if !seen.insert(n) {
                return Err(Error::DuplicateNode(n));
            }
        }
        Ok(())
    }

    /// Per-node outage probability: `p_f` on `N_f`, exactly 0 elsewhere.
    pub fn outage_vector(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.nodes];
        for &n in &self.faulty {
            p[n] = self.p_f;
        }
        p
    }

    /// Failed nodes for the first attempt of instance `instance`.
    pub fn sample_failed_set(&self, instance: u64) -> BTreeSet<NodeId> {
        self.sample_attempt(instance, 0)
    }

    /// Independent Bernoulli(`p_f`) draw for every node of `N_f`, keyed by
    /// `(seed, instance, attempt)`.
    pub fn sample_attempt(&self, instance: u64, attempt: u64) -> BTreeSet<NodeId> {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&instance.to_le_bytes());
        key[16..24].copy_from_slice(&attempt.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        let mut order = self.faulty.clone();
        order.sort_unstable();
        order.into_iter().filter(|_| rng.gen::<f64>() < self.p_f).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: FaultScenario = serde_json::from_str(&fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_trim() {
        let mut log = HeartbeatLog::new(2, 3).unwrap();
        log.record(0, 0, true).unwrap();
        assert_eq!(log.history(0).collect::<Vec<_>>(), vec![true]);
        log.record(0, 1, true).unwrap();
        log.record(0, 2, true).unwrap();
        log.record(0, 3, false).unwrap();
        assert_eq!(log.history(0).collect::<Vec<_>>(), vec![true, true, false]);
        log.record(1, 0, false).unwrap();
        assert_eq!(log.history(1).collect::<Vec<_>>(), vec![false]);
        assert_eq!(log.history(0).count(), 3);
        assert!(log.record(2, 0, true).is_err());
    }

    #[test]
    fn window_average_and_ewma() {
        let mut log = HeartbeatLog::new(3, 10).unwrap();
        for t in 0..10 {
            log.record(0, t, t != 3 && t != 7).unwrap();
            log.record(1, t, true).unwrap();
            log.record(2, t, false).unwrap();
        }
        let est = log.estimate(OutagePolicy::WindowAverage);
        assert_eq!(est.probabilities, vec![0.2, 0.0, 1.0]);
        assert!(est.empty_nodes.is_empty());

        let ewma = log.estimate(OutagePolicy::Ewma { alpha: 0.1 });
        assert_eq!(ewma.probabilities[1], 0.0);
        let expected = 1.0 - 0.9f64.powi(10);
        assert!((ewma.probabilities[2] - expected).abs() < 1e-12);
        assert!(ewma.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn empty_log_is_flagged() {
        let mut log = HeartbeatLog::new(2, 5).unwrap();
        log.record(0, 0, false).unwrap();
        let est = log.estimate(OutagePolicy::WindowAverage);
        assert_eq!(est.probabilities, vec![0.2, 0.0]);
        assert_eq!(est.empty_nodes, vec![1]);
    }

    #[test]
    fn heartbeat_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hb.csv");
        let mut log = HeartbeatLog::new(3, 4).unwrap();
        for t in 0..6 {
            for n in 0..3 {
                log.record(n, t, !(t + n as u64).is_multiple_of(3)).unwrap();
            }
        }
        log.save_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node,t,answered\n"));
        assert_eq!(HeartbeatLog::load_csv(&path, 3, 4).unwrap(), log);
    }

    #[test]
    fn sampling_extremes() {
        let none = FaultScenario::new(16, vec![1, 5, 9], 0.0, 3).unwrap();
        let all = FaultScenario::new(16, vec![1, 5, 9], 1.0, 3).unwrap();
        for i in 0..50 {
            assert!(none.sample_failed_set(i).is_empty());
            assert_eq!(all.sample_failed_set(i), BTreeSet::from([1, 5, 9]));
        }
    }

    #[test]
    fn sampling_is_keyed() {
        let s = FaultScenario::random(512, 16, 0.3, 11).unwrap();
        assert_eq!(s.faulty.len(), 16);
        assert_eq!(s.sample_failed_set(4), s.sample_failed_set(4));
        assert_eq!(s.sample_attempt(4, 2), s.sample_attempt(4, 2));
        let differs = (0..20).any(|i| s.sample_failed_set(i) != s.sample_failed_set(i + 20));
        assert!(differs);
        assert!(s.sample_failed_set(0).iter().all(|n| s.faulty.contains(n)));
    }

    #[test]
    fn scenario_validation() {
        assert!(FaultScenario::new(8, vec![8], 0.1, 0).is_err());
        assert!(FaultScenario::new(8, vec![1, 1], 0.1, 0).is_err());
        assert!(FaultScenario::new(8, vec![1], 1.5, 0).is_err());
        assert!(FaultScenario::random(4, 5, 0.1, 0).is_err());
        let s = FaultScenario::new(4, vec![2], 0.02, 0).unwrap();
        assert_eq!(s.outage_vector(), vec![0.0, 0.0, 0.02, 0.0]);
    }

    #[test]
    fn scenario_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = FaultScenario::random(512, 16, 0.02, 5).unwrap();
        s.save(&path).unwrap();
        assert_eq!(FaultScenario::load(&path).unwrap(), s);
        fs::write(&path, r#"{"nodes": 4, "faulty": [7], "p_f": 0.1, "seed": 1}"#).unwrap();
        assert!(FaultScenario::load(&path).is_err());
    }
}
