use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use tofa::comm_graph::{gen_synthetic, ingest_trace};
use tofa::{
    EdgeWeight, FaultScenario, PlacementOptions, PlacementPolicy, Synthetic, TorusDims, TorusTopology, TrafficMatrix,
};

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const SEED_ENV: &str = "TOFA_SEED";

/// Everything a command needs, as read from `--config` and then overridden
/// by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topo: Option<TorusDims>,
    pub topo_file: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub synthetic: Option<String>,
    /// Process count for synthetic patterns.
    pub procs: usize,
    /// Payload of each synthetic message.
    pub bytes: u64,
    /// Floating-point work per process.
    pub compute_flops: f64,
    pub policy: PlacementPolicy,
    pub faults: Option<PathBuf>,
    pub n_faulty: usize,
    pub p_fail: f64,
    pub instances: usize,
    pub batches: usize,
    pub remap_each_instance: bool,
    pub max_attempts: u64,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub weights: EdgeWeight,
    pub penalty_c: f64,
    pub fault_threshold: f64,
    pub arrangements: Vec<TorusDims>,
    pub policies: Vec<PlacementPolicy>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            topo: None,
            topo_file: None,
            trace: None,
            synthetic: None,
            procs: 64,
            bytes: 1 << 20,
            compute_flops: 6e9,
            policy: PlacementPolicy::Tofa,
            faults: None,
            n_faulty: 0,
            p_fail: 0.02,
            instances: tofa::simulator::DEFAULT_INSTANCES,
            batches: 1,
            remap_each_instance: false,
            max_attempts: tofa::simulator::DEFAULT_MAX_ATTEMPTS,
            seed: None,
            out: PathBuf::from("tofa-out"),
            weights: EdgeWeight::Volume,
            penalty_c: 1.0,
            fault_threshold: 0.0,
            arrangements: Vec::new(),
            policies: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON scenario config; flags given on the command line take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Torus dimensions.
    #[arg(long, value_name = "DXxDYxDZ", conflicts_with = "topo_file")]
    pub topo: Option<TorusDims>,
    /// Topology file of `id x y z` lines.
    #[arg(long, value_name = "PATH")]
    pub topo_file: Option<PathBuf>,
    /// JSON-lines communication trace.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub trace: Option<PathBuf>,
    /// Synthetic pattern: band:K, block:B or irregular:DENSITY[:SEED].
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<String>,
    /// Process count for synthetic patterns.
    #[arg(long)]
    pub procs: Option<usize>,
    /// Bytes per synthetic message.
    #[arg(long)]
    pub bytes: Option<u64>,
    /// Floating-point operations per process.
    #[arg(long)]
    pub compute_flops: Option<f64>,
    #[arg(long)]
    pub policy: Option<PlacementPolicy>,
    /// Fault scenario JSON (`nodes`, `faulty`, `p_f`, `seed`).
    #[arg(long, value_name = "PATH")]
    pub faults: Option<PathBuf>,
    /// Number of randomly chosen failure-prone nodes when no scenario file is given.
    #[arg(long)]
    pub n_faulty: Option<usize>,
    /// Outage probability of each failure-prone node.
    #[arg(long)]
    pub p_fail: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    /// Recompute the placement for every instance.
    #[arg(long)]
    pub remap_each_instance: bool,
    #[arg(long)]
    pub max_attempts: Option<u64>,
    /// Global seed; falls back to the config file, then to $TOFA_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Edge weights of the communication graph: volume or messages.
    #[arg(long)]
    pub weights: Option<EdgeWeight>,
    /// Hop cost of the topology graph.
    #[arg(long)]
    pub penalty_c: Option<f64>,
    /// Largest outage probability still treated as fault-free in window search.
    #[arg(long)]
    pub fault_threshold: Option<f64>,
}

impl ConfigArgs {
    /// Reads the config file (if any), applies flag overrides and resolves
    /// the seed.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ScenarioConfig::default(),
        };
        if let Some(t) = self.topo {
            c.topo = Some(t);
            c.topo_file = None;
        }
        if let Some(p) = &self.topo_file {
            c.topo_file = Some(p.clone());
            c.topo = None;
        }
        if let Some(p) = &self.trace {
            c.trace = Some(p.clone());
            c.synthetic = None;
        }
        if let Some(s) = &self.synthetic {
            c.synthetic = Some(s.clone());
            c.trace = None;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() {
                    c.$field = v;
                })*
            };
        }
        set!(
            procs,
            bytes,
            compute_flops,
            policy,
            n_faulty,
            p_fail,
            instances,
            batches,
            max_attempts,
            out,
            weights,
            penalty_c,
            fault_threshold
        );
        if self.faults.is_some() {
            c.faults = self.faults.clone();
        }
        c.remap_each_instance |= self.remap_each_instance;
        c.seed = match (self.seed, c.seed) {
            (Some(s), _) | (None, Some(s)) => Some(s),
            (None, None) => Some(match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .with_context(|| format!("${SEED_ENV}={v:?} is not a u64"))?,
                Err(_) => 0,
            }),
        };
        if c.topo.is_none() && c.topo_file.is_none() {
            c.topo = Some(TorusDims::new(8, 8, 8)?);
        }
        c.validate()?;
        Ok(c)
    }
}

impl ScenarioConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topo.is_some() && self.topo_file.is_some() {
            bail!("give either a topology size or a topology file, not both");
        }
        if self.trace.is_some() && self.synthetic.is_some() {
            bail!("give either a trace or a synthetic pattern, not both");
        }
        for path in [&self.topo_file, &self.trace, &self.faults].into_iter().flatten() {
            if !path.is_file() {
                bail!("{} does not exist", path.display());
            }
        }
        if self.instances == 0 || self.batches == 0 || self.max_attempts == 0 {
            bail!("instances, batches and max_attempts must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_fail) {
            bail!("p_fail {} outside [0, 1]", self.p_fail);
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<TorusTopology> {
        match (&self.topo, &self.topo_file) {
            (_, Some(path)) => Ok(TorusTopology::load(path)?),
            (Some(d), None) => Ok(TorusTopology::new(*d)),
            (None, None) => bail!("no topology given"),
        }
    }

    pub fn traffic(&self) -> Result<TrafficMatrix> {
        match (&self.trace, &self.synthetic) {
            (Some(path), _) => Ok(ingest_trace(path)?),
            (None, Some(spec)) => {
                let kind = Synthetic::parse(spec, self.seed())?;
                Ok(gen_synthetic(kind, self.procs, self.bytes)?)
            }
            (None, None) => bail!("no traffic source: pass --trace or --synthetic"),
        }
    }

    pub fn placement(&self) -> PlacementOptions {
        PlacementOptions {
            weights: self.weights,
            penalty_c: self.penalty_c,
            fault_threshold: self.fault_threshold,
            seed: self.seed(),
        }
    }

    /// Fault scenario of batch `batch`. A scenario file keeps its node set
    /// and shifts only the draw seed; otherwise each batch picks its own
    /// failure-prone nodes.
    pub fn scenario(&self, nodes: usize, batch: usize) -> Result<FaultScenario> {
        let offset = batch as u64;
        match &self.faults {
            Some(path) => {
                let mut s = FaultScenario::load(path)?;
                if s.nodes != nodes {
                    bail!("{} describes {} nodes, topology has {nodes}", path.display(), s.nodes);
                }
                s.seed = s.seed.wrapping_add(offset);
                Ok(s)
            }
            None => Ok(FaultScenario::random(
                nodes,
                self.n_faulty,
                self.p_fail,
                self.seed().wrapping_add(offset),
            )?),
        }
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(EFFECTIVE_CONFIG), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
