use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use tofa::comm_graph::{emit_heatmap, write_matrix_csv};
use tofa::placement::place;
use tofa::simulator::{
    analytic_abort_probability, simulate_batch, write_batch_reports, BatchConfig, JobSpec, PlacedJob,
};
use tofa::{PlacementPolicy, TorusTopology};

use crate::config::ScenarioConfig;

fn prepare_out(c: &ScenarioConfig) -> Result<&Path> {
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    c.write_effective(&c.out)?;
    Ok(&c.out)
}

pub fn ingest(c: &ScenarioConfig) -> Result<()> {
    let traffic = c.traffic()?;
    let out = prepare_out(c)?;
    write_matrix_csv(traffic.volumes(), &out.join("vol.csv"))?;
    write_matrix_csv(traffic.messages(), &out.join("msg.csv"))?;
    emit_heatmap(&traffic, &out.join("heatmap.pgm"))?;
    println!(
        "{} processes, {} communicating pairs, {} bytes, {} messages",
        traffic.n(),
        traffic.communicating_pairs().count(),
        traffic.total_volume() / 2,
        traffic.total_messages() / 2
    );
    println!("wrote vol.csv, msg.csv, heatmap.pgm, heatmap.csv to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct MapReport {
    policy: PlacementPolicy,
    topology: String,
    procs: usize,
    hop_bytes: u64,
    dilation: usize,
    congestion: f64,
    t_success: f64,
    used_nodes: usize,
    analytic_abort_probability: f64,
}

pub fn map(c: &ScenarioConfig) -> Result<()> {
    let topo = c.topology()?;
    let job = JobSpec::new(c.traffic()?, c.compute_flops)?;
    let scenario = c.scenario(topo.node_count(), 0)?;
    let mapping = place(c.policy, &job.traffic, &topo, &scenario.outage_vector(), &c.placement())?;
    let placed = PlacedJob::new(&job, mapping, &topo)?;
    let report = MapReport {
        policy: c.policy,
        topology: topo.dims().to_string(),
        procs: job.n_procs(),
        hop_bytes: placed.quality.hop_bytes,
        dilation: placed.quality.dilation,
        congestion: placed.quality.congestion,
        t_success: placed.t_success,
        used_nodes: placed.used.len(),
        analytic_abort_probability: analytic_abort_probability(&placed.used, &scenario),
    };
    let out = prepare_out(c)?;
    placed.mapping.write_csv(&out.join("mapping.csv"))?;
    fs::write(out.join("quality.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "{} on {}: {} processes, hop_bytes {}, dilation {}, congestion {:.0} B, T_success {:.6} s, abort probability {:.4}",
        report.policy,
        report.topology,
        report.procs,
        report.hop_bytes,
        report.dilation,
        report.congestion,
        report.t_success,
        report.analytic_abort_probability
    );
    Ok(())
}

pub fn simulate(c: &ScenarioConfig) -> Result<()> {
    let topo = c.topology()?;
    let job = JobSpec::new(c.traffic()?, c.compute_flops)?;
    let mut reports = Vec::with_capacity(c.batches);
    for batch in 0..c.batches {
        let mut cfg = BatchConfig::new(c.scenario(topo.node_count(), batch)?, c.policy);
        cfg.instances = c.instances;
        cfg.remap_each_instance = c.remap_each_instance;
        cfg.max_attempts = c.max_attempts;
        cfg.placement = c.placement();
        reports.push(simulate_batch(&job, &cfg, &topo)?);
    }
    let out = prepare_out(c)?;
    write_batch_reports(&reports, &out.join("report.json"), &out.join("summary.csv"))?;
    println!("batch  completion_s  abort_ratio  analytic  nonterminating");
    for (b, r) in reports.iter().enumerate() {
        let s = &r.summary;
        println!(
            "{b:>5}  {:>12.3}  {:>11.4}  {:>8.4}  {:>14}",
            s.completion_time, s.abort_ratio, s.analytic_abort_probability, s.nonterminating
        );
    }
    let mean = reports.iter().map(|r| r.summary.completion_time).sum::<f64>() / reports.len() as f64;
    println!(
        "{} on {}: mean completion {mean:.3} s over {} batches",
        c.policy,
        topo.dims(),
        reports.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    arrangement: String,
    policy: PlacementPolicy,
    procs: usize,
    t_success: f64,
    hop_bytes: u64,
    dilation: usize,
    congestion: f64,
    analytic_abort_probability: f64,
}

pub fn sweep(c: &ScenarioConfig) -> Result<()> {
    let arrangements: Vec<TorusTopology> = if c.arrangements.is_empty() {
        vec![c.topology()?]
    } else {
        c.arrangements.iter().map(|d| TorusTopology::new(*d)).collect()
    };
    let nodes = arrangements[0].node_count();
    if let Some(t) = arrangements.iter().find(|t| t.node_count() != nodes) {
        bail!(
            "arrangement {} has {} nodes, {} has {nodes}",
            t.dims(),
            t.node_count(),
            arrangements[0].dims()
        );
    }
    let policies = if c.policies.is_empty() {
        PlacementPolicy::ALL.to_vec()
    } else {
        c.policies.clone()
    };
    let job = JobSpec::new(c.traffic()?, c.compute_flops)?;
    let scenario = c.scenario(nodes, 0)?;
    let outage = scenario.outage_vector();
    let mut rows = Vec::new();
    for topo in &arrangements {
        for &policy in &policies {
            let mapping = place(policy, &job.traffic, topo, &outage, &c.placement())?;
            let placed = PlacedJob::new(&job, mapping, topo)?;
            let q = placed.quality;
            rows.push(SweepRow {
                arrangement: topo.dims().to_string(),
                policy,
                procs: job.n_procs(),
                t_success: placed.t_success,
                hop_bytes: q.hop_bytes,
                dilation: q.dilation,
                congestion: q.congestion,
                analytic_abort_probability: analytic_abort_probability(&placed.used, &scenario),
            });
        }
    }
    let out = prepare_out(c)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    println!(
        "{:<10}  {:<10}  {:>12}  {:>12}  {:>8}  {:>12}",
        "topology", "policy", "T_success_s", "hop_bytes", "dilation", "congestion"
    );
    for r in &rows {
        println!(
            "{:<10}  {:<10}  {:>12.6}  {:>12}  {:>8}  {:>12.0}",
            r.arrangement,
            r.policy.to_string(),
            r.t_success,
            r.hop_bytes,
            r.dilation,
            r.congestion
        );
    }
    Ok(())
}
