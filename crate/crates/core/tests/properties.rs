use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::sample::subsequence;

use tofa::comm_graph::{ingest_trace, write_trace, TraceHeader};
use tofa::placement::{find_consecutive_fault_free, mapping_quality, place, place_rb, tofa_place};
use tofa::simulator::{analytic_abort_probability, used_nodes, PlacedJob};
use tofa::torus::{fault_weight_matrix, FAULT_PENALTY};
use tofa::{
    CommGraph, Communicator, FaultScenario, HeartbeatLog, JobSpec, Mapping, OutagePolicy, PlacementOptions,
    PlacementPolicy, TorusDims, TorusTopology, TraceEvent, TrafficMatrix,
};

fn dims() -> impl Strategy<Value = TorusDims> {
    (1usize..=4, 1usize..=4, 1usize..=4).prop_map(|(x, y, z)| TorusDims::new(x, y, z).unwrap())
}

fn topology() -> impl Strategy<Value = TorusTopology> {
    dims().prop_map(TorusTopology::new)
}

/// Traffic over `2..=max_n` processes with random sparse pairs.
fn traffic(max_n: usize) -> impl Strategy<Value = TrafficMatrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n, 1u64..1000), 0..3 * n).prop_map(move |pairs| {
            let mut m = TrafficMatrix::zeros(n);
            let world = Communicator::world(n);
            for (a, b, bytes) in pairs {
                if a != b {
                    m.record_p2p(&world, a, b, bytes).unwrap();
                }
            }
            m
        })
    })
}

/// A torus with at least two nodes and traffic that fits on it.
fn fitted(max_n: usize) -> impl Strategy<Value = (TorusTopology, TrafficMatrix)> {
    topology()
        .prop_filter("need two nodes", |t| t.node_count() >= 2)
        .prop_flat_map(move |t| {
            let cap = max_n.min(t.node_count());
            (Just(t), traffic(cap))
        })
}

fn event(n: usize) -> impl Strategy<Value = TraceEvent> {
    let rank = 0..n;
    prop_oneof![
        (rank.clone(), rank.clone(), 0u64..500)
            .prop_filter("no self sends", |(s, d, _)| s != d)
            .prop_map(|(src, dst, bytes)| TraceEvent::Send {
                comm: 0,
                src,
                dst,
                bytes
            }),
        (rank.clone(), 0u64..500).prop_map(|(root, bytes)| TraceEvent::Bcast { comm: 0, root, bytes }),
        (rank, 0u64..500).prop_map(|(root, bytes)| TraceEvent::Reduce { comm: 0, root, bytes }),
        (0u64..500).prop_map(|bytes| TraceEvent::Allreduce { comm: 0, bytes }),
        (0u64..500).prop_map(|bytes| TraceEvent::Allgather { comm: 0, bytes }),
        (0u64..500).prop_map(|bytes| TraceEvent::Alltoall { comm: 0, bytes }),
        Just(TraceEvent::Barrier { comm: 0 }),
    ]
}

fn with_comm(ev: &TraceEvent, id: u32) -> TraceEvent {
    let mut ev = ev.clone();
    match &mut ev {
        TraceEvent::Send { comm, .. }
        | TraceEvent::Bcast { comm, .. }
        | TraceEvent::Reduce { comm, .. }
        | TraceEvent::Allreduce { comm, .. }
        | TraceEvent::Allgather { comm, .. }
        | TraceEvent::Alltoall { comm, .. }
        | TraceEvent::Barrier { comm } => *comm = id,
    }
    ev
}

fn hop_bytes(m: &Mapping, g: &TrafficMatrix, t: &TorusTopology) -> u64 {
    mapping_quality(m, g, t).unwrap().hop_bytes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routes_are_shortest_adjacent_chains(t in topology(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let (u, v) = (a.index(t.node_count()), b.index(t.node_count()));
        let route = t.route(u, v);
        prop_assert_eq!(route.len(), t.hop_distance(u, v));
        let mut at = u;
        for l in &route.links {
            prop_assert_eq!(l.source, at);
            prop_assert!(t.adjacent(l.source, l.target));
            at = l.target;
        }
        prop_assert_eq!(at, v);
        prop_assert_eq!(route, t.route(u, v));
    }

    #[test]
    fn penalties_only_add(t in topology(), outage in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 64), c in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0, 8.0])) {
        let p = &outage[..t.node_count()];
        let h = fault_weight_matrix(&t, p, c).unwrap();
        let clean = fault_weight_matrix(&t, &vec![0.0; t.node_count()], c).unwrap();
        for u in 0..t.node_count() {
            for v in 0..t.node_count() {
                let hops = t.hop_distance(u, v) as f64;
                prop_assert_eq!(clean.weight(u, v), c * hops);
                prop_assert!(h.weight(u, v) >= c * hops);
                let touching = t.route(u, v).links.iter().filter(|l| p[l.source] > 0.0 || p[l.target] > 0.0).count();
                prop_assert_eq!(h.weight(u, v), c * hops + FAULT_PENALTY * c * touching as f64);
            }
        }
    }

    #[test]
    fn traffic_stays_symmetric(events in (2usize..10).prop_flat_map(|n| (Just(n), prop::collection::vec(event(n), 0..20)))) {
        let (n, events) = events;
        let world = Communicator::world(n);
        let mut m = TrafficMatrix::zeros(n);
        for ev in &events {
            m.apply(ev, &world).unwrap();
        }
        for i in 0..n {
            prop_assert_eq!(m.vol(i, i), 0);
            prop_assert_eq!(m.msg(i, i), 0);
            for j in 0..n {
                prop_assert_eq!(m.vol(i, j), m.vol(j, i));
                prop_assert_eq!(m.msg(i, j), m.msg(j, i));
            }
        }
    }

    #[test]
    fn sub_communicator_matches_translated_world(
        (n, ranks, events) in (3usize..10)
            .prop_flat_map(|n| (Just(n), subsequence((0..n).collect::<Vec<_>>(), 2..=n)))
            .prop_flat_map(|(n, ranks)| (Just(n), Just(ranks.clone()), prop::collection::vec(event(ranks.len()), 1..10)))
            .prop_shuffle_ranks()
    ) {
        let sub = Communicator::new(1, ranks.clone(), n).unwrap();
        let world = Communicator::world(n);
        let mut via_sub = TrafficMatrix::zeros(n);
        let mut via_world = TrafficMatrix::zeros(n);
        for ev in &events {
            via_sub.apply(&with_comm(ev, 1), &sub).unwrap();
            match ev.collective() {
                None => {
                    if let TraceEvent::Send { src, dst, bytes, .. } = *ev {
                        via_world.record_p2p(&world, ranks[src], ranks[dst], bytes).unwrap();
                    }
                }
                Some((kind, root, bytes)) => {
                    for (s, d) in tofa::comm_graph::collective_schedule(kind, ranks.len(), root) {
                        via_world.record_p2p(&world, ranks[s], ranks[d], kind.message_bytes(bytes)).unwrap();
                    }
                }
            }
        }
        prop_assert_eq!(via_sub, via_world);
    }

    #[test]
    fn ingest_ignores_line_order(events in prop::collection::vec(event(6), 0..15), perm_seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let header = TraceHeader { n: 6, communicators: vec![] };
        let mut shuffled = events.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_trace(&a, &header, &events).unwrap();
        write_trace(&b, &header, &shuffled).unwrap();
        prop_assert_eq!(ingest_trace(&a).unwrap(), ingest_trace(&b).unwrap());
    }

    #[test]
    fn engines_are_injective_and_deterministic((t, g) in fitted(12), seed in any::<u64>(), faults in prop::collection::vec(0usize..64, 0..6)) {
        let mut outage = vec![0.0; t.node_count()];
        for f in faults {
            outage[f % t.node_count()] = 0.3;
        }
        let opts = PlacementOptions { seed, ..PlacementOptions::default() };
        for policy in PlacementPolicy::ALL {
            let m = place(policy, &g, &t, &outage, &opts).unwrap();
            prop_assert_eq!(m.len(), g.n());
            prop_assert!(m.validate(t.node_count()).is_ok());
            let distinct: BTreeSet<_> = m.nodes().iter().collect();
            prop_assert_eq!(distinct.len(), g.n());
            prop_assert_eq!(&m, &place(policy, &g, &t, &outage, &opts).unwrap());
        }
    }

    #[test]
    fn tofa_avoids_faulty_nodes_when_a_window_exists(g in traffic(16), seed in any::<u64>(), n_faulty in 0usize..12) {
        let t = TorusTopology::new("4x4x4".parse().unwrap());
        let scenario = FaultScenario::random(64, n_faulty, 0.05, seed).unwrap();
        let outage = scenario.outage_vector();
        prop_assume!(find_consecutive_fault_free(&outage, g.n()).unwrap().is_some());
        let m = tofa_place(&CommGraph::from(&g), &t, &outage, &PlacementOptions::default()).unwrap();
        for &node in m.nodes() {
            prop_assert_eq!(outage[node], 0.0);
        }
    }

    #[test]
    fn tofa_without_faults_equals_rb((t, g) in fitted(10)) {
        let cg = CommGraph::from(&g);
        let rb = place_rb(&cg, &t.hop_graph(1.0).unwrap()).unwrap();
        let tf = tofa_place(&cg, &t, &vec![0.0; t.node_count()], &PlacementOptions::default()).unwrap();
        prop_assert_eq!(hop_bytes(&rb, &g, &t), hop_bytes(&tf, &g, &t));
    }

    #[test]
    fn rb_hop_bytes_survive_relabeling((t, g) in fitted(8), perm_seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let n = g.n();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let h = t.hop_graph(1.0).unwrap();
        let base = place_rb(&CommGraph::from(&g), &h).unwrap();
        let relabeled = place_rb(&CommGraph::from(&g).permuted(&perm), &h).unwrap();
        let back = Mapping::new((0..n).map(|p| relabeled.node_of(perm[p])).collect());
        prop_assert_eq!(hop_bytes(&base, &g, &t), hop_bytes(&back, &g, &t));
    }

    #[test]
    fn quality_metrics_are_sane((t, g) in fitted(10), seed in any::<u64>()) {
        let m = place(PlacementPolicy::Random, &g, &t, &[], &PlacementOptions { seed, ..Default::default() }).unwrap();
        let q = mapping_quality(&m, &g, &t).unwrap();
        prop_assert!(q.dilation <= t.diameter());
        let bytes: u64 = g.communicating_pairs().map(|(i, j)| g.vol(i, j)).sum();
        prop_assert!(q.hop_bytes <= bytes * t.diameter() as u64);
        prop_assert!(q.hop_bytes >= g.communicating_pairs().map(|(i, j)| g.vol(i, j) * u64::from(m.node_of(i) != m.node_of(j))).sum::<u64>());
        prop_assert!(q.congestion <= bytes as f64 + 1e-9);
    }

    #[test]
    fn window_average_matches_recount(beats in prop::collection::vec(prop::collection::vec(any::<bool>(), 0..150), 1..6), window in 1usize..120) {
        let mut log = HeartbeatLog::new(beats.len(), window).unwrap();
        for (node, history) in beats.iter().enumerate() {
            for (t, &answered) in history.iter().enumerate() {
                log.record(node, t as u64, answered).unwrap();
            }
        }
        let est = log.estimate(OutagePolicy::WindowAverage);
        for (node, history) in beats.iter().enumerate() {
            let recent = &history[history.len().saturating_sub(window)..];
            let missed = recent.iter().filter(|a| !**a).count();
            prop_assert_eq!(est.probabilities[node], missed as f64 / window as f64);
            prop_assert_eq!(est.empty_nodes.contains(&node), history.is_empty());
        }
    }

    #[test]
    fn abort_probability_is_monotone(used in prop::collection::btree_set(0usize..64, 0..64), faulty in prop::collection::btree_set(0usize..64, 0..20), extra in 0usize..64, p in 0.0f64..1.0, dp in 0.0f64..0.5) {
        let faulty: Vec<_> = faulty.into_iter().collect();
        let base = FaultScenario::new(64, faulty.clone(), p, 0).unwrap();
        let mut bigger = faulty.clone();
        if !bigger.contains(&extra) {
            bigger.push(extra);
            bigger.sort();
        }
        let wider = FaultScenario::new(64, bigger, p, 0).unwrap();
        let hotter = FaultScenario::new(64, faulty, (p + dp).min(1.0), 0).unwrap();
        let a = analytic_abort_probability(&used, &base);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(analytic_abort_probability(&used, &wider) >= a);
        prop_assert!(analytic_abort_probability(&used, &hotter) >= a);
    }

    #[test]
    fn instance_time_is_attempts_times_success(seed in any::<u64>(), p in 0.0f64..0.6, index in any::<u64>()) {
        let t = TorusTopology::new("4x4x1".parse().unwrap());
        let g = tofa::comm_graph::gen_synthetic(tofa::Synthetic::Band { k: 1 }, 6, 100).unwrap();
        let job = JobSpec::new(g, 1e9).unwrap();
        let placed = PlacedJob::new(&job, Mapping::new((0..6).collect()), &t).unwrap();
        prop_assert_eq!(&placed.used, &used_nodes(&placed.mapping, &job.traffic, &t));
        let s = FaultScenario::random(16, 4, p, seed).unwrap();
        let log = tofa::simulator::simulate_instance(&placed, &s, index, 50);
        prop_assert_eq!(log.time, log.attempts as f64 * placed.t_success);
        prop_assert!(log.attempts >= 1 && log.attempts <= 50);
    }
}

/// Sub-communicator ranks in random order rather than ascending.
trait ShuffleRanks {
    fn prop_shuffle_ranks(self) -> BoxedStrategy<(usize, Vec<usize>, Vec<TraceEvent>)>;
}

impl<S: Strategy<Value = (usize, Vec<usize>, Vec<TraceEvent>)> + 'static> ShuffleRanks for S {
    fn prop_shuffle_ranks(self) -> BoxedStrategy<(usize, Vec<usize>, Vec<TraceEvent>)> {
        self.prop_flat_map(|(n, ranks, events)| (Just(n), Just(ranks).prop_shuffle(), Just(events)))
            .boxed()
    }
}

#[test]
fn abort_ratio_converges_to_analytic() {
    let t = TorusTopology::new("4x4x4".parse().unwrap());
    let g = tofa::comm_graph::gen_synthetic(tofa::Synthetic::Band { k: 2 }, 20, 1000).unwrap();
    let job = JobSpec::new(g, 1e9).unwrap();
    let placed = PlacedJob::new(&job, Mapping::new((0..20).collect()), &t).unwrap();
    let s = FaultScenario::new(64, vec![1, 5, 9, 13, 40], 0.05, 11).unwrap();
    let p = analytic_abort_probability(&placed.used, &s);
    assert!(p > 0.0);
    let trials = 10_000u64;
    let aborted = (0..trials)
        .filter(|&i| tofa::simulator::simulate_instance(&placed, &s, i, 1000).aborted())
        .count() as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!(
        (aborted / trials as f64 - p).abs() <= 3.0 * sigma,
        "observed {} analytic {p}",
        aborted / trials as f64
    );
}

#[test]
fn failure_frequency_converges_to_p_f() {
    let s = FaultScenario::new(32, vec![0, 7, 31], 0.02, 5).unwrap();
    let draws = 20_000u64;
    let mut counts = [0u64; 3];
    let mut total = 0u64;
    for i in 0..draws {
        let failed = s.sample_failed_set(i);
        total += failed.len() as u64;
        for (k, n) in [0, 7, 31].iter().enumerate() {
            counts[k] += u64::from(failed.contains(n));
        }
        assert!(failed.iter().all(|n| s.faulty.contains(n)));
    }
    let sigma = (0.02 * 0.98 / draws as f64).sqrt();
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.02).abs() <= 3.0 * sigma);
    }
    let mean_sigma = (3.0 * 0.02 * 0.98 / draws as f64).sqrt();
    assert!((total as f64 / draws as f64 - 0.06).abs() <= 3.0 * mean_sigma);
}
