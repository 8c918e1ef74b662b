//! Dual recursive bipartitioning mapper.
//!
//! Processes are first put in a canonical order so the result does not
//! depend on how they are numbered. Mapping then proceeds in three phases:
//!
//! 1. When there are more target vertices than processes, pick the target
//!    subset by packing processes into halves of the id-ordered vertex list,
//!    preferring halves with more fault-free vertices. With no faults this
//!    selects the lowest `n` node ids.
//! 2. Recursively split the selected vertices geometrically (along the
//!    dimension with the most distinct coordinates) and, in lock-step, split
//!    the processes with a graph-growing seed refined by Kernighan-Lin. The
//!    process split accounts for traffic to processes already assigned to
//!    other regions.
//! 3. Polish the result with best-partner swaps on the weighted path cost.

use std::collections::VecDeque;

use super::{check_fits, Mapping};
use crate::comm_graph::CommGraph;
use crate::error::Result;
use crate::torus::{extract_subtopology, TopologyGraph, FAULT_PENALTY};

const KL_MAX_PASSES: usize = 20;
const SWAP_MAX_PASSES: usize = 10;

/// Maps the processes of `g` onto distinct vertices of `h`.
pub fn place_rb(g: &CommGraph, h: &TopologyGraph) -> Result<Mapping> {
    let n = g.n();
    check_fits(n, h.len())?;
    if n == 0 {
        return Ok(Mapping::new(Vec::new()));
    }
    let selected;
    let target = if n < h.len() {
        let keep: Vec<_> = select_targets(h, n).into_iter().map(|i| h.node(i)).collect();
        selected = extract_subtopology(h, &keep)?;
        &selected
    } else {
        h
    };
    let label = canonical_labels(g);
    let canon = g.permuted(&label);
    let mut assign = bipartition_map(&canon, target);
    swap_refine(&canon, target, &mut assign);
    Ok(Mapping::new(label.iter().map(|&l| target.node(assign[l])).collect()))
}

/// Relabels processes by weighted colour refinement so that the mapper sees
/// the same input for every labelling of the same communication graph.
/// Returns the new label of each process.
fn canonical_labels(g: &CommGraph) -> Vec<usize> {
    let n = g.n();
    let mut colour = vec![0usize; n];
    let mut classes = 1;
    loop {
        let signatures: Vec<(usize, Vec<(u64, usize)>)> = (0..n)
            .map(|v| {
                let mut nb: Vec<(u64, usize)> = (0..n)
                    .filter(|&u| u != v && g.weight(v, u) != 0.0)
                    .map(|u| (g.weight(v, u).to_bits(), colour[u]))
                    .collect();
                nb.sort_unstable();
                (colour[v], nb)
            })
            .collect();
        let mut distinct: Vec<&(usize, Vec<(u64, usize)>)> = signatures.iter().collect();
        distinct.sort();
        distinct.dedup();
        colour = signatures.iter().map(|s| distinct.binary_search(&s).unwrap()).collect();
        if distinct.len() == classes {
            break;
        }
        classes = distinct.len();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| colour[v]);
    let mut label = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        label[v] = k;
    }
    label
}

/// A vertex is suspect when every route leaving it pays the fault penalty,
/// i.e. the vertex itself is failure-prone.
fn suspects(h: &TopologyGraph) -> Vec<bool> {
    let c = h.hop_cost();
    (0..h.len())
        .map(|i| {
            h.len() > 1
                && (0..h.len())
                    .filter(|&j| j != i)
                    .all(|j| h.weight(i, j) >= c * (h.hops(i, j) as f64 + FAULT_PENALTY) - 1e-9 * c)
        })
        .collect()
}

fn select_targets(h: &TopologyGraph, n: usize) -> Vec<usize> {
    let suspect = suspects(h);
    let mut by_id: Vec<usize> = (0..h.len()).collect();
    by_id.sort_by_key(|&i| h.node(i));
    let clean = |i: &usize| !suspect[*i];
    let available = by_id.iter().filter(|i| clean(i)).count();
    let mut out = Vec::with_capacity(n);
    if available >= n {
        pack(&by_id, n, &suspect, &mut out);
    } else {
        out.extend(by_id.iter().copied().filter(clean));
        out.extend(by_id.iter().copied().filter(|i| !clean(i)).take(n - available));
    }
    out.sort_by_key(|&i| h.node(i));
    out
}

/// Takes `k` clean vertices from the id-ordered `ids`, filling the half with
/// more clean vertices first (the lower half on ties).
fn pack(ids: &[usize], k: usize, suspect: &[bool], out: &mut Vec<usize>) {
    if k == 0 {
        return;
    }
    let clean = ids.iter().filter(|&&i| !suspect[i]).count();
    debug_assert!(k <= clean);
    if k == clean {
        out.extend(ids.iter().copied().filter(|&i| !suspect[i]));
        return;
    }
    let (lo, hi) = ids.split_at(ids.len().div_ceil(2));
    let clean_lo = lo.iter().filter(|&&i| !suspect[i]).count();
    let clean_hi = clean - clean_lo;
    let (first, first_clean, second) = if clean_hi > clean_lo {
        (hi, clean_hi, lo)
    } else {
        (lo, clean_lo, hi)
    };
    let take = k.min(first_clean);
    pack(first, take, suspect, out);
    pack(second, k - take, suspect, out);
}

struct Region {
    vertices: Vec<usize>,
    rep: usize,
}

impl Region {
    fn new(h: &TopologyGraph, vertices: Vec<usize>) -> Self {
        // medoid under round-trip cost
        let rep = vertices
            .iter()
            .copied()
            .map(|u| (vertices.iter().map(|&v| h.round_trip(u, v)).sum::<f64>(), u))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(h.node(a.1).cmp(&h.node(b.1))))
            .map(|(_, u)| u)
            .expect("regions are never empty");
        Region { vertices, rep }
    }
}

/// Requires `g.n() == h.len()`. Returns the vertex of every process.
fn bipartition_map(g: &CommGraph, h: &TopologyGraph) -> Vec<usize> {
    let n = g.n();
    debug_assert_eq!(n, h.len());
    let mut regions = vec![Region::new(h, (0..h.len()).collect())];
    let mut region_of = vec![0usize; n];
    let mut assign = vec![usize::MAX; n];
    let mut in_job = vec![false; n];
    let mut queue = VecDeque::from([((0..n).collect::<Vec<_>>(), 0usize)]);

    while let Some((procs, r)) = queue.pop_front() {
        if regions[r].vertices.len() == 1 {
            assign[procs[0]] = regions[r].vertices[0];
            continue;
        }
        let (lo, hi) = split_vertices(h, &regions[r].vertices);
        let (r0, r1) = (regions.len(), regions.len() + 1);
        let size0 = lo.len();
        regions.push(Region::new(h, lo));
        regions.push(Region::new(h, hi));
        let (rep0, rep1) = (regions[r0].rep, regions[r1].rep);

        for &p in &procs {
            in_job[p] = true;
        }
        let mut ext = vec![(0.0, 0.0); procs.len()];
        for (k, &p) in procs.iter().enumerate() {
            for q in 0..n {
                let w = g.weight(p, q);
                if w > 0.0 && !in_job[q] {
                    let other = regions[region_of[q]].rep;
                    ext[k].0 += w * h.round_trip(rep0, other);
                    ext[k].1 += w * h.round_trip(rep1, other);
                }
            }
        }
        for &p in &procs {
            in_job[p] = false;
        }

        let distance = h.round_trip(rep0, rep1);
        let side0 = bisect(g, &procs, size0, distance, &ext);
        let (mut a, mut b) = (Vec::with_capacity(size0), Vec::new());
        for (k, &p) in procs.iter().enumerate() {
            if side0[k] {
                region_of[p] = r0;
                a.push(p);
            } else {
                region_of[p] = r1;
                b.push(p);
            }
        }
        queue.push_back((a, r0));
        queue.push_back((b, r1));
    }
    assign
}

/// Splits `vertices` in two along the torus dimension with the most distinct
/// occupied coordinates. Coordinates are ordered cyclically starting after
/// the widest unoccupied gap, so sets that wrap around stay contiguous. The
/// first half gets the extra vertex when the count is odd. Equal-extent
/// dimensions are decided by the smaller total intra-half cost.
fn split_vertices(h: &TopologyGraph, vertices: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let dims = h.dims().as_array();
    let coords: Vec<[usize; 3]> = vertices
        .iter()
        .map(|&v| {
            let c = h.coord(v);
            [c.x, c.y, c.z]
        })
        .collect();
    let mut best: Option<(usize, f64, Vec<usize>, Vec<usize>)> = None;
    for axis in 0..3 {
        let dim = dims[axis];
        let mut occupied = vec![false; dim];
        for c in &coords {
            occupied[c[axis]] = true;
        }
        let extent = occupied.iter().filter(|&&o| o).count();
        if extent < 2 {
            continue;
        }
        let start = cyclic_start(&occupied);
        let mut order: Vec<usize> = (0..vertices.len()).collect();
        order.sort_by_key(|&k| ((coords[k][axis] + dim - start) % dim, h.node(vertices[k])));
        let mid = vertices.len().div_ceil(2);
        let lo: Vec<usize> = order[..mid].iter().map(|&k| vertices[k]).collect();
        let hi: Vec<usize> = order[mid..].iter().map(|&k| vertices[k]).collect();
        let cost = intra_cost(h, &lo) + intra_cost(h, &hi);
        let better = match &best {
            None => true,
            Some((e, c, ..)) => extent > *e || (extent == *e && cost < *c),
        };
        if better {
            best = Some((extent, cost, lo, hi));
        }
    }
    match best {
        Some((_, _, lo, hi)) => (lo, hi),
        // distinct vertices always differ in some coordinate
        None => unreachable!("split of a region with fewer than two distinct coordinates"),
    }
}

/// First occupied coordinate after the widest run of unoccupied ones.
fn cyclic_start(occupied: &[bool]) -> usize {
    let dim = occupied.len();
    if occupied.iter().all(|&o| o) {
        return 0;
    }
    let mut best_len = 0;
    let mut best_start = 0;
    for s in 0..dim {
        // gap starting at s: s unoccupied and s-1 occupied
        if occupied[s] || !occupied[(s + dim - 1) % dim] {
            continue;
        }
        let mut len = 0;
        while !occupied[(s + len) % dim] {
            len += 1;
        }
        if len > best_len {
            best_len = len;
            best_start = (s + len) % dim;
        }
    }
    best_start
}

fn intra_cost(h: &TopologyGraph, set: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (k, &u) in set.iter().enumerate() {
        for &v in &set[k + 1..] {
            sum += h.round_trip(u, v);
        }
    }
    sum
}

/// Splits `procs` into a side of exactly `size0` (flagged `true`) and the
/// rest, minimizing `distance * cut + external costs`, where `ext[k]` holds
/// the cost of placing process `k` on side 0 and side 1 respectively.
fn bisect(g: &CommGraph, procs: &[usize], size0: usize, distance: f64, ext: &[(f64, f64)]) -> Vec<bool> {
    let m = procs.len();
    let w = |a: usize, b: usize| g.weight(procs[a], procs[b]);
    let mut side0 = vec![false; m];
    if size0 >= m {
        return vec![true; m];
    }
    if size0 == 0 {
        return side0;
    }

    // graph growing: repeatedly move the process with the best gain to side 0
    let mut conn0 = vec![0.0; m];
    let mut conn1: Vec<f64> = (0..m)
        .map(|a| (0..m).filter(|&b| b != a).map(|b| w(a, b)).sum())
        .collect();
    for _ in 0..size0 {
        let pick = (0..m)
            .filter(|&a| !side0[a])
            .map(|a| (distance * (conn0[a] - conn1[a]) + ext[a].1 - ext[a].0, a))
            .fold(None::<(f64, usize)>, |best, cand| match best {
                Some(b) if b.0 >= cand.0 => Some(b),
                _ => Some(cand),
            })
            .map(|(_, a)| a)
            .expect("unassigned process remains");
        side0[pick] = true;
        for b in 0..m {
            if b != pick {
                let wb = w(pick, b);
                conn0[b] += wb;
                conn1[b] -= wb;
            }
        }
    }

    let scale =
        distance * (0..m).map(|a| conn0[a] + conn1[a]).sum::<f64>() + ext.iter().map(|e| e.0 + e.1).sum::<f64>();
    let tol = 1e-9 * scale.max(1.0);

    for _ in 0..KL_MAX_PASSES {
        // gain of moving each process to the other side
        let mut gain: Vec<f64> = (0..m)
            .map(|a| {
                let (mut same, mut other) = (0.0, 0.0);
                for b in 0..m {
                    if b == a {
                        continue;
                    }
                    if side0[b] == side0[a] {
                        same += w(a, b);
                    } else {
                        other += w(a, b);
                    }
                }
                let ext_gain = if side0[a] {
                    ext[a].0 - ext[a].1
                } else {
                    ext[a].1 - ext[a].0
                };
                distance * (other - same) + ext_gain
            })
            .collect();
        let mut locked = vec![false; m];
        let mut swaps = Vec::new();
        let mut cumulative = 0.0;
        let mut best_prefix = (0.0, 0usize);
        let steps = size0.min(m - size0);
        for _ in 0..steps {
            let mut left: Vec<usize> = (0..m).filter(|&a| side0[a] && !locked[a]).collect();
            let mut right: Vec<usize> = (0..m).filter(|&b| !side0[b] && !locked[b]).collect();
            let by_gain = |x: &usize, y: &usize| gain[*y].total_cmp(&gain[*x]).then(x.cmp(y));
            left.sort_by(by_gain);
            right.sort_by(by_gain);
            let mut best: Option<(f64, usize, usize)> = None;
            for &a in &left {
                if let Some((bg, ..)) = best {
                    if gain[a] + gain[right[0]] <= bg {
                        break;
                    }
                }
                for &b in &right {
                    let bound = gain[a] + gain[b];
                    if let Some((bg, ..)) = best {
                        if bound <= bg {
                            break;
                        }
                    }
                    let g_ab = bound - 2.0 * distance * w(a, b);
                    if best.is_none_or(|(bg, ..)| g_ab > bg) {
                        best = Some((g_ab, a, b));
                    }
                }
            }
            let (g_ab, a, b) = best.expect("both sides have unlocked processes");
            locked[a] = true;
            locked[b] = true;
            for x in 0..m {
                if locked[x] {
                    continue;
                }
                let delta = 2.0 * distance * (w(x, a) - w(x, b));
                if side0[x] {
                    gain[x] += delta;
                } else {
                    gain[x] -= delta;
                }
            }
            swaps.push((a, b));
            cumulative += g_ab;
            if cumulative > best_prefix.0 + tol {
                best_prefix = (cumulative, swaps.len());
            }
        }
        if best_prefix.1 == 0 {
            break;
        }
        for &(a, b) in &swaps[..best_prefix.1] {
            side0[a] = false;
            side0[b] = true;
        }
    }
    side0
}

/// Swap local search on `sum over pairs of traffic * round-trip cost`.
fn swap_refine(g: &CommGraph, h: &TopologyGraph, assign: &mut [usize]) {
    let n = g.n();
    let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|p| {
            (0..n)
                .filter(|&q| q != p && g.weight(p, q) > 0.0)
                .map(|q| (q, g.weight(p, q)))
                .collect()
        })
        .collect();
    if neighbours.iter().all(Vec::is_empty) {
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g.weighted_degree(b).total_cmp(&g.weighted_degree(a)).then(a.cmp(&b)));

    let cost = |assign: &[usize]| -> f64 {
        (0..n)
            .map(|p| {
                neighbours[p]
                    .iter()
                    .map(|&(q, w)| w * h.round_trip(assign[p], assign[q]))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / 2.0
    };
    let delta = |assign: &[usize], p: usize, q: usize| -> f64 {
        let (vp, vq) = (assign[p], assign[q]);
        let mut d = 0.0;
        for &(k, w) in &neighbours[p] {
            if k != q {
                d += w * (h.round_trip(vq, assign[k]) - h.round_trip(vp, assign[k]));
            }
        }
        for &(k, w) in &neighbours[q] {
            if k != p {
                d += w * (h.round_trip(vp, assign[k]) - h.round_trip(vq, assign[k]));
            }
        }
        d
    };

    for _ in 0..SWAP_MAX_PASSES {
        let tol = 1e-9 * cost(assign).max(1.0);
        let mut improved = false;
        for &p in &order {
            let mut best: Option<(f64, usize)> = None;
            for q in 0..n {
                if q == p {
                    continue;
                }
                let d = delta(assign, p, q);
                if d < -tol && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, q));
                }
            }
            if let Some((_, q)) = best {
                assign.swap(p, q);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}
