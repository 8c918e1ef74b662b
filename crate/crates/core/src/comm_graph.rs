//! Process communication graph: byte-volume and message-count matrices built
//! from traces or synthetic generators.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CommId = u32;

/// Id of the world communicator, always present.
pub const WORLD: CommId = 0;

/// Symmetric byte-volume (`vol`) and message-count (`msg`) matrices over `n`
/// processes. Each entry holds the sum of both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficMatrix {
    vol: Array2<u64>,
    msg: Array2<u64>,
}

impl TrafficMatrix {
    pub fn zeros(n: usize) -> Self {
        TrafficMatrix {
            vol: Array2::zeros((n, n)),
            msg: Array2::zeros((n, n)),
        }
    }

    /// Builds a matrix from explicit volumes and counts, checking symmetry,
    /// zero diagonal and `vol > 0 => msg > 0`.
    pub fn from_parts(vol: Array2<u64>, msg: Array2<u64>) -> Result<Self> {
        let n = vol.nrows();
        if vol.ncols() != n || msg.dim() != (n, n) {
            return Err(Error::InvalidConfig(
                "traffic matrices must be square and equal-sized".into(),
            ));
        }
        for i in 0..n {
            if vol[[i, i]] != 0 || msg[[i, i]] != 0 {
                return Err(Error::InvalidConfig(format!("non-zero diagonal entry at process {i}")));
            }
            for j in 0..n {
                if vol[[i, j]] != vol[[j, i]] || msg[[i, j]] != msg[[j, i]] {
                    return Err(Error::InvalidConfig(format!("asymmetric entry at ({i}, {j})")));
                }
                if vol[[i, j]] > 0 && msg[[i, j]] == 0 {
                    return Err(Error::InvalidConfig(format!("volume without messages at ({i}, {j})")));
                }
            }
        }
        Ok(TrafficMatrix { vol, msg })
    }

    pub fn n(&self) -> usize {
        self.vol.nrows()
    }

    pub fn vol(&self, i: usize, j: usize) -> u64 {
        self.vol[[i, j]]
    }

    pub fn msg(&self, i: usize, j: usize) -> u64 {
        self.msg[[i, j]]
    }

    pub fn volumes(&self) -> &Array2<u64> {
        &self.vol
    }

    pub fn messages(&self) -> &Array2<u64> {
        &self.msg
    }

    /// Sum over the full (symmetric) volume matrix.
    pub fn total_volume(&self) -> u64 {
        self.vol.sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.msg.sum()
    }

    /// Unordered process pairs that exchanged at least one message.
    pub fn communicating_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        (0..n)
            .flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.msg[[i, j]] > 0 || self.vol[[i, j]] > 0)
    }

    fn add_message(&mut self, i: usize, j: usize, bytes: u64) {
        debug_assert_ne!(i, j);
        self.vol[[i, j]] += bytes;
        self.vol[[j, i]] += bytes;
        self.msg[[i, j]] += 1;
        self.msg[[j, i]] += 1;
    }

    /// Records one point-to-point message between communicator ranks.
    pub fn record_p2p(&mut self, comm: &Communicator, src: usize, dst: usize, bytes: u64) -> Result<()> {
        if src == dst {
            return Err(Error::SelfSend(src));
        }
        let (i, j) = (comm.world_rank(src)?, comm.world_rank(dst)?);
        self.check_world(i, comm)?;
        self.check_world(j, comm)?;
        self.add_message(i, j, bytes);
        Ok(())
    }

    /// Adds the pairwise traffic of a collective, following [`collective_schedule`].
    pub fn expand_collective(&mut self, ev: &TraceEvent, comm: &Communicator) -> Result<()> {
        let (kind, root, bytes) = ev.collective().ok_or(Error::NotCollective(ev.kind_name()))?;
        let size = comm.size();
        if root >= size {
            return Err(Error::RankOutOfRange {
                rank: root,
                comm: comm.id,
                size,
            });
        }
        for (src, dst) in collective_schedule(kind, size, root) {
            let (i, j) = (comm.world_rank(src)?, comm.world_rank(dst)?);
            self.check_world(i, comm)?;
            self.check_world(j, comm)?;
            self.add_message(i, j, kind.message_bytes(bytes));
        }
        Ok(())
    }

    /// Applies one trace event.
    pub fn apply(&mut self, ev: &TraceEvent, comm: &Communicator) -> Result<()> {
        match *ev {
            TraceEvent::Send { src, dst, bytes, .. } => self.record_p2p(comm, src, dst, bytes),
            _ => self.expand_collective(ev, comm),
        }
    }

    fn check_world(&self, rank: usize, comm: &Communicator) -> Result<()> {
        if rank >= self.n() {
            return Err(Error::InvalidCommunicator {
                id: comm.id,
                msg: format!("world rank {rank} outside job of {} processes", self.n()),
            });
        }
        Ok(())
    }

    /// Edge-weight view used by the mappers.
    pub fn graph(&self, kind: EdgeWeight) -> CommGraph {
        let m = match kind {
            EdgeWeight::Volume => &self.vol,
            EdgeWeight::Messages => &self.msg,
        };
        CommGraph {
            weight: m.mapv(|v| v as f64),
        }
    }

    pub fn write_csv(&self, vol_path: &Path, msg_path: &Path) -> Result<()> {
        write_matrix_csv(&self.vol, vol_path)?;
        write_matrix_csv(&self.msg, msg_path)
    }

    pub fn read_csv(vol_path: &Path, msg_path: &Path) -> Result<Self> {
        TrafficMatrix::from_parts(read_matrix_csv(vol_path)?, read_matrix_csv(msg_path)?)
    }
}

/// Which matrix supplies communication-graph edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeight {
    #[default]
    Volume,
    Messages,
}

impl FromStr for EdgeWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(EdgeWeight::Volume),
            "messages" => Ok(EdgeWeight::Messages),
            other => Err(Error::InvalidConfig(format!("unknown edge weight `{other}`"))),
        }
    }
}

impl fmt::Display for EdgeWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeWeight::Volume => "volume",
            EdgeWeight::Messages => "messages",
        })
    }
}

/// Symmetric, non-negative process-pair weights (the guest graph `G`).
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    weight: Array2<f64>,
}

impl CommGraph {
    pub fn n(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weight[[i, j]]
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.weight.row(i).sum()
    }

    /// Relabels processes: process `perm[p]` of the result is process `p` here.
    pub fn permuted(&self, perm: &[usize]) -> CommGraph {
        let n = self.n();
        let mut weight = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                weight[[perm[i], perm[j]]] = self.weight[[i, j]];
            }
        }
        CommGraph { weight }
    }
}

impl From<&TrafficMatrix> for CommGraph {
    fn from(m: &TrafficMatrix) -> Self {
        m.graph(EdgeWeight::Volume)
    }
}

/// An MPI communicator as a table from communicator rank to world rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Communicator {
    pub id: CommId,
    pub ranks: Vec<usize>,
}

impl Communicator {
    pub fn world(n: usize) -> Self {
        Communicator {
            id: WORLD,
            ranks: (0..n).collect(),
        }
    }

    pub fn new(id: CommId, ranks: Vec<usize>, world_size: usize) -> Result<Self> {
        let c = Communicator { id, ranks };
        c.validate(world_size)?;
        Ok(c)
    }

    pub fn validate(&self, world_size: usize) -> Result<()> {
        let bad = |msg: String| Error::InvalidCommunicator { id: self.id, msg };
        if self.ranks.is_empty() {
            return Err(bad("no ranks".into()));
        }
        let mut seen = vec![false; world_size];
        for &r in &self.ranks {
            if r >= world_size {
                return Err(bad(format!("world rank {r} outside job of {world_size} processes")));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(bad(format!("world rank {r} listed twice")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.ranks.len()
    }

    pub fn world_rank(&self, rank: usize) -> Result<usize> {
        self.ranks.get(rank).copied().ok_or(Error::RankOutOfRange {
            rank,
            comm: self.id,
            size: self.ranks.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CollectiveKind {
    Bcast,
    Reduce,
    Allreduce,
    Allgather,
    Alltoall,
    Barrier,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 6] = [
        CollectiveKind::Bcast,
        CollectiveKind::Reduce,
        CollectiveKind::Allreduce,
        CollectiveKind::Allgather,
        CollectiveKind::Alltoall,
        CollectiveKind::Barrier,
    ];

    /// Payload of each scheduled message for an event carrying `bytes`.
    pub fn message_bytes(self, bytes: u64) -> u64 {
        match self {
            CollectiveKind::Barrier => 0,
            _ => bytes,
        }
    }
}

/// Point-to-point messages `(src, dst)` (communicator ranks) that the
/// emulated algorithm for `kind` sends on a communicator of `size` ranks.
///
/// | collective       | algorithm                    |
/// |------------------|------------------------------|
/// | bcast, reduce    | binomial tree rooted at root |
/// | allreduce        | recursive doubling           |
/// | allgather        | ring                         |
/// | alltoall         | pairwise exchange            |
/// | barrier          | XOR-partner rounds, 0 bytes  |
///
/// Recursive doubling and the barrier run `ceil(log2 size)` rounds with
/// partner `rank ^ 2^r`, skipping partners `>= size`.
pub fn collective_schedule(kind: CollectiveKind, size: usize, root: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match kind {
        CollectiveKind::Bcast | CollectiveKind::Reduce => {
            let abs = |rel: usize| (rel + root) % size;
            let mut mask = 1;
            while mask < size {
                for rel in 0..mask.min(size) {
                    if rel + mask < size {
                        let (parent, child) = (abs(rel), abs(rel + mask));
                        if kind == CollectiveKind::Bcast {
                            out.push((parent, child));
                        } else {
                            out.push((child, parent));
                        }
                    }
                }
                mask <<= 1;
            }
        }
        CollectiveKind::Allreduce | CollectiveKind::Barrier => {
            let mut mask = 1;
            while mask < size {
                for rank in 0..size {
                    let partner = rank ^ mask;
                    if partner < size {
                        out.push((rank, partner));
                    }
                }
                mask <<= 1;
            }
        }
        CollectiveKind::Allgather => {
            for _step in 1..size {
                for rank in 0..size {
                    out.push((rank, (rank + 1) % size));
                }
            }
        }
        CollectiveKind::Alltoall => {
            for step in 1..size {
                for rank in 0..size {
                    out.push((rank, (rank + step) % size));
                }
            }
        }
    }
    out
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TraceEvent {
    Send {
        #[serde(default)]
        comm: CommId,
        src: usize,
        dst: usize,
        bytes: u64,
    },
    Bcast {
        #[serde(default)]
        comm: CommId,
        root: usize,
        bytes: u64,
    },
    Reduce {
        #[serde(default)]
        comm: CommId,
        root: usize,
        bytes: u64,
    },
    Allreduce {
        #[serde(default)]
        comm: CommId,
        bytes: u64,
    },
    Allgather {
        #[serde(default)]
        comm: CommId,
        bytes: u64,
    },
    Alltoall {
        #[serde(default)]
        comm: CommId,
        bytes: u64,
    },
    Barrier {
        #[serde(default)]
        comm: CommId,
    },
}

impl TraceEvent {
    pub fn comm(&self) -> CommId {
        match *self {
            TraceEvent::Send { comm, .. }
            | TraceEvent::Bcast { comm, .. }
            | TraceEvent::Reduce { comm, .. }
            | TraceEvent::Allreduce { comm, .. }
            | TraceEvent::Allgather { comm, .. }
            | TraceEvent::Alltoall { comm, .. }
            | TraceEvent::Barrier { comm } => comm,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TraceEvent::Send { .. } => "send",
            TraceEvent::Bcast { .. } => "bcast",
            TraceEvent::Reduce { .. } => "reduce",
            TraceEvent::Allreduce { .. } => "allreduce",
            TraceEvent::Allgather { .. } => "allgather",
            TraceEvent::Alltoall { .. } => "alltoall",
            TraceEvent::Barrier { .. } => "barrier",
        }
    }

    /// `(kind, root, bytes)` for collectives; rootless kinds report root 0.
    pub fn collective(&self) -> Option<(CollectiveKind, usize, u64)> {
        Some(match *self {
            TraceEvent::Send { .. } => return None,
            TraceEvent::Bcast { root, bytes, .. } => (CollectiveKind::Bcast, root, bytes),
            TraceEvent::Reduce { root, bytes, .. } => (CollectiveKind::Reduce, root, bytes),
            TraceEvent::Allreduce { bytes, .. } => (CollectiveKind::Allreduce, 0, bytes),
            TraceEvent::Allgather { bytes, .. } => (CollectiveKind::Allgather, 0, bytes),
            TraceEvent::Alltoall { bytes, .. } => (CollectiveKind::Alltoall, 0, bytes),
            TraceEvent::Barrier { .. } => (CollectiveKind::Barrier, 0, 0),
        })
    }
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    /// Number of processes in the world communicator.
    pub n: usize,
    #[serde(default)]
    pub communicators: Vec<Communicator>,
}

/// Folds a JSON-lines trace (header line, then one event per line) into a
/// traffic matrix. Blank lines are skipped.
pub fn ingest_trace(path: &Path) -> Result<TrafficMatrix> {
    let reader = BufReader::new(fs::File::open(path)?);
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
    let header: TraceHeader = serde_json::from_str(&header?).map_err(|e| err(hline, format!("bad header: {e}")))?;
    let mut comms = HashMap::new();
    comms.insert(WORLD, Communicator::world(header.n));
    for c in header.communicators {
        if c.id == WORLD {
            return Err(err(
                hline,
                "communicator 0 is reserved for the world communicator".into(),
            ));
        }
        c.validate(header.n).map_err(|e| err(hline, e.to_string()))?;
        if comms.insert(c.id, c.clone()).is_some() {
            return Err(err(hline, format!("communicator {} declared twice", c.id)));
        }
    }
    let mut m = TrafficMatrix::zeros(header.n);
    for (lineno, line) in lines {
        let ev: TraceEvent = serde_json::from_str(&line?).map_err(|e| err(lineno, e.to_string()))?;
        let comm = comms
            .get(&ev.comm())
            .ok_or_else(|| err(lineno, Error::UnknownCommunicator(ev.comm()).to_string()))?;
        m.apply(&ev, comm).map_err(|e| err(lineno, e.to_string()))?;
    }
    Ok(m)
}

/// Writes a trace file; the inverse of [`ingest_trace`].
pub fn write_trace(path: &Path, header: &TraceHeader, events: &[TraceEvent]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, header)?;
    writeln!(out)?;
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Synthetic communication patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase")]
pub enum Synthetic {
    /// Each process talks to every process within `k` ranks of itself.
    Band { k: usize },
    /// Dense all-to-all inside consecutive groups of `b` processes.
    Block { b: usize },
    /// Sparse random pairs away from the main diagonal (`|i - j| > 2`), each
    /// kept with probability `density` and carrying 1 to 4 messages.
    Irregular { seed: u64, density: f64 },
}

impl Synthetic {
    /// Parses `band:K`, `block:B`, `irregular:DENSITY` or
    /// `irregular:DENSITY:SEED`; `default_seed` fills a missing seed.
    pub fn parse(s: &str, default_seed: u64) -> Result<Self> {
        let bad = || Error::InvalidSynthetic(s.to_string());
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let args: Vec<&str> = parts.collect();
        match (kind, args.as_slice()) {
            ("band", [k]) => Ok(Synthetic::Band {
                k: k.parse().map_err(|_| bad())?,
            }),
            ("block", [b]) => Ok(Synthetic::Block {
                b: b.parse().map_err(|_| bad())?,
            }),
            ("irregular", [d]) => Ok(Synthetic::Irregular {
                seed: default_seed,
                density: d.parse().map_err(|_| bad())?,
            }),
            ("irregular", [d, seed]) => Ok(Synthetic::Irregular {
                seed: seed.parse().map_err(|_| bad())?,
                density: d.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Synthetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Synthetic::Band { k } => write!(f, "band:{k}"),
            Synthetic::Block { b } => write!(f, "block:{b}"),
            Synthetic::Irregular { seed, density } => write!(f, "irregular:{density}:{seed}"),
        }
    }
}

/// Generates a synthetic traffic matrix over `n` processes; each message
/// carries `bytes`.
pub fn gen_synthetic(kind: Synthetic, n: usize, bytes: u64) -> Result<TrafficMatrix> {
    if n < 2 {
        return Err(Error::InvalidSynthetic(format!("need at least 2 processes, got {n}")));
    }
    let mut m = TrafficMatrix::zeros(n);
    match kind {
        Synthetic::Band { k } => {
            if k == 0 || k >= n {
                return Err(Error::InvalidSynthetic(format!("band width {k} must be in [1, {n})")));
            }
            for i in 0..n {
                for j in (i + 1)..=(i + k).min(n - 1) {
                    m.add_message(i, j, bytes);
                }
            }
        }
        Synthetic::Block { b } => {
            if b < 2 || b > n {
                return Err(Error::InvalidSynthetic(format!("block size {b} must be in [2, {n}]")));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    if i / b == j / b {
                        m.add_message(i, j, bytes);
                    }
                }
            }
        }
        Synthetic::Irregular { seed, density } => {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::InvalidSynthetic(format!("density {density} must be in (0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                for j in (i + 3)..n {
                    if rng.gen::<f64>() < density {
                        for _ in 0..rng.gen_range(1..=4) {
                            m.add_message(i, j, bytes);
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Writes `m` as a binary PGM (P5) where darker means more bytes, on a linear
/// scale from 0 (white) to the largest entry (black), plus a CSV sidecar of
/// the raw volumes next to it. Returns the sidecar path.
pub fn emit_heatmap(m: &TrafficMatrix, path: &Path) -> Result<PathBuf> {
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidConfig("cannot draw a heatmap of an empty matrix".into()));
    }
    let max = m.vol.iter().copied().max().unwrap_or(0);
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{n} {n}\n255\n")?;
    let pixels: Vec<u8> = m.vol.iter().map(|&v| heat_pixel(v, max)).collect();
    out.write_all(&pixels)?;
    out.flush()?;
    let sidecar = path.with_extension("csv");
    write_matrix_csv(&m.vol, &sidecar)?;
    Ok(sidecar)
}

fn heat_pixel(v: u64, max: u64) -> u8 {
    if max == 0 {
        return 255;
    }
    let shade = (v as f64 / max as f64 * 255.0).round() as u8;
    255 - shade
}

/// Row-major CSV with the dimension `n` on the first line.
pub fn write_matrix_csv(m: &Array2<u64>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", m.nrows())?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<u64>> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let n: usize = lines
        .next()
        .and_then(|(_, l)| l.trim().parse().ok())
        .ok_or_else(|| err(1, "first line must be the matrix dimension".into()))?;
    let mut m = Array2::zeros((n, n));
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(err(i + 1, format!("more than {n} rows")));
        }
        let vals: Vec<u64> = line
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(i + 1, format!("{e}")))?;
        if vals.len() != n {
            return Err(err(i + 1, format!("expected {n} values, got {}", vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            m[[rows, j]] = v;
        }
        rows += 1;
    }
    if rows != n {
        return Err(err(rows + 1, format!("expected {n} rows, got {rows}")));
    }
    Ok(m)
}
