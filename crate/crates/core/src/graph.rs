//! Communication topology and doubly stochastic consensus weights.
//!
//! Graphs are undirected: every edge carries messages both ways, and the
//! weight matrix is built with the Metropolis rule, which is symmetric and
//! therefore row- and column-stochastic at once.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NesError, Result};

/// Tolerance for the row/column stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n_agents: usize,
    adjacency: Vec<Vec<bool>>,
    weights: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Neighbors of `i`, excluding `i` itself, in ascending order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Unordered edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_agents {
            for &j in &self.neighbors[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Lists every violated weight-matrix property; empty when the graph
    /// satisfies all of them.
    pub fn stochasticity_violations(&self) -> Vec<String> {
        let n = self.n_agents;
        let mut out = Vec::new();
        for i in 0..n {
            let row: f64 = self.weights.row(i).iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                out.push(format!("row sums: row {i} sums to {row}"));
            }
            let col: f64 = self.weights.column(i).iter().sum();
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                out.push(format!("column sums: column {i} sums to {col}"));
            }
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w < 0.0 {
                    out.push(format!("negative weight a[{i}][{j}] = {w}"));
                }
                if w > 0.0 && i != j && !self.adjacency[i][j] {
                    out.push(format!("weight a[{i}][{j}] on a missing edge"));
                }
            }
        }
        out
    }
}

fn check_square_symmetric(adjacency: &[Vec<bool>]) -> Result<()> {
    let n = adjacency.len();
    for (i, row) in adjacency.iter().enumerate() {
        if row.len() != n {
            return Err(NesError::DimensionMismatch(format!(
                "adjacency row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if row[i] {
            return Err(NesError::InvalidArgument(format!("self-loop on node {i}")));
        }
        for j in 0..i {
            if row[j] != adjacency[j][i] {
                return Err(NesError::InvalidArgument(format!(
                    "adjacency not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn reachable(adjacency: &[Vec<bool>], start: usize, forward: bool) -> usize {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let linked = if forward {
                adjacency[u][v]
            } else {
                adjacency[v][u]
            };
            if linked && !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

/// True iff every node reaches every other node along directed edges.
///
/// One search forward and one backward from node 0 suffice. An empty graph is
/// not connected; a single node is.
pub fn is_strongly_connected(adjacency: &[Vec<bool>]) -> bool {
    let n = adjacency.len();
    if n == 0 || adjacency.iter().any(|r| r.len() != n) {
        return false;
    }
    reachable(adjacency, 0, true) == n && reachable(adjacency, 0, false) == n
}

/// Metropolis–Hastings weights: `a_ij = 1 / (1 + max(deg_i, deg_j))` on each
/// edge and the remainder on the diagonal.
pub fn metropolis_weights(adjacency: &[Vec<bool>]) -> Result<CommGraph> {
    check_square_symmetric(adjacency)?;
    let n = adjacency.len();
    if n == 0 {
        return Err(NesError::InvalidArgument("graph has no nodes".into()));
    }
    if !is_strongly_connected(adjacency) {
        return Err(NesError::Disconnected);
    }
    let neighbors: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|row| (0..n).filter(|&j| row[j]).collect())
        .collect();
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in &neighbors[i] {
            let deg = neighbors[i].len().max(neighbors[j].len());
            weights[(i, j)] = 1.0 / (1.0 + deg as f64);
        }
    }
    for i in 0..n {
        let off: f64 = neighbors[i].iter().map(|&j| weights[(i, j)]).sum();
        weights[(i, i)] = 1.0 - off;
    }
    Ok(CommGraph {
        n_agents: n,
        adjacency: adjacency.to_vec(),
        weights,
        neighbors,
    })
}

/// Ring where node `i` talks to `i±1, …, i±neighbors_per_side` (mod n).
///
/// `2 * neighbors_per_side` may equal `n`, in which case the two antipodal
/// offsets coincide (this is how the 2-node path arises).
pub fn build_ring(n: usize, neighbors_per_side: usize) -> Result<CommGraph> {
    if n < 2 {
        return Err(NesError::InvalidArgument(format!(
            "ring needs at least 2 nodes, got {n}"
        )));
    }
    if neighbors_per_side == 0 || 2 * neighbors_per_side > n {
        return Err(NesError::InvalidArgument(format!(
            "{neighbors_per_side} neighbors per side does not fit a ring of {n}"
        )));
    }
    let mut adjacency = vec![vec![false; n]; n];
    for i in 0..n {
        for off in 1..=neighbors_per_side {
            let j = (i + off) % n;
            adjacency[i][j] = true;
            adjacency[j][i] = true;
        }
    }
    metropolis_weights(&adjacency)
}

pub fn build_complete(n: usize) -> Result<CommGraph> {
    if n == 0 {
        return Err(NesError::InvalidArgument("graph has no nodes".into()));
    }
    let adjacency = (0..n)
        .map(|i| (0..n).map(|j| i != j).collect())
        .collect::<Vec<Vec<bool>>>();
    metropolis_weights(&adjacency)
}

pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<CommGraph> {
    let mut adjacency = vec![vec![false; n]; n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(NesError::IndexOutOfRange {
                index: i.max(j),
                n_agents: n,
            });
        }
        if i == j {
            return Err(NesError::InvalidArgument(format!("self-loop on node {i}")));
        }
        adjacency[i][j] = true;
        adjacency[j][i] = true;
    }
    metropolis_weights(&adjacency)
}

/// Edges whose messages are lost, in both directions, for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutMask {
    pub step: usize,
    pub dropped_edges: BTreeSet<(usize, usize)>,
    pub rng_seed: u64,
}

impl DropoutMask {
    pub fn empty(step: usize, rng_seed: u64) -> Self {
        Self {
            step,
            dropped_edges: BTreeSet::new(),
            rng_seed,
        }
    }

    pub fn is_dropped(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.dropped_edges.contains(&key)
    }

    pub fn len(&self) -> usize {
        self.dropped_edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dropped_edges.is_empty()
    }
}

/// Generator for round `step` of a run seeded with `seed`. Each round reads
/// its own ChaCha stream so masks do not depend on how many rounds ran before.
pub fn round_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Drops `round(drop_fraction * |edges|)` distinct edges chosen uniformly.
pub fn apply_dropout(
    graph: &CommGraph,
    drop_fraction: f64,
    step: usize,
    seed: u64,
) -> Result<DropoutMask> {
    if !(0.0..=1.0).contains(&drop_fraction) {
        return Err(NesError::InvalidArgument(format!(
            "drop fraction {drop_fraction} outside [0, 1]"
        )));
    }
    let edges = graph.edges();
    let count = (drop_fraction * edges.len() as f64).round() as usize;
    if count == 0 {
        return Ok(DropoutMask::empty(step, seed));
    }
    let mut rng = round_rng(seed, step);
    let dropped_edges = index::sample(&mut rng, edges.len(), count)
        .into_iter()
        .map(|k| edges[k])
        .collect();
    Ok(DropoutMask {
        step,
        dropped_edges,
        rng_seed: seed,
    })
}
