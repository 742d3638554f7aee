//! Communication graphs and temporal peer activation.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Result};

/// Attempts before `build_regular` gives up.
pub const REGULAR_RETRIES: usize = 10_000;

/// Accuracy on a node's own holdout that unlocks the next waiting peer.
pub const ACTIVATION_THRESHOLD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(n);
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) outside [0, {n})")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            g.adjacency[u].insert(v);
            g.adjacency[v].insert(u);
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Self {
        Self {
            adjacency: (0..n).map(|u| (0..n).filter(|&v| v != u).collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &BTreeSet<usize> {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Undirected edges with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, peers)| peers.range(u + 1..).map(move |&v| (u, v)))
    }

    pub fn is_connected(&self) -> bool {
        if self.adjacency.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// One `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}").expect("writing to a String");
        }
        out
    }

    pub fn parse_edge_list(n: usize, text: &str) -> Result<Self> {
        let edges = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|line| {
                let mut parts = line.split_whitespace().map(str::parse::<usize>);
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(Ok(u)), Some(Ok(v)), None) => Ok((u, v)),
                    _ => Err(Error::Graph(format!("malformed edge line `{line}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_edges(n, edges)
    }
}

/// Random connected `k`-regular simple graph on `n` nodes.
///
/// Uses the pairing model: `n * k` half-edges are matched one pair at a time,
/// only ever joining two half-edges whose nodes are distinct and not yet
/// adjacent. A construction that gets stuck, or that ends disconnected, is
/// thrown away and retried.
pub fn build_regular<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Graph> {
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "regular graph needs 0 < k < n, got n={n}, k={k}"
        )));
    }
    if (n * k) % 2 != 0 {
        return Err(Error::Config(format!(
            "n*k must be even for a {k}-regular graph on {n} nodes"
        )));
    }
    for _ in 0..REGULAR_RETRIES {
        if let Some(g) = try_pairing(n, k, rng) {
            if g.is_connected() {
                return Ok(g);
            }
        }
    }
    Err(Error::Graph(format!(
        "no connected {k}-regular graph on {n} nodes after {REGULAR_RETRIES} attempts"
    )))
}

fn try_pairing<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Option<Graph> {
    let mut points: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat_n(u, k)).collect();
    points.shuffle(rng);
    let mut g = Graph::empty(n);
    while !points.is_empty() {
        let (i, j) = pick_pair(&points, &g, rng)?;
        let (u, v) = (points[i], points[j]);
        g.adjacency[u].insert(v);
        g.adjacency[v].insert(u);
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        points.swap_remove(hi);
        points.swap_remove(lo);
    }
    Some(g)
}

/// A random pair of remaining half-edges that would form a new simple edge,
/// or `None` when the construction is stuck.
fn pick_pair<R: Rng + ?Sized>(points: &[usize], g: &Graph, rng: &mut R) -> Option<(usize, usize)> {
    let admissible = |i: usize, j: usize| {
        let (u, v) = (points[i], points[j]);
        i != j && u != v && !g.adjacency[u].contains(&v)
    };
    for _ in 0..64 {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        if admissible(i, j) {
            return Some((i, j));
        }
    }
    // near the end few pairs remain; enumerate them
    let all: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (i + 1..points.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| admissible(i, j))
        .collect();
    if all.is_empty() {
        None
    } else {
        Some(all[rng.random_range(0..all.len())])
    }
}

/// Node 0 is the hub; every other node links only to it.
pub fn build_star(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::Config(format!("a star needs at least 2 nodes, got {n}")));
    }
    Graph::from_edges(n, (1..n).map(|v| (0, v)))
}

/// Per-node view of a temporally gated neighbourhood: baseline peers start on
/// a waiting list and are activated one at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalState {
    active: BTreeSet<usize>,
    waiting: VecDeque<usize>,
    pub threshold: f64,
}

impl TemporalState {
    /// Every baseline peer starts on the waiting list, in the given order.
    pub fn new(baseline: impl IntoIterator<Item = usize>) -> Self {
        Self {
            active: BTreeSet::new(),
            waiting: baseline.into_iter().collect(),
            threshold: ACTIVATION_THRESHOLD,
        }
    }

    pub fn active(&self) -> &BTreeSet<usize> {
        &self.active
    }

    pub fn waiting(&self) -> impl Iterator<Item = usize> + '_ {
        self.waiting.iter().copied()
    }

    pub fn is_waiting(&self, peer: usize) -> bool {
        self.waiting.contains(&peer)
    }

    /// Moves `peer` from the waiting list to the active set, if it is waiting.
    /// Used when the other endpoint activated the link.
    pub fn force_activate(&mut self, peer: usize) -> bool {
        if let Some(pos) = self.waiting.iter().position(|&p| p == peer) {
            self.waiting.remove(pos);
            self.active.insert(peer);
            true
        } else {
            false
        }
    }
}

/// Called once per training session. At or above the threshold, the head of
/// the waiting list becomes active; returns that peer.
pub fn temporal_activation(state: &mut TemporalState, own_accuracy: f64) -> Option<usize> {
    if own_accuracy < state.threshold {
        return None;
    }
    let peer = state.waiting.pop_front()?;
    state.active.insert(peer);
    Some(peer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn baseline_regular_graph() {
        let g = build_regular(50, 8, &mut substream(1, 0, "g")).unwrap();
        assert_eq!(g.len(), 50);
        assert!((0..50).all(|u| g.degree(u) == 8));
        assert_eq!(g.edge_count(), 200);
        assert!(g.is_connected());
        assert!((0..50).all(|u| !g.neighbors(u).contains(&u)));
    }

    #[test]
    fn only_three_regular_graph_on_four_nodes_is_k4() {
        let g = build_regular(4, 3, &mut substream(2, 0, "g")).unwrap();
        assert_eq!(g, Graph::complete(4));
    }

    #[test]
    fn parity_and_range_errors() {
        let mut rng = substream(3, 0, "g");
        assert!(matches!(build_regular(5, 3, &mut rng), Err(Error::Config(_))));
        assert!(matches!(build_regular(5, 5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(build_regular(5, 0, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn regular_graph_is_deterministic_per_seed() {
        let a = build_regular(30, 4, &mut substream(9, 0, "g")).unwrap();
        let b = build_regular(30, 4, &mut substream(9, 0, "g")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn star_shapes() {
        let g = build_star(50).unwrap();
        assert_eq!(g.degree(0), 49);
        assert!((1..50).all(|u| g.degree(u) == 1));
        assert_eq!(g.edge_count(), 49);
        assert_eq!(build_star(2).unwrap().edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert!(build_star(1).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = build_regular(12, 3, &mut substream(4, 0, "g")).unwrap();
        let text = g.to_edge_list();
        assert_eq!(text.lines().count(), 18);
        assert_eq!(Graph::parse_edge_list(12, &text).unwrap(), g);
        assert!(Graph::parse_edge_list(3, "0 1 2\n").is_err());
        assert!(Graph::parse_edge_list(3, "1 1\n").is_err());
    }

    #[test]
    fn activation_rules() {
        let mut st = TemporalState::new([3, 7]);
        assert_eq!(temporal_activation(&mut st, 0.79), None);
        assert!(st.active().is_empty());
        assert_eq!(temporal_activation(&mut st, 0.85), Some(3));
        assert_eq!(st.active().iter().copied().collect::<Vec<_>>(), vec![3]);
        assert_eq!(st.waiting().collect::<Vec<_>>(), vec![7]);
        assert_eq!(temporal_activation(&mut st, 0.9), Some(7));
        assert_eq!(temporal_activation(&mut st, 0.9), None);
        assert_eq!(st.active().len(), 2);
    }

    #[test]
    fn forced_activation_moves_waiting_peer() {
        let mut st = TemporalState::new([1, 2, 3]);
        assert!(st.force_activate(2));
        assert!(!st.force_activate(2));
        assert_eq!(st.waiting().collect::<Vec<_>>(), vec![1, 3]);
    }
}
