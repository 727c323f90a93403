//! Betweenness centrality and the per-node metrics table.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{degrees, ForwardGraph, NodeMetrics};

/// Sources handled per parallel task. Fixed so the merge order, and hence
/// the floating-point sum, does not depend on the thread count.
const SOURCES_PER_TASK: usize = 64;

/// Directed, hop-count, unnormalized betweenness indexed like
/// `graph.nodes()`. Edge weights and self-loops are ignored.
pub fn betweenness(graph: &ForwardGraph) -> Vec<f64> {
    betweenness_from_successors(&graph.successor_lists())
}

/// Brandes' algorithm over plain successor lists (duplicates not allowed).
pub fn betweenness_from_successors(succ: &[Vec<usize>]) -> Vec<f64> {
    let n = succ.len();
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCES_PER_TASK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut scratch = Scratch::new(n);
            for &s in chunk {
                scratch.accumulate(succ, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut bc = vec![0.0; n];
    for part in partials {
        for (b, p) in bc.iter_mut().zip(part) {
            *b += p;
        }
    }
    bc
}

struct Scratch {
    dist: Vec<i64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    preds: Vec<Vec<usize>>,
    order: Vec<usize>,
    queue: VecDeque<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            dist: vec![-1; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
            preds: vec![Vec::new(); n],
            order: Vec::with_capacity(n),
            queue: VecDeque::new(),
        }
    }

    /// One BFS from `s` followed by dependency back-propagation.
    fn accumulate(&mut self, succ: &[Vec<usize>], s: usize, acc: &mut [f64]) {
        for &v in &self.order {
            self.dist[v] = -1;
            self.sigma[v] = 0.0;
            self.delta[v] = 0.0;
            self.preds[v].clear();
        }
        self.order.clear();

        self.dist[s] = 0;
        self.sigma[s] = 1.0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.order.push(v);
            for &w in &succ[v] {
                if self.dist[w] < 0 {
                    self.dist[w] = self.dist[v] + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
        for &w in self.order.iter().rev() {
            let coeff = (1.0 + self.delta[w]) / self.sigma[w];
            for &v in &self.preds[w] {
                self.delta[v] += self.sigma[v] * coeff;
            }
            if w != s {
                acc[w] += self.delta[w];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub total_weight: u64,
}

impl GraphStats {
    pub fn of(graph: &ForwardGraph) -> Self {
        GraphStats {
            nodes: graph.node_count(),
            edges: graph.edge_count(),
            total_weight: graph.total_weight(),
        }
    }
}

/// Degree accounting plus betweenness for every node, rows aligned with
/// `graph.nodes()`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<NodeMetrics>,
    pub graph_stats: GraphStats,
}

impl MetricsTable {
    pub fn get<'a>(&'a self, graph: &ForwardGraph, username: &str) -> Option<&'a NodeMetrics> {
        graph.index_of(username).and_then(|i| self.rows.get(i))
    }
}

pub fn metrics_table(graph: &ForwardGraph) -> MetricsTable {
    let mut rows = degrees(graph);
    for (row, bc) in rows.iter_mut().zip(betweenness(graph)) {
        row.betweenness = bc;
    }
    MetricsTable {
        rows,
        graph_stats: GraphStats::of(graph),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_of_three() {
        let succ = vec![vec![1], vec![2], vec![]];
        assert_eq!(betweenness_from_successors(&succ), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn split_paths_share_credit() {
        // 0 -> {1,2} -> 3: two shortest paths, each middle node gets 1/2.
        let succ = vec![vec![1, 2], vec![3], vec![3], vec![]];
        assert_eq!(betweenness_from_successors(&succ), vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn directed_cycle() {
        // Each node is interior to one 2-hop path and two 3-hop paths.
        let succ = vec![vec![1], vec![2], vec![3], vec![0]];
        assert_eq!(betweenness_from_successors(&succ), vec![3.0; 4]);
    }

    #[test]
    fn empty_graph_table() {
        let t = metrics_table(&ForwardGraph::default());
        assert!(t.rows.is_empty());
        assert_eq!(t.graph_stats, GraphStats::default());
    }

    #[test]
    fn chunked_merge_is_thread_count_independent() {
        // Enough nodes to span several chunks.
        let n = 300;
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                vec![(i + 1) % n, (i * 7 + 3) % n]
                    .into_iter()
                    .filter(|&j| j != i)
                    .collect()
            })
            .map(|mut v: Vec<usize>| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let a = betweenness_from_successors(&succ);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| betweenness_from_successors(&succ));
        assert_eq!(a, b);
    }
}
