//! Louvain community detection on the undirected projection of the
//! forwarding graph.
//!
//! The projection sums both directions of an edge pair into one undirected
//! weight. A self-loop of weight `w` counts once towards intra-community
//! weight and `2w` towards its node's degree.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardGraph;

/// Smallest modularity improvement accepted for a move.
pub const MIN_GAIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Community of each node, aligned with `graph.nodes()`; dense, relabelled
    /// by first occurrence.
    pub labels: Vec<usize>,
    pub community_count: usize,
    pub modularity: f64,
}

impl Partition {
    pub fn assignment(&self, graph: &ForwardGraph) -> BTreeMap<String, usize> {
        graph
            .nodes()
            .iter()
            .zip(&self.labels)
            .map(|(n, &c)| (n.id.clone(), c))
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.community_count];
        for &c in &self.labels {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Weighted undirected graph used by the optimiser. Each non-loop edge is
/// stored in both endpoint lists.
#[derive(Clone, Debug)]
pub struct Projection {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    strength: Vec<f64>,
    two_m: f64,
}

impl Projection {
    pub fn from_graph(graph: &ForwardGraph) -> Self {
        let n = graph.node_count();
        let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut self_loops = vec![0.0; n];
        for e in graph.edges() {
            let w = e.weight as f64;
            if e.is_self_loop() {
                self_loops[e.source] += w;
            } else {
                let key = (e.source.min(e.target), e.source.max(e.target));
                *pairs.entry(key).or_default() += w;
            }
        }
        Self::from_pairs(n, pairs, self_loops)
    }

    fn from_pairs(n: usize, pairs: BTreeMap<(usize, usize), f64>, self_loops: Vec<f64>) -> Self {
        let mut adj = vec![Vec::new(); n];
        let mut strength: Vec<f64> = self_loops.iter().map(|w| 2.0 * w).collect();
        for ((a, b), w) in pairs {
            adj[a].push((b, w));
            adj[b].push((a, w));
            strength[a] += w;
            strength[b] += w;
        }
        let two_m = strength.iter().sum();
        Projection {
            adj,
            self_loops,
            strength,
            two_m,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Modularity of `labels` (any label values) at resolution `gamma`.
    pub fn modularity(&self, labels: &[usize], gamma: f64) -> f64 {
        if self.two_m == 0.0 {
            return 0.0;
        }
        let mut inside: HashMap<usize, f64> = HashMap::new();
        let mut total: HashMap<usize, f64> = HashMap::new();
        for i in 0..self.node_count() {
            let c = labels[i];
            *total.entry(c).or_default() += self.strength[i];
            let mut w_in = 2.0 * self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                if labels[j] == c {
                    w_in += w;
                }
            }
            *inside.entry(c).or_default() += w_in;
        }
        // Sum in a fixed order so the result is reproducible.
        let mut keys: Vec<usize> = total.keys().copied().collect();
        keys.sort_unstable();
        keys.iter()
            .map(|c| {
                let tot = total[c] / self.two_m;
                inside.get(c).copied().unwrap_or(0.0) / self.two_m - gamma * tot * tot
            })
            .sum()
    }

    /// Collapses communities into single nodes; returns the coarse graph and
    /// the dense community index of every fine node.
    fn aggregate(&self, labels: &[usize]) -> (Projection, Vec<usize>) {
        let dense = relabel(labels);
        let k = dense.iter().max().map_or(0, |m| m + 1);
        let mut self_loops = vec![0.0; k];
        let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for i in 0..self.node_count() {
            let ci = dense[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                if j < i {
                    continue;
                }
                let cj = dense[j];
                if ci == cj {
                    self_loops[ci] += w;
                } else {
                    *pairs.entry((ci.min(cj), ci.max(cj))).or_default() += w;
                }
            }
        }
        (Projection::from_pairs(k, pairs, self_loops), dense)
    }

    /// Repeated single-node moves until a full sweep changes nothing.
    /// Returns whether any node moved.
    fn local_moving(&self, labels: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) -> bool {
        let n = self.node_count();
        if self.two_m == 0.0 {
            return false;
        }
        let m = self.two_m / 2.0;
        let mut total = vec![0.0; n];
        let mut members = vec![0usize; n];
        for i in 0..n {
            total[labels[i]] += self.strength[i];
            members[labels[i]] += 1;
        }
        let mut free: Vec<usize> = (0..n).filter(|&c| members[c] == 0).rev().collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any_move = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let own = labels[i];
                let k_i = self.strength[i];
                for &(j, w) in &self.adj[i] {
                    let c = labels[j];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                total[own] -= k_i;
                let gain = |link_c: f64, tot_c: f64| link_c - gamma * tot_c * k_i / self.two_m;
                let stay = gain(link[own], total[own]);

                let mut best = own;
                let mut best_gain = stay;
                touched.sort_unstable();
                for &c in &touched {
                    let g = gain(link[c], total[c]);
                    if g > best_gain || (g == best_gain && c < best) {
                        best = c;
                        best_gain = g;
                    }
                }
                // Leaving for an empty community gains nothing but sheds the
                // expected-weight penalty of staying.
                if members[own] > 1 && 0.0 > best_gain && (0.0 - stay) / m > MIN_GAIN {
                    best = *free.last().expect("a label is free while a community has two members");
                    best_gain = 0.0;
                }

                if best != own && (best_gain - stay) / m > MIN_GAIN {
                    if members[best] == 0 {
                        free.pop();
                    }
                    members[own] -= 1;
                    members[best] += 1;
                    if members[own] == 0 {
                        free.push(own);
                    }
                    labels[i] = best;
                    total[best] += k_i;
                    moved = true;
                } else {
                    total[own] += k_i;
                }
                for &c in &touched {
                    link[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
            any_move = true;
        }
        any_move
    }
}

/// Dense relabelling by first occurrence.
fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Modularity of an id -> community assignment. Every node of the graph must
/// be assigned.
pub fn modularity(graph: &ForwardGraph, assignment: &BTreeMap<String, usize>, resolution: f64) -> Result<f64> {
    let labels = graph
        .nodes()
        .iter()
        .map(|n| {
            assignment
                .get(&n.id)
                .copied()
                .ok_or_else(|| Error::MissingNode(n.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(modularity_of_labels(graph, &labels, resolution))
}

/// Modularity of node-aligned labels.
pub fn modularity_of_labels(graph: &ForwardGraph, labels: &[usize], resolution: f64) -> f64 {
    assert_eq!(labels.len(), graph.node_count(), "one label per node");
    Projection::from_graph(graph).modularity(labels, resolution)
}

/// Louvain: local moving followed by aggregation, repeated while the coarse
/// level improves; the result is then polished by local moving on the
/// original nodes (and re-coarsened if that moved anything) so no single
/// node can improve modularity by switching community.
pub fn louvain(graph: &ForwardGraph, resolution: f64, seed: u64) -> Result<Partition> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph("louvain"));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Config(format!("resolution must be positive, got {resolution}")));
    }
    let base = Projection::from_graph(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..base.node_count()).collect();

    loop {
        // Coarse levels, starting from the current partition.
        let (mut level, mut fine_to_level) = base.aggregate(&labels);
        loop {
            let mut level_labels: Vec<usize> = (0..level.node_count()).collect();
            if !level.local_moving(&mut level_labels, resolution, &mut rng) {
                break;
            }
            let (next, dense) = level.aggregate(&level_labels);
            for c in fine_to_level.iter_mut() {
                *c = dense[*c];
            }
            level = next;
        }
        labels = fine_to_level;
        if !base.local_moving(&mut labels, resolution, &mut rng) {
            break;
        }
    }

    let labels = relabel(&labels);
    let community_count = labels.iter().max().map_or(0, |m| m + 1);
    let modularity = base.modularity(&labels, resolution);
    Ok(Partition {
        labels,
        community_count,
        modularity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Entity, EntityKind};

    fn undirected(n: usize, edges: &[(usize, usize)]) -> ForwardGraph {
        let nodes = (0..n).map(|i| Entity {
            id: format!("n{i:03}"),
            username: format!("n{i:03}"),
            kind: EntityKind::Channel,
        });
        let edges = edges.iter().map(|&(a, b)| (format!("n{a:03}"), format!("n{b:03}"), 1));
        ForwardGraph::from_parts(nodes, edges).unwrap()
    }

    #[test]
    fn one_community_is_zero() {
        let g = undirected(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
        assert!(modularity_of_labels(&g, &[0; 4], 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_triangles() {
        let g = undirected(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]);
        assert_eq!(modularity_of_labels(&g, &[0, 0, 0, 1, 1, 1], 1.0), 0.5);
    }

    #[test]
    fn singletons_negative() {
        let g = undirected(3, &[(0, 1), (1, 2)]);
        // k = (1,2,1), 2m = 4: Q = -(1/16 + 4/16 + 1/16)
        let q = modularity_of_labels(&g, &[0, 1, 2], 1.0);
        assert!((q + 6.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn self_loop_counts_once() {
        // a-a loop (w=1) and a-b (w=1): k_a = 3, k_b = 1, 2m = 4.
        let g = ForwardGraph::from_parts(
            ["a", "b"].map(|s| Entity {
                id: s.into(),
                username: s.into(),
                kind: EntityKind::Channel,
            }),
            [("a".into(), "a".into(), 1), ("a".into(), "b".into(), 1)],
        )
        .unwrap();
        // {a},{b}: (2/4 - 9/16) + (0 - 1/16) = -1/8
        assert!((modularity_of_labels(&g, &[0, 1], 1.0) + 0.125).abs() < 1e-15);
    }

    #[test]
    fn missing_assignment_is_error() {
        let g = undirected(2, &[(0, 1)]);
        let partial: BTreeMap<String, usize> = [("n000".to_string(), 0)].into();
        assert!(matches!(modularity(&g, &partial, 1.0), Err(Error::MissingNode(_))));
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(louvain(&ForwardGraph::default(), 1.0, 0).is_err());
    }

    #[test]
    fn single_edge_never_below_singletons() {
        let g = undirected(2, &[(0, 1)]);
        let p = louvain(&g, 1.0, 3).unwrap();
        assert!(p.modularity >= modularity_of_labels(&g, &[0, 1], 1.0));
        assert_eq!(p.labels, vec![0, 0]);
        assert_eq!(p.modularity, 0.0);
    }

    #[test]
    fn cliques_split_at_any_seed() {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for a in 0..4 {
                for b in a + 1..4 {
                    edges.push((base + a, base + b));
                }
            }
        }
        edges.push((3, 4));
        let g = undirected(8, &edges);
        for seed in 0..20 {
            let p = louvain(&g, 1.0, seed).unwrap();
            assert_eq!(p.labels, vec![0, 0, 0, 0, 1, 1, 1, 1], "seed {seed}");
        }
    }

    #[test]
    fn edgeless_graph_stays_singleton() {
        let g = undirected(3, &[]);
        let p = louvain(&g, 1.0, 0).unwrap();
        assert_eq!(p.community_count, 3);
        assert_eq!(p.modularity, 0.0);
    }

    #[test]
    fn relabel_first_occurrence() {
        assert_eq!(relabel(&[5, 2, 5, 9, 2]), vec![0, 1, 0, 2, 1]);
    }
}
