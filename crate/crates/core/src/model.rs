//! Domain types and the directed, weighted forwarding graph.
//!
//! An edge `source -> destination` records that `destination` (a group or
//! channel) posted content originally authored by `source`. Parallel forwards
//! between the same pair aggregate into the edge weight.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    User,
    Group,
    Channel,
    #[default]
    Unknown,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Group => "group",
            EntityKind::Channel => "channel",
            EntityKind::Unknown => "unknown",
        }
    }

    /// Precedence used when the same handle is observed with different kinds.
    /// Any known kind beats `Unknown`; among known kinds the broadcast-most
    /// kind wins so the merge is independent of record order.
    fn precedence(self) -> u8 {
        match self {
            EntityKind::Unknown => 0,
            EntityKind::User => 1,
            EntityKind::Group => 2,
            EntityKind::Channel => 3,
        }
    }

    pub fn merge(self, other: EntityKind) -> EntityKind {
        if other.precedence() > self.precedence() {
            other
        } else {
            self
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "user" | "bot" => Ok(EntityKind::User),
            "group" | "supergroup" | "megagroup" => Ok(EntityKind::Group),
            "channel" | "broadcast" => Ok(EntityKind::Channel),
            "" | "unknown" => Ok(EntityKind::Unknown),
            other => Err(Error::Parse(format!("unknown entity kind {other:?}"))),
        }
    }
}

/// Canonical identity of a handle: leading `@` stripped, ASCII-lowercased.
pub fn canonical_id(username: &str) -> String {
    username.trim().trim_start_matches('@').to_lowercase()
}

/// A handle is public unless it is empty or a bare numeric identifier
/// (Telegram peers without a username surface as their numeric id).
pub fn is_public_handle(username: &str) -> bool {
    let h = username.trim().trim_start_matches('@');
    let digits = h.strip_prefix('-').unwrap_or(h);
    !h.is_empty() && !digits.chars().all(|c| c.is_ascii_digit())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Lowercased handle; unique within a graph.
    pub id: String,
    /// Handle as it appeared in the data (lexicographically smallest spelling
    /// when several casings were observed).
    pub username: String,
    pub kind: EntityKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub message_id: String,
    pub chat: String,
    pub chat_kind: EntityKind,
    pub posted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_source: Option<String>,
    #[serde(default)]
    pub forward_source_kind: EntityKind,
}

impl ForwardRecord {
    /// The forward source, if present and non-empty.
    pub fn source(&self) -> Option<&str> {
        self.forward_source.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }

    pub fn is_forward(&self) -> bool {
        self.source().is_some()
    }
}

/// Username -> kind lookup consulted while building a graph.
#[derive(Clone, Debug, Default)]
pub struct KindRegistry {
    kinds: HashMap<String, EntityKind>,
}

impl KindRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry populated from the kinds carried by the records themselves.
    pub fn from_records(records: &[ForwardRecord]) -> Self {
        let mut reg = Self::new();
        for r in records {
            reg.observe(&r.chat, r.chat_kind);
            if let Some(src) = r.source() {
                reg.observe(src, r.forward_source_kind);
            }
        }
        reg
    }

    pub fn observe(&mut self, username: &str, kind: EntityKind) {
        let slot = self.kinds.entry(canonical_id(username)).or_default();
        *slot = slot.merge(kind);
    }

    pub fn kind_of(&self, username: &str) -> EntityKind {
        self.kinds
            .get(&canonical_id(username))
            .copied()
            .unwrap_or(EntityKind::Unknown)
    }

    /// Number of public handles whose merged kind is `User`.
    pub fn user_handles(&self) -> usize {
        self.kinds
            .iter()
            .filter(|(id, k)| **k == EntityKind::User && is_public_handle(id))
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: u64,
}

impl Edge {
    pub fn is_self_loop(&self) -> bool {
        self.source == self.target
    }
}

/// Records rejected while building a graph, keyed by reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildTally {
    pub edge_records: u64,
    pub rejected: BTreeMap<String, u64>,
}

impl BuildTally {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

/// Immutable directed weighted graph. Nodes are sorted by id and edges by
/// `(source, target)`, so two graphs built from the same record multiset are
/// equal regardless of input order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ForwardGraph {
    nodes: Vec<Entity>,
    edges: Vec<Edge>,
    // CSR over `edges` (already sorted by source) and over the in-edges.
    out_offsets: Vec<usize>,
    in_offsets: Vec<usize>,
    in_edges: Vec<usize>,
    index: HashMap<String, usize>,
}

impl ForwardGraph {
    /// Aggregates records into a graph. Records captured in a `User` chat are
    /// rejected (private chats are never part of the network); records with an
    /// empty chat are rejected as malformed.
    pub fn build(records: &[ForwardRecord], registry: &KindRegistry) -> (ForwardGraph, BuildTally) {
        let mut tally = BuildTally::default();
        let mut names: BTreeMap<String, String> = BTreeMap::new();
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();

        let note_name = |names: &mut BTreeMap<String, String>, raw: &str| -> String {
            let id = canonical_id(raw);
            let display = raw.trim().trim_start_matches('@').to_string();
            names
                .entry(id.clone())
                .and_modify(|cur| {
                    if display < *cur {
                        *cur = display.clone();
                    }
                })
                .or_insert(display);
            id
        };

        for r in records {
            if canonical_id(&r.chat).is_empty() {
                *tally.rejected.entry("empty chat".into()).or_default() += 1;
                continue;
            }
            if r.chat_kind == EntityKind::User {
                *tally.rejected.entry("user chat".into()).or_default() += 1;
                continue;
            }
            let chat = note_name(&mut names, &r.chat);
            if let Some(src) = r.source() {
                let src = note_name(&mut names, src);
                *pairs.entry((src, chat)).or_default() += 1;
                tally.edge_records += 1;
            }
        }

        let nodes: Vec<Entity> = names
            .into_iter()
            .map(|(id, username)| Entity {
                kind: registry.kind_of(&id),
                id,
                username,
            })
            .collect();
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        let edges = pairs
            .into_iter()
            .map(|((s, t), weight)| Edge {
                source: index[&s],
                target: index[&t],
                weight,
            })
            .collect();
        (Self::assemble(nodes, edges, index), tally)
    }

    /// Builds a graph from explicit nodes and `(source id, target id, weight)`
    /// triples. Duplicate pairs are summed; zero weights and unknown ids are
    /// errors.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = Entity>,
        edges: impl IntoIterator<Item = (String, String, u64)>,
    ) -> Result<ForwardGraph> {
        let mut by_id: BTreeMap<String, Entity> = BTreeMap::new();
        for mut e in nodes {
            e.id = canonical_id(&e.id);
            if by_id.insert(e.id.clone(), e.clone()).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id {:?}", e.id)));
            }
        }
        let nodes: Vec<Entity> = by_id.into_values().collect();
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        let mut pairs: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (s, t, w) in edges {
            if w == 0 {
                return Err(Error::InvalidGraph(format!("edge {s} -> {t} has zero weight")));
            }
            let lookup = |id: &str| {
                index
                    .get(&canonical_id(id))
                    .copied()
                    .ok_or_else(|| Error::InvalidGraph(format!("edge references unknown node {id:?}")))
            };
            *pairs.entry((lookup(&s)?, lookup(&t)?)).or_default() += w;
        }
        let edges = pairs
            .into_iter()
            .map(|((source, target), weight)| Edge { source, target, weight })
            .collect();
        Ok(Self::assemble(nodes, edges, index))
    }

    fn assemble(nodes: Vec<Entity>, edges: Vec<Edge>, index: HashMap<String, usize>) -> ForwardGraph {
        let n = nodes.len();
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_counts = vec![0usize; n + 1];
        for e in &edges {
            out_offsets[e.source + 1] += 1;
            in_counts[e.target + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_counts[i + 1] += in_counts[i];
        }
        let in_offsets = in_counts.clone();
        let mut cursor = in_counts;
        let mut in_edges = vec![0usize; edges.len()];
        for (k, e) in edges.iter().enumerate() {
            in_edges[cursor[e.target]] = k;
            cursor[e.target] += 1;
        }
        ForwardGraph {
            nodes,
            edges,
            out_offsets,
            in_offsets,
            in_edges,
            index,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn nodes(&self) -> &[Entity] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Entity {
        &self.nodes[idx]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, username: &str) -> Option<usize> {
        self.index.get(&canonical_id(username)).copied()
    }

    pub fn weight(&self, source: &str, target: &str) -> Option<u64> {
        let (s, t) = (self.index_of(source)?, self.index_of(target)?);
        self.out_edges(s).find(|e| e.target == t).map(|e| e.weight)
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges[self.out_offsets[node]..self.out_offsets[node + 1]].iter()
    }

    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.in_edges[self.in_offsets[node]..self.in_offsets[node + 1]]
            .iter()
            .map(move |&k| &self.edges[k])
    }

    /// Distinct neighbours in either direction, self excluded, ascending.
    pub fn neighbors_undirected(&self, node: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .out_edges(node)
            .map(|e| e.target)
            .chain(self.in_edges(node).map(|e| e.source))
            .filter(|&m| m != node)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Out-adjacency with self-loops removed, as plain index lists.
    pub fn successor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.node_count())
            .map(|v| {
                self.out_edges(v)
                    .filter(|e| !e.is_self_loop())
                    .map(|e| e.target)
                    .collect()
            })
            .collect()
    }

    /// Subgraph induced on the nodes for which `keep` is true, weights intact.
    pub fn induced_subgraph(&self, keep: &[bool]) -> ForwardGraph {
        assert_eq!(keep.len(), self.node_count());
        let nodes: Vec<Entity> = self
            .nodes
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.clone())
            .collect();
        let edges = self.edges.iter().filter(|e| keep[e.source] && keep[e.target]).map(|e| {
            (
                self.nodes[e.source].id.clone(),
                self.nodes[e.target].id.clone(),
                e.weight,
            )
        });
        ForwardGraph::from_parts(nodes, edges).expect("subgraph of a valid graph is valid")
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> ForwardGraph {
        assert!(factor > 0);
        let mut g = self.clone();
        for e in &mut g.edges {
            e.weight *= factor;
        }
        g
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    /// Distinct in-neighbours, self-loops excluded.
    pub in_degree: u32,
    /// Distinct out-neighbours, self-loops excluded.
    pub out_degree: u32,
    pub weighted_in: u64,
    pub weighted_out: u64,
    /// Forwarded-message occurrences touching the node: `weighted_in + weighted_out`.
    pub f: u64,
    pub betweenness: f64,
}

/// Per-node degree accounting, indexed like `graph.nodes()`. Betweenness is
/// left at zero.
pub fn degrees(graph: &ForwardGraph) -> Vec<NodeMetrics> {
    let mut out = vec![NodeMetrics::default(); graph.node_count()];
    for e in graph.edges() {
        out[e.source].weighted_out += e.weight;
        out[e.target].weighted_in += e.weight;
        if !e.is_self_loop() {
            out[e.source].out_degree += 1;
            out[e.target].in_degree += 1;
        }
    }
    for m in &mut out {
        m.f = m.weighted_in + m.weighted_out;
    }
    out
}

/// Largest induced subgraph in which every node has `f >= min_f`.
///
/// Dropping a node lowers `f` of its neighbours, so a single pass can leave
/// nodes below the threshold; the filter is repeated until nothing changes,
/// which also makes it idempotent.
pub fn filter_min_frequency(graph: &ForwardGraph, min_f: u64) -> ForwardGraph {
    let mut current = graph.clone();
    loop {
        let keep: Vec<bool> = degrees(&current).iter().map(|m| m.f >= min_f).collect();
        if keep.iter().all(|&k| k) {
            return current;
        }
        current = current.induced_subgraph(&keep);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(chat: &str, src: Option<&str>) -> ForwardRecord {
        ForwardRecord {
            message_id: String::new(),
            chat: chat.into(),
            chat_kind: EntityKind::Group,
            posted_at: DateTime::from_timestamp(0, 0).unwrap(),
            forward_source: src.map(Into::into),
            forward_source_kind: EntityKind::Channel,
        }
    }

    fn build(records: &[ForwardRecord]) -> ForwardGraph {
        ForwardGraph::build(records, &KindRegistry::from_records(records)).0
    }

    #[test]
    fn aggregates_parallel_forwards() {
        let g = build(&[rec("G", Some("A")), rec("G", Some("A")), rec("G", Some("B"))]);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.weight("A", "G"), Some(2));
        assert_eq!(g.weight("B", "G"), Some(1));
        assert_eq!(g.weight("G", "A"), None);
        assert_eq!(g.node(g.index_of("a").unwrap()).kind, EntityKind::Channel);
        assert_eq!(g.node(g.index_of("g").unwrap()).kind, EntityKind::Group);
    }

    #[test]
    fn non_forward_creates_only_chat_node() {
        let g = build(&[rec("G", None), rec("G", Some("  "))]);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn empty_input_is_empty_graph() {
        let (g, tally) = ForwardGraph::build(&[], &KindRegistry::new());
        assert!(g.is_empty());
        assert_eq!(tally.rejected_total(), 0);
    }

    #[test]
    fn user_chat_is_rejected_and_tallied() {
        let mut r = rec("someone", Some("A"));
        r.chat_kind = EntityKind::User;
        let (g, tally) = ForwardGraph::build(&[r, rec("G", Some("A"))], &KindRegistry::new());
        assert_eq!(g.node_count(), 2);
        assert_eq!(tally.rejected["user chat"], 1);
        assert_eq!(tally.edge_records, 1);
    }

    #[test]
    fn handles_are_case_insensitive() {
        let g = build(&[rec("G", Some("OsPatriotas")), rec("g", Some("@ospatriotas"))]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.weight("ospatriotas", "G"), Some(2));
        assert_eq!(g.node(g.index_of("ospatriotas").unwrap()).username, "OsPatriotas");
    }

    #[test]
    fn degree_hand_count() {
        let g = build(&[rec("G", Some("A")), rec("G", Some("A")), rec("G", Some("B"))]);
        let d = degrees(&g);
        let a = d[g.index_of("A").unwrap()];
        let gm = d[g.index_of("G").unwrap()];
        assert_eq!((a.out_degree, a.weighted_out, a.f), (1, 2, 2));
        assert_eq!((gm.in_degree, gm.weighted_in, gm.f), (2, 3, 3));
    }

    #[test]
    fn isolated_node_has_zero_metrics() {
        let g = build(&[rec("G", None)]);
        assert_eq!(degrees(&g)[0], NodeMetrics::default());
    }

    #[test]
    fn self_loops_kept_but_not_in_unique_degree() {
        let g = build(&[rec("A", Some("A")), rec("B", Some("A"))]);
        assert_eq!(g.weight("A", "A"), Some(1));
        let d = degrees(&g)[g.index_of("A").unwrap()];
        assert_eq!((d.in_degree, d.out_degree), (0, 1));
        assert_eq!((d.weighted_in, d.weighted_out, d.f), (1, 2, 3));
    }

    #[test]
    fn filter_identity_and_empty() {
        let g = build(&[rec("G", Some("A")), rec("G", Some("A")), rec("G", Some("B"))]);
        assert_eq!(filter_min_frequency(&g, 0), g);
        assert!(filter_min_frequency(&g, u64::MAX).is_empty());
        let f3 = filter_min_frequency(&g, 2);
        assert_eq!(f3.node_count(), 2);
        assert_eq!(f3.weight("A", "G"), Some(2));
    }

    #[test]
    fn filter_cascades_to_a_fixed_point() {
        let g2 = build(&[
            rec("G", Some("A")),
            rec("G", Some("A")),
            rec("C", Some("B")),
            rec("D", Some("C")),
            rec("D", Some("C")),
        ]);
        // B has f = 1 and goes; C then drops from 3 to 2 and stays.
        let f = filter_min_frequency(&g2, 2);
        assert_eq!(
            f.nodes().iter().map(|n| n.id.as_str()).collect::<Vec<_>>(),
            ["a", "c", "d", "g"]
        );
        let f3 = filter_min_frequency(&g2, 3);
        // At 3 only C survives the first pass, and alone it has f = 0.
        assert_eq!(
            f3.nodes().iter().map(|n| n.id.as_str()).collect::<Vec<_>>(),
            Vec::<&str>::new()
        );
        assert_eq!(filter_min_frequency(&f3, 3), f3);
    }

    #[test]
    fn public_handles() {
        assert!(is_public_handle("OsPatriotas"));
        assert!(is_public_handle("@u_00ff"));
        assert!(!is_public_handle("1234567"));
        assert!(!is_public_handle("-1001234567"));
        assert!(!is_public_handle("  "));
    }

    #[test]
    fn from_parts_rejects_bad_edges() {
        let n = |id: &str| Entity {
            id: id.into(),
            username: id.into(),
            kind: EntityKind::Channel,
        };
        assert!(ForwardGraph::from_parts([n("a")], [("a".into(), "b".into(), 1)]).is_err());
        assert!(ForwardGraph::from_parts([n("a"), n("b")], [("a".into(), "b".into(), 0)]).is_err());
        assert!(ForwardGraph::from_parts([n("a"), n("a")], []).is_err());
    }

    #[test]
    fn kind_merge_is_order_free() {
        use EntityKind::*;
        for a in [User, Group, Channel, Unknown] {
            for b in [User, Group, Channel, Unknown] {
                assert_eq!(a.merge(b), b.merge(a));
            }
        }
        assert_eq!(Unknown.merge(User), User);
    }
}
