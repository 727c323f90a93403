//! File exports: GEXF 1.2 graphs plus key-user reports (CSV/JSON) and DOT.
//!
//! Every writer orders its output deterministically (nodes by id, edges by
//! `(source, target)`) and formats floats with the shortest representation
//! that parses back to the same value, so exports are byte-stable.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use quick_xml::XmlVersion;
use serde::{Deserialize, Serialize};

use crate::classify::{Role, RoleAssignment};
use crate::community::Partition;
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::metrics::MetricsTable;
use crate::model::ForwardGraph;

const GEXF_NS: &str = "http://www.gexf.net/1.2draft";
const VIZ_NS: &str = "http://www.gexf.net/1.2draft/viz";
pub const MIN_NODE_SIZE: f64 = 4.0;
pub const MAX_NODE_SIZE: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One line of the key-user report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyUserRow {
    #[serde(rename = "Channel")]
    pub channel: String,
    #[serde(rename = "Type")]
    pub role: Role,
    pub f: u64,
    pub in_degree: u32,
    pub out_degree: u32,
    pub betweenness: f64,
    pub community: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GexfNode {
    pub id: String,
    pub label: String,
    pub kind: String,
    pub f: u64,
    pub in_degree: u32,
    pub out_degree: u32,
    pub betweenness: f64,
    pub community: usize,
    pub role: String,
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GexfEdge {
    pub source: String,
    pub target: String,
    pub weight: u64,
}

/// In-memory form of the GEXF documents this crate writes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GexfDocument {
    pub nodes: Vec<GexfNode>,
    pub edges: Vec<GexfEdge>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::CoverageMismatch(format!(
            "{what} covers {got} nodes, graph has {want}"
        )));
    }
    Ok(())
}

/// Node size on a linear scale from [`MIN_NODE_SIZE`] (zero betweenness) to
/// [`MAX_NODE_SIZE`] (the largest betweenness in the graph).
pub fn node_size(betweenness: f64, max_betweenness: f64) -> f64 {
    if max_betweenness > 0.0 {
        MIN_NODE_SIZE + (MAX_NODE_SIZE - MIN_NODE_SIZE) * betweenness / max_betweenness
    } else {
        MIN_NODE_SIZE
    }
}

/// Role of every node; nodes without an assignment get [`Role::None`].
pub fn role_lookup(graph: &ForwardGraph, roles: &[RoleAssignment]) -> Result<Vec<Role>> {
    let mut out = vec![Role::None; graph.node_count()];
    for a in roles {
        let i = graph
            .index_of(&a.entity)
            .ok_or_else(|| Error::CoverageMismatch(format!("role for unknown node {:?}", a.entity)))?;
        out[i] = a.role;
    }
    Ok(out)
}

impl GexfDocument {
    pub fn from_analysis(
        graph: &ForwardGraph,
        metrics: &MetricsTable,
        partition: &Partition,
        roles: &[RoleAssignment],
        layout: &Layout,
    ) -> Result<GexfDocument> {
        let n = graph.node_count();
        check_len("metrics", metrics.rows.len(), n)?;
        check_len("partition", partition.labels.len(), n)?;
        check_len("layout", layout.coordinates.len(), n)?;
        let role = role_lookup(graph, roles)?;
        let max_bc = metrics.rows.iter().map(|m| m.betweenness).fold(0.0, f64::max);
        let nodes = graph
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let m = &metrics.rows[i];
                GexfNode {
                    id: e.id.clone(),
                    label: e.username.clone(),
                    kind: e.kind.to_string(),
                    f: m.f,
                    in_degree: m.in_degree,
                    out_degree: m.out_degree,
                    betweenness: m.betweenness,
                    community: partition.labels[i],
                    role: role[i].label().to_string(),
                    x: layout.coordinates[i].0,
                    y: layout.coordinates[i].1,
                    size: node_size(m.betweenness, max_bc),
                }
            })
            .collect();
        let edges = graph
            .edges()
            .iter()
            .map(|e| GexfEdge {
                source: graph.node(e.source).id.clone(),
                target: graph.node(e.target).id.clone(),
                weight: e.weight,
            })
            .collect();
        Ok(GexfDocument { nodes, edges })
    }

    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(s, r#"<gexf xmlns="{GEXF_NS}" xmlns:viz="{VIZ_NS}" version="1.2">"#);
        s.push_str("  <meta>\n    <creator>tgnet</creator>\n  </meta>\n");
        s.push_str("  <graph defaultedgetype=\"directed\" mode=\"static\">\n");
        s.push_str("    <attributes class=\"node\" mode=\"static\">\n");
        for (id, ty) in [
            ("kind", "string"),
            ("f", "long"),
            ("in_degree", "integer"),
            ("out_degree", "integer"),
            ("betweenness", "double"),
            ("community", "integer"),
            ("role", "string"),
        ] {
            let _ = writeln!(s, r#"      <attribute id="{id}" title="{id}" type="{ty}"/>"#);
        }
        s.push_str("    </attributes>\n    <nodes>\n");
        for n in &self.nodes {
            let _ = writeln!(s, r#"      <node id="{}" label="{}">"#, escape(&n.id), escape(&n.label));
            s.push_str("        <attvalues>\n");
            let values = [
                ("kind", escape(&n.kind).into_owned()),
                ("f", n.f.to_string()),
                ("in_degree", n.in_degree.to_string()),
                ("out_degree", n.out_degree.to_string()),
                ("betweenness", n.betweenness.to_string()),
                ("community", n.community.to_string()),
                ("role", escape(&n.role).into_owned()),
            ];
            for (k, v) in values {
                let _ = writeln!(s, r#"          <attvalue for="{k}" value="{v}"/>"#);
            }
            s.push_str("        </attvalues>\n");
            let _ = writeln!(s, r#"        <viz:size value="{}"/>"#, n.size);
            let _ = writeln!(s, r#"        <viz:position x="{}" y="{}" z="0"/>"#, n.x, n.y);
            s.push_str("      </node>\n");
        }
        s.push_str("    </nodes>\n    <edges>\n");
        for (k, e) in self.edges.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"      <edge id="{k}" source="{}" target="{}" weight="{}"/>"#,
                escape(&e.source),
                escape(&e.target),
                e.weight
            );
        }
        s.push_str("    </edges>\n  </graph>\n</gexf>\n");
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_xml().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<GexfDocument> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(xml: &str) -> Result<GexfDocument> {
        let mut reader = Reader::from_str(xml);
        let mut doc = GexfDocument::default();
        let mut current: Option<GexfNode> = None;
        let mut saw_root = false;
        loop {
            let event = reader.read_event().map_err(|e| Error::Gexf(e.to_string()))?;
            match event {
                Event::Start(ref e) | Event::Empty(ref e) => {
                    let attrs = attributes(e)?;
                    let get = |k: &str| {
                        attrs
                            .get(k)
                            .cloned()
                            .ok_or_else(|| Error::Gexf(format!("missing attribute {k:?}")))
                    };
                    match e.local_name().as_ref() {
                        "gexf" => saw_root = true,
                        "node" => {
                            let node = GexfNode {
                                id: get("id")?,
                                label: attrs.get("label").cloned().unwrap_or_default(),
                                kind: String::new(),
                                f: 0,
                                in_degree: 0,
                                out_degree: 0,
                                betweenness: 0.0,
                                community: 0,
                                role: String::new(),
                                x: 0.0,
                                y: 0.0,
                                size: 0.0,
                            };
                            if matches!(event, Event::Empty(_)) {
                                doc.nodes.push(node);
                            } else {
                                current = Some(node);
                            }
                        }
                        "attvalue" => {
                            let node = current
                                .as_mut()
                                .ok_or_else(|| Error::Gexf("attvalue outside node".into()))?;
                            let v = get("value")?;
                            match get("for")?.as_str() {
                                "kind" => node.kind = v,
                                "f" => node.f = num(&v)?,
                                "in_degree" => node.in_degree = num(&v)?,
                                "out_degree" => node.out_degree = num(&v)?,
                                "betweenness" => node.betweenness = num(&v)?,
                                "community" => node.community = num(&v)?,
                                "role" => node.role = v,
                                _ => {}
                            }
                        }
                        "size" => {
                            if let Some(node) = current.as_mut() {
                                node.size = num(&get("value")?)?;
                            }
                        }
                        "position" => {
                            if let Some(node) = current.as_mut() {
                                node.x = num(&get("x")?)?;
                                node.y = num(&get("y")?)?;
                            }
                        }
                        "edge" => doc.edges.push(GexfEdge {
                            source: get("source")?,
                            target: get("target")?,
                            weight: attrs.get("weight").map(|w| num(w)).transpose()?.unwrap_or(1),
                        }),
                        _ => {}
                    }
                }
                Event::End(ref e) if e.local_name().as_ref() == "node" => {
                    if let Some(node) = current.take() {
                        doc.nodes.push(node);
                    }
                }
                Event::Eof => break,
                _ => {}
            }
        }
        if !saw_root {
            return Err(Error::Gexf("missing <gexf> root element".into()));
        }
        Ok(doc)
    }
}

fn attributes(e: &BytesStart<'_>) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Gexf(err.to_string()))?;
        let key = a.key.local_name().as_ref().to_string();
        let value = a
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| Error::Gexf(err.to_string()))?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Gexf(format!("bad number {s:?}")))
}

pub fn write_gexf(
    graph: &ForwardGraph,
    metrics: &MetricsTable,
    partition: &Partition,
    roles: &[RoleAssignment],
    layout: &Layout,
    path: impl AsRef<Path>,
) -> Result<()> {
    GexfDocument::from_analysis(graph, metrics, partition, roles, layout)?.write(path)
}

/// Report rows for every key user (role other than `None`), in the order of
/// `roles` (descending `f`).
pub fn key_user_rows(
    graph: &ForwardGraph,
    metrics: &MetricsTable,
    partition: &Partition,
    roles: &[RoleAssignment],
) -> Result<Vec<KeyUserRow>> {
    check_len("metrics", metrics.rows.len(), graph.node_count())?;
    check_len("partition", partition.labels.len(), graph.node_count())?;
    roles
        .iter()
        .filter(|a| a.role.is_key_user())
        .map(|a| {
            let i = graph
                .index_of(&a.entity)
                .ok_or_else(|| Error::CoverageMismatch(format!("role for unknown node {:?}", a.entity)))?;
            let m = &metrics.rows[i];
            Ok(KeyUserRow {
                channel: graph.node(i).username.clone(),
                role: a.role,
                f: m.f,
                in_degree: m.in_degree,
                out_degree: m.out_degree,
                betweenness: m.betweenness,
                community: partition.labels[i],
            })
        })
        .collect()
}

pub fn write_report(rows: &[KeyUserRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record([
                "Channel",
                "Type",
                "f",
                "in_degree",
                "out_degree",
                "betweenness",
                "community",
            ])?;
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner().map_err(|e| Error::io(path, e.into_error()))?
        }
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(rows)?;
            v.push(b'\n');
            v
        }
    };
    write_file(path, &bytes)
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<KeyUserRow>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => csv::Reader::from_reader(bytes.as_slice())
            .deserialize()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(Error::from),
        ReportFormat::Json => Ok(serde_json::from_slice(&bytes)?),
    }
}

pub fn role_color(role: Role) -> &'static str {
    match role {
        Role::ConversationStarter => "#e41a1c",
        Role::Influencer => "#377eb8",
        Role::ActiveEngager => "#4daf4a",
        Role::NetworkCreator => "#984ea3",
        Role::InformationBridge => "#ff7f00",
        Role::None => "#d9d9d9",
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_dot(graph: &ForwardGraph, roles: &[RoleAssignment]) -> Result<String> {
    let role = role_lookup(graph, roles)?;
    let mut s = String::from("digraph {\n");
    for (i, n) in graph.nodes().iter().enumerate() {
        let _ = writeln!(
            s,
            "  {} [label={}, style=filled, fillcolor=\"{}\"];",
            dot_quote(&n.id),
            dot_quote(&n.username),
            role_color(role[i])
        );
    }
    for e in graph.edges() {
        let _ = writeln!(
            s,
            "  {} -> {} [weight={w}, label=\"{w}\"];",
            dot_quote(&graph.node(e.source).id),
            dot_quote(&graph.node(e.target).id),
            w = e.weight
        );
    }
    s.push_str("}\n");
    Ok(s)
}

pub fn write_dot(graph: &ForwardGraph, roles: &[RoleAssignment], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), to_dot(graph, roles)?.as_bytes())
}
