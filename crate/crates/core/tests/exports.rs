//! Export formats and the pipeline manifest on fixtures with known content.

use std::collections::BTreeMap;
use std::fs;

use tgnet::classify::{classify, Role, RoleConfig};
use tgnet::community::{louvain, Partition};
use tgnet::export::{
    key_user_rows, read_report, to_dot, write_gexf, write_report, GexfDocument, KeyUserRow, ReportFormat,
};
use tgnet::ingest::{write_ndjson, InputFormat};
use tgnet::layout::{yifan_hu, Layout, LayoutParams};
use tgnet::metrics::metrics_table;
use tgnet::pipeline::{run_pipeline_with_key, InputSpec, Manifest, RunConfig};
use tgnet::synth::{self, CorpusScale, KEY_USERS};
use tgnet::{Entity, EntityKind, ForwardGraph};

struct Analysed {
    graph: ForwardGraph,
    doc: GexfDocument,
    rows: Vec<KeyUserRow>,
}

fn analyse(graph: ForwardGraph) -> Analysed {
    let metrics = metrics_table(&graph);
    let part = louvain(&graph, 1.0, 0).unwrap();
    let roles = classify(&graph, &metrics, &RoleConfig::default()).unwrap();
    let layout = yifan_hu(
        &graph,
        &LayoutParams {
            max_iterations: 100,
            ..LayoutParams::default()
        },
    )
    .unwrap();
    let doc = GexfDocument::from_analysis(&graph, &metrics, &part, &roles, &layout).unwrap();
    let rows = key_user_rows(&graph, &metrics, &part, &roles).unwrap();
    Analysed { graph, doc, rows }
}

#[test]
fn empty_graph_gexf_parses_back_empty() {
    let g = ForwardGraph::default();
    let metrics = metrics_table(&g);
    let part = Partition {
        labels: vec![],
        community_count: 0,
        modularity: 0.0,
    };
    let layout = Layout {
        coordinates: vec![],
        iterations_used: 0,
        initial_energy: 0.0,
        final_energy: 0.0,
        converged: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.gexf");
    write_gexf(&g, &metrics, &part, &[], &layout, &path).unwrap();
    let doc = GexfDocument::read(&path).unwrap();
    assert!(doc.nodes.is_empty() && doc.edges.is_empty());
}

#[test]
fn three_node_graph_round_trips() {
    let g = ForwardGraph::from_parts(
        [
            ("alpha", EntityKind::Channel),
            ("beta", EntityKind::Group),
            ("gamma", EntityKind::Channel),
        ]
        .map(|(s, k)| Entity {
            id: s.into(),
            username: s.to_uppercase(),
            kind: k,
        }),
        [("alpha", "beta", 3), ("gamma", "beta", 1), ("alpha", "gamma", 2)]
            .map(|(s, t, w)| (s.to_string(), t.to_string(), w)),
    )
    .unwrap();
    let a = analyse(g);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.gexf");
    a.doc.write(&path).unwrap();
    let back = GexfDocument::read(&path).unwrap();
    assert_eq!(back, a.doc);
    let attrs: BTreeMap<&str, (&str, u64)> = back
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), (n.kind.as_str(), n.f)))
        .collect();
    assert_eq!(attrs["alpha"], ("channel", 5));
    assert_eq!(attrs["beta"], ("group", 4));
    assert_eq!(back.edges.iter().map(|e| e.weight).sum::<u64>(), 6);
}

#[test]
fn key_user_fixture_exports_agree() {
    let a = analyse(synth::key_user_graph());
    let roles: BTreeMap<&str, &str> = a.doc.nodes.iter().map(|n| (n.id.as_str(), n.role.as_str())).collect();
    for k in &KEY_USERS {
        assert_eq!(
            roles[k.channel.to_lowercase().as_str()],
            k.role.label(),
            "{}",
            k.channel
        );
    }
    // Report: key users only, by descending f, led by the f = 1491 starter.
    assert_eq!(a.rows.len(), 8);
    assert_eq!(
        (a.rows[0].channel.as_str(), a.rows[0].role, a.rows[0].f),
        ("jairbolsonarobrasil", Role::ConversationStarter, 1491)
    );
    assert!(a.rows.windows(2).all(|w| w[0].f >= w[1].f));
    // Every report row carries the same attributes as its GEXF node.
    let nodes: BTreeMap<&str, _> = a.doc.nodes.iter().map(|n| (n.label.as_str(), n)).collect();
    for r in &a.rows {
        let n = nodes[r.channel.as_str()];
        assert_eq!(
            (
                r.role.label(),
                r.f,
                r.in_degree,
                r.out_degree,
                r.betweenness,
                r.community
            ),
            (
                n.role.as_str(),
                n.f,
                n.in_degree,
                n.out_degree,
                n.betweenness,
                n.community
            )
        );
    }
    // DOT: one node statement per node.
    let roles_out = classify(&a.graph, &metrics_table(&a.graph), &RoleConfig::default()).unwrap();
    let dot = to_dot(&a.graph, &roles_out).unwrap();
    let node_lines = dot.lines().filter(|l| l.contains("fillcolor")).count();
    assert_eq!(node_lines, a.graph.node_count());
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), a.graph.edge_count());
}

#[test]
fn report_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    write_report(&[], &csv, ReportFormat::Csv).unwrap();
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "Channel,Type,f,in_degree,out_degree,betweenness,community\n"
    );
    assert!(read_report(&csv, ReportFormat::Csv).unwrap().is_empty());

    let row = KeyUserRow {
        channel: "Some, \"quoted\" channel".into(),
        role: Role::InformationBridge,
        f: 1234567,
        in_degree: 3,
        out_degree: 9,
        betweenness: 22562.4203,
        community: 4,
    };
    write_report(std::slice::from_ref(&row), &csv, ReportFormat::Csv).unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(
        text.contains("1234567,3,9,22562.4203,4"),
        "no grouping, '.' decimals: {text}"
    );
    assert_eq!(read_report(&csv, ReportFormat::Csv).unwrap(), vec![row.clone()]);

    let json = dir.path().join("r.json");
    write_report(std::slice::from_ref(&row), &json, ReportFormat::Json).unwrap();
    assert_eq!(read_report(&json, ReportFormat::Json).unwrap(), vec![row]);
}

#[test]
fn manifest_counts_equal_planted_counts() {
    let scale = CorpusScale {
        seed_groups: 5,
        candidate_users: 6,
        candidate_groups: 2,
        candidate_channels: 9,
        candidate_unknown: 1,
        wave1_records: 9_000,
        wave2_records: 4_000,
        forwards: 6_000,
        entities: 220,
        pairs: 700,
        threshold: 50,
    };
    let corpus = synth::two_wave_corpus(scale, 5);
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("all.ndjson");
    write_ndjson(&corpus.records(), &input).unwrap();
    let cfg = RunConfig {
        inputs: vec![InputSpec {
            path: input,
            format: InputFormat::Ndjson,
        }],
        expansion_threshold: Some(50),
        output_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let run = run_pipeline_with_key(&cfg, b"manifest-key").unwrap();
    let m: Manifest = serde_json::from_slice(&fs::read(cfg.output_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m, run.manifest);
    assert_eq!(m.ingest.as_ref().unwrap().records_read, 13_000);
    let graph = m.graph.as_ref().unwrap();
    assert_eq!((graph.nodes, graph.edges, graph.total_weight), (220, 700, 6_000));
    assert_eq!(m.filter.as_ref().unwrap().records_forwarded, 6_000);
    assert_eq!(m.expansion.as_ref().unwrap().candidates, 18);
    let ids = m.identities.as_ref().unwrap();
    assert!(ids.forwards_equal_weight);
    assert_eq!(ids.eligible_count, m.classify.as_ref().unwrap().eligible);
    assert_eq!(m.community.as_ref().unwrap().seed, 0);
    assert_eq!(m.layout.as_ref().unwrap().seed, 0);
    let text = fs::read_to_string(cfg.output_dir.join("manifest.json")).unwrap();
    assert!(!text.contains("manifest-key"), "key leaked into the manifest");
}
