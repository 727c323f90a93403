//! `tgnet` command-line interface.
//!
//! Every subcommand accepts `--config run.json`; flags override the values
//! loaded from it. The anonymization key is only ever read from the
//! environment variable named by `--key-env` (default `TGNET_ANON_KEY`).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tgnet::classify::classify;
use tgnet::community::{louvain, Partition};
use tgnet::export::{key_user_rows, write_dot, write_gexf, write_report, ReportFormat};
use tgnet::ingest::{
    anonymize, expansion_candidates, filter_forwarded, parse_export, write_ndjson, FieldMap, IngestReport, InputFormat,
};
use tgnet::layout::{yifan_hu, Layout};
use tgnet::metrics::{metrics_table, MetricsTable};
use tgnet::pipeline::{run_pipeline, InputSpec, RunConfig};
use tgnet::{filter_min_frequency, Error, ForwardGraph, ForwardRecord, KindRegistry};

#[derive(Parser)]
#[command(
    name = "tgnet",
    version,
    about = "Forwarded-message network analysis for Telegram exports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and anonymize exports into canonical NDJSON.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Where to write the canonical records.
        #[arg(long)]
        output: PathBuf,
    },
    /// List forward sources reaching the expansion threshold.
    Expand {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        threshold: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-node metrics with community labels.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Key-user report.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Report::Csv)]
        report_format: Report,
    },
    /// Node coordinates from the force-directed layout.
    Layout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the requested exports.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gexf: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Report::Csv)]
        report_format: Report,
    },
    /// Full run writing every artifact plus a manifest into the output directory.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Directory receiving the artifacts and manifest (default `out`).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also write the second-wave plan for sources seen at least this often.
        #[arg(long)]
        expansion_threshold: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Csv,
    Json,
}

impl From<Report> for ReportFormat {
    fn from(r: Report) -> Self {
        match r {
            Report::Csv => ReportFormat::Csv,
            Report::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input export; repeat for several files.
    #[arg(long = "input", short = 'i')]
    inputs: Vec<PathBuf>,
    /// Format of the inputs (ndjson or csv); one value for all, or one per input.
    #[arg(long = "format", short = 'f')]
    formats: Vec<String>,
    /// JSON object mapping export column names to canonical fields.
    #[arg(long)]
    field_map: Option<PathBuf>,
    /// Environment variable holding the anonymization key.
    #[arg(long)]
    key_env: Option<String>,
    /// Drop nodes until every remaining one has `f` at least this value.
    #[arg(long)]
    min_frequency: Option<u64>,
    /// Minimum `f` for role eligibility.
    #[arg(long)]
    role_min_frequency: Option<u64>,
    /// Modularity resolution (default 1.0).
    #[arg(long)]
    resolution: Option<f64>,
    /// Seed for the community detection visiting order.
    #[arg(long)]
    community_seed: Option<u64>,
    /// Seed for the initial layout positions.
    #[arg(long)]
    layout_seed: Option<u64>,
    /// Iteration cap for the layout.
    #[arg(long)]
    max_iterations: Option<u32>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if !self.inputs.is_empty() {
            let formats: Vec<InputFormat> = self.formats.iter().map(|f| f.parse()).collect::<Result<_, _>>()?;
            let format_for = |i: usize| -> Result<InputFormat, Error> {
                match formats.len() {
                    0 => Ok(guess_format(&self.inputs[i])),
                    1 => Ok(formats[0]),
                    n if n == self.inputs.len() => Ok(formats[i]),
                    _ => Err(Error::Config(
                        "give one --format for all inputs or one per input".into(),
                    )),
                }
            };
            cfg.inputs = (0..self.inputs.len())
                .map(|i| {
                    Ok(InputSpec {
                        path: self.inputs[i].clone(),
                        format: format_for(i)?,
                    })
                })
                .collect::<Result<_, Error>>()?;
        }
        if let Some(p) = &self.field_map {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            cfg.field_map = serde_json::from_str::<FieldMap>(&text).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(v) = &self.key_env {
            cfg.anonymization_key_env = v.clone();
        }
        if let Some(v) = self.min_frequency {
            cfg.min_frequency = v;
        }
        if let Some(v) = self.role_min_frequency {
            cfg.roles.min_frequency = v;
        }
        if let Some(v) = self.resolution {
            cfg.community.resolution = v;
        }
        if let Some(v) = self.community_seed {
            cfg.community.seed = v;
        }
        if let Some(v) = self.layout_seed {
            cfg.layout.seed = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.layout.max_iterations = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn guess_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => InputFormat::Csv,
        _ => InputFormat::Ndjson,
    }
}

/// Parsed and anonymized records of every input.
fn load(cfg: &RunConfig) -> Result<(Vec<ForwardRecord>, IngestReport), Error> {
    let key = cfg.key_from_env()?;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    for input in &cfg.inputs {
        let (r, rep) = parse_export(&input.path, input.format, &cfg.field_map)?;
        records.extend(r);
        reports.push(rep);
    }
    let report = IngestReport::combine(&reports, &records);
    Ok((anonymize(&records, &key)?, report))
}

fn load_graph(cfg: &RunConfig) -> Result<ForwardGraph, Error> {
    let (records, _) = load(cfg)?;
    let registry = KindRegistry::from_records(&records);
    let (graph, _) = ForwardGraph::build(&filter_forwarded(&records), &registry);
    Ok(filter_min_frequency(&graph, cfg.min_frequency))
}

struct Analysis {
    graph: ForwardGraph,
    metrics: MetricsTable,
    partition: Partition,
}

fn analyze(cfg: &RunConfig) -> Result<Analysis, Error> {
    let graph = load_graph(cfg)?;
    let metrics = metrics_table(&graph);
    let partition = if graph.is_empty() {
        Partition {
            labels: Vec::new(),
            community_count: 0,
            modularity: 0.0,
        }
    } else {
        louvain(&graph, cfg.community.resolution, cfg.community.seed)?
    };
    Ok(Analysis {
        graph,
        metrics,
        partition,
    })
}

fn layout_of(graph: &ForwardGraph, cfg: &RunConfig) -> Result<Layout, Error> {
    if graph.is_empty() {
        return Ok(Layout {
            coordinates: Vec::new(),
            iterations_used: 0,
            initial_energy: 0.0,
            final_energy: 0.0,
            converged: true,
        });
    }
    yifan_hu(graph, &cfg.layout)
}

fn emit_json(value: &impl Serialize, output: Option<&Path>) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    match output {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct NodeRow<'a> {
    id: &'a str,
    username: &'a str,
    kind: &'a str,
    in_degree: u32,
    out_degree: u32,
    weighted_in: u64,
    weighted_out: u64,
    f: u64,
    betweenness: f64,
    community: usize,
}

#[derive(Serialize)]
struct Position<'a> {
    id: &'a str,
    x: f64,
    y: f64,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { common, output } => {
            let cfg = common.config()?;
            let (records, report) = load(&cfg)?;
            write_ndjson(&records, &output)?;
            emit_json(&report, None)?;
        }
        Command::Expand {
            common,
            threshold,
            output,
        } => {
            let cfg = common.config()?;
            let (records, _) = load(&cfg)?;
            let plan = expansion_candidates(&filter_forwarded(&records), threshold)?;
            emit_json(&plan, output.as_deref())?;
        }
        Command::Analyze { common, output } => {
            let cfg = common.config()?;
            let a = analyze(&cfg)?;
            let rows: Vec<NodeRow> = a
                .graph
                .nodes()
                .iter()
                .zip(&a.metrics.rows)
                .zip(&a.partition.labels)
                .map(|((n, m), &c)| NodeRow {
                    id: &n.id,
                    username: &n.username,
                    kind: n.kind.as_str(),
                    in_degree: m.in_degree,
                    out_degree: m.out_degree,
                    weighted_in: m.weighted_in,
                    weighted_out: m.weighted_out,
                    f: m.f,
                    betweenness: m.betweenness,
                    community: c,
                })
                .collect();
            emit_json(
                &serde_json::json!({ "modularity": a.partition.modularity, "communities": a.partition.community_count, "nodes": rows }),
                output.as_deref(),
            )?;
        }
        Command::Classify {
            common,
            output,
            report_format,
        } => {
            let cfg = common.config()?;
            let a = analyze(&cfg)?;
            let roles = classify(&a.graph, &a.metrics, &cfg.roles)?;
            let rows = key_user_rows(&a.graph, &a.metrics, &a.partition, &roles)?;
            write_report(&rows, &output, report_format.into())?;
        }
        Command::Layout { common, output } => {
            let cfg = common.config()?;
            let graph = load_graph(&cfg)?;
            let layout = layout_of(&graph, &cfg)?;
            let rows: Vec<Position> = graph
                .nodes()
                .iter()
                .zip(&layout.coordinates)
                .map(|(n, &(x, y))| Position { id: &n.id, x, y })
                .collect();
            emit_json(&rows, output.as_deref())?;
        }
        Command::Export {
            common,
            gexf,
            dot,
            report,
            report_format,
        } => {
            let cfg = common.config()?;
            if gexf.is_none() && dot.is_none() && report.is_none() {
                return Err(Error::Config("nothing to export: pass --gexf, --dot or --report".into()).into());
            }
            let a = analyze(&cfg)?;
            let roles = classify(&a.graph, &a.metrics, &cfg.roles)?;
            if let Some(p) = gexf {
                let layout = layout_of(&a.graph, &cfg)?;
                write_gexf(&a.graph, &a.metrics, &a.partition, &roles, &layout, p)?;
            }
            if let Some(p) = dot {
                write_dot(&a.graph, &roles, p)?;
            }
            if let Some(p) = report {
                let rows = key_user_rows(&a.graph, &a.metrics, &a.partition, &roles)?;
                write_report(&rows, p, report_format.into())?;
            }
        }
        Command::Pipeline {
            common,
            output_dir,
            expansion_threshold,
        } => {
            let mut cfg = common.config()?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if expansion_threshold.is_some() {
                cfg.expansion_threshold = expansion_threshold;
            }
            let out = run_pipeline(&cfg)?;
            eprintln!(
                "{} nodes, {} edges, {} key users; artifacts in {}",
                out.graph.node_count(),
                out.graph.edge_count(),
                out.roles.iter().filter(|r| r.role.is_key_user()).count(),
                cfg.output_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<Error>().map(Error::exit_code).unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
