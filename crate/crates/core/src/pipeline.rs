//! End-to-end run from raw exports to the written artifacts.
//!
//! Every run writes `manifest.json` with the counts seen at each stage, the
//! seeds and an echo of the configuration. Artifacts are staged in a hidden
//! directory and only moved into place once every stage has succeeded, so a
//! failed run leaves a manifest with `status: "failed"` and nothing else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{
    classify, degree_thresholds, eligible_nodes, DegreeThresholds, Role, RoleAssignment, RoleConfig,
};
use crate::community::{louvain, Partition};
use crate::error::{Error, Result};
use crate::export::{key_user_rows, write_dot, write_gexf, write_report, ReportFormat};
use crate::ingest::{
    anonymize, expansion_candidates, filter_forwarded, parse_export, ExpansionPlan, FieldMap, IngestReport, InputFormat,
};
use crate::layout::{yifan_hu, Layout, LayoutParams};
use crate::metrics::{metrics_table, GraphStats, MetricsTable};
use crate::model::{filter_min_frequency, ForwardGraph, KindRegistry};

pub const DEFAULT_KEY_ENV: &str = "TGNET_ANON_KEY";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GEXF_FILE: &str = "graph.gexf";
pub const DOT_FILE: &str = "graph.dot";
pub const REPORT_CSV_FILE: &str = "key_users.csv";
pub const REPORT_JSON_FILE: &str = "key_users.json";
pub const EXPANSION_FILE: &str = "expansion_plan.json";
const STAGING_DIR: &str = ".tgnet-staging";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub format: InputFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityConfig {
    pub resolution: f64,
    pub seed: u64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig {
            resolution: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Vec<InputSpec>,
    pub field_map: FieldMap,
    /// Name of the environment variable holding the anonymization key.
    pub anonymization_key_env: String,
    /// Graph-level filter: nodes with `f` below this are dropped before
    /// metrics. Zero keeps everything.
    pub min_frequency: u64,
    /// Emit a second-wave collection plan with this occurrence threshold.
    pub expansion_threshold: Option<u64>,
    pub roles: RoleConfig,
    pub community: CommunityConfig,
    pub layout: LayoutParams,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            field_map: FieldMap::default(),
            anonymization_key_env: DEFAULT_KEY_ENV.to_string(),
            min_frequency: 0,
            expansion_threshold: None,
            roles: RoleConfig::default(),
            community: CommunityConfig::default(),
            layout: LayoutParams::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("no input files given".into()));
        }
        if self.anonymization_key_env.trim().is_empty() {
            return Err(Error::Config("anonymization_key_env must name a variable".into()));
        }
        if self.expansion_threshold == Some(0) {
            return Err(Error::Config("expansion threshold must be at least 1".into()));
        }
        let r = self.community.resolution;
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Config(format!("resolution must be positive, got {r}")));
        }
        self.field_map.validate()?;
        self.roles.validate()?;
        self.layout.validate()
    }

    /// Reads the anonymization key from the configured variable.
    pub fn key_from_env(&self) -> Result<Vec<u8>> {
        match std::env::var_os(&self.anonymization_key_env) {
            None => Err(Error::Config(format!(
                "environment variable {} is not set",
                self.anonymization_key_env
            ))),
            Some(v) if v.is_empty() => Err(Error::EmptyKey),
            Some(v) => Ok(v.to_string_lossy().into_owned().into_bytes()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStage {
    /// Records whose forward source has a public handle.
    pub public_forwards: u64,
    /// Public forwards dropped while building the graph, by reason.
    pub rejected: BTreeMap<String, u64>,
    /// Records that became edge weight.
    pub records_forwarded: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStage {
    pub min_frequency: u64,
    pub graph: GraphStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityStage {
    pub resolution: f64,
    pub seed: u64,
    pub communities: usize,
    pub modularity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyStage {
    pub eligible: usize,
    pub thresholds: DegreeThresholds,
    pub role_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutStage {
    pub seed: u64,
    pub iterations_used: u32,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStage {
    pub threshold: u64,
    pub candidates: usize,
    pub by_kind: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identities {
    /// `filter.records_forwarded == graph.total_weight`.
    pub forwards_equal_weight: bool,
    /// `classify.eligible == |eligible_nodes|`.
    pub eligible_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub ingest: Option<IngestReport>,
    /// Distinct user handles replaced by pseudonyms.
    pub pseudonymized: Option<usize>,
    pub filter: Option<FilterStage>,
    pub expansion: Option<ExpansionStage>,
    pub graph: Option<GraphStats>,
    pub frequency_filter: Option<FrequencyStage>,
    pub community: Option<CommunityStage>,
    pub classify: Option<ClassifyStage>,
    pub layout: Option<LayoutStage>,
    pub identities: Option<Identities>,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn new(config: &RunConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            error: None,
            config: config.clone(),
            ingest: None,
            pseudonymized: None,
            filter: None,
            expansion: None,
            graph: None,
            frequency_filter: None,
            community: None,
            classify: None,
            layout: None,
            identities: None,
            outputs: Vec::new(),
        }
    }
}

/// In-memory results of a successful run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub manifest: Manifest,
    /// Graph after the frequency filter; every other field is aligned with it.
    pub graph: ForwardGraph,
    pub metrics: MetricsTable,
    pub partition: Partition,
    pub roles: Vec<RoleAssignment>,
    pub layout: Layout,
    pub expansion: Option<ExpansionPlan>,
}

/// Runs the pipeline with the key named by `config.anonymization_key_env`.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let key = config.key_from_env()?;
    run_pipeline_with_key(config, &key)
}

/// Runs the pipeline with an explicit key. The key never reaches any output.
pub fn run_pipeline_with_key(config: &RunConfig, key: &[u8]) -> Result<RunOutput> {
    config.validate()?;
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let staging = out_dir.join(STAGING_DIR);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let mut manifest = Manifest::new(config);
    let result = run_stages(config, key, &staging, &mut manifest);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    match result {
        Ok(mut run) => {
            for name in &manifest.outputs {
                let to = out_dir.join(name);
                fs::rename(staging.join(name), &to).map_err(|e| Error::io(&to, e))?;
            }
            let _ = fs::remove_dir_all(&staging);
            manifest.status = "ok".into();
            write_manifest(&manifest, &manifest_path)?;
            run.manifest = manifest;
            Ok(run)
        }
        Err(err) => {
            let _ = fs::remove_dir_all(&staging);
            manifest.status = "failed".into();
            manifest.error = Some(err.to_string());
            manifest.outputs.clear();
            let _ = write_manifest(&manifest, &manifest_path);
            Err(err)
        }
    }
}

fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn run_stages(config: &RunConfig, key: &[u8], staging: &Path, manifest: &mut Manifest) -> Result<RunOutput> {
    let mut records = Vec::new();
    let mut reports = Vec::new();
    for input in &config.inputs {
        let (r, report) = parse_export(&input.path, input.format, &config.field_map)?;
        records.extend(r);
        reports.push(report);
    }
    manifest.ingest = Some(IngestReport::combine(&reports, &records));

    let before = KindRegistry::from_records(&records);
    let records = anonymize(&records, key)?;
    manifest.pseudonymized = Some(before.user_handles());

    let forwarded = filter_forwarded(&records);
    let expansion = match config.expansion_threshold {
        Some(t) => {
            let plan = expansion_candidates(&forwarded, t)?;
            manifest.expansion = Some(ExpansionStage {
                threshold: t,
                candidates: plan.candidates.len(),
                by_kind: plan
                    .count_by_kind()
                    .into_iter()
                    .map(|(k, n)| (k.to_string(), n))
                    .collect(),
            });
            Some(plan)
        }
        None => None,
    };

    let registry = KindRegistry::from_records(&records);
    let (full, tally) = ForwardGraph::build(&forwarded, &registry);
    let full_stats = GraphStats::of(&full);
    manifest.filter = Some(FilterStage {
        public_forwards: forwarded.len() as u64,
        rejected: tally.rejected.clone(),
        records_forwarded: tally.edge_records,
    });
    manifest.graph = Some(full_stats);

    let graph = filter_min_frequency(&full, config.min_frequency);
    manifest.frequency_filter = Some(FrequencyStage {
        min_frequency: config.min_frequency,
        graph: GraphStats::of(&graph),
    });

    let metrics = metrics_table(&graph);

    let partition = if graph.is_empty() {
        Partition {
            labels: Vec::new(),
            community_count: 0,
            modularity: 0.0,
        }
    } else {
        louvain(&graph, config.community.resolution, config.community.seed)?
    };
    manifest.community = Some(CommunityStage {
        resolution: config.community.resolution,
        seed: config.community.seed,
        communities: partition.community_count,
        modularity: partition.modularity,
    });

    let roles = classify(&graph, &metrics, &config.roles)?;
    let eligible = eligible_nodes(&graph, &metrics, &config.roles)?.len();
    let mut role_counts: BTreeMap<String, usize> = Role::ALL.iter().map(|r| (r.label().to_string(), 0)).collect();
    for a in &roles {
        *role_counts.entry(a.role.label().to_string()).or_default() += 1;
    }
    manifest.classify = Some(ClassifyStage {
        eligible,
        thresholds: degree_thresholds(&graph, &metrics, &config.roles)?,
        role_counts,
    });

    let layout = if graph.is_empty() {
        Layout {
            coordinates: Vec::new(),
            iterations_used: 0,
            initial_energy: 0.0,
            final_energy: 0.0,
            converged: true,
        }
    } else {
        yifan_hu(&graph, &config.layout)?
    };
    manifest.layout = Some(LayoutStage {
        seed: config.layout.seed,
        iterations_used: layout.iterations_used,
        converged: layout.converged,
        initial_energy: layout.initial_energy,
        final_energy: layout.final_energy,
    });
    manifest.identities = Some(Identities {
        forwards_equal_weight: tally.edge_records == full_stats.total_weight,
        eligible_count: eligible,
    });

    let mut outputs = Vec::new();
    write_gexf(&graph, &metrics, &partition, &roles, &layout, staging.join(GEXF_FILE))?;
    outputs.push(GEXF_FILE);
    write_dot(&graph, &roles, staging.join(DOT_FILE))?;
    outputs.push(DOT_FILE);
    let rows = key_user_rows(&graph, &metrics, &partition, &roles)?;
    write_report(&rows, staging.join(REPORT_CSV_FILE), ReportFormat::Csv)?;
    outputs.push(REPORT_CSV_FILE);
    write_report(&rows, staging.join(REPORT_JSON_FILE), ReportFormat::Json)?;
    outputs.push(REPORT_JSON_FILE);
    if let Some(plan) = &expansion {
        let path = staging.join(EXPANSION_FILE);
        let mut bytes = serde_json::to_vec_pretty(plan)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        outputs.push(EXPANSION_FILE);
    }
    manifest.outputs = outputs.into_iter().map(String::from).collect();

    Ok(RunOutput {
        manifest: manifest.clone(),
        graph,
        metrics,
        partition,
        roles,
        layout,
        expansion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::write_ndjson;
    use crate::synth::mixed_messages;

    fn config_for(dir: &Path, input: PathBuf) -> RunConfig {
        RunConfig {
            inputs: vec![InputSpec {
                path: input,
                format: InputFormat::Ndjson,
            }],
            output_dir: dir.join("out"),
            expansion_threshold: Some(5),
            ..RunConfig::default()
        }
    }

    #[test]
    fn writes_all_artifacts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.ndjson");
        write_ndjson(&mixed_messages(300, 120, 1), &input).unwrap();
        let cfg = config_for(dir.path(), input);
        let run = run_pipeline_with_key(&cfg, b"k").unwrap();
        for f in [
            MANIFEST_FILE,
            GEXF_FILE,
            DOT_FILE,
            REPORT_CSV_FILE,
            REPORT_JSON_FILE,
            EXPANSION_FILE,
        ] {
            assert!(cfg.output_dir.join(f).is_file(), "{f} missing");
        }
        assert!(!cfg.output_dir.join(STAGING_DIR).exists());
        let m = &run.manifest;
        assert_eq!(m.status, "ok");
        assert_eq!(m.ingest.as_ref().unwrap().records_read, 300);
        assert_eq!(m.filter.as_ref().unwrap().records_forwarded, 120);
        assert_eq!(m.graph.as_ref().unwrap().total_weight, 120);
        assert!(m.identities.as_ref().unwrap().forwards_equal_weight);
    }

    #[test]
    fn failed_run_leaves_only_a_failed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config_for(dir.path(), dir.path().join("missing.ndjson"));
        let err = run_pipeline_with_key(&cfg, b"k").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let entries: Vec<_> = fs::read_dir(&cfg.output_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries, vec![std::ffi::OsString::from(MANIFEST_FILE)]);
        let m: Manifest = serde_json::from_slice(&fs::read(cfg.output_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.status, "failed");
        assert!(m.outputs.is_empty());
    }

    #[test]
    fn config_errors_exit_with_two() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.inputs.push(InputSpec {
            path: "x".into(),
            format: InputFormat::Csv,
        });
        cfg.community.resolution = 0.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.community.resolution = 1.0;
        cfg.anonymization_key_env = "TGNET_TEST_SURELY_UNSET_VARIABLE".into();
        assert_eq!(run_pipeline(&cfg).unwrap_err().exit_code(), 2);
        assert_eq!(run_pipeline_with_key(&cfg, b"").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn config_json_rejects_unknown_fields_and_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"inputs":[{"path":"a.csv","format":"csv"}]}"#).unwrap();
        assert_eq!(cfg.community, CommunityConfig::default());
        assert_eq!(cfg.anonymization_key_env, DEFAULT_KEY_ENV);
        assert!(serde_json::from_str::<RunConfig>(r#"{"anonymization_key":"secret"}"#).is_err());
    }

    #[test]
    fn empty_input_still_produces_valid_exports() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.ndjson");
        write_ndjson(&mixed_messages(10, 0, 2), &input).unwrap();
        let run = run_pipeline_with_key(&config_for(dir.path(), input), b"k").unwrap();
        assert!(run.graph.is_empty());
        assert_eq!(run.manifest.community.as_ref().unwrap().modularity, 0.0);
    }
}
