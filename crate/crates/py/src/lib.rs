//! Python bindings for `tgnet`.
//!
//! Structured results are handed over as plain dicts and lists through
//! their serde representation. Configuration dicts travel the other way and
//! are validated by the core crate, so unknown keys are rejected exactly as
//! in a JSON config file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pythonize::{depythonize, pythonize};
use serde::de::DeserializeOwned;
use serde::Serialize;

use tgnet::classify::{classify, RoleConfig};
use tgnet::community::{louvain, modularity, Partition};
use tgnet::export::{key_user_rows, to_dot, GexfDocument};
use tgnet::ingest::{self, FieldMap, InputFormat};
use tgnet::layout::{yifan_hu, LayoutParams};
use tgnet::metrics::metrics_table;
use tgnet::pipeline::{run_pipeline_with_key, RunConfig};
use tgnet::{degrees, filter_min_frequency, synth, Entity, EntityKind, ForwardGraph, ForwardRecord, KindRegistry};

create_exception!(tgnet_py, TgnetError, PyException, "Failure reported by the tgnet core.");
create_exception!(
    tgnet_py,
    ConfigError,
    TgnetError,
    "Invalid configuration or anonymization key."
);

fn err(e: tgnet::Error) -> PyErr {
    let msg = e.to_string();
    if e.exit_code() == 2 {
        ConfigError::new_err(msg)
    } else {
        TgnetError::new_err(msg)
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    Ok(pythonize(py, value)?)
}

fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) if o.is_none() => Ok(T::default()),
        Some(o) => Ok(depythonize(o)?),
    }
}

fn kind(s: &str) -> PyResult<EntityKind> {
    s.parse().map_err(err)
}

/// Directed forwarding network: an edge `(source, target, weight)` means
/// `target` posted `weight` messages forwarded from `source`.
#[pyclass(name = "Graph", module = "tgnet_py", frozen)]
struct PyGraph {
    inner: ForwardGraph,
}

#[pymethods]
impl PyGraph {
    /// `nodes` is a list of `(username, kind)` pairs; `edges` a list of
    /// `(source, target, weight)` triples over those usernames.
    #[new]
    fn new(nodes: Vec<(String, String)>, edges: Vec<(String, String, u64)>) -> PyResult<Self> {
        let entities = nodes
            .into_iter()
            .map(|(name, k)| {
                Ok(Entity {
                    id: tgnet::model::canonical_id(&name),
                    username: name,
                    kind: kind(&k)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyGraph {
            inner: ForwardGraph::from_parts(entities, edges).map_err(err)?,
        })
    }

    /// Builds the graph from forward records given as dicts with the
    /// canonical fields.
    #[staticmethod]
    fn from_records(py: Python<'_>, records: &Bound<'_, PyAny>) -> PyResult<(Self, Py<PyAny>)> {
        let records: Vec<ForwardRecord> = depythonize(records)?;
        let registry = KindRegistry::from_records(&records);
        let (g, tally) = ForwardGraph::build(&ingest::filter_forwarded(&records), &registry);
        Ok((PyGraph { inner: g }, to_py(py, &tally)?.unbind()))
    }

    /// Parses an export, optionally pseudonymizes it with `key`, keeps the
    /// public forwards and builds the graph. Returns `(graph, ingest_report)`.
    #[staticmethod]
    #[pyo3(signature = (path, format = "ndjson", field_map = None, key = None))]
    fn from_export(
        py: Python<'_>,
        path: PathBuf,
        format: &str,
        field_map: Option<BTreeMap<String, String>>,
        key: Option<&[u8]>,
    ) -> PyResult<(Self, Py<PyAny>)> {
        let format: InputFormat = format.parse().map_err(err)?;
        let fields = FieldMap(field_map.unwrap_or_default());
        fields.validate().map_err(err)?;
        let (graph, report) = py
            .detach(|| -> tgnet::Result<_> {
                let (mut records, report) = ingest::parse_export(&path, format, &fields)?;
                if let Some(k) = key {
                    records = ingest::anonymize(&records, k)?;
                }
                let registry = KindRegistry::from_records(&records);
                Ok((
                    ForwardGraph::build(&ingest::filter_forwarded(&records), &registry).0,
                    report,
                ))
            })
            .map_err(err)?;
        Ok((PyGraph { inner: graph }, to_py(py, &report)?.unbind()))
    }

    /// Synthetic network whose eight key users carry known roles.
    #[staticmethod]
    fn key_user_fixture() -> Self {
        PyGraph {
            inner: synth::key_user_graph(),
        }
    }

    /// Zachary's karate club as an unweighted graph.
    #[staticmethod]
    fn karate_club() -> Self {
        PyGraph {
            inner: synth::karate_club(),
        }
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn total_weight(&self) -> u64 {
        self.inner.total_weight()
    }

    fn __len__(&self) -> usize {
        self.inner.node_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, edges={}, total_weight={})",
            self.inner.node_count(),
            self.inner.edge_count(),
            self.inner.total_weight()
        )
    }

    /// `(id, username, kind)` for every node, in node order.
    fn nodes(&self) -> Vec<(String, String, String)> {
        self.inner
            .nodes()
            .iter()
            .map(|n| (n.id.clone(), n.username.clone(), n.kind.as_str().to_string()))
            .collect()
    }

    /// `(source_id, target_id, weight)` for every edge.
    fn edges(&self) -> Vec<(String, String, u64)> {
        self.inner
            .edges()
            .iter()
            .map(|e| {
                (
                    self.inner.node(e.source).id.clone(),
                    self.inner.node(e.target).id.clone(),
                    e.weight,
                )
            })
            .collect()
    }

    fn weight(&self, source: &str, target: &str) -> Option<u64> {
        self.inner.weight(source, target)
    }

    /// Degree accounting per node id (betweenness left at zero).
    fn degrees<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let by_id: BTreeMap<&str, _> = self
            .inner
            .nodes()
            .iter()
            .map(|n| n.id.as_str())
            .zip(degrees(&self.inner))
            .collect();
        to_py(py, &by_id)
    }

    /// Full metrics, betweenness included, per node id.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let table = py.detach(|| metrics_table(&self.inner));
        let by_id: BTreeMap<&str, _> = self
            .inner
            .nodes()
            .iter()
            .map(|n| n.id.as_str())
            .zip(table.rows)
            .collect();
        to_py(py, &by_id)
    }

    /// Unnormalized hop-count betweenness per node id.
    fn betweenness(&self, py: Python<'_>) -> BTreeMap<String, f64> {
        let bc = py.detach(|| tgnet::metrics::betweenness(&self.inner));
        self.inner.nodes().iter().map(|n| n.id.clone()).zip(bc).collect()
    }

    /// Subgraph that survives repeated removal of nodes with `f < min_f`.
    fn filter_min_frequency(&self, min_f: u64) -> Self {
        PyGraph {
            inner: filter_min_frequency(&self.inner, min_f),
        }
    }

    /// Modularity of `assignment` (node id to community) on the undirected
    /// projection.
    #[pyo3(signature = (assignment, resolution = 1.0))]
    fn modularity(&self, assignment: BTreeMap<String, usize>, resolution: f64) -> PyResult<f64> {
        modularity(&self.inner, &assignment, resolution).map_err(err)
    }

    /// Louvain partition: `{"assignment", "community_count", "modularity"}`.
    #[pyo3(signature = (resolution = 1.0, seed = 0))]
    fn louvain<'py>(&self, py: Python<'py>, resolution: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let p = py.detach(|| louvain(&self.inner, resolution, seed)).map_err(err)?;
        #[derive(Serialize)]
        struct Out {
            assignment: BTreeMap<String, usize>,
            community_count: usize,
            modularity: f64,
        }
        to_py(
            py,
            &Out {
                assignment: p.assignment(&self.inner),
                community_count: p.community_count,
                modularity: p.modularity,
            },
        )
    }

    /// Role assignments for eligible channels, in descending `f`.
    #[pyo3(signature = (config = None))]
    fn classify<'py>(&self, py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let cfg: RoleConfig = from_py(config)?;
        let roles = py
            .detach(|| classify(&self.inner, &metrics_table(&self.inner), &cfg))
            .map_err(err)?;
        to_py(py, &roles)
    }

    /// Yifan-Hu layout: coordinates per node id plus convergence details.
    #[pyo3(signature = (params = None))]
    fn layout<'py>(&self, py: Python<'py>, params: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let params: LayoutParams = from_py(params)?;
        let l = py.detach(|| yifan_hu(&self.inner, &params)).map_err(err)?;
        #[derive(Serialize)]
        struct Out {
            coordinates: BTreeMap<String, (f64, f64)>,
            iterations_used: u32,
            initial_energy: f64,
            final_energy: f64,
            converged: bool,
        }
        let coordinates = self
            .inner
            .nodes()
            .iter()
            .map(|n| n.id.clone())
            .zip(l.coordinates)
            .collect();
        to_py(
            py,
            &Out {
                coordinates,
                iterations_used: l.iterations_used,
                initial_energy: l.initial_energy,
                final_energy: l.final_energy,
                converged: l.converged,
            },
        )
    }

    /// Runs every analysis with defaults (or the given seeds and configs)
    /// and returns `(gexf_xml, key_user_rows)`.
    #[pyo3(signature = (roles = None, layout = None, resolution = 1.0, community_seed = 0))]
    fn export<'py>(
        &self,
        py: Python<'py>,
        roles: Option<&Bound<'py, PyAny>>,
        layout: Option<&Bound<'py, PyAny>>,
        resolution: f64,
        community_seed: u64,
    ) -> PyResult<(String, Bound<'py, PyAny>)> {
        let role_cfg: RoleConfig = from_py(roles)?;
        let params: LayoutParams = from_py(layout)?;
        let g = &self.inner;
        let (xml, rows) = py
            .detach(|| -> tgnet::Result<_> {
                let m = metrics_table(g);
                let part = if g.is_empty() {
                    Partition {
                        labels: vec![],
                        community_count: 0,
                        modularity: 0.0,
                    }
                } else {
                    louvain(g, resolution, community_seed)?
                };
                let r = classify(g, &m, &role_cfg)?;
                let l = yifan_hu(g, &params)?;
                let xml = GexfDocument::from_analysis(g, &m, &part, &r, &l)?.to_xml();
                Ok((xml, key_user_rows(g, &m, &part, &r)?))
            })
            .map_err(err)?;
        Ok((xml, to_py(py, &rows)?))
    }

    /// Graphviz DOT text with nodes coloured by role.
    #[pyo3(signature = (roles = None))]
    fn to_dot(&self, roles: Option<&Bound<'_, PyAny>>) -> PyResult<String> {
        let cfg: RoleConfig = from_py(roles)?;
        let r = classify(&self.inner, &metrics_table(&self.inner), &cfg).map_err(err)?;
        to_dot(&self.inner, &r).map_err(err)
    }
}

/// Keyed pseudonym for a public handle (`u_` followed by 32 hex digits).
#[pyfunction]
fn pseudonym(username: &str, key: &[u8]) -> PyResult<String> {
    ingest::pseudonym(username, key).map_err(err)
}

/// Parses an export into `(records, report)`, records as dicts.
#[pyfunction]
#[pyo3(signature = (path, format = "ndjson", field_map = None))]
fn parse_export<'py>(
    py: Python<'py>,
    path: PathBuf,
    format: &str,
    field_map: Option<BTreeMap<String, String>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let format: InputFormat = format.parse().map_err(err)?;
    let fields = FieldMap(field_map.unwrap_or_default());
    fields.validate().map_err(err)?;
    let (records, report) = py
        .detach(|| ingest::parse_export(&path, format, &fields))
        .map_err(err)?;
    Ok((to_py(py, &records)?, to_py(py, &report)?))
}

/// Handles forwarded at least `threshold` times, grouped by kind.
#[pyfunction]
fn expansion_candidates<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyAny>,
    threshold: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<ForwardRecord> = depythonize(records)?;
    let plan = ingest::expansion_candidates(&records, threshold).map_err(err)?;
    to_py(py, &plan)
}

/// Runs the whole pipeline described by `config` (same keys as the JSON
/// config file) and returns the manifest. The key is never written out.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &Bound<'py, PyAny>, key: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let cfg: RunConfig = depythonize(config)?;
    let out = py.detach(|| run_pipeline_with_key(&cfg, key)).map_err(err)?;
    to_py(py, &out.manifest)
}

#[pymodule]
fn tgnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TgnetError", m.py().get_type::<TgnetError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(pseudonym, m)?)?;
    m.add_function(wrap_pyfunction!(parse_export, m)?)?;
    m.add_function(wrap_pyfunction!(expansion_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
