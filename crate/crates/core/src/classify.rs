//! Key-user roles for broadcast channels.
//!
//! Roles are assigned in two stages. Degree roles come first:
//!
//! * conversation starter: high out-degree, in/out ratio at most `cs_max_ratio`;
//! * active engager: high in-degree, in/out ratio at least `ae_min_ratio`;
//! * influencer: high out-degree, in-degree at least `influencer_min_in`,
//!   ratio strictly between the two bands.
//!
//! The ratio bands make the three predicates mutually exclusive. Structural
//! roles are then given to channels still unassigned: a network creator
//! touches two or more influencers, an information bridge links an influencer
//! and an active engager (either orientation). "High" means at or above a
//! percentile of the eligible channels' degrees, or an absolute count when
//! one is configured.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsTable;
use crate::model::{EntityKind, ForwardGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleConfig {
    pub high_out_percentile: f64,
    pub high_in_percentile: f64,
    /// Fixed out-degree threshold; overrides the percentile when set.
    pub high_out_absolute: Option<u32>,
    /// Fixed in-degree threshold; overrides the percentile when set.
    pub high_in_absolute: Option<u32>,
    pub cs_max_ratio: f64,
    pub ae_min_ratio: f64,
    pub influencer_min_in: u32,
    pub min_frequency: u64,
}

impl Default for RoleConfig {
    fn default() -> Self {
        RoleConfig {
            high_out_percentile: 0.75,
            high_in_percentile: 0.75,
            high_out_absolute: None,
            high_in_absolute: None,
            cs_max_ratio: 0.15,
            ae_min_ratio: 4.0,
            influencer_min_in: 5,
            min_frequency: 50,
        }
    }
}

impl RoleConfig {
    pub fn validate(&self) -> Result<()> {
        let pct_ok = |p: f64| p > 0.0 && p <= 1.0;
        if !pct_ok(self.high_out_percentile) || !pct_ok(self.high_in_percentile) {
            return Err(Error::Config("role percentiles must lie in (0, 1]".into()));
        }
        if !(self.cs_max_ratio > 0.0 && self.ae_min_ratio > 0.0) {
            return Err(Error::Config("role ratio thresholds must be positive".into()));
        }
        if self.cs_max_ratio >= self.ae_min_ratio {
            return Err(Error::Config("cs_max_ratio must be below ae_min_ratio".into()));
        }
        if self.influencer_min_in == 0 || self.high_out_absolute == Some(0) || self.high_in_absolute == Some(0) {
            return Err(Error::Config("degree thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "Conversation starter")]
    ConversationStarter,
    #[serde(rename = "Influencer")]
    Influencer,
    #[serde(rename = "Active engager")]
    ActiveEngager,
    #[serde(rename = "Network creator")]
    NetworkCreator,
    #[serde(rename = "Information bridge")]
    InformationBridge,
    #[serde(rename = "None")]
    None,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::ConversationStarter,
        Role::Influencer,
        Role::ActiveEngager,
        Role::NetworkCreator,
        Role::InformationBridge,
        Role::None,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Role::ConversationStarter => "Conversation starter",
            Role::Influencer => "Influencer",
            Role::ActiveEngager => "Active engager",
            Role::NetworkCreator => "Network creator",
            Role::InformationBridge => "Information bridge",
            Role::None => "None",
        }
    }

    /// Parses a role label; the Portuguese "Influenciador" is accepted as
    /// [`Role::Influencer`].
    pub fn from_label(s: &str) -> Option<Role> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("influenciador") {
            return Some(Role::Influencer);
        }
        Role::ALL.into_iter().find(|r| r.label().eq_ignore_ascii_case(s))
    }

    pub fn is_key_user(self) -> bool {
        self != Role::None
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub in_degree: u32,
    pub out_degree: u32,
    /// `in_degree / max(out_degree, 1)`.
    pub ratio: f64,
    pub f: u64,
    /// Influencers adjacent to a network creator, or the
    /// `[influencer, engager]` pair behind an information bridge.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighbors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub entity: String,
    pub role: Role,
    pub evidence: Evidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeThresholds {
    pub high_out: f64,
    pub high_in: f64,
}

/// Linear interpolation between closest ranks (the "type 7" estimator).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn check_coverage(graph: &ForwardGraph, metrics: &MetricsTable) -> Result<()> {
    if metrics.rows.len() != graph.node_count() {
        return Err(Error::CoverageMismatch(format!(
            "metrics has {} rows for {} nodes",
            metrics.rows.len(),
            graph.node_count()
        )));
    }
    Ok(())
}

/// Indices of channels with `f >= min_frequency`, ascending.
pub fn eligible_nodes(graph: &ForwardGraph, metrics: &MetricsTable, config: &RoleConfig) -> Result<Vec<usize>> {
    check_coverage(graph, metrics)?;
    Ok(graph
        .nodes()
        .iter()
        .zip(&metrics.rows)
        .enumerate()
        .filter(|(_, (n, m))| n.kind == EntityKind::Channel && m.f >= config.min_frequency)
        .map(|(i, _)| i)
        .collect())
}

pub fn degree_thresholds(
    graph: &ForwardGraph,
    metrics: &MetricsTable,
    config: &RoleConfig,
) -> Result<DegreeThresholds> {
    let eligible = eligible_nodes(graph, metrics, config)?;
    let outs: Vec<f64> = eligible.iter().map(|&i| metrics.rows[i].out_degree as f64).collect();
    let ins: Vec<f64> = eligible.iter().map(|&i| metrics.rows[i].in_degree as f64).collect();
    Ok(DegreeThresholds {
        high_out: config
            .high_out_absolute
            .map(f64::from)
            .unwrap_or_else(|| percentile(&outs, config.high_out_percentile)),
        high_in: config
            .high_in_absolute
            .map(f64::from)
            .unwrap_or_else(|| percentile(&ins, config.high_in_percentile)),
    })
}

fn degree_role(in_deg: u32, out_deg: u32, t: &DegreeThresholds, config: &RoleConfig) -> Role {
    let ratio = in_deg as f64 / out_deg.max(1) as f64;
    let high_out = out_deg as f64 >= t.high_out;
    let high_in = in_deg as f64 >= t.high_in;
    if high_out && ratio <= config.cs_max_ratio {
        Role::ConversationStarter
    } else if high_in && ratio >= config.ae_min_ratio {
        Role::ActiveEngager
    } else if high_out
        && in_deg >= config.influencer_min_in
        && ratio > config.cs_max_ratio
        && ratio < config.ae_min_ratio
    {
        Role::Influencer
    } else {
        Role::None
    }
}

/// Roles for every eligible channel, sorted by `f` descending then id.
pub fn classify(graph: &ForwardGraph, metrics: &MetricsTable, config: &RoleConfig) -> Result<Vec<RoleAssignment>> {
    config.validate()?;
    let eligible = eligible_nodes(graph, metrics, config)?;
    if eligible.is_empty() {
        return Ok(Vec::new());
    }
    let thresholds = degree_thresholds(graph, metrics, config)?;

    let mut roles = vec![Role::None; graph.node_count()];
    for &i in &eligible {
        let m = &metrics.rows[i];
        roles[i] = degree_role(m.in_degree, m.out_degree, &thresholds, config);
    }
    let stage1 = roles.clone();
    let ids = |v: &mut Vec<usize>| -> Vec<String> {
        v.sort_by(|&a, &b| graph.node(a).id.cmp(&graph.node(b).id));
        v.iter().map(|&i| graph.node(i).id.clone()).collect()
    };

    let mut neighbors: Vec<Vec<String>> = vec![Vec::new(); graph.node_count()];
    for &i in &eligible {
        if stage1[i] != Role::None {
            continue;
        }
        let mut influencers: Vec<usize> = graph
            .neighbors_undirected(i)
            .into_iter()
            .filter(|&j| stage1[j] == Role::Influencer)
            .collect();
        if influencers.len() >= 2 {
            roles[i] = Role::NetworkCreator;
            neighbors[i] = ids(&mut influencers);
            continue;
        }
        let sources_of = |role: Role| -> Vec<usize> {
            graph
                .in_edges(i)
                .filter(|e| !e.is_self_loop() && stage1[e.source] == role)
                .map(|e| e.source)
                .collect()
        };
        let targets_of = |role: Role| -> Vec<usize> {
            graph
                .out_edges(i)
                .filter(|e| !e.is_self_loop() && stage1[e.target] == role)
                .map(|e| e.target)
                .collect()
        };
        // (influencer, engager) candidates from both orientations.
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (infl, eng) in [
            (sources_of(Role::Influencer), targets_of(Role::ActiveEngager)),
            (targets_of(Role::Influencer), sources_of(Role::ActiveEngager)),
        ] {
            for &a in &infl {
                for &b in &eng {
                    pairs.push((graph.node(a).id.clone(), graph.node(b).id.clone()));
                }
            }
        }
        if let Some((a, b)) = pairs.into_iter().min() {
            roles[i] = Role::InformationBridge;
            neighbors[i] = vec![a, b];
        }
    }

    let mut out: Vec<RoleAssignment> = eligible
        .iter()
        .map(|&i| {
            let m = &metrics.rows[i];
            RoleAssignment {
                entity: graph.node(i).id.clone(),
                role: roles[i],
                evidence: Evidence {
                    in_degree: m.in_degree,
                    out_degree: m.out_degree,
                    ratio: m.in_degree as f64 / m.out_degree.max(1) as f64,
                    f: m.f,
                    neighbors: std::mem::take(&mut neighbors[i]),
                },
            }
        })
        .collect();
    out.sort_by(|a, b| b.evidence.f.cmp(&a.evidence.f).then_with(|| a.entity.cmp(&b.entity)));
    Ok(out)
}
