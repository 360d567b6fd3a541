//! Contextual-state motif graphs and their six derived features.
//!
//! Each turn gets a state ⟨category, error context, stage⟩. A motif is a pair
//! of consecutive states; the graph has one node per distinct motif and one
//! edge instance per pair of consecutive motif instances, so every edge
//! covers a 3-turn window.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::annotate::AnnotatedTrajectory;
use crate::error::{Error, Result};
use crate::features::config_from_row;
use crate::model::{ActionCategory, ConfigurationId, Outcome};
use crate::stats;
use crate::table::{fmt_f64, parse_req, Table};

pub const CFG_FEATURE_NAMES: [&str; 6] = [
    "motif_entropy",
    "transition_entropy",
    "self_loop_rate",
    "revisit_rate",
    "backtrack_rate",
    "post_error_motif_ratio",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorContext {
    Clean,
    PostError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Early,
    Mid,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextState {
    pub alpha: ActionCategory,
    pub epsilon: ErrorContext,
    pub sigma: Stage,
}

impl ContextState {
    pub fn label(&self) -> String {
        let eps = match self.epsilon {
            ErrorContext::Clean => "clean",
            ErrorContext::PostError => "post",
        };
        let sigma = match self.sigma {
            Stage::Early => "early",
            Stage::Mid => "mid",
            Stage::Late => "late",
        };
        format!("{}:{eps}:{sigma}", self.alpha.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Motif {
    pub first: ContextState,
    pub second: ContextState,
}

impl Motif {
    pub fn label(&self) -> String {
        format!("{}>{}", self.first.label(), self.second.label())
    }
}

/// Stage of 1-based turn `index` in an `n`-turn trajectory: early up to
/// ⌈N/3⌉, late after ⌈2N/3⌉.
pub fn stage_of(index: usize, n: usize) -> Stage {
    if index <= n.div_ceil(3) {
        Stage::Early
    } else if index > (2 * n).div_ceil(3) {
        Stage::Late
    } else {
        Stage::Mid
    }
}

pub fn assign_states(t: &AnnotatedTrajectory) -> Vec<ContextState> {
    let n = t.len();
    (0..n)
        .map(|i| ContextState {
            alpha: t.categories[i],
            epsilon: if i > 0 && t.error_types[i - 1].is_some() {
                ErrorContext::PostError
            } else {
                ErrorContext::Clean
            },
            sigma: stage_of(i + 1, n),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotifGraph {
    /// Distinct motifs in order of first appearance.
    pub nodes: Vec<Motif>,
    /// Node index of every motif instance, in trajectory order.
    pub instances: Vec<usize>,
    /// `(source, target, multiplicity)` in order of first appearance.
    pub edges: Vec<(usize, usize, usize)>,
}

impl MotifGraph {
    pub fn edge_instances(&self) -> usize {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        writeln!(out, "digraph {} {{", dot_quote(name)).unwrap();
        for m in &self.nodes {
            writeln!(out, "  {};", dot_quote(&m.label())).unwrap();
        }
        for &(s, t, w) in &self.edges {
            writeln!(
                out,
                "  {} -> {} [weight={w}, label=\"{w}\"];",
                dot_quote(&self.nodes[s].label()),
                dot_quote(&self.nodes[t].label())
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn build_graph(states: &[ContextState]) -> MotifGraph {
    let mut g = MotifGraph::default();
    let mut node_ids: HashMap<Motif, usize> = HashMap::new();
    for w in states.windows(2) {
        let m = Motif {
            first: w[0],
            second: w[1],
        };
        let id = *node_ids.entry(m).or_insert_with(|| {
            g.nodes.push(m);
            g.nodes.len() - 1
        });
        g.instances.push(id);
    }
    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    for w in g.instances.windows(2) {
        let key = (w[0], w[1]);
        match edge_ids.get(&key) {
            Some(&e) => g.edges[e].2 += 1,
            None => {
                edge_ids.insert(key, g.edges.len());
                g.edges.push((w[0], w[1], 1));
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CfgFeatures {
    pub motif_entropy: f64,
    pub transition_entropy: f64,
    pub self_loop_rate: f64,
    pub revisit_rate: f64,
    pub backtrack_rate: f64,
    pub post_error_motif_ratio: f64,
}

impl CfgFeatures {
    pub fn values(&self) -> [f64; 6] {
        [
            self.motif_entropy,
            self.transition_entropy,
            self.self_loop_rate,
            self.revisit_rate,
            self.backtrack_rate,
            self.post_error_motif_ratio,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        CFG_FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values()[i])
    }
}

/// The six graph features. Trajectories of one or two turns have every
/// feature at 0; backtrack rate is 0 when there is no position t ≥ 3.
pub fn cfg_features(g: &MotifGraph, states: &[ContextState]) -> CfgFeatures {
    let n = states.len();
    if n <= 2 {
        return CfgFeatures::default();
    }
    let motifs = n - 1;
    let mut instance_counts = vec![0usize; g.nodes.len()];
    for &m in &g.instances {
        instance_counts[m] += 1;
    }
    let self_loops: usize = g.edges.iter().filter(|e| e.0 == e.1).map(|e| e.2).sum();
    let edge_total = g.edge_instances();
    let backtracks = (2..g.instances.len())
        .filter(|&t| g.instances[t] == g.instances[t - 2])
        .count();
    let post_error = g
        .instances
        .iter()
        .filter(|&&m| {
            let motif = g.nodes[m];
            motif.first.epsilon == ErrorContext::PostError
                || motif.second.epsilon == ErrorContext::PostError
        })
        .count();
    CfgFeatures {
        motif_entropy: stats::entropy(instance_counts),
        transition_entropy: stats::entropy(g.edges.iter().map(|e| e.2)),
        self_loop_rate: ratio(self_loops, edge_total),
        revisit_rate: ratio(motifs - g.nodes.len(), motifs),
        backtrack_rate: ratio(backtracks, motifs.saturating_sub(2)),
        post_error_motif_ratio: ratio(post_error, motifs),
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCfg {
    pub id: String,
    pub config: ConfigurationId,
    pub outcome: Outcome,
    pub features: CfgFeatures,
}

pub fn analyze(t: &AnnotatedTrajectory) -> (MotifGraph, CfgFeatures) {
    let states = assign_states(t);
    let g = build_graph(&states);
    let f = cfg_features(&g, &states);
    (g, f)
}

pub fn all_cfg_features(items: &[AnnotatedTrajectory]) -> Vec<TrajectoryCfg> {
    items
        .par_iter()
        .map(|a| TrajectoryCfg {
            id: a.base.id.clone(),
            config: a.base.config.clone(),
            outcome: a.base.outcome,
            features: analyze(a).1,
        })
        .collect()
}

/// File name for a trajectory's DOT export; path separators and other
/// unsafe characters become `_`.
pub fn dot_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.dot")
}

pub fn cfg_table(items: &[TrajectoryCfg]) -> Table {
    let mut headers = vec![
        "trajectory_id",
        "framework",
        "framework_version",
        "llm",
        "llm_family",
        "outcome",
    ];
    headers.extend(CFG_FEATURE_NAMES);
    let mut t = Table::new(&headers);
    for r in items {
        let mut row = vec![
            r.id.clone(),
            r.config.framework.clone(),
            r.config.framework_version.clone().unwrap_or_default(),
            r.config.llm.clone(),
            r.config.llm_family.clone(),
            r.outcome.as_str().to_string(),
        ];
        row.extend(r.features.values().iter().map(|v| fmt_f64(*v)));
        t.push(row);
    }
    t
}

pub fn cfg_from_table(table: &Table) -> Result<Vec<TrajectoryCfg>> {
    let id_col = table.require("trajectory_id")?;
    let outcome_col = table.require("outcome")?;
    let cols = CFG_FEATURE_NAMES
        .iter()
        .map(|n| table.require(n))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let v = cols
                .iter()
                .zip(CFG_FEATURE_NAMES)
                .map(|(&c, name)| parse_req(&row[c], name))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrajectoryCfg {
                id: row[id_col].clone(),
                config: config_from_row(table, row)?,
                outcome: row[outcome_col].parse().map_err(Error::Schema)?,
                features: CfgFeatures {
                    motif_entropy: v[0],
                    transition_entropy: v[1],
                    self_loop_rate: v[2],
                    revisit_rate: v[3],
                    backtrack_rate: v[4],
                    post_error_motif_ratio: v[5],
                },
            })
        })
        .collect()
}
