//! Per-configuration effect sizes and the nonparametric tests around them.
//!
//! Signs follow one convention throughout: a positive signed Cramér's V means
//! pattern presence goes with resolution, and a positive rank-biserial r
//! means lower feature values go with resolution.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{config_from_row, TrajectoryFeatures};
use crate::model::{ConfigurationId, Outcome};
use crate::motif::{TrajectoryCfg, CFG_FEATURE_NAMES};
use crate::patterns::{TrajectoryPatterns, PATTERN_NAMES};
use crate::rng::SeededRng;
use crate::stats::midranks;
use crate::table::{fmt_f64, parse_count, parse_req, Table};

/// Trajectory-level features that enter the continuous meta-analysis, in
/// addition to the six motif-graph features.
pub const TRAJECTORY_EFFECT_FEATURES: [&str; 7] = [
    "exploration_ratio",
    "modification_ratio",
    "test_ratio",
    "error_rate",
    "cascade_rate",
    "repetition_rate",
    "mean_turns",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    CramersV,
    RankBiserial,
}

impl EffectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectKind::CramersV => "cramers_v",
            EffectKind::RankBiserial => "rank_biserial",
        }
    }
}

impl std::str::FromStr for EffectKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cramers_v" => Ok(EffectKind::CramersV),
            "rank_biserial" => Ok(EffectKind::RankBiserial),
            other => Err(format!("unknown effect kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub config: ConfigurationId,
    pub feature: String,
    pub kind: EffectKind,
    pub effect: f64,
    pub variance: f64,
    pub n_resolved: usize,
    pub n_unresolved: usize,
}

/// Signed Cramér's V (the phi coefficient) of a 2×2 table
/// `[[a, b], [c, d]]` with rows pattern present/absent and columns
/// resolved/failed, and its large-sample variance 1/n.
///
/// `Ok(None)` when any marginal is zero.
pub fn cramers_v_signed(table: [[i64; 2]; 2]) -> Result<Option<(f64, f64)>> {
    let [[a, b], [c, d]] = table;
    if [a, b, c, d].iter().any(|&x| x < 0) {
        return Err(Error::invalid(format!("negative count in contingency table {table:?}")));
    }
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let margins = (a + b) * (c + d) * (a + c) * (b + d);
    if margins == 0.0 {
        return Ok(None);
    }
    let phi = (a * d - b * c) / margins.sqrt();
    Ok(Some((phi.clamp(-1.0, 1.0), 1.0 / (a + b + c + d))))
}

/// Mann–Whitney U of the first group (pairs where it is larger, ties 0.5)
/// from midranks of the pooled sample.
pub fn mann_whitney_u(first: &[f64], second: &[f64]) -> f64 {
    let pooled: Vec<f64> = first.iter().chain(second).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let n1 = first.len() as f64;
    let r1: f64 = ranks[..first.len()].iter().sum();
    r1 - n1 * (n1 + 1.0) / 2.0
}

/// Rank-biserial r = 1 − 2U/(n₁n₂) with U of the resolved group, and the
/// normal-approximation variance (n₁+n₂+1)/(3n₁n₂).
pub fn rank_biserial(resolved: &[f64], unresolved: &[f64]) -> Result<(f64, f64)> {
    if resolved.is_empty() || unresolved.is_empty() {
        return Err(Error::invalid("rank-biserial needs two non-empty groups"));
    }
    let (n1, n2) = (resolved.len() as f64, unresolved.len() as f64);
    let u = mann_whitney_u(resolved, unresolved);
    let r = 1.0 - 2.0 * u / (n1 * n2);
    Ok((r, (n1 + n2 + 1.0) / (3.0 * n1 * n2)))
}

/// Kruskal–Wallis η² = (H − k + 1)/(n − k), with tie-corrected H, clipped
/// to [0, 1].
pub fn kruskal_eta2(groups: &[Vec<f64>]) -> Result<f64> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid("Kruskal–Wallis needs at least two groups"));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::invalid("Kruskal–Wallis groups must be non-empty"));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    if n <= k {
        return Err(Error::invalid("Kruskal–Wallis η² needs more observations than groups"));
    }
    let (ranks, ties) = midranks(&pooled);
    let nf = n as f64;
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = 12.0 / (nf * (nf + 1.0)) * sum - 3.0 * (nf + 1.0);
    let tie_sum: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let correction = 1.0 - tie_sum / (nf.powi(3) - nf);
    let h = if correction > 0.0 { h / correction } else { 0.0 };
    Ok(((h - k as f64 + 1.0) / (nf - k as f64)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

/// Cohen's bands for η²: 0.01 small, 0.06 medium, 0.14 large.
pub fn eta2_magnitude(eta2: f64) -> Magnitude {
    if eta2 >= 0.14 {
        Magnitude::Large
    } else if eta2 >= 0.06 {
        Magnitude::Medium
    } else if eta2 >= 0.01 {
        Magnitude::Small
    } else {
        Magnitude::Negligible
    }
}

/// Largest sample size for which the Wilcoxon null is enumerated exactly.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Paired Wilcoxon signed-rank test.
///
/// Zero differences are dropped and ties get midranks. Returns the statistic
/// min(W⁺, W⁻) and a two-sided p-value: exact (sign-flip enumeration) for up
/// to 25 nonzero differences, otherwise the tie-corrected normal
/// approximation. `None` when every difference is zero.
pub fn paired_wilcoxon(differences: &[f64]) -> Option<(f64, f64)> {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return None;
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let stat = w_plus.min(total - w_plus);

    let p = if n <= WILCOXON_EXACT_MAX {
        // midranks are multiples of 0.5, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut ways = vec![0f64; max + 1];
        ways[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                ways[s] += ways[s - r];
            }
        }
        let limit = (stat * 2.0).round() as usize;
        let tail: f64 = ways[..=limit].iter().sum::<f64>() / 2f64.powi(n as i32);
        (2.0 * tail).min(1.0)
    } else {
        let nf = n as f64;
        let mean = total / 2.0;
        let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        if var <= 0.0 {
            1.0
        } else {
            let z = (stat - mean) / var.sqrt();
            (2.0 * normal_cdf(z)).min(1.0)
        }
    };
    Some((stat, p))
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_total: usize,
    pub min_resolved: usize,
    pub min_unresolved: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_total: 20,
            min_resolved: 5,
            min_unresolved: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum VarianceMode {
    /// Closed forms: 1/n for V, (n₁+n₂+1)/(3n₁n₂) for r.
    Normal,
    /// Outcome-stratified bootstrap over the configuration's trajectories.
    Bootstrap { n_boot: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub feature: String,
    pub config: ConfigurationId,
    pub reason: String,
}

/// One analysis column: a value per trajectory (`None` when undefined).
/// Binary columns hold 1.0 / 0.0.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectColumn {
    pub name: String,
    pub kind: EffectKind,
    pub values: Vec<Option<f64>>,
}

/// Per-trajectory inputs to the effect computation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EffectInputs {
    pub configs: Vec<ConfigurationId>,
    pub outcomes: Vec<Outcome>,
    pub columns: Vec<EffectColumn>,
}

impl EffectInputs {
    /// Joins the per-trajectory tables on (framework, llm, trajectory id).
    /// The first non-empty table defines the trajectory set and order.
    pub fn assemble(
        features: Option<&[TrajectoryFeatures]>,
        cfg: Option<&[TrajectoryCfg]>,
        patterns: Option<&[TrajectoryPatterns]>,
    ) -> Result<Self> {
        type Key = (String, String, String);
        let key = |c: &ConfigurationId, id: &str| -> Key {
            (c.framework.clone(), c.llm.clone(), id.to_string())
        };
        let spine: Vec<(Key, ConfigurationId, Outcome)> = if let Some(f) = features {
            f.iter().map(|r| (key(&r.config, &r.id), r.config.clone(), r.outcome)).collect()
        } else if let Some(c) = cfg {
            c.iter().map(|r| (key(&r.config, &r.id), r.config.clone(), r.outcome)).collect()
        } else if let Some(p) = patterns {
            p.iter().map(|r| (key(&r.config, &r.id), r.config.clone(), r.outcome)).collect()
        } else {
            return Err(Error::invalid("effects need at least one per-trajectory table"));
        };
        let positions: HashMap<&Key, usize> =
            spine.iter().enumerate().map(|(i, s)| (&s.0, i)).collect();
        if positions.len() != spine.len() {
            return Err(Error::invalid("duplicate trajectory id within a configuration"));
        }
        let n = spine.len();
        let locate = |k: &Key, outcome: Outcome| -> Result<usize> {
            let i = *positions.get(k).ok_or_else(|| {
                Error::invalid(format!("trajectory {} ({}, {}) missing from the joined tables", k.2, k.0, k.1))
            })?;
            if spine[i].2 != outcome {
                return Err(Error::invalid(format!("trajectory {}: outcome differs between tables", k.2)));
            }
            Ok(i)
        };

        let mut columns = Vec::new();
        if let Some(f) = features {
            for name in TRAJECTORY_EFFECT_FEATURES {
                let mut values = vec![None; n];
                for r in f {
                    let i = locate(&key(&r.config, &r.id), r.outcome)?;
                    values[i] = if name == "mean_turns" {
                        Some(r.n_turns as f64)
                    } else {
                        r.features.get(name)
                    };
                }
                columns.push(EffectColumn {
                    name: name.to_string(),
                    kind: EffectKind::RankBiserial,
                    values,
                });
            }
        }
        if let Some(c) = cfg {
            for (j, name) in CFG_FEATURE_NAMES.iter().enumerate() {
                let mut values = vec![None; n];
                for r in c {
                    let i = locate(&key(&r.config, &r.id), r.outcome)?;
                    values[i] = Some(r.features.values()[j]);
                }
                columns.push(EffectColumn {
                    name: name.to_string(),
                    kind: EffectKind::RankBiserial,
                    values,
                });
            }
        }
        if let Some(p) = patterns {
            for (j, name) in PATTERN_NAMES.iter().enumerate() {
                let mut values = vec![None; n];
                for r in p {
                    let i = locate(&key(&r.config, &r.id), r.outcome)?;
                    values[i] = r.patterns.0[j].map(|b| if b { 1.0 } else { 0.0 });
                }
                columns.push(EffectColumn {
                    name: name.to_string(),
                    kind: EffectKind::CramersV,
                    values,
                });
            }
        }
        Ok(Self {
            configs: spine.iter().map(|s| s.1.clone()).collect(),
            outcomes: spine.iter().map(|s| s.2).collect(),
            columns,
        })
    }
}

/// Effect of one column on one set of trajectories, split by outcome.
fn effect_of(kind: EffectKind, resolved: &[f64], failed: &[f64]) -> Option<(f64, f64)> {
    match kind {
        EffectKind::RankBiserial => rank_biserial(resolved, failed).ok(),
        EffectKind::CramersV => {
            let count = |xs: &[f64], present: bool| {
                xs.iter().filter(|&&x| (x != 0.0) == present).count() as i64
            };
            let table = [
                [count(resolved, true), count(failed, true)],
                [count(resolved, false), count(failed, false)],
            ];
            cramers_v_signed(table).ok().flatten()
        }
    }
}

const BOOTSTRAP_STREAM: &str = "effect-variance";

fn bootstrap_variance(
    kind: EffectKind,
    resolved: &[f64],
    failed: &[f64],
    n_boot: usize,
    rng: &mut SeededRng,
) -> Option<f64> {
    let mut draws = Vec::with_capacity(n_boot);
    let mut r = vec![0.0; resolved.len()];
    let mut f = vec![0.0; failed.len()];
    for _ in 0..n_boot {
        for slot in r.iter_mut() {
            *slot = resolved[rng.below(resolved.len())];
        }
        for slot in f.iter_mut() {
            *slot = failed[rng.below(failed.len())];
        }
        if let Some((e, _)) = effect_of(kind, &r, &f) {
            draws.push(e);
        }
    }
    if draws.len() < 2 {
        return None;
    }
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    (v > 0.0).then_some(v)
}

/// Effect sizes per (feature, configuration).
///
/// Configurations failing the filter are skipped for every feature (skip
/// feature `*`); undefined effects are skipped per feature. Estimates and
/// skips are sorted by (feature, framework, llm).
pub fn per_config_effects(
    inputs: &EffectInputs,
    policy: &FilterPolicy,
    variance: VarianceMode,
) -> (Vec<EffectEstimate>, Vec<Skip>) {
    let mut groups: BTreeMap<&ConfigurationId, Vec<usize>> = BTreeMap::new();
    for (i, c) in inputs.configs.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut skips = Vec::new();
    let mut eligible = Vec::new();
    for (config, rows) in groups {
        let resolved = rows.iter().filter(|&&i| inputs.outcomes[i].is_resolved()).count();
        let unresolved = rows.len() - resolved;
        let reason = if rows.len() < policy.min_total {
            Some("min_total")
        } else if resolved < policy.min_resolved {
            Some("min_resolved")
        } else if unresolved < policy.min_unresolved {
            Some("min_unresolved")
        } else {
            None
        };
        match reason {
            Some(r) => skips.push(Skip {
                feature: "*".into(),
                config: config.clone(),
                reason: r.into(),
            }),
            None => eligible.push((config, rows)),
        }
    }

    let tasks: Vec<(&EffectColumn, &ConfigurationId, &Vec<usize>)> = inputs
        .columns
        .iter()
        .flat_map(|col| eligible.iter().map(move |(c, rows)| (col, *c, rows)))
        .collect();
    let results: Vec<std::result::Result<EffectEstimate, Skip>> = tasks
        .par_iter()
        .map(|&(col, config, rows)| {
            let mut resolved = Vec::new();
            let mut failed = Vec::new();
            for &i in rows {
                if let Some(v) = col.values[i] {
                    if inputs.outcomes[i].is_resolved() {
                        resolved.push(v);
                    } else {
                        failed.push(v);
                    }
                }
            }
            let skip = || Skip {
                feature: col.name.clone(),
                config: config.clone(),
                reason: "undefined".into(),
            };
            let (effect, normal_var) = effect_of(col.kind, &resolved, &failed).ok_or_else(skip)?;
            let variance = match variance {
                VarianceMode::Normal => normal_var,
                VarianceMode::Bootstrap { n_boot, seed } => {
                    let stream = format!("{BOOTSTRAP_STREAM}/{}/{}/{}", col.name, config.framework, config.llm);
                    let mut rng = SeededRng::substream(seed, &stream, 0);
                    bootstrap_variance(col.kind, &resolved, &failed, n_boot, &mut rng)
                        .unwrap_or(normal_var)
                }
            };
            Ok(EffectEstimate {
                config: config.clone(),
                feature: col.name.clone(),
                kind: col.kind,
                effect,
                variance,
                n_resolved: resolved.len(),
                n_unresolved: failed.len(),
            })
        })
        .collect();

    let mut estimates = Vec::new();
    for r in results {
        match r {
            Ok(e) => estimates.push(e),
            Err(s) => skips.push(s),
        }
    }
    estimates.sort_by(|a, b| (&a.feature, &a.config).cmp(&(&b.feature, &b.config)));
    skips.sort_by(|a, b| (&a.feature, &a.config).cmp(&(&b.feature, &b.config)));
    (estimates, skips)
}

pub const EFFECT_COLUMNS: [&str; 9] = [
    "framework",
    "llm",
    "llm_family",
    "feature",
    "kind",
    "effect",
    "variance",
    "n_resolved",
    "n_unresolved",
];

pub fn effects_table(items: &[EffectEstimate]) -> Table {
    let mut t = Table::new(&EFFECT_COLUMNS);
    for e in items {
        t.push(vec![
            e.config.framework.clone(),
            e.config.llm.clone(),
            e.config.llm_family.clone(),
            e.feature.clone(),
            e.kind.as_str().to_string(),
            fmt_f64(e.effect),
            fmt_f64(e.variance),
            e.n_resolved.to_string(),
            e.n_unresolved.to_string(),
        ]);
    }
    t
}

pub fn effects_from_table(table: &Table) -> Result<Vec<EffectEstimate>> {
    let col = |n: &str| table.require(n);
    let (feature, kind, effect, variance, n1, n2) = (
        col("feature")?,
        col("kind")?,
        col("effect")?,
        col("variance")?,
        col("n_resolved")?,
        col("n_unresolved")?,
    );
    table
        .rows
        .iter()
        .map(|row| {
            let e = EffectEstimate {
                config: config_from_row(table, row)?,
                feature: row[feature].clone(),
                kind: row[kind].parse().map_err(Error::Schema)?,
                effect: parse_req(&row[effect], "effect")?,
                variance: parse_req(&row[variance], "variance")?,
                n_resolved: parse_count(&row[n1], "n_resolved")?,
                n_unresolved: parse_count(&row[n2], "n_unresolved")?,
            };
            if !(e.variance > 0.0) || !(e.effect.abs() <= 1.0) {
                return Err(Error::Schema(format!(
                    "{} / {}: effect must lie in [-1, 1] with positive variance",
                    e.feature, e.config
                )));
            }
            Ok(e)
        })
        .collect()
}

pub fn skips_table(items: &[Skip]) -> Table {
    let mut t = Table::new(&["feature", "framework", "llm", "reason"]);
    for s in items {
        t.push(vec![
            s.feature.clone(),
            s.config.framework.clone(),
            s.config.llm.clone(),
            s.reason.clone(),
        ]);
    }
    t
}
