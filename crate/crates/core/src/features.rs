//! Behavioral features per trajectory and their per-configuration medians.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::annotate::AnnotatedTrajectory;
use crate::error::{Error, Result};
use crate::model::{ActionCategory, ConfigurationId, Outcome};
use crate::stats;
use crate::table::{fmt_f64, fmt_opt, parse_count, parse_opt, Table};

/// The sixteen feature names in canonical column order.
pub const FEATURE_NAMES: [&str; 16] = [
    "exploration_ratio",
    "modification_ratio",
    "test_ratio",
    "navigation_ratio",
    "trajectory_length_log",
    "transition_entropy",
    "exploration_frontloading",
    "first_modification_timing",
    "phase_transition_point",
    "late_stage_entropy",
    "error_rate",
    "cascade_rate",
    "recovery_rate",
    "repetition_rate",
    "mean_cascade_length",
    "productive_turn_ratio",
];

/// Turns after an error that count as "the next turns" for cascade rate.
pub const FOLLOW_WINDOW: usize = 3;

/// Trailing window used to find the dominant action category.
pub const DOMINANCE_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub exploration_ratio: f64,
    pub modification_ratio: f64,
    pub test_ratio: f64,
    pub navigation_ratio: f64,
    pub trajectory_length_log: f64,
    pub transition_entropy: f64,
    pub exploration_frontloading: f64,
    pub first_modification_timing: Option<f64>,
    pub phase_transition_point: Option<f64>,
    pub late_stage_entropy: f64,
    pub error_rate: f64,
    pub cascade_rate: f64,
    pub recovery_rate: f64,
    pub repetition_rate: f64,
    pub mean_cascade_length: f64,
    pub productive_turn_ratio: f64,
}

impl FeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 16] {
        [
            Some(self.exploration_ratio),
            Some(self.modification_ratio),
            Some(self.test_ratio),
            Some(self.navigation_ratio),
            Some(self.trajectory_length_log),
            Some(self.transition_entropy),
            Some(self.exploration_frontloading),
            self.first_modification_timing,
            self.phase_transition_point,
            Some(self.late_stage_entropy),
            Some(self.error_rate),
            Some(self.cascade_rate),
            Some(self.recovery_rate),
            Some(self.repetition_rate),
            Some(self.mean_cascade_length),
            Some(self.productive_turn_ratio),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.values()[i])
    }

    /// Inverse of [`values`](Self::values). Required (non-optional) features
    /// must be present.
    pub fn from_values(v: &[Option<f64>]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::invalid(format!("expected 16 feature values, got {}", v.len())));
        }
        let req = |i: usize| {
            v[i].ok_or_else(|| Error::Schema(format!("missing value for {}", FEATURE_NAMES[i])))
        };
        Ok(Self {
            exploration_ratio: req(0)?,
            modification_ratio: req(1)?,
            test_ratio: req(2)?,
            navigation_ratio: req(3)?,
            trajectory_length_log: req(4)?,
            transition_entropy: req(5)?,
            exploration_frontloading: req(6)?,
            first_modification_timing: v[7],
            phase_transition_point: v[8],
            late_stage_entropy: req(9)?,
            error_rate: req(10)?,
            cascade_rate: req(11)?,
            recovery_rate: req(12)?,
            repetition_rate: req(13)?,
            mean_cascade_length: req(14)?,
            productive_turn_ratio: req(15)?,
        })
    }
}

/// Normalized position of 1-based turn `index` in an `n`-turn trajectory.
fn position(index: usize, n: usize) -> Option<f64> {
    (n > 1).then(|| (index - 1) as f64 / (n - 1) as f64)
}

/// Shannon entropy of the category-bigram distribution of a sequence.
pub fn category_transition_entropy(cats: &[ActionCategory]) -> f64 {
    let mut counts = [0usize; 36];
    for w in cats.windows(2) {
        counts[w[0].index() * 6 + w[1].index()] += 1;
    }
    stats::entropy(counts)
}

/// First 1-based index of the late segment: turns with index > ⌊3N/4⌋.
pub fn late_segment_start(n: usize) -> usize {
    3 * n / 4 + 1
}

/// Whether the late segment has at least one transition.
pub fn late_stage_defined(n: usize) -> bool {
    n + 1 >= late_segment_start(n) + 2
}

/// Dominant category at each turn: the mode of the trailing window. Ties keep
/// the previous dominant category when it is among the tied ones, and
/// otherwise go to the tied category seen most recently.
pub fn dominant_categories(cats: &[ActionCategory]) -> Vec<ActionCategory> {
    let mut out: Vec<ActionCategory> = Vec::with_capacity(cats.len());
    for i in 0..cats.len() {
        let window = &cats[i.saturating_sub(DOMINANCE_WINDOW - 1)..=i];
        let mut counts = [0usize; 6];
        let mut last_seen = [0usize; 6];
        for (j, c) in window.iter().enumerate() {
            counts[c.index()] += 1;
            last_seen[c.index()] = j;
        }
        let best = *counts.iter().max().expect("six counts");
        let tied: Vec<ActionCategory> = ActionCategory::ALL
            .into_iter()
            .filter(|c| counts[c.index()] == best)
            .collect();
        let pick = match out.last() {
            Some(prev) if tied.contains(prev) => *prev,
            _ => *tied
                .iter()
                .max_by_key(|c| last_seen[c.index()])
                .expect("at least one tied category"),
        };
        out.push(pick);
    }
    out
}

pub fn trajectory_features(t: &AnnotatedTrajectory) -> FeatureVector {
    let n = t.len();
    if n == 0 {
        return FeatureVector::default();
    }
    let nf = n as f64;
    let cats = &t.categories;
    let count = |c: ActionCategory| cats.iter().filter(|&&x| x == c).count();
    let ratio = |c: ActionCategory| count(c) as f64 / nf;

    let explorations = count(ActionCategory::Exploration);
    let front_cut = n.div_ceil(4);
    let early_explorations = cats[..front_cut]
        .iter()
        .filter(|&&c| c == ActionCategory::Exploration)
        .count();
    let exploration_frontloading = if explorations == 0 {
        0.0
    } else {
        early_explorations as f64 / explorations as f64
    };

    let first_modification_timing = cats
        .iter()
        .position(|&c| c == ActionCategory::Modification)
        .and_then(|i| position(i + 1, n));

    let dominant = dominant_categories(cats);
    let phase_transition_point = dominant
        .iter()
        .position(|&d| d != dominant[0])
        .and_then(|i| position(i + 1, n));

    let late = &cats[late_segment_start(n) - 1..];
    let late_stage_entropy = category_transition_entropy(late);

    let errors = t.error_flags();
    let error_count = errors.iter().filter(|&&e| e).count();
    let (cascade_rate, recovery_rate) = if error_count == 0 {
        (0.0, 0.0)
    } else {
        let mut propagated = 0;
        let mut recovered = 0;
        for i in (0..n).filter(|&i| errors[i]) {
            let window = &errors[(i + 1).min(n)..(i + 1 + FOLLOW_WINDOW).min(n)];
            if window.iter().any(|&e| e) {
                propagated += 1;
            }
            // recovery: the run of errors ends here and a clean turn follows
            if window.first() == Some(&false) {
                recovered += 1;
            }
        }
        (
            propagated as f64 / error_count as f64,
            recovered as f64 / error_count as f64,
        )
    };

    let mut seen = HashSet::new();
    let repeats: Vec<bool> = t
        .base
        .turns
        .iter()
        .map(|turn| !seen.insert(turn.action.action_string()))
        .collect();
    let repeat_count = repeats.iter().filter(|&&r| r).count();
    let productive = (0..n).filter(|&i| !errors[i] && !repeats[i]).count();

    let mean_cascade_length = if t.cascades.is_empty() {
        0.0
    } else {
        t.cascades.iter().map(|&(_, l)| l as f64).sum::<f64>() / t.cascades.len() as f64
    };

    FeatureVector {
        exploration_ratio: ratio(ActionCategory::Exploration),
        modification_ratio: ratio(ActionCategory::Modification),
        test_ratio: ratio(ActionCategory::Test),
        navigation_ratio: ratio(ActionCategory::Navigation),
        trajectory_length_log: (1.0 + nf).ln(),
        transition_entropy: category_transition_entropy(cats),
        exploration_frontloading,
        first_modification_timing,
        phase_transition_point,
        late_stage_entropy,
        error_rate: error_count as f64 / nf,
        cascade_rate,
        recovery_rate,
        repetition_rate: repeat_count as f64 / nf,
        mean_cascade_length,
        productive_turn_ratio: productive as f64 / nf,
    }
}

/// Features of one trajectory together with its identity and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFeatures {
    pub id: String,
    pub config: ConfigurationId,
    pub outcome: Outcome,
    pub n_turns: usize,
    pub features: FeatureVector,
}

pub fn all_trajectory_features(items: &[AnnotatedTrajectory]) -> Vec<TrajectoryFeatures> {
    items
        .par_iter()
        .map(|a| TrajectoryFeatures {
            id: a.base.id.clone(),
            config: a.base.config.clone(),
            outcome: a.base.outcome,
            n_turns: a.len(),
            features: trajectory_features(a),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFeatureSummary {
    pub config: ConfigurationId,
    pub n_trajectories: usize,
    /// Medians in [`FEATURE_NAMES`] order; `None` when every trajectory
    /// lacks the feature.
    pub features: [Option<f64>; 16],
    pub mean_turns: f64,
}

impl ConfigFeatureSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        if name == "mean_turns" {
            return Some(self.mean_turns);
        }
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.features[i])
    }
}

/// Per-configuration medians. `trajectory_length_log` is log(1 + median turn
/// count); `mean_turns` is the arithmetic mean turn count.
pub fn config_summary(rows: &[&TrajectoryFeatures]) -> Result<ConfigFeatureSummary> {
    let first = rows
        .first()
        .ok_or_else(|| Error::invalid("config summary of zero trajectories"))?;
    if let Some(other) = rows.iter().find(|r| r.config != first.config) {
        return Err(Error::invalid(format!(
            "mixed configurations in one summary: {} and {}",
            first.config, other.config
        )));
    }
    let mut features = [None; 16];
    for (i, slot) in features.iter_mut().enumerate() {
        let present: Vec<f64> = rows.iter().filter_map(|r| r.features.values()[i]).collect();
        *slot = stats::median(&present);
    }
    let turns: Vec<f64> = rows.iter().map(|r| r.n_turns as f64).collect();
    let median_turns = stats::median(&turns).expect("non-empty");
    features[4] = Some((1.0 + median_turns).ln());
    Ok(ConfigFeatureSummary {
        config: first.config.clone(),
        n_trajectories: rows.len(),
        features,
        mean_turns: stats::mean(&turns).expect("non-empty"),
    })
}

/// One summary per configuration, ordered by (framework, llm).
pub fn summarize(rows: &[TrajectoryFeatures]) -> Vec<ConfigFeatureSummary> {
    let mut groups: BTreeMap<&ConfigurationId, Vec<&TrajectoryFeatures>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.config).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| config_summary(&g).expect("groups share a configuration"))
        .collect()
}

pub(crate) const CONFIG_COLUMNS: [&str; 4] = ["framework", "framework_version", "llm", "llm_family"];

fn config_cells(c: &ConfigurationId) -> Vec<String> {
    vec![
        c.framework.clone(),
        c.framework_version.clone().unwrap_or_default(),
        c.llm.clone(),
        c.llm_family.clone(),
    ]
}

pub(crate) fn config_from_row(table: &Table, row: &[String]) -> Result<ConfigurationId> {
    let get = |name: &str| -> Result<String> { Ok(row[table.require(name)?].clone()) };
    let version = match table.column("framework_version") {
        Some(i) if !row[i].is_empty() => Some(row[i].clone()),
        _ => None,
    };
    Ok(ConfigurationId {
        framework: get("framework")?,
        framework_version: version,
        llm: get("llm")?,
        llm_family: get("llm_family")?,
    })
}

pub fn summaries_table(items: &[ConfigFeatureSummary]) -> Table {
    let mut headers: Vec<&str> = CONFIG_COLUMNS.to_vec();
    headers.push("n_trajectories");
    headers.extend(FEATURE_NAMES);
    headers.push("mean_turns");
    let mut t = Table::new(&headers);
    for s in items {
        let mut row = config_cells(&s.config);
        row.push(s.n_trajectories.to_string());
        row.extend(s.features.iter().map(|v| fmt_opt(*v)));
        row.push(fmt_f64(s.mean_turns));
        t.push(row);
    }
    t
}

pub fn summaries_from_table(table: &Table) -> Result<Vec<ConfigFeatureSummary>> {
    let n_col = table.require("n_trajectories")?;
    let mean_col = table.require("mean_turns")?;
    let cols = FEATURE_NAMES
        .iter()
        .map(|n| table.require(n))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let config = config_from_row(table, row)?;
            let mut features = [None; 16];
            for (i, &c) in cols.iter().enumerate() {
                features[i] = parse_opt(&row[c], FEATURE_NAMES[i])?;
            }
            Ok(ConfigFeatureSummary {
                config,
                n_trajectories: parse_count(&row[n_col], "n_trajectories")?,
                features,
                mean_turns: parse_opt(&row[mean_col], "mean_turns")?
                    .ok_or_else(|| Error::Schema("mean_turns: empty value".into()))?,
            })
        })
        .collect()
}

pub fn trajectory_table(items: &[TrajectoryFeatures]) -> Table {
    let mut headers = vec!["trajectory_id"];
    headers.extend(CONFIG_COLUMNS);
    headers.extend(["outcome", "n_turns"]);
    headers.extend(FEATURE_NAMES);
    let mut t = Table::new(&headers);
    for r in items {
        let mut row = vec![r.id.clone()];
        row.extend(config_cells(&r.config));
        row.push(r.outcome.as_str().to_string());
        row.push(r.n_turns.to_string());
        row.extend(r.features.values().iter().map(|v| fmt_opt(*v)));
        t.push(row);
    }
    t
}

pub fn trajectories_from_table(table: &Table) -> Result<Vec<TrajectoryFeatures>> {
    let id_col = table.require("trajectory_id")?;
    let outcome_col = table.require("outcome")?;
    let turns_col = table.require("n_turns")?;
    let cols = FEATURE_NAMES
        .iter()
        .map(|n| table.require(n))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let values = cols
                .iter()
                .zip(FEATURE_NAMES)
                .map(|(&c, name)| parse_opt(&row[c], name))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrajectoryFeatures {
                id: row[id_col].clone(),
                config: config_from_row(table, row)?,
                outcome: row[outcome_col].parse().map_err(Error::Schema)?,
                n_turns: parse_count(&row[turns_col], "n_turns")?,
                features: FeatureVector::from_values(&values)?,
            })
        })
        .collect()
}
