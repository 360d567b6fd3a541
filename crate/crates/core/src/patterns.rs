//! The seven binary behavioral patterns and their threshold manifest.
//!
//! | id | true when |
//! |----|-----------|
//! | p1 | an Exploration turn precedes the first Modification |
//! | p2 | exploration ratio lies in the manifest band (inclusive) |
//! | p3 | the longest cascade is shorter than the manifest median |
//! | p4 | the first cascade lasts at most `recovery_max_turns` turns |
//! | p5 | the trajectory is shorter than the manifest median length |
//! | p6 | late-stage entropy is below the manifest median |
//! | p7 | a Test turn follows some Modification turn |
//!
//! p1/p7 are absent without a Modification turn, p3 without an error turn,
//! p4 without a cascade, and p6 when the late segment has no transition.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::AnnotatedTrajectory;
use crate::error::{Error, Result};
use crate::features::{config_from_row, late_stage_defined, trajectory_features, FeatureVector};
use crate::model::{ActionCategory, ConfigurationId, Outcome};
use crate::stats;
use crate::table::Table;

pub const PATTERN_NAMES: [&str; 7] = ["p1", "p2", "p3", "p4", "p5", "p6", "p7"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdManifest {
    pub cascade_median: f64,
    pub length_median: f64,
    pub late_entropy_median: f64,
    pub exploration_band: (f64, f64),
    pub recovery_max_turns: usize,
    pub source: String,
}

impl ThresholdManifest {
    pub const DEFAULT_BAND: (f64, f64) = (0.30, 0.50);
    pub const DEFAULT_RECOVERY_MAX_TURNS: usize = 2;

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.exploration_band;
        if !(lo < hi) {
            return Err(Error::Config(format!("exploration band ({lo}, {hi}) must have low < high")));
        }
        if self.recovery_max_turns < 1 {
            return Err(Error::Config("recovery_max_turns must be at least 1".into()));
        }
        for (name, v) in [
            ("cascade_median", self.cascade_median),
            ("length_median", self.length_median),
            ("late_entropy_median", self.late_entropy_median),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("threshold manifest {}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json()))
    }
}

fn max_cascade(t: &AnnotatedTrajectory) -> usize {
    t.cascades.iter().map(|c| c.1).max().unwrap_or(0)
}

/// Derives a manifest from a reference corpus.
///
/// The cascade median is taken over trajectories that have at least one
/// cascade (the population p3 applies to), and the late-entropy median over
/// trajectories whose late segment has a transition; each is 0 when that
/// population is empty.
pub fn compute_thresholds(trajs: &[AnnotatedTrajectory], source: &str) -> Result<ThresholdManifest> {
    if trajs.is_empty() {
        return Err(Error::invalid("cannot calibrate thresholds on an empty corpus"));
    }
    let cascades: Vec<f64> = trajs
        .iter()
        .filter(|t| !t.cascades.is_empty())
        .map(|t| max_cascade(t) as f64)
        .collect();
    let lengths: Vec<f64> = trajs.iter().map(|t| t.len() as f64).collect();
    let late: Vec<f64> = trajs
        .iter()
        .filter(|t| late_stage_defined(t.len()))
        .map(|t| trajectory_features(t).late_stage_entropy)
        .collect();
    Ok(ThresholdManifest {
        cascade_median: stats::median(&cascades).unwrap_or(0.0),
        length_median: stats::median(&lengths).expect("non-empty corpus"),
        late_entropy_median: stats::median(&late).unwrap_or(0.0),
        exploration_band: ThresholdManifest::DEFAULT_BAND,
        recovery_max_turns: ThresholdManifest::DEFAULT_RECOVERY_MAX_TURNS,
        source: source.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PatternVector(pub [Option<bool>; 7]);

impl PatternVector {
    pub fn get(&self, name: &str) -> Option<bool> {
        PATTERN_NAMES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.0[i])
    }
}

pub fn detect_patterns(
    t: &AnnotatedTrajectory,
    f: &FeatureVector,
    m: &ThresholdManifest,
) -> PatternVector {
    let cats = &t.categories;
    let n = t.len();
    let first_mod = cats.iter().position(|&c| c == ActionCategory::Modification);
    let p1 = first_mod.map(|i| cats[..i].contains(&ActionCategory::Exploration));
    let (lo, hi) = m.exploration_band;
    let p2 = Some(lo <= f.exploration_ratio && f.exploration_ratio <= hi);
    let has_error = t.error_types.iter().any(Option::is_some);
    let p3 = has_error.then(|| (max_cascade(t) as f64) < m.cascade_median);
    let p4 = t.cascades.first().map(|c| c.1 <= m.recovery_max_turns);
    let p5 = Some((n as f64) < m.length_median);
    let p6 = late_stage_defined(n).then(|| f.late_stage_entropy < m.late_entropy_median);
    let p7 = first_mod.map(|i| cats[i + 1..].contains(&ActionCategory::Test));
    PatternVector([p1, p2, p3, p4, p5, p6, p7])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPatterns {
    pub id: String,
    pub config: ConfigurationId,
    pub outcome: Outcome,
    pub patterns: PatternVector,
}

pub fn all_patterns(items: &[AnnotatedTrajectory], m: &ThresholdManifest) -> Vec<TrajectoryPatterns> {
    items
        .par_iter()
        .map(|a| TrajectoryPatterns {
            id: a.base.id.clone(),
            config: a.base.config.clone(),
            outcome: a.base.outcome,
            patterns: detect_patterns(a, &trajectory_features(a), m),
        })
        .collect()
}

pub fn patterns_table(items: &[TrajectoryPatterns]) -> Table {
    let mut headers = vec![
        "trajectory_id",
        "framework",
        "framework_version",
        "llm",
        "llm_family",
        "outcome",
    ];
    headers.extend(PATTERN_NAMES);
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
        row.extend(r.patterns.0.iter().map(|p| match p {
            Some(b) => b.to_string(),
            None => String::new(),
        }));
        t.push(row);
    }
    t
}

pub fn patterns_from_table(table: &Table) -> Result<Vec<TrajectoryPatterns>> {
    let id_col = table.require("trajectory_id")?;
    let outcome_col = table.require("outcome")?;
    let cols = PATTERN_NAMES
        .iter()
        .map(|n| table.require(n))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let mut p = [None; 7];
            for (i, &c) in cols.iter().enumerate() {
                p[i] = match row[c].as_str() {
                    "" => None,
                    "true" => Some(true),
                    "false" => Some(false),
                    other => {
                        return Err(Error::Schema(format!(
                            "{}: expected true, false or empty, got {other:?}",
                            PATTERN_NAMES[i]
                        )))
                    }
                };
            }
            Ok(TrajectoryPatterns {
                id: row[id_col].clone(),
                config: config_from_row(table, row)?,
                outcome: row[outcome_col].parse().map_err(Error::Schema)?,
                patterns: PatternVector(p),
            })
        })
        .collect()
}
