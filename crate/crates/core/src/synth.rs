//! Seeded synthetic trajectories with planted behavioral regimes and planted
//! feature → outcome effects, used as ground truth for the pipeline.
//!
//! Each turn draws an action category from the regime's mix (or repeats the
//! previous action verbatim), renders a command the default classifier maps
//! back to that category, and attaches either a clean observation or an
//! error observation rendered from templates that the default error rules
//! recognise. Outcomes follow a logistic model on one per-trajectory
//! feature, z-scored within the generated batch.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{annotate, RuleSet, DEFAULT_CASCADE_MIN_LEN};
use crate::error::{Error, Result};
use crate::features::{trajectory_features, FEATURE_NAMES};
use crate::model::{Action, ActionCategory, ConfigurationId, Observation, Outcome, Trajectory, Turn};
use crate::rng::SeededRng;

/// Feature name for the raw turn count in outcome models.
pub const TURN_COUNT: &str = "n_turns";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDist {
    pub min: f64,
    pub max: f64,
    pub mode: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Lower feature values make resolution more likely.
    Lower,
    /// Higher feature values make resolution more likely.
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    /// `n_turns` or one of the sixteen trajectory features.
    pub feature: String,
    pub direction: Direction,
    /// Logistic slope per standard deviation of the feature; 0 gives
    /// outcomes independent of behavior.
    pub strength: f64,
    /// Resolution probability at the batch mean of the feature.
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
}

fn default_base_rate() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub name: String,
    pub length_dist: LengthDist,
    /// Probabilities over action categories; missing categories are 0.
    pub action_mix: BTreeMap<ActionCategory, f64>,
    pub error_prob: f64,
    /// Probability that the turn after an error is also an error.
    pub cascade_stickiness: f64,
    /// Probability of repeating the previous action verbatim.
    pub repeat_prob: f64,
    pub outcome_model: OutcomeModel,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("regime {}: {msg}", self.name)));
        let l = self.length_dist;
        if !(l.min >= 1.0 && l.min <= l.mode && l.mode <= l.max && l.max.is_finite()) {
            return bad(format!("length_dist needs 1 ≤ min ≤ mode ≤ max, got {l:?}"));
        }
        let total: f64 = self.action_mix.values().sum();
        if self.action_mix.values().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("action_mix must be probabilities summing to 1, got sum {total}"));
        }
        for (name, p) in [
            ("error_prob", self.error_prob),
            ("cascade_stickiness", self.cascade_stickiness),
            ("repeat_prob", self.repeat_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let m = &self.outcome_model;
        if m.feature != TURN_COUNT && !FEATURE_NAMES.contains(&m.feature.as_str()) {
            return bad(format!("unknown outcome feature {:?}", m.feature));
        }
        if !m.strength.is_finite() || !(m.base_rate > 0.0 && m.base_rate < 1.0) {
            return bad("outcome strength must be finite and base_rate in (0, 1)".into());
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        ActionCategory::ALL
            .iter()
            .map(|c| self.action_mix.get(c).copied().unwrap_or(0.0))
            .collect()
    }
}

const EXPLORATION: &[&str] = &[
    "ls src/pkg_{j}",
    "cat src/module_{j}.py",
    "grep -rn \"name_{j}\" src",
    "find . -name \"*_{j}.py\"",
    "head -n 40 src/module_{j}.py",
];
const MODIFICATION: &[&str] = &[
    "sed -i 's/old_{j}/new_{j}/' src/module_{j}.py",
    "patch -p1 < fix_{j}.diff",
    "touch src/new_{j}.py",
    "cp src/module_{j}.py src/module_{j}_backup.py",
];
const TEST: &[&str] = &[
    "pytest tests/test_module_{j}.py",
    "python -m pytest -x tests/test_{j}.py",
    "python reproduce_{j}.py",
];
const NAVIGATION: &[&str] = &["cd src/pkg_{j}", "pwd", "cd .."];
const UTILITY: &[&str] = &["git status", "git diff src/module_{j}.py", "pip install pkg_{j}", "echo step_{j}"];
const UNKNOWN: &[&str] = &["./scripts/step_{j}.sh", "custom_tool_{j} --check"];

const CLEAN: &[&str] = &[
    "",
    "src/module_{j}.py\nsrc/util.py",
    "def handler_{j}(value):\n    return value",
    "4 passed in 0.{j}s",
    "ok",
    "/workspace/repo/src",
];

/// Error observations with the error type the default rules assign them.
pub const ERROR_TEMPLATES: &[(&str, &str)] = &[
    ("test_failure", "FAILED tests/test_module_{j}.py::test_case - assert 1 == 2\n1 failed, 3 passed in 0.12s"),
    ("traceback", "Traceback (most recent call last):\n  File \"src/module_{j}.py\", line 3, in <module>\nKeyError: 'name_{j}'"),
    ("syntax_error", "  File \"src/module_{j}.py\", line 7\nSyntaxError: invalid syntax"),
    ("import_error", "ModuleNotFoundError: No module named 'pkg_{j}'"),
    ("file_not_found", "cat: src/missing_{j}.py: No such file or directory"),
    ("command_not_found", "bash: tool_{j}: command not found"),
    ("patch_apply_failure", "error: patch failed: src/module_{j}.py:12"),
];

fn render(template: &str, rng: &mut SeededRng) -> String {
    template.replace("{j}", &rng.below(100).to_string())
}

fn command_for(category: ActionCategory, rng: &mut SeededRng) -> String {
    let pool = match category {
        ActionCategory::Exploration => EXPLORATION,
        ActionCategory::Modification => MODIFICATION,
        ActionCategory::Test => TEST,
        ActionCategory::Navigation => NAVIGATION,
        ActionCategory::Utility => UTILITY,
        ActionCategory::Unknown => UNKNOWN,
    };
    let t = pool[rng.below(pool.len())];
    render(t, rng)
}

fn draw_turns(spec: &RegimeSpec, weights: &[f64], rng: &mut SeededRng) -> Vec<Turn> {
    let l = spec.length_dist;
    let len = rng.triangular(l.min, l.max, l.mode).round().clamp(l.min, l.max) as usize;
    let mut turns: Vec<Turn> = Vec::with_capacity(len);
    let mut prev_error = false;
    for index in 1..=len {
        let action = match turns.last() {
            Some(prev) if rng.bernoulli(spec.repeat_prob) => prev.action.clone(),
            _ => Action::bash(command_for(ActionCategory::ALL[rng.categorical(weights)], rng)),
        };
        let p_error = if prev_error { spec.cascade_stickiness } else { spec.error_prob };
        let is_error = rng.bernoulli(p_error);
        let observation = if is_error {
            let (_, t) = ERROR_TEMPLATES[rng.below(ERROR_TEMPLATES.len())];
            Observation::new(render(t, rng), Some(1))
        } else {
            Observation::new(render(CLEAN[rng.below(CLEAN.len())], rng), Some(0))
        };
        prev_error = is_error;
        turns.push(Turn {
            index,
            thought: None,
            action,
            observation,
        });
    }
    turns
}

fn stream_name(kind: &str, config: &ConfigurationId) -> String {
    format!("synth-{kind}/{}/{}", config.framework, config.llm)
}

fn outcome_feature(t: &Trajectory, feature: &str, rules: &RuleSet) -> Option<f64> {
    if feature == TURN_COUNT {
        return Some(t.turns.len() as f64);
    }
    let a = annotate(t.clone(), rules, DEFAULT_CASCADE_MIN_LEN);
    trajectory_features(&a).get(feature)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws `n` trajectories for one configuration.
pub fn generate(spec: &RegimeSpec, n: usize, config: &ConfigurationId, seed: u64) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("generate needs n ≥ 1"));
    }
    let weights = spec.weights();
    let turn_stream = stream_name("turns", config);
    let mut trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::substream(seed, &turn_stream, i as u64);
            Trajectory {
                id: format!("{}-{:05}", spec.name, i + 1),
                config: config.clone(),
                turns: draw_turns(spec, &weights, &mut rng),
                outcome: Outcome::Failed,
            }
        })
        .collect();

    let rules = RuleSet::default();
    let m = &spec.outcome_model;
    let values: Vec<Option<f64>> = trajectories
        .par_iter()
        .map(|t| outcome_feature(t, &m.feature, &rules))
        .collect();
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = crate::stats::mean(&defined).unwrap_or(0.0);
    let sd = if defined.len() > 1 {
        (defined.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / defined.len() as f64).sqrt()
    } else {
        0.0
    };
    let sign = match m.direction {
        Direction::Lower => -1.0,
        Direction::Higher => 1.0,
    };
    let base = (m.base_rate / (1.0 - m.base_rate)).ln();
    let mut rng = SeededRng::substream(seed, &stream_name("outcome", config), 0);
    for (t, v) in trajectories.iter_mut().zip(&values) {
        // an undefined feature sits at the batch mean
        let z = match v {
            Some(x) if sd > 0.0 => (x - mean) / sd,
            _ => 0.0,
        };
        let p = logistic(base + sign * m.strength * z);
        t.outcome = if rng.bernoulli(p) { Outcome::Resolved } else { Outcome::Failed };
    }
    Ok(trajectories)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcosystemEntry {
    pub config: ConfigurationId,
    pub n: usize,
    pub spec: RegimeSpec,
}

/// Generates every configuration of a mixed corpus, in entry order.
pub fn generate_ecosystem(entries: &[EcosystemEntry], seed: u64) -> Result<Vec<Trajectory>> {
    if entries.len() < 2 {
        return Err(Error::invalid("an ecosystem needs at least two configurations"));
    }
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(&e.config) {
            return Err(Error::Config(format!("configuration {} appears twice", e.config)));
        }
    }
    let parts: Vec<Vec<Trajectory>> = entries
        .par_iter()
        .map(|e| generate(&e.spec, e.n, &e.config, seed))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Regime given inline or by name from the file's `regimes` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RegimeRef {
    Name(String),
    Inline(Box<RegimeSpec>),
}

#[derive(Debug, Clone, Deserialize)]
struct SpecFileEntry {
    framework: String,
    #[serde(default)]
    framework_version: Option<String>,
    llm: String,
    #[serde(default)]
    llm_family: Option<String>,
    n: usize,
    regime: RegimeRef,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default)]
    regimes: Vec<RegimeSpec>,
    configurations: Vec<SpecFileEntry>,
}

/// Parses a synthetic-corpus spec file:
///
/// ```json
/// {"regimes": [{"name": "short", ...}],
///  "configurations": [{"framework": "fw", "llm": "m", "n": 100, "regime": "short"}]}
/// ```
pub fn parse_spec_file(text: &str) -> Result<Vec<EcosystemEntry>> {
    let file: SpecFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("spec file: {e}")))?;
    let named: BTreeMap<&str, &RegimeSpec> = file.regimes.iter().map(|r| (r.name.as_str(), r)).collect();
    file.configurations
        .into_iter()
        .map(|c| {
            let spec = match c.regime {
                RegimeRef::Inline(s) => *s,
                RegimeRef::Name(n) => (*named
                    .get(n.as_str())
                    .ok_or_else(|| Error::Config(format!("unknown regime {n:?}")))?)
                .clone(),
            };
            let mut config = ConfigurationId::new(c.framework, c.llm, c.llm_family.unwrap_or_else(|| "unmapped".into()));
            config.framework_version = c.framework_version;
            Ok(EcosystemEntry { config, n: c.n, spec })
        })
        .collect()
}
