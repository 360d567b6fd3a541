#![allow(dead_code)]

use std::path::{Path, PathBuf};

use trajscope::annotate::{annotate_all, RuleSet};
use trajscope::ingest::write_canonical;
use trajscope::patterns::compute_thresholds;
use trajscope::synth::{
    generate_ecosystem, Direction, EcosystemEntry, LengthDist, OutcomeModel, RegimeSpec, TURN_COUNT,
};
use trajscope::{ActionCategory, ConfigurationId, Trajectory};

pub fn regime(name: &str, direction: Direction, strength: f64) -> RegimeSpec {
    RegimeSpec {
        name: name.into(),
        length_dist: LengthDist { min: 5.0, max: 60.0, mode: 20.0 },
        action_mix: [
            (ActionCategory::Exploration, 0.35),
            (ActionCategory::Modification, 0.2),
            (ActionCategory::Test, 0.2),
            (ActionCategory::Navigation, 0.1),
            (ActionCategory::Utility, 0.1),
            (ActionCategory::Unknown, 0.05),
        ]
        .into_iter()
        .collect(),
        error_prob: 0.15,
        cascade_stickiness: 0.4,
        repeat_prob: 0.1,
        outcome_model: OutcomeModel {
            feature: TURN_COUNT.into(),
            direction,
            strength,
            base_rate: 0.5,
        },
    }
}

/// Configurations `0..n_configs`; the first half have lower turn counts
/// favouring resolution (positive rank-biserial), the rest the opposite.
/// `framework(i, positive)` names each configuration's framework.
pub fn planted_ecosystem(
    n_configs: usize,
    per_config: usize,
    strength: f64,
    framework: impl Fn(usize, bool) -> String,
) -> Vec<EcosystemEntry> {
    (0..n_configs)
        .map(|i| {
            let positive = i < n_configs / 2;
            let direction = if positive { Direction::Lower } else { Direction::Higher };
            EcosystemEntry {
                config: ConfigurationId::new(framework(i, positive), format!("llm-{i:02}"), format!("family-{}", i % 3)),
                n: per_config,
                spec: regime(if positive { "pos" } else { "neg" }, direction, strength),
            }
        })
        .collect()
}

pub fn write_corpus(dir: &Path, name: &str, trajectories: &[Trajectory]) -> PathBuf {
    let path = dir.join(name);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    write_canonical(&mut f, trajectories).unwrap();
    drop(f);
    path
}

/// Threshold manifest calibrated on an independent reference corpus.
pub fn reference_thresholds(dir: &Path) -> PathBuf {
    let entries = planted_ecosystem(4, 100, 0.0, |i, _| format!("ref-{i}"));
    let corpus = generate_ecosystem(&entries, 999).unwrap();
    let annotated = annotate_all(corpus, &RuleSet::default(), 1);
    let manifest = compute_thresholds(&annotated, "synthetic reference").unwrap();
    let path = dir.join("thresholds.json");
    std::fs::write(&path, manifest.to_json()).unwrap();
    path
}
