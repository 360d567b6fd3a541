//! Per-feature summary table joining pooled effects, moderator fits and the
//! permutation diagnostic, plus a long-format per-configuration effect file
//! for beeswarm plots.

use std::collections::BTreeMap;

use crate::effects::EffectEstimate;
use crate::error::Result;
use crate::meta::{MetaResult, Moderator, ModeratorFit};
use crate::robustness::RobustnessReport;
use crate::table::{fmt_f64, Table};

pub const REPORT_COLUMNS: [&str; 10] = [
    "feature",
    "k",
    "pooled_effect",
    "n_pos",
    "n_neg",
    "i2",
    "classification",
    "r2_framework",
    "r2_llm_family",
    "dagger",
];

/// One row per pooled feature. The R² columns are blank when no fit exists,
/// and `dagger` (framework R² beats the permutation baseline) is blank when
/// no framework diagnostic exists.
pub fn summary_table(meta: &[MetaResult], fits: &[ModeratorFit], robust: &[RobustnessReport]) -> Table {
    let fit: BTreeMap<(&str, Moderator), f64> = fits
        .iter()
        .map(|f| ((f.feature.as_str(), f.moderator), f.r2))
        .collect();
    let dagger: BTreeMap<&str, bool> = robust
        .iter()
        .filter(|r| r.moderator == Moderator::Framework)
        .map(|r| (r.feature.as_str(), r.passes_chance_baseline))
        .collect();
    let r2 = |f: &str, m| fit.get(&(f, m)).map(|x| fmt_f64(*x)).unwrap_or_default();
    let mut t = Table::new(&REPORT_COLUMNS);
    for m in meta {
        t.push(vec![
            m.feature.clone(),
            m.k.to_string(),
            fmt_f64(m.pooled_effect),
            m.n_pos.to_string(),
            m.n_neg.to_string(),
            fmt_f64(m.i2),
            m.classification.as_str().into(),
            r2(&m.feature, Moderator::Framework),
            r2(&m.feature, Moderator::LlmFamily),
            dagger.get(m.feature.as_str()).map(|d| d.to_string()).unwrap_or_default(),
        ]);
    }
    t
}

pub const BEESWARM_COLUMNS: [&str; 9] = [
    "feature",
    "framework",
    "llm",
    "llm_family",
    "kind",
    "effect",
    "variance",
    "pooled_effect",
    "classification",
];

/// One row per configuration effect, annotated with its feature's pooled
/// effect and class when the feature was pooled.
pub fn beeswarm_table(effects: &[EffectEstimate], meta: &[MetaResult]) -> Table {
    let pooled: BTreeMap<&str, &MetaResult> = meta.iter().map(|m| (m.feature.as_str(), m)).collect();
    let mut t = Table::new(&BEESWARM_COLUMNS);
    for e in effects {
        let m = pooled.get(e.feature.as_str());
        t.push(vec![
            e.feature.clone(),
            e.config.framework.clone(),
            e.config.llm.clone(),
            e.config.llm_family.clone(),
            e.kind.as_str().into(),
            fmt_f64(e.effect),
            fmt_f64(e.variance),
            m.map(|m| fmt_f64(m.pooled_effect)).unwrap_or_default(),
            m.map(|m| m.classification.as_str().to_string()).unwrap_or_default(),
        ]);
    }
    t
}

/// Loads the report inputs from disk; `fits` and `robust` are optional.
pub fn load_inputs(
    meta: &std::path::Path,
    fits: Option<&std::path::Path>,
    robust: Option<&std::path::Path>,
) -> Result<(Vec<MetaResult>, Vec<ModeratorFit>, Vec<RobustnessReport>)> {
    let meta = crate::meta::meta_from_table(&Table::read_path(meta)?)?;
    let fits = match fits {
        Some(p) => crate::meta::fits_from_table(&Table::read_path(p)?)?,
        None => Vec::new(),
    };
    let robust = match robust {
        Some(p) => crate::robustness::read_reports(p)?,
        None => Vec::new(),
    };
    Ok((meta, fits, robust))
}
