//! DerSimonian–Laird random-effects pooling and single-moderator
//! meta-regression.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::effects::{EffectEstimate, EffectKind};
use crate::error::{Error, Result};
use crate::model::ConfigurationId;
use crate::table::{fmt_f64, parse_count, parse_req, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    Universal,
    Moderate,
    ConfigSpecific,
}

impl Heterogeneity {
    /// I² below 25 is universal, 75 and above configuration-specific.
    pub fn classify(i2: f64) -> Self {
        if i2 < 25.0 {
            Heterogeneity::Universal
        } else if i2 < 75.0 {
            Heterogeneity::Moderate
        } else {
            Heterogeneity::ConfigSpecific
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Heterogeneity::Universal => "universal",
            Heterogeneity::Moderate => "moderate",
            Heterogeneity::ConfigSpecific => "config_specific",
        }
    }
}

impl std::str::FromStr for Heterogeneity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "universal" => Ok(Heterogeneity::Universal),
            "moderate" => Ok(Heterogeneity::Moderate),
            "config_specific" => Ok(Heterogeneity::ConfigSpecific),
            other => Err(format!("unknown heterogeneity class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaResult {
    pub feature: String,
    pub kind: EffectKind,
    pub k: usize,
    /// Random-effects pooled effect.
    pub pooled_effect: f64,
    /// Fixed-effect (inverse-variance) pooled effect.
    pub pooled_effect_fixed: f64,
    pub q: f64,
    pub tau2: f64,
    pub i2: f64,
    pub classification: Heterogeneity,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_zero: usize,
}

/// Summary statistics of one DL fit on raw effects and variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlFit {
    pub fixed_mean: f64,
    pub random_mean: f64,
    pub q: f64,
    pub tau2: f64,
    pub i2: f64,
}

pub fn dersimonian_laird(effects: &[f64], variances: &[f64]) -> Result<DlFit> {
    let k = effects.len();
    if k < 2 || variances.len() != k {
        return Err(Error::invalid(format!("pooling needs at least two effects, got {k}")));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!("sampling variances must be positive, got {v}")));
    }
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let fixed_mean = w.iter().zip(effects).map(|(w, y)| w * y).sum::<f64>() / sw;
    let q: f64 = w
        .iter()
        .zip(effects)
        .map(|(w, y)| w * (y - fixed_mean).powi(2))
        .sum();
    let df = (k - 1) as f64;
    let tau2 = ((q - df) / (sw - sw2 / sw)).max(0.0);
    let i2 = if q > df { 100.0 * (q - df) / q } else { 0.0 };
    let wr: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2)).collect();
    let random_mean =
        wr.iter().zip(effects).map(|(w, y)| w * y).sum::<f64>() / wr.iter().sum::<f64>();
    Ok(DlFit {
        fixed_mean,
        random_mean,
        q,
        tau2,
        i2,
    })
}

/// Counts effects above `zero_band`, below `-zero_band`, and in between.
pub fn direction_split(effects: &[f64], zero_band: f64) -> (usize, usize, usize) {
    let pos = effects.iter().filter(|&&e| e > zero_band).count();
    let neg = effects.iter().filter(|&&e| e < -zero_band).count();
    (pos, neg, effects.len() - pos - neg)
}

/// Pools the estimates of one feature.
pub fn pool(effects: &[EffectEstimate], zero_band: f64) -> Result<MetaResult> {
    let first = effects
        .first()
        .ok_or_else(|| Error::invalid("pooling needs at least two effects, got 0"))?;
    if effects.iter().any(|e| e.feature != first.feature) {
        return Err(Error::invalid("pool() expects the estimates of a single feature"));
    }
    let y: Vec<f64> = effects.iter().map(|e| e.effect).collect();
    let v: Vec<f64> = effects.iter().map(|e| e.variance).collect();
    let fit = dersimonian_laird(&y, &v)?;
    let (n_pos, n_neg, n_zero) = direction_split(&y, zero_band);
    Ok(MetaResult {
        feature: first.feature.clone(),
        kind: first.kind,
        k: effects.len(),
        pooled_effect: fit.random_mean,
        pooled_effect_fixed: fit.fixed_mean,
        q: fit.q,
        tau2: fit.tau2,
        i2: fit.i2,
        classification: Heterogeneity::classify(fit.i2),
        n_pos,
        n_neg,
        n_zero,
    })
}

/// Groups estimates by feature, preserving first-appearance order.
pub fn by_feature(effects: &[EffectEstimate]) -> Vec<(String, Vec<EffectEstimate>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<EffectEstimate>> = BTreeMap::new();
    for e in effects {
        if !groups.contains_key(&e.feature) {
            order.push(e.feature.clone());
        }
        groups.entry(e.feature.clone()).or_default().push(e.clone());
    }
    order
        .into_iter()
        .map(|f| {
            let g = groups.remove(&f).expect("grouped");
            (f, g)
        })
        .collect()
}

/// Pools every feature with at least two estimates. Features that cannot be
/// pooled are returned with the reason.
pub fn pool_all(effects: &[EffectEstimate], zero_band: f64) -> (Vec<MetaResult>, Vec<(String, String)>) {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (feature, group) in by_feature(effects) {
        match pool(&group, zero_band) {
            Ok(r) => results.push(r),
            Err(e) => skipped.push((feature, e.to_string())),
        }
    }
    (results, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moderator {
    Framework,
    LlmFamily,
}

impl Moderator {
    pub fn as_str(self) -> &'static str {
        match self {
            Moderator::Framework => "framework",
            Moderator::LlmFamily => "llm_family",
        }
    }

    pub fn level_of(self, c: &ConfigurationId) -> &str {
        match self {
            Moderator::Framework => &c.framework,
            Moderator::LlmFamily => &c.llm_family,
        }
    }
}

impl std::str::FromStr for Moderator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "framework" => Ok(Moderator::Framework),
            "llm_family" => Ok(Moderator::LlmFamily),
            other => Err(format!("unknown moderator {other:?} (expected framework or llm_family)")),
        }
    }
}

/// Result of a categorical meta-regression on integer level codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalFit {
    pub levels: usize,
    pub q_residual: f64,
    pub df_residual: usize,
    pub tau2_residual: f64,
    /// Random-effects weighted mean of each level (the dummy coefficients).
    pub level_means: Vec<f64>,
    /// Level codes that hold a single configuration.
    pub singletons: Vec<usize>,
}

/// Weighted least squares of effects on level dummies (one mean per level),
/// with the method-of-moments residual heterogeneity
/// τ²_res = max(0, (Q_E − (K − p)) / (Σw − Σ_g Σ_{i∈g} w_i² / Σ_{i∈g} w_i)).
///
/// `codes` must be dense in `0..levels`.
pub fn fit_categorical(effects: &[f64], variances: &[f64], codes: &[usize], levels: usize) -> Result<CategoricalFit> {
    let k = effects.len();
    if levels < 2 {
        return Err(Error::invalid("moderator has a single level; there is no contrast to fit"));
    }
    if k < levels + 1 {
        return Err(Error::invalid(format!(
            "{k} configurations leave no residual degrees of freedom for {levels} levels"
        )));
    }
    let mut sw = vec![0.0; levels];
    let mut sw2 = vec![0.0; levels];
    let mut swy = vec![0.0; levels];
    let mut count = vec![0usize; levels];
    for i in 0..k {
        let w = 1.0 / variances[i];
        let g = codes[i];
        sw[g] += w;
        sw2[g] += w * w;
        swy[g] += w * effects[i];
        count[g] += 1;
    }
    if count.iter().any(|&c| c == 0) {
        return Err(Error::invalid("level codes are not dense"));
    }
    let fe_means: Vec<f64> = (0..levels).map(|g| swy[g] / sw[g]).collect();
    let q_residual: f64 = (0..k)
        .map(|i| (effects[i] - fe_means[codes[i]]).powi(2) / variances[i])
        .sum();
    let df = k - levels;
    let c = sw.iter().sum::<f64>() - (0..levels).map(|g| sw2[g] / sw[g]).sum::<f64>();
    let tau2_residual = if c > 0.0 {
        ((q_residual - df as f64) / c).max(0.0)
    } else {
        0.0
    };
    let mut rw = vec![0.0; levels];
    let mut rwy = vec![0.0; levels];
    for i in 0..k {
        let w = 1.0 / (variances[i] + tau2_residual);
        rw[codes[i]] += w;
        rwy[codes[i]] += w * effects[i];
    }
    Ok(CategoricalFit {
        levels,
        q_residual,
        df_residual: df,
        tau2_residual,
        level_means: (0..levels).map(|g| rwy[g] / rw[g]).collect(),
        singletons: (0..levels).filter(|&g| count[g] == 1).collect(),
    })
}

/// Pseudo-R² = 1 − τ²_res/τ²_null clipped to [0, 1]; 0 when τ²_null = 0.
pub fn pseudo_r2(tau2_null: f64, tau2_residual: f64) -> f64 {
    if tau2_null <= 0.0 {
        0.0
    } else {
        (1.0 - tau2_residual / tau2_null).clamp(0.0, 1.0)
    }
}

/// Maps labels to dense codes in order of first appearance.
pub fn encode_levels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let mut lookup: std::collections::HashMap<&str, usize> = Default::default();
    let codes = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            *lookup.entry(l).or_insert_with(|| {
                names.push(l.to_string());
                names.len() - 1
            })
        })
        .collect();
    (codes, names)
}

/// Pseudo-R² of a labelling: the core refit used by every diagnostic.
pub fn r2_for_labels<S: AsRef<str>>(effects: &[f64], variances: &[f64], labels: &[S]) -> Result<f64> {
    let null = dersimonian_laird(effects, variances)?;
    let (codes, names) = encode_levels(labels);
    let fit = fit_categorical(effects, variances, &codes, names.len())?;
    Ok(pseudo_r2(null.tau2, fit.tau2_residual))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeratorFit {
    pub feature: String,
    pub moderator: Moderator,
    pub k: usize,
    pub levels: usize,
    pub tau2_null: f64,
    pub tau2_residual: f64,
    pub r2: f64,
    /// Levels represented by a single configuration; they are kept in the
    /// fit and contribute no residual.
    pub singleton_levels: Vec<String>,
}

pub fn meta_regress(effects: &[EffectEstimate], moderator: Moderator) -> Result<ModeratorFit> {
    let feature = effects.first().map(|e| e.feature.clone()).unwrap_or_default();
    let y: Vec<f64> = effects.iter().map(|e| e.effect).collect();
    let v: Vec<f64> = effects.iter().map(|e| e.variance).collect();
    let labels: Vec<&str> = effects.iter().map(|e| moderator.level_of(&e.config)).collect();
    let null = dersimonian_laird(&y, &v)?;
    let (codes, names) = encode_levels(&labels);
    let fit = fit_categorical(&y, &v, &codes, names.len())?;
    Ok(ModeratorFit {
        feature,
        moderator,
        k: effects.len(),
        levels: names.len(),
        tau2_null: null.tau2,
        tau2_residual: fit.tau2_residual,
        r2: pseudo_r2(null.tau2, fit.tau2_residual),
        singleton_levels: fit.singletons.iter().map(|&g| names[g].clone()).collect(),
    })
}

/// Fits the moderator for every feature; infeasible fits come back with the
/// reason.
pub fn regress_all(
    effects: &[EffectEstimate],
    moderator: Moderator,
) -> (Vec<ModeratorFit>, Vec<(String, String)>) {
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (feature, group) in by_feature(effects) {
        match meta_regress(&group, moderator) {
            Ok(f) => fits.push(f),
            Err(e) => skipped.push((feature, e.to_string())),
        }
    }
    (fits, skipped)
}

pub const META_COLUMNS: [&str; 12] = [
    "feature",
    "kind",
    "k",
    "pooled_effect",
    "pooled_effect_fixed",
    "n_pos",
    "n_neg",
    "n_zero",
    "q",
    "tau2",
    "i2",
    "classification",
];

pub fn meta_table(items: &[MetaResult]) -> Table {
    let mut t = Table::new(&META_COLUMNS);
    for m in items {
        t.push(vec![
            m.feature.clone(),
            m.kind.as_str().into(),
            m.k.to_string(),
            fmt_f64(m.pooled_effect),
            fmt_f64(m.pooled_effect_fixed),
            m.n_pos.to_string(),
            m.n_neg.to_string(),
            m.n_zero.to_string(),
            fmt_f64(m.q),
            fmt_f64(m.tau2),
            fmt_f64(m.i2),
            m.classification.as_str().into(),
        ]);
    }
    t
}

pub fn meta_from_table(table: &Table) -> Result<Vec<MetaResult>> {
    let cols = META_COLUMNS
        .iter()
        .map(|c| table.require(c))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let cell = |i: usize| row[cols[i]].as_str();
            Ok(MetaResult {
                feature: cell(0).to_string(),
                kind: cell(1).parse().map_err(Error::Schema)?,
                k: parse_count(cell(2), "k")?,
                pooled_effect: parse_req(cell(3), "pooled_effect")?,
                pooled_effect_fixed: parse_req(cell(4), "pooled_effect_fixed")?,
                n_pos: parse_count(cell(5), "n_pos")?,
                n_neg: parse_count(cell(6), "n_neg")?,
                n_zero: parse_count(cell(7), "n_zero")?,
                q: parse_req(cell(8), "q")?,
                tau2: parse_req(cell(9), "tau2")?,
                i2: parse_req(cell(10), "i2")?,
                classification: cell(11).parse().map_err(Error::Schema)?,
            })
        })
        .collect()
}

pub const FIT_COLUMNS: [&str; 8] = [
    "feature",
    "moderator",
    "k",
    "levels",
    "tau2_null",
    "tau2_residual",
    "r2",
    "singleton_levels",
];

pub fn fits_table(items: &[ModeratorFit]) -> Table {
    let mut t = Table::new(&FIT_COLUMNS);
    for f in items {
        t.push(vec![
            f.feature.clone(),
            f.moderator.as_str().into(),
            f.k.to_string(),
            f.levels.to_string(),
            fmt_f64(f.tau2_null),
            fmt_f64(f.tau2_residual),
            fmt_f64(f.r2),
            f.singleton_levels.join(";"),
        ]);
    }
    t
}

pub fn fits_from_table(table: &Table) -> Result<Vec<ModeratorFit>> {
    let cols = FIT_COLUMNS
        .iter()
        .map(|c| table.require(c))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|row| {
            let cell = |i: usize| row[cols[i]].as_str();
            Ok(ModeratorFit {
                feature: cell(0).to_string(),
                moderator: cell(1).parse().map_err(Error::Schema)?,
                k: parse_count(cell(2), "k")?,
                levels: parse_count(cell(3), "levels")?,
                tau2_null: parse_req(cell(4), "tau2_null")?,
                tau2_residual: parse_req(cell(5), "tau2_residual")?,
                r2: parse_req(cell(6), "r2")?,
                singleton_levels: cell(7)
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            })
        })
        .collect()
}
