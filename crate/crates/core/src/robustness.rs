//! Resampling diagnostics around moderator pseudo-R²: bootstrap percentile
//! interval, label-permutation null and leave-one-level-out refits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::EffectEstimate;
use crate::error::{Error, Result};
use crate::meta::{by_feature, dersimonian_laird, encode_levels, fit_categorical, pseudo_r2, Moderator};
use crate::rng::SeededRng;
use crate::stats::percentile;

pub const DEFAULT_RESAMPLES: usize = 2000;
/// Significance level of the chance-baseline test.
pub const ALPHA: f64 = 0.05;
/// Null refits within this distance of the observed R² count as ties.
const TIE_TOLERANCE: f64 = 1e-12;
/// Upper bound on redraws for a single bootstrap replicate.
const MAX_REDRAWS: usize = 1000;

/// One feature's effects prepared for repeated moderator refits.
#[derive(Debug, Clone)]
pub struct ModeratorData {
    pub feature: String,
    pub moderator: Moderator,
    pub effects: Vec<f64>,
    pub variances: Vec<f64>,
    pub labels: Vec<String>,
}

impl ModeratorData {
    pub fn new(effects: &[EffectEstimate], moderator: Moderator) -> Self {
        Self {
            feature: effects.first().map(|e| e.feature.clone()).unwrap_or_default(),
            moderator,
            effects: effects.iter().map(|e| e.effect).collect(),
            variances: effects.iter().map(|e| e.variance).collect(),
            labels: effects
                .iter()
                .map(|e| moderator.level_of(&e.config).to_string())
                .collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.effects.len()
    }

    pub fn levels(&self) -> usize {
        encode_levels(&self.labels).1.len()
    }

    pub fn r2(&self) -> Result<f64> {
        let (codes, names) = encode_levels(&self.labels);
        r2_coded(&self.effects, &self.variances, &codes, names.len())
    }

    fn check(&self) -> Result<()> {
        let levels = self.levels();
        if self.k() < levels + 1 {
            return Err(Error::invalid(format!(
                "{}: {} configurations are too few for {levels} moderator levels",
                self.feature,
                self.k()
            )));
        }
        Ok(())
    }
}

fn r2_coded(y: &[f64], v: &[f64], codes: &[usize], levels: usize) -> Result<f64> {
    let null = dersimonian_laird(y, v)?;
    let fit = fit_categorical(y, v, codes, levels)?;
    Ok(pseudo_r2(null.tau2, fit.tau2_residual))
}

/// Re-densifies codes after resampling so missing levels drop out.
fn recode(codes: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = codes
        .iter()
        .map(|c| {
            let n = map.len();
            *map.entry(*c).or_insert(n)
        })
        .collect();
    (out, map.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    /// Resamples discarded because the moderator could not be fitted on them.
    pub redraws: usize,
}

/// Percentile interval of R² over configuration resamples drawn with
/// replacement. A resample on which the fit is infeasible (a single level
/// left, or no residual degrees of freedom) is redrawn.
pub fn bootstrap_ci(data: &ModeratorData, n_boot: usize, seed: u64) -> Result<BootstrapCi> {
    data.check()?;
    if n_boot == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let (codes, _) = encode_levels(&data.labels);
    let k = data.k();
    let stream = format!("bootstrap/{}/{}", data.feature, data.moderator.as_str());
    let draws: Vec<(Option<f64>, usize)> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::substream(seed, &stream, i as u64);
            let mut y = vec![0.0; k];
            let mut v = vec![0.0; k];
            let mut c = vec![0usize; k];
            for attempt in 0..MAX_REDRAWS {
                for j in 0..k {
                    let pick = rng.below(k);
                    y[j] = data.effects[pick];
                    v[j] = data.variances[pick];
                    c[j] = codes[pick];
                }
                let (dense, levels) = recode(&c);
                if let Ok(r2) = r2_coded(&y, &v, &dense, levels) {
                    return (Some(r2), attempt);
                }
            }
            (None, MAX_REDRAWS)
        })
        .collect();
    let redraws: usize = draws.iter().map(|d| d.1).sum();
    // more degenerate draws than usable ones means over half were degenerate
    if draws.iter().any(|d| d.0.is_none()) || redraws > n_boot {
        return Err(Error::invalid(format!(
            "{}: moderator too sparse ({redraws} degenerate resamples for {n_boot} usable)",
            data.feature
        )));
    }
    if redraws > 0 {
        log::info!("{}: {redraws} degenerate bootstrap resamples redrawn", data.feature);
    }
    let mut values: Vec<f64> = draws.into_iter().filter_map(|d| d.0).collect();
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        lo: percentile(&values, 2.5),
        hi: percentile(&values, 97.5),
        redraws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub null_mean: f64,
    pub null_p95: f64,
    pub p: f64,
}

/// Null distribution of R² under random reassignment of the moderator labels
/// (the level multiset is preserved). p = (1 + #{null ≥ observed}) / (1 + n).
pub fn permutation_null(data: &ModeratorData, n_perm: usize, seed: u64) -> Result<PermutationNull> {
    data.check()?;
    if n_perm == 0 {
        return Err(Error::invalid("permutation test needs at least one permutation"));
    }
    let observed = data.r2()?;
    let (codes, levels) = {
        let (c, n) = encode_levels(&data.labels);
        (c, n.len())
    };
    let stream = format!("permutation/{}/{}", data.feature, data.moderator.as_str());
    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::substream(seed, &stream, i as u64);
            let mut shuffled = codes.clone();
            rng.shuffle(&mut shuffled);
            r2_coded(&data.effects, &data.variances, &shuffled, levels)
        })
        .collect::<Result<_>>()?;
    let exceed = null.iter().filter(|&&r| r >= observed - TIE_TOLERANCE).count();
    let mut sorted = null.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(PermutationNull {
        null_mean: null.iter().sum::<f64>() / n_perm as f64,
        null_p95: percentile(&sorted, 95.0),
        p: (1 + exceed) as f64 / (1 + n_perm) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOut {
    pub level: String,
    /// R² without this level; absent when the refit was infeasible.
    pub r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub range: Option<(f64, f64)>,
    pub per_level: Vec<LeaveOut>,
}

/// Drops each moderator level in turn (levels in sorted order) and refits.
pub fn leave_one_out(data: &ModeratorData) -> Result<LeaveOneOut> {
    let mut levels: Vec<&str> = data.labels.iter().map(String::as_str).collect();
    levels.sort_unstable();
    levels.dedup();
    if levels.len() < 3 {
        return Err(Error::invalid(format!(
            "{}: leave-one-level-out needs at least 3 levels, got {}",
            data.feature,
            levels.len()
        )));
    }
    let per_level: Vec<LeaveOut> = levels
        .par_iter()
        .map(|&level| {
            let keep: Vec<usize> = (0..data.k()).filter(|&i| data.labels[i] != level).collect();
            let y: Vec<f64> = keep.iter().map(|&i| data.effects[i]).collect();
            let v: Vec<f64> = keep.iter().map(|&i| data.variances[i]).collect();
            let labels: Vec<&str> = keep.iter().map(|&i| data.labels[i].as_str()).collect();
            let (codes, names) = encode_levels(&labels);
            match r2_coded(&y, &v, &codes, names.len()) {
                Ok(r2) => LeaveOut {
                    level: level.to_string(),
                    r2: Some(r2),
                    skipped: None,
                },
                Err(e) => LeaveOut {
                    level: level.to_string(),
                    r2: None,
                    skipped: Some(e.to_string()),
                },
            }
        })
        .collect();
    let fitted: Vec<f64> = per_level.iter().filter_map(|l| l.r2).collect();
    let range = (!fitted.is_empty()).then(|| {
        (
            fitted.iter().copied().fold(f64::INFINITY, f64::min),
            fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    Ok(LeaveOneOut { range, per_level })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustOptions {
    pub n_boot: usize,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_RESAMPLES,
            n_perm: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub feature: String,
    pub moderator: Moderator,
    pub k: usize,
    pub levels: usize,
    pub r2_observed: f64,
    pub boot_ci: (f64, f64),
    pub boot_redraws: usize,
    pub perm_null_mean: f64,
    pub perm_null_p95: f64,
    pub perm_p: f64,
    /// Absent when the moderator has fewer than three levels.
    pub loo_range: Option<(f64, f64)>,
    pub loo_levels: Vec<LeaveOut>,
    pub passes_chance_baseline: bool,
    pub n_boot: usize,
    pub n_perm: usize,
    pub seed: u64,
}

pub fn diagnose(effects: &[EffectEstimate], moderator: Moderator, opts: &RobustOptions) -> Result<RobustnessReport> {
    let data = ModeratorData::new(effects, moderator);
    let r2_observed = data.r2()?;
    let boot = bootstrap_ci(&data, opts.n_boot, opts.seed)?;
    let perm = permutation_null(&data, opts.n_perm, opts.seed)?;
    let loo = if data.levels() >= 3 {
        Some(leave_one_out(&data)?)
    } else {
        None
    };
    Ok(RobustnessReport {
        feature: data.feature.clone(),
        moderator,
        k: data.k(),
        levels: data.levels(),
        r2_observed,
        boot_ci: (boot.lo, boot.hi),
        boot_redraws: boot.redraws,
        perm_null_mean: perm.null_mean,
        perm_null_p95: perm.null_p95,
        perm_p: perm.p,
        loo_range: loo.as_ref().and_then(|l| l.range),
        loo_levels: loo.map(|l| l.per_level).unwrap_or_default(),
        passes_chance_baseline: perm.p < ALPHA,
        n_boot: opts.n_boot,
        n_perm: opts.n_perm,
        seed: opts.seed,
    })
}

/// Runs the diagnostics for the selected features (all when `features` is
/// `None`); features that cannot be diagnosed come back with the reason.
pub fn diagnose_all(
    effects: &[EffectEstimate],
    moderator: Moderator,
    features: Option<&[String]>,
    opts: &RobustOptions,
) -> (Vec<RobustnessReport>, Vec<(String, String)>) {
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (feature, group) in by_feature(effects) {
        if features.is_some_and(|f| !f.contains(&feature)) {
            continue;
        }
        match diagnose(&group, moderator, opts) {
            Ok(r) => reports.push(r),
            Err(e) => skipped.push((feature, e.to_string())),
        }
    }
    (reports, skipped)
}

pub fn write_reports(path: &std::path::Path, reports: &[RobustnessReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: &std::path::Path) -> Result<Vec<RobustnessReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}
