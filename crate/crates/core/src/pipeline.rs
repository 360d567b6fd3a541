//! End-to-end runner: ingest → annotate → features/cfg → patterns →
//! effects → meta → robust → taxonomy → report.
//!
//! Every stage reads the files written by earlier stages and writes its own
//! outputs under the output directory. A stage is skipped when the run
//! manifest records the same stage key (a hash of its parameters and input
//! contents) and its outputs still hash to the recorded values. Outputs are
//! written with a `.partial` suffix and renamed once the stage succeeds, so a
//! failed stage leaves its partial files behind for inspection.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::annotate::{annotate_all, read_annotated, write_annotated, RuleSet, DEFAULT_CASCADE_MIN_LEN};
use crate::effects::{
    effects_from_table, effects_table, per_config_effects, skips_table, EffectInputs, FilterPolicy, VarianceMode,
};
use crate::error::{Error, Result};
use crate::features::{all_trajectory_features, summaries_from_table, summaries_table, summarize, trajectories_from_table, trajectory_table};
use crate::ingest::{adapters, ingest_path, read_canonical, write_canonical, FamilyMap};
use crate::meta::{fits_table, meta_table, pool_all, regress_all, Moderator};
use crate::motif::{all_cfg_features, cfg_from_table, cfg_table};
use crate::patterns::{all_patterns, patterns_from_table, patterns_table, ThresholdManifest};
use crate::robustness::{diagnose_all, write_reports, RobustOptions, DEFAULT_RESAMPLES};
use crate::table::{Format, Table};
use crate::taxonomy::{assign_all, fit_taxonomy, types_table, TaxonomyOptions, DEFAULT_K, DEFAULT_RESTARTS};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Ingest,
    Annotate,
    Features,
    Cfg,
    Patterns,
    Effects,
    Meta,
    Robust,
    Taxonomy,
    Report,
}

impl StageName {
    pub const ALL: [StageName; 10] = [
        StageName::Ingest,
        StageName::Annotate,
        StageName::Features,
        StageName::Cfg,
        StageName::Patterns,
        StageName::Effects,
        StageName::Meta,
        StageName::Robust,
        StageName::Taxonomy,
        StageName::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Annotate => "annotate",
            StageName::Features => "features",
            StageName::Cfg => "cfg",
            StageName::Patterns => "patterns",
            StageName::Effects => "effects",
            StageName::Meta => "meta",
            StageName::Robust => "robust",
            StageName::Taxonomy => "taxonomy",
            StageName::Report => "report",
        }
    }
}

impl std::str::FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StageName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Raw log file or directory.
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub adapters: Option<Vec<String>>,
    pub families: Option<PathBuf>,
    /// Rule directory; the embedded default rules when `None`.
    pub rules_dir: Option<PathBuf>,
    /// Threshold manifest; required when the patterns stage runs.
    pub thresholds: Option<PathBuf>,
    pub cascade_min_len: usize,
    pub filter: FilterPolicy,
    /// Bootstrap resamples for effect variances; closed forms when `None`.
    pub variance_bootstrap: Option<usize>,
    pub zero_band: f64,
    pub moderators: Vec<Moderator>,
    /// Features for the robustness diagnostics; all when `None`.
    pub robust_features: Option<Vec<String>>,
    pub n_boot: usize,
    pub n_perm: usize,
    pub k: usize,
    pub seed: u64,
    pub format: Format,
    pub force: bool,
    pub skip: BTreeSet<StageName>,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            out_dir: out_dir.into(),
            adapters: None,
            families: None,
            rules_dir: None,
            thresholds: None,
            cascade_min_len: DEFAULT_CASCADE_MIN_LEN,
            filter: FilterPolicy::default(),
            variance_bootstrap: None,
            zero_band: 0.0,
            moderators: vec![Moderator::Framework, Moderator::LlmFamily],
            robust_features: None,
            n_boot: DEFAULT_RESAMPLES,
            n_perm: DEFAULT_RESAMPLES,
            k: DEFAULT_K,
            seed: 0,
            format: Format::Csv,
            force: false,
            skip: BTreeSet::new(),
            jobs: 0,
        }
    }

    fn table(&self, stem: &str) -> String {
        format!("{stem}.{}", self.format.extension())
    }

    fn enabled(&self, stage: StageName) -> bool {
        !self.skip.contains(&stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    pub key: String,
    pub params: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub format: String,
    pub rules_fingerprint: String,
    pub thresholds_fingerprint: Option<String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_atomic(path, text.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<(StageName, StageStatus)>,
    pub manifest: RunManifest,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash over relative paths and contents of every file below `root`.
fn hash_tree(root: &Path) -> Result<String> {
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if meta.is_file() {
        return hash_file(root);
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(root, e.into()))?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f).to_string_lossy().replace('\\', "/");
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update(hash_file(&f)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn stage_key(stage: StageName, params: &Value, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_str());
    h.update([0u8]);
    h.update(params.to_string());
    for (k, v) in inputs {
        h.update([0u8]);
        h.update(k);
        h.update([0u8]);
        h.update(v);
    }
    hex::encode(h.finalize())
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    previous: BTreeMap<StageName, StageRecord>,
    manifest: RunManifest,
    statuses: Vec<(StageName, StageStatus)>,
}

impl Runner<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn input_label(&self, path: &Path) -> String {
        match path.strip_prefix(&self.cfg.out_dir) {
            Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
            Err(_) => path.display().to_string(),
        }
    }

    /// Runs `body` unless the stage is up to date. `body` receives the
    /// `.partial` paths of `outputs`, in order.
    fn stage(
        &mut self,
        stage: StageName,
        inputs: &[PathBuf],
        outputs: &[&str],
        params: Value,
        body: impl FnOnce(&[PathBuf]) -> Result<()>,
    ) -> Result<()> {
        if !self.cfg.enabled(stage) {
            self.statuses.push((stage, StageStatus::Disabled));
            return Ok(());
        }
        let wrap = |e: Error| Error::Stage {
            stage: stage.as_str().to_string(),
            source: Box::new(e),
        };
        let mut input_hashes = BTreeMap::new();
        for p in inputs {
            if !p.exists() {
                return Err(wrap(Error::Config(format!("missing input {}", p.display()))));
            }
            input_hashes.insert(self.input_label(p), hash_tree(p).map_err(wrap)?);
        }
        let key = stage_key(stage, &params, &input_hashes);
        let finals: Vec<PathBuf> = outputs.iter().map(|o| self.out(o)).collect();

        if !self.cfg.force {
            if let Some(prev) = self.previous.get(&stage) {
                let fresh = prev.key == key
                    && prev.outputs.len() == outputs.len()
                    && outputs.iter().zip(&finals).all(|(name, path)| {
                        prev.outputs.get(*name).is_some_and(|h| hash_file(path).is_ok_and(|now| &now == h))
                    });
                if fresh {
                    log::info!("{}: up to date", stage.as_str());
                    self.manifest.stages.push(prev.clone());
                    self.statuses.push((stage, StageStatus::UpToDate));
                    return Ok(());
                }
            }
        }

        log::info!("{}: running", stage.as_str());
        let partials: Vec<PathBuf> = finals.iter().map(|p| partial_path(p)).collect();
        body(&partials).map_err(wrap)?;
        let mut output_hashes = BTreeMap::new();
        for ((name, partial), fin) in outputs.iter().zip(&partials).zip(&finals) {
            std::fs::rename(partial, fin).map_err(|e| wrap(Error::io(fin, e)))?;
            output_hashes.insert(name.to_string(), hash_file(fin).map_err(wrap)?);
        }
        self.manifest.stages.push(StageRecord {
            stage,
            key,
            params,
            inputs: input_hashes,
            outputs: output_hashes,
        });
        self.statuses.push((stage, StageStatus::Ran));
        Ok(())
    }
}

fn open_reader(path: &Path) -> Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create_writer(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_annotated(path: &Path) -> Result<Vec<crate::annotate::AnnotatedTrajectory>> {
    read_annotated(open_reader(path)?)
}

/// Runs every enabled stage in order on a dedicated thread pool.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.jobs > 0 {
        builder = builder.num_threads(cfg.jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &RunConfig) -> Result<RunSummary> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let rules = match &cfg.rules_dir {
        Some(dir) => RuleSet::load_dir(dir)?,
        None => RuleSet::default(),
    };
    let thresholds = if cfg.enabled(StageName::Patterns) {
        let path = cfg.thresholds.as_ref().ok_or_else(|| Error::Stage {
            stage: StageName::Patterns.as_str().into(),
            source: Box::new(Error::Config(
                "the patterns stage needs a threshold manifest (thresholds.json); create one with `patterns calibrate`".into(),
            )),
        })?;
        Some(ThresholdManifest::load(path).map_err(|e| Error::Stage {
            stage: StageName::Patterns.as_str().into(),
            source: Box::new(e),
        })?)
    } else {
        None
    };

    let manifest_path = cfg.out_dir.join(MANIFEST_FILE);
    let previous = if manifest_path.exists() && !cfg.force {
        match RunManifest::load(&manifest_path) {
            Ok(m) => m.stages.into_iter().map(|s| (s.stage, s)).collect(),
            Err(e) => {
                log::warn!("ignoring unreadable run manifest: {e}");
                BTreeMap::new()
            }
        }
    } else {
        BTreeMap::new()
    };
    let mut runner = Runner {
        cfg,
        previous,
        manifest: RunManifest {
            tool: "trajscope".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            format: cfg.format.extension().into(),
            rules_fingerprint: rules.fingerprint(),
            thresholds_fingerprint: thresholds.as_ref().map(ThresholdManifest::fingerprint),
            stages: Vec::new(),
        },
        statuses: Vec::new(),
    };
    let result = stages(&mut runner, &rules, thresholds.as_ref());
    runner.manifest.save(&manifest_path)?;
    result?;
    Ok(RunSummary {
        stages: runner.statuses,
        manifest: runner.manifest,
    })
}

fn stages(r: &mut Runner, rules: &RuleSet, thresholds: Option<&ThresholdManifest>) -> Result<()> {
    let cfg = r.cfg;
    let canonical = r.out("canonical.jsonl");
    let annotated = r.out("annotated.jsonl");
    let features = cfg.table("features");
    let traj_features = cfg.table("traj_features");
    let cfg_features = cfg.table("cfg_features");
    let patterns = cfg.table("patterns");
    let effects = cfg.table("effects");
    let skips = cfg.table("skips");
    let meta = cfg.table("meta");
    let fits = cfg.table("fits");
    let types = cfg.table("types");
    let report = cfg.table("report");
    let beeswarm = cfg.table("beeswarm");
    let format = cfg.format;

    let mut ingest_inputs = vec![cfg.input.clone()];
    ingest_inputs.extend(cfg.families.clone());
    r.stage(
        StageName::Ingest,
        &ingest_inputs,
        &["canonical.jsonl", "ingest_report.json"],
        json!({ "adapters": cfg.adapters }),
        |out| {
            let families = match &cfg.families {
                Some(p) => FamilyMap::load(p)?,
                None => FamilyMap::default(),
            };
            let list = adapters(cfg.adapters.as_deref(), &families)?;
            let (trajectories, report) = ingest_path(&cfg.input, &list)?;
            if trajectories.is_empty() {
                return Err(Error::invalid(format!(
                    "no trajectories parsed from {} ({} rejected)",
                    cfg.input.display(),
                    report.trajectories_rejected
                )));
            }
            let mut w = create_writer(&out[0])?;
            write_canonical(&mut w, &trajectories).map_err(|e| Error::io(&out[0], e))?;
            w.flush().map_err(|e| Error::io(&out[0], e))?;
            write_json(&out[1], &report)
        },
    )?;

    r.stage(
        StageName::Annotate,
        std::slice::from_ref(&canonical),
        &["annotated.jsonl"],
        json!({ "rules": rules.fingerprint(), "cascade_min_len": cfg.cascade_min_len }),
        |out| {
            let trajectories = read_canonical(open_reader(&canonical)?)?;
            let items = annotate_all(trajectories, rules, cfg.cascade_min_len);
            let mut w = create_writer(&out[0])?;
            write_annotated(&mut w, &items).map_err(|e| Error::io(&out[0], e))?;
            w.flush().map_err(|e| Error::io(&out[0], e))
        },
    )?;

    r.stage(
        StageName::Features,
        std::slice::from_ref(&annotated),
        &[&features, &traj_features],
        json!({}),
        |out| {
            let rows = all_trajectory_features(&load_annotated(&annotated)?);
            summaries_table(&summarize(&rows)).write(&out[0], format)?;
            trajectory_table(&rows).write(&out[1], format)
        },
    )?;

    r.stage(
        StageName::Cfg,
        std::slice::from_ref(&annotated),
        &[&cfg_features],
        json!({}),
        |out| cfg_table(&all_cfg_features(&load_annotated(&annotated)?)).write(&out[0], format),
    )?;

    let mut pattern_inputs = vec![annotated.clone()];
    pattern_inputs.extend(cfg.thresholds.clone().filter(|_| cfg.enabled(StageName::Patterns)));
    r.stage(
        StageName::Patterns,
        &pattern_inputs,
        &[&patterns],
        json!({ "thresholds": thresholds.map(ThresholdManifest::fingerprint) }),
        |out| {
            let m = thresholds.expect("checked before the run");
            patterns_table(&all_patterns(&load_annotated(&annotated)?, m)).write(&out[0], format)
        },
    )?;

    let variance = match cfg.variance_bootstrap {
        Some(n_boot) => VarianceMode::Bootstrap { n_boot, seed: cfg.seed },
        None => VarianceMode::Normal,
    };
    let mut effect_inputs = vec![r.out(&traj_features)];
    if cfg.enabled(StageName::Cfg) {
        effect_inputs.push(r.out(&cfg_features));
    }
    if cfg.enabled(StageName::Patterns) {
        effect_inputs.push(r.out(&patterns));
    }
    r.stage(
        StageName::Effects,
        &effect_inputs,
        &[&effects, &skips],
        json!({
            "filter": [cfg.filter.min_total, cfg.filter.min_resolved, cfg.filter.min_unresolved],
            "variance": variance,
        }),
        |out| {
            let feats = trajectories_from_table(&Table::read_path(&effect_inputs[0])?)?;
            let cfg_rows = match effect_inputs.iter().find(|p| p.ends_with(&cfg_features)) {
                Some(p) => Some(cfg_from_table(&Table::read_path(p)?)?),
                None => None,
            };
            let pat_rows = match effect_inputs.iter().find(|p| p.ends_with(&patterns)) {
                Some(p) => Some(patterns_from_table(&Table::read_path(p)?)?),
                None => None,
            };
            let inputs = EffectInputs::assemble(Some(&feats), cfg_rows.as_deref(), pat_rows.as_deref())?;
            let (estimates, skipped) = per_config_effects(&inputs, &cfg.filter, variance);
            effects_table(&estimates).write(&out[0], format)?;
            skips_table(&skipped).write(&out[1], format)
        },
    )?;

    let effects_path = r.out(&effects);
    let moderators: Vec<&str> = cfg.moderators.iter().map(|m| m.as_str()).collect();
    r.stage(
        StageName::Meta,
        std::slice::from_ref(&effects_path),
        &[&meta, &fits],
        json!({ "zero_band": cfg.zero_band, "moderators": moderators }),
        |out| {
            let estimates = effects_from_table(&Table::read_path(&effects_path)?)?;
            let (pooled, skipped) = pool_all(&estimates, cfg.zero_band);
            for (feature, reason) in skipped {
                log::warn!("meta: {feature} not pooled: {reason}");
            }
            meta_table(&pooled).write(&out[0], format)?;
            let mut all_fits = Vec::new();
            for &m in &cfg.moderators {
                let (f, skipped) = regress_all(&estimates, m);
                for (feature, reason) in skipped {
                    log::warn!("meta: {feature} not regressed on {}: {reason}", m.as_str());
                }
                all_fits.extend(f);
            }
            fits_table(&all_fits).write(&out[1], format)
        },
    )?;

    let opts = RobustOptions {
        n_boot: cfg.n_boot,
        n_perm: cfg.n_perm,
        seed: cfg.seed,
    };
    r.stage(
        StageName::Robust,
        std::slice::from_ref(&effects_path),
        &["robust.json"],
        json!({ "moderators": moderators, "features": cfg.robust_features, "options": opts }),
        |out| {
            let estimates = effects_from_table(&Table::read_path(&effects_path)?)?;
            let mut reports = Vec::new();
            for &m in &cfg.moderators {
                let (rep, skipped) = diagnose_all(&estimates, m, cfg.robust_features.as_deref(), &opts);
                for (feature, reason) in skipped {
                    log::warn!("robust: {feature} on {}: {reason}", m.as_str());
                }
                reports.extend(rep);
            }
            write_reports(&out[0], &reports)
        },
    )?;

    let features_path = r.out(&features);
    let tax = TaxonomyOptions {
        k: cfg.k,
        seed: cfg.seed,
        restarts: DEFAULT_RESTARTS,
        ..TaxonomyOptions::default()
    };
    r.stage(
        StageName::Taxonomy,
        std::slice::from_ref(&features_path),
        &["model.json", &types],
        json!({ "k": tax.k, "components": tax.components, "restarts": tax.restarts, "seed": tax.seed }),
        |out| {
            let summaries = summaries_from_table(&Table::read_path(&features_path)?)?;
            let model = fit_taxonomy(&summaries, &tax)?;
            model.save(&out[0])?;
            types_table(&assign_all(&model, &summaries)?).write(&out[1], format)
        },
    )?;

    let meta_path = r.out(&meta);
    let fits_path = r.out(&fits);
    let robust_path = r.out("robust.json");
    let mut report_inputs = vec![meta_path.clone(), fits_path.clone(), effects_path.clone()];
    if cfg.enabled(StageName::Robust) {
        report_inputs.push(robust_path.clone());
    }
    r.stage(
        StageName::Report,
        &report_inputs,
        &[&report, &beeswarm],
        json!({}),
        |out| {
            let robust = cfg.enabled(StageName::Robust).then_some(robust_path.as_path());
            let (m, f, rb) = crate::report::load_inputs(&meta_path, Some(&fits_path), robust)?;
            let estimates = effects_from_table(&Table::read_path(&effects_path)?)?;
            crate::report::summary_table(&m, &f, &rb).write(&out[0], format)?;
            crate::report::beeswarm_table(&estimates, &m).write(&out[1], format)
        },
    )?;
    Ok(())
}
