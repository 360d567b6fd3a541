use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};

use trajscope::annotate::{annotate_all, read_annotated, write_annotated, AnnotatedTrajectory, RuleSet, DEFAULT_CASCADE_MIN_LEN};
use trajscope::effects::{
    effects_from_table, effects_table, per_config_effects, skips_table, EffectInputs, FilterPolicy, VarianceMode,
};
use trajscope::features::{all_trajectory_features, summaries_from_table, summaries_table, summarize, trajectories_from_table, trajectory_table};
use trajscope::ingest::{adapters, ingest_path, read_canonical, write_canonical, FamilyMap};
use trajscope::meta::{fits_table, meta_table, pool_all, regress_all, Moderator};
use trajscope::motif::{all_cfg_features, analyze, cfg_from_table, cfg_table, dot_file_name};
use trajscope::patterns::{all_patterns, compute_thresholds, patterns_from_table, patterns_table, ThresholdManifest};
use trajscope::pipeline::{run_pipeline, RunConfig, StageName, StageStatus};
use trajscope::robustness::{diagnose_all, write_reports, RobustOptions, DEFAULT_RESAMPLES};
use trajscope::synth::{generate_ecosystem, parse_spec_file};
use trajscope::table::{Format, Table};
use trajscope::taxonomy::{assign_all, fit_taxonomy, sweep, sweep_table, types_table, TaxonomyModel, TaxonomyOptions, DEFAULT_K, DEFAULT_RESTARTS};

use crate::{Cli, Command, Global, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl Global {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Output path: `given` or `default_stem` with the table extension,
    /// resolved against --out-dir.
    fn table_out(&self, given: Option<&Path>, default_stem: &str) -> PathBuf {
        match given {
            Some(p) => self.path(p),
            None => self.path(Path::new(&format!("{default_stem}.{}", self.format.extension()))),
        }
    }

    fn file_out(&self, given: Option<&Path>, default_name: &str) -> PathBuf {
        self.path(given.unwrap_or(Path::new(default_name)))
    }

    fn table_format(&self, path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            _ => self.format,
        }
    }

    fn write_table(&self, table: &Table, path: &Path) -> Result<()> {
        prepare_parent(path)?;
        table.write(path, self.table_format(path))?;
        log::info!("wrote {} rows to {}", table.len(), path.display());
        Ok(())
    }
}

fn prepare_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    prepare_parent(path)?;
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn rules(dir: Option<&Path>) -> Result<RuleSet> {
    Ok(match dir {
        Some(d) => RuleSet::load_dir(d)?,
        None => RuleSet::default(),
    })
}

fn load_annotated(path: &Path) -> Result<Vec<AnnotatedTrajectory>> {
    Ok(read_annotated(open(path)?).with_context(|| format!("reading {}", path.display()))?)
}

fn read_table(path: &Path) -> Result<Table> {
    Ok(Table::read_path(path)?)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = cli.global;
    if g.jobs > 0 && !matches!(cli.command, Command::Run(_)) {
        rayon_global(g.jobs)?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&g, a),
        Command::Annotate(a) => annotate(&g, a),
        Command::Features(a) => features(&g, a),
        Command::Cfg(a) => cfg(&g, a),
        Command::Patterns(a) => patterns(&g, a),
        Command::Effects(a) => effects(&g, a),
        Command::Meta(a) => meta(&g, a),
        Command::Robust(a) => robust(&g, a),
        Command::Taxonomy(a) => taxonomy(&g, a),
        Command::Synth(a) => synth(&g, a),
        Command::Run(a) => run(&g, a),
        Command::Report(a) => report(&g, a),
    }
}

fn rayon_global(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))
}

#[derive(Args)]
pub struct IngestArgs {
    /// Log file or directory
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated adapter names (default: all)
    #[arg(long, value_delimiter = ',')]
    adapters: Option<Vec<String>>,
    /// Ingest report (counts and rejection reasons)
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON object mapping LLM names to families
    #[arg(long)]
    families: Option<PathBuf>,
}

fn ingest(g: &Global, a: IngestArgs) -> Result<()> {
    let families = match &a.families {
        Some(p) => FamilyMap::load(p)?,
        None => FamilyMap::default(),
    };
    let list = adapters(a.adapters.as_deref(), &families).map_err(|e| usage(e.to_string()))?;
    let (trajectories, report) = ingest_path(&a.input, &list)?;
    let out = g.file_out(a.out.as_deref(), "canonical.jsonl");
    let mut w = create(&out)?;
    write_canonical(&mut w, &trajectories)?;
    w.flush()?;
    if let Some(p) = &a.report {
        write_json(&g.path(p), &report)?;
    }
    eprintln!(
        "{} files, {} trajectories parsed, {} rejected",
        report.files_seen, report.trajectories_parsed, report.trajectories_rejected
    );
    Ok(())
}

#[derive(Args)]
pub struct AnnotateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Rule directory with classifier.json and errors.json (default: built-in rules)
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CASCADE_MIN_LEN)]
    cascade_min_len: usize,
    /// Write the built-in rules to this directory and exit
    #[arg(long, conflicts_with_all = ["rules", "out"])]
    export_rules: Option<PathBuf>,
}

fn annotate(g: &Global, a: AnnotateArgs) -> Result<()> {
    if let Some(dir) = &a.export_rules {
        RuleSet::default().save_dir(&g.path(dir))?;
        return Ok(());
    }
    if a.cascade_min_len < 1 {
        return Err(usage("--cascade-min-len must be at least 1"));
    }
    let rules = rules(a.rules.as_deref())?;
    let trajectories = read_canonical(open(&a.input)?)?;
    let items = annotate_all(trajectories, &rules, a.cascade_min_len);
    let out = g.file_out(a.out.as_deref(), "annotated.jsonl");
    let mut w = create(&out)?;
    write_annotated(&mut w, &items)?;
    w.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Per-configuration summary table
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trajectory feature table
    #[arg(long)]
    per_trajectory: Option<PathBuf>,
}

fn features(g: &Global, a: FeaturesArgs) -> Result<()> {
    let rows = all_trajectory_features(&load_annotated(&a.input)?);
    g.write_table(&summaries_table(&summarize(&rows)), &g.table_out(a.out.as_deref(), "features"))?;
    if let Some(p) = &a.per_trajectory {
        g.write_table(&trajectory_table(&rows), &g.path(p))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct CfgArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one Graphviz file per trajectory into this directory
    #[arg(long)]
    export_dot: Option<PathBuf>,
}

fn cfg(g: &Global, a: CfgArgs) -> Result<()> {
    let items = load_annotated(&a.input)?;
    g.write_table(&cfg_table(&all_cfg_features(&items)), &g.table_out(a.out.as_deref(), "cfg_features"))?;
    if let Some(dir) = &a.export_dot {
        let dir = g.path(dir);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for t in &items {
            let name = format!("{}__{}__{}", t.base.config.framework, t.base.config.llm, t.base.id);
            let (graph, _) = analyze(t);
            let path = dir.join(dot_file_name(&name));
            std::fs::write(&path, graph.to_dot(&t.base.id)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct PatternsArgs {
    #[command(subcommand)]
    action: Option<PatternsAction>,
    #[arg(long = "in", required = true)]
    input: Option<PathBuf>,
    /// Threshold manifest (thresholds.json)
    #[arg(long, required = true)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum PatternsAction {
    /// Derive a threshold manifest from a reference corpus
    Calibrate {
        /// Annotated or canonical JSONL reference corpus
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Free-text provenance stored in the manifest
        #[arg(long)]
        source: Option<String>,
        /// Rules used when the reference corpus is not yet annotated
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CASCADE_MIN_LEN)]
        cascade_min_len: usize,
    },
}

fn patterns(g: &Global, a: PatternsArgs) -> Result<()> {
    if let Some(PatternsAction::Calibrate { input, out, source, rules: rules_dir, cascade_min_len }) = a.action {
        let items = match read_annotated(open(&input)?) {
            Ok(items) => items,
            Err(_) => {
                log::info!("{} is not annotated; annotating with {}", input.display(), if rules_dir.is_some() { "the given rules" } else { "the built-in rules" });
                let trajectories = read_canonical(open(&input)?)?;
                annotate_all(trajectories, &rules(rules_dir.as_deref())?, cascade_min_len)
            }
        };
        let source = source.unwrap_or_else(|| input.display().to_string());
        let manifest = compute_thresholds(&items, &source)?;
        let out = g.file_out(out.as_deref(), "thresholds.json");
        prepare_parent(&out)?;
        std::fs::write(&out, manifest.to_json()).with_context(|| format!("writing {}", out.display()))?;
        return Ok(());
    }
    let input = a.input.expect("required by clap");
    let manifest_path = a.manifest.expect("required by clap");
    let manifest = ThresholdManifest::load(&manifest_path)?;
    let rows = all_patterns(&load_annotated(&input)?, &manifest);
    g.write_table(&patterns_table(&rows), &g.table_out(a.out.as_deref(), "patterns"))
}

#[derive(Args)]
pub struct EffectsArgs {
    /// Per-trajectory behavioral features (features --per-trajectory)
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Per-trajectory motif-graph features (cfg output)
    #[arg(long)]
    features: Option<PathBuf>,
    /// Per-trajectory pattern table
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    skips: Option<PathBuf>,
    /// Sampling-variance method for each effect
    #[arg(long, default_value = "normal", value_parser = ["normal", "bootstrap"])]
    variance: String,
    /// Resamples for --variance bootstrap
    #[arg(long, default_value_t = 1000)]
    variance_resamples: usize,
    #[arg(long, default_value_t = FilterPolicy::default().min_total)]
    min_total: usize,
    #[arg(long, default_value_t = FilterPolicy::default().min_resolved)]
    min_resolved: usize,
    #[arg(long, default_value_t = FilterPolicy::default().min_unresolved)]
    min_unresolved: usize,
}

fn effects(g: &Global, a: EffectsArgs) -> Result<()> {
    let traj = match &a.traj {
        Some(p) => Some(trajectories_from_table(&read_table(p)?)?),
        None => None,
    };
    let cfg_rows = match &a.features {
        Some(p) => {
            let t = read_table(p)?;
            if t.column("trajectory_id").is_none() && !t.is_empty() {
                return Err(usage(format!(
                    "{} is not a per-trajectory table; pass the cfg output (or per-trajectory features via --traj)",
                    p.display()
                )));
            }
            Some(cfg_from_table(&t)?)
        }
        None => None,
    };
    let pat = match &a.patterns {
        Some(p) => Some(patterns_from_table(&read_table(p)?)?),
        None => None,
    };
    if traj.is_none() && cfg_rows.is_none() && pat.is_none() {
        return Err(usage("effects needs at least one of --traj, --features, --patterns"));
    }
    let inputs = EffectInputs::assemble(traj.as_deref(), cfg_rows.as_deref(), pat.as_deref())?;
    let policy = FilterPolicy {
        min_total: a.min_total,
        min_resolved: a.min_resolved,
        min_unresolved: a.min_unresolved,
    };
    let variance = match a.variance.as_str() {
        "bootstrap" => VarianceMode::Bootstrap { n_boot: a.variance_resamples, seed: g.seed },
        _ => VarianceMode::Normal,
    };
    let (estimates, skipped) = per_config_effects(&inputs, &policy, variance);
    let out = g.table_out(a.out.as_deref(), "effects");
    g.write_table(&effects_table(&estimates), &out)?;
    // the variance method travels with the table
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".meta.json");
    write_json(Path::new(&sidecar), &serde_json::json!({ "variance": variance, "filter": [policy.min_total, policy.min_resolved, policy.min_unresolved] }))?;
    g.write_table(&skips_table(&skipped), &g.table_out(a.skips.as_deref(), "skips"))?;
    eprintln!("{} effects, {} skips", estimates.len(), skipped.len());
    Ok(())
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct MetaArgs {
    #[command(subcommand)]
    action: Option<MetaAction>,
    #[arg(long, required = true)]
    effects: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Effects within ±band count as zero in the direction split
    #[arg(long, default_value_t = 0.0)]
    zero_band: f64,
}

#[derive(Subcommand)]
pub enum MetaAction {
    /// Moderator meta-regression with pseudo-R²
    Regress {
        #[arg(long)]
        effects: PathBuf,
        #[arg(long)]
        moderator: Moderator,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn meta(g: &Global, a: MetaArgs) -> Result<()> {
    if let Some(MetaAction::Regress { effects, moderator, out }) = a.action {
        let estimates = effects_from_table(&read_table(&effects)?)?;
        let (fits, skipped) = regress_all(&estimates, moderator);
        for (feature, reason) in skipped {
            log::warn!("{feature}: {reason}");
        }
        return g.write_table(&fits_table(&fits), &g.table_out(out.as_deref(), "fits"));
    }
    if !(a.zero_band >= 0.0) {
        return Err(usage("--zero-band must be non-negative"));
    }
    let estimates = effects_from_table(&read_table(&a.effects.expect("required by clap"))?)?;
    let (pooled, skipped) = pool_all(&estimates, a.zero_band);
    for (feature, reason) in skipped {
        log::warn!("{feature}: {reason}");
    }
    g.write_table(&meta_table(&pooled), &g.table_out(a.out.as_deref(), "meta"))
}

#[derive(Args)]
pub struct RobustArgs {
    #[arg(long)]
    effects: PathBuf,
    #[arg(long, default_value = "framework")]
    moderator: Moderator,
    /// Feature to diagnose; repeat for several (default: all)
    #[arg(long)]
    feature: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    n_boot: usize,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    n_perm: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn robust(g: &Global, a: RobustArgs) -> Result<()> {
    let estimates = effects_from_table(&read_table(&a.effects)?)?;
    let opts = RobustOptions {
        n_boot: a.n_boot,
        n_perm: a.n_perm,
        seed: g.seed,
    };
    let features = (!a.feature.is_empty()).then_some(a.feature.as_slice());
    if let Some(list) = features {
        for f in list {
            if !estimates.iter().any(|e| &e.feature == f) {
                return Err(trajscope::Error::InvalidInput(format!("no effects for feature {f:?}")).into());
            }
        }
    }
    let (reports, skipped) = diagnose_all(&estimates, a.moderator, features, &opts);
    for (feature, reason) in &skipped {
        log::warn!("{feature}: {reason}");
    }
    if reports.is_empty() && !skipped.is_empty() {
        return Err(trajscope::Error::InvalidInput(format!("no feature could be diagnosed: {}", skipped[0].1)).into());
    }
    let out = g.file_out(a.out.as_deref(), "robust.json");
    prepare_parent(&out)?;
    write_reports(&out, &reports)?;
    Ok(())
}

#[derive(Args)]
pub struct TaxonomyArgs {
    #[command(subcommand)]
    action: TaxonomyAction,
}

#[derive(Subcommand)]
pub enum TaxonomyAction {
    /// Fit standardization, PCA and k-means on configuration features
    Fit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign configurations to the nearest type of a fitted model
    Assign {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Silhouette for a range of k
    Sweep {
        #[arg(long)]
        features: PathBuf,
        /// Inclusive range lo:hi
        #[arg(long, default_value = "4:6")]
        k_range: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| usage(format!("--k-range {s:?}: expected lo:hi")))?;
    let lo: usize = lo.trim().parse().map_err(|_| usage(format!("--k-range {s:?}: bad lower bound")))?;
    let hi: usize = hi.trim().parse().map_err(|_| usage(format!("--k-range {s:?}: bad upper bound")))?;
    if lo < 2 || hi < lo {
        return Err(usage(format!("--k-range {s:?}: need 2 ≤ lo ≤ hi")));
    }
    Ok(lo..=hi)
}

fn taxonomy(g: &Global, a: TaxonomyArgs) -> Result<()> {
    match a.action {
        TaxonomyAction::Fit { features, k, restarts, out } => {
            if k < 1 {
                return Err(usage("--k must be at least 1"));
            }
            let summaries = summaries_from_table(&read_table(&features)?)?;
            let opts = TaxonomyOptions { k, restarts, seed: g.seed, ..TaxonomyOptions::default() };
            let model = fit_taxonomy(&summaries, &opts)?;
            let out = g.file_out(out.as_deref(), "model.json");
            prepare_parent(&out)?;
            model.save(&out)?;
            eprintln!("silhouette {:.4}", model.silhouette);
            Ok(())
        }
        TaxonomyAction::Assign { model, features, out } => {
            let model = TaxonomyModel::load(&model)?;
            let summaries = summaries_from_table(&read_table(&features)?)?;
            g.write_table(&types_table(&assign_all(&model, &summaries)?), &g.table_out(out.as_deref(), "types"))
        }
        TaxonomyAction::Sweep { features, k_range, out } => {
            let range = parse_range(&k_range)?;
            let summaries = summaries_from_table(&read_table(&features)?)?;
            let opts = TaxonomyOptions { seed: g.seed, ..TaxonomyOptions::default() };
            let table = sweep_table(&sweep(&summaries, range, &opts)?);
            match out {
                Some(p) => g.write_table(&table, &g.path(&p)),
                None => {
                    table.write_csv(std::io::stdout().lock())?;
                    Ok(())
                }
            }
        }
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Corpus spec: regimes and configurations
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn synth(g: &Global, a: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let entries = parse_spec_file(&text)?;
    let corpus = generate_ecosystem(&entries, g.seed)?;
    let out = g.file_out(a.out.as_deref(), "synthetic.jsonl");
    let mut w = create(&out)?;
    write_canonical(&mut w, &corpus)?;
    w.flush()?;
    eprintln!("{} trajectories over {} configurations", corpus.len(), entries.len());
    Ok(())
}

#[derive(Args)]
pub struct RunArgs {
    /// Raw log file or directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Threshold manifest for the patterns stage
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    families: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    adapters: Option<Vec<String>>,
    #[arg(long, default_value_t = DEFAULT_CASCADE_MIN_LEN)]
    cascade_min_len: usize,
    /// Bootstrap resamples for effect variances (default: closed forms)
    #[arg(long)]
    variance_resamples: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    zero_band: f64,
    /// Moderators to fit and diagnose (default: framework and llm_family)
    #[arg(long, value_delimiter = ',')]
    moderator: Vec<Moderator>,
    /// Features for the robustness stage (default: all)
    #[arg(long)]
    robust_feature: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    n_boot: usize,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    n_perm: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Stages to leave out
    #[arg(long, value_delimiter = ',')]
    skip_stage: Vec<StageName>,
}

fn run(g: &Global, a: RunArgs) -> Result<()> {
    if a.cascade_min_len < 1 {
        return Err(usage("--cascade-min-len must be at least 1"));
    }
    let out_dir = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("trajscope-out"));
    let mut cfg = RunConfig::new(a.input, out_dir);
    cfg.adapters = a.adapters;
    cfg.families = a.families;
    cfg.rules_dir = a.rules;
    cfg.thresholds = a.thresholds;
    cfg.cascade_min_len = a.cascade_min_len;
    cfg.variance_bootstrap = a.variance_resamples;
    cfg.zero_band = a.zero_band;
    if !a.moderator.is_empty() {
        cfg.moderators = a.moderator;
    }
    cfg.robust_features = (!a.robust_feature.is_empty()).then_some(a.robust_feature);
    cfg.n_boot = a.n_boot;
    cfg.n_perm = a.n_perm;
    cfg.k = a.k;
    cfg.seed = g.seed;
    cfg.format = g.format;
    cfg.force = g.force;
    cfg.skip = a.skip_stage.into_iter().collect();
    cfg.jobs = g.jobs;
    let summary = run_pipeline(&cfg)?;
    for (stage, status) in summary.stages {
        let label = match status {
            StageStatus::Ran => "ran",
            StageStatus::UpToDate => "up to date",
            StageStatus::Disabled => "skipped",
        };
        eprintln!("{:<9} {label}", stage.as_str());
    }
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    fits: Option<PathBuf>,
    #[arg(long)]
    robust: Option<PathBuf>,
    /// Per-configuration effects, for the beeswarm file
    #[arg(long)]
    effects: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, requires = "effects")]
    beeswarm: Option<PathBuf>,
}

fn report(g: &Global, a: ReportArgs) -> Result<()> {
    let (meta, fits, robust) = trajscope::report::load_inputs(&a.meta, a.fits.as_deref(), a.robust.as_deref())?;
    g.write_table(&trajscope::report::summary_table(&meta, &fits, &robust), &g.table_out(a.out.as_deref(), "report"))?;
    if let Some(effects) = &a.effects {
        let estimates = effects_from_table(&read_table(effects)?)?;
        let path = g.table_out(a.beeswarm.as_deref(), "beeswarm");
        g.write_table(&trajscope::report::beeswarm_table(&estimates, &meta), &path)?;
    }
    Ok(())
}
