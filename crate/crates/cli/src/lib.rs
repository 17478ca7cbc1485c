//! Subcommand implementations behind the `stc-mixhop` executable.
//!
//! Every subcommand resolves its configuration (flags over config file over
//! defaults), writes it to `<out-dir>/config.json`, and only then starts work.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use stc_mixhop::baselines::{run_baseline, BaselineKind, TabularConfig, TabularModel, TabularRecord};
use stc_mixhop::eval::EvalReport;
use stc_mixhop::graph::{read_store, write_store, Snapshot};
use stc_mixhop::ingest::{parse_transactions, write_transactions, DEFAULT_BIN_HOURS, DEFAULT_CAP};
use stc_mixhop::model::{Checkpoint, Stage, Variant};
use stc_mixhop::pipeline::{build_dataset, BuildOptions};
use stc_mixhop::synthgen::{generate, GenConfig, Regime};
use stc_mixhop::trainer::{chronological_split, evaluate, train, RunRecord, Split, TrainConfig};
use stc_mixhop::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Upper bound on parallel jobs, applied on top of `--jobs`.
pub const JOBS_ENV: &str = "STC_MIXHOP_JOBS";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const RECORD_FILE: &str = "run_record.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TRANSACTIONS_FILE: &str = "transactions.csv";

/// Shared metric columns of the ablation and sweep tables.
const METRIC_COLUMNS: [&str; 7] = ["roc_auc", "pr_auc", "f_beta", "precision", "recall", "accuracy", "threshold"];

#[derive(Debug, Parser)]
#[command(name = "stc-mixhop", version, about = "Multi-hop temporal graph fraud screening")]
pub struct Cli {
    /// Seed for generation, subsampling, initialization and augmentation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with partial settings; see README for the layout.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Maximum parallel jobs for ablate and sweep.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic transaction CSV.
    Gen(GenArgs),
    /// Build the windowed snapshot store from a transaction CSV.
    BuildGraph(BuildArgs),
    /// Pretrain, fine-tune and evaluate one model.
    Train(TrainArgs),
    /// Run all five ablation variants on shared splits.
    Ablate(AblateArgs),
    /// Vary one hyperparameter over a list of values.
    Sweep(SweepArgs),
    /// Fit and evaluate a tabular reference model.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub n_accounts: Option<usize>,
    #[arg(long)]
    pub n_windows: Option<usize>,
    #[arg(long)]
    pub tx_per_window: Option<usize>,
    #[arg(long)]
    pub fraud_rate: Option<f64>,
    #[arg(long)]
    pub motif_hops: Option<usize>,
    #[arg(long)]
    pub bin_hours: Option<u64>,
    /// Output CSV; defaults to `<out-dir>/transactions.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bin_hours: Option<u64>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Snapshot store written by build-graph.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "dk")]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Skip pretraining; same as `--variant no_contrastive`.
    #[arg(long)]
    pub no_pretrain: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum SweepParam {
    #[value(name = "K")]
    #[serde(rename = "K")]
    K,
    #[value(name = "dk")]
    #[serde(rename = "dk")]
    Dk,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::Dk => "dk",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: BaselineKind,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub bin_hours: u64,
    pub cap: usize,
}

impl Default for BuildSection {
    fn default() -> Self {
        Self { bin_hours: DEFAULT_BIN_HOURS, cap: DEFAULT_CAP }
    }
}

/// Contents accepted by `--config`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub gen: GenConfig,
    pub build: BuildSection,
    pub train: TrainConfig,
    pub baseline: TabularConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub param: SweepParam,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSection {
    pub model: BaselineKind,
    pub tabular: TabularConfig,
    pub train_frac: f64,
    pub val_frac: f64,
}

/// The fully merged settings of one invocation, written before any work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub build: Option<BuildSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSection>,
}

impl ResolvedConfig {
    fn base(cli: &Cli, file: &FileConfig, command: &str) -> Self {
        let jobs = cli.jobs.or(file.jobs).unwrap_or(1);
        Self {
            version: VERSION.into(),
            command: command.into(),
            seed: cli.seed.or(file.seed).unwrap_or(0),
            jobs: cap_jobs(jobs, std::env::var(JOBS_ENV).ok().as_deref()),
            out_dir: cli.out_dir.clone(),
            input: None,
            store: None,
            gen: None,
            build: None,
            train: None,
            sweep: None,
            baseline: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(CONFIG_FILE), self)
    }
}

/// `requested` bounded by the environment cap when it parses, never below 1.
pub fn cap_jobs(requested: usize, env_cap: Option<&str>) -> usize {
    let cap = env_cap.and_then(|v| v.trim().parse::<usize>().ok()).filter(|&c| c > 0);
    requested.min(cap.unwrap_or(usize::MAX)).max(1)
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn resolve_gen(cli: &Cli, file: &FileConfig, args: &GenArgs) -> ResolvedConfig {
    let mut cfg = ResolvedConfig::base(cli, file, "gen");
    let mut g = file.gen.clone();
    g.seed = cfg.seed;
    if let Some(v) = args.regime {
        g.regime = v;
    }
    if let Some(v) = args.n_accounts {
        g.n_accounts = v;
    }
    if let Some(v) = args.n_windows {
        g.n_windows = v;
    }
    if let Some(v) = args.tx_per_window {
        g.tx_per_window = v;
    }
    if let Some(v) = args.fraud_rate {
        g.fraud_rate = v;
    }
    if let Some(v) = args.motif_hops {
        g.motif_hops = v;
    }
    if let Some(v) = args.bin_hours {
        g.bin_hours = v;
    }
    cfg.gen = Some(g);
    cfg.input = Some(args.output.clone().unwrap_or_else(|| cli.out_dir.join(TRANSACTIONS_FILE)));
    cfg
}

fn resolve_train_config(seed: u64, file: &FileConfig, args: &ModelArgs) -> TrainConfig {
    let mut t = file.train.clone();
    t.seed = seed;
    if let Some(v) = args.k {
        t.k = v;
    }
    if let Some(v) = args.d {
        t.d = v;
    }
    if let Some(v) = args.d_k {
        t.d_k = v;
    }
    if let Some(v) = args.pretrain_epochs {
        t.pretrain_epochs = v;
    }
    if let Some(v) = args.finetune_epochs {
        t.finetune_max_epochs = v;
    }
    if let Some(v) = args.patience {
        t.early_stop_patience = v;
    }
    if let Some(v) = args.train_frac {
        t.train_frac = v;
    }
    if let Some(v) = args.val_frac {
        t.val_frac = v;
    }
    t
}

fn resolve_build(cli: &Cli, file: &FileConfig, args: &BuildArgs) -> ResolvedConfig {
    let mut cfg = ResolvedConfig::base(cli, file, "build-graph");
    let mut b = file.build.clone();
    if let Some(v) = args.bin_hours {
        b.bin_hours = v;
    }
    if let Some(v) = args.cap {
        b.cap = v;
    }
    let mut t = file.train.clone();
    t.seed = cfg.seed;
    if let Some(v) = args.train_frac {
        t.train_frac = v;
    }
    if let Some(v) = args.val_frac {
        t.val_frac = v;
    }
    cfg.build = Some(b);
    cfg.train = Some(t);
    cfg.input = Some(args.input.clone());
    cfg
}

fn resolve_train(cli: &Cli, file: &FileConfig, args: &TrainArgs) -> Result<ResolvedConfig> {
    let mut cfg = ResolvedConfig::base(cli, file, "train");
    let mut t = resolve_train_config(cfg.seed, file, &args.model);
    if let Some(v) = args.variant {
        t.variant = v;
    }
    if args.no_pretrain {
        t.variant = match t.variant {
            Variant::Full | Variant::NoContrastive => Variant::NoContrastive,
            other => {
                return Err(Error::Argument(format!(
                    "--no-pretrain selects no_contrastive and cannot be combined with variant {other}"
                )))
            }
        };
    }
    cfg.train = Some(t);
    cfg.store = Some(args.model.store.clone());
    Ok(cfg)
}

fn resolve_ablate(cli: &Cli, file: &FileConfig, args: &AblateArgs) -> ResolvedConfig {
    let mut cfg = ResolvedConfig::base(cli, file, "ablate");
    cfg.train = Some(resolve_train_config(cfg.seed, file, &args.model));
    cfg.store = Some(args.model.store.clone());
    cfg
}

fn resolve_sweep(cli: &Cli, file: &FileConfig, args: &SweepArgs) -> ResolvedConfig {
    let mut cfg = ResolvedConfig::base(cli, file, "sweep");
    cfg.train = Some(resolve_train_config(cfg.seed, file, &args.model));
    cfg.store = Some(args.model.store.clone());
    cfg.sweep = Some(SweepSection { param: args.param, values: args.values.clone() });
    cfg
}

fn resolve_baseline(cli: &Cli, file: &FileConfig, args: &BaselineArgs) -> ResolvedConfig {
    let mut cfg = ResolvedConfig::base(cli, file, "baseline");
    let mut tab = file.baseline.clone();
    tab.seed = cfg.seed;
    if let Some(v) = args.hidden {
        tab.hidden = v;
    }
    if let Some(v) = args.l2 {
        tab.l2 = v;
    }
    if let Some(v) = args.lr {
        tab.lr = v;
    }
    if let Some(v) = args.max_epochs {
        tab.max_epochs = v;
    }
    if let Some(v) = args.patience {
        tab.patience = v;
    }
    cfg.baseline = Some(BaselineSection {
        model: args.model,
        tabular: tab,
        train_frac: args.train_frac.unwrap_or(file.train.train_frac),
        val_frac: args.val_frac.unwrap_or(file.train.val_frac),
    });
    cfg.store = Some(args.store.clone());
    cfg
}

/// Resolves the configuration for the parsed command line.
pub fn resolve(cli: &Cli) -> Result<ResolvedConfig> {
    let file = load_file_config(cli.config.as_deref())?;
    Ok(match &cli.command {
        Command::Gen(a) => resolve_gen(cli, &file, a),
        Command::BuildGraph(a) => resolve_build(cli, &file, a),
        Command::Train(a) => resolve_train(cli, &file, a)?,
        Command::Ablate(a) => resolve_ablate(cli, &file, a),
        Command::Sweep(a) => resolve_sweep(cli, &file, a),
        Command::Baseline(a) => resolve_baseline(cli, &file, a),
    })
}

fn section<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("resolved config lacks the {name} section")))
}

/// Writes the synthetic CSV named in `cfg.input`.
pub fn cmd_gen(cfg: &ResolvedConfig) -> Result<PathBuf> {
    cfg.write(&cfg.out_dir)?;
    let g = section(&cfg.gen, "gen")?;
    let path = section(&cfg.input, "input")?.clone();
    let records = generate(g)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_transactions(BufWriter::new(fs::File::create(&path)?), &records)?;
    log::info!("wrote {} transactions to {}", records.len(), path.display());
    Ok(path)
}

/// Builds the snapshot store in `cfg.out_dir`.
pub fn cmd_build_graph(cfg: &ResolvedConfig) -> Result<stc_mixhop::graph::Manifest> {
    cfg.write(&cfg.out_dir)?;
    let b = section(&cfg.build, "build")?;
    let t = section(&cfg.train, "train")?;
    let input = section(&cfg.input, "input")?;
    let records = parse_transactions(fs::File::open(input)?)?;
    let opts = BuildOptions {
        bin_hours: b.bin_hours,
        cap: b.cap,
        seed: cfg.seed,
        train_frac: t.train_frac,
        val_frac: t.val_frac,
    };
    let ds = build_dataset(&records, &opts)?;
    if ds.split.is_none() && !records.is_empty() {
        log::warn!("too few non-empty windows for a split; features left unstandardized");
    }
    write_store(&cfg.out_dir, &ds.manifest, &ds.snapshots)?;
    log::info!("wrote {} windows to {}", ds.snapshots.len(), cfg.out_dir.display());
    Ok(ds.manifest)
}

/// Loads a store and splits it with the given fractions.
pub fn load_split(store: &Path, train_frac: f64, val_frac: f64) -> Result<(Vec<Snapshot>, Split, Vec<String>)> {
    let (manifest, snapshots) = read_store(store)?;
    let split = chronological_split(&snapshots, train_frac, val_frac)?;
    let mut warnings = Vec::new();
    if manifest.stats.is_some() && manifest.stats_windows != split.train {
        warnings.push(format!(
            "store was standardized on windows {:?} but the training split is {:?}",
            manifest.stats_windows, split.train
        ));
    }
    Ok((snapshots, split, warnings))
}

/// One full training run into `dir`: config, checkpoints, record, report.
pub fn train_into(
    dir: &Path,
    cfg: &ResolvedConfig,
    snapshots: &[Snapshot],
    split: &Split,
    warnings: &[String],
) -> Result<(EvalReport, RunRecord)> {
    cfg.write(dir)?;
    let t = section(&cfg.train, "train")?;
    let outcome = train(snapshots, split, t)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    if let Some(p) = &outcome.pretrained {
        Checkpoint::new(p, Stage::Pretrained, t.seed, t.variant).save(&ckpt_dir.join("pretrained.json"))?;
    }
    Checkpoint::new(&outcome.params, Stage::Finetuned, t.seed, t.variant).save(&ckpt_dir.join("best.json"))?;
    let mut record = outcome.record;
    record.best_checkpoint = Some("checkpoints/best.json".into());
    record.warnings.extend(warnings.iter().cloned());
    let report = evaluate(&outcome.params, &outcome.prepared, snapshots, split, t.variant, t.seed)?;
    write_json(&dir.join(RECORD_FILE), &record)?;
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok((report, record))
}

pub fn cmd_train(cfg: &ResolvedConfig) -> Result<EvalReport> {
    cfg.write(&cfg.out_dir)?;
    let t = section(&cfg.train, "train")?;
    t.validate()?;
    let (snapshots, split, warnings) = load_split(section(&cfg.store, "store")?, t.train_frac, t.val_frac)?;
    Ok(train_into(&cfg.out_dir, cfg, &snapshots, &split, &warnings)?.0)
}

fn job_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn metric_cells(r: &EvalReport) -> Vec<String> {
    vec![
        fmt_opt(r.roc_auc),
        fmt_opt(r.pr_auc),
        r.f_beta.to_string(),
        r.precision.to_string(),
        fmt_opt(r.recall),
        fmt_opt(r.accuracy),
        r.threshold.to_string(),
    ]
}

/// Ablation table text: header plus one row per report.
pub fn ablation_csv(rows: &[(Variant, EvalReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant"];
    header.extend(METRIC_COLUMNS);
    header.push("seed");
    w.write_record(&header)?;
    for (v, r) in rows {
        let mut rec = vec![v.display_name().to_string()];
        rec.extend(metric_cells(r));
        rec.push(r.seed.to_string());
        w.write_record(&rec)?;
    }
    into_string(w)
}

/// Sweep table text: header plus one row per value.
pub fn sweep_csv(param: SweepParam, rows: &[(usize, EvalReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["param", "value"];
    header.extend(METRIC_COLUMNS);
    header.extend(["split_hash", "seed"]);
    w.write_record(&header)?;
    for (value, r) in rows {
        let mut rec = vec![param.name().to_string(), value.to_string()];
        rec.extend(metric_cells(r));
        rec.push(r.split_hash.clone());
        rec.push(r.seed.to_string());
        w.write_record(&rec)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Consistency(format!("non-UTF-8 table: {e}")))
}

/// Runs the five variants, each in `<out-dir>/<variant tag>/`, and writes
/// `ablation.csv`.
pub fn cmd_ablate(cfg: &ResolvedConfig) -> Result<Vec<(Variant, EvalReport)>> {
    cfg.write(&cfg.out_dir)?;
    let t = section(&cfg.train, "train")?;
    t.validate()?;
    let (snapshots, split, warnings) = load_split(section(&cfg.store, "store")?, t.train_frac, t.val_frac)?;
    let rows = job_pool(cfg.jobs)?.install(|| {
        Variant::ALL
            .par_iter()
            .map(|&v| {
                let mut sub = cfg.clone();
                sub.command = "train".into();
                sub.out_dir = cfg.out_dir.join(v.tag());
                sub.train = Some(TrainConfig { variant: v, ..t.clone() });
                train_into(&sub.out_dir, &sub, &snapshots, &split, &warnings).map(|(r, _)| (v, r))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    fs::write(cfg.out_dir.join(ABLATION_FILE), ablation_csv(&rows)?)?;
    Ok(rows)
}

/// One run per value in `<out-dir>/<param>_<value>/`, then `sweep.csv`.
pub fn cmd_sweep(cfg: &ResolvedConfig) -> Result<Vec<(usize, EvalReport)>> {
    cfg.write(&cfg.out_dir)?;
    let t = section(&cfg.train, "train")?;
    let sw = section(&cfg.sweep, "sweep")?;
    let configs: Vec<(usize, TrainConfig)> = sw
        .values
        .iter()
        .map(|&v| {
            let c = match sw.param {
                SweepParam::K => TrainConfig { k: v, ..t.clone() },
                SweepParam::Dk => TrainConfig { d_k: v, ..t.clone() },
            };
            c.validate().map(|_| (v, c))
        })
        .collect::<Result<_>>()?;
    let (snapshots, split, warnings) = load_split(section(&cfg.store, "store")?, t.train_frac, t.val_frac)?;
    let rows = job_pool(cfg.jobs)?.install(|| {
        configs
            .par_iter()
            .map(|(v, c)| {
                let mut sub = cfg.clone();
                sub.command = "train".into();
                sub.out_dir = cfg.out_dir.join(format!("{}_{v}", sw.param.name()));
                sub.sweep = None;
                sub.train = Some(c.clone());
                train_into(&sub.out_dir, &sub, &snapshots, &split, &warnings).map(|(r, _)| (*v, r))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    fs::write(cfg.out_dir.join(SWEEP_FILE), sweep_csv(sw.param, &rows)?)?;
    Ok(rows)
}

/// Fits a tabular model; writes `model.json`, `run_record.json`, `report.json`.
pub fn cmd_baseline(cfg: &ResolvedConfig) -> Result<(EvalReport, TabularModel, TabularRecord)> {
    cfg.write(&cfg.out_dir)?;
    let b = section(&cfg.baseline, "baseline")?;
    let (snapshots, split, _) = load_split(section(&cfg.store, "store")?, b.train_frac, b.val_frac)?;
    let (report, model, record) = run_baseline(b.model, &snapshots, &split, &b.tabular)?;
    write_json(&cfg.out_dir.join("model.json"), &model)?;
    write_json(&cfg.out_dir.join(RECORD_FILE), &record)?;
    write_json(&cfg.out_dir.join(REPORT_FILE), &report)?;
    Ok((report, model, record))
}

/// Dispatches an already parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Gen(_) => cmd_gen(&cfg).map(drop),
        Command::BuildGraph(_) => cmd_build_graph(&cfg).map(drop),
        Command::Train(_) => cmd_train(&cfg).map(drop),
        Command::Ablate(_) => cmd_ablate(&cfg).map(drop),
        Command::Sweep(_) => cmd_sweep(&cfg).map(drop),
        Command::Baseline(_) => cmd_baseline(&cfg).map(drop),
    }
}

/// Usage problems exit with 2, everything else with 1.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
