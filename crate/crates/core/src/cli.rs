//! Command-line interface. Every subcommand writes its primary output to the
//! given writer; artifacts go to files under `--out-dir`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{EventLog, ItemIndex, LoadOptions, Schema, SessionCorpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, grad_rank_tsv, gradient_vs_rank, popular_items, uniform_buckets, GradRankConfig};
use crate::knn::{self, SimilarityTable, DEFAULT_SHRINKAGE, DEFAULT_TOP_M};
use crate::losses::{LossName, LossSpec};
use crate::model::GruParams;
use crate::persist::{self, ModelMeta};
use crate::sampler::{SampleCache, SampleDistribution};
use crate::trainer::{TrainConfig, TrainLog, Trainer};

#[derive(Debug, Parser)]
#[command(name = "sessrec", version, about = "Session-based next-item recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a GRU model.
    Train(TrainArgs),
    /// Recall@k and MRR@k of a trained model on a test log.
    Eval(EvalArgs),
    /// Median target-score gradient per target-rank bucket.
    DiagGrad(DiagGradArgs),
    /// Rank next items for a session prefix.
    Recommend(RecommendArgs),
    /// Fit the item-kNN baseline.
    KnnFit(KnnFitArgs),
    /// Evaluate an item-kNN table.
    KnnEval(KnnEvalArgs),
    /// Compare cached negative draws to the target sampling distribution.
    SampleCheck(SampleCheckArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize, PartialEq)]
pub struct DataArgs {
    /// Delimited event log with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "SessionId")]
    pub session_col: String,
    #[arg(long, default_value = "ItemId")]
    pub item_col: String,
    #[arg(long, default_value = "Time")]
    pub time_col: String,
    /// Field delimiter; `tab` or a single character.
    #[arg(long, default_value = "tab")]
    pub delimiter: String,
    #[arg(long, default_value_t = 2)]
    pub min_session_len: usize,
    #[arg(long, default_value_t = 1)]
    pub min_item_support: u64,
}

impl DataArgs {
    fn path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("--data is required".into()))
    }

    fn schema(&self) -> Result<Schema> {
        let delimiter = match self.delimiter.as_str() {
            "tab" | "\\t" => '\t',
            s if s.chars().count() == 1 => s.chars().next().unwrap(),
            s => return Err(Error::Config(format!("invalid delimiter `{s}`"))),
        };
        Ok(Schema {
            session_col: self.session_col.clone(),
            item_col: self.item_col.clone(),
            time_col: self.time_col.clone(),
            delimiter,
        })
    }

    fn options(&self) -> LoadOptions {
        LoadOptions {
            min_session_len: self.min_session_len,
            min_item_support: self.min_item_support,
        }
    }

    fn load(&self) -> Result<SessionCorpus> {
        SessionCorpus::load(self.path()?, &self.schema()?, self.options())
    }

    fn load_with_index(&self, index: &ItemIndex) -> Result<SessionCorpus> {
        let log = EventLog::read(self.path()?, &self.schema()?)?;
        SessionCorpus::build_with_index(&log, index, self.options())
    }
}

/// Training flags; unset flags fall back to the config file, then to the
/// built-in defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML file with training hyperparameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-run the configuration recorded in a previous run's manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many epochs (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub xe_stabilizer: Option<String>,
    #[arg(long)]
    pub xe_epsilon: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Additional shared negative samples per batch.
    #[arg(long)]
    pub n_extra: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub collision: Option<String>,
    #[arg(long)]
    pub cache: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embedding: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub output_bias: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub divergence_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Item map; defaults to the one recorded in the model header.
    #[arg(long)]
    pub items: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Rank targets only against the N most popular training items.
    #[arg(long)]
    pub restrict_popular: Option<usize>,
    /// Write report.txt, report.tsv and histogram.tsv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagGradArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training log replayed to build slates.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "bpr")]
    pub loss: String,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub n_extra: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Number of events to sample.
    #[arg(long, default_value_t = 10_000)]
    pub events: usize,
    #[arg(long, default_value_t = 1)]
    pub bucket_width: usize,
    /// Upper end of the rank range; defaults to the number of negatives + 1.
    #[arg(long)]
    pub max_rank: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Session prefix as external item keys, oldest first.
    #[arg(long, value_delimiter = ',')]
    pub session: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct KnnFitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
    pub shrinkage: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_M)]
    pub top_m: usize,
    #[arg(long, default_value = "knn")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct KnnEvalArgs {
    /// Directory written by `knn-fit`.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long)]
    pub restrict_popular: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleCheckArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: usize,
    /// Draws per cache refill.
    #[arg(long, default_value_t = 100_000)]
    pub cache: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write per-item frequencies here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to repeat a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: TrainConfig,
    pub data: DataArgs,
    pub corpus_fingerprint: String,
    pub item_fingerprint: String,
    pub seed: u64,
    pub artifacts: Artifacts,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub model: PathBuf,
    pub items: PathBuf,
    pub train_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub const MODEL_FILE: &str = "model.bin";
pub const ITEMS_FILE: &str = "items.tsv";
pub const LOG_FILE: &str = "train_log.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KNN_TABLE_FILE: &str = "table.tsv";

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn parse_name<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("invalid value `{value}` for --{flag}")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Defaults, then the config file (or manifest), then explicit flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<(TrainConfig, DataArgs)> {
    let (mut cfg, mut data) = if let Some(path) = &args.manifest {
        let m: RunManifest = serde_json::from_str(&read_file(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        (m.config, m.data)
    } else if let Some(path) = &args.config {
        let cfg = toml::from_str(&read_file(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        (cfg, args.data.clone())
    } else {
        (TrainConfig::default(), args.data.clone())
    };
    if args.data.data.is_some() {
        data = args.data.clone();
    }
    macro_rules! set {
        ($field:ident, $flag:ident) => {
            if let Some(v) = args.$flag {
                cfg.$field = v;
            }
        };
        ($field:ident, $flag:ident, $name:literal) => {
            if let Some(v) = &args.$flag {
                cfg.$field = parse_name($name, v)?;
            }
        };
    }
    set!(loss, loss, "loss");
    set!(lambda, lambda);
    set!(xe_stabilizer, xe_stabilizer, "xe-stabilizer");
    set!(xe_epsilon, xe_epsilon);
    set!(batch_size, batch);
    set!(n_additional, n_extra);
    set!(alpha, alpha);
    set!(collision, collision, "collision");
    set!(cache_capacity, cache);
    set!(optimizer, optimizer, "optimizer");
    set!(learning_rate, lr);
    set!(momentum, momentum);
    set!(l2, l2);
    set!(dropout, dropout);
    set!(epochs, epochs);
    set!(truncation, truncation);
    set!(hidden, hidden);
    set!(embedding, embedding, "embedding");
    set!(embedding_dim, embedding_dim);
    set!(activation, activation, "activation");
    set!(output_bias, output_bias);
    set!(seed, seed);
    set!(divergence_threshold, divergence_threshold);
    cfg.validate()?;
    Ok((cfg, data))
}

fn model_meta(cfg: &TrainConfig, index: &ItemIndex) -> ModelMeta {
    ModelMeta {
        loss: cfg.loss.to_string(),
        hyperparameters: serde_json::to_string(cfg).unwrap_or_default(),
        item_map: ITEMS_FILE.into(),
        item_fingerprint: index.fingerprint(),
    }
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let started = now();
    let (cfg, data) = resolve_train_config(args)?;
    let corpus = data.load()?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = model_meta(&cfg, corpus.item_index());
    write_file(&dir.join(ITEMS_FILE), corpus.stats_dump())?;

    let mut trainer = Trainer::<f32>::new(&corpus, cfg.clone())?;
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.epochs {
        let e = trainer.run_epoch()?;
        writeln!(out, "epoch {epoch}\tloss {:.6}\t{:.1}s", e.mean_loss, e.wall_seconds).ok();
        if args.checkpoint_every > 0 && epoch % args.checkpoint_every == 0 && epoch < cfg.epochs {
            let p = dir.join(format!("checkpoint-{epoch:04}.bin"));
            persist::save(&p, trainer.params(), &meta)?;
            checkpoints.push(p);
        }
    }
    let log: TrainLog = trainer.log().clone();
    let params = trainer.into_params();
    let artifacts = Artifacts {
        model: dir.join(MODEL_FILE),
        items: dir.join(ITEMS_FILE),
        train_log: dir.join(LOG_FILE),
        checkpoints,
    };
    persist::save(&artifacts.model, &params, &meta)?;
    write_file(&artifacts.train_log, log.to_tsv())?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg,
        data,
        corpus_fingerprint: corpus.fingerprint(),
        item_fingerprint: corpus.item_index().fingerprint(),
        artifacts,
        started_unix: started,
        finished_unix: now(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), json)?;
    writeln!(out, "model written to {}", manifest.artifacts.model.display()).ok();
    Ok(())
}

/// Loads a model with its item map and checks that the two belong together.
pub fn load_model(args: &ModelArgs) -> Result<(GruParams<f32>, ModelMeta, ItemIndex, Vec<u64>)> {
    let (params, meta) = persist::load(&args.model)?;
    let items_path = match &args.items {
        Some(p) => p.clone(),
        None => args
            .model
            .parent()
            .unwrap_or(Path::new("."))
            .join(&meta.item_map),
    };
    let (index, supports) = SessionCorpus::parse_stats(&read_file(&items_path)?)?;
    let found = index.fingerprint();
    if found != meta.item_fingerprint || index.len() != params.n_items() {
        return Err(Error::Fingerprint {
            expected: meta.item_fingerprint.clone(),
            found,
        });
    }
    Ok((params, meta, index, supports))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (params, _, index, supports) = load_model(&args.model)?;
    let test = args.data.load_with_index(&index)?;
    let restrict = args.restrict_popular.map(|n| popular_items(&supports, n));
    let report = evaluate(&params, &test, args.k, restrict.as_deref())?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.txt"), report.to_text())?;
        write_file(&dir.join("report.tsv"), report.to_tsv())?;
        write_file(&dir.join("histogram.tsv"), report.histogram_tsv())?;
    }
    write!(out, "{}", report.to_text()).ok();
    Ok(())
}

pub fn cmd_diag_grad(args: &DiagGradArgs, out: &mut dyn Write) -> Result<()> {
    let (params, _, index, _) = load_model(&args.model)?;
    let corpus = args.data.load_with_index(&index)?;
    let loss: LossName = args.loss.parse().map_err(Error::Config)?;
    if loss == LossName::Xe {
        return Err(Error::Config("diag-grad supports top1, bpr, top1-max and bpr-max".into()));
    }
    let max_rank = args.max_rank.unwrap_or(args.batch - 1 + args.n_extra + 1);
    let cfg = GradRankConfig {
        loss: LossSpec {
            lambda: args.lambda,
            ..LossSpec::named(loss)
        },
        batch_size: args.batch,
        n_additional: args.n_extra,
        alpha: args.alpha,
        seed: args.seed,
        max_events: args.events,
        buckets: uniform_buckets(args.bucket_width, max_rank),
        ..GradRankConfig::default()
    };
    let tsv = grad_rank_tsv(&gradient_vs_rank(&params, &corpus, &cfg)?);
    match &args.out {
        Some(p) => write_file(p, tsv),
        None => {
            write!(out, "{tsv}").ok();
            Ok(())
        }
    }
}

/// Top `k` next items for a session prefix given by item index.
pub fn recommend(params: &GruParams<f32>, prefix: &[usize], k: usize) -> Result<Vec<(usize, f32)>> {
    if prefix.is_empty() {
        return Err(Error::Config("at least one event is required in the session prefix".into()));
    }
    let mut h = ndarray::Array2::<f32>::zeros((1, params.hidden()));
    for (t, &item) in prefix.iter().enumerate() {
        let rec = params.forward_step(&[item], h.view(), &[t == 0], &[], None)?;
        h = rec.h_new;
    }
    let scores = params.score_all(h.view());
    let row = scores.row(0);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx.into_iter().map(|i| (i, row[i])).collect())
}

pub fn cmd_recommend(args: &RecommendArgs, out: &mut dyn Write) -> Result<()> {
    let (params, _, index, _) = load_model(&args.model)?;
    let prefix = args
        .session
        .iter()
        .map(|key| index.get(key).ok_or_else(|| Error::UnknownItem(key.clone())))
        .collect::<Result<Vec<_>>>()?;
    writeln!(out, "rank\titem\tscore").ok();
    for (r, (i, s)) in recommend(&params, &prefix, args.k)?.into_iter().enumerate() {
        writeln!(out, "{}\t{}\t{s:.6}", r + 1, index.key(i)).ok();
    }
    Ok(())
}

pub fn cmd_knn_fit(args: &KnnFitArgs, out: &mut dyn Write) -> Result<()> {
    if !(args.shrinkage >= 0.0) {
        return Err(Error::Config("shrinkage must be non-negative".into()));
    }
    let corpus = args.data.load()?;
    let table = SimilarityTable::fit(&corpus, args.shrinkage, args.top_m);
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(KNN_TABLE_FILE), table.to_tsv(corpus.item_index()))?;
    write_file(&dir.join(ITEMS_FILE), corpus.stats_dump())?;
    writeln!(out, "similarity table for {} items written to {}", table.n_items(), dir.display()).ok();
    Ok(())
}

pub fn cmd_knn_eval(args: &KnnEvalArgs, out: &mut dyn Write) -> Result<()> {
    let dir = &args.model_dir;
    let (index, supports) = SessionCorpus::parse_stats(&read_file(&dir.join(ITEMS_FILE))?)?;
    let table = SimilarityTable::from_tsv(&read_file(&dir.join(KNN_TABLE_FILE))?, &index)?;
    let test = args.data.load_with_index(&index)?;
    let restrict = args.restrict_popular.map(|n| popular_items(&supports, n));
    let report = knn::evaluate(&table, &test, args.k, restrict.as_deref())?;
    write!(out, "{}", report.to_text()).ok();
    Ok(())
}

/// Result of a goodness-of-fit check of cached draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCheck {
    pub target: Vec<f64>,
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Draws `n_draws` items through a [`SampleCache`] and runs Pearson's
/// chi-square test against the target probabilities (zero-probability
/// items excluded).
pub fn sample_check(dist: &SampleDistribution, n_draws: usize, cache_capacity: usize, seed: u64) -> SampleCheck {
    let mut cache = SampleCache::new(cache_capacity.max(1), seed);
    let mut counts = vec![0u64; dist.n_items()];
    let mut left = n_draws;
    while left > 0 {
        let n = left.min(cache_capacity.max(1));
        for i in cache.draw(dist, n) {
            counts[i] += 1;
        }
        left -= n;
    }
    let target = dist.probabilities();
    let mut chi = 0.0;
    let mut cells = 0usize;
    for (&p, &c) in target.iter().zip(&counts) {
        if p > 0.0 {
            let e = p * n_draws as f64;
            chi += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.sf(chi))
    };
    SampleCheck {
        target,
        counts,
        chi_square: chi,
        dof,
        p_value,
    }
}

pub fn cmd_sample_check(args: &SampleCheckArgs, out: &mut dyn Write) -> Result<()> {
    if args.draws == 0 {
        return Err(Error::Config("--draws must be positive".into()));
    }
    let corpus = args.data.load()?;
    let dist = SampleDistribution::new(&corpus, args.alpha)?;
    let check = sample_check(&dist, args.draws, args.cache, args.seed);
    let mut table = String::from("item\ttarget\tempirical\n");
    for (i, (&p, &c)) in check.target.iter().zip(&check.counts).enumerate() {
        table.push_str(&format!(
            "{}\t{p:.8}\t{:.8}\n",
            corpus.item_index().key(i),
            c as f64 / args.draws as f64
        ));
    }
    match &args.out {
        Some(p) => write_file(p, table)?,
        None => write!(out, "{table}").unwrap_or(()),
    }
    writeln!(
        out,
        "chi_square={:.4} dof={} p_value={:.6}",
        check.chi_square, check.dof, check.p_value
    )
    .ok();
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::DiagGrad(a) => cmd_diag_grad(a, out),
        Command::Recommend(a) => cmd_recommend(a, out),
        Command::KnnFit(a) => cmd_knn_fit(a, out),
        Command::KnnEval(a) => cmd_knn_eval(a, out),
        Command::SampleCheck(a) => cmd_sample_check(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Usage errors exit with 1 like configuration errors.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if e.use_stderr() {
                write!(err, "{e}").ok();
            } else {
                write!(out, "{e}").ok();
            }
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> TrainArgs {
        let mut v = vec!["sessrec", "train"];
        v.extend_from_slice(args);
        match Cli::try_parse_from(v).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "loss = \"top1-max\"\nhidden = 12\nalpha = 0.25\n").unwrap();
        let a = parse(&["--config", path.to_str().unwrap(), "--hidden", "7"]);
        let (cfg, _) = resolve_train_config(&a).unwrap();
        assert_eq!(cfg.loss, LossName::Top1Max);
        assert_eq!(cfg.hidden, 7);
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(resolve_train_config(&parse(&["--alpha", "1.5"])), Err(Error::Config(_))));
        assert!(matches!(
            resolve_train_config(&parse(&["--loss", "top1", "--batch", "1", "--n-extra", "0"])),
            Err(Error::Config(_))
        ));
        assert!(matches!(resolve_train_config(&parse(&["--loss", "hinge"])), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "nonsense = 1\n").unwrap();
        let a = parse(&["--config", path.to_str().unwrap()]);
        assert!(matches!(resolve_train_config(&a), Err(Error::Config(_))));
    }

    #[test]
    fn usage_errors_exit_with_one() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(main_with_args(["sessrec", "frobnicate"], &mut o, &mut e), 1);
        assert_eq!(main_with_args(["sessrec", "--help"], &mut o, &mut e), 0);
    }

    #[test]
    fn sample_check_matches_uniform() {
        let dist = SampleDistribution::from_supports(&[3, 1, 0, 7], 0.0).unwrap();
        let c = sample_check(&dist, 40_000, 1_000, 3);
        assert_eq!(c.counts[2], 0);
        assert_eq!(c.dof, 2);
        assert!(c.p_value > 1e-3);
    }
}
