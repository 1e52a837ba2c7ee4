//! Command-line entry point.
//!
//! Settings come from an optional `key = value` file (`--config`) and from
//! flags; flags win. Exit codes: 0 success, 2 input or configuration error,
//! 3 numerical non-convergence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backtest::{self, BacktestReport, FieldModel, SentimentModel};
use crate::corpus::{self, DatasetVariant, FeatureDataset};
use crate::features::DEFAULT_SVD_COMPONENTS;
use crate::labeling::{self, HitResponse, KappaOutcome};
use crate::models::{ModelError, ModelFamily};
use crate::selection::{self, report, GridDefinition, LabeledDataset, Metric, PipelineSpec, Preprocessing};

pub const DEFAULT_SEED: u64 = 42;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<selection::SelectionError> for CliError {
    fn from(e: selection::SelectionError) -> Self {
        let code = match e.model_error() {
            Some(ModelError::NonConvergence { .. }) => EXIT_NON_CONVERGENCE,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<backtest::BacktestError> for CliError {
    fn from(e: backtest::BacktestError) -> Self {
        match e {
            backtest::BacktestError::Prediction(inner) => inner.into(),
            other => CliError::input(other),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sentitrade", version, about = "News sentiment models and a sentiment-driven trading backtest")]
pub struct Cli {
    /// `key = value` settings file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default: `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deduplicate articles and write the four per-field datasets.
    BuildDatasets(BuildArgs),
    /// Screen workers, measure agreement and aggregate labels.
    LabelQa(LabelQaArgs),
    /// Grid search, evaluation round and weighting comparison per dataset.
    Train(TrainArgs),
    /// Retrain the selected pipelines on all labeled data and save them.
    Finalize(FinalizeArgs),
    /// Score articles with the saved models and simulate trading.
    Backtest(BacktestArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    articles: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelQaArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Screening fraction of the worker means (default 0.3).
    #[arg(long)]
    cheater_fraction: Option<f64>,
    /// Bin width in seconds of the work-time histogram (default 10).
    #[arg(long)]
    time_bin_seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    datasets_dir: Option<PathBuf>,
    #[arg(long)]
    labels_dir: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    /// eq1 | standard-recall
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    svd_k: Option<usize>,
    /// Comma-separated subset of logreg,multinomial_nb,rbf_svm,kmeans.
    #[arg(long)]
    families: Option<String>,
    #[arg(long)]
    logreg_c: Option<String>,
    #[arg(long)]
    nb_alpha: Option<String>,
    #[arg(long)]
    svm_c: Option<String>,
    #[arg(long)]
    svm_gamma: Option<String>,
    #[arg(long)]
    kmeans_n: Option<String>,
}

#[derive(Debug, Args)]
pub struct FinalizeArgs {
    #[arg(long)]
    datasets_dir: Option<PathBuf>,
    #[arg(long)]
    labels_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Overwrite existing model files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    articles: Option<PathBuf>,
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Comma-separated article-count thresholds (default 150).
    #[arg(long)]
    min_articles: Option<String>,
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    end: Option<String>,
    /// Comma-separated tickers in the price file used as benchmarks.
    #[arg(long)]
    benchmarks: Option<String>,
    /// Comma-separated tickers to emit chart data for.
    #[arg(long)]
    chart_tickers: Option<String>,
}

const KNOWN_KEYS: [&str; 26] = [
    "articles",
    "responses",
    "prices",
    "datasets_dir",
    "labels_dir",
    "model_dir",
    "manifest",
    "out",
    "seed",
    "jobs",
    "svd_k",
    "folds",
    "metric",
    "families",
    "logreg_c",
    "nb_alpha",
    "svm_c",
    "svm_gamma",
    "kmeans_n",
    "min_articles",
    "start",
    "end",
    "cheater_fraction",
    "time_bin_seconds",
    "benchmarks",
    "chart_tickers",
];

/// Reads a `key = value` file. Blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("{}: line {}: expected key = value", path.display(), i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::input(format!("{}: line {}: unknown key `{key}`", path.display(), i + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub articles: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub out: PathBuf,
    pub datasets_dir: PathBuf,
    pub labels_dir: PathBuf,
    pub model_dir: PathBuf,
    pub manifest: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub svd_k: usize,
    pub folds: usize,
    pub metric: Metric,
    pub families: Vec<ModelFamily>,
    pub grid: GridDefinition,
    pub min_articles: Vec<usize>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub cheater_fraction: f64,
    pub time_bin_seconds: f64,
    pub benchmarks: Vec<String>,
    pub chart_tickers: Vec<String>,
    pub force: bool,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> CliResult<T>
where
    T::Err: Display,
{
    raw.trim()
        .parse()
        .map_err(|e| CliError::input(format!("setting `{key}` = `{raw}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_family(s: &str) -> Result<ModelFamily, String> {
    ModelFamily::ALL
        .into_iter()
        .find(|f| f.as_str() == s)
        .ok_or_else(|| format!("unknown model family `{s}`"))
}

struct FamilyName(ModelFamily);

impl FromStr for FamilyName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_family(s).map(FamilyName)
    }
}

fn parse_date(key: &str, raw: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
        .map_err(|_| CliError::input(format!("setting `{key}` = `{raw}` is not a YYYY-MM-DD date")))
}

impl RunConfig {
    /// Merges flag values over the file settings and applies defaults.
    pub fn resolve(file: BTreeMap<String, String>, flags: BTreeMap<&'static str, String>, force: bool) -> CliResult<Self> {
        let mut s: BTreeMap<String, String> = file;
        for (k, v) in flags {
            s.insert(k.to_string(), v);
        }
        let get = |k: &str| s.get(k).map(String::as_str);
        let path = |k: &str| get(k).map(PathBuf::from);
        let out = path("out").unwrap_or_else(|| PathBuf::from("out"));
        let defaults = GridDefinition::default();
        let list_or = |k: &str, d: Vec<f64>| -> CliResult<Vec<f64>> {
            match get(k) {
                Some(raw) => parse_list(k, raw),
                None => Ok(d),
            }
        };
        let grid = GridDefinition {
            logreg_c: list_or("logreg_c", defaults.logreg_c)?,
            nb_alpha: list_or("nb_alpha", defaults.nb_alpha)?,
            svm_c: list_or("svm_c", defaults.svm_c)?,
            svm_gamma: list_or("svm_gamma", defaults.svm_gamma)?,
            kmeans_n: match get("kmeans_n") {
                Some(raw) => parse_list("kmeans_n", raw)?,
                None => defaults.kmeans_n,
            },
        };
        let families = match get("families") {
            Some(raw) => parse_list::<FamilyName>("families", raw)?.into_iter().map(|f| f.0).collect(),
            None => ModelFamily::ALL.to_vec(),
        };
        let config = Self {
            articles: path("articles"),
            responses: path("responses"),
            prices: path("prices"),
            datasets_dir: path("datasets_dir").unwrap_or_else(|| out.join("datasets")),
            labels_dir: path("labels_dir").unwrap_or_else(|| out.join("labels")),
            model_dir: path("model_dir").unwrap_or_else(|| out.join("models")),
            manifest: path("manifest").unwrap_or_else(|| out.join("train").join("manifest.json")),
            seed: get("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(DEFAULT_SEED),
            jobs: get("jobs").map(|v| parse_value("jobs", v)).transpose()?,
            svd_k: get("svd_k")
                .map(|v| parse_value("svd_k", v))
                .transpose()?
                .unwrap_or(DEFAULT_SVD_COMPONENTS),
            folds: get("folds").map(|v| parse_value("folds", v)).transpose()?.unwrap_or(10),
            metric: get("metric").map(|v| parse_value("metric", v)).transpose()?.unwrap_or_default(),
            families,
            grid,
            min_articles: match get("min_articles") {
                Some(raw) => parse_list("min_articles", raw)?,
                None => vec![150],
            },
            start: get("start").map(|v| parse_date("start", v)).transpose()?,
            end: get("end").map(|v| parse_date("end", v)).transpose()?,
            cheater_fraction: get("cheater_fraction")
                .map(|v| parse_value("cheater_fraction", v))
                .transpose()?
                .unwrap_or(0.3),
            time_bin_seconds: get("time_bin_seconds")
                .map(|v| parse_value("time_bin_seconds", v))
                .transpose()?
                .unwrap_or(10.0),
            benchmarks: get("benchmarks").map(|v| parse_list("benchmarks", v)).transpose()?.unwrap_or_default(),
            chart_tickers: get("chart_tickers")
                .map(|v| parse_list("chart_tickers", v))
                .transpose()?
                .unwrap_or_default(),
            out,
            force,
        };
        if config.jobs == Some(0) {
            return Err(CliError::input("jobs must be at least 1"));
        }
        if config.svd_k == 0 {
            return Err(CliError::input("svd_k must be at least 1"));
        }
        if config.families.is_empty() {
            return Err(CliError::input("no model families selected"));
        }
        if config.min_articles.is_empty() {
            return Err(CliError::input("min_articles must list at least one threshold"));
        }
        Ok(config)
    }
}

fn flag_map(cli: &Cli) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            m.insert(k, v);
        }
    };
    let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
    put("seed", cli.seed.map(|v| v.to_string()));
    put("jobs", cli.jobs.map(|v| v.to_string()));
    put("out", p(&cli.out));
    match &cli.command {
        Command::BuildDatasets(a) => put("articles", p(&a.articles)),
        Command::LabelQa(a) => {
            put("responses", p(&a.responses));
            put("cheater_fraction", a.cheater_fraction.map(|v| v.to_string()));
            put("time_bin_seconds", a.time_bin_seconds.map(|v| v.to_string()));
        }
        Command::Train(a) => {
            put("datasets_dir", p(&a.datasets_dir));
            put("labels_dir", p(&a.labels_dir));
            put("folds", a.folds.map(|v| v.to_string()));
            put("metric", a.metric.clone());
            put("svd_k", a.svd_k.map(|v| v.to_string()));
            put("families", a.families.clone());
            put("logreg_c", a.logreg_c.clone());
            put("nb_alpha", a.nb_alpha.clone());
            put("svm_c", a.svm_c.clone());
            put("svm_gamma", a.svm_gamma.clone());
            put("kmeans_n", a.kmeans_n.clone());
        }
        Command::Finalize(a) => {
            put("datasets_dir", p(&a.datasets_dir));
            put("labels_dir", p(&a.labels_dir));
            put("manifest", p(&a.manifest));
            put("model_dir", p(&a.model_dir));
        }
        Command::Backtest(a) => {
            put("articles", p(&a.articles));
            put("prices", p(&a.prices));
            put("model_dir", p(&a.model_dir));
            put("min_articles", a.min_articles.clone());
            put("start", a.start.clone());
            put("end", a.end.clone());
            put("benchmarks", a.benchmarks.clone());
            put("chart_tickers", a.chart_tickers.clone());
        }
    }
    m
}

fn require(path: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
    let path = path
        .clone()
        .ok_or_else(|| CliError::input(format!("missing required setting `{key}`")))?;
    if !path.exists() {
        return Err(CliError::input(format!("{}: file not found", path.display())));
    }
    Ok(path)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::input(format!("{}: {e}", path.display()))
}

fn with_path<E: Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::input(format!("{}: {e}", path.display()))
}

fn read_articles(path: &Path) -> CliResult<Vec<corpus::ArticleRecord>> {
    corpus::ingest_articles(open(path)?).map_err(with_path(path))
}

pub fn cmd_build_datasets(config: &RunConfig) -> CliResult<()> {
    let path = require(&config.articles, "articles")?;
    let records = read_articles(&path)?;
    let unique = corpus::deduplicate(&records);
    println!(
        "read {} articles, {} after deduplication ({} duplicates removed)",
        records.len(),
        unique.len(),
        records.len() - unique.len()
    );
    for dataset in corpus::build_datasets(&unique) {
        let out = config.datasets_dir.join(format!("{}.csv", dataset.variant));
        let mut w = create(&out)?;
        dataset.write_csv(&mut w).map_err(with_path(&out))?;
        w.flush().map_err(io_err(&out))?;
        println!("{}: {} rows -> {}", dataset.variant, dataset.len(), out.display());
    }
    Ok(())
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn cmd_label_qa(config: &RunConfig) -> CliResult<()> {
    let path = require(&config.responses, "responses")?;
    let responses = labeling::read_responses(open(&path)?).map_err(with_path(&path))?;
    if responses.is_empty() {
        return Err(CliError::input(format!("{}: no responses", path.display())));
    }
    let qa = config.out.join("qa");
    let stats = labeling::worker_stats(&responses);
    let flagged = labeling::screen_cheaters(&stats, config.cheater_fraction).map_err(CliError::input)?;
    let csv_fail = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| CliError::input(format!("{}: {e}", p.display()))
    };

    let p = qa.join("work_time_histogram.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["bin_start_seconds", "workers"]).map_err(csv_fail(&p))?;
    for (start, count) in labeling::work_time_histogram(&stats, config.time_bin_seconds) {
        w.write_record([start.to_string(), count.to_string()]).map_err(csv_fail(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = qa.join("workers.csv");
    let mut w = csv_writer(&p)?;
    w.write_record([
        "worker_id",
        "n_responses",
        "mean_work_time",
        "gold_accuracy",
        "negative",
        "neutral",
        "positive",
        "flagged",
    ])
    .map_err(csv_fail(&p))?;
    let histograms = labeling::worker_answer_histograms(&responses);
    for s in &stats {
        let h = histograms.get(&s.worker_id).copied().unwrap_or_default();
        w.write_record([
            s.worker_id.clone(),
            s.n_responses.to_string(),
            format!("{:.4}", s.mean_work_time),
            s.gold_accuracy.map(|a| format!("{a:.4}")).unwrap_or_default(),
            h[0].to_string(),
            h[1].to_string(),
            h[2].to_string(),
            flagged.contains(&s.worker_id).to_string(),
        ])
        .map_err(csv_fail(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = qa.join("flagged_workers.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["worker_id"]).map_err(csv_fail(&p))?;
    for id in &flagged {
        w.write_record([id]).map_err(csv_fail(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let kept: Vec<&HitResponse> = responses
        .iter()
        .filter(|r| !r.is_gold && !flagged.contains(&r.worker_id))
        .collect();
    let kappa_path = qa.join("kappa.csv");
    let mut kappa_w = csv_writer(&kappa_path)?;
    kappa_w
        .write_record(["dataset", "subjects", "raters", "kappa"])
        .map_err(csv_fail(&kappa_path))?;
    let dist_path = qa.join("distribution.csv");
    let mut dist_w = csv_writer(&dist_path)?;
    dist_w
        .write_record(["dataset", "source", "negative", "neutral", "positive"])
        .map_err(csv_fail(&dist_path))?;

    for variant in DatasetVariant::ALL {
        let groups = labeling::group_by_sample(kept.iter().copied().filter(|r| r.dataset_variant == variant));
        let raters = groups.values().next().map_or(0, Vec::len);
        let kappa = if groups.is_empty() {
            "no responses".to_string()
        } else if groups.values().any(|g| g.len() != raters) {
            "uneven raters".to_string()
        } else {
            match labeling::fleiss_kappa(&groups, raters) {
                Ok(KappaOutcome::Kappa(k)) => format!("{k:.6}"),
                Ok(KappaOutcome::Degenerate) => "degenerate".to_string(),
                Err(e) => e.to_string(),
            }
        };
        kappa_w
            .write_record([variant.as_str(), &groups.len().to_string(), &raters.to_string(), &kappa])
            .map_err(csv_fail(&kappa_path))?;

        let aggregated = labeling::aggregate_median(&groups).map_err(CliError::input)?;
        let mut gold: BTreeMap<&str, labeling::SentimentClass> = BTreeMap::new();
        for r in responses.iter().filter(|r| r.dataset_variant == variant) {
            if let Some(g) = r.gold_answer {
                gold.insert(r.sample_id.as_str(), g);
            }
        }
        let rows = [
            ("gold", labeling::answer_distribution(&gold.values().copied().collect::<Vec<_>>())),
            (
                "aggregate",
                labeling::answer_distribution(&aggregated.iter().map(|l| l.label).collect::<Vec<_>>()),
            ),
        ];
        for (source, counts) in rows {
            dist_w
                .write_record([
                    variant.as_str().to_string(),
                    source.to_string(),
                    counts[0].to_string(),
                    counts[1].to_string(),
                    counts[2].to_string(),
                ])
                .map_err(csv_fail(&dist_path))?;
        }

        let out = config.labels_dir.join(format!("{variant}.csv"));
        let mut w = create(&out)?;
        labeling::write_labels(&aggregated, &mut w).map_err(with_path(&out))?;
        w.flush().map_err(io_err(&out))?;
        println!("{variant}: {} labels, kappa {kappa}", aggregated.len());
    }
    kappa_w.flush().map_err(io_err(&kappa_path))?;
    dist_w.flush().map_err(io_err(&dist_path))?;
    println!("{} of {} workers flagged", flagged.len(), stats.len());
    Ok(())
}

/// Labeled rows of one dataset, with labels from `labels_dir` when present.
fn load_labeled(config: &RunConfig, variant: DatasetVariant) -> CliResult<LabeledDataset> {
    let path = config.datasets_dir.join(format!("{variant}.csv"));
    if !path.exists() {
        return Err(CliError::input(format!("{}: file not found", path.display())));
    }
    let dataset = FeatureDataset::read_csv(variant, open(&path)?).map_err(with_path(&path))?;
    let label_path = config.labels_dir.join(format!("{variant}.csv"));
    let labels = if label_path.exists() {
        labeling::read_labels(open(&label_path)?).map_err(with_path(&label_path))?
    } else {
        Vec::new()
    };
    LabeledDataset::join(&dataset, &labels).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub metric: Metric,
    pub folds: usize,
    pub pipelines: Vec<PipelineSpec>,
}

pub fn cmd_train(config: &RunConfig) -> CliResult<()> {
    let preprocessings = Preprocessing::standard(config.svd_k);
    let train_dir = config.out.join("train");
    let mut results = Vec::new();
    let mut evaluations = Vec::new();
    let mut finals = Vec::new();
    let mut weighting_rows = Vec::new();
    for variant in DatasetVariant::ALL {
        let data = load_labeled(config, variant)?;
        let result = selection::grid_search(
            &data,
            &preprocessings,
            &config.families,
            &config.grid,
            config.folds,
            config.metric,
            config.seed,
        )?;
        let evaluation = selection::select_final(&result, &data, config.folds, config.seed.wrapping_add(1))?;
        let mut chosen = evaluation.selected().spec;
        let comparison = selection::compare_equal_weighting(&chosen, &data, config.metric, config.seed)?;
        chosen.model.class_weighting = comparison.chosen;
        let final_report = if comparison.chosen == evaluation.selected().spec.model.class_weighting {
            evaluation.selected().report.clone()
        } else {
            selection::cross_validate(&chosen, &data, config.folds, config.metric, config.seed.wrapping_add(1))?
        };
        println!(
            "{variant}: {} rows, selected {} / {} / {} (objective {:.4})",
            data.len(),
            chosen.model.family(),
            chosen.preprocessing,
            chosen.model.hyperparameters,
            final_report.objective()
        );
        weighting_rows.push((variant, comparison));
        finals.push((chosen, final_report));
        results.push(result);
        evaluations.push(evaluation);
    }

    let csv_fail = |p: PathBuf| move |e: csv::Error| CliError::input(format!("{}: {e}", p.display()));
    let p = train_dir.join("hyperparameters.csv");
    report::write_hyperparameter_table(&results, create(&p)?).map_err(csv_fail(p.clone()))?;
    let p = train_dir.join("scores_eq1.csv");
    report::write_score_table(&results, &evaluations, Metric::Eq1, create(&p)?).map_err(csv_fail(p.clone()))?;
    let p = train_dir.join("scores_recall.csv");
    report::write_score_table(&results, &evaluations, Metric::StandardRecall, create(&p)?)
        .map_err(csv_fail(p.clone()))?;
    let p = train_dir.join("final_models.csv");
    report::write_final_table(&finals, create(&p)?).map_err(csv_fail(p.clone()))?;

    let p = train_dir.join("weighting.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["dataset", "unweighted_objective", "weighted_objective", "chosen"])
        .map_err(csv_fail(p.clone()))?;
    for (variant, c) in &weighting_rows {
        w.write_record([
            variant.as_str().to_string(),
            format!("{:.6}", c.unweighted.objective()),
            format!("{:.6}", c.weighted.objective()),
            format!("{:?}", c.chosen),
        ])
        .map_err(csv_fail(p.clone()))?;
    }
    w.flush().map_err(io_err(&p))?;

    let manifest = Manifest {
        seed: config.seed,
        metric: config.metric,
        folds: config.folds,
        pipelines: finals.iter().map(|(s, _)| *s).collect(),
    };
    write_json(&config.manifest, &manifest)?;
    write_json(&train_dir.join("grid.json"), &results)?;
    println!("manifest -> {}", config.manifest.display());
    Ok(())
}

pub fn cmd_finalize(config: &RunConfig) -> CliResult<()> {
    let manifest: Manifest = serde_json::from_reader(open(&config.manifest)?)
        .map_err(|e| CliError::input(format!("{}: {e}", config.manifest.display())))?;
    for variant in DatasetVariant::ALL {
        let n = manifest.pipelines.iter().filter(|p| p.dataset_variant == variant).count();
        if n != 1 {
            return Err(CliError::input(format!(
                "{}: expected one pipeline for {variant}, found {n}",
                config.manifest.display()
            )));
        }
    }
    let targets: Vec<PathBuf> = manifest
        .pipelines
        .iter()
        .map(|p| config.model_dir.join(format!("{}.model", p.dataset_variant)))
        .collect();
    if !config.force {
        if let Some(existing) = targets.iter().find(|t| t.exists()) {
            return Err(CliError::input(format!(
                "{} exists; pass --force to overwrite",
                existing.display()
            )));
        }
    }
    fs::create_dir_all(&config.model_dir).map_err(io_err(&config.model_dir))?;
    for (spec, target) in manifest.pipelines.iter().zip(&targets) {
        let data = load_labeled(config, spec.dataset_variant)?;
        let fitted = selection::train_final(spec, &data)?;
        selection::save_model(&fitted, target)?;
        println!("{}: trained on {} rows -> {}", spec.dataset_variant, data.len(), target.display());
    }
    Ok(())
}

pub fn cmd_backtest(config: &RunConfig) -> CliResult<()> {
    let articles_path = require(&config.articles, "articles")?;
    let prices_path = require(&config.prices, "prices")?;
    let articles = corpus::deduplicate(&read_articles(&articles_path)?);
    if articles.is_empty() {
        return Err(CliError::input(format!("{}: no articles", articles_path.display())));
    }
    let prices = backtest::read_prices(open(&prices_path)?).map_err(with_path(&prices_path))?;

    let mut pipelines = Vec::new();
    for variant in DatasetVariant::ALL {
        let path = config.model_dir.join(format!("{variant}.model"));
        if !path.exists() {
            return Err(CliError::input(format!("{}: file not found", path.display())));
        }
        let model = selection::load_model(&path).map_err(with_path(&path))?;
        pipelines.push((variant, model));
    }
    let field_models: Vec<FieldModel<'_>> = pipelines
        .iter()
        .map(|(variant, model)| FieldModel {
            variant: *variant,
            model: model as &dyn SentimentModel,
        })
        .collect();
    let signals = backtest::build_signals(&field_models, &articles)?;

    let start = config
        .start
        .unwrap_or_else(|| articles.iter().map(|a| a.published_at).min().expect("nonempty"));
    let end = config
        .end
        .unwrap_or_else(|| articles.iter().map(|a| a.published_at).max().expect("nonempty"));

    let mut benchmarks = BTreeMap::new();
    for ticker in &config.benchmarks {
        let series = prices
            .get(ticker)
            .ok_or_else(|| CliError::input(format!("{}: no prices for benchmark {ticker}", prices_path.display())))?;
        benchmarks.insert(ticker.clone(), backtest::benchmark_roi(series, start, end)?);
    }

    let dir = config.out.join("backtest");
    let summary_path = dir.join("summary.csv");
    let mut summary = csv_writer(&summary_path)?;
    let csv_fail = |p: PathBuf| move |e: csv::Error| CliError::input(format!("{}: {e}", p.display()));
    summary
        .write_record([
            "min_articles",
            "n_assets",
            "avg_roi",
            "max_win",
            "max_loss",
            "avg_win",
            "avg_loss",
            "wl_ratio",
        ])
        .map_err(csv_fail(summary_path.clone()))?;
    for &min_articles in &config.min_articles {
        let ledgers = backtest::run_backtest(&prices, &signals, min_articles, start, end)?;
        let report = BacktestReport::new(&ledgers, min_articles, start, end, benchmarks.clone());
        let f = |v: f64| format!("{v:.6}");
        let row = match &report.summary {
            Some(s) => vec![
                min_articles.to_string(),
                s.n_assets.to_string(),
                f(s.avg_roi),
                f(s.max_win),
                f(s.max_loss),
                s.avg_win.map(f).unwrap_or_default(),
                s.avg_loss.map(f).unwrap_or_default(),
                s.wl_ratio.to_string(),
            ],
            None => {
                let mut r = vec![min_articles.to_string(), "0".to_string()];
                r.extend((0..6).map(|_| String::new()));
                r
            }
        };
        summary.write_record(&row).map_err(csv_fail(summary_path.clone()))?;
        let p = dir.join(format!("report_min{min_articles}.csv"));
        let mut w = create(&p)?;
        report.write_csv(&mut w).map_err(with_path(&p))?;
        w.flush().map_err(io_err(&p))?;
        write_json(&dir.join(format!("report_min{min_articles}.json")), &report)?;
        write_json(&dir.join(format!("ledgers_min{min_articles}.json")), &ledgers)?;
        println!(
            "min_articles {min_articles}: {} assets, avg roi {}",
            report.assets.len(),
            report.summary.as_ref().map_or("n/a".to_string(), |s| format!("{:.4}", s.avg_roi))
        );
    }
    summary.flush().map_err(io_err(&summary_path))?;

    let p = dir.join("benchmarks.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["ticker", "roi"]).map_err(csv_fail(p.clone()))?;
    for (ticker, roi) in &benchmarks {
        w.write_record([ticker.clone(), format!("{roi:.6}")]).map_err(csv_fail(p.clone()))?;
    }
    w.flush().map_err(io_err(&p))?;

    for ticker in &config.chart_tickers {
        let signal = signals
            .iter()
            .find(|s| &s.ticker == ticker)
            .ok_or_else(|| CliError::input(format!("no articles for chart ticker {ticker}")))?;
        let series = prices
            .get(ticker)
            .ok_or_else(|| CliError::input(format!("{}: no prices for {ticker}", prices_path.display())))?;
        let rows = backtest::emit_chart_data(series, signal, start, end);
        let p = dir.join("charts").join(format!("{ticker}.csv"));
        let mut w = create(&p)?;
        backtest::write_chart_csv(&rows, &mut w).map_err(with_path(&p))?;
        w.flush().map_err(io_err(&p))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let force = matches!(&cli.command, Command::Finalize(a) if a.force);
    let config = RunConfig::resolve(file, flag_map(cli), force)?;
    let run = || match &cli.command {
        Command::BuildDatasets(_) => cmd_build_datasets(&config),
        Command::LabelQa(_) => cmd_label_qa(&config),
        Command::Train(_) => cmd_train(&config),
        Command::Finalize(_) => cmd_finalize(&config),
        Command::Backtest(_) => cmd_backtest(&config),
    };
    match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(CliError::input)?
            .install(run),
        None => run(),
    }
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
