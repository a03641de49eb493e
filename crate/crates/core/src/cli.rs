//! The `longspan` command line.
//!
//! Every setting lives in [`RunConfig`]. Values come from the defaults, then
//! an optional flat TOML config file (`--config`), then command-line flags.
//! Each subcommand writes its artifacts into the output directory together
//! with `manifest.<command>.json`; every TSV artifact starts with a
//! `#longspan` preamble line carrying the config fingerprint. A directory
//! holding a manifest with a different fingerprint is never overwritten
//! unless `--force` is given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_corpus, AugmentConfig};
use crate::corpus::{parse_tsv, write_tsv, ColumnMap, Corpus, ScoreField};
use crate::normalize::{fit_bounds, normalize_corpus, read_bounds, write_bounds, BoundsMap, DegeneratePolicy, Grouping};
use crate::scorers::{load_external_scores, score_corpus, ChrfConfig, ExternalScorer, ScoreVector, Scorer};
use crate::split::{split_corpus, SplitSpec, SplitUnit};
use crate::stats::{histogram, rescale_esa, segment_report, system_report, EvalReport, GroupField, Histogram, Level};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStage {
    /// Split originals, then augment each split. No span shares members
    /// across splits.
    #[default]
    BeforeAugment,
    /// Augment everything, then split the augmented corpus.
    AfterAugment,
}

impl FromStr for SplitStage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "before-augment" => Ok(SplitStage::BeforeAugment),
            "after-augment" => Ok(SplitStage::AfterAugment),
            _ => Err(format!("unknown split stage `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    Train,
    Dev,
    #[default]
    Test,
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "dev" => Ok(EvalSplit::Dev),
            "test" => Ok(EvalSplit::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// All settings of a run. Serialized as flat TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Vec<PathBuf>,
    /// `field=Header` overrides of the default column names.
    pub columns: String,
    pub predictions: Option<PathBuf>,
    pub bounds: Option<PathBuf>,
    pub norm_grouping: Grouping,
    pub degenerate: DegeneratePolicy,
    pub k_values: Vec<usize>,
    pub stride: usize,
    pub separator: String,
    pub include_originals: bool,
    pub score_field: ScoreField,
    /// (train, dev, test)
    pub split_ratios: [f64; 3],
    pub split_unit: SplitUnit,
    pub split_stage: SplitStage,
    pub eval_split: EvalSplit,
    pub seed: u64,
    /// `chrf` or `external`.
    pub scorer: String,
    pub scorer_command: Vec<String>,
    pub chrf_max_n: usize,
    pub chrf_beta: f64,
    pub chrf_strip_whitespace: bool,
    pub report_levels: Vec<Level>,
    pub group_by: Vec<GroupField>,
    pub gold_field: ScoreField,
    pub hist_bins: usize,
    /// Defaults to [0, 1], or [0, 100] with `hist_esa`.
    pub hist_range: Option<[f64; 2]>,
    /// Rescale scores to integer ESA points before binning.
    pub hist_esa: bool,
    pub out_dir: PathBuf,
    /// Worker threads; never affects outputs and is not fingerprinted.
    pub jobs: Option<usize>,
    pub force: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let augment = AugmentConfig::default();
        let split = SplitSpec::default();
        let chrf = ChrfConfig::default();
        RunConfig {
            input: Vec::new(),
            columns: String::new(),
            predictions: None,
            bounds: None,
            norm_grouping: Grouping::default(),
            degenerate: DegeneratePolicy::default(),
            k_values: augment.k_values.iter().copied().collect(),
            stride: augment.stride,
            separator: augment.separator,
            include_originals: augment.include_originals,
            score_field: ScoreField::Normalized,
            split_ratios: [split.train, split.dev, split.test],
            split_unit: split.unit,
            split_stage: SplitStage::default(),
            eval_split: EvalSplit::default(),
            seed: split.seed,
            scorer: "chrf".into(),
            scorer_command: Vec::new(),
            chrf_max_n: chrf.max_n,
            chrf_beta: chrf.beta,
            chrf_strip_whitespace: chrf.strip_whitespace,
            report_levels: vec![Level::Segment, Level::System],
            group_by: vec![GroupField::LangPair],
            gold_field: ScoreField::Normalized,
            hist_bins: 20,
            hist_range: None,
            hist_esa: false,
            out_dir: PathBuf::from("longspan-out"),
            jobs: None,
            force: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Settings that influence outputs, without execution-only knobs.
    fn canonical(&self) -> RunConfig {
        RunConfig {
            out_dir: PathBuf::new(),
            jobs: None,
            force: false,
            ..self.clone()
        }
    }

    /// First 16 hex digits of SHA-256 over the command and its canonical
    /// settings.
    pub fn fingerprint(&self, command: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_vec(&self.canonical()).expect("config serializes"));
        hex::encode(hasher.finalize())[..16].to_string()
    }

    pub fn column_map(&self) -> Result<ColumnMap> {
        Ok(ColumnMap::default().with_overrides(&self.columns)?)
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            k_values: self.k_values.iter().copied().collect(),
            stride: self.stride,
            separator: self.separator.clone(),
            include_originals: self.include_originals,
            score_field: self.score_field,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        let [train, dev, test] = self.split_ratios;
        SplitSpec {
            train,
            dev,
            test,
            seed: self.seed,
            unit: self.split_unit,
        }
    }

    pub fn scorer(&self) -> Result<Scorer> {
        match self.scorer.as_str() {
            "chrf" => Ok(Scorer::Chrf(ChrfConfig {
                max_n: self.chrf_max_n,
                beta: self.chrf_beta,
                strip_whitespace: self.chrf_strip_whitespace,
            })),
            "external" => {
                let (program, args) = self
                    .scorer_command
                    .split_first()
                    .ok_or_else(|| Error::Config("scorer = \"external\" needs scorer_command".into()))?;
                Ok(Scorer::External(ExternalScorer::new(program.clone(), args.to_vec())?))
            }
            other => Err(Error::Config(format!("unknown scorer `{other}` (expected chrf or external)"))),
        }
    }

    fn hist_range(&self) -> (f64, f64) {
        match (self.hist_range, self.hist_esa) {
            (Some([lo, hi]), _) => (lo, hi),
            (None, true) => (0.0, 100.0),
            (None, false) => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "longspan", version, about = "Long-span MT quality-evaluation datasets and correlation reports")]
pub struct Cli {
    /// Flat TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for scoring (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overwrite a directory written under a different configuration.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse one or more TSV files into a canonical corpus.
    Ingest(IngestArgs),
    /// Fit (or reuse) min-max bounds and populate norm_score.
    Normalize(NormalizeArgs),
    /// Add k-segment long-span instances.
    Augment(AugmentArgs),
    /// Seeded train/dev/test split.
    Split(SplitArgs),
    /// Score a corpus with the built-in chrF or an external scorer.
    Score(ScoreArgs),
    /// Correlate predictions with gold scores.
    Correlate(CorrelateArgs),
    /// Histogram of predicted (or gold) scores as plot data.
    Hist(HistArgs),
    /// Full pipeline: ingest, split, normalize, augment, score, correlate, hist.
    Run(Box<RunArgs>),
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    /// Input TSV file(s).
    #[arg(long, short, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Column overrides, e.g. `src=source,mt=target,raw_score=score`.
    #[arg(long)]
    pub columns: Option<String>,
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if !self.input.is_empty() {
            cfg.input = self.input.clone();
        }
        set(&mut cfg.columns, &self.columns);
    }
}

#[derive(Debug, Args, Default)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args, Default)]
pub struct NormalizeOpts {
    /// Reuse bounds from a previous run instead of fitting.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// scheme-lang-pair, scheme or global.
    #[arg(long)]
    pub norm_grouping: Option<Grouping>,
    /// error or constant (maps flat groups to 0.5).
    #[arg(long)]
    pub degenerate: Option<DegeneratePolicy>,
}

impl NormalizeOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.bounds.is_some() {
            cfg.bounds = self.bounds.clone();
        }
        set(&mut cfg.norm_grouping, &self.norm_grouping);
        set(&mut cfg.degenerate, &self.degenerate);
    }
}

#[derive(Debug, Args, Default)]
pub struct NormalizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub opts: NormalizeOpts,
}

#[derive(Debug, Args, Default)]
pub struct AugmentOpts {
    /// Span widths, e.g. `2,3,4,5`.
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Vec<usize>,
    /// Only 2-segment spans.
    #[arg(long)]
    pub training_preset: bool,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub separator: Option<String>,
    /// Leave the original segments out of the output.
    #[arg(long)]
    pub no_originals: bool,
    /// raw or normalized; normalized requires norm_score on every segment.
    #[arg(long)]
    pub score_field: Option<ScoreField>,
}

impl AugmentOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.training_preset {
            cfg.k_values = AugmentConfig::training().k_values.into_iter().collect();
        }
        if !self.k_values.is_empty() {
            cfg.k_values = self.k_values.clone();
        }
        set(&mut cfg.stride, &self.stride);
        set(&mut cfg.separator, &self.separator);
        if self.no_originals {
            cfg.include_originals = false;
        }
        set(&mut cfg.score_field, &self.score_field);
    }
}

#[derive(Debug, Args, Default)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub opts: AugmentOpts,
}

#[derive(Debug, Args, Default)]
pub struct SplitOpts {
    /// train,dev,test ratios summing to 1.
    #[arg(long, value_parser = parse_floats::<3>)]
    pub ratios: Option<[f64; 3]>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// segment or document.
    #[arg(long)]
    pub unit: Option<SplitUnit>,
}

impl SplitOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.split_ratios, &self.ratios);
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.split_unit, &self.unit);
    }
}

#[derive(Debug, Args, Default)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub opts: SplitOpts,
}

#[derive(Debug, Args, Default)]
pub struct ScoreOpts {
    /// chrf or external.
    #[arg(long)]
    pub scorer: Option<String>,
    /// External scorer program and arguments, split on whitespace.
    #[arg(long)]
    pub scorer_command: Option<String>,
    #[arg(long)]
    pub chrf_max_n: Option<usize>,
    #[arg(long)]
    pub chrf_beta: Option<f64>,
    #[arg(long)]
    pub chrf_strip_whitespace: bool,
}

impl ScoreOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.scorer, &self.scorer);
        if let Some(cmd) = &self.scorer_command {
            cfg.scorer_command = cmd.split_whitespace().map(str::to_string).collect();
            if self.scorer.is_none() {
                cfg.scorer = "external".into();
            }
        }
        set(&mut cfg.chrf_max_n, &self.chrf_max_n);
        set(&mut cfg.chrf_beta, &self.chrf_beta);
        if self.chrf_strip_whitespace {
            cfg.chrf_strip_whitespace = true;
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub opts: ScoreOpts,
}

#[derive(Debug, Args, Default)]
pub struct ReportOpts {
    /// segment and/or system.
    #[arg(long, value_delimiter = ',')]
    pub level: Vec<Level>,
    /// Segment-level grouping fields: lang_pair, scheme, system, doc.
    #[arg(long, value_delimiter = ',')]
    pub group_by: Vec<GroupField>,
    /// Correlate against raw or normalized gold.
    #[arg(long)]
    pub gold_field: Option<ScoreField>,
}

impl ReportOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        if !self.level.is_empty() {
            cfg.report_levels = self.level.clone();
        }
        if !self.group_by.is_empty() {
            cfg.group_by = self.group_by.clone();
        }
        set(&mut cfg.gold_field, &self.gold_field);
    }
}

#[derive(Debug, Args, Default)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// `id<TAB>score` predictions covering the corpus.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub opts: ReportOpts,
}

#[derive(Debug, Args, Default)]
pub struct HistOpts {
    #[arg(long)]
    pub bins: Option<usize>,
    /// lo,hi
    #[arg(long, value_parser = parse_floats::<2>)]
    pub range: Option<[f64; 2]>,
    /// Rescale to 0-100 ESA points before binning.
    #[arg(long)]
    pub esa: bool,
}

impl HistOpts {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.hist_bins, &self.bins);
        if self.range.is_some() {
            cfg.hist_range = self.range;
        }
        if self.esa {
            cfg.hist_esa = true;
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct HistArgs {
    /// Corpus whose gold scores are binned when no predictions are given.
    #[command(flatten)]
    pub input: InputArgs,
    /// `id<TAB>score` file to bin.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub opts: HistOpts,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub normalize: NormalizeOpts,
    #[command(flatten)]
    pub augment: AugmentOpts,
    #[command(flatten)]
    pub split: SplitOpts,
    /// before-augment or after-augment.
    #[arg(long)]
    pub split_stage: Option<SplitStage>,
    /// Split that gets scored and correlated: train, dev or test.
    #[arg(long)]
    pub eval_split: Option<EvalSplit>,
    #[command(flatten)]
    pub score: ScoreOpts,
    #[command(flatten)]
    pub report: ReportOpts,
    #[command(flatten)]
    pub hist: HistOpts,
}

/// Exactly `N` comma-separated numbers.
fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n = values.len();
    values.try_into().map_err(|_| format!("expected {N} comma-separated numbers, got {n}"))
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Normalize(_) => "normalize",
            Command::Augment(_) => "augment",
            Command::Split(_) => "split",
            Command::Score(_) => "score",
            Command::Correlate(_) => "correlate",
            Command::Hist(_) => "hist",
            Command::Run(_) => "run",
        }
    }

    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Ingest(a) => a.input.apply(cfg),
            Command::Normalize(a) => {
                a.input.apply(cfg);
                a.opts.apply(cfg);
            }
            Command::Augment(a) => {
                a.input.apply(cfg);
                a.opts.apply(cfg);
            }
            Command::Split(a) => {
                a.input.apply(cfg);
                a.opts.apply(cfg);
            }
            Command::Score(a) => {
                a.input.apply(cfg);
                a.opts.apply(cfg);
            }
            Command::Correlate(a) => {
                a.input.apply(cfg);
                if a.predictions.is_some() {
                    cfg.predictions = a.predictions.clone();
                }
                a.opts.apply(cfg);
            }
            Command::Hist(a) => {
                a.input.apply(cfg);
                if a.predictions.is_some() {
                    cfg.predictions = a.predictions.clone();
                }
                a.opts.apply(cfg);
            }
            Command::Run(a) => {
                a.input.apply(cfg);
                a.normalize.apply(cfg);
                a.augment.apply(cfg);
                a.split.apply(cfg);
                set(&mut cfg.split_stage, &a.split_stage);
                set(&mut cfg.eval_split, &a.eval_split);
                a.score.apply(cfg);
                a.report.apply(cfg);
                a.hist.apply(cfg);
            }
        }
    }
}

impl Cli {
    /// Effective configuration: defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.command.apply(&mut cfg);
        set(&mut cfg.out_dir, &self.out_dir);
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if self.force {
            cfg.force = true;
        }
        Ok(cfg)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    fingerprint: &'a str,
    config: RunConfig,
    inputs: Vec<FileDigest>,
    artifacts: Vec<FileDigest>,
}

/// Collects artifacts in memory and writes them with the manifest.
struct Run<'a> {
    command: &'a str,
    cfg: &'a RunConfig,
    fingerprint: String,
    inputs: Vec<FileDigest>,
    artifacts: Vec<(String, Vec<u8>)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl<'a> Run<'a> {
    fn new(command: &'a str, cfg: &'a RunConfig) -> Result<Self> {
        let fingerprint = cfg.fingerprint(command);
        let manifest_path = cfg.out_dir.join(format!("manifest.{command}.json"));
        if manifest_path.exists() && !cfg.force {
            let text = read_text(&manifest_path)?;
            let previous = serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v.get("fingerprint").and_then(|f| f.as_str()).map(str::to_string));
            if previous.as_deref() != Some(fingerprint.as_str()) {
                return Err(Error::Config(format!(
                    "{} holds a `{command}` run with a different configuration; pass --force to overwrite",
                    cfg.out_dir.display()
                )));
            }
        }
        Ok(Run {
            command,
            cfg,
            fingerprint,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn preamble(&self) -> String {
        format!("#longspan {VERSION} {} fingerprint={}\n", self.command, self.fingerprint)
    }

    fn tsv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), crate::CorpusError>,
    ) -> Result<()> {
        let mut buf = self.preamble().into_bytes();
        write(&mut buf)?;
        self.artifacts.push((name.to_string(), buf));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let dir = &self.cfg.out_dir;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut digests = Vec::new();
        for (name, bytes) in &self.artifacts {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io_err(&path))?;
            digests.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            tool: "longspan",
            version: VERSION,
            command: self.command,
            fingerprint: &self.fingerprint,
            config: self.cfg.canonical(),
            inputs: self.inputs,
            artifacts: digests,
        };
        let path = dir.join(format!("manifest.{}.json", self.command));
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(())
    }
}

fn need_inputs(cfg: &RunConfig) -> Result<&[PathBuf]> {
    if cfg.input.is_empty() {
        Err(Error::Config("no input file given (--input or `input` in the config)".into()))
    } else {
        Ok(&cfg.input)
    }
}

fn load_corpus(run: &mut Run, cfg: &RunConfig) -> Result<Corpus> {
    let map = cfg.column_map()?;
    let mut parts = Vec::new();
    for path in need_inputs(cfg)? {
        let bytes = run.read_input(path)?;
        let corpus = parse_tsv(&bytes[..], &map).map_err(|e| match e {
            crate::CorpusError::Row { line, message } => crate::CorpusError::Row {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        eprintln!("{}: {} segments", path.display(), corpus.len());
        parts.push(corpus);
    }
    Ok(Corpus::concat(parts)?)
}

fn load_predictions(run: &mut Run, cfg: &RunConfig, corpus: &Corpus) -> Result<ScoreVector> {
    let path = cfg
        .predictions
        .as_ref()
        .ok_or_else(|| Error::Config("no predictions file given (--predictions)".into()))?;
    let bytes = run.read_input(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(load_external_scores(&bytes[..], corpus, &name)?)
}

fn normalize_with(run: &mut Run, cfg: &RunConfig, fit_on: &Corpus) -> Result<BoundsMap> {
    match &cfg.bounds {
        Some(path) => {
            let bytes = run.read_input(path)?;
            Ok(read_bounds(&bytes[..])?)
        }
        None => Ok(fit_bounds(fit_on, cfg.norm_grouping)),
    }
}

fn write_corpus_artifact(run: &mut Run, name: &str, corpus: &Corpus) -> Result<()> {
    run.tsv(name, |buf| write_tsv(corpus, buf))
}

fn reports(cfg: &RunConfig, pred: &ScoreVector, corpus: &Corpus, fingerprint: &str) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for level in &cfg.report_levels {
        let mut report = match level {
            Level::Segment => segment_report(pred, corpus, &cfg.group_by, cfg.gold_field)?,
            Level::System => system_report(pred, corpus, cfg.gold_field)?,
        };
        report.fingerprint = fingerprint.to_string();
        for row in report.rows.iter().filter(|r| r.coefficient.is_none()) {
            eprintln!("warning: {} {} {}: {}", level.as_str(), row.group, row.metric.as_str(), row.note.as_deref().unwrap_or(""));
        }
        out.push(report);
    }
    Ok(out)
}

fn emit_reports(run: &mut Run, reports: &[EvalReport], stdout: &mut (dyn Write + Send)) -> Result<()> {
    for report in reports {
        run.tsv(&format!("report.{}.tsv", report.level.as_str()), |buf| report.write_tsv(buf))?;
        let _ = writeln!(stdout, "{}", report.render_table());
    }
    Ok(())
}

fn hist_of(cfg: &RunConfig, values: impl Iterator<Item = f64>) -> Result<Histogram> {
    let values: Vec<f64> = if cfg.hist_esa {
        values
            .map(|v| rescale_esa(v).map(f64::from))
            .collect::<std::result::Result<_, _>>()?
    } else {
        values.collect()
    };
    Ok(histogram(&values, cfg.hist_bins, cfg.hist_range())?)
}

fn run_command(command: &Command, cfg: &RunConfig, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let name = command.name();
    let mut run = Run::new(name, cfg)?;
    match command {
        Command::Ingest(_) => {
            let corpus = load_corpus(&mut run, cfg)?;
            write_corpus_artifact(&mut run, "corpus.tsv", &corpus)?;
        }
        Command::Normalize(_) => {
            let corpus = load_corpus(&mut run, cfg)?;
            let bounds = normalize_with(&mut run, cfg, &corpus)?;
            let normalized = normalize_corpus(&corpus, &bounds, cfg.degenerate)?;
            write_corpus_artifact(&mut run, "normalized.tsv", &normalized)?;
            run.tsv("bounds.tsv", |buf| write_bounds(&bounds, buf))?;
        }
        Command::Augment(_) => {
            let corpus = load_corpus(&mut run, cfg)?;
            let augmented = augment_corpus(&corpus, &cfg.augment_config())?;
            eprintln!("augment: {} -> {} segments", corpus.len(), augmented.len());
            write_corpus_artifact(&mut run, "augmented.tsv", &augmented)?;
        }
        Command::Split(_) => {
            let corpus = load_corpus(&mut run, cfg)?;
            let out = split_corpus(&corpus, &cfg.split_spec())?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            write_corpus_artifact(&mut run, "split.train.tsv", &out.train)?;
            write_corpus_artifact(&mut run, "split.dev.tsv", &out.dev)?;
            write_corpus_artifact(&mut run, "split.test.tsv", &out.test)?;
        }
        Command::Score(_) => {
            let corpus = load_corpus(&mut run, cfg)?;
            let scores = score_corpus(&corpus, &cfg.scorer()?)?;
            eprintln!("score: {} segments", scores.len());
            run.tsv("scores.tsv", |buf| scores.write_tsv(buf))?;
        }
        Command::Correlate(_) => {
            let corpus = load_corpus(&mut run, cfg)?;
            let pred = load_predictions(&mut run, cfg, &corpus)?;
            let fp = run.fingerprint.clone();
            let reports = reports(cfg, &pred, &corpus, &fp)?;
            emit_reports(&mut run, &reports, stdout)?;
        }
        Command::Hist(_) => {
            let hist = match &cfg.predictions {
                Some(path) => {
                    let bytes = run.read_input(path)?;
                    hist_of(cfg, crate::scorers::read_scores(&bytes[..])?.into_iter().map(|(_, v)| v))?
                }
                None => {
                    let corpus = load_corpus(&mut run, cfg)?;
                    let gold: Vec<f64> = corpus
                        .iter()
                        .map(|s| {
                            cfg.gold_field
                                .get(s)
                                .ok_or_else(|| crate::StatsError::MissingGold(s.id.clone()))
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    hist_of(cfg, gold.into_iter())?
                }
            };
            run.tsv("hist.tsv", |buf| hist.write_tsv(buf))?;
        }
        Command::Run(_) => full_pipeline(&mut run, cfg, stdout)?,
    }
    run.finish()
}

fn full_pipeline(run: &mut Run, cfg: &RunConfig, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let corpus = load_corpus(run, cfg)?;
    write_corpus_artifact(run, "corpus.tsv", &corpus)?;
    let spec = cfg.split_spec();
    let augment = cfg.augment_config();

    let (bounds, [train, dev, test]) = match cfg.split_stage {
        SplitStage::BeforeAugment => {
            let parts = split_corpus(&corpus, &spec)?;
            for w in &parts.warnings {
                eprintln!("warning: {w}");
            }
            // test-time normalization reuses train bounds
            let bounds = normalize_with(run, cfg, &parts.train)?;
            let mut out = Vec::new();
            for part in [&parts.train, &parts.dev, &parts.test] {
                let normalized = normalize_corpus(part, &bounds, cfg.degenerate)?;
                out.push(augment_corpus(&normalized, &augment)?);
            }
            let [a, b, c]: [Corpus; 3] = out.try_into().expect("three splits");
            (bounds, [a, b, c])
        }
        SplitStage::AfterAugment => {
            let bounds = normalize_with(run, cfg, &corpus)?;
            let normalized = normalize_corpus(&corpus, &bounds, cfg.degenerate)?;
            let augmented = augment_corpus(&normalized, &augment)?;
            let parts = split_corpus(&augmented, &spec)?;
            for w in &parts.warnings {
                eprintln!("warning: {w}");
            }
            (bounds, [parts.train, parts.dev, parts.test])
        }
    };
    run.tsv("bounds.tsv", |buf| write_bounds(&bounds, buf))?;
    write_corpus_artifact(run, "split.train.tsv", &train)?;
    write_corpus_artifact(run, "split.dev.tsv", &dev)?;
    write_corpus_artifact(run, "split.test.tsv", &test)?;
    eprintln!("run: train {} / dev {} / test {} segments", train.len(), dev.len(), test.len());

    let eval = match cfg.eval_split {
        EvalSplit::Train => &train,
        EvalSplit::Dev => &dev,
        EvalSplit::Test => &test,
    };
    let scores = score_corpus(eval, &cfg.scorer()?)?;
    run.tsv("scores.tsv", |buf| scores.write_tsv(buf))?;
    let fp = run.fingerprint.clone();
    let reports = reports(cfg, &scores, eval, &fp)?;
    emit_reports(run, &reports, stdout)?;
    let hist = hist_of(cfg, scores.values())?;
    run.tsv("hist.tsv", |buf| hist.write_tsv(buf))?;
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
/// Diagnostics go to standard error, report tables to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut (dyn Write + Send)) -> i32 {
    let outcome = cli.resolve().and_then(|cfg| {
        let threads = cfg
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| run_command(&cli.command, &cfg, stdout))
    });
    match outcome {
        Ok(()) => crate::exit::OK,
        Err(e) => {
            eprintln!("longspan: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs them. Usage errors
/// exit with 2.
pub fn main_with<I, T>(args: I, stdout: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, stdout),
        Err(e) => {
            let code = if e.use_stderr() { crate::exit::SCHEMA } else { crate::exit::OK };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 7\nk_values = [2]\nscorer = \"chrf\"\nchrf_max_n = 4\n").unwrap();
        let cli = Cli::try_parse_from([
            "longspan",
            "--config",
            path.to_str().unwrap(),
            "run",
            "--input",
            "x.tsv",
            "--seed",
            "9",
        ])
        .unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.k_values, [2]);
        assert_eq!(cfg.chrf_max_n, 4);
        assert_eq!(cfg.input, [PathBuf::from("x.tsv")]);
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_floats::<3>("0.8, 0.1,0.1").unwrap(), [0.8, 0.1, 0.1]);
        assert!(parse_floats::<3>("0.8,0.2").is_err());
        assert!(parse_floats::<2>("0,x").is_err());
    }

    #[test]
    fn unknown_config_key_fails() {
        assert!(RunConfig::from_toml("sed = 1\n").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig {
            hist_range: Some([0.0, 100.0]),
            scorer_command: vec!["python3".into(), "score.py".into()],
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn fingerprint_ignores_execution_knobs() {
        let a = RunConfig::default();
        let b = RunConfig {
            jobs: Some(3),
            out_dir: "elsewhere".into(),
            force: true,
            ..RunConfig::default()
        };
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_eq!(a.fingerprint("run"), b.fingerprint("run"));
        assert_ne!(a.fingerprint("run"), c.fingerprint("run"));
        assert_ne!(a.fingerprint("run"), a.fingerprint("split"));
        assert_eq!(a.fingerprint("run").len(), 16);
    }

    #[test]
    fn external_scorer_needs_command() {
        let cfg = RunConfig {
            scorer: "external".into(),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.scorer(), Err(Error::Config(_))));
        let cfg = RunConfig {
            scorer: "bleu".into(),
            ..RunConfig::default()
        };
        assert!(cfg.scorer().is_err());
    }
}
