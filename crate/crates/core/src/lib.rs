//! Long-span MT quality-evaluation toolkit.
//!
//! Builds long-context evaluation data from segment-level human judgments
//! and correlates arbitrary quality scorers against gold scores:
//!
//! - [`corpus`]: segment data model and the TSV corpus format
//! - [`normalize`]: min-max rescaling of DA/MQM/SQM scores onto [0, 1]
//! - [`augment`]: k-segment spans with character-weighted scores
//! - [`split`]: seeded train/dev/test partitions
//! - [`scorers`]: built-in chrF and the external-scorer protocol
//! - [`stats`]: Pearson/Spearman reports, ESA rescaling, histograms
//! - [`cli`]: the `longspan` command line

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod normalize;
pub mod scorers;
pub mod split;
pub mod stats;

pub use augment::{augment_corpus, concat_span, weighted_span_score, AugmentConfig, AugmentError};
pub use corpus::{
    char_weight, group_and_sort, parse_tsv, write_tsv, AnnotatedSegment, ColumnMap, Corpus, CorpusError,
    GroupKey, Scheme, ScoreField,
};
pub use normalize::{
    fit_bounds, normalize_corpus, normalize_value, BoundsMap, DegeneratePolicy, Grouping, NormalizeError,
    ScaleBounds,
};
pub use scorers::{
    chrf_score, load_external_scores, run_external_scorer, score_corpus, ChrfConfig, ExternalScorer,
    ScoreVector, Scorer, ScorerError,
};
pub use split::{split_corpus, SplitError, SplitOutput, SplitSpec, SplitUnit};
pub use stats::{
    histogram, pearson, rescale_esa, segment_report, spearman, system_report, EvalReport, Histogram, Metric,
    StatsError,
};

use thiserror::Error;

/// Any toolkit failure, classified for process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const SCHEMA: i32 = 2;
    pub const INTEGRITY: i32 = 3;
    pub const SCORER: i32 = 4;
    pub const DEGENERATE: i32 = 5;
}

fn corpus_exit_code(e: &CorpusError) -> i32 {
    match e {
        CorpusError::Io(_) => exit::IO,
        CorpusError::Schema { .. } | CorpusError::ColumnMap(_) => exit::SCHEMA,
        CorpusError::Row { .. } | CorpusError::Integrity(_) | CorpusError::Serialization { .. } => {
            exit::INTEGRITY
        }
    }
}

impl Error {
    /// 2 schema/usage, 3 data integrity, 4 scorer failure, 5 degenerate
    /// statistics, 1 for I/O and anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Corpus(e) => corpus_exit_code(e),
            Error::Normalize(e) => match e {
                NormalizeError::Degenerate { .. } => exit::DEGENERATE,
                NormalizeError::Corpus(c) => corpus_exit_code(c),
                NormalizeError::MissingBounds(_) | NormalizeError::EmptyGroup(_) => exit::SCHEMA,
                NormalizeError::InvalidBounds { .. } => exit::INTEGRITY,
            },
            Error::Augment(e) => match e {
                AugmentError::InvalidConfig(_) => exit::SCHEMA,
                AugmentError::Corpus(c) => corpus_exit_code(c),
                _ => exit::INTEGRITY,
            },
            Error::Split(e) => match e {
                SplitError::Corpus(c) => corpus_exit_code(c),
                SplitError::InvalidRatios(_) => exit::SCHEMA,
                SplitError::EmptyCorpus => exit::INTEGRITY,
            },
            Error::Scorer(e) => match e {
                ScorerError::Corpus(c) => corpus_exit_code(c),
                ScorerError::InvalidConfig(_) => exit::SCHEMA,
                ScorerError::MissingReference(_) => exit::INTEGRITY,
                _ => exit::SCORER,
            },
            Error::Stats(e) => match e {
                StatsError::Corpus(c) => corpus_exit_code(c),
                StatsError::MissingPrediction(_) | StatsError::MissingGold(_) => exit::INTEGRITY,
                StatsError::InvalidArgument(_) => exit::SCHEMA,
                _ => exit::DEGENERATE,
            },
            Error::Config(_) => exit::SCHEMA,
            Error::Io { .. } => exit::IO,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
