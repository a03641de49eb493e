//! Predicted quality scores: the built-in chrF scorer and external scorers
//! attached through a score file or a subprocess.
//!
//! # Subprocess protocol
//!
//! The child receives on standard input the line `#longspan-scorer-v1`
//! followed by one `id\tsrc\tmt\tref\n` line per segment (ref empty when
//! absent), all UTF-8. It answers on standard output with `id\tscore\n`
//! lines in any order; the score is decimal text. Blank lines and lines
//! starting with `#` are ignored. The child must exit 0. The run is killed
//! after a timeout, 600 s unless `LONGSPAN_SCORER_TIMEOUT_SECS` says
//! otherwise.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{check_field, read_lines, AnnotatedSegment, Corpus, CorpusError};

pub const PROTOCOL_HEADER: &str = "#longspan-scorer-v1";
pub const TIMEOUT_ENV: &str = "LONGSPAN_SCORER_TIMEOUT_SECS";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("score for unknown id `{0}`")]
    UnknownId(String),
    #[error("no score for {} corpus id(s): {}", .0.len(), .0.join(", "))]
    Coverage(Vec<String>),
    #[error("line {line}: score `{text}` is not a finite number")]
    Value { line: usize, text: String },
    #[error("line {line}: duplicate score for id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("protocol error on line {line}: {message}")]
    Protocol { line: usize, message: String },
    #[error("scorer `{command}` failed ({status}): {stderr}")]
    Failed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("scorer `{command}` timed out after {seconds} s")]
    Timeout { command: String, seconds: u64 },
    #[error("could not launch scorer `{command}`: {source}")]
    Launch {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chrF needs a reference, but segment `{0}` has none")]
    MissingReference(String),
    #[error("invalid scorer settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Scores keyed by segment id, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scorer_name: String,
    /// Declared native range of the scorer.
    pub range_hint: (f64, f64),
    entries: IndexMap<String, f64>,
}

impl ScoreVector {
    pub fn new(scorer_name: impl Into<String>, range_hint: (f64, f64)) -> Self {
        ScoreVector {
            scorer_name: scorer_name.into(),
            range_hint,
            entries: IndexMap::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().copied()
    }

    /// Builds a vector in corpus order from an id → score mapping, checking
    /// that it covers exactly the corpus ids.
    pub fn aligned(
        scorer_name: impl Into<String>,
        range_hint: (f64, f64),
        corpus: &Corpus,
        mut scores: HashMap<String, f64>,
    ) -> Result<Self, ScorerError> {
        if let Some(unknown) = scores.keys().filter(|id| !corpus.contains(id)).min() {
            return Err(ScorerError::UnknownId(unknown.clone()));
        }
        let missing: Vec<String> = corpus
            .iter()
            .filter(|s| !scores.contains_key(&s.id))
            .map(|s| s.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ScorerError::Coverage(missing));
        }
        let mut out = ScoreVector::new(scorer_name, range_hint);
        for seg in corpus {
            let v = scores.remove(&seg.id).expect("coverage checked");
            out.entries.insert(seg.id.clone(), v);
        }
        Ok(out)
    }

    /// Writes `id\tscore` lines under an `id\tscore` header.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        writeln!(w, "id\tscore")?;
        for (id, v) in &self.entries {
            check_field(id, "id", id)?;
            writeln!(w, "{id}\t{v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChrfConfig {
    pub max_n: usize,
    pub beta: f64,
    /// Drop whitespace before extracting n-grams.
    pub strip_whitespace: bool,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig {
            max_n: 6,
            beta: 2.0,
            strip_whitespace: false,
        }
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u32> {
    let mut counts = HashMap::new();
    for gram in chars.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Character n-gram F-score averaged over orders `1..=max_n`.
///
/// Precision and recall are averaged over the orders for which the
/// reference has at least one n-gram, then combined as
/// `(1 + β²)·P·R / (β²·P + R)`. Two empty strings score 1, exactly one
/// empty string scores 0.
pub fn chrf_score(hypothesis: &str, reference: &str, config: &ChrfConfig) -> f64 {
    let prep = |s: &str| -> Vec<char> {
        if config.strip_whitespace {
            s.chars().filter(|c| !c.is_whitespace()).collect()
        } else {
            s.chars().collect()
        }
    };
    let hyp = prep(hypothesis);
    let reference = prep(reference);
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut orders = 0usize;
    for n in 1..=config.max_n {
        let ref_total = reference.len().saturating_sub(n - 1);
        if ref_total == 0 {
            continue;
        }
        let hyp_total = hyp.len().saturating_sub(n - 1);
        orders += 1;
        if hyp_total == 0 {
            continue;
        }
        let hyp_counts = ngram_counts(&hyp, n);
        let matched: u32 = ngram_counts(&reference, n)
            .iter()
            .map(|(gram, &rc)| rc.min(hyp_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        precision += f64::from(matched) / hyp_total as f64;
        recall += f64::from(matched) / ref_total as f64;
    }
    if orders == 0 {
        return 0.0;
    }
    precision /= orders as f64;
    recall /= orders as f64;
    let beta2 = config.beta * config.beta;
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

/// Parses `id\tscore` lines. An `id\tscore` header line is optional.
fn parse_score_lines<R: BufRead>(
    reader: R,
    protocol: bool,
) -> Result<HashMap<String, f64>, ScorerError> {
    let mut scores = HashMap::new();
    for item in read_lines(reader) {
        let (line, text) = match item {
            Ok(v) => v,
            Err(CorpusError::Row { line, message }) => {
                return Err(ScorerError::Protocol { line, message })
            }
            Err(e) => return Err(e.into()),
        };
        if text.is_empty() || text.starts_with('#') || (scores.is_empty() && text == "id\tscore") {
            continue;
        }
        let Some((id, score)) = text.split_once('\t').filter(|(_, s)| !s.contains('\t')) else {
            let message = format!("expected `id<TAB>score`, got `{text}`");
            return Err(if protocol {
                ScorerError::Protocol { line, message }
            } else {
                CorpusError::Row { line, message }.into()
            });
        };
        let value = match score.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ if protocol => {
                return Err(ScorerError::Protocol {
                    line,
                    message: format!("score `{score}` is not a finite number"),
                })
            }
            _ => {
                return Err(ScorerError::Value {
                    line,
                    text: score.to_string(),
                })
            }
        };
        if scores.insert(id.to_string(), value).is_some() {
            return Err(ScorerError::DuplicateId {
                line,
                id: id.to_string(),
            });
        }
    }
    Ok(scores)
}

/// Reads a two-column `id\tscore` file without a corpus, sorted by id.
pub fn read_scores<R: BufRead>(reader: R) -> Result<Vec<(String, f64)>, ScorerError> {
    let mut scores: Vec<_> = parse_score_lines(reader, false)?.into_iter().collect();
    scores.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(scores)
}

/// Reads a two-column `id\tscore` file and aligns it to the corpus.
pub fn load_external_scores<R: BufRead>(
    reader: R,
    corpus: &Corpus,
    scorer_name: &str,
) -> Result<ScoreVector, ScorerError> {
    let scores = parse_score_lines(reader, false)?;
    ScoreVector::aligned(scorer_name, (0.0, 1.0), corpus, scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScorer {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalScorer {
    /// A scorer whose timeout comes from the environment, or the default.
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Result<Self, ScorerError> {
        let timeout = match std::env::var(TIMEOUT_ENV) {
            Ok(v) => Duration::from_secs(v.trim().parse().map_err(|_| {
                ScorerError::InvalidConfig(format!("{TIMEOUT_ENV}=`{v}` is not a number of seconds"))
            })?),
            Err(_) => DEFAULT_TIMEOUT,
        };
        Ok(ExternalScorer {
            program: program.into(),
            args,
            timeout,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Serializes the scorer input stream for `corpus`.
pub fn write_protocol_input<W: Write>(corpus: &Corpus, mut w: W) -> Result<(), CorpusError> {
    writeln!(w, "{PROTOCOL_HEADER}")?;
    for seg in corpus {
        let reference = seg.reference.as_deref().unwrap_or("");
        for (field, value) in [
            ("id", seg.id.as_str()),
            ("src", &seg.source),
            ("mt", &seg.hypothesis),
            ("ref", reference),
        ] {
            check_field(&seg.id, field, value)?;
        }
        writeln!(w, "{}\t{}\t{}\t{}", seg.id, seg.source, seg.hypothesis, reference)?;
    }
    w.flush()?;
    Ok(())
}

/// Pipes the corpus through an external scorer process.
pub fn run_external_scorer(scorer: &ExternalScorer, corpus: &Corpus) -> Result<ScoreVector, ScorerError> {
    let mut input = Vec::new();
    write_protocol_input(corpus, &mut input)?;

    let command = scorer.display();
    let mut child = Command::new(&scorer.program)
        .args(&scorer.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ScorerError::Launch {
            command: command.clone(),
            source,
        })?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    // a child that exits without reading everything closes the pipe; that
    // surfaces through its exit status, not as a write error here
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&input);
    });
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + scorer.timeout;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| ScorerError::Launch {
            command: command.clone(),
            source: e,
        })? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ScorerError::Timeout {
                command,
                seconds: scorer.timeout.as_secs(),
            });
        }
        thread::sleep(Duration::from_millis(5));
    };
    let _ = writer.join();
    let output = out_reader
        .join()
        .expect("stdout reader panicked")
        .map_err(CorpusError::Io)?;
    let diagnostics = String::from_utf8_lossy(&err_reader.join().expect("stderr reader panicked"))
        .trim()
        .to_string();
    if !status.success() {
        return Err(ScorerError::Failed {
            command,
            status: status.to_string(),
            stderr: diagnostics,
        });
    }
    let scores = parse_score_lines(&output[..], true)?;
    ScoreVector::aligned(scorer.program.clone(), (0.0, 1.0), corpus, scores)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Chrf(ChrfConfig),
    External(ExternalScorer),
}

impl Scorer {
    pub fn name(&self) -> String {
        match self {
            Scorer::Chrf(c) => format!("chrf(n={},beta={})", c.max_n, c.beta),
            Scorer::External(e) => e.display(),
        }
    }
}

fn chrf_segment(seg: &AnnotatedSegment, config: &ChrfConfig) -> Result<f64, ScorerError> {
    let reference = seg
        .reference
        .as_deref()
        .ok_or_else(|| ScorerError::MissingReference(seg.id.clone()))?;
    Ok(chrf_score(&seg.hypothesis, reference, config))
}

/// Scores every segment. Built-in scoring runs on the current rayon pool;
/// results are collected in corpus order, so the thread count never
/// changes the output.
pub fn score_corpus(corpus: &Corpus, scorer: &Scorer) -> Result<ScoreVector, ScorerError> {
    match scorer {
        Scorer::Chrf(config) => {
            if config.max_n == 0 || !(config.beta > 0.0 && config.beta.is_finite()) {
                return Err(ScorerError::InvalidConfig(format!(
                    "chrF needs max_n >= 1 and beta > 0, got max_n={} beta={}",
                    config.max_n, config.beta
                )));
            }
            let scores: Vec<f64> = corpus
                .segments()
                .par_iter()
                .map(|seg| chrf_segment(seg, config))
                .collect::<Result<_, _>>()?;
            let mut out = ScoreVector::new(scorer.name(), (0.0, 1.0));
            for (seg, v) in corpus.iter().zip(scores) {
                out.entries.insert(seg.id.clone(), v);
            }
            Ok(out)
        }
        Scorer::External(ext) => run_external_scorer(ext, corpus),
    }
}
