//! Correlation of predicted and gold scores, ESA rescaling and score
//! histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSegment, Corpus, CorpusError, ScoreField};
use crate::scorers::ScoreVector;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: {0} has zero variance")]
    Undefined(String),
    #[error("group {group} has {systems} system(s); system-level correlation needs at least 2")]
    InsufficientSystems { group: String, systems: usize },
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("no prediction for segment `{0}`")]
    MissingPrediction(String),
    #[error("segment `{0}` has no normalized gold score")]
    MissingGold(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort(x.len()));
    }
    if let Some(&v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(v));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation. A constant input is an error rather than 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::Undefined("x".into()));
    }
    if syy == 0.0 {
        return Err(StatsError::Undefined("y".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pearson,
    Spearman,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Pearson, Metric::Spearman];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }

    pub fn compute(self, x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
        match self {
            Metric::Pearson => pearson(x, y),
            Metric::Spearman => spearman(x, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Segment,
    System,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Segment => "segment",
            Level::System => "system",
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "segment" => Ok(Level::Segment),
            "system" => Ok(Level::System),
            _ => Err(format!("unknown report level `{s}`")),
        }
    }
}

/// Segment field a segment-level report can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    LangPair,
    Scheme,
    System,
    Doc,
}

impl GroupField {
    fn value(self, seg: &AnnotatedSegment) -> String {
        match self {
            GroupField::LangPair => seg.lang_pair.clone(),
            GroupField::Scheme => seg.scheme.to_string(),
            GroupField::System => seg.system_id.clone(),
            GroupField::Doc => seg.doc_id.clone(),
        }
    }
}

impl FromStr for GroupField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lang_pair" => Ok(GroupField::LangPair),
            "scheme" => Ok(GroupField::Scheme),
            "system" => Ok(GroupField::System),
            "doc" => Ok(GroupField::Doc),
            _ => Err(format!("unknown grouping field `{s}`")),
        }
    }
}

pub const AVG_GROUP: &str = "avg.";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: String,
    pub metric: Metric,
    /// Absent for groups skipped as too small.
    pub coefficient: Option<f64>,
    pub n: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub level: Level,
    pub scorer_name: String,
    pub gold_field: ScoreField,
    pub rows: Vec<ReportRow>,
    pub histogram: Option<Histogram>,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn coefficient(&self, group: &str, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.metric == metric)
            .and_then(|r| r.coefficient)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        writeln!(w, "level\tgroup\tmetric\tcoefficient\tn\tnote")?;
        for row in &self.rows {
            crate::corpus::check_field(&row.group, "group", &row.group)?;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                self.level.as_str(),
                row.group,
                row.metric.as_str(),
                row.coefficient.map(|c| c.to_string()).unwrap_or_default(),
                row.n,
                row.note.as_deref().unwrap_or(""),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned table with one column per group and coefficients at three
    /// decimals; skipped groups print as `-`.
    pub fn render_table(&self) -> String {
        let mut groups: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !groups.contains(&row.group.as_str()) {
                groups.push(&row.group);
            }
        }
        let metrics: Vec<Metric> = Metric::ALL
            .into_iter()
            .filter(|m| self.rows.iter().any(|r| r.metric == *m))
            .collect();
        let cell = |g: &str, m: Metric| -> String {
            self.rows
                .iter()
                .find(|r| r.group == g && r.metric == m)
                .and_then(|r| r.coefficient)
                .map_or_else(|| "-".to_string(), |c| format!("{c:.3}"))
        };
        let first_width = metrics.iter().map(|m| m.as_str().len()).max().unwrap_or(0).max(6);
        let widths: Vec<usize> = groups.iter().map(|g| g.chars().count().max(6)).collect();

        let mut out = String::new();
        let _ = writeln!(out, "{} level, scorer {}", self.level.as_str(), self.scorer_name);
        let _ = write!(out, "{:<first_width$}", "metric");
        for (g, w) in groups.iter().zip(&widths) {
            let _ = write!(out, "  {g:>w$}");
        }
        out.push('\n');
        for m in metrics {
            let _ = write!(out, "{:<first_width$}", m.as_str());
            for (g, w) in groups.iter().zip(&widths) {
                let _ = write!(out, "  {:>w$}", cell(g, m));
            }
            out.push('\n');
        }
        out
    }
}

struct Observation<'a> {
    id: &'a str,
    gold: f64,
    pred: f64,
}

fn observations<'a>(
    pred: &ScoreVector,
    corpus: &'a Corpus,
    gold: ScoreField,
) -> Result<Vec<(&'a AnnotatedSegment, Observation<'a>)>, StatsError> {
    corpus
        .iter()
        .map(|seg| {
            let p = pred
                .get(&seg.id)
                .ok_or_else(|| StatsError::MissingPrediction(seg.id.clone()))?;
            let g = gold
                .get(seg)
                .ok_or_else(|| StatsError::MissingGold(seg.id.clone()))?;
            Ok((
                seg,
                Observation {
                    id: &seg.id,
                    gold: g,
                    pred: p,
                },
            ))
        })
        .collect()
}

fn correlate_group(
    group: &str,
    obs: &mut [Observation<'_>],
    rows: &mut Vec<ReportRow>,
) -> Result<(), StatsError> {
    // canonical order keeps sums independent of corpus order
    obs.sort_by(|a, b| a.id.cmp(b.id));
    let gold: Vec<f64> = obs.iter().map(|o| o.gold).collect();
    let pred: Vec<f64> = obs.iter().map(|o| o.pred).collect();
    for metric in Metric::ALL {
        if obs.len() < 2 {
            rows.push(ReportRow {
                group: group.to_string(),
                metric,
                coefficient: None,
                n: obs.len(),
                note: Some("skipped: fewer than 2 segments".into()),
            });
            continue;
        }
        let r = metric.compute(&pred, &gold).map_err(|e| match e {
            StatsError::Undefined(which) => StatsError::Undefined(format!(
                "{} scores of group {group}",
                if which == "x" { "predicted" } else { "gold" }
            )),
            other => other,
        })?;
        rows.push(ReportRow {
            group: group.to_string(),
            metric,
            coefficient: Some(r),
            n: obs.len(),
            note: None,
        });
    }
    Ok(())
}

fn push_average(rows: &mut Vec<ReportRow>) {
    for metric in Metric::ALL {
        let coefs: Vec<f64> = rows
            .iter()
            .filter(|r| r.metric == metric)
            .filter_map(|r| r.coefficient)
            .collect();
        if coefs.is_empty() {
            continue;
        }
        rows.push(ReportRow {
            group: AVG_GROUP.into(),
            metric,
            coefficient: Some(mean(&coefs)),
            n: coefs.len(),
            note: Some("unweighted mean over groups".into()),
        });
    }
}

/// Per-group segment-level Pearson and Spearman, plus an `avg.` row per
/// metric holding the unweighted mean of the group coefficients. An empty
/// `group_by` puts everything in one group named `all`.
pub fn segment_report(
    pred: &ScoreVector,
    corpus: &Corpus,
    group_by: &[GroupField],
    gold: ScoreField,
) -> Result<EvalReport, StatsError> {
    let mut groups: BTreeMap<Vec<String>, Vec<Observation>> = BTreeMap::new();
    for (seg, obs) in observations(pred, corpus, gold)? {
        let key = group_by.iter().map(|f| f.value(seg)).collect();
        groups.entry(key).or_default().push(obs);
    }
    let mut rows = Vec::new();
    for (key, mut obs) in groups {
        let label = if key.is_empty() { "all".to_string() } else { key.join("/") };
        correlate_group(&label, &mut obs, &mut rows)?;
    }
    push_average(&mut rows);
    Ok(EvalReport {
        level: Level::Segment,
        scorer_name: pred.scorer_name.clone(),
        gold_field: gold,
        rows,
        histogram: None,
        fingerprint: String::new(),
    })
}

/// group -> system -> (mean predicted, mean gold)
pub type SystemMeans = BTreeMap<String, BTreeMap<String, (f64, f64)>>;

/// Mean predicted and mean gold score for every system of every
/// (lang_pair, scheme) group. Values are summed in segment-id order.
pub fn system_means(
    pred: &ScoreVector,
    corpus: &Corpus,
    gold: ScoreField,
) -> Result<SystemMeans, StatsError> {
    let mut raw: BTreeMap<String, BTreeMap<String, Vec<Observation>>> = BTreeMap::new();
    for (seg, obs) in observations(pred, corpus, gold)? {
        raw.entry(format!("{}/{}", seg.lang_pair, seg.scheme))
            .or_default()
            .entry(seg.system_id.clone())
            .or_default()
            .push(obs);
    }
    Ok(raw
        .into_iter()
        .map(|(group, systems)| {
            let means = systems
                .into_iter()
                .map(|(system, mut obs)| {
                    obs.sort_by(|a, b| a.id.cmp(b.id));
                    let n = obs.len() as f64;
                    let p = obs.iter().map(|o| o.pred).sum::<f64>() / n;
                    let g = obs.iter().map(|o| o.gold).sum::<f64>() / n;
                    (system, (p, g))
                })
                .collect();
            (group, means)
        })
        .collect())
}

/// Correlation across per-system means within each (lang_pair, scheme).
pub fn system_report(pred: &ScoreVector, corpus: &Corpus, gold: ScoreField) -> Result<EvalReport, StatsError> {
    let mut rows = Vec::new();
    for (group, systems) in system_means(pred, corpus, gold)? {
        if systems.len() < 2 {
            return Err(StatsError::InsufficientSystems {
                group,
                systems: systems.len(),
            });
        }
        let p: Vec<f64> = systems.values().map(|v| v.0).collect();
        let g: Vec<f64> = systems.values().map(|v| v.1).collect();
        for metric in Metric::ALL {
            let r = metric.compute(&p, &g).map_err(|e| match e {
                StatsError::Undefined(which) => StatsError::Undefined(format!(
                    "{} system means of group {group}",
                    if which == "x" { "predicted" } else { "gold" }
                )),
                other => other,
            })?;
            rows.push(ReportRow {
                group: group.clone(),
                metric,
                coefficient: Some(r),
                n: systems.len(),
                note: None,
            });
        }
    }
    Ok(EvalReport {
        level: Level::System,
        scorer_name: pred.scorer_name.clone(),
        gold_field: gold,
        rows,
        histogram: None,
        fingerprint: String::new(),
    })
}

/// Maps a [0, 1] score onto the 0–100 ESA scale: clamp, scale by 100,
/// round half away from zero.
pub fn rescale_esa(score: f64) -> Result<u8, StatsError> {
    if !score.is_finite() {
        return Err(StatsError::NonFinite(score));
    }
    Ok((score.clamp(0.0, 1.0) * 100.0).round() as u8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<Bin>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        writeln!(w, "bin_lo\tbin_hi\tcount")?;
        for b in &self.bins {
            writeln!(w, "{}\t{}\t{}", b.lo, b.hi, b.count)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width histogram over `[lo, hi]`. Values outside the range land in
/// the nearest edge bin; the top edge belongs to the last bin.
pub fn histogram(scores: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram, StatsError> {
    let (lo, hi) = range;
    if bins == 0 {
        return Err(StatsError::InvalidArgument("histogram needs at least one bin".into()));
    }
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(StatsError::InvalidArgument(format!("histogram range ({lo}, {hi}) is empty")));
    }
    let mut counts = vec![0usize; bins];
    for &s in scores {
        if s.is_nan() {
            return Err(StatsError::NonFinite(s));
        }
        let pos = ((s - lo) / (hi - lo) * bins as f64).floor();
        let idx = if pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    let width = (hi - lo) / bins as f64;
    let edge = |i: usize| if i == bins { hi } else { lo + width * i as f64 };
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| Bin {
                lo: edge(i),
                hi: edge(i + 1),
                count,
            })
            .collect(),
    })
}
