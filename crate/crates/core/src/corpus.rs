//! Annotated-segment data model and the TSV corpus format.
//!
//! A corpus file is UTF-8 TSV with a mandatory header row. Fields must not
//! contain tabs or line breaks; there is no quoting dialect. LF and CRLF are
//! both accepted on input, LF is always written. Lines starting with `#`
//! before the header are treated as a preamble and skipped, which is where
//! the CLI records the run fingerprint of an artifact.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("schema error: missing column `{column}`")]
    Schema { column: String },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("cannot serialize segment `{id}`: field `{field}` contains a tab or line break")]
    Serialization { id: String, field: &'static str },
    #[error("invalid column map: {0}")]
    ColumnMap(String),
}

/// Human annotation scheme a gold score was collected under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "MQM")]
    Mqm,
    #[serde(rename = "SQM")]
    Sqm,
    #[serde(rename = "ESA")]
    Esa,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Da, Scheme::Mqm, Scheme::Sqm, Scheme::Esa];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Da => "DA",
            Scheme::Mqm => "MQM",
            Scheme::Sqm => "SQM",
            Scheme::Esa => "ESA",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown annotation scheme `{s}`"))
    }
}

/// Identity of the run of segments that adjacency is defined within.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub lang_pair: String,
    pub scheme: Scheme,
    pub system_id: String,
    pub doc_id: String,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.lang_pair, self.scheme, self.system_id, self.doc_id
        )
    }
}

/// One scored (source, hypothesis, reference) unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSegment {
    pub id: String,
    pub lang_pair: String,
    pub scheme: Scheme,
    pub system_id: String,
    pub doc_id: String,
    pub seg_index: u64,
    pub source: String,
    pub hypothesis: String,
    pub reference: Option<String>,
    pub raw_score: f64,
    pub norm_score: Option<f64>,
    /// Number of original segments merged into this one; 1 for originals.
    pub span_size: u32,
    /// Character weight carried into span scoring. Equal to [`char_weight`]
    /// for originals and to the sum of member weights for spans, so nested
    /// spans score exactly like flat ones.
    pub weight: u64,
}

impl AnnotatedSegment {
    /// An original (span size 1) segment with no reference and no normalized score.
    pub fn new(
        id: impl Into<String>,
        key: &GroupKey,
        seg_index: u64,
        source: impl Into<String>,
        hypothesis: impl Into<String>,
        raw_score: f64,
    ) -> Self {
        let mut seg = AnnotatedSegment {
            id: id.into(),
            lang_pair: key.lang_pair.clone(),
            scheme: key.scheme,
            system_id: key.system_id.clone(),
            doc_id: key.doc_id.clone(),
            seg_index,
            source: source.into(),
            hypothesis: hypothesis.into(),
            reference: None,
            raw_score,
            norm_score: None,
            span_size: 1,
            weight: 0,
        };
        seg.weight = char_weight(&seg);
        seg
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        let reference = reference.into();
        self.reference = (!reference.is_empty()).then_some(reference);
        self
    }

    pub fn with_norm_score(mut self, norm: f64) -> Self {
        self.norm_score = Some(norm);
        self
    }

    pub fn key(&self) -> GroupKey {
        GroupKey {
            lang_pair: self.lang_pair.clone(),
            scheme: self.scheme,
            system_id: self.system_id.clone(),
            doc_id: self.doc_id.clone(),
        }
    }

    pub fn is_original(&self) -> bool {
        self.span_size == 1
    }
}

/// Which score column an operation reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreField {
    #[default]
    Raw,
    Normalized,
}

impl ScoreField {
    pub fn get(self, segment: &AnnotatedSegment) -> Option<f64> {
        match self {
            ScoreField::Raw => Some(segment.raw_score),
            ScoreField::Normalized => segment.norm_score,
        }
    }
}

impl FromStr for ScoreField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(ScoreField::Raw),
            "normalized" | "norm" => Ok(ScoreField::Normalized),
            _ => Err(format!("unknown score field `{s}` (expected raw or normalized)")),
        }
    }
}

/// Unicode scalar values in source plus hypothesis. The reference does not
/// count, and no normalization is applied.
pub fn char_weight(segment: &AnnotatedSegment) -> u64 {
    (segment.source.chars().count() + segment.hypothesis.chars().count()) as u64
}

/// Ordered, id-unique collection of segments with a per-group index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    segments: Vec<AnnotatedSegment>,
    by_id: HashMap<String, usize>,
    index: BTreeMap<GroupKey, Vec<usize>>,
}

impl Corpus {
    pub fn new(segments: Vec<AnnotatedSegment>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(segments.len());
        let mut segments = segments;
        for (pos, seg) in segments.iter_mut().enumerate() {
            if seg.id.is_empty() {
                return Err(CorpusError::Integrity(format!(
                    "segment at position {pos} has an empty id"
                )));
            }
            if seg.span_size == 0 {
                return Err(CorpusError::Integrity(format!(
                    "segment `{}` has span_size 0",
                    seg.id
                )));
            }
            if let Some(norm) = seg.norm_score {
                if !(0.0..=1.0).contains(&norm) {
                    return Err(CorpusError::Integrity(format!(
                        "segment `{}` has norm_score {norm} outside [0, 1]",
                        seg.id
                    )));
                }
            }
            if seg.reference.as_deref() == Some("") {
                seg.reference = None;
            }
            if by_id.insert(seg.id.clone(), pos).is_some() {
                return Err(CorpusError::Integrity(format!("duplicate segment id `{}`", seg.id)));
            }
        }
        let index = build_index(&segments);
        Ok(Corpus {
            segments,
            by_id,
            index,
        })
    }

    pub fn empty() -> Self {
        Corpus::default()
    }

    pub fn segments(&self) -> &[AnnotatedSegment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<AnnotatedSegment> {
        self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedSegment> {
        self.by_id.get(id).map(|&pos| &self.segments[pos])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Group keys in sorted order, each with positions sorted by
    /// (seg_index, span_size).
    pub fn index(&self) -> &BTreeMap<GroupKey, Vec<usize>> {
        &self.index
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AnnotatedSegment> {
        self.segments.iter()
    }

    /// Concatenates corpora in order, failing on ids that collide.
    pub fn concat(parts: impl IntoIterator<Item = Corpus>) -> Result<Corpus, CorpusError> {
        Corpus::new(parts.into_iter().flat_map(Corpus::into_segments).collect())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a AnnotatedSegment;
    type IntoIter = std::slice::Iter<'a, AnnotatedSegment>;

    fn into_iter(self) -> Self::IntoIter {
        self.segments.iter()
    }
}

fn build_index(segments: &[AnnotatedSegment]) -> BTreeMap<GroupKey, Vec<usize>> {
    let mut index: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (pos, seg) in segments.iter().enumerate() {
        index.entry(seg.key()).or_default().push(pos);
    }
    for positions in index.values_mut() {
        // stable: ties keep input order
        positions.sort_by_key(|&p| (segments[p].seg_index, segments[p].span_size));
    }
    index
}

/// One (lang_pair, scheme, system, doc) group sorted by seg_index.
#[derive(Debug, Clone)]
pub struct SegmentGroup<'a> {
    pub key: &'a GroupKey,
    pub segments: Vec<&'a AnnotatedSegment>,
}

/// Partitions the corpus into adjacency groups.
///
/// Spans share the seg_index of their first member, so uniqueness is
/// checked on (seg_index, span_size); for corpora of originals this is
/// plain seg_index uniqueness.
pub fn group_and_sort(corpus: &Corpus) -> Result<Vec<SegmentGroup<'_>>, CorpusError> {
    let mut groups = Vec::with_capacity(corpus.index.len());
    for (key, positions) in &corpus.index {
        let segments: Vec<&AnnotatedSegment> =
            positions.iter().map(|&p| &corpus.segments[p]).collect();
        if let Some(pair) = segments
            .windows(2)
            .find(|w| (w[0].seg_index, w[0].span_size) == (w[1].seg_index, w[1].span_size))
        {
            return Err(CorpusError::Integrity(format!(
                "duplicate seg_index {} in group {key}",
                pair[0].seg_index
            )));
        }
        groups.push(SegmentGroup { key, segments });
    }
    Ok(groups)
}

/// Header names for each segment field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub lang_pair: String,
    pub scheme: String,
    pub system: String,
    pub doc: String,
    pub seg_index: String,
    pub src: String,
    pub mt: String,
    pub reference: String,
    pub raw_score: String,
    pub norm_score: String,
    pub span_size: String,
    pub weight: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            lang_pair: "lang_pair".into(),
            scheme: "scheme".into(),
            system: "system".into(),
            doc: "doc".into(),
            seg_index: "seg_index".into(),
            src: "src".into(),
            mt: "mt".into(),
            reference: "ref".into(),
            raw_score: "raw_score".into(),
            norm_score: "norm_score".into(),
            span_size: "span_size".into(),
            weight: "weight".into(),
        }
    }
}

impl ColumnMap {
    /// Applies `field=Header` overrides separated by commas, e.g.
    /// `src=source,mt=target,raw_score=score`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, CorpusError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (field, header) = item
                .split_once('=')
                .ok_or_else(|| CorpusError::ColumnMap(format!("expected field=header, got `{item}`")))?;
            let slot = match field.trim() {
                "id" => &mut self.id,
                "lang_pair" => &mut self.lang_pair,
                "scheme" => &mut self.scheme,
                "system" => &mut self.system,
                "doc" => &mut self.doc,
                "seg_index" => &mut self.seg_index,
                "src" => &mut self.src,
                "mt" => &mut self.mt,
                "ref" => &mut self.reference,
                "raw_score" => &mut self.raw_score,
                "norm_score" => &mut self.norm_score,
                "span_size" => &mut self.span_size,
                "weight" => &mut self.weight,
                other => return Err(CorpusError::ColumnMap(format!("unknown field `{other}`"))),
            };
            *slot = header.trim().to_string();
        }
        Ok(self)
    }
}

struct Columns {
    id: usize,
    lang_pair: usize,
    scheme: usize,
    system: usize,
    doc: usize,
    seg_index: usize,
    src: usize,
    mt: usize,
    raw_score: usize,
    reference: Option<usize>,
    norm_score: Option<usize>,
    span_size: Option<usize>,
    weight: Option<usize>,
    width: usize,
}

impl Columns {
    fn resolve(header: &[&str], map: &ColumnMap) -> Result<Self, CorpusError> {
        let find = |name: &str| header.iter().position(|h| *h == name);
        let required = |name: &str| {
            find(name).ok_or_else(|| CorpusError::Schema {
                column: name.to_string(),
            })
        };
        Ok(Columns {
            id: required(&map.id)?,
            lang_pair: required(&map.lang_pair)?,
            scheme: required(&map.scheme)?,
            system: required(&map.system)?,
            doc: required(&map.doc)?,
            seg_index: required(&map.seg_index)?,
            src: required(&map.src)?,
            mt: required(&map.mt)?,
            raw_score: required(&map.raw_score)?,
            reference: find(&map.reference),
            norm_score: find(&map.norm_score),
            span_size: find(&map.span_size),
            weight: find(&map.weight),
            width: header.len(),
        })
    }
}

/// Reads lines, stripping the line terminator and mapping invalid UTF-8 to
/// a row error carrying the 1-based line number.
pub(crate) fn read_lines<R: BufRead>(
    mut reader: R,
) -> impl Iterator<Item = Result<(usize, String), CorpusError>> {
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    std::iter::from_fn(move || {
        buf.clear();
        line_no += 1;
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                if buf.last() == Some(&b'\n') {
                    buf.pop();
                    if buf.last() == Some(&b'\r') {
                        buf.pop();
                    }
                }
                Some(match String::from_utf8(std::mem::take(&mut buf)) {
                    Ok(s) => Ok((line_no, s)),
                    Err(_) => Err(CorpusError::Row {
                        line: line_no,
                        message: "invalid UTF-8".into(),
                    }),
                })
            }
            Err(e) => Some(Err(CorpusError::Io(e))),
        }
    })
}

fn row_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Row {
        line,
        message: message.into(),
    }
}

fn parse_finite(line: usize, column: &str, text: &str) -> Result<f64, CorpusError> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(row_err(line, format!("column `{column}`: `{text}` is not a finite number"))),
    }
}

/// Parses a TSV corpus. Empty input yields an empty corpus.
pub fn parse_tsv<R: BufRead>(reader: R, map: &ColumnMap) -> Result<Corpus, CorpusError> {
    let mut lines = read_lines(reader);
    let mut header_line = None;
    for item in lines.by_ref() {
        let (no, line) = item?;
        if line.starts_with('#') {
            continue;
        }
        header_line = Some((no, line));
        break;
    }
    let Some((_, header_line)) = header_line else {
        return Ok(Corpus::empty());
    };
    let header: Vec<&str> = header_line.split('\t').collect();
    let cols = Columns::resolve(&header, map)?;

    let mut segments = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for item in lines {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != cols.width {
            return Err(row_err(
                line,
                format!("expected {} fields, found {}", cols.width, fields.len()),
            ));
        }
        let id = fields[cols.id].to_string();
        if id.is_empty() {
            return Err(row_err(line, "empty id"));
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(row_err(line, format!("duplicate id `{id}` (first seen on line {first})")));
        }
        let scheme: Scheme = fields[cols.scheme].parse().map_err(|e: String| row_err(line, e))?;
        let seg_index: u64 = fields[cols.seg_index].trim().parse().map_err(|_| {
            row_err(
                line,
                format!("column `{}`: `{}` is not a non-negative integer", map.seg_index, fields[cols.seg_index]),
            )
        })?;
        let raw_score = parse_finite(line, &map.raw_score, fields[cols.raw_score])?;
        let norm_score = match cols.norm_score.map(|i| fields[i]) {
            None | Some("") => None,
            Some(text) => {
                let v = parse_finite(line, &map.norm_score, text)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(row_err(line, format!("norm_score {v} outside [0, 1]")));
                }
                Some(v)
            }
        };
        let span_size = match cols.span_size.map(|i| fields[i]) {
            None | Some("") => 1,
            Some(text) => match text.trim().parse::<u32>() {
                Ok(v) if v >= 1 => v,
                _ => return Err(row_err(line, format!("span_size `{text}` is not a positive integer"))),
            },
        };
        let reference = cols
            .reference
            .map(|i| fields[i])
            .filter(|r| !r.is_empty())
            .map(str::to_string);

        let mut seg = AnnotatedSegment {
            id,
            lang_pair: fields[cols.lang_pair].to_string(),
            scheme,
            system_id: fields[cols.system].to_string(),
            doc_id: fields[cols.doc].to_string(),
            seg_index,
            source: fields[cols.src].to_string(),
            hypothesis: fields[cols.mt].to_string(),
            reference,
            raw_score,
            norm_score,
            span_size,
            weight: 0,
        };
        let counted = char_weight(&seg);
        seg.weight = match cols.weight.map(|i| fields[i]) {
            None | Some("") => counted,
            Some(text) => {
                let w: u64 = text
                    .trim()
                    .parse()
                    .map_err(|_| row_err(line, format!("weight `{text}` is not a non-negative integer")))?;
                if span_size == 1 && w != counted {
                    return Err(row_err(
                        line,
                        format!("weight {w} of an original segment differs from its character count {counted}"),
                    ));
                }
                w
            }
        };
        segments.push(seg);
    }
    Corpus::new(segments)
}

pub const CANONICAL_HEADER: [&str; 13] = [
    "id",
    "lang_pair",
    "scheme",
    "system",
    "doc",
    "seg_index",
    "src",
    "mt",
    "ref",
    "raw_score",
    "norm_score",
    "span_size",
    "weight",
];

pub(crate) fn check_field(id: &str, field: &'static str, value: &str) -> Result<(), CorpusError> {
    if value.contains(['\t', '\n', '\r']) {
        Err(CorpusError::Serialization {
            id: id.to_string(),
            field,
        })
    } else {
        Ok(())
    }
}

/// Writes the corpus with the canonical header, in corpus order.
pub fn write_tsv<W: Write>(corpus: &Corpus, mut writer: W) -> Result<(), CorpusError> {
    writeln!(writer, "{}", CANONICAL_HEADER.join("\t"))?;
    for seg in corpus {
        check_field(&seg.id, "id", &seg.id)?;
        check_field(&seg.id, "lang_pair", &seg.lang_pair)?;
        check_field(&seg.id, "system", &seg.system_id)?;
        check_field(&seg.id, "doc", &seg.doc_id)?;
        check_field(&seg.id, "src", &seg.source)?;
        check_field(&seg.id, "mt", &seg.hypothesis)?;
        let reference = seg.reference.as_deref().unwrap_or("");
        check_field(&seg.id, "ref", reference)?;
        let norm = seg.norm_score.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            writer,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            seg.id,
            seg.lang_pair,
            seg.scheme,
            seg.system_id,
            seg.doc_id,
            seg.seg_index,
            seg.source,
            seg.hypothesis,
            reference,
            seg.raw_score,
            norm,
            seg.span_size,
            seg.weight,
        )?;
    }
    writer.flush()?;
    Ok(())
}
