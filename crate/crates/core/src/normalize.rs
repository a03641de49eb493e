//! Min-max normalization of heterogeneous human score scales onto [0, 1].
//!
//! Bounds are fit empirically, so MQM's unbounded lower end is replaced by
//! the smallest observed score. Values outside the fitted range (a test set
//! normalized with train bounds, say) are clamped after the formula.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_lines, Corpus, CorpusError, Scheme};

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("cannot fit bounds: group {0} has no scores")]
    EmptyGroup(BoundsKey),
    #[error("degenerate scale for {key}: min = max = {value}")]
    Degenerate { key: BoundsKey, value: f64 },
    #[error("no bounds for {0}")]
    MissingBounds(BoundsKey),
    #[error("invalid bounds for {key}: min {min} > max {max}")]
    InvalidBounds { key: BoundsKey, min: f64, max: f64 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BoundsKey {
    pub scheme: Scheme,
    pub lang_pair: String,
}

impl BoundsKey {
    pub fn new(scheme: Scheme, lang_pair: impl Into<String>) -> Self {
        BoundsKey {
            scheme,
            lang_pair: lang_pair.into(),
        }
    }
}

impl fmt::Display for BoundsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.scheme, self.lang_pair)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBounds {
    pub scheme: Scheme,
    pub lang_pair: String,
    pub min: f64,
    pub max: f64,
    pub n_observed: usize,
}

impl ScaleBounds {
    pub fn key(&self) -> BoundsKey {
        BoundsKey::new(self.scheme, self.lang_pair.clone())
    }

    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

pub type BoundsMap = BTreeMap<BoundsKey, ScaleBounds>;

/// How scores are pooled when fitting bounds. Whatever the pooling, the
/// resulting map is keyed by (scheme, lang_pair).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    #[default]
    SchemeLangPair,
    Scheme,
    Global,
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scheme-lang-pair" => Ok(Grouping::SchemeLangPair),
            "scheme" => Ok(Grouping::Scheme),
            "global" => Ok(Grouping::Global),
            _ => Err(format!("unknown normalization grouping `{s}`")),
        }
    }
}

/// What to do with a group whose min equals its max.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneratePolicy {
    #[default]
    Error,
    /// Map every score of the group to 0.5.
    Constant,
}

impl FromStr for DegeneratePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(DegeneratePolicy::Error),
            "constant" => Ok(DegeneratePolicy::Constant),
            _ => Err(format!("unknown degenerate policy `{s}`")),
        }
    }
}

fn pool_key(grouping: Grouping, key: &BoundsKey) -> (Option<Scheme>, Option<String>) {
    match grouping {
        Grouping::SchemeLangPair => (Some(key.scheme), Some(key.lang_pair.clone())),
        Grouping::Scheme => (Some(key.scheme), None),
        Grouping::Global => (None, None),
    }
}

/// Fits empirical bounds for every (scheme, lang_pair) present in the corpus.
pub fn fit_bounds(corpus: &Corpus, grouping: Grouping) -> BoundsMap {
    let keys: Vec<BoundsKey> = corpus
        .iter()
        .map(|s| BoundsKey::new(s.scheme, s.lang_pair.clone()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    // every key comes from an observed segment, so no pool is empty
    fit_bounds_for(corpus, grouping, &keys).expect("observed groups are non-empty")
}

type PoolKey = (Option<Scheme>, Option<String>);

/// Fits bounds for the selected (scheme, lang_pair) keys only.
pub fn fit_bounds_for(
    corpus: &Corpus,
    grouping: Grouping,
    keys: &[BoundsKey],
) -> Result<BoundsMap, NormalizeError> {
    // (scheme, lang_pair) pool -> (min, max, n)
    let mut pools: BTreeMap<PoolKey, (f64, f64, usize)> = BTreeMap::new();
    for seg in corpus {
        let pk = pool_key(grouping, &BoundsKey::new(seg.scheme, seg.lang_pair.clone()));
        let entry = pools.entry(pk).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
        entry.0 = entry.0.min(seg.raw_score);
        entry.1 = entry.1.max(seg.raw_score);
        entry.2 += 1;
    }
    let mut out = BoundsMap::new();
    for key in keys {
        let &(min, max, n) = pools
            .get(&pool_key(grouping, key))
            .ok_or_else(|| NormalizeError::EmptyGroup(key.clone()))?;
        out.insert(
            key.clone(),
            ScaleBounds {
                scheme: key.scheme,
                lang_pair: key.lang_pair.clone(),
                min,
                max,
                n_observed: n,
            },
        );
    }
    Ok(out)
}

/// `(x - min) / (max - min)`, clamped into [0, 1].
pub fn normalize_value(x: f64, bounds: &ScaleBounds) -> Result<f64, NormalizeError> {
    if bounds.min > bounds.max {
        return Err(NormalizeError::InvalidBounds {
            key: bounds.key(),
            min: bounds.min,
            max: bounds.max,
        });
    }
    if bounds.is_degenerate() {
        return Err(NormalizeError::Degenerate {
            key: bounds.key(),
            value: bounds.min,
        });
    }
    Ok(((x - bounds.min) / (bounds.max - bounds.min)).clamp(0.0, 1.0))
}

/// Returns a copy of the corpus with every norm_score populated. raw_score
/// is left untouched.
pub fn normalize_corpus(
    corpus: &Corpus,
    bounds: &BoundsMap,
    policy: DegeneratePolicy,
) -> Result<Corpus, NormalizeError> {
    let mut segments = Vec::with_capacity(corpus.len());
    for seg in corpus {
        let key = BoundsKey::new(seg.scheme, seg.lang_pair.clone());
        let b = bounds
            .get(&key)
            .ok_or_else(|| NormalizeError::MissingBounds(key.clone()))?;
        let norm = match (normalize_value(seg.raw_score, b), policy) {
            (Ok(v), _) => v,
            (Err(NormalizeError::Degenerate { .. }), DegeneratePolicy::Constant) => 0.5,
            (Err(e), _) => return Err(e),
        };
        let mut seg = seg.clone();
        seg.norm_score = Some(norm);
        segments.push(seg);
    }
    Ok(Corpus::new(segments)?)
}

pub const BOUNDS_HEADER: &str = "scheme\tlang_pair\tmin\tmax\tn";

pub fn write_bounds<W: Write>(bounds: &BoundsMap, mut writer: W) -> Result<(), CorpusError> {
    writeln!(writer, "{BOUNDS_HEADER}")?;
    for b in bounds.values() {
        crate::corpus::check_field(&b.lang_pair, "lang_pair", &b.lang_pair)?;
        writeln!(
            writer,
            "{}\t{}\t{}\t{}\t{}",
            b.scheme, b.lang_pair, b.min, b.max, b.n_observed
        )?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_bounds<R: BufRead>(reader: R) -> Result<BoundsMap, CorpusError> {
    let mut out = BoundsMap::new();
    let mut header_seen = false;
    for item in read_lines(reader) {
        let (line, text) = item?;
        if !header_seen {
            if text.starts_with('#') {
                continue;
            }
            if text != BOUNDS_HEADER {
                return Err(CorpusError::Schema {
                    column: BOUNDS_HEADER.replace('\t', ","),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        let err = |message: String| CorpusError::Row { line, message };
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let scheme: Scheme = fields[0].parse().map_err(err)?;
        let num = |s: &str| -> Result<f64, CorpusError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{s}` is not a finite number")))
        };
        let min = num(fields[2])?;
        let max = num(fields[3])?;
        if min > max {
            return Err(err(format!("min {min} exceeds max {max}")));
        }
        let n_observed = fields[4]
            .parse()
            .map_err(|_| err(format!("`{}` is not a count", fields[4])))?;
        let b = ScaleBounds {
            scheme,
            lang_pair: fields[1].to_string(),
            min,
            max,
            n_observed,
        };
        if out.insert(b.key(), b).is_some() {
            return Err(err("duplicate bounds entry".into()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedSegment, GroupKey};
    use proptest::prelude::*;

    fn corpus_of(scheme: Scheme, lang: &str, scores: &[f64]) -> Corpus {
        let key = GroupKey {
            lang_pair: lang.into(),
            scheme,
            system_id: "sys".into(),
            doc_id: "doc".into(),
        };
        Corpus::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| AnnotatedSegment::new(format!("{scheme}-{lang}-{i}"), &key, i as u64, "s", "t", s))
                .collect(),
        )
        .unwrap()
    }

    fn bounds(min: f64, max: f64) -> ScaleBounds {
        ScaleBounds {
            scheme: Scheme::Da,
            lang_pair: "en-cs".into(),
            min,
            max,
            n_observed: 2,
        }
    }

    #[test]
    fn fits_empirical_bounds() {
        let b = fit_bounds(&corpus_of(Scheme::Da, "en-cs", &[0.0, 50.0, 100.0]), Grouping::default());
        let da = &b[&BoundsKey::new(Scheme::Da, "en-cs")];
        assert_eq!((da.min, da.max, da.n_observed), (0.0, 100.0, 3));

        let b = fit_bounds(&corpus_of(Scheme::Mqm, "en-ru", &[-25.0, -5.0, 100.0]), Grouping::default());
        let mqm = &b[&BoundsKey::new(Scheme::Mqm, "en-ru")];
        assert_eq!((mqm.min, mqm.max), (-25.0, 100.0));

        let b = fit_bounds(&corpus_of(Scheme::Sqm, "en-ja", &[7.0, 7.0, 7.0]), Grouping::default());
        let sqm = &b[&BoundsKey::new(Scheme::Sqm, "en-ja")];
        assert_eq!((sqm.min, sqm.max), (7.0, 7.0));
        assert!(sqm.is_degenerate());
    }

    #[test]
    fn selected_empty_group_errors() {
        let c = corpus_of(Scheme::Da, "en-cs", &[1.0, 2.0]);
        let res = fit_bounds_for(&c, Grouping::default(), &[BoundsKey::new(Scheme::Mqm, "en-cs")]);
        match res {
            Err(NormalizeError::EmptyGroup(k)) => assert_eq!(k.to_string(), "MQM/en-cs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn value_examples() {
        assert_eq!(normalize_value(50.0, &bounds(0.0, 100.0)).unwrap(), 0.5);
        assert_eq!(normalize_value(0.0, &bounds(0.0, 100.0)).unwrap(), 0.0);
        assert_eq!(normalize_value(100.0, &bounds(0.0, 100.0)).unwrap(), 1.0);
        let v = normalize_value(-5.0, &bounds(-25.0, 100.0)).unwrap();
        assert!((v - 0.16).abs() < 1e-15);
        assert_eq!(normalize_value(140.0, &bounds(0.0, 100.0)).unwrap(), 1.0);
        assert_eq!(normalize_value(-3.0, &bounds(0.0, 100.0)).unwrap(), 0.0);
        assert!(matches!(
            normalize_value(7.0, &bounds(7.0, 7.0)),
            Err(NormalizeError::Degenerate { .. })
        ));
    }

    #[test]
    fn corpus_per_scheme_and_policy() {
        let mixed = Corpus::concat([
            corpus_of(Scheme::Da, "en-cs", &[0.0, 25.0, 100.0]),
            corpus_of(Scheme::Sqm, "en-cs", &[1.0, 4.0, 6.0]),
        ])
        .unwrap();
        let b = fit_bounds(&mixed, Grouping::SchemeLangPair);
        let n = normalize_corpus(&mixed, &b, DegeneratePolicy::Error).unwrap();
        assert_eq!(n.get("DA-en-cs-1").unwrap().norm_score, Some(0.25));
        assert_eq!(n.get("SQM-en-cs-1").unwrap().norm_score, Some(0.6));
        assert_eq!(n.get("SQM-en-cs-1").unwrap().raw_score, 4.0);

        let global = fit_bounds(&mixed, Grouping::Global);
        let n = normalize_corpus(&mixed, &global, DegeneratePolicy::Error).unwrap();
        assert_eq!(n.get("SQM-en-cs-2").unwrap().norm_score, Some(0.06));

        let flat = corpus_of(Scheme::Da, "en-cs", &[3.0, 3.0]);
        let b = fit_bounds(&flat, Grouping::default());
        assert!(normalize_corpus(&flat, &b, DegeneratePolicy::Error).is_err());
        let n = normalize_corpus(&flat, &b, DegeneratePolicy::Constant).unwrap();
        assert!(n.iter().all(|s| s.norm_score == Some(0.5)));

        assert!(matches!(
            normalize_corpus(&mixed, &BoundsMap::new(), DegeneratePolicy::Error),
            Err(NormalizeError::MissingBounds(_))
        ));
    }

    #[test]
    fn all_max_scores_map_to_one() {
        let c = corpus_of(Scheme::Da, "en-cs", &[10.0, 100.0, 100.0]);
        let b = fit_bounds(&c, Grouping::default());
        let n = normalize_corpus(&c, &b, DegeneratePolicy::Error).unwrap();
        assert_eq!(n.get("DA-en-cs-1").unwrap().norm_score, Some(1.0));
        assert_eq!(n.get("DA-en-cs-2").unwrap().norm_score, Some(1.0));
    }

    #[test]
    fn bounds_tsv_roundtrip() {
        let c = Corpus::concat([
            corpus_of(Scheme::Mqm, "en-ru", &[-25.5, 100.0]),
            corpus_of(Scheme::Da, "en-cs", &[0.1, 99.0]),
        ])
        .unwrap();
        let b = fit_bounds(&c, Grouping::default());
        let mut buf = Vec::new();
        write_bounds(&b, &mut buf).unwrap();
        assert_eq!(read_bounds(&buf[..]).unwrap(), b);
        assert!(read_bounds(&b"scheme\tmin\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn renormalizing_is_idempotent(scores in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            prop_assume!(scores.iter().any(|&s| s != scores[0]));
            let c = corpus_of(Scheme::Da, "en-cs", &scores);
            let once = normalize_corpus(&c, &fit_bounds(&c, Grouping::default()), DegeneratePolicy::Error).unwrap();
            // feed normalized values back in as raw scores and refit
            let as_raw = Corpus::new(once.iter().map(|s| {
                let mut s = s.clone();
                s.raw_score = s.norm_score.unwrap();
                s
            }).collect()).unwrap();
            let twice = normalize_corpus(&as_raw, &fit_bounds(&as_raw, Grouping::default()), DegeneratePolicy::Error).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert_eq!(a.norm_score, b.norm_score);
            }
        }

        #[test]
        fn monotone(a in -100f64..200.0, b in -100f64..200.0) {
            let bd = bounds(-10.0, 150.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normalize_value(lo, &bd).unwrap() <= normalize_value(hi, &bd).unwrap());
        }
    }
}
