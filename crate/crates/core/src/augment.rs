//! Long-span instances from adjacent segments.
//!
//! A span of k adjacent segments gets the character-weighted mean of its
//! members' scores, `Σ wᵢ·scoreᵢ / Σ wᵢ`, with `wᵢ` the member's carried
//! weight (source plus hypothesis scalars for originals). Windows slide with
//! a configurable stride inside one (lang_pair, scheme, system, doc) group
//! and never cross a gap in seg_index.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{group_and_sort, AnnotatedSegment, Corpus, CorpusError, ScoreField};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("scores and weights differ in length ({scores} vs {weights})")]
    LengthMismatch { scores: usize, weights: usize },
    #[error("cannot average an empty list of scores")]
    Empty,
    #[error("weights sum to zero")]
    ZeroWeight,
    #[error("a span needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("segments `{prev}` and `{next}` are not adjacent")]
    NotAdjacent { prev: String, next: String },
    #[error("segments `{first}` and `{other}` belong to different groups")]
    CrossGroup { first: String, other: String },
    #[error("segment `{0}` has no normalized score")]
    MissingNormScore(String),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub k_values: BTreeSet<usize>,
    pub stride: usize,
    pub separator: String,
    pub include_originals: bool,
    /// `Normalized` requires every member to carry a norm_score. With `Raw`
    /// the norm_score is still averaged whenever all members have one.
    pub score_field: ScoreField,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            k_values: [2, 3, 4, 5].into_iter().collect(),
            stride: 1,
            separator: " ".into(),
            include_originals: true,
            score_field: ScoreField::Raw,
        }
    }
}

impl AugmentConfig {
    /// Spans of at most two segments, for memory-bound training runs.
    pub fn training() -> Self {
        AugmentConfig {
            k_values: [2].into_iter().collect(),
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.stride == 0 {
            return Err(AugmentError::InvalidConfig("stride must be at least 1".into()));
        }
        if let Some(k) = self.k_values.iter().find(|&&k| k < 2) {
            return Err(AugmentError::InvalidConfig(format!("span width {k} is below 2")));
        }
        if self.separator.contains(['\t', '\n', '\r']) {
            return Err(AugmentError::InvalidConfig(
                "separator must not contain tabs or line breaks".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted mean of `scores`, clamped into `[min, max]` of the inputs so
/// rounding never leaves the members' range.
pub fn weighted_span_score(scores: &[f64], weights: &[u64]) -> Result<f64, AugmentError> {
    if scores.len() != weights.len() {
        return Err(AugmentError::LengthMismatch {
            scores: scores.len(),
            weights: weights.len(),
        });
    }
    if scores.is_empty() {
        return Err(AugmentError::Empty);
    }
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return Err(AugmentError::ZeroWeight);
    }
    let weighted: f64 = scores
        .iter()
        .zip(weights)
        .map(|(&s, &w)| w as f64 * s)
        .sum();
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    Ok((weighted / total as f64).clamp(lo, hi))
}

/// Merges an adjacent run of segments from one group into a single span.
pub fn concat_span(
    members: &[&AnnotatedSegment],
    config: &AugmentConfig,
) -> Result<AnnotatedSegment, AugmentError> {
    let [first, ..] = members else {
        return Err(AugmentError::TooFewMembers(0));
    };
    if members.len() < 2 {
        return Err(AugmentError::TooFewMembers(members.len()));
    }
    for pair in members.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        if next.lang_pair != first.lang_pair
            || next.scheme != first.scheme
            || next.system_id != first.system_id
            || next.doc_id != first.doc_id
        {
            return Err(AugmentError::CrossGroup {
                first: first.id.clone(),
                other: next.id.clone(),
            });
        }
        if next.seg_index != prev.seg_index + u64::from(prev.span_size) {
            return Err(AugmentError::NotAdjacent {
                prev: prev.id.clone(),
                next: next.id.clone(),
            });
        }
    }

    let weights: Vec<u64> = members.iter().map(|s| s.weight).collect();
    let raws: Vec<f64> = members.iter().map(|s| s.raw_score).collect();
    let raw_score = weighted_span_score(&raws, &weights)?;
    let norms: Option<Vec<f64>> = members.iter().map(|s| s.norm_score).collect();
    let norm_score = match norms {
        Some(norms) => Some(weighted_span_score(&norms, &weights)?),
        None if config.score_field == ScoreField::Normalized => {
            let missing = members.iter().find(|s| s.norm_score.is_none()).unwrap();
            return Err(AugmentError::MissingNormScore(missing.id.clone()));
        }
        None => None,
    };

    let join = |get: fn(&AnnotatedSegment) -> &str| -> String {
        members
            .iter()
            .map(|s| get(s))
            .collect::<Vec<_>>()
            .join(&config.separator)
    };
    let reference = members
        .iter()
        .all(|s| s.reference.is_some())
        .then(|| join(|s| s.reference.as_deref().unwrap_or_default()));
    let span_size: u32 = members.iter().map(|s| s.span_size).sum();

    Ok(AnnotatedSegment {
        id: format!("{}+{}", first.id, span_size),
        lang_pair: first.lang_pair.clone(),
        scheme: first.scheme,
        system_id: first.system_id.clone(),
        doc_id: first.doc_id.clone(),
        seg_index: first.seg_index,
        source: join(|s| &s.source),
        hypothesis: join(|s| &s.hypothesis),
        reference,
        raw_score,
        norm_score,
        span_size,
        weight: weights.iter().sum(),
    })
}

/// Number of windows of width `k` with the given stride over `n` items.
pub fn window_count(n: usize, k: usize, stride: usize) -> usize {
    if n < k {
        0
    } else {
        (n - k) / stride + 1
    }
}

/// Builds every configured span for every group.
///
/// Output order: groups in key order; within a group the input segments
/// (if `include_originals`) sorted by seg_index, then spans by width
/// ascending, then by window start. Windows are drawn from the group's
/// original segments only, over maximal runs of consecutive seg_index.
pub fn augment_corpus(corpus: &Corpus, config: &AugmentConfig) -> Result<Corpus, AugmentError> {
    config.validate()?;
    let mut out = Vec::new();
    for group in group_and_sort(corpus)? {
        if config.include_originals {
            out.extend(group.segments.iter().map(|&s| s.clone()));
        }
        let originals: Vec<&AnnotatedSegment> =
            group.segments.iter().copied().filter(|s| s.is_original()).collect();
        let runs: Vec<&[&AnnotatedSegment]> = originals
            .chunk_by(|a, b| b.seg_index == a.seg_index + 1)
            .collect();
        for &k in &config.k_values {
            for run in &runs {
                for start in (0..run.len().saturating_sub(k - 1)).step_by(config.stride) {
                    out.push(concat_span(&run[start..start + k], config)?);
                }
            }
        }
    }
    Ok(Corpus::new(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GroupKey, Scheme};
    use proptest::prelude::*;

    fn key(doc: &str) -> GroupKey {
        GroupKey {
            lang_pair: "en-ja".into(),
            scheme: Scheme::Da,
            system_id: "sys".into(),
            doc_id: doc.into(),
        }
    }

    fn doc(n: usize) -> Corpus {
        let k = key("d");
        Corpus::new(
            (0..n)
                .map(|i| {
                    AnnotatedSegment::new(format!("s{i}"), &k, i as u64, "src", "mt", i as f64)
                        .with_reference("ref")
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn weighted_examples() {
        assert!((weighted_span_score(&[0.8, 0.6], &[10, 30]).unwrap() - 0.65).abs() < 1e-15);
        assert!((weighted_span_score(&[0.2, 0.8], &[7, 7]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(weighted_span_score(&[0.9], &[42]).unwrap(), 0.9);
        assert!(matches!(weighted_span_score(&[0.1, 0.2], &[0, 0]), Err(AugmentError::ZeroWeight)));
        assert!(matches!(
            weighted_span_score(&[0.1, 0.2], &[1]),
            Err(AugmentError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn concat_example() {
        let k = key("d");
        let a = AnnotatedSegment::new("a", &k, 0, "ab", "cde", 0.8).with_reference("r1");
        let b = AnnotatedSegment::new("b", &k, 1, "fghijklmnopqrstuvwxyzabcd", "efghi", 0.6)
            .with_reference("r2");
        assert_eq!((a.weight, b.weight), (5, 30));
        let span = concat_span(&[&a, &b], &AugmentConfig::default()).unwrap();
        // (5 * 0.8 + 30 * 0.6) / 35
        assert!((span.raw_score - 22.0 / 35.0).abs() < 1e-15);
        assert_eq!(span.hypothesis, "cde efghi");
        assert_eq!(span.source, "ab fghijklmnopqrstuvwxyzabcd");
        assert_eq!(span.reference.as_deref(), Some("r1 r2"));
        assert_eq!(span.id, "a+2");
        assert_eq!((span.seg_index, span.span_size, span.weight), (0, 2, 35));
    }

    #[test]
    fn concat_two_weighted() {
        // weights 10 and 30 with scores 0.8 and 0.6 give 0.65
        let k = key("d");
        let a = AnnotatedSegment::new("a", &k, 0, "01234", "56789", 0.8);
        let b = AnnotatedSegment::new("b", &k, 1, "x".repeat(15), "y".repeat(15), 0.6);
        let span = concat_span(&[&a, &b], &AugmentConfig::default()).unwrap();
        assert!((span.raw_score - 0.65).abs() < 1e-15);
    }

    #[test]
    fn identical_members_keep_score() {
        let k = key("d");
        let segs: Vec<_> = (0..5)
            .map(|i| AnnotatedSegment::new(format!("s{i}"), &k, i, "same", "text", 0.37))
            .collect();
        let refs: Vec<&AnnotatedSegment> = segs.iter().collect();
        assert_eq!(concat_span(&refs, &AugmentConfig::default()).unwrap().raw_score, 0.37);
    }

    #[test]
    fn missing_reference_drops_span_reference() {
        let k = key("d");
        let a = AnnotatedSegment::new("a", &k, 0, "x", "y", 1.0).with_reference("r");
        let b = AnnotatedSegment::new("b", &k, 1, "x", "y", 1.0);
        assert_eq!(concat_span(&[&a, &b], &AugmentConfig::default()).unwrap().reference, None);
    }

    #[test]
    fn adjacency_and_group_errors() {
        let k = key("d");
        let a = AnnotatedSegment::new("a", &k, 0, "x", "y", 1.0);
        let c = AnnotatedSegment::new("c", &k, 2, "x", "y", 1.0);
        let other = AnnotatedSegment::new("o", &key("e"), 1, "x", "y", 1.0);
        let cfg = AugmentConfig::default();
        assert!(matches!(concat_span(&[&a, &c], &cfg), Err(AugmentError::NotAdjacent { .. })));
        assert!(matches!(concat_span(&[&a, &other], &cfg), Err(AugmentError::CrossGroup { .. })));
        assert!(matches!(concat_span(&[&a], &cfg), Err(AugmentError::TooFewMembers(1))));
    }

    #[test]
    fn normalized_field_requires_norm() {
        let k = key("d");
        let a = AnnotatedSegment::new("a", &k, 0, "x", "y", 1.0).with_norm_score(0.2);
        let b = AnnotatedSegment::new("b", &k, 1, "x", "y", 1.0);
        let cfg = AugmentConfig {
            score_field: ScoreField::Normalized,
            ..AugmentConfig::default()
        };
        assert!(matches!(concat_span(&[&a, &b], &cfg), Err(AugmentError::MissingNormScore(id)) if id == "b"));
        let raw = concat_span(&[&a, &b], &AugmentConfig::default()).unwrap();
        assert_eq!(raw.norm_score, None);
    }

    #[test]
    fn counts() {
        let cfg = |ks: &[usize], originals| AugmentConfig {
            k_values: ks.iter().copied().collect(),
            include_originals: originals,
            ..AugmentConfig::default()
        };
        assert_eq!(augment_corpus(&doc(10), &cfg(&[2], false)).unwrap().len(), 9);
        assert_eq!(augment_corpus(&doc(3), &cfg(&[5], false)).unwrap().len(), 0);
        let big = augment_corpus(&doc(100), &AugmentConfig::default()).unwrap();
        assert_eq!(big.len(), 490);
        let strided = AugmentConfig {
            stride: 3,
            ..cfg(&[2], false)
        };
        // starts 0, 3, 6 over 10 items: ceil(9 / 3)
        assert_eq!(augment_corpus(&doc(10), &strided).unwrap().len(), 3);
        assert_eq!(window_count(10, 2, 3), 3);
    }

    #[test]
    fn output_order() {
        let out = augment_corpus(&doc(4), &AugmentConfig::default()).unwrap();
        let ids: Vec<_> = out.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(
            ids,
            ["s0", "s1", "s2", "s3", "s0+2", "s1+2", "s2+2", "s0+3", "s1+3", "s0+4"]
        );
    }

    #[test]
    fn gaps_split_runs() {
        let k = key("d");
        let c = Corpus::new(
            [0u64, 1, 2, 5, 6]
                .iter()
                .map(|&i| AnnotatedSegment::new(format!("s{i}"), &k, i, "a", "b", 1.0))
                .collect(),
        )
        .unwrap();
        let two = AugmentConfig {
            k_values: [2].into_iter().collect(),
            include_originals: false,
            ..AugmentConfig::default()
        };
        let ids: Vec<_> = augment_corpus(&c, &two).unwrap().iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids, ["s0+2", "s1+2", "s5+2"]);
    }

    #[test]
    fn invalid_config() {
        let bad = AugmentConfig {
            k_values: [1, 2].into_iter().collect(),
            ..AugmentConfig::default()
        };
        assert!(augment_corpus(&doc(3), &bad).is_err());
        let bad = AugmentConfig {
            stride: 0,
            ..AugmentConfig::default()
        };
        assert!(augment_corpus(&doc(3), &bad).is_err());
    }

    proptest! {
        #[test]
        fn scale_and_permutation_invariant(
            items in proptest::collection::vec((-100f64..100.0, 1u64..1000), 1..6),
            factor in 1u64..50,
            rotate in 0usize..6,
        ) {
            let (scores, weights): (Vec<f64>, Vec<u64>) = items.iter().copied().unzip();
            let base = weighted_span_score(&scores, &weights).unwrap();
            let scaled: Vec<u64> = weights.iter().map(|w| w * factor).collect();
            let s = weighted_span_score(&scores, &scaled).unwrap();
            prop_assert!((s - base).abs() <= 1e-12 * base.abs().max(1.0));

            let mut perm = items.clone();
            let r = rotate % perm.len();
            perm.rotate_left(r);
            let (ps, pw): (Vec<f64>, Vec<u64>) = perm.into_iter().unzip();
            let p = weighted_span_score(&ps, &pw).unwrap();
            prop_assert!((p - base).abs() <= 1e-12 * base.abs().max(1.0));
        }

        #[test]
        fn spans_never_cross_groups(sizes in proptest::collection::vec(1usize..8, 1..5)) {
            let mut segs = Vec::new();
            for (d, &n) in sizes.iter().enumerate() {
                let k = key(&format!("doc{d}"));
                for i in 0..n {
                    segs.push(AnnotatedSegment::new(format!("d{d}s{i}"), &k, i as u64, "ab", "c", i as f64));
                }
            }
            let corpus = Corpus::new(segs).unwrap();
            let out = augment_corpus(&corpus, &AugmentConfig::default()).unwrap();
            let mut expected = 0;
            for &n in &sizes {
                expected += n;
                for k in 2..=5 {
                    expected += window_count(n, k, 1);
                }
            }
            prop_assert_eq!(out.len(), expected);
            for span in out.iter().filter(|s| !s.is_original()) {
                let prefix = span.id.split('s').next().unwrap();
                prop_assert_eq!(format!("d{}", &span.doc_id[3..]), prefix);
            }
        }
    }
}
