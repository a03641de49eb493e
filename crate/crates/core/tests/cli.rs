use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use longspan::corpus::{parse_tsv, write_tsv, AnnotatedSegment, ColumnMap, Corpus, GroupKey, Scheme};

fn longspan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longspan")).args(args).output().unwrap()
}

fn one_doc(n: u64) -> Corpus {
    let key = GroupKey {
        lang_pair: "en-cs".into(),
        scheme: Scheme::Da,
        system_id: "sys".into(),
        doc_id: "doc".into(),
    };
    Corpus::new(
        (0..n)
            .map(|i| {
                AnnotatedSegment::new(format!("s{i}"), &key, i, "source", format!("hyp {i}"), i as f64)
                    .with_reference(format!("hyp {i}"))
            })
            .collect(),
    )
    .unwrap()
}

fn save(path: &Path, corpus: &Corpus) {
    let mut buf = Vec::new();
    write_tsv(corpus, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

fn data_rows(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    parse_tsv(text.as_bytes(), &ColumnMap::default()).unwrap().len()
}

#[test]
fn augment_hundred_segments() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    save(&input, &one_doc(100));
    let out = dir.path().join("out");
    let run = longspan(&["--out-dir", out.to_str().unwrap(), "augment", "--input", input.to_str().unwrap(), "--score-field", "raw"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(data_rows(&out.join("augmented.tsv")), 490);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.augment.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "augment");
    assert_eq!(manifest["artifacts"][0]["path"], "augmented.tsv");
}

#[test]
fn identical_predictions_correlate_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    let mut segs = Vec::new();
    for s in 0..3u64 {
        let key = GroupKey {
            lang_pair: "en-ru".into(),
            scheme: Scheme::Mqm,
            system_id: format!("sys{s}"),
            doc_id: "doc".into(),
        };
        for i in 0..5u64 {
            let raw = -((s * 5 + i * i) as f64);
            segs.push(AnnotatedSegment::new(format!("{s}-{i}"), &key, i, "x", "y", raw));
        }
    }
    let corpus = Corpus::new(segs).unwrap();
    save(&input, &corpus);
    let mut preds = String::new();
    for seg in corpus.iter() {
        preds.push_str(&format!("{}\t{}\n", seg.id, seg.raw_score));
    }
    let pred_path = dir.path().join("pred.tsv");
    fs::write(&pred_path, preds).unwrap();
    let out = dir.path().join("out");
    let run = longspan(&[
        "--out-dir",
        out.to_str().unwrap(),
        "correlate",
        "--input",
        input.to_str().unwrap(),
        "--predictions",
        pred_path.to_str().unwrap(),
        "--gold-field",
        "raw",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = String::from_utf8(run.stdout).unwrap();
    let numbers: Vec<&str> = table
        .lines()
        .filter(|l| l.starts_with("pearson") || l.starts_with("spearman"))
        .flat_map(|l| l.split_whitespace().skip(1))
        .collect();
    assert!(!numbers.is_empty());
    assert!(numbers.iter().all(|v| *v == "1.000"), "{table}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(longspan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(longspan(&[]).status.code(), Some(2));
    assert_eq!(longspan(&["split", "--ratios", "0.5,0.5,0.5", "--input", "missing.tsv"]).status.code(), Some(1));
}

#[test]
fn schema_and_integrity_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "id\tsrc\n1\tx\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(longspan(&["--out-dir", out.to_str().unwrap(), "ingest", "--input", bad.to_str().unwrap()]).status.code(), Some(2));
    let dup = dir.path().join("dup.tsv");
    let mut text = fs::read_to_string({
        let p = dir.path().join("ok.tsv");
        save(&p, &one_doc(2));
        p
    })
    .unwrap();
    let last = text.lines().last().unwrap().replacen("s1", "s0", 1);
    text.push_str(&last);
    text.push('\n');
    fs::write(&dup, text).unwrap();
    assert_eq!(longspan(&["--out-dir", out.to_str().unwrap(), "ingest", "--input", dup.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn degenerate_normalization_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let key = GroupKey {
        lang_pair: "en-ja".into(),
        scheme: Scheme::Sqm,
        system_id: "s".into(),
        doc_id: "d".into(),
    };
    let flat = Corpus::new((0..3).map(|i| AnnotatedSegment::new(format!("f{i}"), &key, i, "a", "b", 4.0)).collect()).unwrap();
    let input = dir.path().join("flat.tsv");
    save(&input, &flat);
    let out = dir.path().join("out");
    let args = ["--out-dir", out.to_str().unwrap(), "normalize", "--input", input.to_str().unwrap()];
    assert_eq!(longspan(&args).status.code(), Some(5));
    let mut constant = args.to_vec();
    constant.extend(["--degenerate", "constant"]);
    assert!(longspan(&constant).status.success());
    let text = fs::read_to_string(out.join("normalized.tsv")).unwrap();
    let c = parse_tsv(text.as_bytes(), &ColumnMap::default()).unwrap();
    assert!(c.iter().all(|s| s.norm_score == Some(0.5)));
}

#[test]
fn refuses_to_overwrite_other_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    save(&input, &one_doc(40));
    let out = dir.path().join("out");
    let split = |seed: &str, force: bool| {
        let mut args = vec!["--out-dir", out.to_str().unwrap(), "split", "--input", input.to_str().unwrap(), "--seed", seed];
        if force {
            args.push("--force");
        }
        longspan(&args)
    };
    assert!(split("1", false).status.success());
    let first = fs::read(out.join("split.test.tsv")).unwrap();
    assert!(split("1", false).status.success());
    assert_eq!(fs::read(out.join("split.test.tsv")).unwrap(), first);
    let refused = split("2", false);
    assert_eq!(refused.status.code(), Some(2));
    assert_eq!(fs::read(out.join("split.test.tsv")).unwrap(), first);
    assert!(split("2", true).status.success());
    assert_eq!(data_rows(&out.join("split.test.tsv")), 3);
}

#[test]
fn hist_over_esa_points() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.tsv");
    fs::write(&scores, "id\tscore\na\t0.004\nb\t0.873\nc\t1.3\nd\t0.5\n").unwrap();
    let out = dir.path().join("out");
    let run = longspan(&["--out-dir", out.to_str().unwrap(), "hist", "--predictions", scores.to_str().unwrap(), "--esa", "--bins", "10"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(out.join("hist.tsv")).unwrap();
    let counts: Vec<usize> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts, [1, 0, 0, 0, 0, 1, 0, 0, 1, 1]);
}
