//! The bundled corpus and toy task load cleanly and decompose fully.

use std::path::PathBuf;

use chgraph::chg::GraphVariant;
use chgraph::dataset::load_csv;
use chgraph::preprocess::preprocess;
use chgraph::vocab::build_vocab;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[test]
fn corpus_parses_without_skips() {
    let ds = load_csv(&data("corpus500.csv")).unwrap();
    assert_eq!(ds.len(), 500);
    assert!(ds.skipped.is_empty(), "{:?}", ds.skipped);
    assert_eq!(ds.n_tasks(), 0);
}

#[test]
fn toy_task_is_binary_with_both_classes() {
    let ds = load_csv(&data("toy_task.csv")).unwrap();
    assert_eq!(ds.len(), 400);
    assert!(ds.skipped.is_empty(), "{:?}", ds.skipped);
    assert_eq!(ds.label_names, vec!["active".to_string()]);
    ds.check_binary().unwrap();
    let positives = ds.records.iter().filter(|r| r.labels[0] == Some(1.0)).count();
    assert!(positives > 50 && positives < 350, "{positives} positives");
}

#[test]
fn corpus_vocabulary_covers_the_toy_task() {
    let corpus = load_csv(&data("corpus500.csv")).unwrap();
    let mols: Vec<_> = corpus.records.iter().map(|r| r.mol.base.clone()).collect();
    let vocab = build_vocab(&mols, 100, 0).unwrap();
    let toy = load_csv(&data("toy_task.csv")).unwrap();
    let (samples, failed) = preprocess(&toy.records, &vocab, GraphVariant::Compositional, 256, 0).unwrap();
    assert!(failed.is_empty(), "{failed:?}");
    assert_eq!(samples.len(), 400);
}
