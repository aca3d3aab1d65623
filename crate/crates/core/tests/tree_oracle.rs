mod common;

use common::{check_against_oracle, corpus};

#[test]
fn single_tree_matches_exhaustive_reference() {
    let data = corpus(400);
    let failures: Vec<String> = data
        .iter()
        .enumerate()
        .filter_map(|(i, d)| check_against_oracle(d).err().map(|e| format!("dataset {i}: {e}")))
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn corpus_is_fixed() {
    let a = corpus(20);
    let b = corpus(20);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.x, y.x);
        assert_eq!(x.labels, y.labels);
    }
}
