//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use posdec::forest::{Forest, ForestParams};

pub type Q = Ratio<i128>;

/// Tiny labelled dataset: rows × features, labels in 1..=9.
#[derive(Debug, Clone)]
pub struct Tiny {
    pub x: Array2<f64>,
    pub labels: Vec<u8>,
    pub seed: u64,
}

fn tiny() -> impl Strategy<Value = Tiny> {
    (2usize..=12, 1usize..=3, 1u8..=4).prop_flat_map(|(n, p, k)| {
        (
            prop::collection::vec(0u8..5, n * p),
            prop::collection::vec(1..=k, n),
            any::<u64>(),
        )
            .prop_map(move |(v, labels, seed)| Tiny {
                x: Array2::from_shape_fn((n, p), |(r, c)| v[r * p + c] as f64 * 0.5),
                labels,
                seed,
            })
    })
}

/// The fixed corpus: the same datasets on every run.
pub fn corpus(size: usize) -> Vec<Tiny> {
    let mut runner = TestRunner::new_with_rng(
        Config::default(),
        TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]),
    );
    let strategy = tiny();
    (0..size).map(|_| strategy.new_tree(&mut runner).unwrap().current()).collect()
}

fn counts(labels: &[u8]) -> [i128; 10] {
    let mut c = [0; 10];
    for &l in labels {
        c[l as usize] += 1;
    }
    c
}

fn purity(labels: &[u8]) -> Q {
    let c = counts(labels);
    let sq: i128 = c.iter().map(|v| v * v).sum();
    Q::new(sq, labels.len() as i128)
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

/// Exhaustive-split tree: every feature, every cut between distinct values,
/// exact rational Gini purity, first strictly best split kept.
pub enum Oracle {
    Leaf(Vec<u8>),
    Split { feature: usize, threshold: f64, left: Box<Oracle>, right: Box<Oracle> },
}

impl Oracle {
    pub fn grow(x: &Array2<f64>, labels: &[u8], rows: &[usize]) -> Self {
        let node_labels: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
        let parent = purity(&node_labels);
        let mut best: Option<(Q, usize, f64)> = None;
        for f in 0..x.ncols() {
            let mut values: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = midpoint(w[0], w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= t);
                let ll: Vec<u8> = l.iter().map(|&i| labels[i]).collect();
                let rl: Vec<u8> = r.iter().map(|&i| labels[i]).collect();
                let score = purity(&ll) + purity(&rl);
                if score > parent && best.as_ref().is_none_or(|b| score > b.0) {
                    best = Some((score, f, t));
                }
            }
        }
        match best {
            None => {
                let c = counts(&node_labels);
                let top = *c.iter().max().unwrap();
                Oracle::Leaf((1..=9u8).filter(|&k| c[k as usize] == top).collect())
            }
            Some((_, f, t)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= t);
                Oracle::Split {
                    feature: f,
                    threshold: t,
                    left: Box::new(Self::grow(x, labels, &l)),
                    right: Box::new(Self::grow(x, labels, &r)),
                }
            }
        }
    }

    /// Labels the reference tree may output for a row (several on a tied leaf).
    pub fn admissible(&self, row: &[f64]) -> &[u8] {
        match self {
            Oracle::Leaf(set) => set,
            Oracle::Split { feature, threshold, left, right } => {
                if row[*feature] <= *threshold {
                    left.admissible(row)
                } else {
                    right.admissible(row)
                }
            }
        }
    }
}

/// Checks a one-tree forest with mtry = p against the reference tree grown on
/// the same bootstrap bag. Returns a description of the first mismatch.
pub fn check_against_oracle(d: &Tiny) -> Result<(), String> {
    let p = d.x.ncols();
    let params = ForestParams { n_trees: 1, mtry: Some(p), seed: d.seed, ..ForestParams::default() };
    let forest = Forest::<f64>::train(d.x.view(), &d.labels, &params).map_err(|e| e.to_string())?;
    let bag: Vec<usize> = forest.bag(0).iter().map(|&r| r as usize).collect();
    let oracle = Oracle::grow(&d.x, &d.labels, &bag);
    let mut probes: Vec<Vec<f64>> = d.x.rows().into_iter().map(|r| r.to_vec()).collect();
    for a in 0..10 {
        probes.push((0..p).map(|c| ((a * 7 + c * 3) % 10) as f64 * 0.25 - 0.1).collect());
    }
    for row in &probes {
        let got = forest.trees()[0].classify_row(row);
        let ok = oracle.admissible(row);
        if !ok.contains(&got) {
            return Err(format!("row {row:?}: forest says {got}, reference allows {ok:?}"));
        }
    }
    Ok(())
}
