//! Random forest: bagged Gini trees with random split candidates, majority
//! voting with random tie-break, out-of-bag error and permutation importance.

mod importance;
mod io;
mod tree;

pub use importance::{PermutationImportance, PermutationScheme};
pub use tree::{DecisionTree, Node, TreeParams};

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::mtry_default;
use crate::rng::{seeded_rng, stream_id, tag, Stream};
use crate::scalar::Scalar;
use tree::{Columns, N_CLASSES};

/// Per-class vote counts, index `k - 1` for label `k`.
pub type Votes = [u32; N_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Split candidates per node; `None` means `⌊√p⌋`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 900, mtry: None, min_node_size: 1, max_depth: None, seed: 0 }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| mtry_default(n_features))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest<T> {
    trees: Vec<DecisionTree<T>>,
    bags: Vec<Vec<u32>>,
    n_features: usize,
    n_rows: usize,
    mtry: usize,
    params: ForestParams,
}

/// Forest out-of-bag estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobEstimate {
    pub error: f64,
    /// Rows that received at least one OOB vote.
    pub counted: usize,
    pub n_rows: usize,
}

/// Bootstrap bag of `n_rows` draws with replacement and the sorted rows
/// never drawn.
pub fn bootstrap_sample(n_rows: usize, rng: &mut Stream) -> (Vec<u32>, Vec<u32>) {
    let bag: Vec<u32> = (0..n_rows).map(|_| rng.random_range(0..n_rows as u32)).collect();
    let oob = complement(&bag, n_rows);
    (bag, oob)
}

fn complement(bag: &[u32], n_rows: usize) -> Vec<u32> {
    let mut seen = vec![false; n_rows];
    for &r in bag {
        seen[r as usize] = true;
    }
    (0..n_rows as u32).filter(|&r| !seen[r as usize]).collect()
}

/// Argmax over votes with a uniform random choice among ties.
pub fn vote_winner(votes: &Votes, rng: &mut Stream) -> u8 {
    let best = *votes.iter().max().expect("nine classes");
    let tied: Vec<usize> = (0..N_CLASSES).filter(|&k| votes[k] == best).collect();
    let pick = if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] };
    pick as u8 + 1
}

pub(crate) fn check_training(x: ArrayView2<'_, impl Scalar>, labels: &[u8]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Data("empty training matrix".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Data(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| !(1..=9).contains(*l)) {
        return Err(Error::Data(format!("label {l} outside 1..=9")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite feature value in training data".into()));
    }
    Ok(())
}

impl<T: Scalar> Forest<T> {
    /// Trains `params.n_trees` trees. Tree `t` draws its bag and split
    /// candidates from its own stream, so the result does not depend on the
    /// number of worker threads.
    pub fn train(x: ArrayView2<'_, T>, labels: &[u8], params: &ForestParams) -> Result<Self> {
        check_training(x, labels)?;
        if params.n_trees == 0 {
            return Err(Error::Config("forest.n_trees must be at least 1".into()));
        }
        let p = x.ncols();
        let mtry = params.resolved_mtry(p);
        if mtry == 0 || mtry > p {
            return Err(Error::Config(format!("forest.mtry = {mtry} outside 1..={p}")));
        }
        let n = x.nrows();
        let cols = Columns::from_rows(x);
        let tree_params =
            TreeParams { mtry, min_node_size: params.min_node_size, max_depth: params.max_depth };
        let grown: Vec<(DecisionTree<T>, Vec<u32>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seeded_rng(params.seed, stream_id(tag::TREE, &[t as u64]));
                let (bag, _) = bootstrap_sample(n, &mut rng);
                let tree = tree::grow(&cols, labels, &bag, &tree_params, &mut rng);
                (tree, bag)
            })
            .collect();
        let (trees, bags) = grown.into_iter().unzip();
        Ok(Self { trees, bags, n_features: p, n_rows: n, mtry, params: *params })
    }

    pub fn trees(&self) -> &[DecisionTree<T>] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_training_rows(&self) -> usize {
        self.n_rows
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn bag(&self, tree: usize) -> &[u32] {
        &self.bags[tree]
    }

    /// Training rows tree `tree` never saw, ascending.
    pub fn oob_rows(&self, tree: usize) -> Vec<u32> {
        complement(&self.bags[tree], self.n_rows)
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.n_features {
            return Err(Error::Data(format!(
                "row has {width} features, forest was trained on {}",
                self.n_features
            )));
        }
        Ok(())
    }

    pub fn votes(&self, row: &[T]) -> Result<Votes> {
        self.check_width(row.len())?;
        let mut v = [0u32; N_CLASSES];
        for t in &self.trees {
            v[t.classify_row(row) as usize - 1] += 1;
        }
        Ok(v)
    }

    /// Majority vote; ties are resolved with draws from `rng`.
    pub fn predict(&self, row: &[T], rng: &mut Stream) -> Result<u8> {
        Ok(vote_winner(&self.votes(row)?, rng))
    }

    /// Predicts every row of `x`. Row `i` resolves ties from stream
    /// `(seed, PREDICT/i)`, keeping results independent of scheduling.
    pub fn predict_rows(&self, x: ArrayView2<'_, T>, seed: u64) -> Result<Vec<u8>> {
        self.check_width(x.ncols())?;
        let rows: Vec<Vec<T>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.par_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut rng = seeded_rng(seed, stream_id(tag::PREDICT, &[i as u64]));
                self.predict(row, &mut rng)
            })
            .collect()
    }

    /// Per training row, votes from the trees that did not see it.
    pub fn oob_votes(&self, x: ArrayView2<'_, T>) -> Result<Vec<Votes>> {
        self.check_width(x.ncols())?;
        if x.nrows() != self.n_rows {
            return Err(Error::Data(format!(
                "OOB evaluation needs the {} training rows, got {}",
                self.n_rows,
                x.nrows()
            )));
        }
        let per_tree: Vec<Vec<(u32, u8)>> = (0..self.trees.len())
            .into_par_iter()
            .map(|t| {
                let tree = &self.trees[t];
                self.oob_rows(t)
                    .into_iter()
                    .map(|r| (r, tree.classify(|f| x[[r as usize, f]])))
                    .collect()
            })
            .collect();
        let mut votes = vec![[0u32; N_CLASSES]; self.n_rows];
        for list in per_tree {
            for (r, label) in list {
                votes[r as usize][label as usize - 1] += 1;
            }
        }
        Ok(votes)
    }

    /// OOB error over rows with at least one OOB vote.
    pub fn oob_error(&self, x: ArrayView2<'_, T>, labels: &[u8]) -> Result<OobEstimate> {
        if labels.len() != x.nrows() {
            return Err(Error::Data("label count differs from row count".into()));
        }
        let votes = self.oob_votes(x)?;
        let mut wrong = 0usize;
        let mut counted = 0usize;
        for (r, v) in votes.iter().enumerate() {
            if v.iter().all(|&c| c == 0) {
                continue;
            }
            counted += 1;
            let mut rng = seeded_rng(self.params.seed, stream_id(tag::OOB, &[r as u64]));
            if vote_winner(v, &mut rng) != labels[r] {
                wrong += 1;
            }
        }
        if counted == 0 {
            return Err(Error::Degenerate("no training row received an out-of-bag vote".into()));
        }
        Ok(OobEstimate { error: wrong as f64 / counted as f64, counted, n_rows: self.n_rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::seq::SliceRandom;

    fn noise(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = seeded_rng(seed, 99);
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>());
        let y = (0..n).map(|_| rng.random_range(1..=9u8)).collect();
        (x, y)
    }

    #[test]
    fn bootstrap_single_row() {
        let (bag, oob) = bootstrap_sample(1, &mut seeded_rng(0, 0));
        assert_eq!(bag, vec![0]);
        assert!(oob.is_empty());
    }

    #[test]
    fn bootstrap_partitions_rows() {
        let mut rng = seeded_rng(5, 1);
        for n in [2, 17, 300] {
            let (bag, oob) = bootstrap_sample(n, &mut rng);
            assert_eq!(bag.len(), n);
            let mut support: Vec<u32> = bag.clone();
            support.sort_unstable();
            support.dedup();
            assert!(support.iter().all(|r| oob.binary_search(r).is_err()));
            assert_eq!(support.len() + oob.len(), n);
        }
    }

    #[test]
    fn bootstrap_unique_fraction() {
        let mut rng = seeded_rng(2024, 3);
        let mean: f64 = (0..200)
            .map(|_| 1.0 - bootstrap_sample(1350, &mut rng).1.len() as f64 / 1350.0)
            .sum::<f64>()
            / 200.0;
        assert!((mean - 0.632).abs() < 0.01, "{mean}");
    }

    #[test]
    fn unanimous_and_single_tree() {
        let x = Array2::from_shape_fn((20, 2), |(r, f)| (r + f) as f64);
        let y = vec![5u8; 20];
        let params = ForestParams { n_trees: 7, seed: 1, ..Default::default() };
        let forest = Forest::train(x.view(), &y, &params).unwrap();
        assert_eq!(forest.votes(&[3.0, 4.0]).unwrap(), [0, 0, 0, 0, 7, 0, 0, 0, 0]);
        assert_eq!(forest.predict_rows(x.view(), 0).unwrap(), y);

        let (x, y) = noise(30, 3, 4);
        let params = ForestParams { n_trees: 1, seed: 9, ..Default::default() };
        let forest = Forest::train(x.view(), &y, &params).unwrap();
        for r in 0..30 {
            let row = x.row(r).to_vec();
            assert_eq!(forest.predict(&row, &mut seeded_rng(0, 0)).unwrap(), forest.trees()[0].classify_row(&row));
        }
    }

    #[test]
    fn vote_sum_equals_tree_count() {
        let (x, y) = noise(60, 5, 8);
        let params = ForestParams { n_trees: 23, seed: 2, ..Default::default() };
        let forest = Forest::train(x.view(), &y, &params).unwrap();
        for r in 0..60 {
            let v = forest.votes(x.row(r).as_slice().unwrap()).unwrap();
            assert_eq!(v.iter().sum::<u32>(), 23);
        }
    }

    #[test]
    fn width_mismatch_is_error() {
        let (x, y) = noise(10, 3, 1);
        let forest = Forest::train(x.view(), &y, &ForestParams { n_trees: 2, ..Default::default() }).unwrap();
        assert!(forest.votes(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn tied_votes_split_evenly() {
        let mut v = [0u32; 9];
        v[3] = 450;
        v[8] = 450;
        let n = 2000;
        let fours = (0..n)
            .filter(|&i| vote_winner(&v, &mut seeded_rng(77, i)) == 4)
            .count();
        // 99.9% binomial band around n/2.
        let sd = (n as f64 * 0.25).sqrt();
        assert!((fours as f64 - n as f64 / 2.0).abs() < 3.3 * sd, "{fours}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (x, y) = noise(80, 6, 12);
        let params = ForestParams { n_trees: 15, seed: 3, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| Forest::train(x.view(), &y, &params).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn oob_of_shuffled_labels_near_chance() {
        let n = 900;
        let mut rng = seeded_rng(31, 0);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
        let mut y: Vec<u8> = (0..n).map(|i| 1 + (i % 9) as u8).collect();
        y.shuffle(&mut rng);
        let params = ForestParams { n_trees: 40, seed: 5, ..Default::default() };
        let forest = Forest::train(x.view(), &y, &params).unwrap();
        let oob = forest.oob_error(x.view(), &y).unwrap();
        assert!((oob.error - 8.0 / 9.0).abs() < 0.04, "{}", oob.error);
        assert_eq!(oob.counted, n);
    }

    #[test]
    fn one_tree_oob_counts_only_its_rows() {
        let (x, y) = noise(50, 2, 6);
        let forest = Forest::train(x.view(), &y, &ForestParams { n_trees: 1, seed: 4, ..Default::default() }).unwrap();
        let oob = forest.oob_error(x.view(), &y).unwrap();
        assert_eq!(oob.counted, forest.oob_rows(0).len());
    }

    #[test]
    fn no_oob_rows_is_error() {
        let x = Array2::from_elem((1, 1), 0.0);
        let forest = Forest::train(x.view(), &[1], &ForestParams { n_trees: 3, ..Default::default() }).unwrap();
        assert!(matches!(forest.oob_error(x.view(), &[1]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Array2::from_elem((2, 2), 0.0);
        assert!(Forest::train(x.view(), &[1, 10], &ForestParams::default()).is_err());
        assert!(Forest::train(x.view(), &[1, 2], &ForestParams { mtry: Some(3), ..Default::default() }).is_err());
        let mut nan = x.clone();
        nan[[0, 0]] = f64::NAN;
        assert!(Forest::train(nan.view(), &[1, 2], &ForestParams::default()).is_err());
    }

    #[test]
    fn f32_forest_trains() {
        let (x, y) = noise(40, 4, 2);
        let x32 = x.mapv(|v| v as f32);
        let f = Forest::train(x32.view(), &y, &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
        assert_eq!(f.n_trees(), 5);
    }
}
