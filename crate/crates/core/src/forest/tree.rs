//! Classification trees grown to purity on a bootstrap bag.
//!
//! Split quality is the Gini criterion. For a split of `n` rows into left and
//! right children the weighted child impurity is `n − (ΣcL²/nL + ΣcR²/nR)`,
//! so maximising `S = ΣcL²/nL + ΣcR²/nR` maximises the impurity decrease. `S`
//! is compared exactly as a fraction of integers, which keeps split choices
//! independent of floating-point rounding.

use rand::seq::index;
use rand::Rng;

use crate::rng::Stream;
use crate::scalar::Scalar;

pub(crate) const N_CLASSES: usize = 9;

/// One tree node; nodes are stored in preorder, so a split's left child is
/// the next node and only the right child index is kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node<T> {
    Split { feature: u32, threshold: T, right: u32 },
    Leaf { label: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
}

/// Growth controls. The defaults grow every tree to purity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub mtry: usize,
    /// Smallest number of bag rows a child may hold.
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

impl<T: Scalar> DecisionTree<T> {
    pub(crate) fn from_nodes(nodes: Vec<Node<T>>) -> Option<Self> {
        let tree = Self { nodes };
        tree.check().then_some(tree)
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            best = best.max(d);
            if let Node::Split { right, .. } = self.nodes[i] {
                stack.push((i + 1, d + 1));
                stack.push((right as usize, d + 1));
            }
        }
        best
    }

    /// Leaf label reached by a row whose feature values are given by `value`.
    #[inline]
    pub fn classify(&self, value: impl Fn(usize) -> T) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { label } => return label,
                Node::Split { feature, threshold, right } => {
                    i = if value(feature as usize) <= threshold { i + 1 } else { right as usize };
                }
            }
        }
    }

    pub fn classify_row(&self, row: &[T]) -> u8 {
        self.classify(|f| row[f])
    }

    /// Split-node indices visited by a row, root first.
    pub(crate) fn path(&self, value: impl Fn(usize) -> T, out: &mut Vec<u32>) {
        out.clear();
        let mut i = 0;
        while let Node::Split { feature, threshold, right } = self.nodes[i] {
            out.push(i as u32);
            i = if value(feature as usize) <= threshold { i + 1 } else { right as usize };
        }
    }

    /// Sorted, de-duplicated features this tree splits on.
    pub fn features_used(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature as usize),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Structural validity of a preorder node list: every subtree is
    /// complete, right links point forward, thresholds are finite.
    fn check(&self) -> bool {
        fn subtree_end<T: Scalar>(nodes: &[Node<T>], i: usize, depth: usize) -> Option<usize> {
            if depth > nodes.len() {
                return None;
            }
            match nodes.get(i)? {
                Node::Leaf { label } => ((1..=9).contains(label)).then_some(i + 1),
                Node::Split { threshold, right, .. } => {
                    if !threshold.is_finite() {
                        return None;
                    }
                    let left_end = subtree_end(nodes, i + 1, depth + 1)?;
                    if left_end != *right as usize {
                        return None;
                    }
                    subtree_end(nodes, left_end, depth + 1)
                }
            }
        }
        subtree_end(&self.nodes, 0, 0) == Some(self.nodes.len())
    }
}

/// Column-major copy of a training block: `data[f * n_rows + r]`.
pub(crate) struct Columns<T> {
    pub data: Vec<T>,
    pub n_rows: usize,
    pub n_features: usize,
}

impl<T: Scalar> Columns<T> {
    pub fn from_rows(x: ndarray::ArrayView2<'_, T>) -> Self {
        let (n_rows, n_features) = x.dim();
        let mut data = Vec::with_capacity(n_rows * n_features);
        for col in x.columns() {
            data.extend(col.iter().copied());
        }
        Self { data, n_rows, n_features }
    }

    #[inline]
    pub fn column(&self, feature: usize) -> &[T] {
        &self.data[feature * self.n_rows..(feature + 1) * self.n_rows]
    }
}

/// Exact split score `num / den`.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    #[inline]
    fn beats(self, other: Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

struct Candidate<T> {
    feature: usize,
    threshold: T,
    score: Score,
}

struct Task {
    start: usize,
    end: usize,
    depth: usize,
    patch_right_of: Option<usize>,
}

/// Grows one tree on the bag rows (a multiset of training-row indices).
pub(crate) fn grow<T: Scalar>(
    cols: &Columns<T>,
    labels: &[u8],
    bag: &[u32],
    params: &TreeParams,
    rng: &mut Stream,
) -> DecisionTree<T> {
    let mut rows: Vec<u32> = bag.to_vec();
    let mut nodes: Vec<Node<T>> = Vec::new();
    let mut pairs: Vec<(T, u8)> = Vec::with_capacity(rows.len());
    let mut stack = vec![Task { start: 0, end: rows.len(), depth: 0, patch_right_of: None }];
    while let Some(task) = stack.pop() {
        let idx = nodes.len();
        if let Some(p) = task.patch_right_of {
            if let Node::Split { right, .. } = &mut nodes[p] {
                *right = idx as u32;
            }
        }
        let slice = &mut rows[task.start..task.end];
        let counts = class_counts(slice, labels);
        let may_split = params.max_depth.is_none_or(|d| task.depth < d);
        let split = if may_split && !is_pure(&counts) {
            let features = draw_candidates(cols.n_features, params.mtry, rng);
            best_split(cols, labels, slice, &counts, &features, params.min_node_size, &mut pairs)
        } else {
            None
        };
        match split {
            None => nodes.push(Node::Leaf { label: majority(&counts, rng) }),
            Some(c) => {
                let column = cols.column(c.feature);
                let n_left = partition(slice, |r| column[r as usize] <= c.threshold);
                nodes.push(Node::Split { feature: c.feature as u32, threshold: c.threshold, right: 0 });
                let mid = task.start + n_left;
                stack.push(Task { start: mid, end: task.end, depth: task.depth + 1, patch_right_of: Some(idx) });
                stack.push(Task { start: task.start, end: mid, depth: task.depth + 1, patch_right_of: None });
            }
        }
    }
    DecisionTree { nodes }
}

fn class_counts(rows: &[u32], labels: &[u8]) -> [u64; N_CLASSES] {
    let mut c = [0u64; N_CLASSES];
    for &r in rows {
        c[labels[r as usize] as usize - 1] += 1;
    }
    c
}

fn is_pure(counts: &[u64; N_CLASSES]) -> bool {
    counts.iter().filter(|&&c| c > 0).count() <= 1
}

/// `mtry` distinct features in ascending order.
fn draw_candidates(p: usize, mtry: usize, rng: &mut Stream) -> Vec<usize> {
    let mut f = index::sample(rng, p, mtry.min(p)).into_vec();
    f.sort_unstable();
    f
}

/// Majority class; ties are broken uniformly at random.
pub(crate) fn majority(counts: &[u64; N_CLASSES], rng: &mut Stream) -> u8 {
    let best = *counts.iter().max().expect("nine classes");
    let tied: Vec<usize> = (0..N_CLASSES).filter(|&k| counts[k] == best).collect();
    let pick = if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] };
    pick as u8 + 1
}

fn best_split<T: Scalar>(
    cols: &Columns<T>,
    labels: &[u8],
    rows: &[u32],
    counts: &[u64; N_CLASSES],
    features: &[usize],
    min_node_size: usize,
    pairs: &mut Vec<(T, u8)>,
) -> Option<Candidate<T>> {
    let n = rows.len() as u64;
    let parent_sq: u64 = counts.iter().map(|c| c * c).sum();
    let parent = Score { num: parent_sq as u128, den: n as u128 };
    let min_child = min_node_size.max(1) as u64;
    let mut best: Option<Candidate<T>> = None;
    for &f in features {
        let column = cols.column(f);
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (column[r as usize], labels[r as usize] - 1)));
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            continue;
        }
        let mut left = [0u64; N_CLASSES];
        let mut right = *counts;
        let (mut sq_l, mut sq_r) = (0u64, parent_sq);
        for i in 0..pairs.len() - 1 {
            let k = pairs[i].1 as usize;
            sq_l += 2 * left[k] + 1;
            sq_r -= 2 * right[k] - 1;
            left[k] += 1;
            right[k] -= 1;
            let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
            if lo == hi {
                continue;
            }
            let n_l = i as u64 + 1;
            let n_r = n - n_l;
            if n_l < min_child || n_r < min_child {
                continue;
            }
            let score = Score {
                num: sq_l as u128 * n_r as u128 + sq_r as u128 * n_l as u128,
                den: n_l as u128 * n_r as u128,
            };
            if !score.beats(parent) {
                continue;
            }
            if best.as_ref().is_none_or(|b| score.beats(b.score)) {
                best = Some(Candidate { feature: f, threshold: midpoint(lo, hi), score });
            }
        }
    }
    best
}

/// Midpoint that still separates `lo` from `hi` after rounding.
fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let m = lo + (hi - lo) / T::of(2.0);
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

/// In-place partition; returns the number of rows satisfying `goes_left`.
fn partition(rows: &mut [u32], goes_left: impl Fn(u32) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if goes_left(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use ndarray::{array, Array2};

    fn grow_all(x: &Array2<f64>, labels: &[u8], mtry: usize) -> DecisionTree<f64> {
        let cols = Columns::from_rows(x.view());
        let bag: Vec<u32> = (0..x.nrows() as u32).collect();
        let params = TreeParams { mtry, min_node_size: 1, max_depth: None };
        grow(&cols, labels, &bag, &params, &mut seeded_rng(1, 0))
    }

    #[test]
    fn separable_gives_depth_one() {
        let x = array![[-2.0], [-1.0], [-0.5], [0.5], [1.0], [3.0]];
        let y = [1, 1, 1, 2, 2, 2];
        let t = grow_all(&x, &y, 1);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.nodes()[0], Node::Split { feature: 0, threshold: 0.0, right: 2 });
        for (r, &l) in y.iter().enumerate() {
            assert_eq!(t.classify_row(&[x[[r, 0]]]), l);
        }
    }

    #[test]
    fn single_class_is_a_leaf() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let t = grow_all(&x, &[7, 7, 7], 2);
        assert_eq!(t.nodes(), &[Node::Leaf { label: 7 }]);
    }

    #[test]
    fn grows_to_purity_on_distinct_values() {
        let x = Array2::from_shape_fn((40, 3), |(r, f)| ((r * 7 + f * 13) % 41) as f64);
        let y: Vec<u8> = (0..40).map(|r| 1 + (r % 9) as u8).collect();
        let t = grow_all(&x, &y, 3);
        for r in 0..40 {
            assert_eq!(t.classify_row(x.row(r).as_slice().unwrap()), y[r]);
        }
        assert!(DecisionTree::from_nodes(t.nodes().to_vec()).is_some());
    }

    #[test]
    fn identical_rows_become_majority_leaf() {
        let x = array![[1.0], [1.0], [1.0]];
        let t = grow_all(&x, &[2, 2, 5], 1);
        assert_eq!(t.nodes(), &[Node::Leaf { label: 2 }]);
    }

    #[test]
    fn tie_break_prefers_lowest_feature() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let t = grow_all(&x, &[1, 2], 2);
        assert_eq!(t.nodes()[0], Node::Split { feature: 0, threshold: 0.5, right: 2 });
    }

    #[test]
    fn depth_cap_respected() {
        let x = Array2::from_shape_fn((30, 1), |(r, _)| r as f64);
        let y: Vec<u8> = (0..30).map(|r| 1 + (r % 3) as u8).collect();
        let cols = Columns::from_rows(x.view());
        let bag: Vec<u32> = (0..30).collect();
        let params = TreeParams { mtry: 1, min_node_size: 1, max_depth: Some(2) };
        let t = grow(&cols, &y, &bag, &params, &mut seeded_rng(3, 0));
        assert!(t.depth() <= 2);
    }

    #[test]
    fn malformed_node_lists_rejected() {
        let bad = vec![Node::Split { feature: 0, threshold: 0.0f64, right: 5 }, Node::Leaf { label: 1 }];
        assert!(DecisionTree::from_nodes(bad).is_none());
        assert!(DecisionTree::<f64>::from_nodes(vec![Node::Leaf { label: 0 }]).is_none());
        assert!(DecisionTree::<f64>::from_nodes(vec![]).is_none());
    }

    #[test]
    fn midpoint_between_adjacent_floats() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let m = midpoint(lo, hi);
        assert!(lo <= m && m < hi);
    }

    #[test]
    fn majority_tie_is_uniform() {
        let mut counts = [0u64; 9];
        counts[3] = 5;
        counts[8] = 5;
        let mut rng = seeded_rng(11, 0);
        let n = 4000;
        let fours = (0..n).filter(|_| majority(&counts, &mut rng) == 4).count();
        assert!((fours as f64 / n as f64 - 0.5).abs() < 0.03);
    }
}
