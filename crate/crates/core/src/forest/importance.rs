//! Out-of-bag permutation importance.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::Forest;
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, stream_id, tag};
use crate::scalar::Scalar;

/// How a feature's OOB values are reordered. `Identity` is a no-op used to
/// check that the bookkeeping itself adds nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PermutationScheme {
    #[default]
    Random,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationImportance {
    /// Mean per-tree OOB error increase, in percent of `baseline` when
    /// `percent` is set, raw otherwise.
    pub scores: Vec<f64>,
    /// Mean per-tree OOB error increase as a fraction.
    pub raw_increase: Vec<f64>,
    /// Forest OOB error.
    pub baseline: f64,
    /// False when the baseline was zero and `scores` holds raw increases.
    pub percent: bool,
    pub trees_evaluated: usize,
}

impl<T: Scalar> Forest<T> {
    /// For every tree and every feature it splits on, permutes that feature
    /// among the tree's OOB rows and records the change in the tree's OOB
    /// error. Scores are averaged over trees with a non-empty OOB set.
    pub fn permutation_importance(
        &self,
        x: ArrayView2<'_, T>,
        labels: &[u8],
        scheme: PermutationScheme,
    ) -> Result<PermutationImportance> {
        let baseline = self.oob_error(x, labels)?.error;
        let seed = self.seed();
        let per_tree: Vec<Option<Vec<(usize, f64)>>> = (0..self.n_trees())
            .into_par_iter()
            .map(|t| tree_increases(self, t, x, labels, scheme, seed))
            .collect();
        let mut raw = vec![0.0; self.n_features()];
        let mut evaluated = 0usize;
        for deltas in per_tree.into_iter().flatten() {
            evaluated += 1;
            for (f, d) in deltas {
                raw[f] += d;
            }
        }
        if evaluated == 0 {
            return Err(Error::Degenerate("no tree has out-of-bag rows".into()));
        }
        for v in &mut raw {
            *v /= evaluated as f64;
        }
        let percent = baseline > 0.0;
        if !percent {
            log::warn!("forest OOB error is zero; importances are raw error increases");
        }
        let scores = if percent { raw.iter().map(|v| 100.0 * v / baseline).collect() } else { raw.clone() };
        Ok(PermutationImportance { scores, raw_increase: raw, baseline, percent, trees_evaluated: evaluated })
    }
}

fn tree_increases<T: Scalar>(
    forest: &Forest<T>,
    t: usize,
    x: ArrayView2<'_, T>,
    labels: &[u8],
    scheme: PermutationScheme,
    seed: u64,
) -> Option<Vec<(usize, f64)>> {
    let tree = &forest.trees()[t];
    let oob = forest.oob_rows(t);
    if oob.is_empty() {
        return None;
    }
    let used = tree.features_used();
    let mut touched: Vec<Vec<u32>> = vec![Vec::new(); used.len()];
    let mut base_wrong = vec![false; oob.len()];
    let mut path = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    for (i, &r) in oob.iter().enumerate() {
        let r = r as usize;
        base_wrong[i] = tree.classify(|f| x[[r, f]]) != labels[r];
        tree.path(|f| x[[r, f]], &mut path);
        seen.clear();
        for &node in &path {
            if let super::Node::Split { feature, .. } = tree.nodes()[node as usize] {
                let k = used.binary_search(&(feature as usize)).expect("used feature");
                if !seen.contains(&k) {
                    seen.push(k);
                    touched[k].push(i as u32);
                }
            }
        }
    }
    let n_oob = oob.len() as f64;
    let mut out = Vec::with_capacity(used.len());
    let mut order: Vec<usize> = Vec::with_capacity(oob.len());
    for (k, &f) in used.iter().enumerate() {
        order.clear();
        order.extend(0..oob.len());
        if scheme == PermutationScheme::Random {
            let mut rng = seeded_rng(seed, stream_id(tag::PERMUTE, &[t as u64, f as u64]));
            order.shuffle(&mut rng);
        }
        let mut delta = 0i64;
        for &i in &touched[k] {
            let i = i as usize;
            let r = oob[i] as usize;
            let donor = oob[order[i]] as usize;
            let replaced = x[[donor, f]];
            let wrong = tree.classify(|g| if g == f { replaced } else { x[[r, g]] }) != labels[r];
            delta += wrong as i64 - base_wrong[i] as i64;
        }
        out.push((f, delta as f64 / n_oob));
    }
    Some(out)
}
