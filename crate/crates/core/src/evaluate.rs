//! Leave-one-subject-out evaluation, exact binomial test, confusion matrix
//! and per-key rates, and the crossval report formats.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::forest::{Forest, ForestParams};
use crate::rng::{derive_seed, tag};
use crate::robust::{impute_outliers, ImputeMode};
use crate::scalar::Scalar;

pub const N_KEYS: usize = 9;
pub const CHANCE: f64 = 1.0 / 9.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub test: String,
}

/// One fold per subject, in order of first appearance.
pub fn loso_folds(subjects: &[String]) -> Result<Vec<Fold>> {
    let mut unique: Vec<String> = Vec::new();
    for s in subjects {
        if !unique.contains(s) {
            unique.push(s.clone());
        }
    }
    if unique.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs at least two subjects, got {}",
            unique.len()
        )));
    }
    Ok(unique
        .iter()
        .enumerate()
        .map(|(index, test)| Fold {
            index,
            train: unique.iter().filter(|s| *s != test).cloned().collect(),
            test: test.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    pub forest: ForestParams,
    pub impute: ImputeMode,
    /// Upper bound on fold forests held in memory at once.
    pub max_resident: usize,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self { forest: ForestParams::default(), impute: ImputeMode::default(), max_resident: 4 }
    }
}

impl CrossvalConfig {
    /// Forest parameters for one fold; each fold gets its own master seed.
    pub fn fold_params(&self, fold: usize) -> ForestParams {
        ForestParams { seed: derive_seed(self.forest.seed, tag::FOLD, fold as u64), ..self.forest }
    }

    pub fn prediction_seed(&self, fold: usize) -> u64 {
        derive_seed(self.forest.seed, tag::PREDICT, fold as u64)
    }
}

/// Imputed training and test blocks of one fold.
pub struct FoldData<T> {
    pub train_x: Array2<T>,
    pub train_y: Vec<u8>,
    pub test_x: Array2<T>,
    pub test_y: Vec<u8>,
}

pub fn fold_data<T: Scalar>(matrix: &FeatureMatrix<T>, fold: &Fold, mode: ImputeMode) -> Result<FoldData<T>> {
    let imputed = impute_outliers(matrix, &fold.train, mode)?.matrix;
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) =
        (0..matrix.n_rows()).partition(|&r| matrix.meta[r].subject_id != fold.test);
    let test_rows: Vec<usize> = test_rows;
    let labels = matrix.labels();
    Ok(FoldData {
        train_x: imputed.values.select(Axis(0), &train_rows),
        train_y: train_rows.iter().map(|&r| labels[r]).collect(),
        test_x: imputed.values.select(Axis(0), &test_rows),
        test_y: test_rows.iter().map(|&r| labels[r]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldResult {
    pub subject: String,
    pub truth: Vec<u8>,
    pub predicted: Vec<u8>,
}

impl FoldResult {
    pub fn hits(&self) -> usize {
        self.truth.iter().zip(&self.predicted).filter(|(a, b)| a == b).count()
    }

    pub fn n(&self) -> usize {
        self.truth.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.hits() as f64 / self.n() as f64
    }
}

/// Trains one forest per fold and predicts the held-out subject. Folds run
/// in batches of at most `max_resident`; each trained forest is handed to
/// `sink` in fold order and dropped afterwards.
pub fn run_crossval<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &CrossvalConfig,
    mut sink: impl FnMut(&Fold, Forest<T>) -> Result<()>,
) -> Result<CrossvalReport> {
    let folds = loso_folds(&matrix.subjects())?;
    let mut results = Vec::with_capacity(folds.len());
    for batch in folds.chunks(config.max_resident.max(1)) {
        let trained: Vec<Result<(FoldResult, Forest<T>)>> = batch
            .par_iter()
            .map(|fold| {
                run_fold(matrix, fold, config).map_err(|e| Error::Fold {
                    fold: fold.index,
                    subject: fold.test.clone(),
                    source: Box::new(e),
                })
            })
            .collect();
        for (fold, r) in batch.iter().zip(trained) {
            let (result, forest) = r?;
            log::info!(
                "fold {} ({}): {}/{} correct",
                fold.index,
                fold.test,
                result.hits(),
                result.n()
            );
            sink(fold, forest)?;
            results.push(result);
        }
    }
    CrossvalReport::from_folds(results)
}

fn run_fold<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    fold: &Fold,
    config: &CrossvalConfig,
) -> Result<(FoldResult, Forest<T>)> {
    let data = fold_data(matrix, fold, config.impute)?;
    let forest = Forest::train(data.train_x.view(), &data.train_y, &config.fold_params(fold.index))?;
    let predicted = forest.predict_rows(data.test_x.view(), config.prediction_seed(fold.index))?;
    Ok((FoldResult { subject: fold.test.clone(), truth: data.test_y, predicted }, forest))
}

/// Which upper tail to sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// `P[X ≥ hits]`
    AtLeast,
    /// `P[X > hits]`
    Above,
}

fn ln_pmf(k: u64, n: u64, ln_p: f64, ln_q: f64, ln_n_fact: f64) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    let mut v = ln_n_fact - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0);
    if k > 0 {
        v += kf * ln_p;
    }
    if k < n {
        v += (nf - kf) * ln_q;
    }
    v
}

/// Natural log of the binomial upper tail, by log-sum-exp over the pmf.
pub fn binomial_tail_ln(hits: u64, n: u64, p0: f64, tail: Tail) -> f64 {
    let start = match tail {
        Tail::AtLeast => hits,
        Tail::Above => hits + 1,
    };
    if start == 0 {
        return 0.0;
    }
    if start > n {
        return f64::NEG_INFINITY;
    }
    if p0 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p0 >= 1.0 {
        return 0.0;
    }
    let (ln_p, ln_q) = (p0.ln(), (1.0 - p0).ln());
    let ln_n_fact = ln_gamma(n as f64 + 1.0);
    let terms: Vec<f64> = (start..=n).map(|k| ln_pmf(k, n, ln_p, ln_q, ln_n_fact)).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).min(0.0)
}

pub fn binomial_tail(hits: u64, n: u64, p0: f64, tail: Tail) -> f64 {
    binomial_tail_ln(hits, n, p0, tail).exp()
}

/// One-sided exact test against chance: `P[X ≥ hits]`, `X ~ Bin(n, p0)`.
pub fn binomial_test(hits: u64, n: u64, p0: f64) -> f64 {
    binomial_tail(hits, n, p0, Tail::AtLeast)
}

/// Central interval of hit counts holding at least `level` of the mass:
/// the `(1−level)/2` and `(1+level)/2` quantiles of `Bin(n, p0)`.
pub fn binomial_interval(n: u64, p0: f64, level: f64) -> (u64, u64) {
    let (ln_p, ln_q) = (p0.ln(), (1.0 - p0).ln());
    let ln_n_fact = ln_gamma(n as f64 + 1.0);
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;
    let mut cdf = 0.0;
    let mut lo = None;
    for k in 0..=n {
        cdf += ln_pmf(k, n, ln_p, ln_q, ln_n_fact).exp();
        if lo.is_none() && cdf >= lo_q * (1.0 - 1e-12) {
            lo = Some(k);
        }
        if cdf >= hi_q * (1.0 - 1e-12) {
            return (lo.unwrap_or(k), k);
        }
    }
    (lo.unwrap_or(n), n)
}

/// Prediction counts and row percentages; `counts[t-1][p-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub counts: [[u64; N_KEYS]; N_KEYS],
    /// Row-normalised percentages; rows of keys without trials are NaN.
    pub percent: [[f64; N_KEYS]; N_KEYS],
}

fn check_pairs(pairs: &[(u8, u8)]) -> Result<()> {
    match pairs.iter().find(|(t, p)| !(1..=9).contains(t) || !(1..=9).contains(p)) {
        Some(bad) => Err(Error::Data(format!("label pair {bad:?} outside 1..=9"))),
        None => Ok(()),
    }
}

pub fn confusion_matrix(pairs: &[(u8, u8)]) -> Result<Confusion> {
    check_pairs(pairs)?;
    let mut counts = [[0u64; N_KEYS]; N_KEYS];
    for &(t, p) in pairs {
        counts[t as usize - 1][p as usize - 1] += 1;
    }
    let mut percent = [[f64::NAN; N_KEYS]; N_KEYS];
    for k in 0..N_KEYS {
        let total: u64 = counts[k].iter().sum();
        if total > 0 {
            for j in 0..N_KEYS {
                percent[k][j] = 100.0 * counts[k][j] as f64 / total as f64;
            }
        }
    }
    Ok(Confusion { counts, percent })
}

/// Per key `(tp, tn)` in percent: `P[pred = k | true = k]` and
/// `P[pred ≠ k | true ≠ k]`. Undefined rates are NaN.
pub fn tp_tn_rates(pairs: &[(u8, u8)]) -> Result<[(f64, f64); N_KEYS]> {
    let c = confusion_matrix(pairs)?.counts;
    let mut out = [(f64::NAN, f64::NAN); N_KEYS];
    for k in 0..N_KEYS {
        let pos: u64 = c[k].iter().sum();
        let neg_total: u64 = (0..N_KEYS).filter(|&t| t != k).map(|t| c[t].iter().sum::<u64>()).sum();
        let neg_right: u64 = (0..N_KEYS).filter(|&t| t != k).map(|t| pos_other(&c[t], k)).sum();
        if pos > 0 {
            out[k].0 = 100.0 * c[k][k] as f64 / pos as f64;
        }
        if neg_total > 0 {
            out[k].1 = 100.0 * neg_right as f64 / neg_total as f64;
        }
    }
    Ok(out)
}

fn pos_other(row: &[u64; N_KEYS], k: usize) -> u64 {
    row.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, c)| c).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalReport {
    pub folds: Vec<FoldResult>,
    pub hits: usize,
    pub n: usize,
    pub accuracy: f64,
    pub p_value: f64,
    pub ln_p_value: f64,
    pub confusion: Confusion,
    pub rates: [(f64, f64); N_KEYS],
}

impl CrossvalReport {
    pub fn from_folds(folds: Vec<FoldResult>) -> Result<Self> {
        let pairs: Vec<(u8, u8)> = folds
            .iter()
            .flat_map(|f| f.truth.iter().copied().zip(f.predicted.iter().copied()))
            .collect();
        if pairs.is_empty() {
            return Err(Error::Data("crossval produced no predictions".into()));
        }
        let hits: usize = folds.iter().map(FoldResult::hits).sum();
        let n = pairs.len();
        let ln_p = binomial_tail_ln(hits as u64, n as u64, CHANCE, Tail::AtLeast);
        Ok(Self {
            hits,
            n,
            accuracy: hits as f64 / n as f64,
            p_value: ln_p.exp(),
            ln_p_value: ln_p,
            confusion: confusion_matrix(&pairs)?,
            rates: tp_tn_rates(&pairs)?,
            folds,
        })
    }

    /// Machine-readable `key = value` document. Predictions are included so
    /// the report can be rebuilt exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subjects = {}", self.folds.len());
        let _ = writeln!(s, "hits = {}", self.hits);
        let _ = writeln!(s, "trials = {}", self.n);
        let _ = writeln!(s, "accuracy = {}", self.accuracy);
        let _ = writeln!(s, "chance = {}", CHANCE);
        let _ = writeln!(s, "p_value = {:e}", self.p_value);
        let _ = writeln!(s, "ln_p_value = {}", self.ln_p_value);
        for f in &self.folds {
            let _ = writeln!(s, "fold.{}.hits = {}", f.subject, f.hits());
            let _ = writeln!(s, "fold.{}.trials = {}", f.subject, f.n());
            let _ = writeln!(s, "fold.{}.accuracy = {}", f.subject, f.accuracy());
        }
        for k in 0..N_KEYS {
            let row: Vec<String> = self.confusion.percent[k].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "confusion.{} = {}", k + 1, row.join(" "));
        }
        for k in 0..N_KEYS {
            let _ = writeln!(s, "key.{}.tp = {}", k + 1, self.rates[k].0);
            let _ = writeln!(s, "key.{}.tn = {}", k + 1, self.rates[k].1);
        }
        for f in &self.folds {
            let pairs: Vec<String> =
                f.truth.iter().zip(&f.predicted).map(|(t, p)| format!("{t}{p}")).collect();
            let _ = writeln!(s, "predictions.{} = {}", f.subject, pairs.join(" "));
        }
        s
    }

    /// Rebuilds a report from the `predictions.*` lines of [`to_text`].
    ///
    /// [`to_text`]: CrossvalReport::to_text
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut folds = Vec::new();
        for line in text.lines() {
            let Some((key, value)) = line.split_once(" = ") else { continue };
            let Some(subject) = key.strip_prefix("predictions.") else { continue };
            let mut truth = Vec::new();
            let mut predicted = Vec::new();
            for pair in value.split_whitespace() {
                let b = pair.as_bytes();
                if b.len() != 2 || !(b'1'..=b'9').contains(&b[0]) || !(b'1'..=b'9').contains(&b[1]) {
                    return Err(Error::format(origin, format!("bad prediction pair {pair:?}")));
                }
                truth.push(b[0] - b'0');
                predicted.push(b[1] - b'0');
            }
            folds.push(FoldResult { subject: subject.to_string(), truth, predicted });
        }
        if folds.is_empty() {
            return Err(Error::format(origin, "no prediction lines"));
        }
        Self::from_folds(folds)
    }

    /// Per-subject accuracy table.
    pub fn table_subjects(&self) -> String {
        let mut s = String::from("subject   trials   hits   PA (%)\n");
        for f in &self.folds {
            let _ = writeln!(s, "{:<9} {:>6} {:>6} {:>8.2}", f.subject, f.n(), f.hits(), 100.0 * f.accuracy());
        }
        let _ = writeln!(s, "{:<9} {:>6} {:>6} {:>8.2}", "all", self.n, self.hits, 100.0 * self.accuracy);
        let _ = writeln!(s, "chance {:.2} %, one-sided binomial p = {:.3e}", 100.0 * CHANCE, self.p_value);
        s
    }

    /// Per-key tp/tn table.
    pub fn table_keys(&self) -> String {
        let mut s = String::from("key   tp (%)   tn (%)\n");
        for (k, (tp, tn)) in self.rates.iter().enumerate() {
            let _ = writeln!(s, "{:<3} {:>8.2} {:>8.2}", k + 1, tp, tn);
        }
        s
    }

    /// Confusion percentages as CSV, rows = true key.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred,1,2,3,4,5,6,7,8,9\n");
        for k in 0..N_KEYS {
            let row: Vec<String> = self.confusion.percent[k].iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "{},{}", k + 1, row.join(","));
        }
        s
    }
}
