//! Iterative outlier marking, per-subject standardisation, and training-mean
//! imputation. Standard deviations are population (divide by n) throughout.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::{mean_std, Scalar};

/// Per (subject, feature) statistics of the unmasked cells, as used for
/// standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams<T> {
    pub subjects: Vec<String>,
    /// `subjects × features`
    pub mean: Array2<T>,
    pub std: Array2<T>,
    /// Features whose unmasked values were constant for that subject.
    pub constant: Array2<bool>,
}

/// Result of the iterative marking on one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlierMask {
    pub mask: Vec<bool>,
    /// Passes run, including the final pass that marked nothing.
    pub iterations: usize,
}

/// Repeatedly marks unmasked values further than `threshold` standard
/// deviations from the mean of the unmasked values, until a pass marks
/// nothing.
pub fn mark_outliers_iterative<T: Scalar>(column: &[T], threshold: T) -> Result<OutlierMask> {
    if column.len() < 2 {
        return Err(Error::Data(format!(
            "outlier marking needs at least two values, got {}",
            column.len()
        )));
    }
    let mut mask = vec![false; column.len()];
    let mut kept: Vec<T> = Vec::with_capacity(column.len());
    let mut iterations = 0;
    loop {
        iterations += 1;
        kept.clear();
        kept.extend(column.iter().zip(&mask).filter(|(_, &m)| !m).map(|(&v, _)| v));
        let (m, s) = mean_std(&kept).expect("at least one unmasked value");
        let limit = threshold * s;
        let mut changed = false;
        for (v, flag) in column.iter().zip(mask.iter_mut()) {
            if !*flag && (*v - m).abs() > limit {
                *flag = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        if mask.iter().all(|&f| f) {
            return Err(Error::Degenerate("every value of a feature was marked as outlier".into()));
        }
    }
    Ok(OutlierMask { mask, iterations })
}

/// Marks outliers per subject and feature, overwriting `matrix.outlier_mask`.
pub fn mark_outliers<T: Scalar>(matrix: &mut FeatureMatrix<T>, threshold: f64) -> Result<()> {
    let threshold = T::of(threshold);
    let subjects = matrix.subjects();
    let mut mask = Array2::from_elem(matrix.values.raw_dim(), false);
    for subject in &subjects {
        let rows = matrix.rows_of(subject);
        let values = &matrix.values;
        let columns: Vec<Vec<bool>> = (0..matrix.n_features())
            .into_par_iter()
            .map(|f| {
                let col: Vec<T> = rows.iter().map(|&r| values[[r, f]]).collect();
                if col.len() < 2 {
                    return Ok(vec![false; col.len()]);
                }
                mark_outliers_iterative(&col, threshold)
                    .map(|m| m.mask)
                    .map_err(|e| Error::Degenerate(format!("{subject}, feature {f}: {e}")))
            })
            .collect::<Result<_>>()?;
        for (f, col) in columns.into_iter().enumerate() {
            for (&r, m) in rows.iter().zip(col) {
                mask[[r, f]] = m;
            }
        }
    }
    matrix.outlier_mask = mask;
    Ok(())
}

/// Standardises every subject's unmasked cells to mean 0 / std 1 per
/// feature. Masked cells are left untouched; a feature that is constant for
/// a subject becomes all zeros and is flagged.
pub fn normalize_per_subject<T: Scalar>(
    matrix: &FeatureMatrix<T>,
) -> Result<(FeatureMatrix<T>, NormalizationParams<T>)> {
    let subjects = matrix.subjects();
    let n_feat = matrix.n_features();
    let mut out = matrix.clone();
    let mut mean = Array2::zeros((subjects.len(), n_feat));
    let mut std = Array2::zeros((subjects.len(), n_feat));
    let mut constant = Array2::from_elem((subjects.len(), n_feat), false);
    for (s, subject) in subjects.iter().enumerate() {
        let rows = matrix.rows_of(subject);
        let stats: Vec<(T, T)> = (0..n_feat)
            .into_par_iter()
            .map(|f| {
                let kept: Vec<T> = rows
                    .iter()
                    .filter(|&&r| !matrix.outlier_mask[[r, f]])
                    .map(|&r| matrix.values[[r, f]])
                    .collect();
                mean_std(&kept).unwrap_or((T::zero(), T::zero()))
            })
            .collect();
        for (f, &(m, sd)) in stats.iter().enumerate() {
            mean[[s, f]] = m;
            std[[s, f]] = sd;
            let is_const = sd <= T::zero();
            constant[[s, f]] = is_const;
            for &r in &rows {
                if matrix.outlier_mask[[r, f]] {
                    continue;
                }
                out.values[[r, f]] = if is_const {
                    T::zero()
                } else {
                    (matrix.values[[r, f]] - m) / sd
                };
            }
        }
    }
    let n_const = constant.iter().filter(|&&c| c).count();
    if n_const > 0 {
        log::warn!("{n_const} (subject, feature) pairs were constant and set to zero");
    }
    let params = NormalizationParams { subjects, mean, std, constant };
    out.normalization = Some(params.clone());
    Ok((out, params))
}

/// How masked cells of the held-out subject are treated at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMode {
    /// Replace with the training-fold mean, like training rows.
    #[default]
    TrainingMean,
    /// Leave the standardised outlier value in place.
    KeepHeldOut,
}

/// Imputed copy of a matrix plus the features that had no unmasked training
/// value (imputed with 0).
#[derive(Debug, Clone)]
pub struct Imputed<T> {
    pub matrix: FeatureMatrix<T>,
    pub empty_features: Vec<usize>,
}

/// Replaces masked cells by the mean of that feature over the unmasked
/// cells of the training subjects' rows.
pub fn impute_outliers<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    training_subjects: &[String],
    mode: ImputeMode,
) -> Result<Imputed<T>> {
    let is_train: Vec<bool> = matrix
        .meta
        .iter()
        .map(|m| training_subjects.contains(&m.subject_id))
        .collect();
    if !is_train.iter().any(|&t| t) {
        return Err(Error::Data("imputation fold has no training rows".into()));
    }
    let means = training_means(matrix, &is_train);
    let mut out = matrix.clone();
    let mut empty_features = Vec::new();
    for (f, fill) in means.iter().enumerate() {
        let fill = match fill {
            Some(v) => *v,
            None => {
                empty_features.push(f);
                T::zero()
            }
        };
        for r in 0..matrix.n_rows() {
            if matrix.outlier_mask[[r, f]] && (is_train[r] || mode == ImputeMode::TrainingMean) {
                out.values[[r, f]] = fill;
            }
        }
    }
    if !empty_features.is_empty() {
        log::warn!("{} features had no unmasked training value", empty_features.len());
    }
    Ok(Imputed { matrix: out, empty_features })
}

fn training_means<T: Scalar>(matrix: &FeatureMatrix<T>, is_train: &[bool]) -> Vec<Option<T>> {
    (0..matrix.n_features())
        .into_par_iter()
        .map(|f| {
            let mut acc = T::zero();
            let mut n = 0usize;
            for r in 0..matrix.n_rows() {
                if is_train[r] && !matrix.outlier_mask[[r, f]] {
                    acc += matrix.values[[r, f]];
                    n += 1;
                }
            }
            (n > 0).then(|| acc / T::of(n as f64))
        })
        .collect()
}
