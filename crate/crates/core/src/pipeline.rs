//! Stage functions shared by the command-line tool and the end-to-end
//! tests, plus an in-memory run over a synthetic dataset.

use ndarray::Array2;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::dsp::{self, design_highpass_butterworth};
use crate::error::{Error, Result};
use crate::evaluate::{fold_data, run_crossval, CrossvalReport, Fold};
use crate::features::{FeatureMatrix, RowMeta};
use crate::forest::{Forest, PermutationImportance, PermutationScheme};
use crate::importance::{topomap_grid, ImportanceReport, TopoGrid};
use crate::layout::FeatureLayout;
use crate::montage::Montage;
use crate::recording::{Recording, TrialEvent};
use crate::robust::{mark_outliers, normalize_per_subject};
use crate::scalar::Scalar;
use crate::spectral::{identify_mu_band, FeatureExtractor, SubjectBands};
use crate::synth::{generate_dataset, Profile};

/// Channels present in every list, in the order of the first list.
pub fn common_channels(lists: &[&[String]]) -> Result<Vec<String>> {
    let first = lists.first().ok_or_else(|| Error::Data("no recordings".into()))?;
    let common: Vec<String> =
        first.iter().filter(|c| lists.iter().all(|l| l.contains(c))).cloned().collect();
    if common.len() < 2 {
        return Err(Error::Data(format!("only {} channels are common to all recordings", common.len())));
    }
    Ok(common)
}

/// Laplacian on the subject's own channels, restriction to the common set,
/// zero-phase highpass, common average reference.
pub fn preprocess_recording<T: Scalar>(
    recording: &Recording<T>,
    montage: &Montage,
    common: &[String],
    cfg: &PipelineConfig,
) -> Result<Recording<T>> {
    let spatial = dsp::laplacian(recording, montage)?;
    let selected = dsp::select_channels(&spatial, common)?;
    let filter = design_highpass_butterworth(cfg.dsp.order, cfg.dsp.cutoff, recording.sample_rate)?;
    dsp::filter_and_reference(&selected, &filter)
}

/// μ band from the override table or from the processed resting data.
pub fn subject_bands<T: Scalar>(
    subject: &str,
    resting: Option<&Recording<T>>,
    cfg: &PipelineConfig,
) -> Result<SubjectBands> {
    let s = &cfg.spectral;
    let mu = match (s.mu_overrides.get(subject), resting) {
        (Some(b), _) => *b,
        (None, Some(rest)) => {
            let names: Vec<&str> = s.mu_channels.iter().map(String::as_str).collect();
            identify_mu_band(rest, &names, &s.mu_search)?
        }
        (None, None) => {
            return Err(Error::Data(format!(
                "{subject}: no resting data and no spectral.mu_band.{subject} override"
            )))
        }
    };
    Ok(SubjectBands { subject_id: subject.to_string(), mu, beta: s.beta })
}

/// Feature rows of one subject's trials.
pub fn trial_features<T: Scalar>(
    processed: &Recording<T>,
    events: &[TrialEvent],
    bands: &SubjectBands,
    layout: &FeatureLayout,
) -> Result<(Vec<Vec<T>>, Vec<RowMeta>)> {
    let trial_len = layout.trial_len();
    let rows: Vec<(Vec<T>, usize)> = events
        .par_iter()
        .map_init(
            || FeatureExtractor::new(layout, processed.sample_rate),
            |ex, ev| {
                let ex = ex.as_mut().map_err(|e| Error::Config(e.to_string()))?;
                let samples = dsp::crop_trial(processed, ev.onset, trial_len)?;
                ex.extract(&samples, bands)
            },
        )
        .collect::<Result<_>>()?;
    let floored: usize = rows.iter().map(|(_, f)| f).sum();
    if floored > 0 {
        log::warn!("{}: {floored} band powers were zero and floored", processed.subject_id);
    }
    let meta = events
        .iter()
        .map(|e| RowMeta { subject_id: processed.subject_id.clone(), session: e.session, label: e.label })
        .collect();
    Ok((rows.into_iter().map(|(r, _)| r).collect(), meta))
}

/// Collects subjects' feature rows, then marks outliers and standardises.
pub struct FeatureBuilder<T> {
    layout: FeatureLayout,
    channels: Vec<String>,
    values: Vec<T>,
    meta: Vec<RowMeta>,
    bands: Vec<SubjectBands>,
}

impl<T: Scalar> FeatureBuilder<T> {
    pub fn new(layout: FeatureLayout, channels: Vec<String>) -> Self {
        Self { layout, channels, values: Vec::new(), meta: Vec::new(), bands: Vec::new() }
    }

    pub fn add_subject(&mut self, rows: Vec<Vec<T>>, meta: Vec<RowMeta>, bands: SubjectBands) {
        for r in rows {
            self.values.extend(r);
        }
        self.meta.extend(meta);
        self.bands.push(bands);
    }

    pub fn finish(self, sigma: f64) -> Result<FeatureMatrix<T>> {
        let p = self.layout.total_features();
        let values = Array2::from_shape_vec((self.meta.len(), p), self.values)
            .map_err(|_| Error::Data("feature rows of unequal width".into()))?;
        let mut m = FeatureMatrix::new(self.layout, self.channels, values, self.meta, self.bands)?;
        mark_outliers(&mut m, sigma)?;
        Ok(normalize_per_subject(&m)?.0)
    }
}

/// Permutation importance of one fold's forest on its training rows.
pub fn fold_importance<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    fold: &Fold,
    forest: &Forest<T>,
    cfg: &PipelineConfig,
) -> Result<PermutationImportance> {
    let data = fold_data(matrix, fold, cfg.robust.impute)?;
    forest.permutation_importance(data.train_x.view(), &data.train_y, PermutationScheme::Random)
}

/// Cross-validation and importance analysis of a finished feature matrix.
pub struct Analysis {
    pub crossval: CrossvalReport,
    pub importance: ImportanceReport,
    pub fold_importances: Vec<PermutationImportance>,
}

pub fn analyse<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    cfg: &PipelineConfig,
    mut keep_forest: impl FnMut(&Fold, &Forest<T>) -> Result<()>,
) -> Result<Analysis> {
    let mut fold_importances = Vec::new();
    let crossval = run_crossval(matrix, &cfg.crossval(), |fold, forest| {
        keep_forest(fold, &forest)?;
        let imp = fold_importance(matrix, fold, &forest, cfg).map_err(|e| Error::Fold {
            fold: fold.index,
            subject: fold.test.clone(),
            source: Box::new(e),
        })?;
        fold_importances.push(imp);
        Ok(())
    })?;
    let scores: Vec<Vec<f64>> = fold_importances.iter().map(|i| i.scores.clone()).collect();
    let importance = ImportanceReport::build(&scores, &matrix.layout, &matrix.channels)?;
    Ok(Analysis { crossval, importance, fold_importances })
}

/// Topographic grids of CISμ and CISβ over the analysed channels.
pub fn topomaps(report: &ImportanceReport, montage: &Montage, resolution: usize) -> Result<(TopoGrid, TopoGrid)> {
    let positions = channel_positions(&report.channels, montage)?;
    Ok((
        topomap_grid(&report.cis_mu, &positions, resolution)?,
        topomap_grid(&report.cis_beta, &positions, resolution)?,
    ))
}

pub fn channel_positions(channels: &[String], montage: &Montage) -> Result<Vec<[f64; 2]>> {
    channels
        .iter()
        .map(|c| montage.position_of(c).ok_or_else(|| Error::Data(format!("channel {c} has no montage position"))))
        .collect()
}

/// Features of a generated dataset, computed subject by subject.
pub fn synthetic_features(cfg: &PipelineConfig) -> Result<(Montage, FeatureMatrix<f64>)> {
    let profile = Profile::by_name(&cfg.synth.profile)?;
    let data = generate_dataset::<f32>(&profile, &cfg.synth.effect, cfg.synth.seed)?;
    let lists: Vec<&[String]> = data.subjects.iter().map(|s| s.recording.channels.as_slice()).collect();
    let common = common_channels(&lists)?;
    let layout = cfg.layout(common.len())?;
    let mut builder = FeatureBuilder::new(layout.clone(), common.clone());
    for s in &data.subjects {
        let rec = preprocess_recording(&s.recording.cast::<f64>(), &data.montage, &common, cfg)?;
        let rest = preprocess_recording(&s.resting.cast::<f64>(), &data.montage, &common, cfg)?;
        let bands = subject_bands(&rec.subject_id, Some(&rest), cfg)?;
        let (rows, meta) = trial_features(&rec, &s.events, &bands, &layout)?;
        builder.add_subject(rows, meta, bands);
    }
    Ok((data.montage, builder.finish(cfg.robust.sigma)?))
}

/// Whole chain on a synthetic dataset without touching the filesystem.
pub fn run_synthetic(cfg: &PipelineConfig) -> Result<(FeatureMatrix<f64>, Analysis)> {
    cfg.validate()?;
    let (_, features) = synthetic_features(cfg)?;
    let analysis = analyse(&features, cfg, |_, _| Ok(()))?;
    Ok((features, analysis))
}
