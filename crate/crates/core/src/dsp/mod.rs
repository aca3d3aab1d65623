//! Time-domain preprocessing: Laplacian, channel intersection, zero-phase
//! highpass, common average reference, trial cropping.
//!
//! The stages are meant to run in exactly that order; [`preprocess`] chains
//! the per-recording ones.

mod filter;

pub use filter::{design_highpass_butterworth, filtfilt, IirFilter, Section};

use std::collections::HashSet;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::montage::Montage;
use crate::recording::Recording;
use crate::scalar::Scalar;

/// Subtracts from each channel the mean of its montage neighbors that are
/// present in the recording.
pub fn laplacian<T: Scalar>(recording: &Recording<T>, montage: &Montage) -> Result<Recording<T>> {
    let present: Vec<Option<usize>> = montage
        .channels()
        .iter()
        .map(|name| recording.channel_index(name))
        .collect();
    let mut out = recording.samples.clone();
    for (c, name) in recording.channels.iter().enumerate() {
        let m = montage
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("channel {name} is not in the montage")))?;
        let rows: Vec<usize> = montage
            .neighbors(m)
            .iter()
            .filter_map(|&j| present[j])
            .collect();
        if rows.is_empty() {
            return Err(Error::Config(format!(
                "channel {name} of {} has no neighbor present for the Laplacian",
                recording.subject_id
            )));
        }
        let w = T::one() / T::of(rows.len() as f64);
        let mut target = out.row_mut(c);
        for &r in &rows {
            let src = recording.samples.row(r);
            target.zip_mut_with(&src, |o, &s| *o -= w * s);
        }
    }
    Ok(Recording {
        samples: out,
        ..recording.clone()
    })
}

/// Keeps only the channels present in every recording. The returned order
/// follows the first recording.
pub fn intersect_channels<T: Scalar>(
    recordings: &[Recording<T>],
) -> Result<(Vec<String>, Vec<Recording<T>>)> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::Data("channel intersection needs at least one recording".into()))?;
    let sets: Vec<HashSet<&str>> = recordings
        .iter()
        .map(|r| r.channels.iter().map(String::as_str).collect())
        .collect();
    let common: Vec<String> = first
        .channels
        .iter()
        .filter(|c| sets.iter().all(|s| s.contains(c.as_str())))
        .cloned()
        .collect();
    if common.is_empty() {
        return Err(Error::Data("recordings share no common channel".into()));
    }
    let cropped = recordings
        .iter()
        .map(|r| select_channels(r, &common))
        .collect::<Result<Vec<_>>>()?;
    Ok((common, cropped))
}

/// Reorders/restricts a recording to `names`.
pub fn select_channels<T: Scalar>(recording: &Recording<T>, names: &[String]) -> Result<Recording<T>> {
    let rows: Vec<usize> = names
        .iter()
        .map(|n| {
            recording.channel_index(n).ok_or_else(|| {
                Error::Data(format!("{} lacks channel {n}", recording.subject_id))
            })
        })
        .collect::<Result<_>>()?;
    Ok(Recording {
        subject_id: recording.subject_id.clone(),
        sample_rate: recording.sample_rate,
        channels: names.to_vec(),
        samples: recording.samples.select(Axis(0), &rows),
    })
}

/// Zero-phase filtering of every channel.
pub fn highpass<T: Scalar>(recording: &Recording<T>, filter: &IirFilter<T>) -> Result<Recording<T>> {
    if (filter.sample_rate() - recording.sample_rate).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "filter designed for {} Hz applied to {} Hz data",
            filter.sample_rate(),
            recording.sample_rate
        )));
    }
    let inputs: Vec<Vec<T>> = recording.samples.outer_iter().map(|r| r.to_vec()).collect();
    let rows: Vec<Vec<T>> = inputs
        .par_iter()
        .map(|row| filtfilt(filter, row))
        .collect::<Result<_>>()?;
    let n = recording.n_samples();
    let data: Vec<T> = rows.into_iter().flatten().collect();
    Ok(Recording {
        samples: Array2::from_shape_vec((recording.n_channels(), n), data)
            .expect("filtfilt preserves length"),
        ..recording.clone()
    })
}

/// Subtracts the instantaneous mean over channels.
pub fn common_average_reference<T: Scalar>(recording: &Recording<T>) -> Result<Recording<T>> {
    if recording.n_channels() < 2 {
        return Err(Error::Data(format!(
            "{}: common average reference needs at least two channels",
            recording.subject_id
        )));
    }
    let mean = recording
        .samples
        .mean_axis(Axis(0))
        .expect("non-empty channel axis");
    let mut samples = recording.samples.clone();
    for mut row in samples.outer_iter_mut() {
        row.zip_mut_with(&mean, |v, &m| *v -= m);
    }
    Ok(Recording {
        samples,
        ..recording.clone()
    })
}

/// Number of samples in a trial of `seconds` at `sample_rate`.
pub fn trial_samples(seconds: f64, sample_rate: f64) -> usize {
    (seconds * sample_rate).round() as usize
}

/// The `seconds`-long segment starting at sample `onset`.
pub fn crop_trial<T: Scalar>(recording: &Recording<T>, onset: usize, seconds: f64) -> Result<Array2<T>> {
    let len = trial_samples(seconds, recording.sample_rate);
    let end = onset.checked_add(len).filter(|&e| e <= recording.n_samples());
    match end {
        Some(end) => Ok(recording
            .samples
            .slice(ndarray::s![.., onset..end])
            .to_owned()),
        None => Err(Error::OutOfBounds {
            what: "trial end sample",
            index: onset.saturating_add(len),
            len: recording.n_samples(),
        }),
    }
}

/// Per-recording part of the chain for data already restricted to the common
/// channel set: highpass then common average reference.
pub fn filter_and_reference<T: Scalar>(
    recording: &Recording<T>,
    filter: &IirFilter<T>,
) -> Result<Recording<T>> {
    common_average_reference(&highpass(recording, filter)?)
}

/// Full chain over a set of subjects: Laplacian on each recording,
/// intersection to the common channels, highpass, common average reference.
pub fn preprocess<T: Scalar>(
    recordings: &[Recording<T>],
    montage: &Montage,
    order: usize,
    cutoff: f64,
) -> Result<(Vec<String>, Vec<Recording<T>>)> {
    let spatial = recordings
        .iter()
        .map(|r| laplacian(r, montage))
        .collect::<Result<Vec<_>>>()?;
    let (channels, common) = intersect_channels(&spatial)?;
    let out = common
        .iter()
        .map(|r| {
            let filter = design_highpass_butterworth(order, cutoff, r.sample_rate)?;
            filter_and_reference(r, &filter)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((channels, out))
}
