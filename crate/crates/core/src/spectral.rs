//! Hann-windowed periodogram bandpower, μ-band identification from resting
//! data, and the per-trial feature vector.
//!
//! Periodogram convention: the segment is multiplied by a symmetric Hann
//! window (no amplitude correction), transformed without zero padding, and
//! the one-sided power `|X_k|² / N` is kept for bins `0..=N/2`. A band sums
//! the bins whose center frequency lies in the closed interval
//! `[low, high]`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::trial_samples;
use crate::error::{Error, Result};
use crate::layout::{BandKind, FeatureLayout, Slot};
use crate::recording::Recording;
use crate::scalar::Scalar;

/// Value substituted for the log of an all-zero band: `ln(1e-20)`.
pub const LOG_FLOOR_EPS: f64 = 1e-20;

const BIN_TOLERANCE: f64 = 1e-9;

/// Frequency band in Hz, closed on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && low < high && high.is_finite()) {
            return Err(Error::Config(format!("invalid band {low}-{high} Hz")));
        }
        Ok(Self { low, high })
    }

    pub const BETA: Band = Band { low: 20.0, high: 30.0 };

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn check_nyquist(&self, sample_rate: f64) -> Result<()> {
        if self.high > sample_rate / 2.0 + BIN_TOLERANCE {
            return Err(Error::Config(format!(
                "band {}-{} Hz exceeds Nyquist at {sample_rate} Hz",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn contains(&self, freq: f64) -> bool {
        freq >= self.low - BIN_TOLERANCE && freq <= self.high + BIN_TOLERANCE
    }

    /// Parses `LOW:HIGH`.
    pub fn parse(text: &str) -> Result<Self> {
        let (lo, hi) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("band `{text}` must be LOW:HIGH")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("band `{text}` must be LOW:HIGH")))
        };
        Self::new(parse(lo)?, parse(hi)?)
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.low, self.high)
    }
}

/// The two bands used for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBands {
    pub subject_id: String,
    pub mu: Band,
    pub beta: Band,
}

impl SubjectBands {
    pub fn get(&self, kind: BandKind) -> Band {
        match kind {
            BandKind::Mu => self.mu,
            BandKind::Beta => self.beta,
        }
    }
}

/// A log-bandpower value; `floored` marks an all-zero band replaced by
/// `ln(1e-20)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPower<T> {
    pub value: T,
    pub floored: bool,
}

impl<T: Scalar> LogPower<T> {
    fn from_power(power: T) -> Self {
        if power > T::zero() {
            Self { value: power.ln(), floored: false }
        } else {
            Self { value: T::of(LOG_FLOOR_EPS.ln()), floored: true }
        }
    }
}

/// Reusable FFT plan, Hann window and scratch buffers for one segment length.
pub struct Periodogram<T: Scalar> {
    len: usize,
    sample_rate: f64,
    fft: Arc<dyn Fft<T>>,
    window: Vec<T>,
    buffer: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    power: Vec<T>,
}

impl<T: Scalar> Periodogram<T> {
    pub fn new(len: usize, sample_rate: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::Data(format!("segment of {len} samples too short for a periodogram")));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        let denom = (len - 1) as f64;
        let window = (0..len)
            .map(|n| T::of(0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos()))
            .collect();
        let scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
        Ok(Self {
            len,
            sample_rate,
            fft,
            window,
            buffer: vec![Complex::new(T::zero(), T::zero()); len],
            scratch,
            power: vec![T::zero(); len / 2 + 1],
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Frequency of bin `k` in Hz.
    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.len as f64
    }

    /// One-sided power `|X_k|² / N`, bins `0..=N/2`.
    pub fn power<'a>(&mut self, segment: impl IntoIterator<Item = &'a T>) -> &[T] {
        let mut n = 0;
        for ((b, &x), &w) in self.buffer.iter_mut().zip(segment).zip(&self.window) {
            *b = Complex::new(x * w, T::zero());
            n += 1;
        }
        assert_eq!(n, self.len, "segment length differs from the planned length");
        self.fft.process_with_scratch(&mut self.buffer, &mut self.scratch);
        let scale = T::one() / T::of(self.len as f64);
        for (p, x) in self.power.iter_mut().zip(&self.buffer) {
            *p = x.norm_sqr() * scale;
        }
        &self.power
    }

    /// Bin range whose centers fall inside `band`.
    pub fn band_bins(&self, band: Band) -> std::ops::Range<usize> {
        let df = self.sample_rate / self.len as f64;
        let last = self.len / 2;
        let lo = ((band.low / df) - BIN_TOLERANCE).ceil().max(0.0) as usize;
        let hi = (((band.high / df) + BIN_TOLERANCE).floor() as usize).min(last);
        if lo > hi {
            lo..lo
        } else {
            lo..hi + 1
        }
    }

    /// Log-bandpower of several bands from a single transform.
    pub fn log_bandpowers<'a>(
        &mut self,
        segment: impl IntoIterator<Item = &'a T>,
        bands: &[Band],
    ) -> Result<Vec<LogPower<T>>> {
        let ranges: Vec<_> = bands
            .iter()
            .map(|&b| {
                b.check_nyquist(self.sample_rate)?;
                let r = self.band_bins(b);
                if r.is_empty() {
                    Err(Error::Config(format!(
                        "band {b} contains no bin at {} Hz resolution",
                        self.sample_rate / self.len as f64
                    )))
                } else {
                    Ok(r)
                }
            })
            .collect::<Result<_>>()?;
        let power = self.power(segment);
        Ok(ranges
            .into_iter()
            .map(|r| LogPower::from_power(power[r].iter().copied().sum::<T>()))
            .collect())
    }
}

/// Natural log of the Hann-windowed periodogram power summed over `band`.
pub fn log_bandpower<T: Scalar>(segment: &[T], band: Band, sample_rate: f64) -> Result<LogPower<T>> {
    let mut pg = Periodogram::new(segment.len(), sample_rate)?;
    Ok(pg.log_bandpowers(segment, &[band])?[0])
}

/// Parameters of the μ-band search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MuSearch {
    /// Search range in Hz; candidate edges are integers inside it.
    pub range: (f64, f64),
    /// Allowed band widths in Hz.
    pub widths: Vec<u32>,
    /// Length of the averaged periodogram segments.
    pub segment_seconds: f64,
    /// Minimum resting-state duration.
    pub min_duration: f64,
}

impl Default for MuSearch {
    fn default() -> Self {
        Self {
            range: (8.0, 15.0),
            widths: vec![1, 2, 3],
            segment_seconds: 1.0,
            min_duration: 60.0,
        }
    }
}

/// Average one-sided periodogram over consecutive non-overlapping segments
/// of the named channels.
fn averaged_spectrum<T: Scalar>(
    resting: &Recording<T>,
    rows: &[usize],
    seg_len: usize,
) -> Result<(Vec<f64>, Periodogram<T>)> {
    let mut pg = Periodogram::new(seg_len, resting.sample_rate)?;
    let n_segments = resting.n_samples() / seg_len;
    let mut acc = vec![0.0f64; seg_len / 2 + 1];
    for &r in rows {
        let row = resting.samples.row(r);
        for s in 0..n_segments {
            let seg = row.slice(ndarray::s![s * seg_len..(s + 1) * seg_len]);
            for (a, &p) in acc.iter_mut().zip(pg.power(seg.iter())) {
                *a += p.as_f64();
            }
        }
    }
    let count = (rows.len() * n_segments) as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok((acc, pg))
}

/// Selects the μ band: among integer-edged candidates of the allowed widths
/// inside the search range, the one with the highest mean power per bin over
/// the given channels. Ties go to the lower frequency, then the smaller
/// width.
pub fn identify_mu_band<T: Scalar>(
    resting: &Recording<T>,
    channels: &[&str],
    search: &MuSearch,
) -> Result<Band> {
    if resting.duration() + 1e-9 < search.min_duration {
        return Err(Error::Data(format!(
            "{}: resting segment of {:.1} s is shorter than {} s",
            resting.subject_id,
            resting.duration(),
            search.min_duration
        )));
    }
    let rows: Vec<usize> = channels
        .iter()
        .map(|c| {
            resting.channel_index(c).ok_or_else(|| {
                Error::Data(format!("{}: channel {c} missing from resting data", resting.subject_id))
            })
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::Config("μ identification needs at least one channel".into()));
    }
    let seg_len = trial_samples(search.segment_seconds, resting.sample_rate);
    let (spectrum, pg) = averaged_spectrum(resting, &rows, seg_len)?;

    let mut widths = search.widths.clone();
    widths.sort_unstable();
    widths.dedup();
    let first = search.range.0.ceil() as u32;
    let last = search.range.1.floor() as u32;
    let mut best: Option<(f64, Band)> = None;
    for low in first..last {
        for &w in &widths {
            let high = low + w;
            if high > last {
                continue;
            }
            let band = Band::new(low as f64, high as f64)?;
            let bins = pg.band_bins(band);
            if bins.is_empty() {
                continue;
            }
            let score = spectrum[bins.clone()].iter().sum::<f64>() / bins.len() as f64;
            let better = match best {
                None => true,
                Some((s, _)) => score > s * (1.0 + 1e-9),
            };
            if better {
                best = Some((score, band));
            }
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::Config("μ search range admits no candidate band".into()))
}

/// Reusable per-thread feature extractor for one layout and sample rate.
pub struct FeatureExtractor<T: Scalar> {
    layout: FeatureLayout,
    sample_rate: f64,
    trial_len: usize,
    window_len: usize,
    window_starts: Vec<usize>,
    window_pg: Periodogram<T>,
    trial_pg: Periodogram<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(layout: &FeatureLayout, sample_rate: f64) -> Result<Self> {
        let trial_len = trial_samples(layout.trial_len(), sample_rate);
        let window_len = trial_samples(layout.window_len(), sample_rate);
        let window_starts: Vec<usize> = layout
            .windows()
            .iter()
            .map(|w| (w.start * sample_rate).round() as usize)
            .collect();
        if window_starts.iter().any(|&s| s + window_len > trial_len) {
            return Err(Error::Config("sliding window extends beyond the trial".into()));
        }
        Ok(Self {
            layout: layout.clone(),
            sample_rate,
            trial_len,
            window_len,
            window_starts,
            window_pg: Periodogram::new(window_len, sample_rate)?,
            trial_pg: Periodogram::new(trial_len, sample_rate)?,
        })
    }

    pub fn window_starts(&self) -> &[usize] {
        &self.window_starts
    }

    /// One feature row; returns the values and the number of floored entries.
    pub fn extract(&mut self, samples: &Array2<T>, bands: &SubjectBands) -> Result<(Vec<T>, usize)> {
        if samples.nrows() != self.layout.n_channels() {
            return Err(Error::Data(format!(
                "trial has {} channels, layout expects {}",
                samples.nrows(),
                self.layout.n_channels()
            )));
        }
        if samples.ncols() != self.trial_len {
            return Err(Error::Data(format!(
                "trial has {} samples, expected {} ({} s at {} Hz)",
                samples.ncols(),
                self.trial_len,
                self.layout.trial_len(),
                self.sample_rate
            )));
        }
        let bands_arr = [bands.mu, bands.beta];
        let mut out = vec![T::zero(); self.layout.total_features()];
        let mut floored = 0;
        for (c, row) in samples.outer_iter().enumerate() {
            let mut put = |slot: Slot, vals: &[LogPower<T>]| {
                for (kind, lp) in BandKind::ALL.iter().zip(vals) {
                    let idx = self.layout.feature_index(c, *kind, slot).expect("in layout");
                    out[idx] = lp.value;
                    floored += lp.floored as usize;
                }
            };
            for (w, &start) in self.window_starts.iter().enumerate() {
                let seg: ArrayView1<T> = row.slice(ndarray::s![start..start + self.window_len]);
                let vals = self.window_pg.log_bandpowers(seg.iter(), &bands_arr)?;
                put(Slot::Window(w), &vals);
            }
            let vals = self.trial_pg.log_bandpowers(row.iter(), &bands_arr)?;
            put(Slot::Whole, &vals);
        }
        Ok((out, floored))
    }
}

/// Feature row of one trial under `layout`.
pub fn extract_features<T: Scalar>(
    samples: &Array2<T>,
    sample_rate: f64,
    bands: &SubjectBands,
    layout: &FeatureLayout,
) -> Result<Vec<T>> {
    Ok(FeatureExtractor::new(layout, sample_rate)?.extract(samples, bands)?.0)
}
