//! Flat feature layout: channel-major, then band (μ before β), then the
//! sliding windows followed by the whole-trial slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two spectral bands a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandKind {
    Mu,
    Beta,
}

impl BandKind {
    pub const ALL: [BandKind; 2] = [BandKind::Mu, BandKind::Beta];

    pub fn index(self) -> usize {
        match self {
            BandKind::Mu => 0,
            BandKind::Beta => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BandKind::Mu => "mu",
            BandKind::Beta => "beta",
        }
    }
}

/// Time slot of a feature: one of the sliding windows, or the whole trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Window(usize),
    Whole,
}

/// A sliding window in seconds relative to trial onset; `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub center: f64,
    pub start: f64,
    pub end: f64,
}

/// Geometry of the feature vector of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    n_channels: usize,
    trial_len: f64,
    window_len: f64,
    window_step: f64,
    windows: Vec<WindowSpec>,
}

impl FeatureLayout {
    /// Default timing: 3 s trials, 1 s windows stepped by 50 ms (41 windows).
    pub fn new(n_channels: usize) -> Self {
        Self::with_timing(n_channels, 3.0, 1.0, 0.05).expect("default timing is valid")
    }

    pub fn with_timing(
        n_channels: usize,
        trial_len: f64,
        window_len: f64,
        window_step: f64,
    ) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::Config("feature layout needs at least one channel".into()));
        }
        if !(window_len > 0.0 && window_step > 0.0 && window_len <= trial_len) {
            return Err(Error::Config(format!(
                "window length {window_len} s / step {window_step} s incompatible with {trial_len} s trials"
            )));
        }
        let span = trial_len - window_len;
        let steps = (span / window_step + 1e-9).floor() as usize;
        let windows = (0..=steps)
            .map(|i| {
                let start = i as f64 * window_step;
                WindowSpec {
                    center: start + window_len / 2.0,
                    start,
                    end: start + window_len,
                }
            })
            .collect();
        Ok(Self {
            n_channels,
            trial_len,
            window_len,
            window_step,
            windows,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// Sliding windows plus the whole-trial slot.
    pub fn slots_per_band(&self) -> usize {
        self.windows.len() + 1
    }

    pub fn features_per_channel(&self) -> usize {
        2 * self.slots_per_band()
    }

    pub fn total_features(&self) -> usize {
        self.n_channels * self.features_per_channel()
    }

    pub fn windows(&self) -> &[WindowSpec] {
        &self.windows
    }

    pub fn trial_len(&self) -> f64 {
        self.trial_len
    }

    pub fn window_len(&self) -> f64 {
        self.window_len
    }

    pub fn window_step(&self) -> f64 {
        self.window_step
    }

    pub fn feature_index(&self, channel: usize, band: BandKind, slot: Slot) -> Result<usize> {
        if channel >= self.n_channels {
            return Err(Error::OutOfBounds {
                what: "channel",
                index: channel,
                len: self.n_channels,
            });
        }
        let w = match slot {
            Slot::Window(w) if w < self.windows.len() => w,
            Slot::Window(w) => {
                return Err(Error::OutOfBounds {
                    what: "window",
                    index: w,
                    len: self.windows.len(),
                })
            }
            Slot::Whole => self.windows.len(),
        };
        Ok((channel * 2 + band.index()) * self.slots_per_band() + w)
    }

    pub fn feature_coords(&self, index: usize) -> Result<(usize, BandKind, Slot)> {
        if index >= self.total_features() {
            return Err(Error::OutOfBounds {
                what: "feature",
                index,
                len: self.total_features(),
            });
        }
        let per = self.slots_per_band();
        let w = index % per;
        let cb = index / per;
        let band = if cb.is_multiple_of(2) { BandKind::Mu } else { BandKind::Beta };
        let slot = if w == self.windows.len() { Slot::Whole } else { Slot::Window(w) };
        Ok((cb / 2, band, slot))
    }

    /// Contiguous flat range holding all slots of `(channel, band)`.
    pub fn band_range(&self, channel: usize, band: BandKind) -> std::ops::Range<usize> {
        let start = (channel * 2 + band.index()) * self.slots_per_band();
        start..start + self.slots_per_band()
    }
}

/// Default number of split candidates per node: ⌊√p⌋, at least 1.
pub fn mtry_default(p: usize) -> usize {
    let mut r = (p as f64).sqrt() as usize;
    while r * r > p {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= p {
        r += 1;
    }
    r.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_counts() {
        let layout = FeatureLayout::new(106);
        assert_eq!(layout.n_windows(), 41);
        assert_eq!(layout.features_per_channel(), 84);
        assert_eq!(layout.total_features(), 8904);
    }

    #[test]
    fn window_centers_arithmetic() {
        let layout = FeatureLayout::new(1);
        let w = layout.windows();
        assert_eq!(w.len(), 41);
        for (i, win) in w.iter().enumerate() {
            assert!((win.center - (0.5 + 0.05 * i as f64)).abs() < 1e-12);
            assert!(win.start >= -1e-12 && win.end <= 3.0 + 1e-12);
        }
        assert!((w[0].start - 0.0).abs() < 1e-12);
        assert!((w[40].end - 3.0).abs() < 1e-9);
    }

    #[test]
    fn first_and_last_index() {
        let layout = FeatureLayout::new(106);
        assert_eq!(layout.feature_index(0, BandKind::Mu, Slot::Window(0)).unwrap(), 0);
        assert_eq!(layout.feature_index(105, BandKind::Beta, Slot::Whole).unwrap(), 8903);
    }

    #[test]
    fn full_bijection_by_enumeration() {
        let layout = FeatureLayout::new(106);
        let mut seen = vec![false; layout.total_features()];
        let mut last = None;
        for c in 0..106 {
            for band in BandKind::ALL {
                let slots = (0..41).map(Slot::Window).chain(std::iter::once(Slot::Whole));
                for slot in slots {
                    let i = layout.feature_index(c, band, slot).unwrap();
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(layout.feature_coords(i).unwrap(), (c, band, slot));
                    last = Some(i);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(last, Some(8903));
    }

    #[test]
    fn bounds_errors() {
        let layout = FeatureLayout::new(4);
        assert!(layout.feature_index(4, BandKind::Mu, Slot::Whole).is_err());
        assert!(layout.feature_index(0, BandKind::Mu, Slot::Window(41)).is_err());
        assert!(layout.feature_coords(4 * 84).is_err());
    }

    #[test]
    fn mtry_values() {
        assert_eq!(mtry_default(8904), 94);
        assert_eq!(mtry_default(1), 1);
        assert_eq!(mtry_default(100), 10);
        assert_eq!(mtry_default(0), 1);
        for p in 1..5000usize {
            let m = mtry_default(p);
            assert!(m * m <= p && (m + 1) * (m + 1) > p);
        }
    }
}
