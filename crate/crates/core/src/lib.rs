//! Cross-subject decoding of index-finger position from EEG.
//!
//! The crate implements the whole offline chain: spatial and temporal
//! preprocessing ([`dsp`]), Hann-periodogram log-bandpower features
//! ([`spectral`]), iterative outlier marking and per-subject standardisation
//! ([`robust`]), a random forest with out-of-bag error and permutation
//! importance ([`forest`]), leave-one-subject-out evaluation with an exact
//! binomial test ([`evaluate`]), channel/window importance aggregation and
//! topographic maps ([`importance`]), and a seedable synthetic-EEG generator
//! ([`synth`]) that plants a class-dependent β burst for end-to-end checks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common concrete instantiations.

pub mod config;
pub mod dsp;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod forest;
pub mod fsutil;
pub mod importance;
pub mod layout;
pub mod montage;
pub mod pipeline;
pub mod recording;
pub mod rng;
pub mod robust;
pub mod scalar;
pub mod spectral;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use layout::{mtry_default, BandKind, FeatureLayout, Slot};
pub use montage::Montage;
pub use rng::seeded_rng;
pub use scalar::Scalar;
pub use spectral::{Band, SubjectBands};

pub type Recording = recording::Recording<f64>;
pub type Recording32 = recording::Recording<f32>;
pub type Trial = recording::Trial<f64>;
pub type Trial32 = recording::Trial<f32>;
pub type IirFilter = dsp::IirFilter<f64>;
pub type IirFilter32 = dsp::IirFilter<f32>;
pub type FeatureMatrix = features::FeatureMatrix<f64>;
pub type FeatureMatrix32 = features::FeatureMatrix<f32>;
pub type Forest = forest::Forest<f64>;
pub type Forest32 = forest::Forest<f32>;
pub type DecisionTree = forest::DecisionTree<f64>;
pub type NormalizationParams = robust::NormalizationParams<f64>;
