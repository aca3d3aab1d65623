//! Seedable synthetic EEG with the paradigm's trial structure and a planted
//! class-dependent β burst.
//!
//! Each subject gets a continuous recording (1/f background per channel, a
//! small common-mode component, a μ rhythm at the sensorimotor channels, and
//! per trial a tapered 20–30 Hz burst at the effect channel in the first
//! second whose amplitude scales with the key's gain), its trial events, and
//! a separate resting recording with a subject-specific μ peak.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::montage::{Montage, DEFAULT_NEIGHBORS};
use crate::recording::{Recording, TrialEvent};
use crate::rng::{seeded_rng, stream_id, tag, Stream};
use crate::scalar::Scalar;
use crate::spectral::Band;

/// Optional μ amplitude modulation by key during the trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MuEffect {
    pub amplitude: f64,
    pub class_gains: [f64; 9],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSpec {
    pub effect_channel: String,
    pub effect_band: Band,
    /// Burst window relative to trial onset, seconds.
    pub effect_window: (f64, f64),
    pub class_gains: [f64; 9],
    /// Peak burst amplitude for gain 1.
    pub burst_amplitude: f64,
    /// Sustained β during the whole hold, scaled by the same gains.
    pub tonic_amplitude: f64,
    pub mu_channels: Vec<String>,
    /// Ongoing μ rhythm at `mu_channels`, task and rest.
    pub mu_amplitude: f64,
    /// Extra μ amplitude during the resting segment.
    pub mu_rest_amplitude: f64,
    pub mu_effect: Option<MuEffect>,
    pub noise_exponent: f64,
    pub noise_amplitude: f64,
    pub common_mode: f64,
}

/// `ratio^(k-1)` for keys 1..=9.
pub fn geometric_gains(ratio: f64) -> [f64; 9] {
    std::array::from_fn(|k| ratio.powi(k as i32))
}

impl Default for EffectSpec {
    fn default() -> Self {
        Self {
            effect_channel: "C3".into(),
            effect_band: Band::BETA,
            effect_window: (0.0, 1.0),
            class_gains: geometric_gains(1.15),
            burst_amplitude: 1.0,
            tonic_amplitude: 0.0,
            mu_channels: vec!["C3".into(), "C4".into()],
            mu_amplitude: 0.3,
            mu_rest_amplitude: 1.0,
            mu_effect: None,
            noise_exponent: 1.0,
            noise_amplitude: 1.0,
            common_mode: 0.3,
        }
    }
}

impl EffectSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.class_gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            bad.push("synth.class_gains: every gain must be positive".to_string());
        }
        let (a, b) = self.effect_window;
        if !(a >= 0.0 && b > a && b <= 3.0) {
            bad.push(format!("synth.effect_window: ({a}, {b}) must lie inside the 3 s trial"));
        }
        for (name, v) in [
            ("synth.burst_amplitude", self.burst_amplitude),
            ("synth.tonic_amplitude", self.tonic_amplitude),
            ("synth.mu_amplitude", self.mu_amplitude),
            ("synth.mu_rest_amplitude", self.mu_rest_amplitude),
            ("synth.noise_amplitude", self.noise_amplitude),
            ("synth.common_mode", self.common_mode),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("{name}: must be finite and non-negative, got {v}"));
            }
        }
        if !self.noise_exponent.is_finite() {
            bad.push("synth.noise_exponent: must be finite".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(bad))
        }
    }

    pub fn is_decodable(&self) -> bool {
        self.class_gains.iter().any(|g| *g != self.class_gains[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MontageKind {
    Desk32,
    Extended108,
}

impl MontageKind {
    pub fn build(self) -> Montage {
        match self {
            MontageKind::Desk32 => Montage::desk32(),
            MontageKind::Extended108 => Montage::extended108(),
        }
    }
}

/// Dataset scale and bookkeeping quirks.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub n_subjects: usize,
    pub sessions: usize,
    pub trials_per_session: usize,
    pub montage: MontageKind,
    pub sample_rate: f64,
    pub rest_seconds: f64,
    /// `(subject index, channel)` pairs left out of that subject's cap.
    pub missing_channels: Vec<(usize, String)>,
    /// `(subject index, count)`: trials lost at the end of the experiment.
    pub dropped_trials: Vec<(usize, usize)>,
}

impl Profile {
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            n_subjects: 4,
            sessions: 2,
            trials_per_session: 90,
            montage: MontageKind::Desk32,
            sample_rate: 500.0,
            rest_seconds: 64.0,
            missing_channels: vec![],
            dropped_trials: vec![],
        }
    }

    pub fn full() -> Self {
        Self {
            name: "full".into(),
            n_subjects: 20,
            sessions: 15,
            trials_per_session: 90,
            montage: MontageKind::Extended108,
            sample_rate: 2000.0,
            rest_seconds: 120.0,
            missing_channels: vec![(3, "I1".into()), (7, "I2".into())],
            dropped_trials: vec![(11, 1), (15, 300)],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown synth profile {other:?} (desk, full)"))),
        }
    }

    pub fn subject_id(&self, index: usize) -> String {
        format!("S{:02}", index + 1)
    }

    pub fn trials_for(&self, subject: usize) -> usize {
        let dropped: usize =
            self.dropped_trials.iter().filter(|(s, _)| *s == subject).map(|(_, n)| n).sum();
        (self.sessions * self.trials_per_session).saturating_sub(dropped)
    }

    pub fn total_trials(&self) -> usize {
        (0..self.n_subjects).map(|s| self.trials_for(s)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_subjects < 2 {
            bad.push(format!("synth.subjects: need at least 2, got {}", self.n_subjects));
        }
        if self.sessions == 0 {
            bad.push("synth.sessions: must be at least 1".into());
        }
        if self.trials_per_session == 0 || !self.trials_per_session.is_multiple_of(9) {
            bad.push(format!(
                "synth.trials_per_session: must be a positive multiple of 9, got {}",
                self.trials_per_session
            ));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate >= 100.0) {
            bad.push(format!("synth.sample_rate: must be at least 100 Hz, got {}", self.sample_rate));
        }
        if !(self.rest_seconds >= 60.0) {
            bad.push(format!("synth.rest_seconds: must be at least 60, got {}", self.rest_seconds));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(bad))
        }
    }
}

const RETRIES: usize = 64;

/// Key sequence over `sessions` sessions: every key exactly
/// `trials_per_session / 9` times per session, never the same key twice in a
/// row, session boundaries included.
pub fn generate_schedule(sessions: usize, trials_per_session: usize, rng: &mut Stream) -> Result<Vec<u8>> {
    if trials_per_session == 0 || !trials_per_session.is_multiple_of(9) {
        return Err(Error::Config(format!(
            "trials per session must be a positive multiple of 9, got {trials_per_session}"
        )));
    }
    let per_key = trials_per_session / 9;
    let mut out = Vec::with_capacity(sessions * trials_per_session);
    for _ in 0..sessions {
        let prev = out.last().copied();
        let session = (0..RETRIES)
            .find_map(|_| draw_session(per_key, prev, rng))
            .ok_or_else(|| Error::Degenerate("no repeat-free key order found".into()))?;
        out.extend(session);
    }
    Ok(out)
}

/// One session by weighted draws; `None` on a dead end.
fn draw_session(per_key: usize, mut prev: Option<u8>, rng: &mut Stream) -> Option<Vec<u8>> {
    let mut left = [per_key; 9];
    let mut total = per_key * 9;
    let mut out = Vec::with_capacity(total);
    while total > 0 {
        let allowed: Vec<usize> = (0..9).filter(|&k| left[k] > 0 && Some(k as u8 + 1) != prev).collect();
        if allowed.is_empty() {
            return None;
        }
        // A key holding more than half of what remains must go now.
        let forced = allowed.iter().copied().find(|&k| 2 * left[k] > total);
        let k = match forced {
            Some(k) => k,
            None => {
                let weight: usize = allowed.iter().map(|&k| left[k]).sum();
                let mut draw = rng.random_range(0..weight);
                *allowed
                    .iter()
                    .find(|&&k| {
                        if draw < left[k] {
                            true
                        } else {
                            draw -= left[k];
                            false
                        }
                    })
                    .expect("draw below total weight")
            }
        };
        left[k] -= 1;
        total -= 1;
        prev = Some(k as u8 + 1);
        out.push(k as u8 + 1);
    }
    Some(out)
}

/// Hold duration, uniform on [3, 4] seconds.
pub fn generate_hold_duration(rng: &mut Stream) -> f64 {
    rng.random_range(3.0..=4.0)
}

/// Unit-RMS noise with power spectrum `∝ 1/f^exponent`.
pub fn colored_noise(n: usize, exponent: f64, rng: &mut Stream, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let m = n.next_power_of_two().max(2);
    let mut spec = vec![Complex64::new(0.0, 0.0); m];
    for k in 1..=m / 2 {
        let scale = (k as f64).powf(-exponent / 2.0);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if k == m / 2 { 0.0 } else { rng.sample(StandardNormal) };
        spec[k] = Complex64::new(re * scale, im * scale);
        if k < m / 2 {
            spec[m - k] = spec[k].conj();
        }
    }
    planner.plan_fft_inverse(m).process(&mut spec);
    let mut x: Vec<f64> = spec[..n].iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let rms = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    let rms = if rms > 0.0 { rms } else { 1.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) / rms);
    x
}

/// One generated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject<T> {
    pub recording: Recording<T>,
    pub events: Vec<TrialEvent>,
    pub resting: Recording<T>,
    pub mu_peak: f64,
}

/// Timing of the generated sessions, seconds.
const LEAD_IN: f64 = 2.0;
const INTER_TRIAL: f64 = 1.0;
const SESSION_BREAK: f64 = 5.0;

fn hann(i: usize, len: usize) -> f64 {
    if len < 2 {
        return 1.0;
    }
    0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos()
}

/// Generates one subject on `montage` (already restricted to the subject's
/// channels). `index` selects the subject's random streams under `seed`.
#[allow(clippy::too_many_arguments)]
pub fn generate_subject<T: Scalar>(
    subject_id: &str,
    index: usize,
    montage: &Montage,
    schedule: &[u8],
    sessions: &[u32],
    effect: &EffectSpec,
    sample_rate: f64,
    rest_seconds: f64,
    seed: u64,
) -> Result<SyntheticSubject<T>> {
    effect.validate()?;
    if schedule.len() != sessions.len() {
        return Err(Error::Data("schedule and session lists differ in length".into()));
    }
    let s = index as u64;
    let mut timing = seeded_rng(seed, stream_id(tag::SUBJECT, &[s, 0]));
    let noise_scale = effect.noise_amplitude * timing.random_range(0.8..1.25);
    let mu_peak = timing.random_range(9.0..12.5);

    let mut events = Vec::with_capacity(schedule.len());
    let mut holds = Vec::with_capacity(schedule.len());
    let mut t = LEAD_IN;
    for (i, (&label, &session)) in schedule.iter().zip(sessions).enumerate() {
        if i > 0 && session != sessions[i - 1] {
            t += SESSION_BREAK;
        }
        let hold = generate_hold_duration(&mut timing);
        events.push(TrialEvent { onset: (t * sample_rate).round() as usize, label, session });
        holds.push(hold);
        t += hold + INTER_TRIAL;
    }
    let n = (t * sample_rate).round() as usize + (LEAD_IN * sample_rate) as usize;

    let channels = montage.channels().to_vec();
    let full_index = |c: usize| -> u64 {
        // Stream ids follow the channel name so that a missing channel does
        // not shift the other channels' noise.
        channels[c].bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
    };
    let mut planner = FftPlanner::new();
    let common = {
        let mut rng = seeded_rng(seed, stream_id(tag::SUBJECT, &[s, 4]));
        colored_noise(n, effect.noise_exponent, &mut rng, &mut planner)
    };
    let mut data = Array2::<T>::zeros((channels.len(), n));
    let mut sig = vec![0.0f64; n];
    let mu_rows: Vec<usize> = effect.mu_channels.iter().filter_map(|c| montage.index_of(c)).collect();
    let effect_row = montage.index_of(&effect.effect_channel);
    let band = effect.effect_band;
    let sub_band = (band.high - band.low - 2.0) / 3.0;

    for c in 0..channels.len() {
        let mut rng = seeded_rng(seed, stream_id(tag::SUBJECT, &[s, 1, full_index(c)]));
        let bg = colored_noise(n, effect.noise_exponent, &mut rng, &mut planner);
        for i in 0..n {
            sig[i] = noise_scale * (bg[i] + effect.common_mode * common[i]);
        }
        if mu_rows.contains(&c) && effect.mu_amplitude > 0.0 {
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in sig.iter_mut().enumerate() {
                *v += effect.mu_amplitude * (2.0 * PI * mu_peak * i as f64 / sample_rate + phase).sin();
            }
        }
        if Some(c) == effect_row {
            let mut burst_rng = seeded_rng(seed, stream_id(tag::SUBJECT, &[s, 2]));
            for (ev, hold) in events.iter().zip(&holds) {
                let gain = effect.class_gains[ev.label as usize - 1];
                let start = ev.onset + (effect.effect_window.0 * sample_rate).round() as usize;
                let len = ((effect.effect_window.1 - effect.effect_window.0) * sample_rate).round() as usize;
                let parts: Vec<(f64, f64)> = (0..3)
                    .map(|j| {
                        let lo = band.low + 1.0 + j as f64 * sub_band;
                        (burst_rng.random_range(lo..lo + sub_band), burst_rng.random_range(0.0..2.0 * PI))
                    })
                    .collect();
                let amp = effect.burst_amplitude * gain / 3f64.sqrt();
                for i in 0..len.min(n - start) {
                    let tt = i as f64 / sample_rate;
                    let osc: f64 = parts.iter().map(|(f, p)| (2.0 * PI * f * tt + p).sin()).sum();
                    sig[start + i] += amp * hann(i, len) * osc;
                }
                if effect.tonic_amplitude > 0.0 {
                    let f = (band.low + band.high) / 2.0;
                    let p = burst_rng.random_range(0.0..2.0 * PI);
                    let hold_len = (hold * sample_rate).round() as usize;
                    for i in 0..hold_len.min(n - ev.onset) {
                        let tt = i as f64 / sample_rate;
                        sig[ev.onset + i] += effect.tonic_amplitude * gain * (2.0 * PI * f * tt + p).sin();
                    }
                }
            }
        }
        if let (Some(mu), true) = (&effect.mu_effect, mu_rows.contains(&c)) {
            let len = (3.0 * sample_rate).round() as usize;
            for ev in &events {
                let gain = mu.class_gains[ev.label as usize - 1];
                for i in 0..len.min(n - ev.onset) {
                    let tt = (ev.onset + i) as f64 / sample_rate;
                    sig[ev.onset + i] += mu.amplitude * gain * hann(i, len) * (2.0 * PI * mu_peak * tt).sin();
                }
            }
        }
        for (d, v) in data.row_mut(c).iter_mut().zip(&sig) {
            *d = T::of(*v);
        }
    }
    let recording = Recording::new(subject_id, sample_rate, channels.clone(), data)?;

    let n_rest = (rest_seconds * sample_rate).round() as usize;
    let mut rest = Array2::<T>::zeros((channels.len(), n_rest));
    let rest_common = {
        let mut rng = seeded_rng(seed, stream_id(tag::SUBJECT, &[s, 5]));
        colored_noise(n_rest, effect.noise_exponent, &mut rng, &mut planner)
    };
    for c in 0..channels.len() {
        let mut rng = seeded_rng(seed, stream_id(tag::SUBJECT, &[s, 3, full_index(c)]));
        let bg = colored_noise(n_rest, effect.noise_exponent, &mut rng, &mut planner);
        let mu = if mu_rows.contains(&c) { effect.mu_amplitude + effect.mu_rest_amplitude } else { 0.0 };
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, d) in rest.row_mut(c).iter_mut().enumerate() {
            let tt = i as f64 / sample_rate;
            let v = noise_scale * (bg[i] + effect.common_mode * rest_common[i])
                + mu * (2.0 * PI * mu_peak * tt + phase).sin();
            *d = T::of(v);
        }
    }
    let resting = Recording::new(subject_id, sample_rate, channels, rest)?;
    Ok(SyntheticSubject { recording, events, resting, mu_peak })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub montage: Montage,
    pub subjects: Vec<SyntheticSubject<T>>,
}

/// Generates every subject of `profile`. Subjects draw from their own
/// streams, so parallel generation matches sequential generation.
pub fn generate_dataset<T: Scalar>(profile: &Profile, effect: &EffectSpec, seed: u64) -> Result<Dataset<T>> {
    profile.validate()?;
    effect.validate()?;
    let montage = profile.montage.build();
    if montage.index_of(&effect.effect_channel).is_none() {
        return Err(Error::ConfigFields(vec![format!(
            "synth.effect_channel: {} is not in the {} montage",
            effect.effect_channel, profile.name
        )]));
    }
    let subjects = (0..profile.n_subjects)
        .into_par_iter()
        .map(|s| {
            let mut rng = seeded_rng(seed, stream_id(tag::SCHEDULE, &[s as u64]));
            let mut labels = generate_schedule(profile.sessions, profile.trials_per_session, &mut rng)?;
            let mut sessions: Vec<u32> =
                (0..labels.len()).map(|i| (i / profile.trials_per_session) as u32 + 1).collect();
            let keep = profile.trials_for(s);
            labels.truncate(keep);
            sessions.truncate(keep);
            let missing: Vec<&str> = profile
                .missing_channels
                .iter()
                .filter(|(i, _)| *i == s)
                .map(|(_, c)| c.as_str())
                .collect();
            let names: Vec<&str> =
                montage.channels().iter().map(String::as_str).filter(|c| !missing.contains(c)).collect();
            let cap = montage.subset(&names, DEFAULT_NEIGHBORS)?;
            generate_subject(
                &profile.subject_id(s),
                s,
                &cap,
                &labels,
                &sessions,
                effect,
                profile.sample_rate,
                profile.rest_seconds,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { montage, subjects })
}

/// Ground-truth echo of the generating parameters.
pub fn truth_text<T: Scalar>(profile: &Profile, effect: &EffectSpec, seed: u64, dataset: &Dataset<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "profile = {}", profile.name);
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "subjects = {}", profile.n_subjects);
    let _ = writeln!(s, "sessions = {}", profile.sessions);
    let _ = writeln!(s, "trials_per_session = {}", profile.trials_per_session);
    let _ = writeln!(s, "total_trials = {}", profile.total_trials());
    let _ = writeln!(s, "sample_rate = {}", profile.sample_rate);
    let _ = writeln!(s, "effect_channel = {}", effect.effect_channel);
    let _ = writeln!(s, "effect_band = {}", effect.effect_band);
    let _ = writeln!(s, "effect_window = {}:{}", effect.effect_window.0, effect.effect_window.1);
    let gains: Vec<String> = effect.class_gains.iter().map(|g| g.to_string()).collect();
    let _ = writeln!(s, "class_gains = {}", gains.join(" "));
    let _ = writeln!(s, "burst_amplitude = {}", effect.burst_amplitude);
    let _ = writeln!(s, "tonic_amplitude = {}", effect.tonic_amplitude);
    for (i, subj) in dataset.subjects.iter().enumerate() {
        let _ = writeln!(s, "subject.{}.mu_peak = {}", profile.subject_id(i), subj.mu_peak);
        let _ = writeln!(s, "subject.{}.trials = {}", profile.subject_id(i), subj.events.len());
        let _ = writeln!(s, "subject.{}.channels = {}", profile.subject_id(i), subj.recording.n_channels());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_repeats(labels: &[u8]) -> bool {
        labels.windows(2).all(|w| w[0] != w[1])
    }

    #[test]
    fn default_schedule_counts() {
        let mut rng = seeded_rng(1, 1);
        let labels = generate_schedule(15, 90, &mut rng).unwrap();
        assert_eq!(labels.len(), 1350);
        for k in 1..=9u8 {
            assert_eq!(labels.iter().filter(|&&l| l == k).count(), 150);
        }
        for session in labels.chunks(90) {
            for k in 1..=9u8 {
                assert_eq!(session.iter().filter(|&&l| l == k).count(), 10);
            }
        }
        assert!(no_repeats(&labels));
    }

    #[test]
    fn nine_per_session_is_a_permutation() {
        let mut rng = seeded_rng(2, 1);
        let labels = generate_schedule(3, 9, &mut rng).unwrap();
        for s in labels.chunks(9) {
            let mut v = s.to_vec();
            v.sort_unstable();
            assert_eq!(v, (1..=9).collect::<Vec<u8>>());
        }
        assert!(no_repeats(&labels));
        assert!(generate_schedule(1, 10, &mut rng).is_err());
    }

    #[test]
    fn many_schedules_never_repeat() {
        let mut rng = seeded_rng(3, 1);
        for _ in 0..100_000 {
            assert!(no_repeats(&generate_schedule(2, 9, &mut rng).unwrap()));
        }
    }

    #[test]
    fn hold_durations() {
        let mut rng = seeded_rng(4, 1);
        let draws: Vec<f64> = (0..100_000).map(|_| generate_hold_duration(&mut rng)).collect();
        assert!(draws.iter().all(|d| (3.0..=4.0).contains(d)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 3.5).abs() < 0.01);
        let mut again = seeded_rng(4, 1);
        assert_eq!(generate_hold_duration(&mut again), draws[0]);
    }

    #[test]
    fn pink_noise_slope() {
        let mut rng = seeded_rng(5, 1);
        let mut planner = FftPlanner::new();
        let x = colored_noise(1 << 14, 1.0, &mut rng, &mut planner);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
        let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        planner.plan_fft_forward(spec.len()).process(&mut spec);
        let band = |a: usize, b: usize| spec[a..b].iter().map(|c| c.norm_sqr()).sum::<f64>() / (b - a) as f64;
        // Octave-apart bands: mean power per bin should halve.
        let ratio = band(200, 400) / band(400, 800);
        assert!((ratio - 2.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn profile_arithmetic() {
        assert_eq!(Profile::desk().total_trials(), 720);
        assert_eq!(Profile::full().trials_for(0), 1350);
        assert_eq!(Profile::full().total_trials(), 27000 - 301);
        assert!(Profile::by_name("huge").is_err());
    }

    #[test]
    fn effect_validation_lists_fields() {
        let mut e = EffectSpec::default();
        e.class_gains[2] = -1.0;
        e.noise_amplitude = f64::NAN;
        match e.validate() {
            Err(Error::ConfigFields(f)) => assert_eq!(f.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    fn small_profile() -> Profile {
        Profile { n_subjects: 2, sessions: 1, trials_per_session: 18, rest_seconds: 60.0, sample_rate: 250.0, ..Profile::desk() }
    }

    #[test]
    fn dataset_is_deterministic_and_thread_independent() {
        let p = small_profile();
        let e = EffectSpec::default();
        let a = generate_dataset::<f32>(&p, &e, 9).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| generate_dataset::<f32>(&p, &e, 9).unwrap());
        assert_eq!(a, b);
        let c = generate_dataset::<f32>(&p, &e, 10).unwrap();
        assert_ne!(a.subjects[0].recording, c.subjects[0].recording);
    }

    #[test]
    fn missing_channel_and_dropped_trials() {
        let p = Profile {
            missing_channels: vec![(1, "Pz".into())],
            dropped_trials: vec![(0, 5)],
            ..small_profile()
        };
        let d = generate_dataset::<f32>(&p, &EffectSpec::default(), 1).unwrap();
        assert_eq!(d.subjects[0].events.len(), 13);
        assert_eq!(d.subjects[1].recording.n_channels(), 31);
        assert!(d.subjects[1].recording.channel_index("Pz").is_none());
        // Shared channels keep their noise when another channel is dropped.
        let full = generate_dataset::<f32>(&small_profile(), &EffectSpec::default(), 1).unwrap();
        let row = |r: &Recording<f32>, c: &str| r.samples.row(r.channel_index(c).unwrap()).to_vec();
        assert_eq!(row(&d.subjects[1].resting, "Fp1"), row(&full.subjects[1].resting, "Fp1"));
    }

    #[test]
    fn events_fit_inside_recording() {
        let d = generate_dataset::<f32>(&small_profile(), &EffectSpec::default(), 2).unwrap();
        for s in &d.subjects {
            let last = s.events.last().unwrap();
            assert!(last.onset + 3 * 250 <= s.recording.n_samples());
            assert_eq!(s.resting.n_samples(), 15000);
            assert!((9.0..12.5).contains(&s.mu_peak));
        }
    }
}
