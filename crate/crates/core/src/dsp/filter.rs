//! Butterworth highpass design and zero-phase (forward-backward) filtering.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One second-order section `(b0, b1, b2, a1, a2)` with `a0 = 1`.
/// First-order sections carry `b2 = a2 = 0`.
pub type Section<T> = [T; 5];

/// Cascade of second-order sections plus its design metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter<T> {
    sections: Vec<Section<T>>,
    order: usize,
    cutoff: f64,
    sample_rate: f64,
}

impl<T: Scalar> IirFilter<T> {
    pub fn sections(&self) -> &[Section<T>] {
        &self.sections
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (self.order + 1)
    }

    /// Complex response at `freq` Hz, evaluated in double precision.
    pub fn response(&self, freq: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq / self.sample_rate;
        let zinv = Complex64::from_polar(1.0, -w);
        let zinv2 = zinv * zinv;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let [b0, b1, b2, a1, a2] = s.map(|c| c.as_f64());
            let num = b0 + zinv * b1 + zinv2 * b2;
            let den = 1.0 + zinv * a1 + zinv2 * a2;
            acc * num / den
        })
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.response(freq).norm()
    }

    /// All poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| {
            let (a1, a2) = (s[3].as_f64(), s[4].as_f64());
            a2.abs() < 1.0 && a1.abs() < 1.0 + a2
        })
    }

    /// Steady-state section states for a unit step input (transposed
    /// direct form II), chained through the DC gain of earlier sections.
    fn step_states(&self) -> Vec<[T; 2]> {
        let mut scale = T::one();
        self.sections
            .iter()
            .map(|&[b0, b1, b2, a1, a2]| {
                let gain = (b0 + b1 + b2) / (T::one() + a1 + a2);
                let zi = [(gain - b0) * scale, (b2 - a2 * gain) * scale];
                scale *= gain;
                zi
            })
            .collect()
    }

    /// Single causal pass starting from `states` (scaled by `x[0]` by caller).
    fn run(&self, x: &mut [T], mut states: Vec<[T; 2]>) {
        for (s, z) in self.sections.iter().zip(states.iter_mut()) {
            let [b0, b1, b2, a1, a2] = *s;
            let (mut z1, mut z2) = (z[0], z[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
            *z = [z1, z2];
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[T]) -> Vec<T> {
        let mut y = x.to_vec();
        self.run(&mut y, vec![[T::zero(); 2]; self.sections.len()]);
        y
    }
}

/// Butterworth highpass of the given order via the bilinear transform with
/// cutoff prewarping. Complex pole pairs become biquads, a remaining real
/// pole a first-order section; each section has unit gain at Nyquist.
pub fn design_highpass_butterworth<T: Scalar>(
    order: usize,
    cutoff: f64,
    sample_rate: f64,
) -> Result<IirFilter<T>> {
    if order == 0 {
        return Err(Error::Config("filter order must be at least 1".into()));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Config(format!("sample rate {sample_rate} Hz is invalid")));
    }
    let nyquist = sample_rate / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(Error::Config(format!(
            "highpass cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    let fs2 = 2.0 * sample_rate;
    let warped = fs2 * (std::f64::consts::PI * cutoff / sample_rate).tan();
    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    // Poles of the unit lowpass prototype in the upper half plane, plus the
    // real pole at -1 for odd orders.
    for k in 0..order / 2 {
        let theta = std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let zp = bilinear(warped / proto);
        let (a1, a2) = (-2.0 * zp.re, zp.norm_sqr());
        let g = (1.0 - a1 + a2) / 4.0;
        sections.push([g, -2.0 * g, g, a1, a2]);
    }
    if order % 2 == 1 {
        let zp = bilinear(Complex64::new(-warped, 0.0)).re;
        let a1 = -zp;
        let g = (1.0 - a1) / 2.0;
        sections.push([g, -g, 0.0, a1, 0.0]);
    }
    let filter = IirFilter {
        sections: sections.into_iter().map(|s| s.map(T::of)).collect(),
        order,
        cutoff,
        sample_rate,
    };
    debug_assert!(filter.is_stable());
    Ok(filter)
}

/// Zero-phase filtering: odd-extension padding of `3 × (order + 1)` samples
/// at both ends, steady-state initial conditions, a forward pass and a
/// backward pass over the reversed output.
pub fn filtfilt<T: Scalar>(filter: &IirFilter<T>, signal: &[T]) -> Result<Vec<T>> {
    let pad = filter.pad_len();
    let n = signal.len();
    if n <= pad {
        return Err(Error::Data(format!(
            "signal of {n} samples too short for {pad}-sample edge padding"
        )));
    }
    let two = T::of(2.0);
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| two * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((n - 1 - pad..n - 1).rev().map(|i| two * last - signal[i]));

    let zi = filter.step_states();
    let scaled = |x0: T| zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect::<Vec<_>>();
    let z = scaled(ext[0]);
    filter.run(&mut ext, z);
    ext.reverse();
    let z = scaled(ext[0]);
    filter.run(&mut ext, z);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(fs: f64) -> IirFilter<f64> {
        design_highpass_butterworth(3, 3.0, fs).unwrap()
    }

    #[test]
    fn third_order_has_two_sections() {
        let f = hp(2000.0);
        assert_eq!(f.sections().len(), 2);
        assert!(f.is_stable());
        assert_eq!(f.pad_len(), 12);
    }

    #[test]
    fn cutoff_is_minus_3db() {
        for fs in [500.0, 1000.0, 2000.0] {
            let m = hp(fs).magnitude(3.0);
            assert!((m - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01 * std::f64::consts::FRAC_1_SQRT_2, "{m}");
        }
    }

    #[test]
    fn dc_null_and_passband() {
        let f = hp(2000.0);
        assert!(f.magnitude(0.0) <= 1e-10);
        assert!((f.magnitude(100.0) - 1.0).abs() < 0.01);
        assert!((f.magnitude(1000.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn response_matches_analog_butterworth_after_prewarp() {
        // |H(f)|² = 1 / (1 + (Ωc/Ω)^(2N)) with Ω the prewarped frequency.
        let fs = 500.0;
        let f = hp(fs);
        let warp = |x: f64| (std::f64::consts::PI * x / fs).tan();
        for freq in [0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 40.0, 200.0] {
            let ratio = warp(3.0) / warp(freq);
            let expect = (1.0 / (1.0 + ratio.powi(6))).sqrt();
            assert!((f.magnitude(freq) - expect).abs() < 1e-9, "f = {freq}");
        }
    }

    #[test]
    fn monotone_response() {
        let f = hp(500.0);
        let mut prev = 0.0;
        for i in 1..2500 {
            let m = f.magnitude(i as f64 * 0.1);
            assert!(m >= prev - 1e-12);
            prev = m;
        }
    }

    #[test]
    fn design_errors() {
        assert!(design_highpass_butterworth::<f64>(3, 250.0, 500.0).is_err());
        assert!(design_highpass_butterworth::<f64>(3, 0.0, 500.0).is_err());
        assert!(design_highpass_butterworth::<f64>(0, 3.0, 500.0).is_err());
    }

    #[test]
    fn even_and_odd_orders_are_stable() {
        for order in 1..=8 {
            let f = design_highpass_butterworth::<f64>(order, 3.0, 500.0).unwrap();
            assert!(f.is_stable());
            assert!((f.magnitude(3.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
    }

    #[test]
    fn f32_design_tracks_f64() {
        let a = design_highpass_butterworth::<f32>(3, 3.0, 500.0).unwrap();
        assert!((a.magnitude(3.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
    }

    #[test]
    fn constant_signal_is_removed() {
        let f = hp(2000.0);
        let x = vec![5.0; 6000];
        let y = filtfilt(&f, &x).unwrap();
        let worst = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-6 * 5.0, "{worst}");
    }

    #[test]
    fn too_short_signal() {
        let f = hp(2000.0);
        assert!(filtfilt(&f, &[1.0; 12]).is_err());
        assert!(filtfilt(&f, &[1.0; 13]).is_ok());
    }

    #[test]
    fn squared_magnitude_on_sinusoid() {
        // A 6 Hz tone sits on the transition band: filtfilt must scale it by |H|².
        let fs = 500.0;
        let f = hp(fs);
        let n = 20_000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 6.0 * i as f64 / fs).sin())
            .collect();
        let y = filtfilt(&f, &x).unwrap();
        let mid = &y[5000..15000];
        let amp = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let expect = f.magnitude(6.0).powi(2);
        assert!((amp - expect).abs() < 2e-3, "{amp} vs {expect}");
    }
}
