//! Sampled waveforms, spectra and dB bookkeeping.
//!
//! Signals are analytic complex envelopes referenced to a carrier frequency.
//! A spectrum bin at offset `k * df` from the carrier is reported at the
//! absolute frequency `carrier_hz + k * df`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Numerical floor for relative power levels, in dB.
pub const FLOOR_DB: f64 = -120.0;

/// Floor used when an absolute power is exactly zero, in dBm.
pub const FLOOR_DBM: f64 = -300.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("band [{lo}, {hi}] Hz lies outside the spectrum span [{span_lo}, {span_hi}] Hz")]
    Range {
        lo: f64,
        hi: f64,
        span_lo: f64,
        span_hi: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Uniformly sampled complex envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledWaveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub t0: f64,
    /// Carrier the envelope is referenced to, Hz. Zero for plain baseband.
    pub carrier_hz: f64,
}

impl SampledWaveform {
    pub fn new(
        samples: Vec<Complex64>,
        sample_rate: f64,
        t0: f64,
        carrier_hz: f64,
    ) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::InvalidInput("empty waveform".into()));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(SignalError::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !t0.is_finite() || !carrier_hz.is_finite() {
            return Err(SignalError::InvalidInput(
                "non-finite time or carrier".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
            t0,
            carrier_hz,
        })
    }

    /// Builds a waveform by evaluating `f(t)` at `n` sample times starting at zero.
    pub fn from_fn(
        n: usize,
        sample_rate: f64,
        carrier_hz: f64,
        mut f: impl FnMut(f64) -> Complex64,
    ) -> Result<Self, SignalError> {
        let samples = (0..n).map(|k| f(k as f64 / sample_rate)).collect();
        Self::new(samples, sample_rate, 0.0, carrier_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.sample_rate
    }

    /// Mean-square amplitude.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Export as CSV `t_s,re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,re,im\n");
        for (k, z) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{:e},{:e},{:e}", self.time(k), z.re, z.im);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // periodic Hann
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Frequency-binned complex amplitudes, frequencies strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpectrum {
    pub bin_freqs: Vec<f64>,
    pub bins: Vec<Complex64>,
    pub resolution_bw: f64,
    pub window: Window,
    pub carrier_hz: f64,
    pub t0: f64,
}

impl ComplexSpectrum {
    pub fn total_power(&self) -> f64 {
        self.bins.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn span(&self) -> (f64, f64) {
        let h = 0.5 * self.resolution_bw;
        (
            self.bin_freqs[0] - h,
            self.bin_freqs[self.bin_freqs.len() - 1] + h,
        )
    }

    /// Amplitude of the bin nearest to `freq`.
    pub fn bin_at(&self, freq: f64) -> Option<Complex64> {
        let k = ((freq - self.bin_freqs[0]) / self.resolution_bw).round();
        if k < 0.0 || k as usize >= self.bins.len() {
            return None;
        }
        Some(self.bins[k as usize])
    }

    /// Export as CSV `freq_hz,re,im,power_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,re,im,power_db\n");
        for (f, z) in self.bin_freqs.iter().zip(&self.bins) {
            let p = z.norm_sqr();
            let db = if p > 0.0 { 10.0 * p.log10() } else { FLOOR_DBM };
            let _ = writeln!(out, "{},{:e},{:e},{:.3}", f, z.re, z.im, db);
        }
        out
    }
}

/// Power level in dB. Relative or absolute depending on the reference it
/// was measured against.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PowerDb(pub f64);

impl PowerDb {
    pub fn from_ratio(ratio: f64) -> Self {
        PowerDb(db(ratio))
    }

    pub fn ratio(self) -> f64 {
        from_db(self.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Power ratio to dB.
pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// dB to power ratio.
pub fn from_db(value: f64) -> f64 {
    10f64.powf(value / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * from_db(dbm)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    if watts > 0.0 {
        db(watts / 1e-3)
    } else {
        FLOOR_DBM
    }
}

/// Reference for a power measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// dB relative to this linear power, clamped at [`FLOOR_DB`].
    Power(f64),
    /// dBm, with squared amplitudes read as watts.
    Milliwatt,
}

impl Reference {
    pub fn level(self, power: f64) -> PowerDb {
        match self {
            Reference::Power(p) => {
                let v = if power > 0.0 { db(power / p) } else { FLOOR_DB };
                PowerDb(v.max(FLOOR_DB))
            }
            Reference::Milliwatt => PowerDb(watts_to_dbm(power)),
        }
    }
}

pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(buf);
}

/// Discrete spectrum of `w`.
///
/// Normalized so that a bin-centered tone of amplitude `a` shows up as a
/// single bin of amplitude `a`. With the rectangular window the squared
/// bins sum to the mean-square power of the waveform.
pub fn spectrum(w: &SampledWaveform, window: Window) -> Result<ComplexSpectrum, SignalError> {
    let n = w.samples.len();
    if n < 2 {
        return Err(SignalError::InvalidInput(
            "spectrum needs at least two samples".into(),
        ));
    }
    let coeffs = window.coefficients(n);
    let gain: f64 = coeffs.iter().sum();
    let mut buf: Vec<Complex64> = w.samples.iter().zip(&coeffs).map(|(z, c)| z * c).collect();
    fft_forward(&mut buf);
    let df = w.sample_rate / n as f64;
    let kmin = -((n / 2) as i64);
    let mut bins = Vec::with_capacity(n);
    let mut bin_freqs = Vec::with_capacity(n);
    for j in 0..n as i64 {
        let k = kmin + j;
        let idx = k.rem_euclid(n as i64) as usize;
        bins.push(buf[idx] / gain);
        bin_freqs.push(w.carrier_hz + k as f64 * df);
    }
    Ok(ComplexSpectrum {
        bin_freqs,
        bins,
        resolution_bw: df,
        window,
        carrier_hz: w.carrier_hz,
        t0: w.t0,
    })
}

/// Inverse of [`spectrum`] for rectangular-window spectra.
pub fn inverse_spectrum(s: &ComplexSpectrum) -> Result<SampledWaveform, SignalError> {
    if s.window != Window::Rectangular {
        return Err(SignalError::InvalidInput(
            "only rectangular-window spectra are invertible".into(),
        ));
    }
    let n = s.bins.len();
    let kmin = -((n / 2) as i64);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (j, z) in s.bins.iter().enumerate() {
        let idx = (kmin + j as i64).rem_euclid(n as i64) as usize;
        buf[idx] = *z;
    }
    fft_inverse(&mut buf);
    SampledWaveform::new(buf, s.resolution_bw * n as f64, s.t0, s.carrier_hz)
}

/// Linear power integrated over `[center - half_width, center + half_width]`.
pub fn band_power_linear(
    s: &ComplexSpectrum,
    center: f64,
    half_width: f64,
) -> Result<f64, SignalError> {
    if !(half_width >= 0.0) {
        return Err(SignalError::InvalidInput("negative half width".into()));
    }
    let (span_lo, span_hi) = s.span();
    let lo = center - half_width;
    let hi = center + half_width;
    let tol = 1e-9 * s.resolution_bw;
    if lo < span_lo - tol || hi > span_hi + tol {
        return Err(SignalError::Range {
            lo,
            hi,
            span_lo,
            span_hi,
        });
    }
    let f0 = s.bin_freqs[0];
    let first = (((lo - f0) / s.resolution_bw) - 1e-9).ceil().max(0.0) as usize;
    let last = (((hi - f0) / s.resolution_bw) + 1e-9).floor();
    if last < 0.0 {
        return Ok(0.0);
    }
    let last = (last as usize).min(s.bins.len() - 1);
    if first > last {
        return Ok(0.0);
    }
    Ok(s.bins[first..=last].iter().map(|z| z.norm_sqr()).sum())
}

/// Integrated band power in dB against `reference`.
pub fn band_power(
    s: &ComplexSpectrum,
    center: f64,
    half_width: f64,
    reference: Reference,
) -> Result<PowerDb, SignalError> {
    band_power_linear(s, center, half_width).map(|p| reference.level(p))
}

/// Linear power at `carrier + n * offset` for every `n` in `[-n_max, n_max]`.
///
/// Each band is half an offset wide on either side, so the bands tile the
/// region around the carrier without overlap.
pub fn harmonic_powers(
    s: &ComplexSpectrum,
    carrier: f64,
    offset: f64,
    n_max: u32,
) -> Result<BTreeMap<i32, f64>, SignalError> {
    if n_max < 1 {
        return Err(SignalError::Config("n_max must be at least 1".into()));
    }
    if offset.abs() < s.resolution_bw * (1.0 - 1e-9) {
        return Err(SignalError::Config(format!(
            "offset {offset} Hz is below the resolution bandwidth {} Hz",
            s.resolution_bw
        )));
    }
    let half = 0.5 * offset.abs() * (1.0 - 1e-9);
    let n_max = n_max as i32;
    let mut out = BTreeMap::new();
    for n in -n_max..=n_max {
        let p = band_power_linear(s, carrier + n as f64 * offset, half)?;
        out.insert(n, p);
    }
    Ok(out)
}

/// Harmonic table in dB against `reference`.
pub fn harmonic_table(
    s: &ComplexSpectrum,
    carrier: f64,
    offset: f64,
    n_max: u32,
    reference: Reference,
) -> Result<BTreeMap<i32, PowerDb>, SignalError> {
    Ok(harmonic_powers(s, carrier, offset, n_max)?
        .into_iter()
        .map(|(n, p)| (n, reference.level(p)))
        .collect())
}

/// Half-width about the carrier that holds `fraction` of the total power.
pub fn occupied_half_width(w: &SampledWaveform, fraction: f64) -> Result<f64, SignalError> {
    let s = spectrum(w, Window::Rectangular)?;
    let total = s.total_power();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut by_offset: Vec<(f64, f64)> = s
        .bin_freqs
        .iter()
        .zip(&s.bins)
        .map(|(f, z)| ((f - s.carrier_hz).abs(), z.norm_sqr()))
        .collect();
    by_offset.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    for (off, p) in by_offset {
        acc += p;
        if acc >= fraction * total {
            return Ok(off);
        }
    }
    Ok(0.5 * w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tone(n: usize, fs: f64, f: f64, a: f64) -> SampledWaveform {
        SampledWaveform::from_fn(n, fs, 0.0, |t| Complex64::from_polar(a, 2.0 * PI * f * t))
            .unwrap()
    }

    #[test]
    fn bin_centered_tone_is_single_bin() {
        let w = tone(256, 256.0, 17.0, 1.0);
        let s = spectrum(&w, Window::Rectangular).unwrap();
        for (f, z) in s.bin_freqs.iter().zip(&s.bins) {
            if (*f - 17.0).abs() < 1e-9 {
                assert!((z.norm() - 1.0).abs() < 1e-12);
            } else {
                assert!(z.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn product_of_cosines_splits_in_two() {
        let (fc, fm) = (40.0, 8.0);
        let w = SampledWaveform::from_fn(512, 512.0, 0.0, |t| {
            Complex64::new((2.0 * PI * fc * t).cos() * (2.0 * PI * fm * t).cos(), 0.0)
        })
        .unwrap();
        let s = spectrum(&w, Window::Rectangular).unwrap();
        let up = s.bin_at(48.0).unwrap().norm();
        let dn = s.bin_at(32.0).unwrap().norm();
        assert!((up - 0.25).abs() < 1e-12 && (dn - 0.25).abs() < 1e-12);
        // one-sided view of a real signal: each sideband pair carries amplitude 0.5
        let pair = 2.0 * up;
        assert!((pair - 0.5).abs() < 1e-12);
        let p = band_power(&s, 48.0, 1.0, Reference::Power(0.25)).unwrap();
        assert!((p.0 - (-6.0206)).abs() < 0.01);
    }

    #[test]
    fn square_wave_am_has_odd_sidebands() {
        let n = 4096;
        let fs = 4096.0;
        let nu = 16.0;
        let w = SampledWaveform::from_fn(n, fs, 0.0, |t| {
            let ph = (t * nu).fract();
            Complex64::new(if ph < 0.5 { 1.0 } else { -1.0 }, 0.0)
        })
        .unwrap();
        let s = spectrum(&w, Window::Rectangular).unwrap();
        let a1 = s.bin_at(nu).unwrap().norm();
        for m in [3.0, 5.0, 7.0] {
            let am = s.bin_at(m * nu).unwrap().norm();
            // discrete square wave: coefficients follow 1/sin(pi m nu / fs)
            let oracle = (PI * nu / fs).sin() / (PI * m * nu / fs).sin();
            assert!((am / a1 - oracle).abs() < 1e-9, "m={m}");
            assert!((am / a1 - 1.0 / m).abs() < 0.01);
        }
        assert!(s.bin_at(2.0 * nu).unwrap().norm() < 1e-12);
    }

    #[test]
    fn band_power_basics() {
        let w = tone(128, 128.0, 10.0, 1.0);
        let s = spectrum(&w, Window::Rectangular).unwrap();
        let on = band_power(&s, 10.0, 2.0, Reference::Power(1.0)).unwrap();
        assert!(on.0.abs() < 1e-9);
        let off = band_power(&s, -30.0, 2.0, Reference::Power(1.0)).unwrap();
        assert!(off.0 <= FLOOR_DB);
        assert!(matches!(
            band_power(&s, 100.0, 2.0, Reference::Power(1.0)),
            Err(SignalError::Range { .. })
        ));
    }

    #[test]
    fn empty_waveform_is_rejected() {
        assert!(SampledWaveform::new(vec![], 1.0, 0.0, 0.0).is_err());
        let w = SampledWaveform::new(vec![Complex64::new(1.0, 0.0)], 1.0, 0.0, 0.0).unwrap();
        assert!(spectrum(&w, Window::Hann).is_err());
    }

    #[test]
    fn hann_preserves_bin_centered_amplitude() {
        let w = tone(256, 256.0, 20.0, 0.7);
        let s = spectrum(&w, Window::Hann).unwrap();
        assert!((s.bin_at(20.0).unwrap().norm() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn hann_scalloping_is_bounded() {
        // a tone a quarter bin off center
        let w = tone(1024, 1024.0, 100.25, 1.0);
        let s = spectrum(&w, Window::Hann).unwrap();
        let p = band_power_linear(&s, 100.25, 3.0).unwrap();
        // band sum over the main lobe, divided by the hann noise-equivalent bandwidth
        let nenbw = 1.5;
        assert!((db(p / nenbw)).abs() < 0.02, "{}", db(p / nenbw));
    }

    #[test]
    fn harmonic_table_for_ideal_ssb() {
        let fs = 64e6;
        let w = SampledWaveform::from_fn(64, fs, 4e9, |t| {
            Complex64::from_polar(0.5, 2.0 * PI * 1e6 * t)
        })
        .unwrap();
        let s = spectrum(&w, Window::Rectangular).unwrap();
        let h = harmonic_table(&s, 4e9, 1e6, 9, Reference::Power(0.25)).unwrap();
        assert!(h[&1].0.abs() < 1e-9);
        for (n, p) in &h {
            if *n != 1 {
                assert!(p.0 <= FLOOR_DB);
            }
        }
        let dsb = SampledWaveform::from_fn(64, fs, 4e9, |t| {
            Complex64::new((2.0 * PI * 1e6 * t).cos(), 0.0)
        })
        .unwrap();
        let h = harmonic_table(
            &spectrum(&dsb, Window::Rectangular).unwrap(),
            4e9,
            1e6,
            3,
            Reference::Power(1.0),
        )
        .unwrap();
        assert!((h[&1].0 - h[&-1].0).abs() < 0.01);
        assert!(harmonic_table(&s, 4e9, 0.5e6, 3, Reference::Milliwatt).is_err());
    }

    #[test]
    fn db_round_trip() {
        for v in [-120.0, -3.0103, 0.0, 17.5] {
            assert!((db(from_db(v)) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
        assert!((watts_to_dbm(dbm_to_watts(-85.0)) + 85.0).abs() < 1e-12);
    }

    #[test]
    fn csv_headers() {
        let w = tone(4, 4.0, 1.0, 1.0);
        let s = spectrum(&w, Window::Rectangular).unwrap();
        assert!(s.to_csv().starts_with("freq_hz,re,im,power_db\n"));
        assert!(w.to_csv().starts_with("t_s,re,im\n"));
        assert_eq!(s.to_csv().lines().count(), 5);
    }

    fn waveform() -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..200)
            .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
    }

    proptest! {
        #[test]
        fn parseval_holds(samples in waveform()) {
            let w = SampledWaveform::new(samples, 1e6, 0.0, 0.0).unwrap();
            let s = spectrum(&w, Window::Rectangular).unwrap();
            let lhs = s.total_power();
            let rhs = w.mean_power();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300));
        }

        #[test]
        fn round_trip(samples in waveform()) {
            let w = SampledWaveform::new(samples, 3e6, 1e-6, 5e9).unwrap();
            let back = inverse_spectrum(&spectrum(&w, Window::Rectangular).unwrap()).unwrap();
            let scale = w.mean_power().sqrt().max(1e-300);
            for (a, b) in w.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).norm() <= 1e-9 * scale);
            }
            prop_assert!((back.sample_rate - w.sample_rate).abs() < 1e-6);
        }

        #[test]
        fn band_power_is_additive(samples in waveform(), cuts in 1usize..6) {
            let w = SampledWaveform::new(samples, 1.0, 0.0, 0.0).unwrap();
            let s = spectrum(&w, Window::Rectangular).unwrap();
            let (lo, hi) = s.span();
            // disjoint bands whose edges fall between bins
            let n = s.bins.len();
            let per = n.div_ceil(cuts);
            let mut acc = 0.0;
            let mut start = 0;
            while start < n {
                let end = (start + per).min(n);
                let a = s.bin_freqs[start] - 0.4 * s.resolution_bw;
                let b = s.bin_freqs[end - 1] + 0.4 * s.resolution_bw;
                acc += band_power_linear(&s, 0.5 * (a + b), 0.5 * (b - a)).unwrap();
                start = end;
            }
            let total = s.total_power();
            prop_assert!((acc - total).abs() <= 1e-9 * total.max(1e-300));
            prop_assert!(lo < hi);
        }
    }
}
