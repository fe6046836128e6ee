//! Inverse-map pulse shaping under a band-limited waveform generator.
//!
//! The bias waveform for one IF port is `I(t) = T⁻¹(depth · cos(Ωt + φ))`,
//! where `T` is the projected characteristic of a [`TransmissionMap`]. The
//! generator is modeled as a sampler at a fixed rate followed by a
//! zero-phase Butterworth magnitude response applied to the periodic
//! waveform.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::signals::{self, PowerDb, Reference, SampledWaveform, SignalError, Window};
use crate::tib::{TibError, TransmissionMap};

/// Largest IF the device is operated at, Hz.
pub const MAX_IF_HZ: f64 = 120e6;

/// Fewest generator samples per IF period.
pub const MIN_PERIOD_SAMPLES: usize = 10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("period of {0} samples is shorter than the minimum of 10")]
    Sampling(usize),
    #[error("map inversion failed: {0}")]
    MapInversion(TibError),
    #[error(transparent)]
    Map(#[from] TibError),
    #[error("waveform spans {0} modulation periods, expected an integer")]
    Windowing(f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwgModel {
    pub sample_rate: f64,
    /// 3 dB bandwidth of the reconstruction filter, `None` for unlimited.
    pub analog_bandwidth: Option<f64>,
    pub filter_order: u32,
    /// Delay of the second channel relative to the first, s.
    pub channel_skew: f64,
}

impl AwgModel {
    pub fn reference() -> Self {
        Self {
            sample_rate: 1.2e9,
            analog_bandwidth: Some(180e6),
            filter_order: 4,
            channel_skew: 0.0,
        }
    }

    pub fn unlimited(sample_rate: f64) -> Self {
        Self {
            sample_rate,
            analog_bandwidth: None,
            filter_order: 1,
            channel_skew: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if !(self.sample_rate > 0.0) || self.filter_order < 1 {
            return Err(ShapeError::InvalidInput(format!("{self:?}")));
        }
        if let Some(bw) = self.analog_bandwidth {
            if !(bw > 0.0 && self.sample_rate > 2.0 * bw) {
                return Err(ShapeError::InvalidInput(format!(
                    "sample rate {} must exceed twice the bandwidth {bw}",
                    self.sample_rate
                )));
            }
        }
        Ok(())
    }

    /// Magnitude response at `f` Hz.
    pub fn response(&self, f: f64) -> f64 {
        match self.analog_bandwidth {
            None => 1.0,
            Some(bw) => 1.0 / (1.0 + (f.abs() / bw).powi(2 * self.filter_order as i32)).sqrt(),
        }
    }
}

/// One period of sampled control current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasWaveform {
    pub currents: Vec<f64>,
    pub sample_rate: f64,
    pub period_samples: usize,
    /// Samples whose target fell outside the invertible branch.
    pub clipped_samples: usize,
}

impl BiasWaveform {
    pub fn max_abs(&self) -> f64 {
        self.currents.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Band-limited interpolation by `factor` (periodic zero padding),
    /// clipped to `span`.
    pub fn upsampled(&self, factor: usize, span: (f64, f64)) -> BiasWaveform {
        let p = self.currents.len();
        let m = p * factor;
        let mut x: Vec<Complex64> = self
            .currents
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        signals::fft_forward(&mut x);
        let mut padded = vec![Complex64::new(0.0, 0.0); m];
        let half = p.div_ceil(2);
        padded[..half].copy_from_slice(&x[..half]);
        if p.is_multiple_of(2) {
            // split the Nyquist bin between both signs
            padded[p / 2] = 0.5 * x[p / 2];
            padded[m - p / 2] = 0.5 * x[p / 2];
            padded[m - p / 2 + 1..].copy_from_slice(&x[p / 2 + 1..]);
        } else {
            padded[m - (p - half)..].copy_from_slice(&x[half..]);
        }
        signals::fft_inverse(&mut padded);
        let currents = padded
            .iter()
            .map(|z| (z.re / p as f64).clamp(span.0, span.1))
            .collect();
        BiasWaveform {
            currents,
            sample_rate: self.sample_rate * factor as f64,
            period_samples: self.period_samples * factor,
            clipped_samples: self.clipped_samples,
        }
    }

    /// Export as CSV `t_s,current_a`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,current_a\n");
        for (k, i) in self.currents.iter().enumerate() {
            let _ = writeln!(out, "{:e},{:e}", k as f64 / self.sample_rate, i);
        }
        out
    }
}

/// Target modulation `depth · cos(Ωt + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeTarget {
    /// Ω, rad/s.
    pub omega_if: f64,
    pub phase: f64,
    pub depth: f64,
}

impl ShapeTarget {
    pub fn cosine(omega_if: f64) -> Self {
        Self {
            omega_if,
            phase: 0.0,
            depth: 1.0,
        }
    }
}

fn period_grid(omega_if: f64, awg: &AwgModel) -> Result<(usize, f64), ShapeError> {
    awg.validate()?;
    let f_if = omega_if / (2.0 * PI);
    if !(f_if > 0.0) || f_if > MAX_IF_HZ * (1.0 + 1e-12) {
        return Err(ShapeError::InvalidInput(format!(
            "IF {f_if} Hz outside (0, {MAX_IF_HZ}]"
        )));
    }
    let p = (awg.sample_rate / f_if).round() as usize;
    if p < MIN_PERIOD_SAMPLES {
        return Err(ShapeError::Sampling(p));
    }
    Ok((p, p as f64 * f_if))
}

fn filtered(currents: Vec<f64>, rate: f64, awg: &AwgModel, span: (f64, f64)) -> Vec<f64> {
    if awg.analog_bandwidth.is_none() {
        return currents;
    }
    let p = currents.len();
    let mut x: Vec<Complex64> = currents.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    signals::fft_forward(&mut x);
    for (k, z) in x.iter_mut().enumerate() {
        let kk = if k <= p / 2 {
            k as f64
        } else {
            k as f64 - p as f64
        };
        *z *= awg.response(kk * rate / p as f64);
    }
    signals::fft_inverse(&mut x);
    x.iter()
        .map(|z| (z.re / p as f64).clamp(span.0, span.1))
        .collect()
}

/// Shaped bias for `depth · cos(Ωt + phase)` on one IF port.
pub fn shape_bias_with(
    map: &TransmissionMap,
    target: &ShapeTarget,
    awg: &AwgModel,
) -> Result<BiasWaveform, ShapeError> {
    let (p, rate) = period_grid(target.omega_if, awg)?;
    if map.monotone_branch.0 >= map.monotone_branch.1 {
        return Err(ShapeError::MapInversion(TibError::NoBranch));
    }
    let mut clipped = 0;
    let mut currents = Vec::with_capacity(p);
    for k in 0..p {
        let y = target.depth * (2.0 * PI * k as f64 / p as f64 + target.phase).cos();
        let (i, c) = map.invert(y).map_err(ShapeError::MapInversion)?;
        clipped += c as usize;
        currents.push(i);
    }
    Ok(BiasWaveform {
        currents: filtered(currents, rate, awg, map.span()),
        sample_rate: rate,
        period_samples: p,
        clipped_samples: clipped,
    })
}

/// Shaped bias for a plain `cos(Ωt)` target.
pub fn shape_bias(
    map: &TransmissionMap,
    omega_if: f64,
    awg: &AwgModel,
) -> Result<BiasWaveform, ShapeError> {
    shape_bias_with(map, &ShapeTarget::cosine(omega_if), awg)
}

/// Unshaped drive `peak · cos(Ωt + phase)`.
pub fn naive_bias(
    map: &TransmissionMap,
    target: &ShapeTarget,
    awg: &AwgModel,
    peak: f64,
) -> Result<BiasWaveform, ShapeError> {
    let (p, rate) = period_grid(target.omega_if, awg)?;
    let (lo, hi) = map.span();
    let currents = (0..p)
        .map(|k| (peak * (2.0 * PI * k as f64 / p as f64 + target.phase).cos()).clamp(lo, hi))
        .collect();
    Ok(BiasWaveform {
        currents: filtered(currents, rate, awg, map.span()),
        sample_rate: rate,
        period_samples: p,
        clipped_samples: 0,
    })
}

/// Normalized transmission `T(t)` along the bias waveform.
pub fn render_modulation(
    map: &TransmissionMap,
    bias: &BiasWaveform,
) -> Result<SampledWaveform, ShapeError> {
    let samples = bias
        .currents
        .iter()
        .map(|&i| map.eval(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampledWaveform::new(samples, bias.sample_rate, 0.0, 0.0)?)
}

/// Power at each harmonic `n ≥ 1` of Ω, both sidebands combined, relative
/// to the first harmonic.
pub fn harmonic_weights(
    t_waveform: &SampledWaveform,
    omega_if: f64,
    n_max: u32,
) -> Result<BTreeMap<u32, PowerDb>, ShapeError> {
    let f_if = omega_if / (2.0 * PI);
    let periods = t_waveform.duration() * f_if;
    if (periods - periods.round()).abs() > 1e-6 || periods.round() < 1.0 {
        return Err(ShapeError::Windowing(periods));
    }
    let s = signals::spectrum(t_waveform, Window::Rectangular)?;
    let powers = signals::harmonic_powers(&s, s.carrier_hz, f_if, n_max)?;
    let pair = |n: i32| powers[&n] + powers[&-n];
    let p1 = pair(1);
    if !(p1 > 0.0) {
        return Err(ShapeError::InvalidInput(
            "no power at the first harmonic".into(),
        ));
    }
    Ok((1..=n_max as i32)
        .map(|n| (n as u32, Reference::Power(p1).level(pair(n))))
        .collect())
}

/// Largest weight among harmonics `n ≥ 2`.
pub fn worst_weight(weights: &BTreeMap<u32, PowerDb>) -> f64 {
    weights
        .iter()
        .filter(|(n, _)| **n >= 2)
        .map(|(_, p)| p.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Total weight of harmonics `n ≥ 2`, dB relative to the first.
pub fn residual_weight(weights: &BTreeMap<u32, PowerDb>) -> f64 {
    let sum: f64 = weights
        .iter()
        .filter(|(n, _)| **n >= 2)
        .map(|(_, p)| p.ratio())
        .sum();
    signals::db(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tib::linear_grid;
    use proptest::prelude::*;

    fn linear_map() -> TransmissionMap {
        let g = linear_grid(-2e-3, 2e-3, 81);
        let t = g.iter().map(|i| i / 2e-3).collect();
        TransmissionMap::from_real(4e9, g, t).unwrap()
    }

    fn odd_map() -> TransmissionMap {
        let g = linear_grid(-1e-3, 1e-3, 201);
        let t = g
            .iter()
            .map(|i| (1.4 * i / 1e-3).sin() / 1.4f64.sin())
            .collect();
        TransmissionMap::from_real(4e9, g, t).unwrap()
    }

    const W: f64 = 2.0 * PI * 3e6;

    #[test]
    fn linear_map_inverts_to_cosine() {
        let b = shape_bias(&linear_map(), W, &AwgModel::unlimited(1.2e9)).unwrap();
        assert_eq!(b.period_samples, 400);
        for (k, i) in b.currents.iter().enumerate() {
            let want = 2e-3 * (2.0 * PI * k as f64 / 400.0).cos();
            assert!((i - want).abs() < 1e-15);
        }
        let t = render_modulation(&linear_map(), &b).unwrap();
        for (k, z) in t.samples.iter().enumerate() {
            assert!((z.re - (2.0 * PI * k as f64 / 400.0).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_invertible_map_clips_and_flags() {
        // rises to a peak at 0.6 mA then falls: only part of [-1, 1] reachable
        let g = linear_grid(-1e-3, 1e-3, 201);
        let t: Vec<f64> = g
            .iter()
            .map(|&i| (PI / 2.0 * i / 0.6e-3).sin() * if i.abs() > 0.6e-3 { 0.8 } else { 1.0 })
            .collect();
        let m = TransmissionMap::from_real(4e9, g, t).unwrap();
        let target = ShapeTarget {
            omega_if: W,
            phase: 0.0,
            depth: 1.2,
        };
        let b = shape_bias_with(&m, &target, &AwgModel::unlimited(1.2e9)).unwrap();
        assert!(b.clipped_samples > 0);
        let ((lo, _), (hi, _)) = m.branch_extremes();
        assert!(b.currents.iter().all(|&i| i >= lo && i <= hi));
    }

    #[test]
    fn errors() {
        let m = linear_map();
        let awg = AwgModel::unlimited(1.2e9);
        assert!(matches!(
            shape_bias(&m, 2.0 * PI * 130e6, &awg),
            Err(ShapeError::InvalidInput(_))
        ));
        assert!(matches!(
            shape_bias(&m, 2.0 * PI * 100e6, &AwgModel::unlimited(0.5e9)),
            Err(ShapeError::Sampling(5))
        ));
        let t = SampledWaveform::from_fn(90, 1e9, 0.0, |_| Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(
            harmonic_weights(&t, 2.0 * PI * 20e6, 5),
            Err(ShapeError::Windowing(_))
        ));
    }

    #[test]
    fn cosine_and_square_weights() {
        let n = 360;
        let cosine = SampledWaveform::from_fn(n, 360e6, 0.0, |t| {
            Complex64::new((2.0 * PI * 1e6 * t).cos(), 0.0)
        })
        .unwrap();
        let w = harmonic_weights(&cosine, 2.0 * PI * 1e6, 9).unwrap();
        assert!(w[&1].0.abs() < 1e-12);
        assert!(w
            .iter()
            .filter(|(n, _)| **n > 1)
            .all(|(_, p)| p.0 <= -120.0));

        let n = 3600;
        let fs = 3600e6;
        let square = SampledWaveform::from_fn(n, fs, 0.0, |t| {
            let k = (t * fs).round() as usize;
            Complex64::new(if (900..2700).contains(&k) { -1.0 } else { 1.0 }, 0.0)
        })
        .unwrap();
        let w = harmonic_weights(&square, 2.0 * PI * 1e6, 5).unwrap();
        for m in [3u32, 5] {
            let want = 1.0 / (m * m) as f64;
            assert!((w[&m].ratio() / want - 1.0).abs() < 1e-3, "m={m}");
        }
        assert!(w[&2].0 <= -120.0);
    }

    #[test]
    fn naive_drive_on_nonlinear_map_makes_odd_harmonics() {
        let m = odd_map();
        let awg = AwgModel::unlimited(1.2e9);
        let b = naive_bias(&m, &ShapeTarget::cosine(W), &awg, 1e-3).unwrap();
        let t = render_modulation(&m, &b).unwrap();
        let w = harmonic_weights(&t, W, 9).unwrap();
        // direct Fourier analysis of sin(1.4 cos x): third harmonic from the Bessel series
        let j = |n: i32, x: f64| bessel_j(n, x);
        let want3 = (j(3, 1.4) / j(1, 1.4)).powi(2);
        assert!(
            (w[&3].ratio() / want3 - 1.0).abs() < 1e-3,
            "{} {}",
            w[&3].ratio(),
            want3
        );
        for n in [2u32, 4, 6, 8] {
            assert!(w[&n].0 <= -120.0);
        }
        let s = shape_bias(&m, W, &awg).unwrap();
        let ts = render_modulation(&m, &s).unwrap();
        assert!(worst_weight(&harmonic_weights(&ts, W, 9).unwrap()) <= -120.0);
    }

    fn bessel_j(n: i32, x: f64) -> f64 {
        // integral representation, trapezoid on a periodic integrand is spectrally accurate
        let m = 2000;
        (0..m)
            .map(|k| {
                let t = PI * (k as f64 + 0.5) / m as f64;
                (n as f64 * t - x * t.sin()).cos()
            })
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn upsampling_preserves_band_limited_waveforms() {
        let b = BiasWaveform {
            currents: (0..40)
                .map(|k| (2.0 * PI * 3.0 * k as f64 / 40.0).sin())
                .collect(),
            sample_rate: 40.0,
            period_samples: 40,
            clipped_samples: 0,
        };
        let u = b.upsampled(8, (-2.0, 2.0));
        assert_eq!(u.currents.len(), 320);
        for (k, v) in u.currents.iter().enumerate() {
            assert!((v - (2.0 * PI * 3.0 * k as f64 / 320.0).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_shape() {
        let awg = AwgModel::reference();
        assert!((awg.response(180e6) - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(awg.response(0.0) == 1.0);
        assert!(AwgModel {
            analog_bandwidth: Some(700e6),
            ..awg
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn composition_is_exact_without_bandwidth_limit(
            k in 0.2f64..1.5, f_mhz in 1.0f64..100.0, phase in -3.0f64..3.0,
        ) {
            let g = linear_grid(-1e-3, 1e-3, 161);
            let t = g.iter().map(|i| (k * i / 1e-3).sin() / k.sin()).collect();
            let m = TransmissionMap::from_real(4e9, g, t).unwrap();
            let target = ShapeTarget { omega_if: 2.0 * PI * f_mhz * 1e6, phase, depth: 1.0 };
            let b = shape_bias_with(&m, &target, &AwgModel::unlimited(1.2e9)).unwrap();
            let w = render_modulation(&m, &b).unwrap();
            let p = b.period_samples as f64;
            let rms = (w.samples.iter().enumerate().map(|(j, z)| {
                let want = (2.0 * PI * j as f64 / p + phase).cos();
                (z.re - want).powi(2) + z.im.powi(2)
            }).sum::<f64>() / p).sqrt();
            prop_assert!(rms < 1e-6);
        }

        #[test]
        fn clipping_is_bounded(depth in 0.5f64..3.0, f_mhz in 1.0f64..120.0) {
            let m = odd_map();
            let target = ShapeTarget { omega_if: 2.0 * PI * f_mhz * 1e6, phase: 0.0, depth };
            let b = shape_bias_with(&m, &target, &AwgModel::reference()).unwrap();
            let (lo, hi) = m.span();
            prop_assert!(b.currents.iter().all(|&i| i >= lo && i <= hi));
            let again = b.upsampled(4, (lo, hi));
            prop_assert!(again.currents.iter().all(|&i| i >= lo && i <= hi));
        }
    }
}
