//! Dispersive readout through frequency-converting modulators.
//!
//! Each qubit shifts its cavity by `±χ`; a probe at the bare cavity centre
//! picks up a state-dependent phase. Channels are converted by their own
//! modulator, summed onto one line and separated again by a digital
//! receiver that down-converts, low-passes and thresholds window means.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::planner::FrequencyPlan;
use crate::signals::{
    self, band_power_linear, db, fft_forward, fft_inverse, SampledWaveform, SignalError, Window,
    FLOOR_DB,
};
use crate::ssbm::{
    check_quasi_static, eddy_filter, DriveConfig, Modulator, SsbmAssembly, SsbmError,
};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("probe detuned by {detuning} Hz, beyond 10 linewidths ({limit} Hz)")]
    ModelValidity { detuning: f64, limit: f64 },
    #[error("waveforms are not on a common grid: {0}")]
    Alignment(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Ssbm(#[from] SsbmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitState {
    Ground,
    Excited,
}

impl QubitState {
    pub fn flipped(self) -> Self {
        match self {
            Self::Ground => Self::Excited,
            Self::Excited => Self::Ground,
        }
    }
}

/// Telegraph trajectory: the state flips at each jump time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: QubitState,
    pub jumps: Vec<f64>,
}

impl Trajectory {
    pub fn constant(state: QubitState) -> Self {
        Self {
            initial: state,
            jumps: Vec::new(),
        }
    }

    pub fn new(initial: QubitState, jumps: Vec<f64>) -> Result<Self, ReadoutError> {
        if jumps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ReadoutError::InvalidInput(
                "jump times must be strictly increasing".into(),
            ));
        }
        Ok(Self { initial, jumps })
    }

    /// Random telegraph process with symmetric jump rate `rate_hz` over `[0, duration)`.
    pub fn telegraph(rate_hz: f64, duration: f64, rng: &mut impl Rng) -> Self {
        let initial = if rng.gen_bool(0.5) {
            QubitState::Excited
        } else {
            QubitState::Ground
        };
        let mut jumps = Vec::new();
        if rate_hz > 0.0 {
            let exp = Exp::new(rate_hz).expect("positive rate");
            let mut t = exp.sample(rng);
            while t < duration {
                jumps.push(t);
                t += exp.sample(rng);
            }
        }
        Self { initial, jumps }
    }

    pub fn state_at(&self, t: f64) -> QubitState {
        let n = self.jumps.partition_point(|&j| j <= t);
        if n % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        }
    }

    /// Fraction of `[a, b)` spent excited.
    pub fn excited_fraction(&self, a: f64, b: f64) -> f64 {
        let mut t = a;
        let mut s = self.state_at(a);
        let mut excited = 0.0;
        for &j in self.jumps.iter().filter(|&&j| j > a && j < b) {
            if s == QubitState::Excited {
                excited += j - t;
            }
            t = j;
            s = s.flipped();
        }
        if s == QubitState::Excited {
            excited += b - t;
        }
        excited / (b - a)
    }
}

/// One dispersively coupled cavity. Frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitChannel {
    /// Bare (dressed-average) cavity centre.
    pub cavity_hz: f64,
    /// Dispersive half-shift: the ground state resonates at `cavity_hz + chi_hz`.
    pub chi_hz: f64,
    pub kappa_hz: f64,
    pub trajectory: Trajectory,
}

impl QubitChannel {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        if !(self.kappa_hz > 0.0) || self.chi_hz == 0.0 || !self.chi_hz.is_finite() {
            return Err(ReadoutError::InvalidInput(
                "kappa > 0 and chi != 0 required".into(),
            ));
        }
        Ok(())
    }

    pub fn resonance(&self, s: QubitState) -> f64 {
        match s {
            QubitState::Ground => self.cavity_hz + self.chi_hz,
            QubitState::Excited => self.cavity_hz - self.chi_hz,
        }
    }

    /// Steady-state transmission `(κ/2) / (i(f − f_σ) + κ/2)`.
    pub fn transmission(&self, s: QubitState, probe_hz: f64) -> Complex64 {
        let half = 0.5 * self.kappa_hz;
        Complex64::new(half, 0.0) / Complex64::new(half, probe_hz - self.resonance(s))
    }
}

/// Transmitted field for an arbitrary input around `input.carrier_hz`.
///
/// The intracavity field obeys `ȧ = −(κ/2 + i·2πΔ_σ) a + (κ/2) x` with the
/// state taken at each sample; the input is held over a sample and every
/// step is integrated exactly. The record starts in steady state.
pub fn cavity_response(
    ch: &QubitChannel,
    input: &SampledWaveform,
) -> Result<SampledWaveform, ReadoutError> {
    ch.validate()?;
    let detuning = (input.carrier_hz - ch.cavity_hz).abs();
    let limit = 10.0 * ch.kappa_hz;
    if detuning >= limit {
        return Err(ReadoutError::ModelValidity { detuning, limit });
    }
    let dt = 1.0 / input.sample_rate;
    let half = PI * ch.kappa_hz;
    let step = |s: QubitState| {
        let lambda = Complex64::new(half, 2.0 * PI * (input.carrier_hz - ch.resonance(s)));
        let decay = (-lambda * dt).exp();
        (decay, (1.0 - decay) * half / lambda)
    };
    let coeffs = [step(QubitState::Ground), step(QubitState::Excited)];
    let idx = |s: QubitState| (s == QubitState::Excited) as usize;
    let mut s = ch.trajectory.state_at(input.t0);
    let mut a = input.samples[0] * ch.transmission(s, input.carrier_hz);
    let mut out = Vec::with_capacity(input.len());
    for (k, x) in input.samples.iter().enumerate() {
        out.push(a);
        s = ch.trajectory.state_at(input.time(k));
        let (d, g) = coeffs[idx(s)];
        a = a * d + g * x;
    }
    Ok(SampledWaveform::new(
        out,
        input.sample_rate,
        input.t0,
        input.carrier_hz,
    )?)
}

/// Cavity output for a constant probe of complex amplitude `amplitude`.
pub fn cavity_output(
    ch: &QubitChannel,
    probe_hz: f64,
    amplitude: f64,
    duration: f64,
    rate: f64,
) -> Result<SampledWaveform, ReadoutError> {
    let n = (duration * rate).round() as usize;
    if n < 2 {
        return Err(ReadoutError::InvalidInput(
            "record shorter than two samples".into(),
        ));
    }
    let probe = SampledWaveform::new(vec![Complex64::new(amplitude, 0.0); n], rate, 0.0, probe_hz)?;
    cavity_response(ch, &probe)
}

/// Square-wave amplitude modulation of a unit carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmStimulus {
    pub nu_hz: f64,
    pub depth: f64,
    pub carrier_hz: f64,
}

/// Envelope is 1 in the first half of each period and `1 − depth` in the second.
pub fn am_wavepacket(
    stim: &AmStimulus,
    duration: f64,
    rate: f64,
) -> Result<SampledWaveform, ReadoutError> {
    if !(stim.depth > 0.0 && stim.depth <= 1.0) || !(stim.nu_hz > 0.0) {
        return Err(ReadoutError::InvalidInput(
            "0 < depth <= 1 and nu > 0".into(),
        ));
    }
    if !(rate > 20.0 * stim.nu_hz) {
        return Err(ReadoutError::InvalidInput("rate must exceed 20 nu".into()));
    }
    let n = (duration * rate).round() as usize;
    let samples = (0..n)
        .map(|k| {
            let phase = (k as f64 * stim.nu_hz / rate).fract();
            Complex64::new(if phase < 0.5 { 1.0 } else { 1.0 - stim.depth }, 0.0)
        })
        .collect();
    Ok(SampledWaveform::new(samples, rate, 0.0, stim.carrier_hz)?)
}

/// Moves `w` to a new reference carrier without changing the physical signal.
pub fn retune(w: &SampledWaveform, carrier_hz: f64) -> SampledWaveform {
    let df = w.carrier_hz - carrier_hz;
    let samples = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, z)| z * Complex64::from_polar(1.0, 2.0 * PI * df * w.time(k)))
        .collect();
    SampledWaveform {
        samples,
        carrier_hz,
        ..w.clone()
    }
}

/// Coherent sum of waveforms on one grid.
pub fn fdm_combine(outputs: &[SampledWaveform]) -> Result<SampledWaveform, ReadoutError> {
    let first = outputs
        .first()
        .ok_or_else(|| ReadoutError::InvalidInput("no channels".into()))?;
    for w in outputs {
        if w.len() != first.len()
            || w.sample_rate != first.sample_rate
            || w.t0 != first.t0
            || w.carrier_hz != first.carrier_hz
        {
            return Err(ReadoutError::Alignment(format!(
                "{} samples at {} S/s from {} s around {} Hz vs {} at {} S/s from {} s around {} Hz",
                w.len(),
                w.sample_rate,
                w.t0,
                w.carrier_hz,
                first.len(),
                first.sample_rate,
                first.t0,
                first.carrier_hz
            )));
        }
    }
    let mut sum = first.clone();
    for w in &outputs[1..] {
        for (a, b) in sum.samples.iter_mut().zip(&w.samples) {
            *a += b;
        }
    }
    Ok(sum)
}

/// Frequency conversion by one modulator, described by the complex
/// amplitude of each tone `carrier + k·offset` for a unit input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub offset_hz: f64,
    /// `(k, amplitude)` pairs.
    pub coefficients: Vec<(i32, Complex64)>,
    pub eddy_tau: f64,
}

impl Conversion {
    /// A straight-through connection.
    pub fn bypass() -> Self {
        Self {
            offset_hz: 0.0,
            coefficients: vec![(0, Complex64::new(1.0, 0.0))],
            eddy_tau: 0.0,
        }
    }

    /// Conversion by `offset_hz` (sign picks the sideband) with `drive`
    /// as template; `offset_hz == 0` is a bypass.
    pub fn new(
        modulator: &Modulator,
        drive: &DriveConfig,
        offset_hz: f64,
    ) -> Result<Self, ReadoutError> {
        if offset_hz == 0.0 {
            return Ok(Self::bypass());
        }
        let sign = offset_hz.signum();
        let d = DriveConfig {
            carrier_hz: modulator.carrier_hz,
            if_hz: offset_hz.abs(),
            theta: sign * PI / 2.0,
            ..*drive
        };
        let n_max = 9;
        let c = modulator.output_coefficients(&d, n_max)?;
        let coefficients = (-(n_max as i32)..=n_max as i32)
            .zip(c)
            .map(|(n, z)| (n * sign as i32, z))
            .collect();
        Ok(Self {
            offset_hz,
            coefficients,
            eddy_tau: modulator.assembly.eddy_tau,
        })
    }

    pub fn apply(&self, input: &SampledWaveform) -> Result<SampledWaveform, ReadoutError> {
        check_quasi_static(input, input.carrier_hz)?;
        let x = eddy_filter(input, self.eddy_tau);
        let samples = x
            .samples
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let t = x.time(i);
                let m: Complex64 = self
                    .coefficients
                    .iter()
                    .map(|(k, c)| {
                        c * Complex64::from_polar(1.0, 2.0 * PI * *k as f64 * self.offset_hz * t)
                    })
                    .sum();
                z * m
            })
            .collect();
        Ok(SampledWaveform { samples, ..x })
    }
}

/// Multiplies by `e^{−i2π·shift·t}`.
pub fn downconvert(w: &SampledWaveform, shift_hz: f64) -> SampledWaveform {
    let samples = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, z)| z * Complex64::from_polar(1.0, -2.0 * PI * shift_hz * w.time(k)))
        .collect();
    SampledWaveform {
        samples,
        carrier_hz: w.carrier_hz + shift_hz,
        ..w.clone()
    }
}

/// Zero-phase Butterworth-magnitude low-pass applied in the frequency domain.
pub fn lowpass(w: &SampledWaveform, bandwidth_hz: f64, order: u32) -> SampledWaveform {
    let n = w.len();
    let mut buf = w.samples.clone();
    fft_forward(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        let f = kk * w.sample_rate / n as f64;
        *z /= (1.0 + (f / bandwidth_hz).powi(2 * order as i32)).sqrt() * n as f64;
    }
    fft_inverse(&mut buf);
    SampledWaveform {
        samples: buf,
        ..w.clone()
    }
}

/// Pearson correlation of two equal-length real sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Best correlation of `received` against `reference` delayed by
/// `0..=max_lag` samples (circular).
pub fn envelope_correlation(reference: &[f64], received: &[f64], max_lag: usize) -> f64 {
    let n = reference.len();
    (0..=max_lag.min(n - 1))
        .map(|lag| {
            let shifted: Vec<f64> = (0..n).map(|k| reference[(k + n - lag) % n]).collect();
            pearson(&shifted, received)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Settings for the square-wave conversion test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmConfig {
    pub carrier_hz: f64,
    pub if_hz: f64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub receiver_bw_hz: f64,
    pub receiver_order: u32,
    pub max_lag_s: f64,
    pub rates_hz: Vec<f64>,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 4e9,
            if_hz: 60e6,
            sample_rate_hz: 2.4e9,
            duration_s: 10e-6,
            receiver_bw_hz: 25e6,
            receiver_order: 4,
            max_lag_s: 200e-9,
            rates_hz: vec![1e6, 5e6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmResult {
    pub nu_hz: f64,
    pub correlation: f64,
    pub input: SampledWaveform,
    pub output: SampledWaveform,
    /// Received envelope after down-conversion and filtering.
    pub envelope: Vec<f64>,
}

/// Converts a square-wave AM tone and compares the received envelope with
/// the input envelope passed through the same receiver filter.
pub fn am_conversion(
    assembly: &SsbmAssembly,
    drive: &DriveConfig,
    cfg: &AmConfig,
    nu_hz: f64,
) -> Result<AmResult, ReadoutError> {
    let stim = AmStimulus {
        nu_hz,
        depth: 1.0,
        carrier_hz: cfg.carrier_hz,
    };
    let input = am_wavepacket(&stim, cfg.duration_s, cfg.sample_rate_hz)?;
    let d = DriveConfig {
        carrier_hz: cfg.carrier_hz,
        if_hz: cfg.if_hz,
        ..*drive
    };
    let m = Modulator::new(assembly, cfg.carrier_hz)?;
    let output = crate::ssbm::simulate_ports(&m, &d, &input)?.output;
    let shift = d.desired_sideband() as f64 * cfg.if_hz;
    let rx = lowpass(
        &downconvert(&output, shift),
        cfg.receiver_bw_hz,
        cfg.receiver_order,
    );
    let reference = lowpass(&input, cfg.receiver_bw_hz, cfg.receiver_order);
    let envelope: Vec<f64> = rx.samples.iter().map(|z| z.norm()).collect();
    let ref_env: Vec<f64> = reference.samples.iter().map(|z| z.norm()).collect();
    let lag = (cfg.max_lag_s * cfg.sample_rate_hz).round() as usize;
    Ok(AmResult {
        nu_hz,
        correlation: envelope_correlation(&ref_env, &envelope, lag),
        input,
        output,
        envelope,
    })
}

/// Readout chain settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub probe_power_dbm: f64,
    /// χ as a multiple of κ.
    pub chi_over_kappa: f64,
    pub jump_rate_hz: f64,
    pub windows: usize,
    /// Decision window length in units of `1/κ` (κ in rad/s).
    pub window_kappa: f64,
    pub line_rate_hz: f64,
    pub filter_bw_hz: f64,
    pub filter_order: u32,
    /// Effective noise temperature referred to the line, K.
    pub noise_temperature_k: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            probe_power_dbm: -125.0,
            chi_over_kappa: 1.0,
            jump_rate_hz: 5e3,
            windows: 400,
            window_kappa: 5.0,
            line_rate_hz: 3.2e9,
            filter_bw_hz: 3e6,
            filter_order: 4,
            noise_temperature_k: 0.015,
        }
    }
}

/// Crosstalk in dB: entry `(i, j)` is channel `j`'s power inside channel
/// `i`'s slot relative to channel `i`'s own power there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    pub db: Vec<Vec<f64>>,
}

impl CrosstalkMatrix {
    pub fn worst_off_diagonal(&self) -> f64 {
        let mut w = FLOOR_DB;
        for (i, row) in self.db.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    w = w.max(*v);
                }
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDecisions {
    pub decisions: Vec<QubitState>,
    pub truth: Vec<QubitState>,
    pub assignment_error: f64,
    /// Received window means.
    pub window_means: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmSeeds {
    pub trajectory: u64,
    pub noise: u64,
}

/// JSON record of one multiplexed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmReport {
    pub plan: FrequencyPlan,
    pub seeds: FdmSeeds,
    pub assignment_error: Vec<f64>,
    pub crosstalk: CrosstalkMatrix,
    pub windows: usize,
}

/// One multiplexed readout experiment.
#[derive(Debug, Clone)]
pub struct FdmSystem {
    pub config: ReadoutConfig,
    pub plan: FrequencyPlan,
    pub line_carrier_hz: f64,
    pub conversions: Vec<Conversion>,
    pub window_samples: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl FdmSystem {
    /// Builds one modulator per channel at its dressed frequency.
    pub fn new(
        config: &ReadoutConfig,
        plan: &FrequencyPlan,
        assembly: &SsbmAssembly,
        drive: &DriveConfig,
        line_carrier_hz: f64,
    ) -> Result<Self, ReadoutError> {
        let n = plan.channels.len();
        if plan.offsets_hz.len() != n || plan.slots_hz.len() != n || n == 0 {
            return Err(ReadoutError::Plan("plan is malformed".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (plan.slots_hz[i], plan.slots_hz[j]);
                if a[0] < b[1] && b[0] < a[1] {
                    return Err(ReadoutError::Plan(format!(
                        "receiver bands {i} and {j} overlap"
                    )));
                }
            }
        }
        let nyquist = 0.5 * config.line_rate_hz;
        for s in &plan.slots_hz {
            if (s[0] - line_carrier_hz).abs() >= nyquist
                || (s[1] - line_carrier_hz).abs() >= nyquist
            {
                return Err(ReadoutError::Plan("slot outside the line spectrum".into()));
            }
        }
        let kappa = plan.channels[0].kappa_hz;
        if config.filter_bw_hz > 3.0 * kappa {
            return Err(ReadoutError::Plan(
                "receiver bandwidth exceeds the slot".into(),
            ));
        }
        let conversions = plan
            .channels
            .par_iter()
            .zip(&plan.offsets_hz)
            .map(|(c, &o)| {
                if o == 0.0 {
                    return Ok(Conversion::bypass());
                }
                let m = Modulator::new(assembly, c.omega_hz)?;
                Conversion::new(&m, drive, o)
            })
            .collect::<Result<Vec<_>, ReadoutError>>()?;
        let window = config.window_kappa / (2.0 * PI * kappa);
        Ok(Self {
            config: config.clone(),
            plan: plan.clone(),
            line_carrier_hz,
            conversions,
            window_samples: (window * config.line_rate_hz).round() as usize,
        })
    }

    pub fn samples(&self) -> usize {
        self.window_samples * self.config.windows
    }

    pub fn duration(&self) -> f64 {
        self.samples() as f64 / self.config.line_rate_hz
    }

    pub fn channel(&self, i: usize, trajectory: Trajectory) -> QubitChannel {
        let c = &self.plan.channels[i];
        QubitChannel {
            cavity_hz: c.omega_hz,
            chi_hz: self.config.chi_over_kappa * c.kappa_hz,
            kappa_hz: c.kappa_hz,
            trajectory,
        }
    }

    pub fn trajectories(&self, seed: u64) -> Vec<Trajectory> {
        (0..self.plan.channels.len())
            .map(|i| {
                Trajectory::telegraph(
                    self.config.jump_rate_hz,
                    self.duration(),
                    &mut rng_for(seed, i as u64),
                )
            })
            .collect()
    }

    /// Channel `i`'s converted emission on the line, referred to the line carrier.
    pub fn emission(
        &self,
        i: usize,
        trajectory: &Trajectory,
    ) -> Result<SampledWaveform, ReadoutError> {
        let ch = self.channel(i, trajectory.clone());
        let amp = signals::dbm_to_watts(self.config.probe_power_dbm).sqrt();
        let cav = cavity_output(
            &ch,
            ch.cavity_hz,
            amp,
            self.duration(),
            self.config.line_rate_hz,
        )?;
        let conv = self.conversions[i].apply(&cav)?;
        Ok(retune(&conv, self.line_carrier_hz))
    }

    /// Line signal with the listed channels driven.
    pub fn line(
        &self,
        trajectories: &[Option<Trajectory>],
    ) -> Result<SampledWaveform, ReadoutError> {
        let parts = trajectories
            .par_iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| self.emission(i, t)))
            .collect::<Result<Vec<_>, _>>()?;
        fdm_combine(&parts)
    }

    /// Window means of channel `i` after down-conversion, optional noise
    /// and low-pass filtering.
    pub fn receive(
        &self,
        line: &SampledWaveform,
        i: usize,
        noise_seed: Option<u64>,
    ) -> Vec<Complex64> {
        let shift = self.plan.converted_hz(i) - self.line_carrier_hz;
        let mut bb = downconvert(line, shift);
        if let Some(seed) = noise_seed {
            let var = BOLTZMANN * self.config.noise_temperature_k * self.config.line_rate_hz;
            let normal = Normal::new(0.0, (0.5 * var).sqrt()).expect("finite noise");
            let mut rng = rng_for(seed, 1000 + i as u64);
            for z in bb.samples.iter_mut() {
                *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
        let rx = lowpass(&bb, self.config.filter_bw_hz, self.config.filter_order);
        rx.samples
            .chunks_exact(self.window_samples)
            .map(|c| c.iter().sum::<Complex64>() / c.len() as f64)
            .collect()
    }

    /// Ground and excited centroids of every channel from noise-free runs
    /// with all channels held in one state.
    pub fn centroids(&self) -> Result<Vec<(Complex64, Complex64)>, ReadoutError> {
        let n = self.plan.channels.len();
        let cal = |s: QubitState| -> Result<Vec<Complex64>, ReadoutError> {
            let line = self.line(&vec![Some(Trajectory::constant(s)); n])?;
            Ok((0..n)
                .into_par_iter()
                .map(|i| {
                    let m = self.receive(&line, i, None);
                    m.iter().sum::<Complex64>() / m.len() as f64
                })
                .collect())
        };
        let (g, e) = (cal(QubitState::Ground)?, cal(QubitState::Excited)?);
        Ok(g.into_iter().zip(e).collect())
    }

    /// Thresholded decisions for every channel.
    pub fn decide(
        &self,
        line: &SampledWaveform,
        trajectories: &[Trajectory],
        centroids: &[(Complex64, Complex64)],
        noise_seed: u64,
    ) -> Vec<ChannelDecisions> {
        let w = self.window_samples as f64 / self.config.line_rate_hz;
        (0..trajectories.len())
            .into_par_iter()
            .map(|i| {
                let means = self.receive(line, i, Some(noise_seed));
                let (g, e) = centroids[i];
                let axis = e - g;
                let mid = 0.5 * (g + e);
                let decisions: Vec<QubitState> = means
                    .iter()
                    .map(|m| {
                        if ((m - mid) * axis.conj()).re > 0.0 {
                            QubitState::Excited
                        } else {
                            QubitState::Ground
                        }
                    })
                    .collect();
                let truth: Vec<QubitState> = (0..means.len())
                    .map(|k| {
                        let f = trajectories[i].excited_fraction(k as f64 * w, (k + 1) as f64 * w);
                        if f > 0.5 {
                            QubitState::Excited
                        } else {
                            QubitState::Ground
                        }
                    })
                    .collect();
                let wrong = decisions.iter().zip(&truth).filter(|(a, b)| a != b).count();
                ChannelDecisions {
                    assignment_error: wrong as f64 / means.len() as f64,
                    decisions,
                    truth,
                    window_means: means,
                }
            })
            .collect()
    }

    /// Crosstalk from noise-free runs with one channel driven at a time.
    pub fn crosstalk(&self, trajectories: &[Trajectory]) -> Result<CrosstalkMatrix, ReadoutError> {
        let n = trajectories.len();
        if n < 2 {
            return Err(ReadoutError::InvalidInput(
                "crosstalk needs two channels".into(),
            ));
        }
        let powers = (0..n)
            .into_par_iter()
            .map(|j| {
                let e = self.emission(j, &trajectories[j])?;
                let s = signals::spectrum(&e, Window::Hann)?;
                let row = (0..n)
                    .map(|i| {
                        let c = &self.plan.channels[i];
                        band_power_linear(&s, self.plan.converted_hz(i), 1.5 * c.kappa_hz)
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok(row)
            })
            .collect::<Result<Vec<_>, ReadoutError>>()?;
        let db = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            db(powers[j][i] / powers[i][i]).max(FLOOR_DB)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(CrosstalkMatrix { db })
    }

    /// Full experiment: trajectories, line, decisions and crosstalk.
    pub fn run(
        &self,
        seeds: &FdmSeeds,
    ) -> Result<(FdmReport, Vec<ChannelDecisions>), ReadoutError> {
        let traj = self.trajectories(seeds.trajectory);
        let line = self.line(&traj.iter().cloned().map(Some).collect::<Vec<_>>())?;
        let centroids = self.centroids()?;
        let decisions = self.decide(&line, &traj, &centroids, seeds.noise);
        let crosstalk = self.crosstalk(&traj)?;
        Ok((
            FdmReport {
                plan: self.plan.clone(),
                seeds: seeds.clone(),
                assignment_error: decisions.iter().map(|d| d.assignment_error).collect(),
                crosstalk,
                windows: self.config.windows,
            },
            decisions,
        ))
    }
}

/// Copy of `plan` with channel `victim` moved so that its slot is centred
/// on spur `harmonic` of channel `source`.
pub fn collision_plan(
    plan: &FrequencyPlan,
    source: usize,
    harmonic: i32,
    victim: usize,
) -> FrequencyPlan {
    let mut p = plan.clone();
    let c = &plan.channels[source];
    let f = c.omega_hz + harmonic as f64 * plan.offsets_hz[source];
    let v = plan.channels[victim];
    p.offsets_hz[victim] = f - v.omega_hz;
    let w = 0.5 * v.slot_width();
    p.slots_hz[victim] = [f - w, f + w];
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn channel(chi: f64, traj: Trajectory) -> QubitChannel {
        QubitChannel {
            cavity_hz: 6e9,
            chi_hz: chi,
            kappa_hz: 4e6,
            trajectory: traj,
        }
    }

    #[test]
    fn resonant_probe_is_transmitted() {
        let ch = channel(2e6, Trajectory::constant(QubitState::Ground));
        let w = cavity_output(&ch, 6.002e9, 1.0, 1e-6, 1e9).unwrap();
        for z in &w.samples {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn large_shift_gives_opposite_phases() {
        let chi = 5.0 * 4e6;
        let g = channel(chi, Trajectory::constant(QubitState::Ground));
        let e = channel(chi, Trajectory::constant(QubitState::Excited));
        let pg = cavity_output(&g, 6e9, 1.0, 1e-7, 1e9).unwrap().samples[50].arg();
        let pe = cavity_output(&e, 6e9, 1.0, 1e-7, 1e9).unwrap().samples[50].arg();
        let oracle = 2.0 * (chi / 2e6).atan();
        assert!(((pg - pe).abs() - oracle).abs() < 1e-9);
        assert!(PI - (pg - pe).abs() < 0.2);
    }

    #[test]
    fn jump_relaxes_with_single_pole() {
        let rate = 1e9;
        let tj = 200e-9;
        let traj = Trajectory::new(QubitState::Ground, vec![tj]).unwrap();
        let ch = channel(3e6, traj);
        let w = cavity_output(&ch, 6e9, 1.0, 1e-6, rate).unwrap();
        let tg = ch.transmission(QubitState::Ground, 6e9);
        let te = ch.transmission(QubitState::Excited, 6e9);
        let lambda = Complex64::new(PI * 4e6, 2.0 * PI * 3e6);
        for k in 201..1000 {
            let t = (k - 200) as f64 / rate;
            let want = te + (tg - te) * (-lambda * t).exp();
            assert!((w.samples[k] - want).norm() < 1e-9, "{k}");
        }
        let x = (w.samples[200 + 500] - te).norm() / (tg - te).norm();
        assert!((x - (-500e-9 * PI * 4e6).exp()).abs() < 1e-9);
    }

    #[test]
    fn detuned_probe_is_rejected() {
        let ch = channel(2e6, Trajectory::constant(QubitState::Ground));
        assert!(matches!(
            cavity_output(&ch, 6.05e9, 1.0, 1e-6, 1e9),
            Err(ReadoutError::ModelValidity { .. })
        ));
    }

    #[test]
    fn telegraph_is_reproducible() {
        let a = Trajectory::telegraph(1e6, 1e-5, &mut rng_for(3, 0));
        let b = Trajectory::telegraph(1e6, 1e-5, &mut rng_for(3, 0));
        assert_eq!(a, b);
        assert!(a.jumps.windows(2).all(|w| w[1] > w[0]));
        assert!(Trajectory::new(QubitState::Ground, vec![2.0, 1.0]).is_err());
        let t = Trajectory::new(QubitState::Ground, vec![1.0, 3.0]).unwrap();
        assert!((t.excited_fraction(0.0, 4.0) - 0.5).abs() < 1e-15);
        assert_eq!(t.state_at(2.0), QubitState::Excited);
    }

    #[test]
    fn square_wave_envelope_and_spectrum() {
        let stim = AmStimulus {
            nu_hz: 1e6,
            depth: 1.0,
            carrier_hz: 4e9,
        };
        let w = am_wavepacket(&stim, 4e-6, 100e6).unwrap();
        assert_eq!(w.samples[0].re, 1.0);
        assert_eq!(w.samples[49].re, 1.0);
        assert_eq!(w.samples[50].re, 0.0);
        let s = signals::spectrum(&w, Window::Rectangular).unwrap();
        for n in [2.0, 4.0, 6.0] {
            assert!(s.bin_at(4e9 + n * 1e6).unwrap().norm() < 1e-12);
        }
        let c1 = s.bin_at(4e9 + 1e6).unwrap().norm();
        let c3 = s.bin_at(4e9 + 3e6).unwrap().norm();
        assert!(c1 > 0.3 && c3 > 0.1);
        assert!(am_wavepacket(&stim, 1e-6, 10e6).is_err());
    }

    #[test]
    fn combining() {
        let a = SampledWaveform::from_fn(1000, 1e9, 6e9, |t| {
            Complex64::from_polar(1.0, 2.0 * PI * 50e6 * t)
        })
        .unwrap();
        let b = SampledWaveform::from_fn(1000, 1e9, 6e9, |t| {
            Complex64::from_polar(0.5, -2.0 * PI * 120e6 * t)
        })
        .unwrap();
        assert_eq!(fdm_combine(std::slice::from_ref(&a)).unwrap(), a);
        let s = fdm_combine(&[a.clone(), b.clone()]).unwrap();
        assert!((s.mean_power() - a.mean_power() - b.mean_power()).abs() < 1e-9);
        let c = SampledWaveform::from_fn(999, 1e9, 6e9, |_| Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(
            fdm_combine(&[a, c]),
            Err(ReadoutError::Alignment(_))
        ));
    }

    #[test]
    fn retune_and_downconvert_are_inverse() {
        let a = SampledWaveform::from_fn(64, 1e9, 6e9, |t| {
            Complex64::from_polar(1.0, 2.0 * PI * 30e6 * t)
        })
        .unwrap();
        let r = retune(&a, 5.9e9);
        let back = downconvert(&r, 0.1e9);
        assert_eq!(back.carrier_hz, 6e9);
        for (x, y) in back.samples.iter().zip(&a.samples) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn correlation_finds_the_lag() {
        let x: Vec<f64> = (0..200).map(|k| ((k / 20) % 2) as f64).collect();
        let y: Vec<f64> = (0..200).map(|k| x[(k + 200 - 7) % 200]).collect();
        assert!((envelope_correlation(&x, &y, 10) - 1.0).abs() < 1e-12);
        assert!(envelope_correlation(&x, &y, 3) < 0.9);
    }

    #[test]
    fn bypass_is_identity() {
        let a = SampledWaveform::from_fn(256, 1e9, 6e9, |t| Complex64::new((t * 1e7).cos(), 0.0))
            .unwrap();
        assert_eq!(Conversion::bypass().apply(&a).unwrap().samples, a.samples);
    }

    proptest! {
        #[test]
        fn lorentzian_never_exceeds_unity(df in -40e6f64..40e6, chi in 0.1e6f64..10e6) {
            let ch = channel(chi, Trajectory::constant(QubitState::Ground));
            for s in [QubitState::Ground, QubitState::Excited] {
                let t = ch.transmission(s, 6e9 + df).norm_sqr();
                prop_assert!(t <= 1.0 + 1e-15);
                if (6e9 + df - ch.resonance(s)).abs() > 1.0 {
                    prop_assert!(t < 1.0);
                }
            }
        }
    }
}
