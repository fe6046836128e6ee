//! Hartley single-sideband modulator assembled from two bridges.
//!
//! The input is split by the sum port of a 180° hybrid, each half is
//! modulated by one bridge whose IF port carries `cos(Ωt)` (I arm) or
//! `cos(Ωt + θ)` (Q arm), and a 90° hybrid combines the arms:
//!
//! ```text
//! out   = (s_I − i g e^{iδ} s_Q) / √2
//! image = (−i s_I + g e^{iδ} s_Q) / √2
//! ```
//!
//! With `θ = +π/2` the upper sideband adds in `out` and the lower one in
//! `image`. `g` is the hybrid amplitude imbalance and `δ` collects the
//! hybrid phase error and the carrier phase of the path-length mismatch.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::predistort::{
    self, naive_bias, shape_bias_with, AwgModel, BiasWaveform, ShapeError, ShapeTarget,
};
use crate::signals::{self, db, from_db, Reference, SampledWaveform, SignalError, Window};
use crate::squid::{nonlinear_inductance, route_flux, SquidError};
use crate::tib::{linear_grid, transmission_map, DeviceDescription, TibError, TransmissionMap};

/// Propagation speed used for path-length phase, m/s.
pub const PATH_VELOCITY: f64 = 299_792_458.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SsbmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("quasi-static model invalid: envelope half-width {bw} Hz exceeds {limit} Hz")]
    ModelValidity { bw: f64, limit: f64 },
    #[error("reference waveform missing or carries no power")]
    Normalization,
    #[error(transparent)]
    Tib(#[from] TibError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Squid(#[from] SquidError),
}

/// How an arm turns bias current into transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmModel {
    /// Full circuit map, complex and lossy where the network is.
    Circuit,
    /// Lossless single-quadrature bridge: the projected characteristic of
    /// the circuit map as a real transmission `t`, with reflection
    /// `i·sqrt(1 − t²)`.
    IdealReal,
}

/// Current grid used to calibrate a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl CurrentGrid {
    pub fn values(&self) -> Vec<f64> {
        linear_grid(self.min, self.max, self.points)
    }
}

/// One modulating bridge with its bias point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub device: DeviceDescription,
    pub phi_sigma: f64,
    pub model: ArmModel,
    pub grid: CurrentGrid,
}

impl Arm {
    pub fn circuit_map(&self, probe_freq: f64) -> Result<TransmissionMap, TibError> {
        transmission_map(
            &self.device,
            probe_freq,
            &self.grid.values(),
            self.phi_sigma,
        )
    }

    /// Map used by the modulator at `probe_freq`.
    pub fn map(&self, probe_freq: f64) -> Result<TransmissionMap, TibError> {
        let m = self.circuit_map(probe_freq)?;
        match self.model {
            ArmModel::Circuit => Ok(m),
            ArmModel::IdealReal => {
                let r = m
                    .projected_grid()
                    .iter()
                    .map(|v| v.clamp(-1.0, 1.0))
                    .collect();
                TransmissionMap::from_real(probe_freq, m.current_grid.clone(), r)
            }
        }
    }

    /// Raw `s21` at `current` with each array carrying its own RMS signal
    /// current, solved self-consistently for an available source power.
    pub fn nonlinear_s21(
        &self,
        current: f64,
        freq: f64,
        available_power_w: f64,
    ) -> Result<Complex64, SsbmError> {
        let dev = &self.device;
        let fl = route_flux(dev.flux(current, self.phi_sigma));
        let (l1, l2) = dev.inductances(current, self.phi_sigma)?;
        let emf = (4.0 * dev.network.z0 * available_power_w).sqrt();
        let mut arms = [l1, l1, l2, l2];
        let mut sol = dev.network.solve_arms(freq, arms)?;
        for _ in 0..100 {
            let mut next = [0.0; 4];
            for (k, slot) in next.iter_mut().enumerate() {
                let i_rms = sol.arm_currents[k].norm() * emf;
                *slot = if k < 2 {
                    nonlinear_inductance(&dev.array_1, fl.phi_1, i_rms)?
                } else {
                    nonlinear_inductance(&dev.array_2, fl.phi_2, i_rms)?
                };
            }
            let change = (0..4)
                .map(|k| (next[k] / arms[k] - 1.0).abs())
                .fold(0.0, f64::max);
            arms = next;
            sol = dev.network.solve_arms(freq, arms)?;
            if change < 1e-13 {
                break;
            }
        }
        Ok(sol.s21)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Splitter {
    pub loss_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hybrid {
    pub phase_deg: f64,
    pub amplitude_imbalance_db: f64,
    pub loss_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsbmAssembly {
    pub tib_i: Arm,
    pub tib_q: Arm,
    pub splitter: Splitter,
    pub hybrid: Hybrid,
    /// Extra length of the Q path, m.
    pub path_mismatch: f64,
    /// Static phase correction applied to the Q path, rad.
    pub phase_trim: f64,
    /// Time constant of the first-order input-envelope low-pass, s. Zero disables it.
    pub eddy_tau: f64,
}

impl SsbmAssembly {
    pub fn validate(&self) -> Result<(), SsbmError> {
        if self.splitter.loss_db > 0.0 || self.hybrid.loss_db > 0.0 {
            return Err(SsbmError::InvalidInput("losses must be <= 0 dB".into()));
        }
        if !(self.path_mismatch >= 0.0) || !(self.eddy_tau >= 0.0) {
            return Err(SsbmError::InvalidInput(
                "path mismatch and eddy time constant must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Q-path phase `δ` at `carrier_hz`.
    pub fn q_phase(&self, carrier_hz: f64) -> f64 {
        (self.hybrid.phase_deg - 90.0).to_radians()
            - (2.0 * PI * carrier_hz * self.path_mismatch / PATH_VELOCITY - self.phase_trim)
    }

    fn q_gain(&self) -> f64 {
        10f64.powf(-self.hybrid.amplitude_imbalance_db / 20.0)
    }
}

/// Drive conditions. Frequencies in Hz, phases in rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub carrier_hz: f64,
    /// Modulation frequency Ω/2π, positive.
    pub if_hz: f64,
    pub theta: f64,
    pub shaping: bool,
    pub awg: AwgModel,
    /// Input power for the signal-current nonlinearity. `None` runs the
    /// linear model.
    pub input_power_dbm: Option<f64>,
    /// Target modulation depth of the projected transmission.
    pub depth: f64,
    /// Reconstruction oversampling of the bias waveform when the generator
    /// is band-limited.
    pub oversample: usize,
    /// Peak current of unshaped drive. `None` uses the map's peak point.
    pub naive_peak: Option<f64>,
}

impl DriveConfig {
    pub fn validate(&self) -> Result<(), SsbmError> {
        if !(4e9..=8e9).contains(&self.carrier_hz) {
            return Err(SsbmError::InvalidInput(format!(
                "carrier {} Hz outside 4-8 GHz",
                self.carrier_hz
            )));
        }
        if !(self.if_hz > 0.0 && self.if_hz <= predistort::MAX_IF_HZ) {
            return Err(SsbmError::InvalidInput(format!("IF {} Hz", self.if_hz)));
        }
        if !(-PI..=PI).contains(&self.theta) {
            return Err(SsbmError::InvalidInput(format!("theta {}", self.theta)));
        }
        if self.oversample < 1 || !(self.depth > 0.0) {
            return Err(SsbmError::InvalidInput(
                "oversample >= 1 and depth > 0".into(),
            ));
        }
        Ok(())
    }

    /// Sideband selected by θ: +1 for θ ≥ 0.
    pub fn desired_sideband(&self) -> i32 {
        if self.theta >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Figures of merit for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsbmMetrics {
    pub modulation_gain_db: f64,
    pub image_rejection_db: f64,
    pub sideband_contrast_db: f64,
    pub residual_carrier_db: f64,
    /// Power at `carrier + n·Ω`, dB relative to the static reference.
    pub harmonic_table: BTreeMap<i32, f64>,
    pub desired_sideband: i32,
    /// θ = 0: both first sidebands are equal and the upper one is reported.
    pub theta_tie: bool,
    /// Contrast compares against every other harmonic including n = 0.
    pub contrast_includes_carrier: bool,
    /// Harmonic that sets the contrast.
    pub worst_spur: i32,
}

/// Arm waveforms over one IF period.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmWaveforms {
    pub bias_i: BiasWaveform,
    pub bias_q: BiasWaveform,
    /// Raw transmission of each arm on the fine grid.
    pub t_i: Vec<Complex64>,
    pub t_q: Vec<Complex64>,
    /// Raw reflection of each arm, available for ideal arms.
    pub r_i: Option<Vec<Complex64>>,
    pub r_q: Option<Vec<Complex64>>,
    pub sample_rate: f64,
}

/// Port waves for a given input.
#[derive(Debug, Clone, PartialEq)]
pub struct PortWaves {
    pub output: SampledWaveform,
    pub image: SampledWaveform,
    /// Reflections returned through the splitter sum and difference ports.
    pub splitter_sum: Option<SampledWaveform>,
    pub splitter_diff: Option<SampledWaveform>,
}

/// An assembly with maps calibrated at one carrier.
#[derive(Debug, Clone)]
pub struct Modulator {
    pub assembly: SsbmAssembly,
    pub carrier_hz: f64,
    pub map_i: TransmissionMap,
    pub map_q: TransmissionMap,
}

fn ideal_reflection(t: Complex64) -> Complex64 {
    Complex64::new(0.0, (1.0 - t.re * t.re).max(0.0).sqrt())
}

impl Modulator {
    pub fn new(assembly: &SsbmAssembly, carrier_hz: f64) -> Result<Self, SsbmError> {
        assembly.validate()?;
        let map_i = assembly.tib_i.map(carrier_hz)?;
        let map_q = if assembly.tib_q == assembly.tib_i {
            map_i.clone()
        } else {
            assembly.tib_q.map(carrier_hz)?
        };
        Ok(Self {
            assembly: *assembly,
            carrier_hz,
            map_i,
            map_q,
        })
    }

    fn bias(
        &self,
        map: &TransmissionMap,
        drive: &DriveConfig,
        phase: f64,
    ) -> Result<BiasWaveform, SsbmError> {
        let target = ShapeTarget {
            omega_if: 2.0 * PI * drive.if_hz,
            phase,
            depth: drive.depth,
        };
        let b = if drive.shaping {
            shape_bias_with(map, &target, &drive.awg)?
        } else {
            let peak = drive.naive_peak.unwrap_or(map.current_grid[map.peak_index]);
            naive_bias(map, &target, &drive.awg, peak)?
        };
        Ok(
            if drive.awg.analog_bandwidth.is_some() && drive.oversample > 1 {
                b.upsampled(drive.oversample, map.span())
            } else {
                b
            },
        )
    }

    /// Bias and transmission of both arms over one IF period.
    pub fn arm_waveforms(&self, drive: &DriveConfig) -> Result<ArmWaveforms, SsbmError> {
        drive.validate()?;
        let skew_phase = -2.0 * PI * drive.if_hz * drive.awg.channel_skew;
        let bias_i = self.bias(&self.map_i, drive, 0.0)?;
        let bias_q = self.bias(&self.map_q, drive, drive.theta + skew_phase)?;
        let render =
            |arm: &Arm, map: &TransmissionMap, b: &BiasWaveform| match drive.input_power_dbm {
                Some(p) if arm.model == ArmModel::Circuit => {
                    let split = from_db(self.assembly.splitter.loss_db) / 2.0;
                    let pw = signals::dbm_to_watts(p) * split;
                    b.currents
                        .par_iter()
                        .map(|&i| arm.nonlinear_s21(i, self.carrier_hz, pw))
                        .collect::<Result<Vec<_>, _>>()
                }
                _ => b
                    .currents
                    .iter()
                    .map(|&i| map.eval_raw(i).map_err(SsbmError::from))
                    .collect(),
            };
        let t_i = render(&self.assembly.tib_i, &self.map_i, &bias_i)?;
        let t_q = render(&self.assembly.tib_q, &self.map_q, &bias_q)?;
        let refl = |arm: &Arm, t: &[Complex64]| {
            (arm.model == ArmModel::IdealReal)
                .then(|| t.iter().map(|&z| ideal_reflection(z)).collect())
        };
        Ok(ArmWaveforms {
            r_i: refl(&self.assembly.tib_i, &t_i),
            r_q: refl(&self.assembly.tib_q, &t_q),
            sample_rate: bias_i.sample_rate,
            bias_i,
            bias_q,
            t_i,
            t_q,
        })
    }

    /// Combines arm waveforms for a unit continuous-wave input over one period.
    pub fn period_ports(&self, drive: &DriveConfig) -> Result<PortWaves, SsbmError> {
        let arms = self.arm_waveforms(drive)?;
        let n = arms.t_i.len();
        let input = vec![Complex64::new(1.0, 0.0); n];
        self.combine(&arms, &input, |k| k, arms.sample_rate, 0.0)
    }

    fn combine(
        &self,
        arms: &ArmWaveforms,
        input: &[Complex64],
        index: impl Fn(usize) -> usize,
        rate: f64,
        t0: f64,
    ) -> Result<PortWaves, SsbmError> {
        let a = self.assembly;
        let split = (from_db(a.splitter.loss_db) / 2.0).sqrt();
        let hyb = (from_db(a.hybrid.loss_db) / 2.0).sqrt();
        let gq = a.q_gain() * Complex64::from_polar(1.0, a.q_phase(self.carrier_hz));
        let i = Complex64::new(0.0, 1.0);
        let mut out = Vec::with_capacity(input.len());
        let mut img = Vec::with_capacity(input.len());
        let refl = arms.r_i.as_ref().zip(arms.r_q.as_ref());
        let (mut sum, mut diff) = (Vec::new(), Vec::new());
        for (k, x) in input.iter().enumerate() {
            let j = index(k);
            let ax = x * split;
            let si = arms.t_i[j] * ax;
            let sq = arms.t_q[j] * ax * gq;
            out.push(hyb * (si - i * sq));
            img.push(hyb * (-i * si + sq));
            if let Some((ri, rq)) = refl {
                let (ui, uq) = (ri[j] * ax, rq[j] * ax);
                sum.push(split * (ui + uq));
                diff.push(split * (ui - uq));
            }
        }
        let wave = |s: Vec<Complex64>| SampledWaveform::new(s, rate, t0, self.carrier_hz);
        Ok(PortWaves {
            output: wave(out)?,
            image: wave(img)?,
            splitter_sum: refl.map(|_| wave(sum)).transpose()?,
            splitter_diff: refl.map(|_| wave(diff)).transpose()?,
        })
    }

    /// Static reference power for a unit input: both arms at the peak of
    /// their maps, summed incoherently at the output port.
    pub fn reference_power(&self) -> f64 {
        let a = self.assembly;
        let ti = self.map_i.t_values[self.map_i.peak_index] * self.map_i.s21_scale;
        let tq = self.map_q.t_values[self.map_q.peak_index] * self.map_q.s21_scale;
        let g = a.q_gain();
        from_db(a.splitter.loss_db)
            * from_db(a.hybrid.loss_db)
            * (ti.norm_sqr() + g * g * tq.norm_sqr())
            / 4.0
    }

    /// Reference waveform matching `input`.
    pub fn reference(&self, input: &SampledWaveform) -> SampledWaveform {
        let s = self.reference_power().sqrt();
        SampledWaveform {
            samples: input.samples.iter().map(|x| x * s).collect(),
            ..input.clone()
        }
    }

    /// Metrics for continuous-wave input over one exact IF period.
    pub fn period_metrics(
        &self,
        drive: &DriveConfig,
        n_max: u32,
    ) -> Result<SsbmMetrics, SsbmError> {
        let ports = self.period_ports(drive)?;
        let reference = self.reference(&SampledWaveform {
            samples: vec![Complex64::new(1.0, 0.0); ports.output.len()],
            ..ports.output.clone()
        });
        metrics(&ports.output, &reference, drive, n_max)
    }

    /// Complex amplitude of `carrier + n·Ω` in the output for a unit input,
    /// `n` in `[-n_max, n_max]`.
    pub fn output_coefficients(
        &self,
        drive: &DriveConfig,
        n_max: u32,
    ) -> Result<Vec<Complex64>, SsbmError> {
        let ports = self.period_ports(drive)?;
        let s = signals::spectrum(&ports.output, Window::Rectangular)?;
        let n_max = n_max as i32;
        (-n_max..=n_max)
            .map(|n| {
                s.bin_at(self.carrier_hz + n as f64 * drive.if_hz)
                    .ok_or(SsbmError::InvalidInput("harmonic outside spectrum".into()))
            })
            .collect()
    }
}

/// First-order low-pass of the input envelope with time constant `tau`.
pub fn eddy_filter(input: &SampledWaveform, tau: f64) -> SampledWaveform {
    if tau <= 0.0 {
        return input.clone();
    }
    let alpha = 1.0 - (-1.0 / (input.sample_rate * tau)).exp();
    let mut acc = input.samples[0];
    let samples = input
        .samples
        .iter()
        .map(|x| {
            acc += alpha * (x - acc);
            acc
        })
        .collect();
    SampledWaveform {
        samples,
        ..input.clone()
    }
}

pub(crate) fn check_quasi_static(
    input: &SampledWaveform,
    carrier_hz: f64,
) -> Result<(), SsbmError> {
    let bw = signals::occupied_half_width(input, 0.99)?;
    let limit = carrier_hz / 20.0;
    if bw > limit {
        return Err(SsbmError::ModelValidity { bw, limit });
    }
    Ok(())
}

/// All output ports for an arbitrary input envelope.
///
/// The modulation is periodic in Ω; input samples are mapped onto the
/// arms' fine period grid by linear interpolation, which is exact when the
/// input rate is a multiple of Ω.
pub fn simulate_ports(
    modulator: &Modulator,
    drive: &DriveConfig,
    input: &SampledWaveform,
) -> Result<PortWaves, SsbmError> {
    if (input.carrier_hz - drive.carrier_hz).abs() > 1e-3 {
        return Err(SsbmError::InvalidInput(format!(
            "input carrier {} Hz does not match drive carrier {} Hz",
            input.carrier_hz, drive.carrier_hz
        )));
    }
    check_quasi_static(input, drive.carrier_hz)?;
    let filtered = eddy_filter(input, modulator.assembly.eddy_tau);
    let arms = modulator.arm_waveforms(drive)?;
    let n = arms.t_i.len();
    let per = n as f64 * input.sample_rate / arms.sample_rate;
    let exact = (per - per.round()).abs() < 1e-9;
    if exact {
        let step = n as f64 / per.round();
        let idx = |k: usize| {
            let pos = (input.t0 * arms.sample_rate + k as f64 * step).round() as i64;
            pos.rem_euclid(n as i64) as usize
        };
        let stepped = (step - step.round()).abs() < 1e-9;
        if stepped {
            return modulator.combine(&arms, &filtered.samples, idx, input.sample_rate, input.t0);
        }
    }
    // general case: interpolate the arms onto the input time grid
    let lerp = |v: &[Complex64], t: f64| {
        let pos = (t * arms.sample_rate).rem_euclid(n as f64);
        let k = pos.floor() as usize % n;
        let f = pos - pos.floor();
        v[k] * (1.0 - f) + v[(k + 1) % n] * f
    };
    let times: Vec<f64> = (0..input.len()).map(|k| input.time(k)).collect();
    let resample = |v: &Option<Vec<Complex64>>| {
        v.as_ref()
            .map(|w| times.iter().map(|&t| lerp(w, t)).collect())
    };
    let local = ArmWaveforms {
        t_i: times.iter().map(|&t| lerp(&arms.t_i, t)).collect(),
        t_q: times.iter().map(|&t| lerp(&arms.t_q, t)).collect(),
        r_i: resample(&arms.r_i),
        r_q: resample(&arms.r_q),
        sample_rate: input.sample_rate,
        bias_i: arms.bias_i,
        bias_q: arms.bias_q,
    };
    modulator.combine(
        &local,
        &filtered.samples,
        |k| k,
        input.sample_rate,
        input.t0,
    )
}

/// Output-port waveform for `input`.
pub fn simulate(
    assembly: &SsbmAssembly,
    drive: &DriveConfig,
    input: &SampledWaveform,
) -> Result<SampledWaveform, SsbmError> {
    let m = Modulator::new(assembly, drive.carrier_hz)?;
    Ok(simulate_ports(&m, drive, input)?.output)
}

/// Figures of merit of `output` against the static `reference`.
pub fn metrics(
    output: &SampledWaveform,
    reference: &SampledWaveform,
    drive: &DriveConfig,
    n_max: u32,
) -> Result<SsbmMetrics, SsbmError> {
    let p_ref = reference.mean_power();
    if !(p_ref > 0.0) {
        return Err(SsbmError::Normalization);
    }
    let s = signals::spectrum(output, Window::Rectangular)?;
    let powers = signals::harmonic_powers(&s, output.carrier_hz, drive.if_hz, n_max)?;
    let r = Reference::Power(p_ref);
    let table: BTreeMap<i32, f64> = powers.iter().map(|(n, p)| (*n, r.level(*p).0)).collect();
    let d = drive.desired_sideband();
    let (worst_spur, worst) =
        table
            .iter()
            .filter(|(n, _)| **n != d)
            .fold((0, f64::NEG_INFINITY), |acc, (n, v)| {
                if *v > acc.1 {
                    (*n, *v)
                } else {
                    acc
                }
            });
    Ok(SsbmMetrics {
        modulation_gain_db: table[&d],
        image_rejection_db: table[&d] - table[&-d],
        sideband_contrast_db: table[&d] - worst,
        residual_carrier_db: table[&0],
        harmonic_table: table,
        desired_sideband: d,
        theta_tie: drive.theta == 0.0,
        contrast_includes_carrier: true,
        worst_spur,
    })
}

/// One θ point of a sweep: harmonic powers in dB relative to the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub theta: f64,
    pub table: BTreeMap<i32, f64>,
}

pub fn theta_sweep(
    assembly: &SsbmAssembly,
    drive: &DriveConfig,
    theta_grid: &[f64],
) -> Result<Vec<ThetaRow>, SsbmError> {
    let m = Modulator::new(assembly, drive.carrier_hz)?;
    theta_sweep_with(&m, drive, theta_grid)
}

pub fn theta_sweep_with(
    m: &Modulator,
    drive: &DriveConfig,
    theta_grid: &[f64],
) -> Result<Vec<ThetaRow>, SsbmError> {
    theta_grid
        .par_iter()
        .map(|&theta| {
            let d = DriveConfig { theta, ..*drive };
            Ok(ThetaRow {
                theta,
                table: m.period_metrics(&d, 9)?.harmonic_table,
            })
        })
        .collect()
}

/// CSV `theta_rad,n,power_db`.
pub fn theta_csv(rows: &[ThetaRow]) -> String {
    let mut out = String::from("theta_rad,n,power_db\n");
    for r in rows {
        for (n, p) in &r.table {
            let _ = writeln!(out, "{},{},{:.3}", r.theta, n, p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaRow {
    pub omega_if_hz: f64,
    pub carrier_hz: f64,
    pub sideband: i32,
    pub metrics: SsbmMetrics,
}

pub fn omega_sweep(
    assembly: &SsbmAssembly,
    drive: &DriveConfig,
    omega_if_grid: &[f64],
    carrier_grid: &[f64],
) -> Result<Vec<OmegaRow>, SsbmError> {
    let mut rows = Vec::new();
    for &c in carrier_grid {
        let m = Modulator::new(assembly, c)?;
        let part: Result<Vec<OmegaRow>, SsbmError> = omega_if_grid
            .par_iter()
            .map(|&f| {
                let d = DriveConfig {
                    carrier_hz: c,
                    if_hz: f,
                    ..*drive
                };
                let metrics = m.period_metrics(&d, 9)?;
                Ok(OmegaRow {
                    omega_if_hz: f,
                    carrier_hz: c,
                    sideband: metrics.desired_sideband,
                    metrics,
                })
            })
            .collect();
        rows.extend(part?);
    }
    Ok(rows)
}

/// CSV `omega_if_hz,carrier_hz,sideband,modulation_gain_db,image_rejection_db,sideband_contrast_db`.
pub fn omega_csv(rows: &[OmegaRow]) -> String {
    let mut out = String::from(
        "omega_if_hz,carrier_hz,sideband,modulation_gain_db,image_rejection_db,sideband_contrast_db\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{:.3}",
            r.omega_if_hz,
            r.carrier_hz,
            r.sideband,
            r.metrics.modulation_gain_db,
            r.metrics.image_rejection_db,
            r.metrics.sideband_contrast_db
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub input_dbm: f64,
    /// Output power at `carrier + n·Ω`, dBm.
    pub table_dbm: BTreeMap<i32, f64>,
    /// Desired-sideband gain, dB.
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionSweep {
    pub rows: Vec<CompressionRow>,
    pub small_signal_gain_db: f64,
    /// Input power where the gain has dropped by 1 dB; `None` when the
    /// grid never compresses.
    pub p1db_dbm: Option<f64>,
    /// Input power where the gain first deviates by 1 dB in either direction.
    pub p1db_deviation_dbm: Option<f64>,
    /// Sign of the gain change at the deviation point.
    pub deviation_sign: i32,
    /// Output-vs-input slope of the desired sideband over rows at least
    /// 10 dB below the 1 dB point (or the deviation point when the gain
    /// never compresses), dB/dB.
    pub small_signal_slope: Option<f64>,
    /// First grid power where the signal current left the weak-nonlinearity
    /// range; the sweep stops there.
    pub range_limit_dbm: Option<f64>,
}

fn crossing(
    rows: &[CompressionRow],
    g0: f64,
    pred: impl Fn(f64) -> bool,
    level: impl Fn(f64) -> f64,
) -> Option<f64> {
    let k = rows.iter().position(|r| pred(r.gain_db - g0))?;
    if k == 0 {
        return Some(rows[0].input_dbm);
    }
    let (a, b) = (&rows[k - 1], &rows[k]);
    let (ya, yb) = (level(a.gain_db - g0), level(b.gain_db - g0));
    let f = if yb != ya { ya / (ya - yb) } else { 0.0 };
    Some(a.input_dbm + f * (b.input_dbm - a.input_dbm))
}

fn summarize(rows: Vec<CompressionRow>, range_limit_dbm: Option<f64>) -> CompressionSweep {
    let g0 = rows[0].gain_db;
    let p1db = crossing(&rows, g0, |d| d <= -1.0, |d| d + 1.0);
    let p1dev = crossing(&rows, g0, |d| d.abs() >= 1.0, |d| d.abs() - 1.0);
    let deviation_sign = p1dev
        .and_then(|_| rows.iter().find(|r| (r.gain_db - g0).abs() >= 1.0))
        .map_or(0, |r| (r.gain_db - g0).signum() as i32);
    let small_signal_slope = p1db.or(p1dev).and_then(|p| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.input_dbm <= p - 10.0)
            .map(|r| (r.input_dbm, r.input_dbm + r.gain_db))
            .collect();
        least_squares_slope(&pts)
    });
    CompressionSweep {
        small_signal_gain_db: g0,
        p1db_dbm: p1db,
        p1db_deviation_dbm: p1dev,
        deviation_sign,
        small_signal_slope,
        range_limit_dbm,
        rows,
    }
}

fn collect_rows(
    grid: &[f64],
    mut row: impl FnMut(f64) -> Result<CompressionRow, SsbmError>,
) -> Result<CompressionSweep, SsbmError> {
    let mut rows = Vec::with_capacity(grid.len());
    let mut limit = None;
    for &p in grid {
        match row(p) {
            Ok(r) => rows.push(r),
            Err(SsbmError::Squid(SquidError::OutOfRange { .. })) => {
                limit = Some(p);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if rows.len() < 2 {
        return Err(SsbmError::InvalidInput(
            "fewer than two powers inside the weak-nonlinearity range".into(),
        ));
    }
    Ok(summarize(rows, limit))
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Sideband powers of the assembly versus input power.
pub fn compression_sweep(
    assembly: &SsbmAssembly,
    drive: &DriveConfig,
    power_grid_dbm: &[f64],
) -> Result<CompressionSweep, SsbmError> {
    if power_grid_dbm.len() < 2 {
        return Err(SsbmError::InvalidInput(
            "power grid needs two points".into(),
        ));
    }
    let m = Modulator::new(assembly, drive.carrier_hz)?;
    let d = drive.desired_sideband();
    collect_rows(power_grid_dbm, |p| {
        let dr = DriveConfig {
            input_power_dbm: Some(p),
            ..*drive
        };
        let ports = m.period_ports(&dr)?;
        let s = signals::spectrum(&ports.output, Window::Rectangular)?;
        let pw = signals::harmonic_powers(&s, m.carrier_hz, drive.if_hz, 9)?;
        let table_dbm: BTreeMap<i32, f64> = pw.iter().map(|(n, v)| (*n, p + db(*v))).collect();
        Ok(CompressionRow {
            input_dbm: p,
            gain_db: table_dbm[&d] - p,
            table_dbm,
        })
    })
}

/// Single bridge driven alone with the full input power: first-sideband
/// power (both sidebands) versus input power.
pub fn tib_compression_sweep(
    arm: &Arm,
    drive: &DriveConfig,
    power_grid_dbm: &[f64],
) -> Result<CompressionSweep, SsbmError> {
    drive.validate()?;
    if power_grid_dbm.len() < 2 {
        return Err(SsbmError::InvalidInput(
            "power grid needs two points".into(),
        ));
    }
    let map = arm.map(drive.carrier_hz)?;
    let target = ShapeTarget {
        omega_if: 2.0 * PI * drive.if_hz,
        phase: 0.0,
        depth: drive.depth,
    };
    let b = if drive.shaping {
        shape_bias_with(&map, &target, &drive.awg)?
    } else {
        naive_bias(
            &map,
            &target,
            &drive.awg,
            drive.naive_peak.unwrap_or(map.current_grid[map.peak_index]),
        )?
    };
    collect_rows(power_grid_dbm, |p| {
        let pw = signals::dbm_to_watts(p);
        let t = b
            .currents
            .par_iter()
            .map(|&i| arm.nonlinear_s21(i, drive.carrier_hz, pw))
            .collect::<Result<Vec<_>, _>>()?;
        let w = SampledWaveform::new(t, b.sample_rate, 0.0, drive.carrier_hz)?;
        let s = signals::spectrum(&w, Window::Rectangular)?;
        let pw = signals::harmonic_powers(&s, drive.carrier_hz, drive.if_hz, 9)?;
        let table_dbm: BTreeMap<i32, f64> = pw.iter().map(|(n, v)| (*n, p + db(*v))).collect();
        let first = db(pw[&1] + pw[&-1]);
        Ok(CompressionRow {
            input_dbm: p,
            gain_db: first,
            table_dbm,
        })
    })
}

/// CSV `input_dbm,n,power_dbm`.
pub fn compression_csv(sweep: &CompressionSweep) -> String {
    let mut out = String::from("input_dbm,n,power_dbm\n");
    for r in &sweep.rows {
        for (n, p) in &r.table_dbm {
            let _ = writeln!(out, "{:.3},{},{:.3}", r.input_dbm, n, p);
        }
    }
    out
}
