//! Named parameter sets and the builders that turn them into models.
//!
//! Profiles serialize to TOML with one table per section. Every field uses
//! SI units with the unit in the name. A value of zero
//! switches an optional element off (`match_freq_hz`, `bandwidth_hz`,
//! `eddy_corner_hz`, `trim_freq_hz`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::planner::ChannelSpec;
use crate::predistort::AwgModel;
use crate::readout::{AmConfig, ReadoutConfig};
use crate::squid::SquidArray;
use crate::ssbm::{
    Arm, ArmModel, CurrentGrid, DriveConfig, Hybrid, Splitter, SsbmAssembly, SsbmError,
    PATH_VELOCITY,
};
use crate::tib::{BridgeNetwork, ChipMode, DeviceDescription};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    pub n_squids: u32,
    pub l_geo_h: f64,
    /// Array inductance `target_inductance_h` is reached at loop phase
    /// `calibration_phase_rad`; this fixes the junction critical current.
    pub target_inductance_h: f64,
    pub calibration_phase_rad: f64,
    pub i_star_a: f64,
    pub coupling_rad_per_a: f64,
    pub phi_sigma_rad: f64,
    /// Static gradiometric offset of the I bridge.
    pub phi_delta_offset_i_rad: f64,
    pub phi_delta_offset_q_rad: f64,
    pub grid_min_a: f64,
    pub grid_max_a: f64,
    pub grid_points: usize,
    pub arm_model: ArmModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeParams {
    pub z0_ohm: f64,
    /// Frequency where the port capacitors cancel the bridge inductance.
    pub match_freq_hz: f64,
    pub chip_enabled: bool,
    pub chip_freq_hz: f64,
    pub chip_q: f64,
    pub chip_impedance_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwgParams {
    pub sample_rate_hz: f64,
    pub bandwidth_hz: f64,
    pub filter_order: u32,
    pub skew_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyParams {
    pub splitter_loss_db: f64,
    pub hybrid_phase_deg: f64,
    pub hybrid_imbalance_db: f64,
    pub hybrid_loss_db: f64,
    pub path_mismatch_m: f64,
    /// Carrier at which the static phase trim cancels the path mismatch.
    pub trim_freq_hz: f64,
    pub eddy_corner_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveParams {
    pub carrier_hz: f64,
    pub if_hz: f64,
    pub theta_rad: f64,
    pub shaping: bool,
    pub depth: f64,
    pub oversample: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive_peak_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionParams {
    pub start_dbm: f64,
    pub stop_dbm: f64,
    pub step_db: f64,
}

impl CompressionParams {
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.stop_dbm - self.start_dbm) / self.step_db).round() as usize;
        (0..=n)
            .map(|k| self.start_dbm + k as f64 * self.step_db)
            .collect()
    }
}

/// Channel set and band for multiplexed readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerParams {
    pub channels: usize,
    pub kappa_hz: f64,
    /// Dressed tones are `centre_hz + (i − (channels − 1)/2)·spacing_hz`.
    pub centre_hz: f64,
    pub spacing_hz: f64,
    pub band_width_hz: f64,
    /// IF grid of the spur table, Hz.
    pub spur_if_grid_hz: Vec<f64>,
}

impl PlannerParams {
    pub fn channel_specs(&self) -> Vec<ChannelSpec> {
        let mid = (self.channels as f64 - 1.0) / 2.0;
        (0..self.channels)
            .map(|i| ChannelSpec {
                omega_hz: self.centre_hz + (i as f64 - mid) * self.spacing_hz,
                kappa_hz: self.kappa_hz,
                priority: 0,
            })
            .collect()
    }

    pub fn band(&self) -> (f64, f64) {
        (
            self.centre_hz - 0.5 * self.band_width_hz,
            self.centre_hz + 0.5 * self.band_width_hz,
        )
    }
}

/// Every parameter of a run, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub device: DeviceParams,
    pub bridge: BridgeParams,
    pub awg: AwgParams,
    pub assembly: AssemblyParams,
    pub drive: DriveParams,
    pub compression: CompressionParams,
    pub planner: PlannerParams,
    pub readout: ReadoutConfig,
    pub am: AmConfig,
}

fn base() -> Profile {
    Profile {
        device: DeviceParams {
            n_squids: 20,
            l_geo_h: 0.0,
            target_inductance_h: 400e-12,
            calibration_phase_rad: 0.2 * PI,
            i_star_a: 3.488e-8,
            coupling_rad_per_a: 0.6 * PI / 0.4e-3,
            phi_sigma_rad: 0.6 * PI,
            phi_delta_offset_i_rad: 0.0,
            phi_delta_offset_q_rad: 0.0,
            grid_min_a: -0.4e-3,
            grid_max_a: 0.4e-3,
            grid_points: 801,
            arm_model: ArmModel::Circuit,
        },
        bridge: BridgeParams {
            z0_ohm: 50.0,
            match_freq_hz: 6e9,
            chip_enabled: false,
            chip_freq_hz: 5e9,
            chip_q: 20.0,
            chip_impedance_ohm: 50.0,
        },
        awg: AwgParams {
            sample_rate_hz: 1.2e9,
            bandwidth_hz: 180e6,
            filter_order: 4,
            skew_s: 0.0,
        },
        assembly: AssemblyParams {
            splitter_loss_db: 0.0,
            hybrid_phase_deg: 90.0,
            hybrid_imbalance_db: 0.0,
            hybrid_loss_db: 0.0,
            path_mismatch_m: 0.0,
            trim_freq_hz: 0.0,
            eddy_corner_hz: 0.0,
        },
        drive: DriveParams {
            carrier_hz: 4e9,
            if_hz: 3e6,
            theta_rad: PI / 2.0,
            shaping: true,
            depth: 1.0,
            oversample: 16,
            input_power_dbm: None,
            naive_peak_a: None,
        },
        compression: CompressionParams {
            start_dbm: -130.0,
            stop_dbm: -70.0,
            step_db: 0.5,
        },
        planner: PlannerParams {
            channels: 10,
            kappa_hz: 4e6,
            centre_hz: 6e9,
            spacing_hz: 6e6,
            band_width_hz: 240e6,
            spur_if_grid_hz: vec![
                1e6, 3e6, 5e6, 10e6, 20e6, 30e6, 45e6, 60e6, 80e6, 100e6, 120e6,
            ],
        },
        readout: ReadoutConfig::default(),
        am: AmConfig::default(),
    }
}

impl Profile {
    /// Lossless single-quadrature bridges, perfect hybrids and an
    /// unlimited generator.
    pub fn ideal() -> Self {
        let mut p = base();
        p.device.arm_model = ArmModel::IdealReal;
        p.awg = AwgParams {
            sample_rate_hz: 4.8e9,
            bandwidth_hz: 0.0,
            filter_order: 4,
            skew_s: 0.0,
        };
        p
    }

    /// Circuit bridges with a chip mode, a band-limited skewed generator,
    /// hybrid imbalance, a trimmed path mismatch and eddy-current filtering.
    pub fn realistic() -> Self {
        let mut p = base();
        p.device.phi_delta_offset_i_rad = -0.02 * PI;
        p.device.phi_delta_offset_q_rad = -0.02 * PI;
        p.bridge.chip_enabled = true;
        p.awg.skew_s = 0.75e-9;
        p.assembly.hybrid_imbalance_db = 0.5;
        p.assembly.path_mismatch_m = 3e-3;
        p.assembly.trim_freq_hz = 4e9;
        p.assembly.eddy_corner_hz = 8e6;
        p
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "ideal" => Some(Self::ideal()),
            "realistic" => Some(Self::realistic()),
            _ => None,
        }
    }

    pub fn network(&self) -> BridgeNetwork {
        let b = &self.bridge;
        let d = &self.device;
        let c_match = (b.match_freq_hz > 0.0).then(|| {
            let w = 2.0 * PI * b.match_freq_hz;
            4.0 / (w * w * 2.0 * d.target_inductance_h)
        });
        BridgeNetwork {
            l1: d.target_inductance_h,
            l2: d.target_inductance_h,
            c_match,
            z0: b.z0_ohm,
            chip_mode: Some(ChipMode {
                f_res: b.chip_freq_hz,
                q: b.chip_q,
                impedance: b.chip_impedance_ohm,
                enabled: b.chip_enabled,
            }),
        }
    }

    pub fn array(&self) -> Result<SquidArray, SsbmError> {
        let d = &self.device;
        Ok(SquidArray::calibrated(
            d.n_squids,
            d.l_geo_h,
            d.i_star_a,
            d.calibration_phase_rad,
            d.target_inductance_h,
        )?)
    }

    pub fn device_description(
        &self,
        phi_delta_offset: f64,
    ) -> Result<DeviceDescription, SsbmError> {
        let a = self.array()?;
        Ok(DeviceDescription {
            array_1: a,
            array_2: a,
            network: self.network(),
            coupling: self.device.coupling_rad_per_a,
            phi_delta_offset,
        })
    }

    pub fn grid(&self) -> CurrentGrid {
        CurrentGrid {
            min: self.device.grid_min_a,
            max: self.device.grid_max_a,
            points: self.device.grid_points,
        }
    }

    pub fn arm(&self, phi_delta_offset: f64) -> Result<Arm, SsbmError> {
        Ok(Arm {
            device: self.device_description(phi_delta_offset)?,
            phi_sigma: self.device.phi_sigma_rad,
            model: self.device.arm_model,
            grid: self.grid(),
        })
    }

    pub fn assembly(&self) -> Result<SsbmAssembly, SsbmError> {
        let a = &self.assembly;
        Ok(SsbmAssembly {
            tib_i: self.arm(self.device.phi_delta_offset_i_rad)?,
            tib_q: self.arm(self.device.phi_delta_offset_q_rad)?,
            splitter: Splitter {
                loss_db: a.splitter_loss_db,
            },
            hybrid: Hybrid {
                phase_deg: a.hybrid_phase_deg,
                amplitude_imbalance_db: a.hybrid_imbalance_db,
                loss_db: a.hybrid_loss_db,
            },
            path_mismatch: a.path_mismatch_m,
            phase_trim: 2.0 * PI * a.trim_freq_hz * a.path_mismatch_m / PATH_VELOCITY,
            eddy_tau: if a.eddy_corner_hz > 0.0 {
                1.0 / (2.0 * PI * a.eddy_corner_hz)
            } else {
                0.0
            },
        })
    }

    pub fn awg(&self) -> AwgModel {
        let a = &self.awg;
        AwgModel {
            sample_rate: a.sample_rate_hz,
            analog_bandwidth: (a.bandwidth_hz > 0.0).then_some(a.bandwidth_hz),
            filter_order: a.filter_order,
            channel_skew: a.skew_s,
        }
    }

    /// Drive settings with the carrier moved to the planner's band centre.
    pub fn planner_drive(&self) -> DriveConfig {
        DriveConfig {
            carrier_hz: self.planner.centre_hz,
            ..self.drive()
        }
    }

    pub fn drive(&self) -> DriveConfig {
        let d = &self.drive;
        DriveConfig {
            carrier_hz: d.carrier_hz,
            if_hz: d.if_hz,
            theta: d.theta_rad,
            shaping: d.shaping,
            awg: self.awg(),
            input_power_dbm: d.input_power_dbm,
            depth: d.depth,
            oversample: d.oversample,
            naive_peak: d.naive_peak_a,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squid::array_inductance;
    use crate::tib::{thevenin_inductance, TibError};

    #[test]
    fn reference_arrays_hit_their_calibration() {
        let p = Profile::realistic();
        let a = p.array().unwrap();
        let l = array_inductance(&a, 0.2 * PI).unwrap();
        assert!((l - 400e-12).abs() < 1e-18);
        let th = thevenin_inductance(l, l).unwrap();
        assert!((th - 400e-12).abs() < 1e-18);
    }

    #[test]
    fn matching_capacitors_allow_full_transmission_at_match_frequency() {
        let mut p = Profile::realistic();
        p.bridge.chip_enabled = false;
        let arm = p.arm(0.0).unwrap();
        let m = arm.circuit_map(p.bridge.match_freq_hz).unwrap();
        assert!((m.s21_scale - 1.0).abs() < 1e-3, "{}", m.s21_scale);
        assert!(matches!(
            p.network().solve(-1.0),
            Err(TibError::InvalidInput(_))
        ));
    }

    #[test]
    fn profiles_round_trip_and_planner_layout() {
        for p in [Profile::ideal(), Profile::realistic()] {
            let s = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<Profile>(&s).unwrap(), p);
        }
        let p = Profile::realistic();
        let c = p.planner.channel_specs();
        assert_eq!(c.len(), 10);
        assert!((c[0].omega_hz - (6e9 - 27e6)).abs() < 1e-3);
        assert_eq!(p.planner.band(), (5.88e9, 6.12e9));
        assert!(Profile::by_name("nominal").is_none());
    }
}
