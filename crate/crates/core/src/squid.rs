//! Flux-tunable SQUID-array inductors and figure-eight flux routing.
//!
//! Fluxes are stored in units of the reduced flux quantum `φ₀ = ħ/2e`, so the
//! stored value is directly the loop phase in radians. One flux quantum
//! `Φ₀ = 2π φ₀`.

use serde::{Deserialize, Serialize};

/// Reduced flux quantum ħ/2e, Wb.
pub const PHI0_REDUCED: f64 = 1.054_571_817e-34 / (2.0 * 1.602_176_634e-19);

/// Minimum `|cos(φ/2)|` accepted by the inductance law.
pub const DIVERGENCE_GUARD: f64 = 1e-3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SquidError {
    #[error(
        "loop phase {phi} is too close to the inductance divergence (|cos(phi/2)| = {cos_half})"
    )]
    SingularBias { phi: f64, cos_half: f64 },
    #[error("signal current {i_signal} A exceeds the weak-nonlinearity range {limit} A")]
    OutOfRange { i_signal: f64, limit: f64 },
    #[error("invalid array parameter: {0}")]
    InvalidParameter(String),
}

/// Converts a fraction of the flux quantum `Φ₀` to reduced units.
pub fn from_flux_quanta(fraction: f64) -> f64 {
    2.0 * std::f64::consts::PI * fraction
}

/// Converts reduced units back to a fraction of `Φ₀`.
pub fn to_flux_quanta(phi: f64) -> f64 {
    phi / (2.0 * std::f64::consts::PI)
}

/// Uniform and gradiometric flux applied to a bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxBias {
    pub phi_sigma: f64,
    pub phi_delta: f64,
}

impl std::ops::Add for FluxBias {
    type Output = FluxBias;
    fn add(self, o: FluxBias) -> FluxBias {
        FluxBias {
            phi_sigma: self.phi_sigma + o.phi_sigma,
            phi_delta: self.phi_delta + o.phi_delta,
        }
    }
}

/// Loop fluxes seen by the two inductor pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeFluxes {
    pub phi_1: f64,
    pub phi_2: f64,
}

/// Series array of identical DC SQUIDs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquidArray {
    pub n_squids: u32,
    /// Junction critical current, A.
    pub i_c: f64,
    /// Geometric inductance per SQUID, H.
    pub l_geo: f64,
    /// Signal-current scale of the weak nonlinearity, A.
    pub i_star: f64,
}

impl SquidArray {
    pub fn validate(&self) -> Result<(), SquidError> {
        if self.n_squids < 1 {
            return Err(SquidError::InvalidParameter("n_squids must be >= 1".into()));
        }
        if !(self.i_c > 0.0) || !(self.l_geo >= 0.0) || !(self.i_star > 0.0) {
            return Err(SquidError::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }

    /// Array whose inductance at loop phase `phi` equals `target` H.
    pub fn calibrated(
        n_squids: u32,
        l_geo: f64,
        i_star: f64,
        phi: f64,
        target: f64,
    ) -> Result<Self, SquidError> {
        let cos_half = (phi / 2.0).cos().abs();
        let per_squid = target / n_squids as f64 - l_geo;
        if cos_half <= DIVERGENCE_GUARD || per_squid <= 0.0 {
            return Err(SquidError::InvalidParameter(format!(
                "cannot reach {target} H at phase {phi}"
            )));
        }
        let i_c = PHI0_REDUCED / (2.0 * cos_half * per_squid);
        let arr = Self {
            n_squids,
            i_c,
            l_geo,
            i_star,
        };
        arr.validate()?;
        Ok(arr)
    }
}

/// Figure-eight routing: the gradiometric flux adds to one pair and
/// subtracts from the other.
pub fn route_flux(bias: FluxBias) -> BridgeFluxes {
    BridgeFluxes {
        phi_1: bias.phi_sigma + bias.phi_delta,
        phi_2: bias.phi_sigma - bias.phi_delta,
    }
}

/// Linear inductance of the array at loop phase `phi_loop`.
pub fn array_inductance(arr: &SquidArray, phi_loop: f64) -> Result<f64, SquidError> {
    let cos_half = (phi_loop / 2.0).cos().abs();
    if !(cos_half > DIVERGENCE_GUARD) {
        return Err(SquidError::SingularBias {
            phi: phi_loop,
            cos_half,
        });
    }
    let l_j = PHI0_REDUCED / (2.0 * arr.i_c * cos_half);
    Ok(arr.n_squids as f64 * (l_j + arr.l_geo))
}

/// Inductance including the quadratic signal-current correction.
pub fn nonlinear_inductance(
    arr: &SquidArray,
    phi_loop: f64,
    i_signal: f64,
) -> Result<f64, SquidError> {
    let limit = arr.i_star * arr.n_squids as f64;
    if !(i_signal >= 0.0) || i_signal >= limit {
        return Err(SquidError::OutOfRange { i_signal, limit });
    }
    let l = array_inductance(arr, phi_loop)?;
    let x = i_signal / limit;
    Ok(l * (1.0 + 0.5 * x * x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn arr() -> SquidArray {
        SquidArray {
            n_squids: 20,
            i_c: 8e-6,
            l_geo: 1e-12,
            i_star: 2e-6,
        }
    }

    #[test]
    fn routing_examples() {
        let b = route_flux(FluxBias {
            phi_sigma: 0.3,
            phi_delta: 0.0,
        });
        assert_eq!((b.phi_1, b.phi_2), (0.3, 0.3));
        let b = route_flux(FluxBias {
            phi_sigma: 0.3,
            phi_delta: 0.2,
        });
        assert!((b.phi_1 - 0.5).abs() < 1e-15 && (b.phi_2 - 0.1).abs() < 1e-15);
        let f = route_flux(FluxBias {
            phi_sigma: 0.3,
            phi_delta: -0.2,
        });
        assert_eq!((f.phi_1, f.phi_2), (b.phi_2, b.phi_1));
    }

    #[test]
    fn inductance_at_zero_flux() {
        let a = arr();
        let l = array_inductance(&a, 0.0).unwrap();
        let want = 20.0 * (PHI0_REDUCED / (2.0 * a.i_c) + a.l_geo);
        assert!((l - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn divergence_is_an_error() {
        assert!(matches!(
            array_inductance(&arr(), PI),
            Err(SquidError::SingularBias { .. })
        ));
    }

    #[test]
    fn nonlinear_reduces_to_linear_and_dilutes() {
        let a = arr();
        let l = array_inductance(&a, 0.4).unwrap();
        assert_eq!(nonlinear_inductance(&a, 0.4, 0.0).unwrap(), l);
        let i = 5e-6;
        let shift = |n: u32| {
            let b = SquidArray { n_squids: n, ..a };
            nonlinear_inductance(&b, 0.4, i).unwrap() / array_inductance(&b, 0.4).unwrap() - 1.0
        };
        assert!((shift(20) / shift(40) - 4.0).abs() < 1e-9);
        assert!(nonlinear_inductance(&a, 0.4, 1.0).is_err());
        assert!(nonlinear_inductance(&a, 0.4, -1e-9).is_err());
    }

    #[test]
    fn calibration_hits_target() {
        let a = SquidArray::calibrated(20, 0.0, 1e-6, from_flux_quanta(0.1), 400e-12).unwrap();
        let l = array_inductance(&a, from_flux_quanta(0.1)).unwrap();
        assert!((l - 400e-12).abs() < 1e-21);
        assert!(SquidArray::calibrated(20, 30e-12, 1e-6, 0.0, 400e-12).is_err());
    }

    proptest! {
        #[test]
        fn even_and_periodic(phi in -3.0f64..3.0) {
            let a = arr();
            let l = array_inductance(&a, phi).unwrap();
            let m = array_inductance(&a, -phi).unwrap();
            let p = array_inductance(&a, phi + 2.0 * PI).unwrap();
            prop_assert!((l - m).abs() <= 1e-12 * l);
            prop_assert!((l - p).abs() <= 1e-12 * l);
        }

        #[test]
        fn increases_towards_frustration(a in 0.0f64..3.1, b in 0.0f64..3.1) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let arr = arr();
            prop_assert!(array_inductance(&arr, lo).unwrap() < array_inductance(&arr, hi).unwrap());
        }

        #[test]
        fn routing_is_linear(s1 in -2.0f64..2.0, d1 in -2.0f64..2.0, s2 in -2.0f64..2.0, d2 in -2.0f64..2.0) {
            let a = FluxBias { phi_sigma: s1, phi_delta: d1 };
            let b = FluxBias { phi_sigma: s2, phi_delta: d2 };
            let r = route_flux(a + b);
            let (ra, rb) = (route_flux(a), route_flux(b));
            prop_assert!((r.phi_1 - ra.phi_1 - rb.phi_1).abs() < 1e-12);
            prop_assert!((r.phi_2 - ra.phi_2 - rb.phi_2).abs() < 1e-12);
        }
    }
}
