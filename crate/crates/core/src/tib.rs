//! Tunable inductor bridge: nodal analysis of the inductor lattice, the
//! static transmission map `T(I)`, and design-analysis helpers.
//!
//! Node layout. Port 1 drives `L'` against the ground node `R'`; port 2 is
//! the floating pair `T'`/`B'`. Matching capacitors sit between each primed
//! node and its bridge node. The `l1` pair connects `L–T` and `R–B`, the
//! `l2` pair connects `L–B` and `R–T`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::interp::{bracketed_root, InterpError, Pchip};
use crate::squid::{array_inductance, route_flux, FluxBias, SquidArray, SquidError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TibError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("nodal matrix is singular at {freq} Hz")]
    Singular { freq: f64 },
    #[error("calibration error: {invalid} of {total} grid points are singular")]
    Calibration { invalid: usize, total: usize },
    #[error("map has no invertible branch")]
    NoBranch,
    #[error("current {current} A outside map span [{lo}, {hi}] A")]
    Extrapolation { current: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Squid(#[from] SquidError),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// Parasitic on-chip resonance, modeled as a series RLC shunt across the
/// output port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipMode {
    pub f_res: f64,
    pub q: f64,
    /// Characteristic impedance `sqrt(L/C)` of the mode, Ω.
    pub impedance: f64,
    pub enabled: bool,
}

impl ChipMode {
    fn admittance(&self, w: f64) -> Complex64 {
        let wr = 2.0 * PI * self.f_res;
        let l = self.impedance / wr;
        let c = 1.0 / (self.impedance * wr);
        let r = self.impedance / self.q;
        let z = Complex64::new(r, w * l - 1.0 / (w * c));
        1.0 / z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeNetwork {
    pub l1: f64,
    pub l2: f64,
    pub c_match: Option<f64>,
    pub z0: f64,
    pub chip_mode: Option<ChipMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPortResponse {
    pub freq_grid: Vec<f64>,
    pub s11: Vec<Complex64>,
    pub s21: Vec<Complex64>,
    pub s12: Vec<Complex64>,
    pub s22: Vec<Complex64>,
}

impl TwoPortResponse {
    /// Touchstone-style text, one line per frequency.
    pub fn to_touchstone(&self) -> String {
        let mut out = String::new();
        for k in 0..self.freq_grid.len() {
            let _ = write!(out, "{}", self.freq_grid[k]);
            for s in [&self.s11, &self.s21, &self.s12, &self.s22] {
                let _ = write!(out, " {:e} {:e}", s[k].re, s[k].im);
            }
            out.push('\n');
        }
        out
    }
}

/// Scattering parameters at one frequency, with the bridge node voltages
/// for a unit source on port 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSolution {
    pub s11: Complex64,
    pub s21: Complex64,
    pub s12: Complex64,
    pub s22: Complex64,
    /// Currents through the arms `L–T`, `R–B`, `L–B`, `R–T` for a 1 V
    /// open-circuit source on port 1.
    pub arm_currents: [Complex64; 4],
}

const LP: usize = 0;
const L: usize = 1;
const R: usize = 2;
const T: usize = 3;
const B: usize = 4;
const TP: usize = 5;
const BP: usize = 6;
const RP: usize = 7;

struct Nodes {
    index: [Option<usize>; 8],
    size: usize,
}

impl Nodes {
    fn new(with_caps: bool) -> Self {
        // without caps every primed node collapses onto its bridge node
        let alias: [usize; 8] = if with_caps {
            [LP, L, R, T, B, TP, BP, RP]
        } else {
            [L, L, RP, T, B, T, B, RP]
        };
        let mut index = [None; 8];
        let mut size = 0;
        for node in 0..8 {
            let a = alias[node];
            if a == RP {
                continue;
            }
            if a == node {
                index[node] = Some(size);
                size += 1;
            }
        }
        for node in 0..8 {
            index[node] = index[alias[node]];
        }
        Self { index, size }
    }
}

fn stamp(y: &mut DMatrix<Complex64>, nodes: &Nodes, a: usize, b: usize, g: Complex64) {
    let (ia, ib) = (nodes.index[a], nodes.index[b]);
    if let Some(i) = ia {
        y[(i, i)] += g;
    }
    if let Some(j) = ib {
        y[(j, j)] += g;
    }
    if let (Some(i), Some(j)) = (ia, ib) {
        y[(i, j)] -= g;
        y[(j, i)] -= g;
    }
}

impl BridgeNetwork {
    pub fn validate(&self) -> Result<(), TibError> {
        if !(self.l1 > 0.0 && self.l2 > 0.0 && self.z0 > 0.0) {
            return Err(TibError::InvalidInput(format!(
                "l1, l2, z0 must be positive: {self:?}"
            )));
        }
        if let Some(c) = self.c_match {
            if !(c > 0.0) {
                return Err(TibError::InvalidInput("c_match must be positive".into()));
            }
        }
        if let Some(m) = self.chip_mode {
            if !(m.f_res > 0.0 && m.q > 0.0 && m.impedance > 0.0) {
                return Err(TibError::InvalidInput(format!("bad chip mode {m:?}")));
            }
        }
        Ok(())
    }

    /// Same network with the inductor pair values replaced.
    pub fn with_inductors(&self, l1: f64, l2: f64) -> Self {
        Self { l1, l2, ..*self }
    }

    /// Solves the network at `freq` with individual arm inductances
    /// `[L–T, R–B, L–B, R–T]`.
    pub fn solve_arms(&self, freq: f64, arms: [f64; 4]) -> Result<PointSolution, TibError> {
        if !(freq > 0.0 && freq.is_finite()) {
            return Err(TibError::InvalidInput(format!("frequency {freq}")));
        }
        let w = 2.0 * PI * freq;
        let nodes = Nodes::new(self.c_match.is_some());
        let n = nodes.size;
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        if let Some(c) = self.c_match {
            let yc = Complex64::new(0.0, w * c);
            for (a, b) in [(LP, L), (RP, R), (T, TP), (B, BP)] {
                stamp(&mut y, &nodes, a, b, yc);
            }
        }
        let pairs = [(L, T), (R, B), (L, B), (R, T)];
        for ((a, b), l) in pairs.iter().zip(arms) {
            stamp(&mut y, &nodes, *a, *b, Complex64::new(0.0, -1.0 / (w * l)));
        }
        if let Some(m) = self.chip_mode.filter(|m| m.enabled) {
            stamp(&mut y, &nodes, TP, BP, m.admittance(w));
        }
        let g0 = Complex64::new(1.0 / self.z0, 0.0);
        stamp(&mut y, &nodes, LP, RP, g0);
        stamp(&mut y, &nodes, TP, BP, g0);

        let lu = y.lu();
        let solve = |src: &[(usize, f64)]| -> Result<DVector<Complex64>, TibError> {
            let mut rhs = DVector::<Complex64>::zeros(n);
            for (node, i) in src {
                if let Some(k) = nodes.index[*node] {
                    rhs[k] += Complex64::new(*i, 0.0);
                }
            }
            let v = lu.solve(&rhs).ok_or(TibError::Singular { freq })?;
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(TibError::Singular { freq });
            }
            Ok(v)
        };
        let volt = |v: &DVector<Complex64>, node: usize| -> Complex64 {
            nodes.index[node].map_or(Complex64::new(0.0, 0.0), |k| v[k])
        };
        let i0 = 1.0 / self.z0;
        let v1 = solve(&[(LP, i0)])?;
        let v2 = solve(&[(TP, i0), (BP, -i0)])?;
        let s11 = 2.0 * volt(&v1, LP) - 1.0;
        let s21 = 2.0 * (volt(&v1, TP) - volt(&v1, BP));
        let s12 = 2.0 * volt(&v2, LP);
        let s22 = 2.0 * (volt(&v2, TP) - volt(&v2, BP)) - 1.0;
        let mut arm_currents = [Complex64::new(0.0, 0.0); 4];
        for (k, ((a, b), l)) in pairs.iter().zip(arms).enumerate() {
            arm_currents[k] = (volt(&v1, *a) - volt(&v1, *b)) / Complex64::new(0.0, w * l);
        }
        Ok(PointSolution {
            s11,
            s21,
            s12,
            s22,
            arm_currents,
        })
    }

    pub fn solve(&self, freq: f64) -> Result<PointSolution, TibError> {
        self.solve_arms(freq, [self.l1, self.l1, self.l2, self.l2])
    }
}

/// Two-port scattering of the bridge over a frequency grid.
pub fn bridge_sparams(net: &BridgeNetwork, freqs: &[f64]) -> Result<TwoPortResponse, TibError> {
    net.validate()?;
    let mut r = TwoPortResponse {
        freq_grid: freqs.to_vec(),
        s11: Vec::with_capacity(freqs.len()),
        s21: Vec::with_capacity(freqs.len()),
        s12: Vec::with_capacity(freqs.len()),
        s22: Vec::with_capacity(freqs.len()),
    };
    for &f in freqs {
        let p = net.solve(f)?;
        r.s11.push(p.s11);
        r.s21.push(p.s21);
        r.s12.push(p.s12);
        r.s22.push(p.s22);
    }
    Ok(r)
}

/// `2 l1 l2 / (l1 + l2)`.
pub fn thevenin_inductance(l1: f64, l2: f64) -> Result<f64, TibError> {
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(TibError::InvalidInput(format!(
            "inductances must be positive: {l1}, {l2}"
        )));
    }
    Ok(2.0 * l1 * l2 / (l1 + l2))
}

/// Output inductance seen from port 2 with port 1 shorted, extracted from
/// the scattering matrix as the slope of the reactance between two low
/// frequencies.
pub fn thevenin_from_network(net: &BridgeNetwork, f_lo: f64) -> Result<f64, TibError> {
    let reactance = |f: f64| -> Result<f64, TibError> {
        let p = net.solve(f)?;
        let one = Complex64::new(1.0, 0.0);
        // Z = z0 (1 + S)(1 - S)^-1
        let (a, b, c, d) = (one - p.s11, -p.s12, -p.s21, one - p.s22);
        let det = a * d - b * c;
        let inv = [d / det, -b / det, -c / det, a / det];
        let (s11, s12, s21, s22) = (one + p.s11, p.s12, p.s21, one + p.s22);
        let z11 = net.z0 * (s11 * inv[0] + s12 * inv[2]);
        let z12 = net.z0 * (s11 * inv[1] + s12 * inv[3]);
        let z21 = net.z0 * (s21 * inv[0] + s22 * inv[2]);
        let z22 = net.z0 * (s21 * inv[1] + s22 * inv[3]);
        Ok((z22 - z12 * z21 / z11).im)
    };
    let f_hi = 2.0 * f_lo;
    Ok((reactance(f_hi)? - reactance(f_lo)?) / (2.0 * PI * (f_hi - f_lo)))
}

/// Widest bandwidth compatible with a constant in-band reflection of
/// `gamma_db` when matching a series inductance `l` to `z0`.
pub fn bode_fano_bandwidth(l: f64, z0: f64, gamma_db: f64) -> Result<f64, TibError> {
    if !(l > 0.0 && z0 > 0.0) {
        return Err(TibError::InvalidInput("L and z0 must be positive".into()));
    }
    if !(gamma_db < 0.0) {
        return Err(TibError::InvalidInput(format!(
            "reflection level must be negative dB, got {gamma_db}"
        )));
    }
    let ln_inv_gamma = -gamma_db / 20.0 * std::f64::consts::LN_10;
    Ok(z0 / (2.0 * l * ln_inv_gamma))
}

/// Flux-biased bridge: two SQUID-array roles, a network template and the
/// bias-current coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescription {
    pub array_1: SquidArray,
    pub array_2: SquidArray,
    /// `l1`/`l2` of the template are ignored.
    pub network: BridgeNetwork,
    /// Gradiometric loop phase per ampere of bias current, rad/A.
    pub coupling: f64,
    /// Static gradiometric offset, rad.
    pub phi_delta_offset: f64,
}

impl DeviceDescription {
    pub fn flux(&self, current: f64, phi_sigma: f64) -> FluxBias {
        FluxBias {
            phi_sigma,
            phi_delta: self.coupling * current + self.phi_delta_offset,
        }
    }

    pub fn inductances(&self, current: f64, phi_sigma: f64) -> Result<(f64, f64), SquidError> {
        let f = route_flux(self.flux(current, phi_sigma));
        Ok((
            array_inductance(&self.array_1, f.phi_1)?,
            array_inductance(&self.array_2, f.phi_2)?,
        ))
    }

    pub fn network_at(&self, current: f64, phi_sigma: f64) -> Result<BridgeNetwork, TibError> {
        let (l1, l2) = self.inductances(current, phi_sigma)?;
        Ok(self.network.with_inductors(l1, l2))
    }
}

/// Static bias-current to transmission map at one probe frequency.
///
/// Values are stored normalized to the largest `|s21|` on the grid. The
/// map also carries a projection axis: `Re(axis * t) / full_scale` is the
/// real-valued control characteristic that pulse shaping inverts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionMap {
    pub probe_freq: f64,
    pub current_grid: Vec<f64>,
    pub t_values: Vec<Complex64>,
    /// Largest raw `|s21|` on the grid.
    pub s21_scale: f64,
    pub invalid_points: usize,
    pub axis: Complex64,
    pub full_scale: f64,
    /// Inclusive index range of the increasing projected branch through I = 0.
    pub monotone_branch: (usize, usize),
    /// Grid index of the largest `|t|` at positive current.
    pub peak_index: usize,
    #[serde(skip)]
    re: Option<Pchip>,
    #[serde(skip)]
    im: Option<Pchip>,
}

fn principal_axis(values: impl Iterator<Item = Complex64>) -> Complex64 {
    let s: Complex64 = values.map(|v| v * v).sum();
    Complex64::from_polar(1.0, -0.5 * s.arg())
}

fn increasing_run(r: &[f64], z: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (z, z);
    while lo > 0 && r[lo - 1] < r[lo] {
        lo -= 1;
    }
    while hi + 1 < r.len() && r[hi + 1] > r[hi] {
        hi += 1;
    }
    (lo, hi)
}

impl TransmissionMap {
    /// Builds a map from raw `s21` samples on a strictly increasing grid.
    pub fn from_samples(
        probe_freq: f64,
        current_grid: Vec<f64>,
        raw: Vec<Complex64>,
        invalid_points: usize,
    ) -> Result<Self, TibError> {
        if current_grid.len() != raw.len() || current_grid.len() < 3 {
            return Err(TibError::InvalidInput(
                "grid and values must match, >= 3 points".into(),
            ));
        }
        if raw.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(TibError::InvalidInput("non-finite transmission".into()));
        }
        let s21_scale = raw.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !(s21_scale > 0.0) {
            return Err(TibError::NoBranch);
        }
        let t_values: Vec<Complex64> = raw.iter().map(|z| z / s21_scale).collect();
        let g = &current_grid;
        let peak_index = (0..g.len())
            .filter(|&k| g[k] > 0.0)
            .max_by(|&a, &b| t_values[a].norm().total_cmp(&t_values[b].norm()))
            .ok_or(TibError::NoBranch)?;
        let zero = (0..g.len())
            .min_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()))
            .unwrap();

        let project = |axis: Complex64| -> (Complex64, Vec<f64>) {
            let mut axis = axis;
            if (axis * t_values[peak_index]).re < 0.0 {
                axis = -axis;
            }
            let fs = (axis * t_values[peak_index]).re;
            (axis, t_values.iter().map(|t| (axis * t).re / fs).collect())
        };
        let first = principal_axis(
            (0..g.len())
                .filter(|&k| g[k] >= 0.0 && g[k] <= g[peak_index])
                .map(|k| t_values[k]),
        );
        let (mut axis, mut r) = project(first);
        let (_, mut hi) = increasing_run(&r, zero);
        // refit the axis over the part of the branch that shaping can use
        for _ in 0..3 {
            let sel: Vec<Complex64> = (0..g.len())
                .filter(|&k| g[k] >= 0.0 && r[k] <= 1.0 && k <= hi)
                .map(|k| t_values[k])
                .collect();
            if sel.is_empty() {
                break;
            }
            (axis, r) = project(principal_axis(sel.into_iter()));
            hi = increasing_run(&r, zero).1;
        }
        let monotone_branch = increasing_run(&r, zero);
        if monotone_branch.0 == monotone_branch.1 {
            return Err(TibError::NoBranch);
        }
        let full_scale = (axis * t_values[peak_index]).re;
        let mut map = Self {
            probe_freq,
            current_grid,
            t_values,
            s21_scale,
            invalid_points,
            axis,
            full_scale,
            monotone_branch,
            peak_index,
            re: None,
            im: None,
        };
        map.build_interpolants()?;
        Ok(map)
    }

    /// Map of a real-valued characteristic, taken as already projected.
    pub fn from_real(
        probe_freq: f64,
        current_grid: Vec<f64>,
        t: Vec<f64>,
    ) -> Result<Self, TibError> {
        let raw = t.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        Self::from_samples(probe_freq, current_grid, raw, 0)
    }

    fn build_interpolants(&mut self) -> Result<(), TibError> {
        let re: Vec<f64> = self.t_values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = self.t_values.iter().map(|z| z.im).collect();
        self.re = Some(Pchip::new(&self.current_grid, &re)?);
        self.im = Some(Pchip::new(&self.current_grid, &im)?);
        Ok(())
    }

    fn interpolants(&self) -> (&Pchip, &Pchip) {
        match (&self.re, &self.im) {
            (Some(a), Some(b)) => (a, b),
            _ => panic!("interpolants missing; rebuild with TransmissionMap::rebuild"),
        }
    }

    /// Restores interpolants after deserialization.
    pub fn rebuild(mut self) -> Result<Self, TibError> {
        self.build_interpolants()?;
        Ok(self)
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.current_grid[0],
            self.current_grid[self.current_grid.len() - 1],
        )
    }

    /// Interpolated normalized transmission.
    pub fn eval(&self, current: f64) -> Result<Complex64, TibError> {
        let (re, im) = self.interpolants();
        let (lo, hi) = self.span();
        let k = re
            .interval(current)
            .map_err(|_| TibError::Extrapolation { current, lo, hi })?;
        Ok(Complex64::new(
            re.eval_in(k, current),
            im.eval_in(k, current),
        ))
    }

    /// Interpolated raw transmission, `eval * s21_scale`.
    pub fn eval_raw(&self, current: f64) -> Result<Complex64, TibError> {
        Ok(self.eval(current)? * self.s21_scale)
    }

    /// Projected characteristic at `current`.
    pub fn projected(&self, current: f64) -> Result<f64, TibError> {
        Ok((self.axis * self.eval(current)?).re / self.full_scale)
    }

    /// Projected characteristic on the grid.
    pub fn projected_grid(&self) -> Vec<f64> {
        self.t_values
            .iter()
            .map(|t| (self.axis * t).re / self.full_scale)
            .collect()
    }

    /// Currents and projected values at the ends of the monotone branch.
    pub fn branch_extremes(&self) -> ((f64, f64), (f64, f64)) {
        let r = self.projected_grid();
        let (lo, hi) = self.monotone_branch;
        (
            (self.current_grid[lo], r[lo]),
            (self.current_grid[hi], r[hi]),
        )
    }

    /// Current on the monotone branch whose projected transmission is
    /// `target`, clipped to the branch. Returns the current and whether
    /// clipping occurred.
    pub fn invert(&self, target: f64) -> Result<(f64, bool), TibError> {
        let r = self.projected_grid();
        let (lo, hi) = self.monotone_branch;
        let g = &self.current_grid;
        if target <= r[lo] {
            return Ok((g[lo], target < r[lo]));
        }
        if target >= r[hi] {
            return Ok((g[hi], target > r[hi]));
        }
        let k = lo + r[lo..=hi].partition_point(|&v| v <= target) - 1;
        let k = k.min(hi - 1);
        let (re, im) = self.interpolants();
        let f = |i: f64| {
            let z = Complex64::new(re.eval_in(k, i), im.eval_in(k, i));
            (self.axis * z).re / self.full_scale - target
        };
        let tol = 1e-15 * (g[k + 1] - g[k]).abs().max(1e-30) + 1e-22;
        Ok((bracketed_root(f, g[k], g[k + 1], tol), false))
    }

    /// Export as CSV `current_a,re_t,im_t`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("current_a,re_t,im_t\n");
        for (i, t) in self.current_grid.iter().zip(&self.t_values) {
            let _ = writeln!(out, "{:e},{:e},{:e}", i, t.re, t.im);
        }
        out
    }
}

/// Uniform current grid, inclusive of both ends.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Measures `s21` of the biased device over `current_grid` at `probe_freq`.
///
/// Grid points that land on an inductance divergence are dropped and
/// counted; more than 10% dropped is a calibration error.
pub fn transmission_map(
    dev: &DeviceDescription,
    probe_freq: f64,
    current_grid: &[f64],
    phi_sigma: f64,
) -> Result<TransmissionMap, TibError> {
    if !current_grid.iter().any(|&i| i < 0.0) || !current_grid.iter().any(|&i| i > 0.0) {
        return Err(TibError::InvalidInput(
            "current grid must cover both polarities".into(),
        ));
    }
    dev.network.validate()?;
    let mut grid = Vec::with_capacity(current_grid.len());
    let mut raw = Vec::with_capacity(current_grid.len());
    let mut invalid = 0;
    for &i in current_grid {
        match dev.network_at(i, phi_sigma) {
            Ok(net) => {
                grid.push(i);
                raw.push(net.solve(probe_freq)?.s21);
            }
            Err(TibError::Squid(SquidError::SingularBias { .. })) => invalid += 1,
            Err(e) => return Err(e),
        }
    }
    if invalid * 10 > current_grid.len() {
        return Err(TibError::Calibration {
            invalid,
            total: current_grid.len(),
        });
    }
    TransmissionMap::from_samples(probe_freq, grid, raw, invalid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice_oracle(l1: f64, l2: f64, f: f64, z0: f64) -> Complex64 {
        let w = 2.0 * PI * f;
        let za = Complex64::new(0.0, w * l1);
        let zb = Complex64::new(0.0, w * l2);
        (zb - za) * z0 / ((za + z0) * (zb + z0))
    }

    fn bare(l1: f64, l2: f64) -> BridgeNetwork {
        BridgeNetwork {
            l1,
            l2,
            c_match: None,
            z0: 50.0,
            chip_mode: None,
        }
    }

    #[test]
    fn balanced_bridge_blocks() {
        let mut net = bare(1e-9, 1e-9);
        net.c_match = Some(1e-12);
        let r = bridge_sparams(&net, &[1e9, 4e9, 8e9]).unwrap();
        assert!(r.s21.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn matches_lattice_formula() {
        let net = bare(1e-9, 0.6e-9);
        let p = net.solve(5e9).unwrap();
        let o = lattice_oracle(1e-9, 0.6e-9, 5e9, 50.0);
        assert!((p.s21 - o).norm() < 1e-12);
    }

    #[test]
    fn chip_mode_shows_near_resonance() {
        let mut net = bare(1.2e-9, 0.4e-9);
        net.c_match = Some(1e-12);
        let mode = ChipMode {
            f_res: 5e9,
            q: 20.0,
            impedance: 50.0,
            enabled: true,
        };
        net.chip_mode = Some(mode);
        let freqs = linear_grid(4e9, 6e9, 401);
        let r = bridge_sparams(&net, &freqs).unwrap();
        let mag: Vec<f64> = r.s21.iter().map(|z| z.norm()).collect();
        let near = (1..mag.len() - 1).any(|k| {
            let ext = (mag[k] < mag[k - 1] && mag[k] < mag[k + 1])
                || (mag[k] > mag[k - 1] && mag[k] > mag[k + 1]);
            ext && (freqs[k] - 5e9).abs() <= 0.5e9
        });
        assert!(near);
        // damped: power leaves through the mode
        let k5 = 200;
        assert!(r.s11[k5].norm_sqr() + r.s21[k5].norm_sqr() < 1.0 - 1e-3);
        net.chip_mode = Some(ChipMode {
            enabled: false,
            ..mode
        });
        let p = net.solve(5e9).unwrap();
        assert!((p.s11.norm_sqr() + p.s21.norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn thevenin_examples() {
        assert!((thevenin_inductance(3e-10, 3e-10).unwrap() - 3e-10).abs() < 1e-24);
        let l = 4e-10;
        let t = thevenin_inductance(l, 1e6 * l).unwrap();
        assert!((t / (2.0 * l) - 1.0).abs() < 1e-5);
        assert!(thevenin_inductance(0.0, 1.0).is_err());
        let net = bare(2e-9, 0.4e-9);
        let ext = thevenin_from_network(&net, 1e6).unwrap();
        let want = thevenin_inductance(2e-9, 0.4e-9).unwrap();
        assert!((ext / want - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bode_fano_examples() {
        let bw = bode_fano_bandwidth(800e-12, 50.0, -20.0).unwrap();
        let direct = 50.0 / (2.0 * 800e-12 * 10f64.ln());
        assert!((bw - direct).abs() < 1e-3);
        assert!((bw / 1e9 - 13.57).abs() < 0.01);
        assert!(bode_fano_bandwidth(800e-12, 50.0, 0.0).is_err());
        assert!(bode_fano_bandwidth(800e-12, 50.0, -1e-9).unwrap() > 1e18);
    }

    #[test]
    fn touchstone_layout() {
        let r = bridge_sparams(&bare(1e-9, 0.5e-9), &[1e9, 2e9]).unwrap();
        let text = r.to_touchstone();
        let line: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(line.len(), 9);
        assert_eq!(line[0], "1000000000");
    }

    #[test]
    fn real_map_inversion_round_trip() {
        let g = linear_grid(-1.0, 1.0, 41);
        let t: Vec<f64> = g.iter().map(|&i| (1.3 * i).sin() / 1.3f64.sin()).collect();
        let m = TransmissionMap::from_real(4e9, g, t).unwrap();
        for y in [-0.9, -0.3, 0.0, 0.4, 0.99] {
            let (i, clipped) = m.invert(y).unwrap();
            assert!(!clipped);
            assert!((m.projected(i).unwrap() - y).abs() < 1e-12);
        }
        let (i, clipped) = m.invert(1.5).unwrap();
        assert!(clipped && i == 1.0);
        assert!(matches!(m.eval(1.2), Err(TibError::Extrapolation { .. })));
    }

    proptest! {
        #[test]
        fn lossless_unitary_and_reciprocal(
            l1 in 0.1e-9f64..3e-9, l2 in 0.1e-9f64..3e-9,
            f in 1e9f64..10e9, c in prop::option::of(0.5e-12f64..10e-12),
        ) {
            let mut net = bare(l1, l2);
            net.c_match = c;
            let p = net.solve(f).unwrap();
            prop_assert!((p.s11.norm_sqr() + p.s21.norm_sqr() - 1.0).abs() < 1e-9);
            prop_assert!((p.s22.norm_sqr() + p.s12.norm_sqr() - 1.0).abs() < 1e-9);
            prop_assert!((p.s12 - p.s21).norm() < 1e-12);
        }

        #[test]
        fn swapping_pairs_flips_sign(l1 in 0.1e-9f64..3e-9, l2 in 0.1e-9f64..3e-9, f in 1e9f64..10e9) {
            let mut a = bare(l1, l2);
            a.c_match = Some(2e-12);
            let b = a.with_inductors(l2, l1);
            let (sa, sb) = (a.solve(f).unwrap().s21, b.solve(f).unwrap().s21);
            prop_assert!((sa + sb).norm() < 1e-12);
        }

        #[test]
        fn agrees_with_lattice_oracle(l1 in 0.05e-9f64..5e-9, l2 in 0.05e-9f64..5e-9, f in 0.5e9f64..12e9) {
            let p = bare(l1, l2).solve(f).unwrap();
            let o = lattice_oracle(l1, l2, f, 50.0);
            prop_assert!((p.s21 - o).norm() <= 1e-9 * o.norm().max(1e-3));
        }
    }
}
