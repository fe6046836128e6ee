//! Spur-aware frequency planning for multiplexed readout.
//!
//! Each channel `i` has a dressed tone at `ω_i` and is moved by a signed
//! offset `Ω_i` to `ω_i + Ω_i`, where it owns a slot `3κ_i` wide. The
//! modulator also leaks tones at `ω_i + kΩ_i` for `k ≠ 1` (`k = 0` is the
//! residual carrier, `k = −1` the image); a spur is a conflict when its own
//! `3κ_i` footprint overlaps another channel's slot.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::predistort::MAX_IF_HZ;
use crate::signals::{from_db, FLOOR_DB};
use crate::ssbm::{omega_sweep, DriveConfig, SsbmAssembly, SsbmError};

/// Slot width in linewidths.
pub const SLOT_KAPPAS: f64 = 3.0;
/// Highest spur order tracked.
pub const MAX_ORDER: i32 = 9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible: channels need {required_hz} Hz of spectrum, {available_hz} Hz available")]
    Infeasible { required_hz: f64, available_hz: f64 },
    #[error("malformed plan: {0}")]
    Structure(String),
    #[error(transparent)]
    Ssbm(#[from] SsbmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Dressed tone, Hz.
    pub omega_hz: f64,
    /// Linewidth κ/2π, Hz.
    pub kappa_hz: f64,
    /// Lower values are placed first.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub priority: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ChannelSpec {
    pub fn slot_width(&self) -> f64 {
        SLOT_KAPPAS * self.kappa_hz
    }
}

/// Spur levels versus signed offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpurTable {
    /// Increasing signed offsets, Hz.
    pub offsets_hz: Vec<f64>,
    /// Level of the tone at `ω + kΩ` relative to the desired `k = 1`, dB,
    /// one row per offset.
    pub levels_db: Vec<BTreeMap<i32, f64>>,
}

impl SpurTable {
    /// Table with every spur at the floor.
    pub fn clean(offsets_hz: Vec<f64>) -> Self {
        let row: BTreeMap<i32, f64> = (-MAX_ORDER..=MAX_ORDER)
            .map(|k| (k, if k == 1 { 0.0 } else { FLOOR_DB }))
            .collect();
        let levels_db = vec![row; offsets_hz.len()];
        Self {
            offsets_hz,
            levels_db,
        }
    }

    /// Level of spur `k` at `offset_hz`, linear in offset between grid
    /// points of the same sign and held at the ends.
    pub fn level(&self, offset_hz: f64, k: i32) -> f64 {
        if k == 1 {
            return 0.0;
        }
        let x = &self.offsets_hz;
        let at = |i: usize| self.levels_db[i].get(&k).copied().unwrap_or(FLOOR_DB);
        let same: Vec<usize> = (0..x.len())
            .filter(|&i| (x[i] >= 0.0) == (offset_hz >= 0.0))
            .collect();
        let idx = if same.is_empty() {
            (0..x.len()).collect()
        } else {
            same
        };
        let (first, last) = (idx[0], idx[idx.len() - 1]);
        if offset_hz <= x[first] {
            return at(first);
        }
        if offset_hz >= x[last] {
            return at(last);
        }
        let j = idx.partition_point(|&i| x[i] <= offset_hz);
        let (a, b) = (idx[j - 1], idx[j]);
        let f = (offset_hz - x[a]) / (x[b] - x[a]);
        at(a) + f * (at(b) - at(a))
    }

    /// Largest spur level at `offset_hz`.
    pub fn worst(&self, offset_hz: f64) -> f64 {
        (-MAX_ORDER..=MAX_ORDER)
            .filter(|&k| k != 1)
            .map(|k| self.level(offset_hz, k))
            .fold(FLOOR_DB, f64::max)
    }
}

/// Measures spur levels of `assembly` at `drive.carrier_hz` for both
/// conversion directions over the positive `if_grid_hz`.
pub fn build_spur_table(
    assembly: &SsbmAssembly,
    drive: &DriveConfig,
    if_grid_hz: &[f64],
) -> Result<SpurTable, PlanError> {
    if if_grid_hz.is_empty() || if_grid_hz.iter().any(|&f| !(f > 0.0)) {
        return Err(PlanError::InvalidInput(
            "IF grid must be non-empty and positive".into(),
        ));
    }
    let mut rows: Vec<(f64, BTreeMap<i32, f64>)> = Vec::new();
    for sign in [-1.0, 1.0] {
        let d = DriveConfig {
            theta: sign * PI / 2.0,
            ..*drive
        };
        for r in omega_sweep(assembly, &d, if_grid_hz, &[drive.carrier_hz])? {
            let t = &r.metrics.harmonic_table;
            let n_des = r.sideband;
            // tone at carrier + nΩ sits at ω + kΩ_signed with k = n·sign
            let levels = t
                .iter()
                .map(|(n, v)| (n * sign as i32, (v - t[&n_des]).max(FLOOR_DB)))
                .map(|(k, v)| (k, if k == 1 { 0.0 } else { v }))
                .collect();
            rows.push((sign * r.omega_if_hz, levels));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SpurTable {
        offsets_hz: rows.iter().map(|r| r.0).collect(),
        levels_db: rows.into_iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub channels: Vec<ChannelSpec>,
    pub offsets_hz: Vec<f64>,
    pub slots_hz: Vec<[f64; 2]>,
    pub score_db: f64,
}

impl FrequencyPlan {
    /// Plan with slots centred on the converted tones.
    pub fn from_offsets(
        channels: Vec<ChannelSpec>,
        offsets_hz: Vec<f64>,
        spurs: &SpurTable,
    ) -> Self {
        let slots_hz = channels
            .iter()
            .zip(&offsets_hz)
            .map(|(c, o)| slot(c, *o))
            .collect();
        let mut p = Self {
            channels,
            offsets_hz,
            slots_hz,
            score_db: FLOOR_DB,
        };
        p.score_db = objective(&p.channels, &p.offsets_hz, spurs).0;
        p
    }

    pub fn converted_hz(&self, i: usize) -> f64 {
        self.channels[i].omega_hz + self.offsets_hz[i]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PlanError> {
        serde_json::from_str(s).map_err(|e| PlanError::Structure(e.to_string()))
    }
}

fn slot(c: &ChannelSpec, offset: f64) -> [f64; 2] {
    let f = c.omega_hz + offset;
    [f - 0.5 * c.slot_width(), f + 0.5 * c.slot_width()]
}

fn overlaps(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] < b[1] && b[0] < a[1]
}

/// One spur landing in a foreign slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub source: usize,
    pub harmonic: i32,
    pub victim: usize,
    pub level_db: f64,
}

fn conflicts(channels: &[ChannelSpec], offsets: &[f64], spurs: &SpurTable) -> Vec<Conflict> {
    let slots: Vec<[f64; 2]> = channels
        .iter()
        .zip(offsets)
        .map(|(c, o)| slot(c, *o))
        .collect();
    let mut out = Vec::new();
    for (i, c) in channels.iter().enumerate() {
        for k in (-MAX_ORDER..=MAX_ORDER).filter(|&k| k != 1) {
            if offsets[i] == 0.0 && k != 0 {
                continue;
            }
            let level = spurs.level(offsets[i], k);
            if level <= FLOOR_DB {
                continue;
            }
            let f = c.omega_hz + k as f64 * offsets[i];
            let foot = [f - 0.5 * c.slot_width(), f + 0.5 * c.slot_width()];
            for (j, s) in slots.iter().enumerate() {
                if j != i && overlaps(foot, *s) {
                    out.push(Conflict {
                        source: i,
                        harmonic: k,
                        victim: j,
                        level_db: level,
                    });
                }
            }
        }
    }
    out
}

/// `(worst conflict dB, total conflict power)`, compared lexicographically.
fn objective(channels: &[ChannelSpec], offsets: &[f64], spurs: &SpurTable) -> (f64, f64) {
    conflicts(channels, offsets, spurs)
        .iter()
        .fold((FLOOR_DB, 0.0), |(w, t), c| {
            (w.max(c.level_db), t + from_db(c.level_db))
        })
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.1 < b.1 * (1.0 - 1e-12),
    }
}

/// Offset grid step used by the search, Hz.
pub const SEARCH_STEP_HZ: f64 = 0.5e6;

fn admissible(
    channels: &[ChannelSpec],
    offsets: &[f64],
    placed: &[bool],
    i: usize,
    band: (f64, f64),
) -> bool {
    if offsets[i].abs() > MAX_IF_HZ * (1.0 + 1e-12) {
        return false;
    }
    let s = slot(&channels[i], offsets[i]);
    if s[0] < band.0 || s[1] > band.1 {
        return false;
    }
    (0..channels.len())
        .filter(|&j| j != i && placed[j])
        .all(|j| !overlaps(s, slot(&channels[j], offsets[j])))
}

/// Greedy placement in priority order followed by a fixed-schedule local
/// search of `200·N` proposals.
pub fn allocate(
    channels: &[ChannelSpec],
    band: (f64, f64),
    spurs: &SpurTable,
) -> Result<FrequencyPlan, PlanError> {
    if channels.is_empty() || channels.iter().any(|c| !(c.kappa_hz > 0.0)) {
        return Err(PlanError::InvalidInput(
            "need channels with kappa > 0".into(),
        ));
    }
    if !(band.1 > band.0) {
        return Err(PlanError::InvalidInput("empty band".into()));
    }
    let required: f64 = channels.iter().map(|c| c.slot_width()).sum();
    let available = band.1 - band.0;
    if required > available {
        return Err(PlanError::Infeasible {
            required_hz: required,
            available_hz: available,
        });
    }
    let n = channels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&channels[a], &channels[b]);
        x.priority
            .cmp(&y.priority)
            .then(x.omega_hz.total_cmp(&y.omega_hz))
            .then(x.kappa_hz.total_cmp(&y.kappa_hz))
    });
    let steps = (MAX_IF_HZ / SEARCH_STEP_HZ).round() as i64;
    let mut candidates: Vec<f64> = (-steps..=steps)
        .map(|k| k as f64 * SEARCH_STEP_HZ)
        .collect();
    candidates.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(b.total_cmp(a)));

    let mut offsets = vec![0.0; n];
    let mut placed = vec![false; n];
    for &i in &order {
        let mut best: Option<(f64, (f64, f64))> = None;
        for &c in &candidates {
            offsets[i] = c;
            if !admissible(channels, &offsets, &placed, i, band) {
                continue;
            }
            placed[i] = true;
            let idx: Vec<usize> = (0..n).filter(|&j| placed[j]).collect();
            let sub: Vec<ChannelSpec> = idx.iter().map(|&j| channels[j]).collect();
            let off: Vec<f64> = idx.iter().map(|&j| offsets[j]).collect();
            placed[i] = false;
            let score = objective(&sub, &off, spurs);
            if best.is_none_or(|(_, b)| better(score, b)) {
                best = Some((c, score));
            }
        }
        match best {
            Some((c, _)) => {
                offsets[i] = c;
                placed[i] = true;
            }
            None => {
                return Err(PlanError::Infeasible {
                    required_hz: required,
                    available_hz: available,
                })
            }
        }
    }

    let (offsets, _) = local_search(channels, offsets, band, spurs);
    Ok(FrequencyPlan::from_offsets(
        channels.to_vec(),
        offsets,
        spurs,
    ))
}

/// Accepted moves of the local search with their objective values.
fn local_search(
    channels: &[ChannelSpec],
    mut offsets: Vec<f64>,
    band: (f64, f64),
    spurs: &SpurTable,
) -> (Vec<f64>, Vec<(f64, f64)>) {
    let n = channels.len();
    let all = vec![true; n];
    let mut current = objective(channels, &offsets, spurs);
    let mut log = vec![current];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..200 * n {
        let mut trial = offsets.clone();
        let i = rng.gen_range(0..n);
        let moved: Vec<usize> = if n > 1 && rng.gen_bool(0.5) {
            let j = (i + rng.gen_range(1..n)) % n;
            let (ci, cj) = (
                channels[i].omega_hz + offsets[i],
                channels[j].omega_hz + offsets[j],
            );
            trial[i] = cj - channels[i].omega_hz;
            trial[j] = ci - channels[j].omega_hz;
            vec![i, j]
        } else {
            let m = rng.gen_range(1..=8) as f64;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            trial[i] = offsets[i] + sign * m * SEARCH_STEP_HZ;
            vec![i]
        };
        if !moved
            .iter()
            .all(|&k| admissible(channels, &trial, &all, k, band))
        {
            continue;
        }
        let score = objective(channels, &trial, spurs);
        if better(score, current) {
            offsets = trial;
            current = score;
            log.push(current);
        }
    }
    (offsets, log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Overlapping slots, slots not matching their offsets and similar.
    pub structural: Vec<String>,
    /// Channels whose offset exceeds the IF range.
    pub range_violations: Vec<usize>,
    /// Conflicts above the threshold.
    pub conflicts: Vec<Conflict>,
    pub score_db: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.structural.is_empty() && self.range_violations.is_empty() && self.conflicts.is_empty()
    }
}

pub fn validate(
    plan: &FrequencyPlan,
    spurs: &SpurTable,
    threshold_db: f64,
) -> Result<ValidationReport, PlanError> {
    let n = plan.channels.len();
    if plan.offsets_hz.len() != n || plan.slots_hz.len() != n {
        return Err(PlanError::Structure(format!(
            "{n} channels, {} offsets, {} slots",
            plan.offsets_hz.len(),
            plan.slots_hz.len()
        )));
    }
    let mut structural = Vec::new();
    for i in 0..n {
        let want = slot(&plan.channels[i], plan.offsets_hz[i]);
        let got = plan.slots_hz[i];
        if (want[0] - got[0]).abs() > 1.0 || (want[1] - got[1]).abs() > 1.0 {
            structural.push(format!("slot {i} is not centred on its converted tone"));
        }
        for j in i + 1..n {
            if overlaps(plan.slots_hz[i], plan.slots_hz[j]) {
                structural.push(format!("slots {i} and {j} overlap"));
            }
        }
    }
    let range_violations = (0..n)
        .filter(|&i| plan.offsets_hz[i].abs() > MAX_IF_HZ * (1.0 + 1e-12))
        .collect();
    let all = conflicts(&plan.channels, &plan.offsets_hz, spurs);
    let score_db = all.iter().map(|c| c.level_db).fold(FLOOR_DB, f64::max);
    Ok(ValidationReport {
        structural,
        range_violations,
        conflicts: all
            .into_iter()
            .filter(|c| c.level_db > threshold_db)
            .collect(),
        score_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_table() -> SpurTable {
        let offsets = vec![-120e6, -3e6, 3e6, 120e6];
        let row = |image: f64| -> BTreeMap<i32, f64> {
            (-MAX_ORDER..=MAX_ORDER)
                .map(|k| {
                    let v = match k {
                        1 => 0.0,
                        -1 => image,
                        0 => -35.0,
                        3 | -3 => -40.0,
                        _ => FLOOR_DB,
                    };
                    (k, v)
                })
                .collect()
        };
        SpurTable {
            offsets_hz: offsets,
            levels_db: vec![row(-15.0), row(-30.0), row(-30.0), row(-15.0)],
        }
    }

    fn crowd(n: usize) -> Vec<ChannelSpec> {
        (0..n)
            .map(|i| ChannelSpec {
                omega_hz: 6e9 + (i as f64 - n as f64 / 2.0) * 6e6,
                kappa_hz: 4e6,
                priority: 0,
            })
            .collect()
    }

    #[test]
    fn table_interpolates_within_sign() {
        let t = toy_table();
        assert_eq!(t.level(3e6, 1), 0.0);
        assert!((t.level(61.5e6, -1) + 22.5).abs() < 1e-9);
        assert!((t.level(-61.5e6, -1) + 22.5).abs() < 1e-9);
        assert_eq!(t.level(1e6, -1), -30.0);
        assert_eq!(t.level(200e6, -1), -15.0);
        assert_eq!(t.worst(3e6), -30.0);
    }

    #[test]
    fn single_channel_stays_put() {
        let c = crowd(1);
        let p = allocate(&c, (5.88e9, 6.12e9), &toy_table()).unwrap();
        assert_eq!(p.offsets_hz, vec![0.0]);
        assert_eq!(p.score_db, FLOOR_DB);
    }

    #[test]
    fn ten_channels_fit_and_validate() {
        let c = crowd(10);
        let t = toy_table();
        let p = allocate(&c, (5.88e9, 6.12e9), &t).unwrap();
        let r = validate(&p, &t, -20.0).unwrap();
        assert!(r.is_clean(), "{r:?}");
        assert!(p.score_db <= -20.0);
        for s in &p.slots_hz {
            assert!((s[1] - s[0] - 12e6).abs() < 1e-3);
        }
        assert_eq!(allocate(&c, (5.88e9, 6.12e9), &t).unwrap(), p);
    }

    #[test]
    fn pigeonhole_certificate() {
        let c: Vec<ChannelSpec> = (0..25)
            .map(|i| ChannelSpec {
                omega_hz: 6e9 + i as f64 * 1e6,
                kappa_hz: 4e6,
                priority: 0,
            })
            .collect();
        match allocate(&c, (5.88e9, 6.12e9), &toy_table()) {
            Err(PlanError::Infeasible {
                required_hz,
                available_hz,
            }) => {
                assert!((required_hz - 300e6).abs() < 1.0);
                assert!((available_hz - 240e6).abs() < 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_conflicts_and_range() {
        let t = toy_table();
        let c = vec![
            ChannelSpec {
                omega_hz: 6e9,
                kappa_hz: 4e6,
                priority: 0,
            },
            ChannelSpec {
                omega_hz: 6.05e9,
                kappa_hz: 4e6,
                priority: 0,
            },
        ];
        // image of channel 0 at 6e9 - 30 MHz lands on channel 1 moved to 5.97 GHz
        let p = FrequencyPlan::from_offsets(c.clone(), vec![30e6, -80e6], &t);
        let r = validate(&p, &t, -40.0).unwrap();
        assert!(r
            .conflicts
            .iter()
            .any(|x| x.source == 0 && x.victim == 1 && x.harmonic == -1));
        let far = FrequencyPlan::from_offsets(c, vec![150e6, 0.0], &t);
        assert_eq!(validate(&far, &t, -20.0).unwrap().range_violations, vec![0]);
        let mut bad = p.clone();
        bad.slots_hz.pop();
        assert!(validate(&bad, &t, -20.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = toy_table();
        let p = allocate(&crowd(3), (5.88e9, 6.12e9), &t).unwrap();
        let s = p.to_json();
        assert!(s.contains("\"slots_hz\"") && !s.contains("priority"));
        assert_eq!(FrequencyPlan::from_json(&s).unwrap(), p);
    }

    #[test]
    fn search_only_accepts_improvements() {
        let c = crowd(8);
        let t = toy_table();
        let offsets: Vec<f64> = (0..8).map(|i| (i as f64 - 4.0) * 12e6 + 24e6).collect();
        let (_, log) = local_search(&c, offsets, (5.88e9, 6.12e9), &t);
        for w in log.windows(2) {
            assert!(better(w[1], w[0]));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn input_order_does_not_matter(rot in 0usize..6) {
            let t = toy_table();
            let c = crowd(6);
            let mut r = c.clone();
            r.rotate_left(rot);
            let a = allocate(&c, (5.88e9, 6.12e9), &t).unwrap();
            let b = allocate(&r, (5.88e9, 6.12e9), &t).unwrap();
            prop_assert!((a.score_db - b.score_db).abs() <= 0.1);
            prop_assert!(validate(&b, &t, -20.0).unwrap().structural.is_empty());
        }
    }
}
