//! Scenario implementations. Each writes its datasets and returns the
//! outcome of its self-checks.

use std::f64::consts::PI;
use std::fmt::Write as _;

use anyhow::Result;
use serde::Serialize;
use ssbm_core::predistort::harmonic_weights;
use ssbm_core::profile::Profile;
use ssbm_core::readout::{am_conversion, FdmReport, FdmSeeds, FdmSystem};
use ssbm_core::signals::SampledWaveform;
use ssbm_core::ssbm::{
    compression_csv, compression_sweep, omega_csv, omega_sweep, theta_csv, theta_sweep_with,
    tib_compression_sweep, CompressionSweep, DriveConfig, Modulator, OmegaRow, SsbmMetrics,
};
use ssbm_core::tib::{bode_fano_bandwidth, bridge_sparams, linear_grid};

use crate::checks::{self, CheckOutcome, Suite};
use crate::config::{apply_overrides, is_ideal, RunConfig, Scenario};
use crate::output::{db3, log, Artifacts};

/// Modulation frequencies of the generator-limit and Ω sweeps, Hz.
pub const IF_GRID_HZ: [f64; 10] = [3e6, 5e6, 10e6, 20e6, 30e6, 45e6, 60e6, 80e6, 100e6, 120e6];

/// Carriers of the Ω sweep, Hz.
pub const CARRIER_GRID_HZ: [f64; 9] = [4e9, 4.5e9, 5e9, 5.5e9, 6e9, 6.5e9, 7e9, 7.5e9, 8e9];

/// Harmonics that never rise above this level are treated as absent.
pub const HARMONIC_FLOOR_DB: f64 = -100.0;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: Artifacts,
    pub checks: Vec<CheckOutcome>,
}

impl Ctx<'_> {
    fn p(&self) -> &Profile {
        &self.cfg.profile
    }

    fn stage(&self, msg: &str) {
        log(self.cfg.scenario.name(), msg);
    }

    fn check(&mut self, c: CheckOutcome) {
        self.stage(&c.line());
        self.out.note(c.line());
        self.checks.push(c);
    }
}

pub fn run(ctx: &mut Ctx) -> Result<()> {
    match ctx.cfg.scenario {
        Scenario::CalibrateMap => calibrate_map(ctx),
        Scenario::ShapingCompare => shaping_compare(ctx),
        Scenario::ThetaSweep => theta_sweep(ctx),
        Scenario::IfLimits => if_limits(ctx),
        Scenario::OmegaSweep => omega(ctx),
        Scenario::AmConvert => am_convert(ctx),
        Scenario::Compression => compression(ctx),
        Scenario::Plan => plan(ctx),
        Scenario::Fdm => fdm(ctx),
        Scenario::CheckAll => check_all(ctx),
    }
}

/// Metrics with every dB field rounded to three decimals.
pub fn rounded(m: &SsbmMetrics) -> SsbmMetrics {
    SsbmMetrics {
        modulation_gain_db: db3(m.modulation_gain_db),
        image_rejection_db: db3(m.image_rejection_db),
        sideband_contrast_db: db3(m.sideband_contrast_db),
        residual_carrier_db: db3(m.residual_carrier_db),
        harmonic_table: m
            .harmonic_table
            .iter()
            .map(|(k, v)| (*k, db3(*v)))
            .collect(),
        ..m.clone()
    }
}

fn calibrate_map(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let carrier = p.drive.carrier_hz;
    ctx.stage(&format!("maps at {carrier} Hz"));
    for (name, offset) in [
        ("i", p.device.phi_delta_offset_i_rad),
        ("q", p.device.phi_delta_offset_q_rad),
    ] {
        let map = p.arm(offset)?.map(carrier)?;
        ctx.out.write(&format!("map_{name}.csv"), &map.to_csv())?;
        if name == "i" {
            let (lo, hi) = map.branch_extremes();
            ctx.out.note(format!(
                "map I: peak at {:e} A, |s21| scale {:.3} dB, branch {:e} A .. {:e} A",
                map.current_grid[map.peak_index],
                db3(20.0 * map.s21_scale.log10()),
                lo.0,
                hi.0
            ));
        }
    }

    ctx.stage("bridge sweeps");
    let freqs = linear_grid(1e9, 12e9, 221);
    let circuit = p.arm(0.0)?.circuit_map(p.bridge.match_freq_hz)?;
    let peak = circuit.current_grid[circuit.peak_index];
    let dev = p.device_description(0.0)?;
    let at_peak = bridge_sparams(&dev.network_at(peak, p.device.phi_sigma_rad)?, &freqs)?;
    ctx.out.write("bridge_peak.s2p", &at_peak.to_touchstone())?;
    let balanced = bridge_sparams(&dev.network_at(0.0, p.device.phi_sigma_rad)?, &freqs)?;
    ctx.out
        .write("bridge_balanced.s2p", &balanced.to_touchstone())?;

    let leak = balanced.s21.iter().map(|s| s.norm()).fold(0.0, f64::max);
    ctx.check(CheckOutcome::new(
        "balanced bridge",
        leak < 1e-12,
        format!("max |s21| {leak:.2e}"),
    ));
    let th = checks::reference_thevenin(&p)?;
    ctx.check(CheckOutcome::new(
        "Thevenin inductance",
        (th - 800e-12).abs() <= 0.05 * 800e-12,
        format!("{:.1} pH at the transmission peak", th * 1e12),
    ));
    let bw = bode_fano_bandwidth(th, p.bridge.z0_ohm, -20.0)?;
    ctx.check(CheckOutcome::new(
        "Bode-Fano bound",
        bw >= 8e9,
        format!("{:.3} GHz at -20 dB", bw / 1e9),
    ));
    Ok(())
}

fn shaping_compare(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let m = Modulator::new(&p.assembly()?, p.drive.carrier_hz)?;
    let mut weights = Vec::new();
    for (label, shaping) in [("shaped", true), ("naive", false)] {
        ctx.stage(&format!("{label} bias"));
        let d = DriveConfig {
            shaping,
            ..p.drive()
        };
        let arms = m.arm_waveforms(&d)?;
        ctx.out
            .write(&format!("bias_{label}.csv"), &arms.bias_i.to_csv())?;
        let w = SampledWaveform::new(arms.t_i, arms.sample_rate, 0.0, 0.0)?;
        weights.push(harmonic_weights(&w, 2.0 * PI * d.if_hz, 9)?);
    }
    let mut csv = String::from("n,shaped_db,naive_db\n");
    for (n, s) in &weights[0] {
        let _ = writeln!(csv, "{n},{:.3},{:.3}", s.0, weights[1][n].0);
    }
    ctx.out.write("weights.csv", &csv)?;
    let (shaped, naive) = (
        ssbm_core::predistort::worst_weight(&weights[0]),
        ssbm_core::predistort::worst_weight(&weights[1]),
    );
    ctx.check(CheckOutcome::new(
        "predistortion gain",
        naive - shaped >= 15.0,
        format!("worst weight {shaped:.3} dB shaped, {naive:.3} dB naive"),
    ));
    Ok(())
}

fn theta_sweep(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let d = p.drive();
    let m = Modulator::new(&p.assembly()?, d.carrier_hz)?;
    let grid = if d.shaping {
        (0..=180)
            .map(|k| -PI + 2.0 * PI * k as f64 / 180.0)
            .collect()
    } else {
        checks::periodic_theta_grid(360)
    };
    ctx.stage(&format!("{} theta points", grid.len()));
    let rows = theta_sweep_with(&m, &d, &grid)?;
    ctx.out.write("theta_sweep.csv", &theta_csv(&rows))?;
    let metrics = m.period_metrics(&d, 9)?;
    ctx.out.write_json("metrics.json", &rounded(&metrics))?;
    ctx.out.note(format!(
        "theta {:.4} rad: gain {:.3} dB, image rejection {:.3} dB, contrast {:.3} dB",
        d.theta,
        metrics.modulation_gain_db,
        metrics.image_rejection_db,
        metrics.sideband_contrast_db
    ));

    if !d.shaping {
        let (present, absent): (Vec<i32>, Vec<i32>) =
            (2..=5).partition(|n| rows.iter().any(|r| r.table[n] > HARMONIC_FLOOR_DB));
        let mut ok = !present.is_empty();
        let mut detail = Vec::new();
        for n in present {
            let (pass, d) = checks::harmonic_periods(&rows, n..=n);
            ok &= pass;
            detail.push(d.trim_start_matches("period in grid points ").to_string());
        }
        if !absent.is_empty() {
            detail.push(format!("orders {absent:?} below {HARMONIC_FLOOR_DB} dB"));
        }
        ctx.check(CheckOutcome::new(
            "harmonic periodicity",
            ok,
            format!("period in grid points {}", detail.join(", ")),
        ));
    } else if is_ideal(&p) {
        let dev = checks::sideband_law_deviation(&rows);
        ctx.check(CheckOutcome::new(
            "sideband amplitude law",
            dev < 1e-6,
            format!("max deviation {dev:.3e} of full scale"),
        ));
    } else {
        let mut worst = f64::INFINITY;
        for r in rows
            .iter()
            .filter(|r| (r.theta.abs() - PI / 2.0).abs() < 1e-9)
        {
            let want = if r.theta > 0.0 { 1 } else { -1 };
            let others = r
                .table
                .iter()
                .filter(|(n, _)| **n != want)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.min(r.table[&want] - others);
        }
        ctx.check(CheckOutcome::new(
            "first sideband dominates at ±π/2",
            worst > 20.0,
            format!("margin {worst:.3} dB"),
        ));
    }
    Ok(())
}

fn if_limits(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let d = p.drive();
    ctx.stage("modulation-frequency sweep");
    let rows = omega_sweep(&p.assembly()?, &d, &IF_GRID_HZ, &[d.carrier_hz])?;
    ctx.out.write("if_limits.csv", &omega_csv(&rows))?;
    ctx.stage("bias waveforms");
    let m = Modulator::new(&p.assembly()?, d.carrier_hz)?;
    for f in [3e6, 60e6] {
        let arms = m.arm_waveforms(&DriveConfig { if_hz: f, ..d })?;
        ctx.out
            .write(&format!("bias_{}mhz.csv", f / 1e6), &arms.bias_i.to_csv())?;
    }
    if is_ideal(&p) {
        let worst = rows
            .iter()
            .map(|r| r.metrics.image_rejection_db)
            .fold(f64::INFINITY, f64::min);
        ctx.check(CheckOutcome::new(
            "ideal image rejection",
            worst >= 100.0,
            format!("lowest {worst:.3} dB"),
        ));
    } else {
        let (ok, detail) = checks::degradation_bands(&rows);
        ctx.check(CheckOutcome::new(
            "generator-limited degradation",
            ok,
            detail,
        ));
    }
    Ok(())
}

fn omega(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let asm = p.assembly()?;
    let mut rows: Vec<OmegaRow> = Vec::new();
    for theta in [PI / 2.0, -PI / 2.0] {
        ctx.stage(&format!("sweep at theta {theta:.4}"));
        let d = DriveConfig { theta, ..p.drive() };
        rows.extend(omega_sweep(&asm, &d, &IF_GRID_HZ, &CARRIER_GRID_HZ)?);
    }
    ctx.out.write("omega_sweep.csv", &omega_csv(&rows))?;

    let at_low: Vec<f64> = rows
        .iter()
        .filter(|r| r.omega_if_hz == IF_GRID_HZ[0] && r.sideband == 1)
        .map(|r| r.metrics.modulation_gain_db)
        .collect();
    let spread = at_low.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - at_low.iter().cloned().fold(f64::INFINITY, f64::min);
    if is_ideal(&p) {
        let top = rows
            .iter()
            .map(|r| r.metrics.modulation_gain_db)
            .fold(f64::NEG_INFINITY, f64::max);
        ctx.check(CheckOutcome::new(
            "gain ceiling",
            top <= -10.0 * 2f64.log10() + 1e-9,
            format!("highest gain {top:.3} dB"),
        ));
        ctx.check(CheckOutcome::new(
            "carrier-independent gain",
            spread < 1e-9,
            format!("spread {spread:.2e} dB at 3 MHz"),
        ));
    } else {
        if p.bridge.chip_enabled {
            ctx.check(CheckOutcome::new(
                "carrier-dependent gain",
                spread > 1.0,
                format!("spread {spread:.3} dB at 3 MHz over 4-8 GHz"),
            ));
        }
        let pick = |f: f64| {
            rows.iter()
                .find(|r| {
                    r.omega_if_hz == f && r.carrier_hz == p.drive.carrier_hz && r.sideband == 1
                })
                .map(|r| r.metrics.clone())
        };
        if let (Some(a), Some(b)) = (pick(3e6), pick(60e6)) {
            let ok = (a.image_rejection_db - 30.0).abs() <= 5.0
                && (b.image_rejection_db - 20.0).abs() <= 5.0
                && (a.sideband_contrast_db - 25.0).abs() <= 5.0
                && (b.sideband_contrast_db - 13.0).abs() <= 5.0;
            ctx.check(CheckOutcome::new(
                "low and high IF bands",
                ok,
                format!(
                    "image rejection {:.3} -> {:.3} dB, contrast {:.3} -> {:.3} dB",
                    a.image_rejection_db,
                    b.image_rejection_db,
                    a.sideband_contrast_db,
                    b.sideband_contrast_db
                ),
            ));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AmRecord {
    nu_hz: f64,
    correlation: f64,
}

fn am_convert(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let asm = p.assembly()?;
    let mut records = Vec::new();
    for &nu in &p.am.rates_hz {
        ctx.stage(&format!("square-wave envelope at {nu} Hz"));
        let r = am_conversion(&asm, &p.drive(), &p.am, nu)?;
        let tag = format!("am_{}khz", (nu / 1e3).round());
        ctx.out
            .write(&format!("{tag}_input.csv"), &r.input.to_csv())?;
        ctx.out
            .write(&format!("{tag}_output.csv"), &r.output.to_csv())?;
        let mut env = String::from("t_s,envelope\n");
        for (k, v) in r.envelope.iter().enumerate() {
            let _ = writeln!(env, "{:e},{:e}", r.output.time(k), v);
        }
        ctx.out.write(&format!("{tag}_envelope.csv"), &env)?;
        records.push(AmRecord {
            nu_hz: nu,
            correlation: r.correlation,
        });
    }
    ctx.out.write_json("am.json", &records)?;
    if let Some(first) = records.first() {
        let falling = records
            .windows(2)
            .all(|w| w[1].correlation < w[0].correlation);
        let ok = first.correlation >= 0.99 && (asm.eddy_tau == 0.0 || falling);
        let list: Vec<String> = records
            .iter()
            .map(|r| format!("{:.5} at {} Hz", r.correlation, r.nu_hz))
            .collect();
        ctx.check(CheckOutcome::new(
            "instantaneous bandwidth",
            ok,
            list.join(", "),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct CompressionSummary {
    small_signal_gain_db: f64,
    p1db_dbm: Option<f64>,
    p1db_deviation_dbm: Option<f64>,
    deviation_sign: i32,
    small_signal_slope: Option<f64>,
    range_limit_dbm: Option<f64>,
}

impl From<&CompressionSweep> for CompressionSummary {
    fn from(s: &CompressionSweep) -> Self {
        Self {
            small_signal_gain_db: db3(s.small_signal_gain_db),
            p1db_dbm: s.p1db_dbm.map(db3),
            p1db_deviation_dbm: s.p1db_deviation_dbm.map(db3),
            deviation_sign: s.deviation_sign,
            small_signal_slope: s.small_signal_slope.map(|v| (v * 1e4).round() / 1e4),
            range_limit_dbm: s.range_limit_dbm.map(db3),
        }
    }
}

#[derive(Serialize)]
struct CompressionRecord {
    modulator: CompressionSummary,
    single_bridge: CompressionSummary,
}

fn compression(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let asm = p.assembly()?;
    let grid = p.compression.grid();
    ctx.stage("modulator power sweep");
    let ssbm = compression_sweep(&asm, &p.drive(), &grid)?;
    ctx.out
        .write("compression_ssbm.csv", &compression_csv(&ssbm))?;
    ctx.stage("single-bridge power sweep");
    let tib = tib_compression_sweep(&asm.tib_i, &p.drive(), &grid)?;
    ctx.out
        .write("compression_tib.csv", &compression_csv(&tib))?;
    ctx.out.write_json(
        "compression.json",
        &CompressionRecord {
            modulator: (&ssbm).into(),
            single_bridge: (&tib).into(),
        },
    )?;
    let (ok, detail) = checks::compression_verdict(&ssbm, &tib);
    ctx.check(CheckOutcome::new("compression", ok, detail));
    Ok(())
}

fn rounded_plan(plan: &ssbm_core::planner::FrequencyPlan) -> ssbm_core::planner::FrequencyPlan {
    let mut p = plan.clone();
    p.score_db = db3(p.score_db);
    p
}

fn plan(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    ctx.stage("spur table and allocation");
    let (plan, spurs) = checks::plan_for(&p)?;
    let mut csv = String::from("offset_hz,k,level_db\n");
    for (o, row) in spurs.offsets_hz.iter().zip(&spurs.levels_db) {
        for (k, v) in row {
            let _ = writeln!(csv, "{o},{k},{:.3}", v);
        }
    }
    ctx.out.write("spurs.csv", &csv)?;
    ctx.out
        .write("plan.json", &(rounded_plan(&plan).to_json() + "\n"))?;
    let mut report = ssbm_core::planner::validate(&plan, &spurs, -20.0)?;
    report.score_db = db3(report.score_db);
    report
        .conflicts
        .iter_mut()
        .for_each(|c| c.level_db = db3(c.level_db));
    ctx.out.write_json("validation.json", &report)?;
    ctx.out.note(format!("plan score {:.3} dB", plan.score_db));
    let layout = checks::slot_layout(&plan, p.planner.band(), 3.0 * p.planner.kappa_hz);
    ctx.check(CheckOutcome::new(
        "slot layout",
        layout.passed,
        layout.detail,
    ));
    ctx.check(CheckOutcome::new(
        "plan validation",
        report.is_clean(),
        format!(
            "{} conflicts above -20 dB, score {:.3} dB",
            report.conflicts.len(),
            report.score_db
        ),
    ));
    Ok(())
}

fn rounded_report(r: &FdmReport) -> FdmReport {
    let mut r = r.clone();
    r.plan = rounded_plan(&r.plan);
    for row in &mut r.crosstalk.db {
        row.iter_mut().for_each(|v| *v = db3(*v));
    }
    r
}

fn fdm(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.p().clone();
    let seed = ctx.cfg.seed.expect("seed validated with the configuration");
    let seeds = FdmSeeds {
        trajectory: seed,
        noise: seed,
    };
    ctx.stage("spur table and allocation");
    let (plan, _) = checks::plan_for(&p)?;
    ctx.out
        .write("plan.json", &(rounded_plan(&plan).to_json() + "\n"))?;
    ctx.stage("multiplexed run");
    let sys = FdmSystem::new(
        &p.readout,
        &plan,
        &p.assembly()?,
        &p.drive(),
        p.planner.centre_hz,
    )?;
    let (report, decisions) = sys.run(&seeds)?;
    ctx.out
        .write_json("readout.json", &rounded_report(&report))?;
    let dt = sys.window_samples as f64 / p.readout.line_rate_hz;
    for (i, d) in decisions.iter().enumerate() {
        let mut csv = String::from("t_s,re,im\n");
        for (w, z) in d.window_means.iter().enumerate() {
            let _ = writeln!(csv, "{:e},{:e},{:e}", (w as f64 + 0.5) * dt, z.re, z.im);
        }
        ctx.out
            .write(&format!("channel_{i:02}_windows.csv"), &csv)?;
    }
    let (x0, e0) = (
        report.crosstalk.worst_off_diagonal(),
        checks::max_error(&report),
    );
    ctx.out.note(format!(
        "{} channels, {} windows, worst crosstalk {x0:.3} dB, worst assignment error {:.2}%",
        plan.channels.len(),
        report.windows,
        e0 * 100.0
    ));

    let layout = checks::slot_layout(&plan, p.planner.band(), 3.0 * p.planner.kappa_hz);
    ctx.check(CheckOutcome::new(
        "slot layout",
        layout.passed,
        layout.detail,
    ));
    ctx.check(CheckOutcome::new(
        "crosstalk",
        x0 <= -20.0,
        format!("worst {x0:.3} dB"),
    ));
    ctx.check(CheckOutcome::new(
        "assignment error",
        e0 <= 0.01 && report.windows >= 200,
        format!("worst {:.2}% over {} windows", e0 * 100.0, report.windows),
    ));
    if ctx.cfg.check {
        ctx.stage("collision run");
        let bad = checks::fdm_run(&p, &checks::collision_for(&plan), &seeds)?;
        ctx.out
            .write_json("collision.json", &rounded_report(&bad))?;
        let (x1, e1) = (bad.crosstalk.worst_off_diagonal(), checks::max_error(&bad));
        ctx.check(CheckOutcome::new(
            "collision is worse",
            x1 > x0 && e1 > e0,
            format!("crosstalk {x1:.3} dB, error {:.2}%", e1 * 100.0),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct CriterionRecord {
    id: u8,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn check_all(ctx: &mut Ctx) -> Result<()> {
    let suite = Suite {
        ideal: apply_overrides(&Profile::ideal(), &ctx.cfg.overrides)?,
        realistic: apply_overrides(&Profile::realistic(), &ctx.cfg.overrides)?,
        seed: ctx.cfg.seed.unwrap_or(7),
    };
    ctx.stage("criteria use their own built-in profiles; overrides apply to both");
    let results = suite.run_all(|c| {
        log(
            "check-all",
            &format!(
                "{} criterion {} in {:.2} s: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                c.runtime_s,
                c.detail
            ),
        )
    });
    let records: Vec<CriterionRecord> = results
        .iter()
        .map(|c| CriterionRecord {
            id: c.id,
            title: c.title,
            passed: c.passed,
            detail: c.detail.clone(),
        })
        .collect();
    ctx.out.write_json("checks.json", &records)?;
    for c in &results {
        let o = c.outcome();
        ctx.out.note(o.line());
        ctx.checks.push(o);
    }
    Ok(())
}
