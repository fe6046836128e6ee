use num_complex::Complex64;
use ssbm_core::profile::Profile;
use ssbm_core::tib::*;

fn unmatched(p: &Profile, current: f64) -> BridgeNetwork {
    let d = p.device_description(0.0).unwrap();
    let mut net = d.network_at(current, p.device.phi_sigma_rad).unwrap();
    net.c_match = None;
    net.chip_mode = None;
    net
}

#[test]
fn reference_device_at_maximal_imbalance() {
    let p = Profile::realistic();
    let m = p
        .arm(0.0)
        .unwrap()
        .circuit_map(p.bridge.match_freq_hz)
        .unwrap();
    let peak = m.current_grid[m.peak_index];
    let net = unmatched(&p, peak);
    let th = thevenin_inductance(net.l1, net.l2).unwrap();
    assert!((th - 800e-12).abs() <= 0.05 * 800e-12, "{th:e}");
    let extracted = thevenin_from_network(&net, 1e6).unwrap();
    assert!(
        (extracted - th).abs() <= 1e-3 * th,
        "{extracted:e} vs {th:e}"
    );
    let bw = bode_fano_bandwidth(th, p.bridge.z0_ohm, -20.0).unwrap();
    assert!(bw >= 8e9, "{bw:e}");
}

#[test]
fn zero_bias_blocks_transmission() {
    let p = Profile::realistic();
    let net = unmatched(&p, 0.0);
    for f in [4e9, 6e9, 8e9] {
        assert!(net.solve(f).unwrap().s21.norm() < 1e-12);
    }
}

#[test]
fn map_is_odd_without_offset() {
    let p = Profile::realistic();
    let m = p.arm(0.0).unwrap().circuit_map(4e9).unwrap();
    for i in [2e-5, 1e-4, 2.2e-4, 3.5e-4] {
        let a = m.eval(i).unwrap();
        let b = m.eval(-i).unwrap();
        assert!((a + b).norm() < 1e-9, "{i}");
    }
}

#[test]
fn sweep_export_is_passive() {
    let p = Profile::realistic();
    let net = p
        .device_description(0.0)
        .unwrap()
        .network_at(1.5e-4, p.device.phi_sigma_rad)
        .unwrap();
    let freqs: Vec<f64> = (0..=40).map(|k| 4e9 + 1e8 * k as f64).collect();
    let r = bridge_sparams(&net, &freqs).unwrap();
    let text = r.to_touchstone();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('!') && !l.starts_with('#'))
        .collect();
    assert_eq!(rows.len(), freqs.len());
    assert_eq!(rows[0].split_whitespace().count(), 9);
    for k in 0..freqs.len() {
        let col = |s: Complex64, t: Complex64| s.norm_sqr() + t.norm_sqr();
        assert!(col(r.s11[k], r.s21[k]) <= 1.0 + 1e-9);
        assert!(col(r.s12[k], r.s22[k]) <= 1.0 + 1e-9);
    }
}
