use ssbm_core::planner::*;
use ssbm_core::profile::Profile;

#[test]
fn reference_band_plan_with_measured_spurs() {
    let p = Profile::realistic();
    let spurs = build_spur_table(
        &p.assembly().unwrap(),
        &p.planner_drive(),
        &p.planner.spur_if_grid_hz,
    )
    .unwrap();
    let channels = p.planner.channel_specs();
    let (lo, hi) = p.planner.band();
    let plan = allocate(&channels, (lo, hi), &spurs).unwrap();

    let mut slots = plan.slots_hz.clone();
    slots.sort_by(|a, b| a[0].total_cmp(&b[0]));
    for s in &slots {
        assert!((s[1] - s[0] - 12e6).abs() < 1e-3);
        assert!(s[0] >= lo - 1e-3 && s[1] <= hi + 1e-3);
    }
    for w in slots.windows(2) {
        assert!(w[0][1] <= w[1][0] + 1e-6);
    }
    assert!(plan.offsets_hz.iter().all(|o| o.abs() <= 120e6));

    let report = validate(&plan, &spurs, -20.0).unwrap();
    assert!(report.is_clean(), "{report:?}");
    assert!(plan.score_db <= -20.0);
    assert_eq!(FrequencyPlan::from_json(&plan.to_json()).unwrap(), plan);

    let again = allocate(&channels, (lo, hi), &spurs).unwrap();
    assert_eq!(again.to_json(), plan.to_json());
}

#[test]
fn oversubscribed_band_reports_a_certificate() {
    let p = Profile::realistic();
    let spurs = SpurTable::clean(p.planner.spur_if_grid_hz.clone());
    let mut channels = p.planner.channel_specs();
    channels.extend(p.planner.channel_specs());
    channels.extend(p.planner.channel_specs());
    match allocate(&channels, p.planner.band(), &spurs) {
        Err(PlanError::Infeasible {
            required_hz,
            available_hz,
        }) => {
            assert!((required_hz - 360e6).abs() < 1.0);
            assert!((available_hz - 240e6).abs() < 1.0);
        }
        other => panic!("{other:?}"),
    }
}
