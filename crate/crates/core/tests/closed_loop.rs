//! Whole-loop properties that need real scans: coronal reconstruction on
//! live frames, region-vote transitions, pitch-surface alignment, and
//! the robotic/manual angle agreement.

use spinescan::imaging;
use spinescan::reconstruction::{build_coronal, measure_angle};
use spinescan::region::RegionClass;
use spinescan::scanner::{run_scan, MemFrames, Phase};
use spinescan::scenario::Scenario;

#[test]
fn angle_agreement_between_robotic_and_manual() {
    // both methods measure the same anatomy: with 4 mm operator wander
    // the manual angle stays within 5 degrees of the robotic one
    let scn = Scenario::default();
    assert_eq!(scn.hand.sigma, 0.004);
    let robotic = scn.run().unwrap();
    let manual = scn.run_manual().unwrap();
    let window = scn.reconstruction.angle_window;
    let ra = measure_angle(&robotic, window).unwrap();
    let ma = measure_angle(&manual, window).unwrap();
    assert!(
        (ra - ma).abs() <= 5.0,
        "robotic {ra:.2} deg vs manual {ma:.2} deg"
    );
}

#[test]
fn coronal_from_live_scan_centers_on_the_spine() {
    // straight centered phantom, noise off: the brightest coronal column
    // sits at world x = 0
    let mut scn = Scenario::default();
    scn.phantom.curve_amplitude = 0.0;
    scn.phantom.scan_span = 0.15;
    scn.phantom.region_bounds = [0.04, 0.08];
    scn.perception.render.speckle_sigma = 0.0;
    let mut frames = MemFrames::default();
    let mut params = scn_params(&scn);
    params.realtime = false;
    let log = run_scan(params, &mut frames).unwrap();
    assert_eq!(log.final_phase(), Phase::Done);

    let px_scale = 0.0005;
    // slice at the image depth where the lumbar process appears: its skin
    // depth minus the probe's penetration at the force setpoint
    let depth = scn.phantom.sp_depth.lumbar - scn.control.f_ref.lumbar / scn.phantom.skin_stiffness;
    let coronal = build_coronal(&log, &frames, depth, px_scale).unwrap();
    let col = coronal.brightest_column();
    let world_x = coronal.origin.0 + col as f64 * px_scale;
    assert!(
        world_x.abs() <= px_scale + 1e-12,
        "brightest column at world x = {world_x}"
    );
}

fn scn_params(scn: &Scenario) -> spinescan::scanner::ScanParams<'_> {
    spinescan::scanner::ScanParams {
        phantom: &scn.phantom,
        control: &scn.control,
        perception: &scn.perception,
        kalman: scn.kalman,
        seed: scn.seed,
        realtime: false,
    }
}

#[test]
fn region_settings_follow_the_scan() {
    let scn = Scenario::default();
    let log = scn.run().unwrap();
    // active region sequence collapses to Sacrum -> Lumbar -> Thoracic
    let mut transitions = Vec::new();
    let mut last = None;
    for rec in log.scan_records() {
        if last != Some(rec.region) {
            transitions.push((rec.pose.y, rec.region));
            last = Some(rec.region);
        }
    }
    let order: Vec<RegionClass> = transitions.iter().map(|t| t.1).collect();
    assert_eq!(
        order,
        vec![RegionClass::Sacrum, RegionClass::Lumbar, RegionClass::Thoracic],
        "transitions: {transitions:?}"
    );
    // switches happen near the true boundaries (within one vote window
    // plus a vertebra gap of the scan direction)
    assert!((transitions[1].0 - scn.phantom.region_bounds[0]).abs() < 0.025);
    assert!((transitions[2].0 - scn.phantom.region_bounds[1]).abs() < 0.025);

    // the thoracic force setpoint is actually applied after the switch
    let late: Vec<_> = log
        .scan_records()
        .filter(|r| r.pose.y > scn.phantom.region_bounds[1] + 0.05)
        .collect();
    let mean_force = late.iter().map(|r| r.screw.f_z).sum::<f64>() / late.len() as f64;
    assert!(
        (mean_force - scn.control.f_ref.thoracic).abs() < 1.0,
        "late-scan mean force {mean_force:.2} N vs thoracic setpoint {}",
        scn.control.f_ref.thoracic
    );
}

#[test]
fn pitch_tracks_the_sagittal_slope() {
    let mut scn = Scenario::default();
    scn.phantom.sagittal_amplitude = 0.010;
    let log = scn.run().unwrap();
    assert_eq!(log.final_phase(), Phase::Done);
    // after the startup transient the probe pitch follows the surface
    // slope; the lumbar gain trails the fastest slope changes by up to
    // ~0.07 rad, the thoracic gain by less
    let mut worst: f64 = 0.0;
    for rec in log.scan_records().filter(|r| r.t > 20.0) {
        let slope = scn
            .phantom
            .surface_slope_y(rec.pose.x, rec.pose.y.min(scn.phantom.scan_span))
            .atan();
        worst = worst.max((rec.pose.r_x - slope).abs());
    }
    assert!(worst < 0.10, "worst pitch mismatch {worst:.3} rad");
}

#[test]
fn detection_path_tracks_the_spine_world_position() {
    // the measured world path (pose + image offset) recovers the true
    // spine to millimeter accuracy even while the probe lags it
    let scn = Scenario::default();
    let log = scn.run().unwrap();
    let mut worst: f64 = 0.0;
    for rec in log.frame_records().filter(|r| r.t > 10.0) {
        let world = rec.pose.x + imaging::pixels_to_meters(rec.kf_x - 320.0);
        let y = rec.pose.y.min(scn.phantom.scan_span);
        let truth = scn.phantom.spine_lateral_offset(y).unwrap();
        worst = worst.max((world - truth).abs());
    }
    assert!(worst < 0.0035, "worst path error {:.2} mm", worst * 1000.0);
}
