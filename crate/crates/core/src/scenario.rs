//! Scenario configuration, presets and end-to-end runs.
//!
//! A scenario is one JSON object with optional sections; absent fields
//! take the defaults baked into each config struct, and validation
//! errors name the offending key.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlConfig;
use crate::error::{Error, Result};
use crate::imaging::{render_frame, world_to_image};
use crate::perception::{classify_region, detect_full, gaussian_target, multitask_loss, pck_accuracy};
use crate::phantom::PhantomModel;
use crate::reconstruction::{build_coronal, deviation_stats, measure_angle, DirFrameSource, PathSource, PathStats};
use crate::rng::{substream, substream_indexed};
use crate::scanner::{
    run_manual_scan, run_scan, DirFrames, DiscardFrames, FrameSink, HandConfig, Phase, ProbePose,
    ScanLog, ScanParams,
};
use crate::perception::PerceptionConfig;
use crate::tracking::KalmanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Moving-average and slope-fit window for the angle measurement (m).
    pub angle_window: f64,
    /// Coronal slice depth; defaults to the lumbar spinous-process depth.
    pub coronal_depth: Option<f64>,
    /// Coronal grid resolution (m/px).
    pub coronal_px_scale: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            angle_window: 0.030,
            coronal_depth: None,
            coronal_px_scale: 0.0005,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.angle_window <= 0.0 {
            return Err(Error::config("reconstruction.angle_window", "must be > 0"));
        }
        if self.coronal_px_scale <= 0.0 {
            return Err(Error::config("reconstruction.coronal_px_scale", "must be > 0"));
        }
        if let Some(d) = self.coronal_depth {
            if d <= 0.0 || d >= crate::imaging::DEPTH_M {
                return Err(Error::config(
                    "reconstruction.coronal_depth",
                    "must lie in (0, 0.060)",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; the CLI --out flag overrides it.
    pub dir: Option<PathBuf>,
    pub dump_frames: bool,
    pub dump_coronal: bool,
    pub emit_csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            dump_frames: false,
            dump_coronal: false,
            emit_csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub phantom: PhantomModel,
    pub control: ControlConfig,
    pub perception: PerceptionConfig,
    pub kalman: KalmanConfig,
    pub hand: HandConfig,
    pub reconstruction: ReconstructionConfig,
    pub seed: u64,
    pub outputs: OutputConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.control.validate()?;
        self.perception.validate()?;
        self.kalman.validate()?;
        self.hand.validate()?;
        self.reconstruction.validate()?;
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            if key.is_empty() || key == "." {
                Error::Json(e.to_string())
            } else {
                Error::Config {
                    key,
                    message: e.inner().to_string(),
                }
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Strongly curved upper back with a tight probe speed budget: the
    /// setting where a fixed lumbar-tuned pitch gain loses skin contact
    /// in the thoracic region while region-specific gains do not. The
    /// thoracic region starts early so the steep sagittal fall lies
    /// inside it.
    pub fn high_kyphosis() -> Scenario {
        let mut scn = Scenario::default();
        scn.phantom.sagittal_amplitude = 0.048;
        scn.phantom.region_bounds = [0.06, 0.14];
        scn.control.v_lim = 0.0009;
        scn
    }

    fn scan_params(&self) -> ScanParams<'_> {
        ScanParams {
            phantom: &self.phantom,
            control: &self.control,
            perception: &self.perception,
            kalman: self.kalman,
            seed: self.seed,
            realtime: false,
        }
    }

    /// Run the robotic scan without touching the filesystem.
    pub fn run(&self) -> Result<ScanLog> {
        run_scan(self.scan_params(), &mut DiscardFrames)
    }

    /// Run the simulated manual scan without touching the filesystem.
    pub fn run_manual(&self) -> Result<ScanLog> {
        run_manual_scan(self.scan_params(), self.hand, &mut DiscardFrames)
    }
}

/// Load and validate a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Error::Json(format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_json(&json)
}

/// Per-run report, serialized as report.json.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub phase: String,
    pub gt_angle_deg: f64,
    pub angle_deg: Option<f64>,
    pub kalman: Option<PathStats>,
    pub detections: Option<PathStats>,
    pub contact_loss_ticks: usize,
    pub ticks: usize,
    pub scan_duration_s: f64,
}

pub fn report_for(scn: &Scenario, log: &ScanLog) -> Report {
    Report {
        phase: log.final_phase().to_string(),
        gt_angle_deg: scn.phantom.ground_truth_angle(),
        angle_deg: measure_angle(log, scn.reconstruction.angle_window).ok(),
        kalman: deviation_stats(log, PathSource::Kalman).ok(),
        detections: deviation_stats(log, PathSource::Detections).ok(),
        contact_loss_ticks: log.contact_loss_ticks(),
        ticks: log.records.len(),
        scan_duration_s: log.records.last().map(|r| r.t).unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    pub out_dir: &'a Path,
    pub dump_frames: bool,
    pub dump_coronal: bool,
    pub emit_csv: bool,
    pub realtime: bool,
}

impl<'a> RunOptions<'a> {
    pub fn new(scn: &'a Scenario, out_override: Option<&'a Path>) -> RunOptions<'a> {
        RunOptions {
            out_dir: out_override
                .or(scn.outputs.dir.as_deref())
                .unwrap_or(Path::new("out")),
            dump_frames: scn.outputs.dump_frames,
            dump_coronal: scn.outputs.dump_coronal,
            emit_csv: scn.outputs.emit_csv,
            realtime: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub phase: Phase,
    pub report: Report,
    pub log: ScanLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Robotic,
    Manual,
}

fn run_to_dir(scn: &Scenario, opts: &RunOptions<'_>, mode: Mode) -> Result<RunOutcome> {
    std::fs::create_dir_all(opts.out_dir)?;
    let keep_frames = opts.dump_frames || opts.dump_coronal;
    let frames_dir = opts.out_dir.join("frames");

    let mut params = scn.scan_params();
    params.realtime = opts.realtime;

    let log = if keep_frames {
        let mut sink = DirFrames::new(&frames_dir)?;
        run_mode(params, scn, mode, &mut sink)?
    } else {
        run_mode(params, scn, mode, &mut DiscardFrames)?
    };

    if opts.emit_csv {
        log.write_csv(&opts.out_dir.join("scanlog.csv"))?;
    }

    if opts.dump_coronal && log.frame_records().next().is_some() {
        // default slice: the lumbar spinous-process depth as seen in the
        // image, i.e. below the probe face pressed in at the setpoint
        let depth = scn.reconstruction.coronal_depth.unwrap_or_else(|| {
            let penetration = scn.control.f_ref.lumbar / scn.phantom.skin_stiffness;
            (scn.phantom.sp_depth.lumbar - penetration).clamp(0.001, 0.059)
        });
        let source = DirFrameSource::new(&frames_dir);
        let coronal = build_coronal(&log, &source, depth, scn.reconstruction.coronal_px_scale)?;
        coronal.write_pgm(&opts.out_dir.join("coronal.pgm"))?;
    }

    let report = report_for(scn, &log);
    std::fs::write(
        opts.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;

    Ok(RunOutcome {
        phase: log.final_phase(),
        report,
        log,
    })
}

fn run_mode(
    params: ScanParams<'_>,
    scn: &Scenario,
    mode: Mode,
    sink: &mut dyn FrameSink,
) -> Result<ScanLog> {
    match mode {
        Mode::Robotic => run_scan(params, sink),
        Mode::Manual => run_manual_scan(params, scn.hand, sink),
    }
}

/// Run the robotic scan, writing scanlog.csv, report.json and any PGM
/// artifacts into the output directory.
pub fn run_scenario(scn: &Scenario, opts: &RunOptions<'_>) -> Result<RunOutcome> {
    run_to_dir(scn, opts, Mode::Robotic)
}

/// Same pipeline with the noisy-hand lateral model instead of the servo.
pub fn run_manual_scenario(scn: &Scenario, opts: &RunOptions<'_>) -> Result<RunOutcome> {
    run_to_dir(scn, opts, Mode::Manual)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub robotic: Report,
    pub manual: Report,
    pub robotic_mean_abs_dev_mm: Option<f64>,
    pub manual_mean_abs_dev_mm: Option<f64>,
    /// True when the robotic Kalman path hugs the image center more
    /// tightly than the simulated manual one.
    pub robotic_tracks_tighter: Option<bool>,
}

/// Robotic vs. simulated-manual comparison on one phantom. The two scans
/// are independent and run on separate threads; both are deterministic
/// functions of the scenario seed.
pub fn run_compare(scn: &Scenario, opts: &RunOptions<'_>) -> Result<CompareReport> {
    std::fs::create_dir_all(opts.out_dir)?;
    let robotic_dir = opts.out_dir.join("robotic");
    let manual_dir = opts.out_dir.join("manual");

    let (robotic, manual) = std::thread::scope(|s| {
        let r = s.spawn(|| {
            let o = RunOptions {
                out_dir: &robotic_dir,
                ..*opts
            };
            run_to_dir(scn, &o, Mode::Robotic)
        });
        let m = s.spawn(|| {
            let o = RunOptions {
                out_dir: &manual_dir,
                ..*opts
            };
            run_to_dir(scn, &o, Mode::Manual)
        });
        (r.join().expect("robotic scan thread"), m.join().expect("manual scan thread"))
    });
    let robotic = robotic?;
    let manual = manual?;

    let r_mm = robotic.report.kalman.map(|s| s.mean_abs_dev_mm);
    let m_mm = manual.report.kalman.map(|s| s.mean_abs_dev_mm);
    let report = CompareReport {
        robotic: robotic.report,
        manual: manual.report,
        robotic_mean_abs_dev_mm: r_mm,
        manual_mean_abs_dev_mm: m_mm,
        robotic_tracks_tighter: r_mm.zip(m_mm).map(|(r, m)| r < m),
    };
    std::fs::write(
        opts.out_dir.join("compare.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

/// Detector metrics on a synthetic sweep of spinous-process frames.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    pub pck: f64,
    pub pck_threshold_px: f64,
    pub mean_error_px: f64,
    pub detected: usize,
    pub mean_loss: f64,
    pub region_accuracy: f64,
    pub runtime_s: f64,
}

/// Render `n_frames` vertebra frames at randomized lateral offsets and
/// depths, run the detector and classifier, and score PCK, mean distance
/// error, classification accuracy and the multi-task loss. Undetected
/// frames count against PCK. Also returns the detection sequence CSV.
pub fn run_detector_eval(scn: &Scenario, n_frames: usize) -> Result<(EvalReport, String)> {
    if n_frames == 0 {
        return Err(Error::domain("detector eval needs at least one frame".to_string()));
    }
    let started = Instant::now();
    let phantom = &scn.phantom;
    let perception = &scn.perception;
    let mut pose_rng = substream(scn.seed, "eval-poses");

    let mut csv = String::from("frame_id,x_px,y_px,confidence,region,p_sacrum,p_lumbar,p_thoracic\n");
    let mut correct = 0usize;
    let mut detected = 0usize;
    let mut error_sum = 0.0f64;
    let mut loss_sum = 0.0f64;
    let mut region_hits = 0usize;

    for i in 0..n_frames {
        // sample a position over a lumbar or thoracic vertebra; the wide
        // sacrum band carries no point landmark to localize against
        let y_lo = phantom.region_bounds[0] + 0.005;
        let (y, vertebra) = loop {
            let y = pose_rng.random_range(y_lo..phantom.scan_span - 0.005);
            if let Some(v) = phantom.vertebra_at(y)? {
                break (y, v);
            }
        };
        let lateral_err = pose_rng.random_range(-0.012..0.012);
        let x = phantom.offset_unchecked(y) + lateral_err;
        let penetration = scn.control.f_ref.get(vertebra.region) / phantom.skin_stiffness;
        let pose = ProbePose {
            x,
            y,
            z: phantom.surface_unchecked(x, y) - penetration,
            ..ProbePose::default()
        };
        let truth = world_to_image(&pose, vertebra.world);

        let mut frame_rng = substream_indexed(scn.seed, "eval-renderer", i as u64);
        let frame = render_frame(phantom, &pose, &perception.render, i as u64, 0.0, &mut frame_rng);
        let out = detect_full(&frame, perception);
        let cls = classify_region(&frame, perception);

        let target_hm = gaussian_target(truth, perception.target_sigma)?;
        loss_sum += multitask_loss(
            &out.heatmap,
            &target_hm,
            cls.probs,
            vertebra.region,
            perception.loss_c,
        )?;
        if cls.feature_found && cls.class == vertebra.region {
            region_hits += 1;
        }

        match out.detection {
            Some(det) => {
                detected += 1;
                let dist = ((det.x_px - truth.0).powi(2) + (det.y_px - truth.1).powi(2)).sqrt();
                error_sum += dist;
                if dist <= perception.pck_threshold_px {
                    correct += 1;
                }
                csv.push_str(&format!(
                    "{i},{:.3},{:.3},{:.6},{},{:.6},{:.6},{:.6}\n",
                    det.x_px, det.y_px, det.confidence, cls.class, cls.probs[0], cls.probs[1], cls.probs[2]
                ));
            }
            None => {
                csv.push_str(&format!(
                    "{i},,,,{},{:.6},{:.6},{:.6}\n",
                    cls.class, cls.probs[0], cls.probs[1], cls.probs[2]
                ));
            }
        }
    }

    let report = EvalReport {
        frames: n_frames,
        pck: correct as f64 / n_frames as f64,
        pck_threshold_px: perception.pck_threshold_px,
        mean_error_px: if detected > 0 {
            error_sum / detected as f64
        } else {
            f64::INFINITY
        },
        detected,
        mean_loss: loss_sum / n_frames as f64,
        region_accuracy: region_hits as f64 / n_frames as f64,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    Ok((report, csv))
}

/// Self-check that the PCK helper and the sweep agree on a trivial case.
#[allow(dead_code)]
fn pck_self_check() -> Result<f64> {
    pck_accuracy(&[(0.0, 0.0)], &[(1.0, 1.0)], 20.0)
}
