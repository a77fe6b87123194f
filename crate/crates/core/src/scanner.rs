//! The scan loop: approach, 30 Hz control with 10 Hz frame capture,
//! phase transitions, safety latch and full logging.
//!
//! The loop is strictly single-threaded and deterministic; a scan is a
//! pure function of (phantom, config, seed).

use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contact::{compute_force_screw, ForceScrew};
use crate::control::{
    compose_command, force_velocity, lateral_velocity, pitch_rate, region_settings, safety_check,
    ControlConfig, ControllerState, SafetyDecision, VelocityCommand,
};
use crate::error::{Error, Result};
use crate::imaging::{render_frame, UsFrame};
use crate::perception::{classify_region, detect, Detection, PerceptionConfig};
use crate::phantom::PhantomModel;
use crate::region::RegionClass;
use crate::rng::{substream, substream_indexed};
use crate::tracking::{kf_step, KalmanConfig, KalmanState};

/// Control period: the loop runs at 30 Hz.
pub const CONTROL_DT: f64 = 1.0 / 30.0;
/// Frames arrive at 10 Hz: one every third control tick.
pub const TICKS_PER_FRAME: u64 = 3;
/// Frames collected into the last-N region vote.
const REGION_VOTE_WINDOW: usize = 5;

/// 6-DoF probe pose in the Init frame: x lateral, y caudo-cranial,
/// z up (away from the back). r_y and r_z stay zero throughout; no law
/// commands yaw or roll.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbePose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
}

impl ProbePose {
    /// Explicit Euler step by a TCP-frame command.
    ///
    /// The TCP frame rides the probe (tool pointing down, pitched by
    /// r_x): +v_z advances along the beam into the skin, +v_y advances
    /// along the probe's scan axis, and the TCP x axis opposes the
    /// world/image x axis, so +v_x drives the probe toward smaller world
    /// x. With an all-zero command the pose is constant.
    pub fn integrate(&mut self, cmd: &VelocityCommand, dt: f64) {
        let (sin_rx, cos_rx) = self.r_x.sin_cos();
        self.x += -cmd.v_x * dt;
        self.y += (cmd.v_y * cos_rx + cmd.v_z * sin_rx) * dt;
        self.z += (cmd.v_y * sin_rx - cmd.v_z * cos_rx) * dt;
        self.r_x += cmd.r_x_rate * dt;
        self.r_y += cmd.r_y_rate * dt;
        self.r_z += cmd.r_z_rate * dt;
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.r_x, self.r_y, self.r_z]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Approach,
    Scan,
    Stopped,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Approach => "Approach",
            Phase::Scan => "Scan",
            Phase::Stopped => "Stopped",
            Phase::Done => "Done",
        })
    }
}

/// One control tick in the log.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub t: f64,
    pub pose: ProbePose,
    pub screw: ForceScrew,
    pub frame_id: Option<u64>,
    pub detection: Option<Detection>,
    pub kf_x: f64,
    pub region: RegionClass,
    pub command: VelocityCommand,
    pub phase: Phase,
}

/// Complete time-indexed record of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanLog {
    pub dt: f64,
    pub records: Vec<ScanRecord>,
}

pub const CSV_HEADER: &str =
    "t,x,y,z,rx,ry,rz,fx,fy,fz,mx,my,mz,frame_id,det_x,det_y,det_conf,kf_x,region,vx,vy,vz,rx_rate,phase";

impl ScanLog {
    pub fn final_phase(&self) -> Phase {
        self.records.last().map(|r| r.phase).unwrap_or(Phase::Approach)
    }

    /// Records carrying a captured frame.
    pub fn frame_records(&self) -> impl Iterator<Item = &ScanRecord> {
        self.records.iter().filter(|r| r.frame_id.is_some())
    }

    pub fn scan_records(&self) -> impl Iterator<Item = &ScanRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Scan)
    }

    /// Scan-phase ticks where acoustic contact was lost (zero normal force).
    pub fn contact_loss_ticks(&self) -> usize {
        self.scan_records().filter(|r| r.screw.f_z <= 0.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 160 + 256);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let (fid, det_x, det_y, det_conf) = match (r.frame_id, &r.detection) {
                (Some(id), Some(d)) => (
                    id.to_string(),
                    format!("{:.3}", d.x_px),
                    format!("{:.3}", d.y_px),
                    format!("{:.6}", d.confidence),
                ),
                (Some(id), None) => (id.to_string(), String::new(), String::new(), String::new()),
                (None, _) => (String::new(), String::new(), String::new(), String::new()),
            };
            out.push_str(&format!(
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{:.4},{},{:.9},{:.9},{:.9},{:.9},{}\n",
                r.t,
                r.pose.x,
                r.pose.y,
                r.pose.z,
                r.pose.r_x,
                r.pose.r_y,
                r.pose.r_z,
                r.screw.f_x,
                r.screw.f_y,
                r.screw.f_z,
                r.screw.m_x,
                r.screw.m_y,
                r.screw.m_z,
                fid,
                det_x,
                det_y,
                det_conf,
                r.kf_x,
                r.region,
                r.command.v_x,
                r.command.v_y,
                r.command.v_z,
                r.command.r_x_rate,
                r.phase,
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Destination for captured frames; the scan loop streams frames out
/// instead of holding a full sweep in memory.
pub trait FrameSink {
    fn push(&mut self, frame: &UsFrame) -> Result<()>;
}

/// Drops every frame; used when nothing downstream needs pixels.
pub struct DiscardFrames;

impl FrameSink for DiscardFrames {
    fn push(&mut self, _frame: &UsFrame) -> Result<()> {
        Ok(())
    }
}

/// Writes numbered PGM files into a directory.
pub struct DirFrames {
    dir: PathBuf,
}

impl DirFrames {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DirFrames { dir })
    }

    pub fn frame_path(&self, frame_id: u64) -> PathBuf {
        self.dir.join(format!("{frame_id:04}.pgm"))
    }
}

impl FrameSink for DirFrames {
    fn push(&mut self, frame: &UsFrame) -> Result<()> {
        frame.write_pgm(&self.frame_path(frame.frame_id))
    }
}

/// Keeps frames in memory; only for short test sweeps.
#[derive(Default)]
pub struct MemFrames {
    pub frames: Vec<UsFrame>,
}

impl FrameSink for MemFrames {
    fn push(&mut self, frame: &UsFrame) -> Result<()> {
        self.frames.push(frame.clone());
        Ok(())
    }
}

/// Ornstein-Uhlenbeck hand-wander model for the simulated manual scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandConfig {
    /// Stationary lateral wander around the spine (m).
    pub sigma: f64,
    /// Wander correlation time (s).
    pub correlation_time: f64,
    /// Pursuit gain of the hand toward spine + wander (1/s).
    pub gain: f64,
    /// Hand lateral speed limit (m/s); far looser than the robot's v_lim.
    pub speed_limit: f64,
}

impl Default for HandConfig {
    fn default() -> Self {
        HandConfig {
            sigma: 0.004,
            correlation_time: 32.0,
            gain: 1.2,
            speed_limit: 0.05,
        }
    }
}

impl HandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(Error::config("hand.sigma", "must be >= 0"));
        }
        if self.correlation_time <= 0.0 {
            return Err(Error::config("hand.correlation_time", "must be > 0"));
        }
        if self.gain <= 0.0 || self.speed_limit <= 0.0 {
            return Err(Error::config("hand", "gain and speed_limit must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ScanMode {
    Robotic,
    Manual(HandConfig),
}

/// Everything a scan needs besides its frame sink.
#[derive(Debug, Clone, Copy)]
pub struct ScanParams<'a> {
    pub phantom: &'a PhantomModel,
    pub control: &'a ControlConfig,
    pub perception: &'a PerceptionConfig,
    pub kalman: KalmanConfig,
    pub seed: u64,
    /// Pace the virtual clock against wall time, for demonstrations.
    pub realtime: bool,
}

pub fn run_scan(params: ScanParams<'_>, sink: &mut dyn FrameSink) -> Result<ScanLog> {
    run(params, ScanMode::Robotic, sink)
}

pub fn run_manual_scan(
    params: ScanParams<'_>,
    hand: HandConfig,
    sink: &mut dyn FrameSink,
) -> Result<ScanLog> {
    run(params, ScanMode::Manual(hand), sink)
}

fn majority(votes: &VecDeque<RegionClass>, current: RegionClass) -> RegionClass {
    let mut counts = [0usize; 3];
    for v in votes {
        counts[v.index()] += 1;
    }
    let best = *counts.iter().max().unwrap();
    if best == 0 {
        return current;
    }
    // ties keep the current region to avoid chattering at boundaries
    if counts[current.index()] == best {
        return current;
    }
    RegionClass::ALL
        .into_iter()
        .find(|r| counts[r.index()] == best)
        .unwrap_or(current)
}

/// One full scan.
///
/// Approach: descend from 5 mm above the skin until the normal force
/// reaches the sacrum setpoint. Scan: every tick integrates the previous
/// command, senses contact, checks safety, captures a frame on every
/// third tick (detector, classifier, Kalman step), resolves region
/// settings by majority vote over the last confidently classified frames
/// and composes the next command. Ends Done at the far end of the span,
/// or Stopped the moment the critical force is reached.
fn run(params: ScanParams<'_>, mode: ScanMode, sink: &mut dyn FrameSink) -> Result<ScanLog> {
    let phantom = params.phantom;
    let cfg = params.control;
    let dt = CONTROL_DT;

    // the probe is placed 5 mm above the skin, perpendicular to the back
    // surface (pitch matching the local sagittal slope)
    let start_x = cfg.initial_lateral_offset;
    let mut pose = ProbePose {
        x: start_x,
        y: 0.0,
        z: phantom.surface_height(start_x, 0.0)? + 0.005,
        r_x: phantom.surface_slope_y(start_x, 0.0).atan(),
        ..ProbePose::default()
    };

    let mut records: Vec<ScanRecord> = Vec::new();
    let mut phase = Phase::Approach;
    let mut prev_cmd = VelocityCommand::ZERO;
    let mut kf = KalmanState::new(params.kalman);
    let mut kf_x = kf.x_hat;
    let mut controller: Option<ControllerState> = None;
    let mut region = RegionClass::Sacrum;
    let mut votes: VecDeque<RegionClass> = VecDeque::with_capacity(REGION_VOTE_WINDOW + 1);
    let mut scan_tick: u64 = 0;
    let mut frame_count: u64 = 0;

    let mut hand_rng = substream(params.seed, "manual-hand");
    let mut hand_ou = 0.0f64;

    // generous bound; a healthy scan ends well before it
    let max_ticks = (((phantom.scan_span / cfg.v_y) * 2.0 + 120.0) / dt).ceil() as u64;

    for tick in 0..max_ticks {
        if params.realtime {
            std::thread::sleep(std::time::Duration::from_secs_f64(dt));
        }
        if tick > 0 {
            pose.integrate(&prev_cmd, dt);
        }
        let t = tick as f64 * dt;

        if !pose.is_finite() {
            return Err(Error::NumericalBlowup {
                tick,
                what: format!("pose {pose:?}"),
            });
        }

        if phase == Phase::Scan && pose.y >= phantom.scan_span {
            records.push(ScanRecord {
                t,
                pose,
                screw: compute_force_screw(phantom, &pose),
                frame_id: None,
                detection: None,
                kf_x,
                region,
                command: VelocityCommand::ZERO,
                phase: Phase::Done,
            });
            return Ok(ScanLog { dt, records });
        }

        let screw = compute_force_screw(phantom, &pose);
        if !screw.f_z.is_finite() || !screw.m_x.is_finite() {
            return Err(Error::NumericalBlowup {
                tick,
                what: format!("force screw {screw:?}"),
            });
        }

        if safety_check(&screw, cfg.f_crit) == SafetyDecision::EmergencyStop {
            records.push(ScanRecord {
                t,
                pose,
                screw,
                frame_id: None,
                detection: None,
                kf_x,
                region,
                command: VelocityCommand::ZERO,
                phase: Phase::Stopped,
            });
            return Ok(ScanLog { dt, records });
        }

        if phase == Phase::Approach && screw.f_z >= cfg.f_ref.sacrum {
            phase = Phase::Scan;
            controller = Some(ControllerState::new(screw.f_z));
            scan_tick = 0;
        }

        let mut frame_id = None;
        let mut detection = None;

        let command = match phase {
            Phase::Approach => VelocityCommand {
                v_z: cfg.v_approach,
                ..VelocityCommand::ZERO
            },
            Phase::Scan => {
                let ctl = controller.as_mut().expect("controller exists during Scan");

                if scan_tick % TICKS_PER_FRAME == 0 {
                    let fid = frame_count;
                    let mut frame_rng = substream_indexed(params.seed, "renderer", fid);
                    let frame =
                        render_frame(phantom, &pose, &params.perception.render, fid, t, &mut frame_rng);
                    sink.push(&frame)?;
                    let det = detect(&frame, params.perception);
                    if det.is_some() {
                        // the classifier votes only on frames with a
                        // confident feature, mirroring a network trained
                        // on spinous-process images alone
                        let cls = classify_region(&frame, params.perception);
                        if cls.feature_found {
                            votes.push_back(cls.class);
                            if votes.len() > REGION_VOTE_WINDOW {
                                votes.pop_front();
                            }
                            region = majority(&votes, region);
                        }
                    }
                    let (next_kf, est) = kf_step(&kf, det.map(|d| d.x_px));
                    kf = next_kf;
                    kf_x = est;
                    frame_id = Some(fid);
                    detection = det;
                    frame_count += 1;
                }
                scan_tick += 1;

                let (f_ref, k_pitch) = region_settings(region, cfg);
                let v_z = force_velocity(ctl, screw.f_z, f_ref, dt, cfg)?;
                let pitch = pitch_rate(screw.m_x, k_pitch);

                match mode {
                    ScanMode::Robotic => {
                        let lateral = lateral_velocity(ctl, kf_x, cfg);
                        compose_command(lateral, cfg.v_y, v_z, pitch, SafetyDecision::Proceed, cfg)
                    }
                    ScanMode::Manual(hand) => {
                        let a = (-dt / hand.correlation_time).exp();
                        let n: f64 = hand_rng.sample(StandardNormal);
                        hand_ou = hand_ou * a + hand.sigma * (1.0 - a * a).sqrt() * n;
                        let y = pose.y.clamp(0.0, phantom.scan_span);
                        let target = phantom.offset_unchecked(y) + hand_ou;
                        let v_world = hand.gain * (target - pose.x);
                        // hand motion is not bound by the robot's v_lim
                        let mut cmd =
                            compose_command(0.0, cfg.v_y, v_z, pitch, SafetyDecision::Proceed, cfg);
                        cmd.v_x = (-v_world).clamp(-hand.speed_limit, hand.speed_limit);
                        cmd
                    }
                }
            }
            Phase::Stopped | Phase::Done => VelocityCommand::ZERO,
        };

        records.push(ScanRecord {
            t,
            pose,
            screw,
            frame_id,
            detection,
            kf_x,
            region,
            command,
            phase,
        });
        prev_cmd = command;
    }

    Err(Error::domain(format!(
        "scan did not terminate within {max_ticks} ticks; check v_y and scan_span"
    )))
}
