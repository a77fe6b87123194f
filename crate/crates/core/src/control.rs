//! Velocity-level control laws: lateral visual servo with exponential
//! smoothing and dual gains, PID force regulation with derivative on
//! measurement, moment-driven pitch compensation, saturation and the
//! critical-force stop.
//!
//! Command components are expressed in the TCP frame: +v_y advances along
//! the probe's scan axis, +v_z pushes along the beam into the skin, and
//! +v_x runs along the probe's lateral axis (opposite the image x axis,
//! which is why centering a feature seen at +x pixels takes a negative
//! commanded v_x).

use serde::{Deserialize, Serialize};

use crate::contact::ForceScrew;
use crate::error::{Error, Result};
use crate::imaging;
use crate::region::{PerRegion, RegionClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Constant scan advance along the probe y axis (m/s).
    pub v_y: f64,
    /// Image-servo gain for nearby targets (1/s).
    pub k_im_near: f64,
    /// Reduced gain for far targets, preventing sudden velocities (1/s).
    pub k_im_far: f64,
    /// Lateral error at which the far gain takes over (m).
    pub near_far_threshold: f64,
    /// Exponential smoothing weight on the new command, in (0, 1].
    pub alpha: f64,
    /// Force PID gains.
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Force setpoint per region (N).
    pub f_ref: PerRegion<f64>,
    /// Pitch-compensation gain per region (rad/(s*N*m)).
    pub k_pitch: PerRegion<f64>,
    /// Per-component output clipping (m/s).
    pub v_lim: f64,
    /// Emergency-stop force (N).
    pub f_crit: f64,
    /// Anti-windup clamp on the force-error integral (N*s).
    pub integral_limit: f64,
    /// When false, the lumbar pitch gain applies everywhere (the fixed
    /// single-gain baseline).
    pub region_specific_pitch: bool,
    /// Descent speed during the approach phase (m/s).
    pub v_approach: f64,
    /// Initial lateral offset of the probe from the spine at the start
    /// pose, for robustness experiments (m).
    pub initial_lateral_offset: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            v_y: 0.004,
            k_im_near: 0.7,
            k_im_far: 0.2,
            near_far_threshold: 0.010,
            alpha: 0.7,
            k_p: 0.0003,
            k_i: 0.00003,
            k_d: 0.00003,
            f_ref: PerRegion {
                sacrum: 15.0,
                lumbar: 15.0,
                thoracic: 12.0,
            },
            k_pitch: PerRegion {
                sacrum: 0.03,
                lumbar: 0.03,
                thoracic: 0.07,
            },
            v_lim: 0.002,
            f_crit: 30.0,
            integral_limit: 50.0,
            region_specific_pitch: true,
            v_approach: 0.005,
            initial_lateral_offset: 0.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("control.{key}"), msg))
            }
        };
        check(self.v_lim > 0.0, "v_lim", "must be > 0")?;
        check(self.v_y > 0.0, "v_y", "must be > 0 for the scan to terminate")?;
        check(
            self.alpha > 0.0 && self.alpha <= 1.0,
            "alpha",
            "must be in (0, 1]",
        )?;
        check(
            self.k_im_far <= self.k_im_near,
            "k_im_far",
            "must not exceed k_im_near",
        )?;
        check(self.near_far_threshold > 0.0, "near_far_threshold", "must be > 0")?;
        check(self.integral_limit > 0.0, "integral_limit", "must be > 0")?;
        check(self.v_approach > 0.0, "v_approach", "must be > 0")?;
        for (name, v) in [
            ("f_ref.sacrum", self.f_ref.sacrum),
            ("f_ref.lumbar", self.f_ref.lumbar),
            ("f_ref.thoracic", self.f_ref.thoracic),
        ] {
            check(v > 0.0, name, "must be > 0")?;
        }
        check(self.f_crit > 0.0, "f_crit", "must be > 0")?;
        // Note: f_crit below the force setpoints stays legal on purpose;
        // such scenarios exercise the safety stop during approach.
        Ok(())
    }
}

/// 6-DoF velocity command in the TCP frame. Yaw and roll rates are held
/// at zero: no law drives them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityCommand {
    pub v_x: f64,
    pub v_y: f64,
    pub v_z: f64,
    pub r_x_rate: f64,
    pub r_y_rate: f64,
    pub r_z_rate: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand {
        v_x: 0.0,
        v_y: 0.0,
        v_z: 0.0,
        r_x_rate: 0.0,
        r_y_rate: 0.0,
        r_z_rate: 0.0,
    };
}

/// Controller memory across ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub prev_v_x: f64,
    pub integral_e: f64,
    pub prev_f: f64,
}

impl ControllerState {
    /// Seed the controller at scan start with the current contact force,
    /// so the derivative term sees no artificial step on the first tick.
    pub fn new(initial_force: f64) -> Self {
        ControllerState {
            prev_v_x: 0.0,
            integral_e: 0.0,
            prev_f: initial_force,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyDecision {
    Proceed,
    EmergencyStop,
}

/// Lateral visual-servo velocity from the estimated feature column.
///
/// delta_x is the estimate's offset from the image center in meters; the
/// gain switches to the far value beyond `near_far_threshold`, the output
/// is exponentially smoothed against the previous command and clipped.
pub fn lateral_velocity(state: &mut ControllerState, x_est_px: f64, cfg: &ControlConfig) -> f64 {
    let delta_x = imaging::pixels_to_meters(x_est_px - imaging::WIDTH_PX as f64 / 2.0);
    let k_im = if delta_x.abs() < cfg.near_far_threshold {
        cfg.k_im_near
    } else {
        cfg.k_im_far
    };
    let v = cfg.alpha * (-k_im * delta_x) + (1.0 - cfg.alpha) * state.prev_v_x;
    let v = v.clamp(-cfg.v_lim, cfg.v_lim);
    state.prev_v_x = v;
    v
}

/// Force-regulating beam velocity: PI on the error plus derivative on the
/// measured force, so setpoint steps inject no derivative kick. Positive
/// output pushes toward the skin.
pub fn force_velocity(
    state: &mut ControllerState,
    f_curr: f64,
    f_ref: f64,
    dt: f64,
    cfg: &ControlConfig,
) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::domain(format!("non-positive control period dt = {dt}")));
    }
    let e = f_ref - f_curr;
    state.integral_e = (state.integral_e + e * dt).clamp(-cfg.integral_limit, cfg.integral_limit);
    let df = (f_curr - state.prev_f) / dt;
    state.prev_f = f_curr;
    let v = cfg.k_p * e + cfg.k_i * state.integral_e - cfg.k_d * df;
    Ok(v.clamp(-cfg.v_lim, cfg.v_lim))
}

/// Classical-PID variant differentiating the error instead of the
/// measurement. Kept as the comparison baseline for the setpoint-step
/// regression; the scanner never uses it.
pub fn force_velocity_derivative_on_error(
    state: &mut ControllerState,
    prev_e: &mut Option<f64>,
    f_curr: f64,
    f_ref: f64,
    dt: f64,
    cfg: &ControlConfig,
) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::domain(format!("non-positive control period dt = {dt}")));
    }
    let e = f_ref - f_curr;
    state.integral_e = (state.integral_e + e * dt).clamp(-cfg.integral_limit, cfg.integral_limit);
    let de = prev_e.map(|p| (e - p) / dt).unwrap_or(0.0);
    *prev_e = Some(e);
    state.prev_f = f_curr;
    let v = cfg.k_p * e + cfg.k_i * state.integral_e + cfg.k_d * de;
    Ok(v.clamp(-cfg.v_lim, cfg.v_lim))
}

/// Pitch-rate command compensating the contact moment: r_x = -K_pitch * m_x.
pub fn pitch_rate(m_x: f64, k_pitch: f64) -> f64 {
    -k_pitch * m_x
}

/// Stop the scan once the normal force reaches the critical limit
/// (boundary inclusive).
pub fn safety_check(screw: &ForceScrew, f_crit: f64) -> SafetyDecision {
    if screw.f_z >= f_crit {
        SafetyDecision::EmergencyStop
    } else {
        SafetyDecision::Proceed
    }
}

/// Per-region force setpoint and pitch gain. With region-specific pitch
/// disabled, the lumbar-tuned gain applies everywhere.
pub fn region_settings(region: RegionClass, cfg: &ControlConfig) -> (f64, f64) {
    let f_ref = cfg.f_ref.get(region);
    let k_pitch = if cfg.region_specific_pitch {
        cfg.k_pitch.get(region)
    } else {
        cfg.k_pitch.lumbar
    };
    (f_ref, k_pitch)
}

/// Assemble the 6-DoF command; translation components are clipped and an
/// emergency stop zeroes everything.
pub fn compose_command(
    lateral: f64,
    advance: f64,
    normal: f64,
    pitch: f64,
    safety: SafetyDecision,
    cfg: &ControlConfig,
) -> VelocityCommand {
    if safety == SafetyDecision::EmergencyStop {
        return VelocityCommand::ZERO;
    }
    VelocityCommand {
        v_x: lateral.clamp(-cfg.v_lim, cfg.v_lim),
        v_y: advance,
        v_z: normal.clamp(-cfg.v_lim, cfg.v_lim),
        r_x_rate: pitch,
        r_y_rate: 0.0,
        r_z_rate: 0.0,
    }
}
