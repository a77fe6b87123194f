//! Spring contact between the probe tip and the phantom surface.
//!
//! The normal force follows Hooke's law on the penetration depth, and the
//! contact moment about the probe's x axis grows with both penetration
//! and the pitch mismatch between the probe and the local sagittal slope,
//! vanishing out of contact and at alignment. Sign convention: a probe
//! pitched past the surface slope feels a positive m_x, which the law
//! r_x_rate = -K_pitch * m_x turns back toward alignment.

use crate::phantom::PhantomModel;
use crate::scanner::ProbePose;

/// Contact forces and moments at the probe tip, TCP frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceScrew {
    pub f_x: f64,
    pub f_y: f64,
    pub f_z: f64,
    pub m_x: f64,
    pub m_y: f64,
    pub m_z: f64,
}

impl ForceScrew {
    pub const ZERO: ForceScrew = ForceScrew {
        f_x: 0.0,
        f_y: 0.0,
        f_z: 0.0,
        m_x: 0.0,
        m_y: 0.0,
        m_z: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        *self == ForceScrew::ZERO
    }
}

/// Force screw for a probe pose against the phantom surface.
///
/// Out-of-span positions and probes above the skin produce the zero
/// screw. Lateral friction is not modeled; no control law consumes it.
pub fn compute_force_screw(phantom: &PhantomModel, pose: &ProbePose) -> ForceScrew {
    if pose.y < 0.0 || pose.y > phantom.scan_span {
        return ForceScrew::ZERO;
    }
    let penetration = phantom.surface_unchecked(pose.x, pose.y) - pose.z;
    if penetration <= 0.0 {
        return ForceScrew::ZERO;
    }
    let f_z = phantom.effective_stiffness(pose.y) * penetration;
    let slope = phantom.surface_slope_y(pose.x, pose.y).atan();
    let pitch_mismatch = pose.r_x - slope;
    let m_x = phantom.k_moment * penetration * pitch_mismatch;
    ForceScrew {
        f_z,
        m_x,
        ..ForceScrew::ZERO
    }
}
