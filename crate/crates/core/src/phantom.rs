//! Parametric scoliotic spine and back-surface model.
//!
//! The lateral spine curve is a sinusoid (optionally plus a second
//! harmonic), the sagittal profile a single sine over the scan span, and
//! the back surface rounds off parabolically across the lateral axis.
//! Everything has a closed-form derivative, so the deformity angle the
//! pipeline must recover is known analytically.
//!
//! World frame: x lateral, y caudo-cranial along the spine, z up (away
//! from the back). All lengths in meters, angles in radians unless noted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{PerRegion, RegionClass};

/// Mid-scan stiffness change used to script safety-stop scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StiffnessSpike {
    /// Scan position at which the spike engages.
    pub from_y: f64,
    /// Multiplier applied to `skin_stiffness` from that position on.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomModel {
    /// Lateral amplitude A of the scoliotic curve.
    pub curve_amplitude: f64,
    /// Longitudinal wavelength L of the lateral curve.
    pub curve_length: f64,
    /// Scannable back extends over y in [0, scan_span].
    pub scan_span: f64,
    /// y positions ending the Sacrum and Lumbar regions.
    pub region_bounds: [f64; 2],
    /// Center-to-center vertebra spacing.
    pub vertebra_pitch: f64,
    /// Fraction of each pitch occupied by bone; the rest is gap.
    pub vertebra_fraction: f64,
    /// Spinous-process depth below the skin, per region.
    pub sp_depth: PerRegion<f64>,
    /// Amplitude of the kyphosis/lordosis height profile along y.
    pub sagittal_amplitude: f64,
    /// Curvature (1/m) of the back surface across x.
    pub lateral_rounding: f64,
    /// Linear contact spring constant (N/m).
    pub skin_stiffness: f64,
    /// Moment per meter of penetration per radian of pitch mismatch
    /// (N·m/(m·rad)); see the contact module.
    pub k_moment: f64,
    /// Optional second harmonic of the lateral curve.
    pub second_harmonic_amplitude: f64,
    pub second_harmonic_wavelength: f64,
    /// Optional scripted stiffness spike.
    pub stiffness_spike: Option<StiffnessSpike>,
}

impl Default for PhantomModel {
    fn default() -> Self {
        PhantomModel {
            curve_amplitude: 0.010,
            curve_length: 0.200,
            scan_span: 0.400,
            region_bounds: [0.060, 0.200],
            vertebra_pitch: 0.030,
            vertebra_fraction: 0.7,
            sp_depth: PerRegion {
                sacrum: 0.030,
                lumbar: 0.030,
                thoracic: 0.018,
            },
            sagittal_amplitude: 0.003,
            lateral_rounding: 30.0,
            skin_stiffness: 1000.0,
            k_moment: 300.0,
            second_harmonic_amplitude: 0.0,
            second_harmonic_wavelength: 0.100,
            stiffness_spike: None,
        }
    }
}

/// A spinous process found under the probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertebra {
    pub region: RegionClass,
    /// Spinous-process position in the world frame.
    pub world: [f64; 3],
}

impl PhantomModel {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("phantom.{key}"), msg))
            }
        };
        check(self.curve_amplitude >= 0.0, "curve_amplitude", "must be >= 0")?;
        check(self.curve_length > 0.0, "curve_length", "must be > 0")?;
        check(self.scan_span > 0.0, "scan_span", "must be > 0")?;
        check(
            self.vertebra_fraction > 0.0 && self.vertebra_fraction < 1.0,
            "vertebra_fraction",
            "must be in (0, 1)",
        )?;
        check(self.vertebra_pitch > 0.0, "vertebra_pitch", "must be > 0")?;
        check(
            self.region_bounds[0] > 0.0
                && self.region_bounds[0] < self.region_bounds[1]
                && self.region_bounds[1] < self.scan_span,
            "region_bounds",
            "must be strictly increasing and within (0, scan_span)",
        )?;
        for (region, depth) in [
            ("sacrum", self.sp_depth.sacrum),
            ("lumbar", self.sp_depth.lumbar),
            ("thoracic", self.sp_depth.thoracic),
        ] {
            check(
                depth > 0.0 && depth <= 0.060,
                &format!("sp_depth.{region}"),
                "must be positive and within the 0.06 m imaging depth",
            )?;
        }
        check(self.skin_stiffness > 0.0, "skin_stiffness", "must be > 0")?;
        check(self.k_moment >= 0.0, "k_moment", "must be >= 0")?;
        check(
            self.second_harmonic_amplitude == 0.0 || self.second_harmonic_wavelength > 0.0,
            "second_harmonic_wavelength",
            "must be > 0 when the second harmonic is enabled",
        )?;
        if let Some(spike) = &self.stiffness_spike {
            check(spike.factor > 0.0, "stiffness_spike.factor", "must be > 0")?;
        }
        Ok(())
    }

    fn check_span(&self, y: f64) -> Result<()> {
        if y < 0.0 || y > self.scan_span {
            return Err(Error::domain(format!(
                "y = {y} outside scan span [0, {}]",
                self.scan_span
            )));
        }
        Ok(())
    }

    /// Lateral spine offset s(y) = A·sin(2πy/L) (+ optional harmonic).
    pub fn spine_lateral_offset(&self, y: f64) -> Result<f64> {
        self.check_span(y)?;
        Ok(self.offset_unchecked(y))
    }

    pub(crate) fn offset_unchecked(&self, y: f64) -> f64 {
        let mut s = self.curve_amplitude * (2.0 * std::f64::consts::PI * y / self.curve_length).sin();
        if self.second_harmonic_amplitude != 0.0 {
            s += self.second_harmonic_amplitude
                * (2.0 * std::f64::consts::PI * y / self.second_harmonic_wavelength).sin();
        }
        s
    }

    /// Analytic ds/dy.
    pub fn spine_lateral_slope(&self, y: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        let mut d = self.curve_amplitude * tau / self.curve_length * (tau * y / self.curve_length).cos();
        if self.second_harmonic_amplitude != 0.0 {
            d += self.second_harmonic_amplitude * tau / self.second_harmonic_wavelength
                * (tau * y / self.second_harmonic_wavelength).cos();
        }
        d
    }

    /// Skin height z(x, y) above the reference plane.
    pub fn surface_height(&self, x: f64, y: f64) -> Result<f64> {
        self.check_span(y)?;
        Ok(self.surface_unchecked(x, y))
    }

    pub(crate) fn surface_unchecked(&self, x: f64, y: f64) -> f64 {
        let sag = self.sagittal_amplitude * (2.0 * std::f64::consts::PI * y / self.scan_span).sin();
        let dx = x - self.offset_unchecked(y);
        sag - 0.5 * self.lateral_rounding * dx * dx
    }

    /// Analytic sagittal slope ∂z/∂y at (x, y).
    pub fn surface_slope_y(&self, x: f64, y: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        let sag = self.sagittal_amplitude * tau / self.scan_span * (tau * y / self.scan_span).cos();
        let dx = x - self.offset_unchecked(y);
        sag + self.lateral_rounding * dx * self.spine_lateral_slope(y)
    }

    /// Spinal region at a scan position, from the y thresholds.
    pub fn region_of(&self, y: f64) -> RegionClass {
        if y < self.region_bounds[0] {
            RegionClass::Sacrum
        } else if y < self.region_bounds[1] {
            RegionClass::Lumbar
        } else {
            RegionClass::Thoracic
        }
    }

    /// The spinous process under position y, or `None` inside an
    /// intervertebral gap. Bone occupies the first `vertebra_fraction`
    /// of every pitch period.
    pub fn vertebra_at(&self, y: f64) -> Result<Option<Vertebra>> {
        self.check_span(y)?;
        let phase = (y.rem_euclid(self.vertebra_pitch)) / self.vertebra_pitch;
        if phase >= self.vertebra_fraction {
            return Ok(None);
        }
        let region = self.region_of(y);
        let sx = self.offset_unchecked(y);
        let sz = self.surface_unchecked(sx, y) - self.sp_depth.get(region);
        Ok(Some(Vertebra {
            region,
            world: [sx, y, sz],
        }))
    }

    /// Contact stiffness at y, including any scripted spike.
    pub fn effective_stiffness(&self, y: f64) -> f64 {
        match &self.stiffness_spike {
            Some(s) if y >= s.from_y => self.skin_stiffness * s.factor,
            _ => self.skin_stiffness,
        }
    }

    /// Analytic deformity angle in degrees: θ_max − θ_min over the span,
    /// θ(y) = atan(ds/dy). The oracle every measured angle is checked
    /// against.
    pub fn ground_truth_angle(&self) -> f64 {
        let n = 8192;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=n {
            let y = self.scan_span * i as f64 / n as f64;
            let theta = self.spine_lateral_slope(y).atan();
            lo = lo.min(theta);
            hi = hi.max(theta);
        }
        (hi - lo).to_degrees()
    }
}
