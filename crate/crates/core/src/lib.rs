//! Deterministic simulator and control library for autonomous
//! spine-following ultrasound scanning.
//!
//! The crate models the full closed loop of a robot-held ultrasound probe
//! sweeping a scoliotic back in the caudo-cranial direction:
//!
//! 1. [`phantom`] – parametric scoliotic spine and back surface with
//!    analytic ground truth for every downstream check.
//! 2. [`contact`] – spring contact model producing the force screw the
//!    probe senses.
//! 3. [`imaging`] – frame geometry, pixel/meter conversions and synthetic
//!    B-mode rendering with speckle.
//! 4. [`perception`] – heatmap-based spinous-process localization and
//!    spinal-region classification (matched filter behind the same 56x56
//!    heatmap interface a learned detector would use).
//! 5. [`tracking`] – scalar Kalman estimator bridging intervertebral gaps.
//! 6. [`control`] – lateral visual servo, PID force regulation with
//!    derivative-on-measurement, pitch compensation and safety limits.
//! 7. [`scanner`] – the 30 Hz scan loop with 10 Hz frame capture and full
//!    CSV logging.
//! 8. [`reconstruction`] – coronal image assembly, deviation statistics
//!    and deformity-angle measurement.
//! 9. [`scenario`] – JSON scenario configuration and end-to-end runs.
//!
//! Every run is a pure function of the scenario and its seed: identical
//! inputs produce byte-identical logs.

pub mod contact;
pub mod control;
pub mod error;
pub mod imaging;
pub mod perception;
pub mod phantom;
pub mod reconstruction;
pub mod region;
pub mod rng;
pub mod scanner;
pub mod scenario;
pub mod tracking;

pub use error::{Error, Result};
pub use region::{PerRegion, RegionClass};
