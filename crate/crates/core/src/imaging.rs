//! Frame geometry, world/image transforms and synthetic B-mode rendering.
//!
//! Image frame: x runs along the probe aperture (width), y along the beam
//! (penetration depth). The probe images an 80 mm aperture over 640 px and
//! 60 mm depth over 480 px, so both axes share one scale of 0.125 mm/px.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomModel;
use crate::region::RegionClass;
use crate::scanner::ProbePose;

pub const WIDTH_PX: usize = 640;
pub const HEIGHT_PX: usize = 480;
pub const APERTURE_M: f64 = 0.080;
pub const DEPTH_M: f64 = 0.060;
/// Meters per pixel, identical on both axes (0.080/640 = 0.060/480).
pub const M_PER_PX: f64 = APERTURE_M / WIDTH_PX as f64;

/// Pixel offset -> meters: dx_px * aperture / width.
pub fn pixels_to_meters(dx_px: f64) -> f64 {
    dx_px * M_PER_PX
}

pub fn meters_to_pixels(dx_m: f64) -> f64 {
    dx_m / M_PER_PX
}

/// Project a world point into image pixels for the given probe pose.
///
/// The image x axis is parallel to the world x axis; the beam leaves the
/// probe face straight down at `r_x = 0` and tilts toward +y for positive
/// pitch. Out-of-frame coordinates are returned unclamped; points behind
/// the probe face map to negative y_px.
pub fn world_to_image(pose: &ProbePose, p: [f64; 3]) -> (f64, f64) {
    let lateral = p[0] - pose.x;
    let (sin_rx, cos_rx) = pose.r_x.sin_cos();
    let depth = (p[1] - pose.y) * sin_rx - (p[2] - pose.z) * cos_rx;
    (
        WIDTH_PX as f64 / 2.0 + lateral / M_PER_PX,
        depth / M_PER_PX,
    )
}

/// Inverse of [`world_to_image`] restricted to the image plane.
pub fn image_to_world(pose: &ProbePose, x_px: f64, y_px: f64) -> [f64; 3] {
    let lateral = (x_px - WIDTH_PX as f64 / 2.0) * M_PER_PX;
    let depth = y_px * M_PER_PX;
    let (sin_rx, cos_rx) = pose.r_x.sin_cos();
    [
        pose.x + lateral,
        pose.y + depth * sin_rx,
        pose.z - depth * cos_rx,
    ]
}

/// Synthetic B-mode frame appearance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Multiplicative speckle strength sigma_s.
    pub speckle_sigma: f64,
    /// Constant additive intensity floor.
    pub floor_noise: f64,
    /// Tissue background level while in contact.
    pub background: f64,
    /// Background level when acoustic contact is lost.
    pub no_contact_background: f64,
    /// Peak intensity of the spinous-process feature.
    pub blob_peak: f64,
    /// Gaussian footprint of a lumbar/thoracic spinous process (pixels).
    pub blob_sigma_x_px: f64,
    pub blob_sigma_y_px: f64,
    /// Lateral sigma of the wide sacrum band: FWHM 160 px / 2.355.
    pub sacrum_sigma_x_px: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            speckle_sigma: 0.3,
            floor_noise: 0.02,
            background: 0.15,
            no_contact_background: 0.05,
            blob_peak: 0.9,
            blob_sigma_x_px: 12.0,
            blob_sigma_y_px: 6.0,
            sacrum_sigma_x_px: 68.0,
        }
    }
}

/// One captured B-mode frame with the pose it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct UsFrame {
    /// Row-major intensities in [0, 1], WIDTH_PX x HEIGHT_PX.
    pub intensities: Vec<f32>,
    /// Capture time on the simulation clock.
    pub t: f64,
    /// Probe pose at the capture instant.
    pub pose: ProbePose,
    pub frame_id: u64,
}

impl UsFrame {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.intensities[y * WIDTH_PX + x]
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.intensities[y * WIDTH_PX..(y + 1) * WIDTH_PX]
    }

    /// Location of the global intensity maximum (first occurrence).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0usize, 0usize);
        let mut best_v = f32::NEG_INFINITY;
        for y in 0..HEIGHT_PX {
            for x in 0..WIDTH_PX {
                let v = self.get(x, y);
                if v > best_v {
                    best_v = v;
                    best = (x, y);
                }
            }
        }
        best
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(WIDTH_PX, HEIGHT_PX, self.intensities.iter().map(|&v| quantize(v)))
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (P5), maxval 255, row-major.
pub fn encode_pgm(width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |what: &str| Error::domain(format!("malformed PGM: {what}"));
    // header: magic, width, height, maxval, single whitespace, then raster
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(&bytes[start..pos]);
    }
    if fields.len() < 4 || fields[0] != b"P5" {
        return Err(bad("expected P5 header"));
    }
    let parse = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))
    };
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let raster = &bytes[pos..];
    if raster.len() != w * h {
        return Err(bad("raster size mismatch"));
    }
    Ok((w, h, raster.to_vec()))
}

/// Render the synthetic B-mode frame for a probe pose.
///
/// In contact with a vertebra under the beam, a bright feature appears at
/// the projected spinous-process position: a wide band in the sacrum and
/// an elliptical blob elsewhere. Gap positions show background only, and
/// a probe out of contact sees reduced-intensity noise. Speckle is
/// multiplicative: I' = clamp(I*(1 + sigma_s*n) + floor, 0, 1).
pub fn render_frame(
    phantom: &PhantomModel,
    pose: &ProbePose,
    cfg: &RenderConfig,
    frame_id: u64,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> UsFrame {
    let in_span = pose.y >= 0.0 && pose.y <= phantom.scan_span;
    let penetration = if in_span {
        phantom.surface_unchecked(pose.x, pose.y) - pose.z
    } else {
        0.0
    };
    let in_contact = penetration > 0.0;

    let base = if in_contact {
        cfg.background
    } else {
        cfg.no_contact_background
    } as f32;
    let mut img = vec![base; WIDTH_PX * HEIGHT_PX];

    if in_contact {
        if let Ok(Some(v)) = phantom.vertebra_at(pose.y) {
            let (cx, cy) = world_to_image(pose, v.world);
            let sigma_x = match v.region {
                RegionClass::Sacrum => cfg.sacrum_sigma_x_px,
                _ => cfg.blob_sigma_x_px,
            };
            let sigma_y = cfg.blob_sigma_y_px;
            let x_lo = ((cx - 4.0 * sigma_x).floor().max(0.0)) as usize;
            let x_hi = ((cx + 4.0 * sigma_x).ceil().min(WIDTH_PX as f64 - 1.0)) as usize;
            let y_lo = ((cy - 4.0 * sigma_y).floor().max(0.0)) as usize;
            let y_hi = ((cy + 4.0 * sigma_y).ceil().min(HEIGHT_PX as f64 - 1.0)) as usize;
            if x_lo <= x_hi && y_lo <= y_hi && cy + 4.0 * sigma_y >= 0.0 {
                let gain = cfg.blob_peak - cfg.background;
                let is_sacrum = v.region == RegionClass::Sacrum;
                for y in y_lo..=y_hi {
                    let dy = (y as f64 - cy) / sigma_y;
                    let gy = (-0.5 * dy * dy).exp();
                    for x in x_lo..=x_hi {
                        let dx = (x as f64 - cx) / sigma_x;
                        let mut g = (-0.5 * dx * dx).exp();
                        if is_sacrum {
                            // the sacral crest rises above the wide band,
                            // giving the midline a localizable peak
                            let dc = (x as f64 - cx) / cfg.blob_sigma_x_px;
                            g = 0.8 * g + 0.2 * (-0.5 * dc * dc).exp();
                        }
                        img[y * WIDTH_PX + x] += (gain * g * gy) as f32;
                    }
                }
            }
        }
    }

    let floor = cfg.floor_noise as f32;
    if cfg.speckle_sigma > 0.0 {
        let sigma = cfg.speckle_sigma as f32;
        for v in img.iter_mut() {
            let n: f32 = rng.sample(StandardNormal);
            *v = (*v * (1.0 + sigma * n) + floor).clamp(0.0, 1.0);
        }
    } else {
        for v in img.iter_mut() {
            *v = (*v + floor).clamp(0.0, 1.0);
        }
    }

    UsFrame {
        intensities: img,
        t,
        pose: *pose,
        frame_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_indexed;

    fn pose_at(x: f64, y: f64, z: f64) -> ProbePose {
        ProbePose {
            x,
            y,
            z,
            r_x: 0.0,
            r_y: 0.0,
            r_z: 0.0,
        }
    }

    #[test]
    fn pixel_scale_identical_on_both_axes() {
        assert_eq!(APERTURE_M / WIDTH_PX as f64, DEPTH_M / HEIGHT_PX as f64);
        assert_eq!(M_PER_PX, 1.25e-4);
    }

    #[test]
    fn pixels_to_meters_examples() {
        assert_eq!(pixels_to_meters(0.0), 0.0);
        // 8 px = 1.0 mm, 52 px = 6.5 mm
        assert!((pixels_to_meters(8.0) - 0.0010).abs() < 1e-15);
        assert!((pixels_to_meters(52.0) - 0.0065).abs() < 1e-15);
    }

    #[test]
    fn pixels_to_meters_is_linear_to_rounding() {
        // f64 multiplication does not distribute exactly over addition;
        // the deviation is bounded by the rounding of the two products.
        for a in (-640i64..=640).step_by(3) {
            for b in (-640i64..=640).step_by(7) {
                let lhs = pixels_to_meters((a + b) as f64);
                let rhs = pixels_to_meters(a as f64) + pixels_to_meters(b as f64);
                let bound = 2.0 * f64::EPSILON * (a.abs() + b.abs()) as f64 * M_PER_PX;
                assert!(
                    (lhs - rhs).abs() <= bound,
                    "a={a} b={b}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn point_at_probe_face_maps_to_origin_column() {
        let pose = pose_at(0.01, 0.2, 0.05);
        let (x, y) = world_to_image(&pose, [0.01, 0.2, 0.05]);
        assert_eq!((x, y), (320.0, 0.0));
    }

    #[test]
    fn lateral_offset_maps_to_image_width() {
        let pose = pose_at(0.0, 0.1, 0.02);
        let (x, _) = world_to_image(&pose, [0.040, 0.1, 0.02]);
        assert!((x - 640.0).abs() < 1e-9);
    }

    #[test]
    fn depth_maps_down_the_image() {
        let pose = pose_at(0.0, 0.1, 0.05);
        let (x, y) = world_to_image(&pose, [0.0, 0.1, 0.05 - 0.030]);
        assert!((x - 320.0).abs() < 1e-9);
        assert!((y - 240.0).abs() < 1e-9);
    }

    #[test]
    fn image_world_roundtrip_with_pitch() {
        let mut pose = pose_at(0.004, 0.17, 0.021);
        pose.r_x = 0.22;
        for (px, py) in [(0.0, 0.0), (320.0, 240.0), (17.5, 404.25), (639.0, 1.0)] {
            let p = image_to_world(&pose, px, py);
            let (qx, qy) = world_to_image(&pose, p);
            assert!((qx - px).abs() < 1e-9 && (qy - py).abs() < 1e-9);
            let p2 = image_to_world(&pose, qx, qy);
            for i in 0..3 {
                assert!((p2[i] - p[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_free_gap_frame_is_uniform() {
        let phantom = PhantomModel::default();
        let mut cfg = RenderConfig::default();
        cfg.speckle_sigma = 0.0;
        // inside a gap: phase 0.8 of the pitch period
        let y = 0.8 * phantom.vertebra_pitch;
        assert!(phantom.vertebra_at(y).unwrap().is_none());
        let surf = phantom.surface_height(0.0, y).unwrap();
        let pose = pose_at(0.0, y, surf - 0.015);
        let mut rng = substream_indexed(0, "renderer", 0);
        let frame = render_frame(&phantom, &pose, &cfg, 0, 0.0, &mut rng);
        let expect = (cfg.background + cfg.floor_noise) as f32;
        assert!(frame.intensities.iter().all(|&v| v == expect));
    }

    #[test]
    fn noise_free_blob_peaks_at_projected_center() {
        let mut phantom = PhantomModel::default();
        phantom.curve_amplitude = 0.0;
        phantom.sp_depth.lumbar = 0.0315;
        let mut cfg = RenderConfig::default();
        cfg.speckle_sigma = 0.0;
        let y = 0.075; // lumbar vertebra
        let surf = phantom.surface_height(0.0, y).unwrap();
        let pose = pose_at(0.0, y, surf - 0.0015);
        let mut rng = substream_indexed(0, "renderer", 0);
        let frame = render_frame(&phantom, &pose, &cfg, 0, 0.0, &mut rng);
        let (ax, ay) = frame.argmax();
        assert_eq!((ax, ay), (320, 240));
        // unique maximum
        let peak = frame.get(ax, ay);
        let n_at_peak = frame.intensities.iter().filter(|&&v| v == peak).count();
        assert_eq!(n_at_peak, 1);
    }

    #[test]
    fn argmax_matches_world_to_image_within_one_pixel() {
        let phantom = PhantomModel::default();
        let mut cfg = RenderConfig::default();
        cfg.speckle_sigma = 0.0;
        for y in [0.031, 0.075, 0.241] {
            let v = phantom.vertebra_at(y).unwrap().expect("vertebra");
            let sx = phantom.spine_lateral_offset(y).unwrap();
            let surf = phantom.surface_height(sx, y).unwrap();
            let pose = pose_at(sx + 0.003, y, surf - 0.012);
            let (cx, cy) = world_to_image(&pose, v.world);
            let mut rng = substream_indexed(0, "renderer", 0);
            let frame = render_frame(&phantom, &pose, &cfg, 0, 0.0, &mut rng);
            let (ax, ay) = frame.argmax();
            assert!((ax as f64 - cx).abs() <= 1.0, "x {ax} vs {cx}");
            assert!((ay as f64 - cy).abs() <= 1.0, "y {ay} vs {cy}");
        }
    }

    #[test]
    fn same_seed_renders_identical_frames() {
        let phantom = PhantomModel::default();
        let cfg = RenderConfig::default();
        let surf = phantom.surface_height(0.0, 0.075).unwrap();
        let pose = pose_at(0.0, 0.075, surf - 0.015);
        let a = render_frame(&phantom, &pose, &cfg, 3, 0.1, &mut substream_indexed(42, "renderer", 3));
        let b = render_frame(&phantom, &pose, &cfg, 3, 0.1, &mut substream_indexed(42, "renderer", 3));
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_contact_renders_reduced_background() {
        let phantom = PhantomModel::default();
        let mut cfg = RenderConfig::default();
        cfg.speckle_sigma = 0.0;
        let surf = phantom.surface_height(0.0, 0.075).unwrap();
        let pose = pose_at(0.0, 0.075, surf + 0.005);
        let mut rng = substream_indexed(0, "renderer", 0);
        let frame = render_frame(&phantom, &pose, &cfg, 0, 0.0, &mut rng);
        let expect = (cfg.no_contact_background + cfg.floor_noise) as f32;
        assert!(frame.intensities.iter().all(|&v| v == expect));
    }

    #[test]
    fn pgm_roundtrip() {
        let phantom = PhantomModel::default();
        let cfg = RenderConfig::default();
        let surf = phantom.surface_height(0.0, 0.075).unwrap();
        let pose = pose_at(0.0, 0.075, surf - 0.015);
        let mut rng = substream_indexed(1, "renderer", 0);
        let frame = render_frame(&phantom, &pose, &cfg, 0, 0.0, &mut rng);
        let bytes = frame.to_pgm();
        let (w, h, raster) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (WIDTH_PX, HEIGHT_PX));
        assert_eq!(raster.len(), WIDTH_PX * HEIGHT_PX);
        assert_eq!(raster[240 * WIDTH_PX + 320], quantize(frame.get(320, 240)));
    }

    #[test]
    fn intensities_stay_in_unit_range() {
        let phantom = PhantomModel::default();
        let mut cfg = RenderConfig::default();
        cfg.speckle_sigma = 0.8;
        let surf = phantom.surface_height(0.0, 0.075).unwrap();
        let pose = pose_at(0.0, 0.075, surf - 0.015);
        let mut rng = substream_indexed(9, "renderer", 0);
        let frame = render_frame(&phantom, &pose, &cfg, 0, 0.0, &mut rng);
        assert!(frame.intensities.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
