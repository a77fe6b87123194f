//! Spinous-process localization and spinal-region classification.
//!
//! The detector keeps the exact interface of a heatmap network: it turns a
//! 640x480 frame into a 56x56 confidence heatmap, takes the argmax,
//! refines to subpixel, rescales to frame pixels and reports a confidence
//! in [0, 1] with a 50% validity threshold. Behind the interface sits a
//! matched filter: normalized cross-correlation against a Gaussian
//! template on the area-averaged frame. A learned detector could be
//! dropped in behind the same signatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{RenderConfig, UsFrame, HEIGHT_PX, WIDTH_PX};
use crate::region::{PerRegion, RegionClass};

/// Heatmap side length.
pub const HEATMAP_CELLS: usize = 56;
const HM: usize = HEATMAP_CELLS;
/// Frame pixels per heatmap cell along x (640/56) and y (480/56).
pub const CELL_TO_PX_X: f64 = WIDTH_PX as f64 / HM as f64;
pub const CELL_TO_PX_Y: f64 = HEIGHT_PX as f64 / HM as f64;

/// 56x56 grid of per-cell spinous-process probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Row-major values in [0, 1].
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros() -> Self {
        Heatmap {
            values: vec![0.0; HM * HM],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * HM + col]
    }

    fn set(&mut self, col: usize, row: usize, v: f64) {
        self.values[row * HM + col] = v;
    }

    /// (col, row) of the maximum value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % HM, best / HM)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        crate::imaging::encode_pgm(
            HM,
            HM,
            self.values
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        )
    }
}

/// A localized spinous process at frame scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x_px: f64,
    pub y_px: f64,
    pub confidence: f64,
}

/// Region classification with normalized class probabilities
/// (Sacrum, Lumbar, Thoracic).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub class: RegionClass,
    pub probs: [f64; 3],
    /// False when no feature stood out and the probabilities fell back to
    /// maximum entropy.
    pub feature_found: bool,
}

/// Canonical (depth_px, width_px) appearance of a region's feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionPrototype {
    pub depth_px: f64,
    pub width_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    /// Synthetic frame appearance.
    pub render: RenderConfig,
    /// Matched-filter template width in heatmap cells.
    pub template_sigma: f64,
    /// Detections below this confidence are rejected as gaps.
    pub confidence_threshold: f64,
    /// Training-target Gaussian width in heatmap cells.
    pub target_sigma: f64,
    /// Patch contrast (L2 of the mean-removed patch) at which confidence
    /// reaches full scale; flat patches are confidently "no feature".
    pub min_contrast: f64,
    /// PCK distance threshold at frame scale.
    pub pck_threshold_px: f64,
    /// Heatmap-loss weight C in the multi-task loss.
    pub loss_c: f64,
    /// Classifier prototypes and kernel scales.
    pub prototypes: PerRegion<RegionPrototype>,
    pub prototype_depth_scale: f64,
    pub prototype_width_scale: f64,
    /// Marginal peak must exceed this many robust sigmas to classify.
    pub classifier_gate_sigmas: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            render: RenderConfig::default(),
            template_sigma: 2.0,
            confidence_threshold: 0.5,
            target_sigma: 2.0,
            min_contrast: 0.25,
            pck_threshold_px: 20.0,
            loss_c: 1500.0,
            // Depths assume the steady-state penetration at each region's
            // force setpoint; widths follow the renderer footprints.
            prototypes: PerRegion {
                sacrum: RegionPrototype {
                    depth_px: 120.0,
                    width_px: 160.0,
                },
                lumbar: RegionPrototype {
                    depth_px: 120.0,
                    width_px: 28.0,
                },
                thoracic: RegionPrototype {
                    depth_px: 48.0,
                    width_px: 28.0,
                },
            },
            prototype_depth_scale: 30.0,
            prototype_width_scale: 40.0,
            classifier_gate_sigmas: 6.0,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("perception.{key}"), msg))
            }
        };
        check(self.template_sigma > 0.0, "template_sigma", "must be > 0")?;
        check(
            (0.0..=1.0).contains(&self.confidence_threshold),
            "confidence_threshold",
            "must be in [0, 1]",
        )?;
        check(self.target_sigma > 0.0, "target_sigma", "must be > 0")?;
        check(self.min_contrast > 0.0, "min_contrast", "must be > 0")?;
        check(self.pck_threshold_px > 0.0, "pck_threshold_px", "must be > 0")?;
        check(self.render.speckle_sigma >= 0.0, "render.speckle_sigma", "must be >= 0")?;
        Ok(())
    }
}

/// Training-target heatmap: a 2D Gaussian around the labeled center,
/// downscaled from frame pixels to heatmap cells and normalized so the
/// cell nearest the center holds exactly 1.
pub fn gaussian_target(center_px: (f64, f64), sigma: f64) -> Result<Heatmap> {
    let (cx, cy) = center_px;
    if !(0.0..WIDTH_PX as f64).contains(&cx) || !(0.0..HEIGHT_PX as f64).contains(&cy) {
        return Err(Error::domain(format!(
            "target center ({cx}, {cy}) outside the {WIDTH_PX}x{HEIGHT_PX} frame"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::domain("target sigma must be > 0".to_string()));
    }
    let ci = cx / CELL_TO_PX_X;
    let cj = cy / CELL_TO_PX_Y;
    let mut hm = Heatmap::zeros();
    let mut max = 0.0f64;
    for j in 0..HM {
        for i in 0..HM {
            let di = i as f64 - ci;
            let dj = j as f64 - cj;
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            max = max.max(v);
            hm.set(i, j, v);
        }
    }
    for v in hm.values.iter_mut() {
        *v /= max;
    }
    Ok(hm)
}

/// Full detector output: the confidence heatmap, its best value, and the
/// thresholded detection.
#[derive(Debug, Clone)]
pub struct DetectorOutput {
    pub heatmap: Heatmap,
    pub best_confidence: f64,
    pub detection: Option<Detection>,
}

/// Area-average the frame onto the 56x56 grid.
fn downsample(frame: &UsFrame) -> Vec<f64> {
    let mut sums = vec![0.0f64; HM * HM];
    let mut counts = vec![0u32; HM * HM];
    for y in 0..HEIGHT_PX {
        let row = frame.row(y);
        let cj = y * HM / HEIGHT_PX;
        for (x, &v) in row.iter().enumerate() {
            let ci = x * HM / WIDTH_PX;
            sums[cj * HM + ci] += v as f64;
            counts[cj * HM + ci] += 1;
        }
    }
    for (s, &c) in sums.iter_mut().zip(counts.iter()) {
        *s /= c as f64;
    }
    sums
}

fn template(sigma: f64) -> (usize, Vec<f64>) {
    let radius = ((3.0 * sigma).ceil() as usize).clamp(2, 13);
    let side = 2 * radius + 1;
    let mut t = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            let di = i as f64 - radius as f64;
            let dj = j as f64 - radius as f64;
            t.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    for v in t.iter_mut() {
        *v -= mean;
    }
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in t.iter_mut() {
        *v /= norm;
    }
    (radius, t)
}

/// Locate the spinous process in a frame, or report a gap.
///
/// Confidence is the normalized cross-correlation mapped from [-1, 1] to
/// [0, 1] and scaled by a contrast gate: patches with less structure than
/// `min_contrast` cannot claim a feature, which is what rejects pure-noise
/// gap frames below the 50% threshold.
pub fn detect(frame: &UsFrame, cfg: &PerceptionConfig) -> Option<Detection> {
    detect_full(frame, cfg).detection
}

pub fn detect_full(frame: &UsFrame, cfg: &PerceptionConfig) -> DetectorOutput {
    let grid = downsample(frame);
    let (radius, tmpl) = template(cfg.template_sigma);
    let side = 2 * radius + 1;

    // pad by edge replication so features near the image borders (e.g.
    // shallow thoracic processes) still get full template support
    let padded_side = HM + 2 * radius;
    let mut padded = vec![0.0f64; padded_side * padded_side];
    for j in 0..padded_side {
        let src_j = j.saturating_sub(radius).min(HM - 1);
        for i in 0..padded_side {
            let src_i = i.saturating_sub(radius).min(HM - 1);
            padded[j * padded_side + i] = grid[src_j * HM + src_i];
        }
    }

    let mut heatmap = Heatmap::zeros();
    let mut best = (0usize, 0usize, -1.0f64);
    for cj in 0..HM {
        for ci in 0..HM {
            let mut sum = 0.0;
            for j in 0..side {
                let row = (cj + j) * padded_side + ci;
                sum += padded[row..row + side].iter().sum::<f64>();
            }
            let n = (side * side) as f64;
            let mean = sum / n;
            let mut dot = 0.0;
            let mut energy = 0.0;
            for j in 0..side {
                let row = (cj + j) * padded_side + ci;
                for i in 0..side {
                    let v = padded[row + i] - mean;
                    dot += tmpl[j * side + i] * v;
                    energy += v * v;
                }
            }
            let contrast = energy.sqrt();
            let ncc = if contrast > 1e-12 { dot / contrast } else { 0.0 };
            let gate = (contrast / cfg.min_contrast).min(1.0);
            let conf = (gate * (ncc + 1.0) / 2.0).clamp(0.0, 1.0);
            heatmap.set(ci, cj, conf);
            if conf > best.2 {
                best = (ci, cj, conf);
            }
        }
    }

    let (bi, bj, best_conf) = best;
    let detection = if best_conf >= cfg.confidence_threshold && best_conf > 0.0 {
        // subpixel refinement: weighted centroid over the 3x3
        // neighborhood, zero-referenced at the neighborhood minimum
        let i_lo = bi.saturating_sub(1);
        let i_hi = (bi + 1).min(HM - 1);
        let j_lo = bj.saturating_sub(1);
        let j_hi = (bj + 1).min(HM - 1);
        let mut lo = f64::INFINITY;
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                lo = lo.min(heatmap.get(i, j));
            }
        }
        let (mut wsum, mut isum, mut jsum) = (0.0, 0.0, 0.0);
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                // squared contrast weights keep the centroid nearly
                // linear in the subcell phase of the wide NCC peak
                let w = (heatmap.get(i, j) - lo).powi(2);
                wsum += w;
                isum += w * i as f64;
                jsum += w * j as f64;
            }
        }
        let (ci, cj) = if wsum > 0.0 {
            (isum / wsum, jsum / wsum)
        } else {
            (bi as f64, bj as f64)
        };
        // cell k averages the pixel block [k, k+1) in cell units, so its
        // sample point sits at k + 0.5 when mapping back to pixels
        Some(Detection {
            x_px: ((ci + 0.5) * CELL_TO_PX_X).clamp(0.0, WIDTH_PX as f64 - 1e-9),
            y_px: ((cj + 0.5) * CELL_TO_PX_Y).clamp(0.0, HEIGHT_PX as f64 - 1e-9),
            confidence: best_conf,
        })
    } else {
        None
    };

    DetectorOutput {
        heatmap,
        best_confidence: best_conf.max(0.0),
        detection,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

/// Centered box filter with edge clamping.
fn box_smooth(values: &[f64], radius: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Classify the spinal region from the dominant structure's depth and
/// lateral width, scored against per-region prototypes. Frames without a
/// detectable feature fall back to maximum-entropy probabilities.
pub fn classify_region(frame: &UsFrame, cfg: &PerceptionConfig) -> Classification {
    // marginal profiles, smoothed so speckle cannot break the half-max
    // walk below
    let mut row_marg = vec![0.0f64; HEIGHT_PX];
    let mut col_marg = vec![0.0f64; WIDTH_PX];
    for y in 0..HEIGHT_PX {
        let row = frame.row(y);
        let mut acc = 0.0f64;
        for (x, &v) in row.iter().enumerate() {
            acc += v as f64;
            col_marg[x] += v as f64;
        }
        row_marg[y] = acc / WIDTH_PX as f64;
    }
    for v in col_marg.iter_mut() {
        *v /= HEIGHT_PX as f64;
    }
    let row_marg = box_smooth(&row_marg, 2);
    let col_marg = box_smooth(&col_marg, 4);

    let row_base = median(&mut row_marg.clone());
    let col_base = median(&mut col_marg.clone());

    // robust noise scale of the row profile
    let mut devs: Vec<f64> = row_marg.iter().map(|v| (v - row_base).abs()).collect();
    let noise = 1.4826 * median(&mut devs) + 1e-12;

    let (depth_px, row_peak) = row_marg
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, v - row_base))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();

    let uniform = Classification {
        class: RegionClass::Sacrum,
        probs: [1.0 / 3.0; 3],
        feature_found: false,
    };
    if row_peak < cfg.classifier_gate_sigmas * noise {
        return uniform;
    }

    // FWHM of the column profile around its peak
    let (peak_col, col_peak) = col_marg
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, v - col_base))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if col_peak <= 0.0 {
        return uniform;
    }
    let half = col_peak / 2.0;
    let mut left = peak_col;
    while left > 0 && col_marg[left - 1] - col_base >= half {
        left -= 1;
    }
    let mut right = peak_col;
    while right + 1 < WIDTH_PX && col_marg[right + 1] - col_base >= half {
        right += 1;
    }
    let width_px = (right - left + 1) as f64;

    let mut scores = [0.0f64; 3];
    for region in RegionClass::ALL {
        let proto = cfg.prototypes.get(region);
        let dd = (depth_px as f64 - proto.depth_px) / cfg.prototype_depth_scale;
        let dw = (width_px - proto.width_px) / cfg.prototype_width_scale;
        scores[region.index()] = (-0.5 * (dd * dd + dw * dw)).exp();
    }
    let total: f64 = scores.iter().sum();
    let probs = [scores[0] / total, scores[1] / total, scores[2] / total];
    let class = RegionClass::ALL
        .into_iter()
        .max_by(|a, b| probs[a.index()].total_cmp(&probs[b.index()]))
        .unwrap();
    Classification {
        class,
        probs,
        feature_found: true,
    }
}

/// Percentage of correct keypoints: fraction of predictions within
/// `dist_threshold_px` of their targets.
pub fn pck_accuracy(
    predictions: &[(f64, f64)],
    targets: &[(f64, f64)],
    dist_threshold_px: f64,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::domain("pck_accuracy on empty lists".to_string()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::domain(format!(
            "pck_accuracy length mismatch: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| {
            let dx = p.0 - t.0;
            let dy = p.1 - t.1;
            (dx * dx + dy * dy).sqrt() <= dist_threshold_px
        })
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Combined training loss: CrossEntropy(classification) + C * MSE(heatmaps).
pub fn multitask_loss(
    pred_hm: &Heatmap,
    target_hm: &Heatmap,
    pred_probs: [f64; 3],
    target_class: RegionClass,
    c: f64,
) -> Result<f64> {
    let sum: f64 = pred_probs.iter().sum();
    if pred_probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "pred_probs {pred_probs:?} is not a probability vector"
        )));
    }
    let ce = -pred_probs[target_class.index()].max(1e-12).ln();
    let mse = pred_hm
        .values
        .iter()
        .zip(&target_hm.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (HM * HM) as f64;
    Ok(ce + c * mse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::PhantomModel;
    use crate::rng::substream_indexed;
    use crate::scanner::ProbePose;

    fn cfg() -> PerceptionConfig {
        PerceptionConfig::default()
    }

    /// Frame with an elliptical Gaussian blob over uniform background.
    fn blob_frame(cx: f64, cy: f64, sigma_x: f64, sigma_y: f64) -> UsFrame {
        let mut img = vec![0.17f32; WIDTH_PX * HEIGHT_PX];
        for y in 0..HEIGHT_PX {
            for x in 0..WIDTH_PX {
                let dx = (x as f64 - cx) / sigma_x;
                let dy = (y as f64 - cy) / sigma_y;
                let g = 0.75 * (-0.5 * (dx * dx + dy * dy)).exp();
                img[y * WIDTH_PX + x] += g as f32;
            }
        }
        UsFrame {
            intensities: img,
            t: 0.0,
            pose: ProbePose::default(),
            frame_id: 0,
        }
    }

    #[test]
    fn gaussian_target_examples() {
        let hm = gaussian_target((320.0, 240.0), 2.0).unwrap();
        assert_eq!(hm.argmax(), (28, 28));
        assert_eq!(hm.get(28, 28), 1.0);
        // value falls off a cell away
        assert!(hm.get(29, 28) < 1.0 && hm.get(29, 28) > 0.5);
    }

    #[test]
    fn gaussian_target_large_sigma_approaches_ones() {
        let hm = gaussian_target((320.0, 240.0), 1000.0).unwrap();
        assert!(hm.values.iter().all(|&v| v > 0.99));
    }

    #[test]
    fn gaussian_target_rejects_out_of_bounds() {
        assert!(gaussian_target((640.0, 100.0), 2.0).is_err());
        assert!(gaussian_target((-1.0, 100.0), 2.0).is_err());
        assert!(gaussian_target((100.0, 480.0), 2.0).is_err());
        assert!(gaussian_target((100.0, 100.0), 0.0).is_err());
    }

    #[test]
    fn gaussian_target_peak_is_round_to_cell() {
        for gx in 0..20 {
            for gy in 0..20 {
                let cx = 25.0 + 30.0 * gx as f64;
                let cy = 20.0 + 22.0 * gy as f64;
                let hm = gaussian_target((cx, cy), 2.0).unwrap();
                let expect = (
                    (cx / CELL_TO_PX_X).round().min(55.0) as usize,
                    (cy / CELL_TO_PX_Y).round().min(55.0) as usize,
                );
                assert_eq!(hm.argmax(), expect, "center ({cx}, {cy})");
            }
        }
    }

    #[test]
    fn detect_noise_free_blob() {
        let frame = blob_frame(320.0, 240.0, 12.0, 6.0);
        let det = detect(&frame, &cfg()).expect("detection");
        let dist = ((det.x_px - 320.0).powi(2) + (det.y_px - 240.0).powi(2)).sqrt();
        assert!(dist <= 6.0, "dist {dist} px, det {det:?}");
        assert!(det.confidence > 0.5);
    }

    #[test]
    fn detect_rejects_pure_noise_gap_frames() {
        let phantom = PhantomModel::default();
        let render = RenderConfig::default();
        let y = 0.8 * phantom.vertebra_pitch; // gap
        let surf = phantom.surface_height(0.0, y).unwrap();
        let pose = ProbePose {
            x: 0.0,
            y,
            z: surf - 0.015,
            ..ProbePose::default()
        };
        for seed in 0..40u64 {
            let mut rng = substream_indexed(seed, "renderer", 0);
            let frame = crate::imaging::render_frame(&phantom, &pose, &render, 0, 0.0, &mut rng);
            let out = detect_full(&frame, &cfg());
            assert!(
                out.detection.is_none(),
                "seed {seed}: noise frame produced {:?} (conf {})",
                out.detection,
                out.best_confidence
            );
            assert!(out.best_confidence < 0.5);
        }
    }

    #[test]
    fn detect_template_embedded_gives_full_confidence() {
        // paint each pixel with its cell's template value so the
        // downsampled grid reproduces the template exactly
        let sigma = cfg().template_sigma;
        let mut img = vec![0.0f32; WIDTH_PX * HEIGHT_PX];
        for y in 0..HEIGHT_PX {
            let cj = y * HM / HEIGHT_PX;
            for x in 0..WIDTH_PX {
                let ci = x * HM / WIDTH_PX;
                let di = ci as f64 - 28.0;
                let dj = cj as f64 - 28.0;
                img[y * WIDTH_PX + x] =
                    (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp() as f32;
            }
        }
        let frame = UsFrame {
            intensities: img,
            t: 0.0,
            pose: ProbePose::default(),
            frame_id: 0,
        };
        let det = detect(&frame, &cfg()).expect("detection");
        assert!(det.confidence > 0.999, "confidence {}", det.confidence);
        // the painted template is centered on cell (28, 28), whose pixel
        // block is sampled at 28.5 cells
        assert!((det.x_px - 28.5 * CELL_TO_PX_X).abs() < 1e-6);
        assert!((det.y_px - 28.5 * CELL_TO_PX_Y).abs() < 1e-6);
    }

    #[test]
    fn detect_zero_variance_frame_has_zero_confidence() {
        let frame = UsFrame {
            intensities: vec![0.3; WIDTH_PX * HEIGHT_PX],
            t: 0.0,
            pose: ProbePose::default(),
            frame_id: 0,
        };
        let out = detect_full(&frame, &cfg());
        assert!(out.detection.is_none());
        assert_eq!(out.best_confidence, 0.0);
    }

    #[test]
    fn detect_is_translation_consistent() {
        let base = detect(&blob_frame(260.0, 200.0, 12.0, 6.0), &cfg()).unwrap();
        for k in [-120.0, -57.0, -11.0, 23.0, 80.0, 140.0] {
            let det = detect(&blob_frame(260.0 + k, 200.0, 12.0, 6.0), &cfg()).unwrap();
            let shift = det.x_px - base.x_px;
            assert!(
                (shift - k).abs() <= 2.0,
                "shift {shift} for true {k} px"
            );
        }
    }

    #[test]
    fn classify_wide_band_as_sacrum() {
        let frame = blob_frame(320.0, 120.0, 68.0, 6.0);
        let c = classify_region(&frame, &cfg());
        assert_eq!(c.class, RegionClass::Sacrum);
        assert!(c.probs[0] > 0.5, "probs {:?}", c.probs);
    }

    #[test]
    fn classify_canonical_lumbar_confidently() {
        let frame = blob_frame(320.0, 120.0, 12.0, 6.0);
        let c = classify_region(&frame, &cfg());
        assert_eq!(c.class, RegionClass::Lumbar);
        assert!(c.probs[1] > 0.9, "probs {:?}", c.probs);
    }

    #[test]
    fn classify_canonical_thoracic() {
        let frame = blob_frame(320.0, 48.0, 12.0, 6.0);
        let c = classify_region(&frame, &cfg());
        assert_eq!(c.class, RegionClass::Thoracic);
    }

    #[test]
    fn classify_equidistant_prototypes_is_uniform() {
        let mut config = cfg();
        let proto = RegionPrototype {
            depth_px: 100.0,
            width_px: 30.0,
        };
        config.prototypes = PerRegion {
            sacrum: proto,
            lumbar: proto,
            thoracic: proto,
        };
        let c = classify_region(&blob_frame(320.0, 200.0, 12.0, 6.0), &config);
        for p in c.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_featureless_frame_is_max_entropy() {
        let frame = UsFrame {
            intensities: vec![0.2; WIDTH_PX * HEIGHT_PX],
            t: 0.0,
            pose: ProbePose::default(),
            frame_id: 0,
        };
        let c = classify_region(&frame, &cfg());
        assert!(!c.feature_found);
        for p in c.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pck_examples() {
        let targets = vec![(100.0, 100.0), (200.0, 200.0), (300.0, 300.0)];
        assert_eq!(pck_accuracy(&targets, &targets, 20.0).unwrap(), 1.0);
        let off: Vec<_> = targets.iter().map(|(x, y)| (x + 40.0, *y)).collect();
        assert_eq!(pck_accuracy(&off, &targets, 20.0).unwrap(), 0.0);
        // distances 5, 15, 25 at threshold 20 -> 2/3
        let preds = vec![(105.0, 100.0), (215.0, 200.0), (325.0, 300.0)];
        assert!((pck_accuracy(&preds, &targets, 20.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pck_rejects_empty_and_mismatched() {
        assert!(pck_accuracy(&[], &[], 20.0).is_err());
        assert!(pck_accuracy(&[(0.0, 0.0)], &[], 20.0).is_err());
    }

    #[test]
    fn pck_monotone_in_threshold() {
        let targets: Vec<_> = (0..50).map(|i| (10.0 * i as f64, 0.0)).collect();
        let preds: Vec<_> = targets
            .iter()
            .enumerate()
            .map(|(i, (x, y))| (x + i as f64, *y))
            .collect();
        let mut last = 0.0;
        for thr in [1.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
            let p = pck_accuracy(&preds, &targets, thr).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn multitask_loss_zero_on_perfect_prediction() {
        let hm = gaussian_target((320.0, 240.0), 2.0).unwrap();
        let loss = multitask_loss(&hm, &hm, [0.0, 1.0, 0.0], RegionClass::Lumbar, 1500.0).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn multitask_loss_uniform_probs_is_ln3() {
        let hm = gaussian_target((320.0, 240.0), 2.0).unwrap();
        let probs = [1.0 / 3.0; 3];
        let loss = multitask_loss(&hm, &hm, probs, RegionClass::Thoracic, 1500.0).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn multitask_loss_weighted_sum() {
        // CE = 0.5 and MSE = 0.001 with C = 1500 -> 0.5 + 1.5 = 2.0
        let target = Heatmap::zeros();
        let mut pred = Heatmap::zeros();
        let delta = 0.001f64.sqrt();
        for v in pred.values.iter_mut() {
            *v = delta;
        }
        let pt = (-0.5f64).exp();
        let rest = (1.0 - pt) / 2.0;
        let loss =
            multitask_loss(&pred, &target, [rest, pt, rest], RegionClass::Lumbar, 1500.0).unwrap();
        assert!((loss - 2.0).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn multitask_loss_nonnegative_and_validates_probs() {
        let a = gaussian_target((100.0, 100.0), 2.0).unwrap();
        let b = gaussian_target((500.0, 400.0), 3.0).unwrap();
        for probs in [[0.2, 0.5, 0.3], [1.0, 0.0, 0.0], [0.01, 0.01, 0.98]] {
            let loss = multitask_loss(&a, &b, probs, RegionClass::Sacrum, 1500.0).unwrap();
            assert!(loss >= 0.0);
        }
        assert!(multitask_loss(&a, &b, [0.5, 0.5, 0.5], RegionClass::Sacrum, 1.0).is_err());
        // clamped log keeps a zero target probability finite
        let loss = multitask_loss(&a, &a, [0.0, 0.5, 0.5], RegionClass::Sacrum, 1.0).unwrap();
        assert!(loss.is_finite());
    }
}
