//! Post-scan processing: coronal image assembly from pose-stamped frame
//! rows, deviation statistics of the tracked path, and the deformity
//! angle between the most tilted tangents of the spinous-process path.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{self, M_PER_PX, WIDTH_PX};
use crate::scanner::{ScanLog, ScanRecord};

/// Exact px -> mm factor for the 0.080 m / 640 px geometry.
pub const PX_TO_MM: f64 = 0.125;

/// Reconstructed frontal-plane slice.
#[derive(Debug, Clone)]
pub struct CoronalImage {
    /// Row-major intensities in [0, 1]; row 0 at the smallest world y.
    pub grid: Vec<f32>,
    pub width: usize,
    pub height: usize,
    /// Isotropic meters per coronal pixel.
    pub px_scale: f64,
    /// World (x, y) of the grid's (0, 0) corner.
    pub origin: (f64, f64),
}

impl CoronalImage {
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.grid[row * self.width + col]
    }

    /// Column index holding the most total intensity.
    pub fn brightest_column(&self) -> usize {
        let mut sums = vec![0.0f64; self.width];
        for row in 0..self.height {
            for col in 0..self.width {
                sums[col] += self.get(col, row) as f64;
            }
        }
        sums.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        imaging::encode_pgm(
            self.width,
            self.height,
            self.grid
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        )
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Access to stored frame pixels by frame id.
pub trait FrameSource {
    /// One image row (WIDTH_PX intensities in [0, 1]).
    fn row(&self, frame_id: u64, row: usize) -> Result<Vec<f32>>;
}

impl FrameSource for crate::scanner::MemFrames {
    fn row(&self, frame_id: u64, row: usize) -> Result<Vec<f32>> {
        let frame = self
            .frames
            .iter()
            .find(|f| f.frame_id == frame_id)
            .ok_or_else(|| Error::domain(format!("frame {frame_id} not in memory store")))?;
        Ok(frame.row(row).to_vec())
    }
}

/// Reads frames back from a directory of numbered PGM files.
pub struct DirFrameSource {
    dir: PathBuf,
}

impl DirFrameSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirFrameSource { dir: dir.into() }
    }
}

impl FrameSource for DirFrameSource {
    fn row(&self, frame_id: u64, row: usize) -> Result<Vec<f32>> {
        let path = self.dir.join(format!("{frame_id:04}.pgm"));
        let (w, h, raster) = imaging::read_pgm(&path)?;
        if row >= h {
            return Err(Error::domain(format!("row {row} outside {w}x{h} frame")));
        }
        Ok(raster[row * w..(row + 1) * w]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect())
    }
}

/// Assemble the coronal slice at a fixed beam depth.
///
/// Each captured frame contributes its image row at that depth, placed
/// into world coordinates by the frame's pose and splatted with bilinear
/// weights. Overlapping contributions average; untouched cells stay 0.
pub fn build_coronal(
    log: &ScanLog,
    frames: &dyn FrameSource,
    depth: f64,
    out_px_scale: f64,
) -> Result<CoronalImage> {
    if !(0.0..imaging::DEPTH_M).contains(&depth) || depth == 0.0 {
        return Err(Error::domain(format!(
            "coronal depth {depth} outside (0, {})",
            imaging::DEPTH_M
        )));
    }
    if out_px_scale <= 0.0 {
        return Err(Error::domain("out_px_scale must be > 0".to_string()));
    }
    let frame_records: Vec<&ScanRecord> = log.frame_records().collect();
    if frame_records.is_empty() {
        return Err(Error::domain("log contains no frames".to_string()));
    }
    let row_index = (depth / M_PER_PX).round() as usize;
    let row_index = row_index.min(imaging::HEIGHT_PX - 1);

    let half_aperture = imaging::APERTURE_M / 2.0;
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for r in &frame_records {
        x_min = x_min.min(r.pose.x - half_aperture);
        x_max = x_max.max(r.pose.x + half_aperture);
        y_min = y_min.min(r.pose.y);
        y_max = y_max.max(r.pose.y);
    }
    let width = ((x_max - x_min) / out_px_scale).ceil() as usize + 2;
    let height = ((y_max - y_min) / out_px_scale).ceil() as usize + 2;

    let mut acc = vec![0.0f64; width * height];
    let mut weight = vec![0.0f64; width * height];

    for rec in &frame_records {
        let frame_id = rec.frame_id.expect("frame record");
        let row = frames.row(frame_id, row_index)?;
        if row.len() != WIDTH_PX {
            return Err(Error::domain(format!(
                "frame {frame_id} row has {} columns, expected {WIDTH_PX}",
                row.len()
            )));
        }
        let gy = (rec.pose.y - y_min) / out_px_scale;
        let j0 = gy.floor() as usize;
        let fy = gy - j0 as f64;
        for (col, &v) in row.iter().enumerate() {
            let wx = rec.pose.x + (col as f64 - WIDTH_PX as f64 / 2.0) * M_PER_PX;
            let gx = (wx - x_min) / out_px_scale;
            let i0 = gx.floor() as usize;
            let fx = gx - i0 as f64;
            for (di, wxi) in [(0usize, 1.0 - fx), (1, fx)] {
                for (dj, wyj) in [(0usize, 1.0 - fy), (1, fy)] {
                    let i = i0 + di;
                    let j = j0 + dj;
                    if i < width && j < height {
                        let w = wxi * wyj;
                        acc[j * width + i] += w * v as f64;
                        weight[j * width + i] += w;
                    }
                }
            }
        }
    }

    let grid = acc
        .iter()
        .zip(&weight)
        .map(|(&a, &w)| if w > 1e-12 { (a / w) as f32 } else { 0.0 })
        .collect();

    Ok(CoronalImage {
        grid,
        width,
        height,
        px_scale: out_px_scale,
        origin: (x_min, y_min),
    })
}

/// Which logged locations feed the path statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSource {
    Detections,
    Kalman,
}

/// Deviation of a tracked path from the image center.
///
/// `mean_dev` is the signed mean of (x_i - 320) and `std` its population
/// standard deviation; `mean_abs_dev` is the mean magnitude, the robust
/// scan-quality number used for robotic/manual comparisons. Millimeter
/// values are the pixel values times exactly 0.125.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStats {
    pub mean_dev_px: f64,
    pub std_px: f64,
    pub mean_abs_dev_px: f64,
    pub mean_dev_mm: f64,
    pub std_mm: f64,
    pub mean_abs_dev_mm: f64,
}

pub fn deviation_stats(log: &ScanLog, source: PathSource) -> Result<PathStats> {
    let center = WIDTH_PX as f64 / 2.0;
    let xs: Vec<f64> = match source {
        PathSource::Kalman => log.frame_records().map(|r| r.kf_x).collect(),
        PathSource::Detections => log
            .frame_records()
            .filter_map(|r| r.detection.as_ref().map(|d| d.x_px))
            .collect(),
    };
    if xs.is_empty() {
        return Err(Error::domain("no usable locations in the log".to_string()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| x - center).sum::<f64>() / n;
    let var = xs
        .iter()
        .map(|x| {
            let d = (x - center) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let mean_abs = xs.iter().map(|x| (x - center).abs()).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(PathStats {
        mean_dev_px: mean,
        std_px: std,
        mean_abs_dev_px: mean_abs,
        mean_dev_mm: mean * PX_TO_MM,
        std_mm: std * PX_TO_MM,
        mean_abs_dev_mm: mean_abs * PX_TO_MM,
    })
}

/// Deformity angle from the Kalman path.
///
/// The path goes to world coordinates (pose.x plus the estimate's offset
/// from center), is smoothed by a centered moving average of width
/// `window` meters, and local tangents come from least-squares line fits
/// over the same window. Returns max tilt minus min tilt in degrees.
pub fn measure_angle(log: &ScanLog, window: f64) -> Result<f64> {
    if window <= 0.0 {
        return Err(Error::domain("window must be > 0".to_string()));
    }
    let center = WIDTH_PX as f64 / 2.0;
    let pts: Vec<(f64, f64)> = log
        .frame_records()
        .map(|r| {
            (
                r.pose.y,
                r.pose.x + imaging::pixels_to_meters(r.kf_x - center),
            )
        })
        .collect();
    if pts.len() < 8 {
        return Err(Error::domain(format!(
            "only {} path points; need at least 8",
            pts.len()
        )));
    }
    let y_span = pts.last().unwrap().0 - pts.first().unwrap().0;
    if y_span < 3.0 * window {
        return Err(Error::domain(format!(
            "scanned span {y_span:.4} m too short for a {window:.3} m analysis window"
        )));
    }

    let half = window / 2.0;
    // centered moving average over the y window
    let mut smoothed = Vec::with_capacity(pts.len());
    let mut lo = 0usize;
    let mut hi = 0usize;
    for i in 0..pts.len() {
        let y = pts[i].0;
        while pts[lo].0 < y - half {
            lo += 1;
        }
        while hi < pts.len() && pts[hi].0 <= y + half {
            hi += 1;
        }
        let slice = &pts[lo..hi];
        let mean = slice.iter().map(|p| p.1).sum::<f64>() / slice.len() as f64;
        smoothed.push((y, mean));
    }

    // windowed least-squares slope, only where the window fully fits
    let y0 = pts.first().unwrap().0;
    let y1 = pts.last().unwrap().0;
    let mut theta_min = f64::INFINITY;
    let mut theta_max = f64::NEG_INFINITY;
    let mut lo = 0usize;
    let mut hi = 0usize;
    for i in 0..smoothed.len() {
        let y = smoothed[i].0;
        if y < y0 + half || y > y1 - half {
            continue;
        }
        while smoothed[lo].0 < y - half {
            lo += 1;
        }
        while hi < smoothed.len() && smoothed[hi].0 <= y + half {
            hi += 1;
        }
        let slice = &smoothed[lo..hi];
        if slice.len() < 3 {
            continue;
        }
        let n = slice.len() as f64;
        let my = slice.iter().map(|p| p.0).sum::<f64>() / n;
        let mx = slice.iter().map(|p| p.1).sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (py, px) in slice {
            num += (py - my) * (px - mx);
            den += (py - my) * (py - my);
        }
        if den <= 0.0 {
            continue;
        }
        let theta = (num / den).atan();
        theta_min = theta_min.min(theta);
        theta_max = theta_max.max(theta);
    }
    if !theta_min.is_finite() || !theta_max.is_finite() {
        return Err(Error::domain("no full analysis window fit the path".to_string()));
    }
    Ok((theta_max - theta_min).to_degrees())
}
