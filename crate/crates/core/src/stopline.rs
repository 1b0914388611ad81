//! Stop-line scan band and the longest-run occlusion test.
//!
//! A band of `line_count` parallel lines is laid along the painted stop-line:
//! line 0 starts at the calibrated anchor and follows the camera's skew
//! angle, each further line is the same pixel path shifted down by `gap_px`.
//! Along every line the difference image is thresholded into occluded /
//! clear samples; the frame's score is the mean of the per-line longest
//! occluded runs. Isolated noise and a few pedestrians give short runs, a
//! vehicle crossing the line gives one long run.

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

pub const DEFAULT_LINE_COUNT: u32 = 5;
pub const DEFAULT_GAP_PX: u32 = 3;
/// Default run-length threshold in pixels along the line.
pub const DEFAULT_L_TH: f64 = 140.0;
/// Default per-pixel difference above which a sample counts as occluded.
pub const DEFAULT_PIXEL_TH: u8 = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("length must be at least 1")]
    ZeroLength,
    #[error("line_count must be at least 1")]
    ZeroLines,
    #[error("skew_deg must be finite and strictly between -90 and 90, got {0}")]
    BadSkew(f64),
    #[error("scan line {line} leaves the {width}x{height} frame at ({x},{y})")]
    OutOfBounds {
        line: usize,
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },
}

/// Rounds an angle to the stored two-decimal precision.
pub fn round_skew(deg: f64) -> f64 {
    (deg * 100.0).round() / 100.0
}

fn de_skew<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    f64::deserialize(d).map(round_skew)
}

fn default_line_count() -> u32 {
    DEFAULT_LINE_COUNT
}

fn default_gap() -> u32 {
    DEFAULT_GAP_PX
}

/// Calibrated stop-line position for one camera view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopLineGeometry {
    /// Left endpoint of the topmost scan line, `[x, y]`.
    pub anchor: [u32; 2],
    /// Horizontal extent of the band in pixels.
    pub length: u32,
    /// Angle between the stop-line and the image x-axis, positive when the
    /// line descends from left to right.
    #[serde(deserialize_with = "de_skew")]
    pub skew_deg: f64,
    #[serde(default = "default_line_count")]
    pub line_count: u32,
    #[serde(default = "default_gap")]
    pub gap_px: u32,
}

impl StopLineGeometry {
    /// Geometry with the default five lines three pixels apart.
    pub fn new(anchor: [u32; 2], length: u32, skew_deg: f64) -> Self {
        Self {
            anchor,
            length,
            skew_deg: round_skew(skew_deg),
            line_count: DEFAULT_LINE_COUNT,
            gap_px: DEFAULT_GAP_PX,
        }
    }

    /// Geometry through two points clicked on the stop-line's upper edge.
    /// The left point becomes the anchor, the horizontal distance the
    /// length, and `atan2(dy, dx)` the skew.
    pub fn from_clicks(a: [u32; 2], b: [u32; 2]) -> Result<Self, BandError> {
        let (left, right) = if a[0] <= b[0] { (a, b) } else { (b, a) };
        let dx = right[0] - left[0];
        if dx == 0 {
            return Err(BandError::ZeroLength);
        }
        let dy = right[1] as f64 - left[1] as f64;
        Ok(Self::new(left, dx, dy.atan2(dx as f64).to_degrees()))
    }

    pub fn validate_shape(&self) -> Result<(), BandError> {
        if self.length == 0 {
            return Err(BandError::ZeroLength);
        }
        if self.line_count == 0 {
            return Err(BandError::ZeroLines);
        }
        if !self.skew_deg.is_finite() || self.skew_deg.abs() >= 90.0 {
            return Err(BandError::BadSkew(self.skew_deg));
        }
        Ok(())
    }

    /// Far endpoint of line 0.
    pub fn end_point(&self) -> (i64, i64) {
        let run = self.length as i64 - 1;
        let rise = (run as f64 * self.skew_deg.to_radians().tan()).round() as i64;
        (self.anchor[0] as i64 + run, self.anchor[1] as i64 + rise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

/// Rasterized scan lines, each in order from the anchor side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanBand {
    pub lines: Vec<Vec<Point>>,
}

/// 8-connected Bresenham segment from `p0` to `p1`, both endpoints included.
pub fn bresenham(p0: (i64, i64), p1: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = p0;
    let dx = (p1.0 - x).abs();
    let dy = -(p1.1 - y).abs();
    let sx = if x < p1.0 { 1 } else { -1 };
    let sy = if y < p1.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity(dx.max(-dy) as usize + 1);
    loop {
        out.push((x, y));
        if (x, y) == p1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Lays the scan band for `geom` on a `frame_width` x `frame_height` frame.
pub fn rasterize_band(
    geom: &StopLineGeometry,
    frame_width: u32,
    frame_height: u32,
) -> Result<ScanBand, BandError> {
    geom.validate_shape()?;
    let start = (geom.anchor[0] as i64, geom.anchor[1] as i64);
    let base = bresenham(start, geom.end_point());
    let mut lines = Vec::with_capacity(geom.line_count as usize);
    for k in 0..geom.line_count as usize {
        let offset = k as i64 * geom.gap_px as i64;
        let line = base
            .iter()
            .map(|&(x, y)| {
                let y = y + offset;
                if x < 0 || y < 0 || x >= frame_width as i64 || y >= frame_height as i64 {
                    Err(BandError::OutOfBounds {
                        line: k,
                        x,
                        y,
                        width: frame_width,
                        height: frame_height,
                    })
                } else {
                    Ok(Point {
                        x: x as u32,
                        y: y as u32,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        lines.push(line);
    }
    Ok(ScanBand { lines })
}

/// Length of the longest contiguous run of `true`.
pub fn longest_run(samples: &[bool]) -> u32 {
    let mut best = 0u32;
    let mut current = 0u32;
    for &s in samples {
        if s {
            current += 1;
            best = best.max(current);
        } else {
            current = 0;
        }
    }
    best
}

/// Like [`longest_run`], but runs separated by at most `max_gap` clear
/// samples are merged; the merged length includes the bridged gap.
pub fn longest_run_bridged(samples: &[bool], max_gap: u32) -> u32 {
    if max_gap == 0 {
        return longest_run(samples);
    }
    let mut best = 0u32;
    // start of the current merged run and the index of its last true sample
    let mut span: Option<(usize, usize)> = None;
    for (i, &s) in samples.iter().enumerate() {
        if !s {
            continue;
        }
        span = match span {
            Some((start, last)) if i - last - 1 <= max_gap as usize => Some((start, i)),
            _ => Some((i, i)),
        };
        let (start, last) = span.expect("just set");
        best = best.max((last - start + 1) as u32);
    }
    best
}

/// Per-line longest runs before the threshold decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionScore {
    pub per_line_longest_run: Vec<u32>,
    pub mean_longest_run: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionResult {
    pub per_line_longest_run: Vec<u32>,
    pub mean_longest_run: f64,
    pub violated: bool,
}

impl OcclusionScore {
    fn from_runs(per_line_longest_run: Vec<u32>) -> Self {
        let total: u64 = per_line_longest_run.iter().map(|&r| r as u64).sum();
        let mean_longest_run = if per_line_longest_run.is_empty() {
            0.0
        } else {
            total as f64 / per_line_longest_run.len() as f64
        };
        Self {
            per_line_longest_run,
            mean_longest_run,
        }
    }

    pub fn judge(self, l_th: f64) -> OcclusionResult {
        OcclusionResult {
            violated: is_violation(self.mean_longest_run, l_th),
            per_line_longest_run: self.per_line_longest_run,
            mean_longest_run: self.mean_longest_run,
        }
    }
}

/// Samples `diff` along every band line; a sample is occluded when its
/// difference exceeds `pixel_th`.
pub fn occlusion_score(
    diff: &GrayImage,
    band: &ScanBand,
    pixel_th: u8,
) -> Result<OcclusionScore, BandError> {
    occlusion_score_bridged(diff, band, pixel_th, 0)
}

pub fn occlusion_score_bridged(
    diff: &GrayImage,
    band: &ScanBand,
    pixel_th: u8,
    max_gap: u32,
) -> Result<OcclusionScore, BandError> {
    let mut runs = Vec::with_capacity(band.lines.len());
    let mut samples = Vec::new();
    for (k, line) in band.lines.iter().enumerate() {
        samples.clear();
        for p in line {
            if p.x >= diff.width() || p.y >= diff.height() {
                return Err(BandError::OutOfBounds {
                    line: k,
                    x: p.x as i64,
                    y: p.y as i64,
                    width: diff.width(),
                    height: diff.height(),
                });
            }
            samples.push(diff.get(p.x, p.y) > pixel_th);
        }
        runs.push(longest_run_bridged(&samples, max_gap));
    }
    Ok(OcclusionScore::from_runs(runs))
}

/// A frame violates when the mean longest run strictly exceeds `l_th`.
pub fn is_violation(mean_longest_run: f64, l_th: f64) -> bool {
    mean_longest_run > l_th
}
