//! What-if re-scoring of already ingested frames.
//!
//! Each frame is compared against the mean-background snapshot taken
//! immediately before it (see [`crate::pipeline::snapshot_before`]), so with
//! unchanged thresholds the verdict reproduces the original run exactly.
//! Nothing here mutates a model or the record store.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Deployment, Thresholds};
use crate::framelist::FrameRecord;
use crate::image::{abs_diff, mean_gray};
use crate::pipeline::snapshot_before;
use crate::pnm;
use crate::stopline::{occlusion_score_bridged, rasterize_band};

/// Threshold overrides; unset fields keep the camera's configured value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverride {
    #[serde(default)]
    pub d_th: Option<f64>,
    #[serde(default)]
    pub l_th: Option<f64>,
    #[serde(default)]
    pub pixel_th: Option<u8>,
}

impl ThresholdOverride {
    pub fn apply(&self, base: Thresholds) -> Thresholds {
        Thresholds {
            d_th: self.d_th.unwrap_or(base.d_th),
            l_th: self.l_th.unwrap_or(base.l_th),
            pixel_th: self.pixel_th.unwrap_or(base.pixel_th),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescore {
    pub frame_id: String,
    pub frame: FrameRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds_used: Option<Thresholds>,
    /// Sequence number of the background snapshot used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_diff: Option<f64>,
    pub foreground: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_line_longest_run: Vec<u32>,
    pub mean_longest_run: f64,
    pub violated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Rescore {
    fn failed(frame: &FrameRecord, message: String) -> Self {
        Self {
            frame_id: frame.frame_id(),
            frame: frame.clone(),
            thresholds_used: None,
            snapshot_seq: None,
            mean_diff: None,
            foreground: false,
            per_line_longest_run: Vec::new(),
            mean_longest_run: 0.0,
            violated: false,
            error: Some(message),
        }
    }
}

pub fn rescore_frame(
    deployment: &Deployment,
    checkpoint_dir: &Path,
    frames_base: &Path,
    frame: &FrameRecord,
    overrides: &ThresholdOverride,
) -> Rescore {
    try_rescore(deployment, checkpoint_dir, frames_base, frame, overrides)
        .unwrap_or_else(|message| Rescore::failed(frame, message))
}

fn try_rescore(
    deployment: &Deployment,
    checkpoint_dir: &Path,
    frames_base: &Path,
    frame: &FrameRecord,
    overrides: &ThresholdOverride,
) -> Result<Rescore, String> {
    let (camera, pan) = deployment
        .stream(&frame.camera_id, frame.pan_index)
        .map_err(|e| e.to_string())?;
    let thresholds = overrides.apply(camera.thresholds());
    let key = frame.stream();
    let (snapshot_seq, snapshot) = snapshot_before(checkpoint_dir, &key, frame.sequence_no)
        .ok_or_else(|| format!("no background checkpoint for {key} before frame {}", frame.sequence_no))?;
    let background = pnm::load_gray(&snapshot).map_err(|e| e.to_string())?;
    let img = pnm::load_gray(&frames_base.join(&frame.path)).map_err(|e| e.to_string())?;
    let diff = abs_diff(&img, &background).map_err(|e| e.to_string())?;
    let mean_diff = mean_gray(&diff).map_err(|e| e.to_string())?;
    let mut out = Rescore {
        frame_id: frame.frame_id(),
        frame: frame.clone(),
        thresholds_used: Some(thresholds),
        snapshot_seq: Some(snapshot_seq),
        mean_diff: Some(mean_diff),
        foreground: mean_diff > thresholds.d_th,
        per_line_longest_run: Vec::new(),
        mean_longest_run: 0.0,
        violated: false,
        error: None,
    };
    if out.foreground {
        let band = rasterize_band(&pan.geometry, diff.width(), diff.height()).map_err(|e| e.to_string())?;
        let result = occlusion_score_bridged(&diff, &band, thresholds.pixel_th, camera.gap_bridge_px)
            .map_err(|e| e.to_string())?
            .judge(thresholds.l_th);
        out.per_line_longest_run = result.per_line_longest_run;
        out.mean_longest_run = result.mean_longest_run;
        out.violated = result.violated;
    }
    Ok(out)
}

/// Re-scores `frames` in parallel; output order matches input order.
pub fn rescore_many(
    deployment: &Deployment,
    checkpoint_dir: &Path,
    frames_base: &Path,
    frames: &[FrameRecord],
    overrides: &ThresholdOverride,
) -> Vec<Rescore> {
    frames
        .par_iter()
        .map(|f| rescore_frame(deployment, checkpoint_dir, frames_base, f, overrides))
        .collect()
}
