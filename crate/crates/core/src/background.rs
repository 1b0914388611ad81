//! Adaptive background model.
//!
//! The model holds the five most recently accepted background frames and
//! their pixel-wise mean. A frame whose mean absolute difference from the
//! mean background is at most `d_th` is accepted: the oldest frame is
//! evicted and the mean recomputed. Anything above `d_th` is foreground and
//! leaves the model untouched.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{abs_diff, mean_gray, mean_of_images, GrayImage, ImageError, MEAN_WINDOW};
use crate::pnm::{self, PnmError};

/// Default mean-difference threshold in gray levels.
pub const DEFAULT_D_TH: f64 = 70.0;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("d_th must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Pnm(#[from] PnmError),
}

/// Outcome of classifying one frame against the model.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameClass {
    Background { mean_diff: f64 },
    /// Carries the exact difference image used for the decision.
    Foreground { diff: GrayImage, mean_diff: f64 },
}

impl FrameClass {
    pub fn mean_diff(&self) -> f64 {
        match self {
            FrameClass::Background { mean_diff } | FrameClass::Foreground { mean_diff, .. } => {
                *mean_diff
            }
        }
    }

    pub fn is_background(&self) -> bool {
        matches!(self, FrameClass::Background { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    ring: VecDeque<GrayImage>,
    mean_bg: GrayImage,
    d_th: f64,
    /// Frames accepted since seeding.
    accepted: u64,
}

fn check_threshold(d_th: f64) -> Result<(), BackgroundError> {
    if d_th.is_finite() && d_th > 0.0 {
        Ok(())
    } else {
        Err(BackgroundError::BadThreshold(d_th))
    }
}

impl BackgroundModel {
    /// Seeds the model with exactly five same-sized images, oldest first.
    pub fn seed(initial: Vec<GrayImage>, d_th: f64) -> Result<Self, BackgroundError> {
        check_threshold(d_th)?;
        let mean_bg = mean_of_images(&initial)?;
        Ok(Self {
            ring: initial.into(),
            mean_bg,
            d_th,
            accepted: 0,
        })
    }

    pub fn d_th(&self) -> f64 {
        self.d_th
    }

    pub fn set_d_th(&mut self, d_th: f64) -> Result<(), BackgroundError> {
        check_threshold(d_th)?;
        self.d_th = d_th;
        Ok(())
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.mean_bg.dimensions()
    }

    /// Ring contents, oldest first.
    pub fn ring(&self) -> impl ExactSizeIterator<Item = &GrayImage> {
        self.ring.iter()
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn current_background(&self) -> &GrayImage {
        &self.mean_bg
    }

    /// Classifies `frame` against the mean background as it stands before
    /// the call, admitting it into the ring when `mean_diff <= d_th`.
    pub fn classify_and_update(&mut self, frame: &GrayImage) -> Result<FrameClass, BackgroundError> {
        let diff = abs_diff(frame, &self.mean_bg)?;
        let mean_diff = mean_gray(&diff)?;
        if mean_diff > self.d_th {
            return Ok(FrameClass::Foreground { diff, mean_diff });
        }
        self.ring.pop_front();
        self.ring.push_back(frame.clone());
        self.mean_bg = mean_of_images(self.ring.make_contiguous())?;
        self.accepted += 1;
        Ok(FrameClass::Background { mean_diff })
    }

    /// Writes `ring_0.pgm` .. `ring_4.pgm` (oldest first), `mean.pgm` and
    /// `meta.json` into `dir`, creating it if needed.
    pub fn save_checkpoint(&self, dir: &Path, sequence_no: u64) -> Result<(), BackgroundError> {
        fs::create_dir_all(dir).map_err(|e| checkpoint_err(dir, e))?;
        for (i, img) in self.ring.iter().enumerate() {
            pnm::save_pgm(&dir.join(format!("ring_{i}.pgm")), img)?;
        }
        pnm::save_pgm(&dir.join("mean.pgm"), &self.mean_bg)?;
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            d_th: self.d_th,
            sequence_no,
            accepted: self.accepted,
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(dir.join("meta.json"), json).map_err(|e| checkpoint_err(dir, e))?;
        Ok(())
    }

    /// Restores a model saved by [`save_checkpoint`](Self::save_checkpoint),
    /// returning it with the stored sequence number. The stored mean must
    /// equal the mean recomputed from the ring.
    pub fn load_checkpoint(dir: &Path) -> Result<(Self, u64), BackgroundError> {
        let meta_text = fs::read_to_string(dir.join("meta.json")).map_err(|e| checkpoint_err(dir, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text).map_err(|e| BackgroundError::Checkpoint {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(BackgroundError::Checkpoint {
                path: dir.display().to_string(),
                message: format!("unsupported checkpoint version {}", meta.version),
            });
        }
        let ring = (0..MEAN_WINDOW)
            .map(|i| pnm::load_gray(&dir.join(format!("ring_{i}.pgm"))))
            .collect::<Result<Vec<_>, _>>()?;
        let stored_mean = pnm::load_gray(&dir.join("mean.pgm"))?;
        let mut model = Self::seed(ring, meta.d_th)?;
        if model.mean_bg != stored_mean {
            return Err(BackgroundError::Checkpoint {
                path: dir.display().to_string(),
                message: "mean.pgm does not match the ring".into(),
            });
        }
        model.accepted = meta.accepted;
        Ok((model, meta.sequence_no))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    d_th: f64,
    sequence_no: u64,
    accepted: u64,
}

fn checkpoint_err(dir: &Path, e: std::io::Error) -> BackgroundError {
    BackgroundError::Checkpoint {
        path: dir.display().to_string(),
        message: e.to_string(),
    }
}
