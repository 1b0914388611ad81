//! Stop-line violation detection from roadside camera snapshots.
//!
//! Frames are differenced against an adaptive per-camera background; frames
//! that differ enough are scanned along a calibrated band over the painted
//! stop-line, and a long contiguous occlusion of that band marks a vehicle
//! over the line.

pub mod background;
pub mod config;
pub mod eval;
pub mod framelist;
pub mod image;
pub mod pipeline;
pub mod pnm;
pub mod redetect;
pub mod stopline;
pub mod store;
pub mod synthgen;

pub use background::{BackgroundModel, FrameClass};
pub use config::{CameraConfig, CameraKind, ConfigPatch, Deployment, PanPreset, Thresholds};
pub use framelist::{FrameRecord, StreamKey, Timestamp};
pub use image::{ColorImage, GrayImage};
pub use pipeline::{FrameEvent, Pipeline, PipelineStats, RunOptions};
pub use stopline::{OcclusionResult, ScanBand, StopLineGeometry};
pub use store::{RecordStore, ReviewStatus, Verdict, ViolationRecord};
