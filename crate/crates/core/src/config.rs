//! Deployment configuration: cameras, their pan presets, stop-line geometry
//! and detection thresholds.
//!
//! Stored as TOML. `schema_version` must be [`SCHEMA_VERSION`]; unknown keys
//! are rejected so a typo never silently falls back to a default.
//!
//! ```toml
//! schema_version = 1
//!
//! [[cameras]]
//! camera_id = "CAM1"
//! kind = "fixed"            # or "ptz"
//! location_label = "Park St / Chowringhee, northbound"
//! frame_width = 704         # default 704
//! frame_height = 576        # default 576
//! d_th = 70.0               # default 70
//! l_th = 140.0              # default 140
//! pixel_th = 25             # default 25
//! gap_bridge_px = 0         # default 0 (strictly contiguous runs)
//!
//! [[cameras.pans]]
//! pan_index = 0
//! seed_images = ["bg/0.pgm", "bg/1.pgm", "bg/2.pgm", "bg/3.pgm", "bg/4.pgm"]  # optional
//! geometry = { anchor = [100, 300], length = 200, skew_deg = 0.0, line_count = 5, gap_px = 3 }
//! ```
//!
//! Relative `seed_images` paths resolve against the config file's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::background::DEFAULT_D_TH;
use crate::image::MEAN_WINDOW;
use crate::stopline::{rasterize_band, StopLineGeometry, DEFAULT_L_TH, DEFAULT_PIXEL_TH};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FRAME_WIDTH: u32 = 704;
pub const DEFAULT_FRAME_HEIGHT: u32 = 576;
/// Pan presets a PTZ camera cycles through by default.
pub const DEFAULT_PTZ_PRESETS: usize = 6;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown camera `{0}`")]
    UnknownCamera(String),
    #[error("camera `{camera_id}` has no pan preset {pan_index}")]
    UnknownPan { camera_id: String, pan_index: u32 },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraKind {
    Fixed,
    Ptz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanPreset {
    pub pan_index: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed_images: Vec<PathBuf>,
    pub geometry: StopLineGeometry,
}

fn default_width() -> u32 {
    DEFAULT_FRAME_WIDTH
}
fn default_height() -> u32 {
    DEFAULT_FRAME_HEIGHT
}
fn default_d_th() -> f64 {
    DEFAULT_D_TH
}
fn default_l_th() -> f64 {
    DEFAULT_L_TH
}
fn default_pixel_th() -> u8 {
    DEFAULT_PIXEL_TH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub camera_id: String,
    pub kind: CameraKind,
    #[serde(default)]
    pub location_label: String,
    #[serde(default = "default_width")]
    pub frame_width: u32,
    #[serde(default = "default_height")]
    pub frame_height: u32,
    #[serde(default = "default_d_th")]
    pub d_th: f64,
    #[serde(default = "default_l_th")]
    pub l_th: f64,
    #[serde(default = "default_pixel_th")]
    pub pixel_th: u8,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub gap_bridge_px: u32,
    pub pans: Vec<PanPreset>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl CameraConfig {
    /// Fixed camera with one preset and default thresholds.
    pub fn fixed(camera_id: &str, location_label: &str, geometry: StopLineGeometry) -> Self {
        Self::with_pans(camera_id, CameraKind::Fixed, location_label, vec![geometry])
    }

    /// PTZ camera; one preset per geometry, indexed from 0.
    pub fn ptz(camera_id: &str, location_label: &str, geometries: Vec<StopLineGeometry>) -> Self {
        Self::with_pans(camera_id, CameraKind::Ptz, location_label, geometries)
    }

    fn with_pans(
        camera_id: &str,
        kind: CameraKind,
        location_label: &str,
        geometries: Vec<StopLineGeometry>,
    ) -> Self {
        Self {
            camera_id: camera_id.to_string(),
            kind,
            location_label: location_label.to_string(),
            frame_width: DEFAULT_FRAME_WIDTH,
            frame_height: DEFAULT_FRAME_HEIGHT,
            d_th: DEFAULT_D_TH,
            l_th: DEFAULT_L_TH,
            pixel_th: DEFAULT_PIXEL_TH,
            gap_bridge_px: 0,
            pans: geometries
                .into_iter()
                .enumerate()
                .map(|(i, geometry)| PanPreset {
                    pan_index: i as u32,
                    seed_images: Vec::new(),
                    geometry,
                })
                .collect(),
        }
    }

    pub fn pan(&self, pan_index: u32) -> Option<&PanPreset> {
        self.pans.iter().find(|p| p.pan_index == pan_index)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            d_th: self.d_th,
            l_th: self.l_th,
            pixel_th: self.pixel_th,
        }
    }

    /// Checks thresholds, preset layout and that every band fits the frame.
    /// `key` prefixes error keys, e.g. `cameras[2]`.
    pub fn validate(&self, key: &str) -> Result<(), ConfigError> {
        if self.camera_id.is_empty() || self.camera_id.contains(|c: char| c.is_whitespace() || c == ';') {
            return Err(ConfigError::invalid(
                format!("{key}.camera_id"),
                "must be non-empty without whitespace or ';'",
            ));
        }
        for (name, value) in [("d_th", self.d_th), ("l_th", self.l_th)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::invalid(
                    format!("{key}.{name}"),
                    format!("must be positive, got {value}"),
                ));
            }
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err(ConfigError::invalid(
                format!("{key}.frame_width"),
                "frame dimensions must be positive",
            ));
        }
        match (self.kind, self.pans.len()) {
            (_, 0) => {
                return Err(ConfigError::invalid(
                    format!("{key}.pans"),
                    "at least one pan preset is required",
                ))
            }
            (CameraKind::Fixed, n) if n != 1 => {
                return Err(ConfigError::invalid(
                    format!("{key}.pans"),
                    format!("a fixed camera has exactly one preset, got {n}"),
                ))
            }
            _ => {}
        }
        let mut seen = HashSet::new();
        for (i, pan) in self.pans.iter().enumerate() {
            let pan_key = format!("{key}.pans[{i}]");
            if !seen.insert(pan.pan_index) {
                return Err(ConfigError::invalid(
                    format!("{pan_key}.pan_index"),
                    format!("duplicate pan_index {}", pan.pan_index),
                ));
            }
            if !pan.seed_images.is_empty() && pan.seed_images.len() != MEAN_WINDOW {
                return Err(ConfigError::invalid(
                    format!("{pan_key}.seed_images"),
                    format!("needs exactly {MEAN_WINDOW} images, got {}", pan.seed_images.len()),
                ));
            }
            rasterize_band(&pan.geometry, self.frame_width, self.frame_height)
                .map_err(|e| ConfigError::invalid(format!("{pan_key}.geometry"), e.to_string()))?;
        }
        Ok(())
    }
}

/// The three thresholds a detection ran with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub d_th: f64,
    pub l_th: f64,
    pub pixel_th: u8,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            d_th: DEFAULT_D_TH,
            l_th: DEFAULT_L_TH,
            pixel_th: DEFAULT_PIXEL_TH,
        }
    }
}

/// Partial update for one camera view. Thresholds apply to the whole
/// camera, geometry to the addressed preset only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_th: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_th: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_th: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<StopLineGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deployment {
    pub schema_version: u32,
    #[serde(default)]
    pub cameras: Vec<CameraConfig>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for Deployment {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl Deployment {
    pub fn new(cameras: Vec<CameraConfig>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            cameras,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let deployment: Deployment =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        deployment.validate()?;
        Ok(deployment)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("deployment serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut deployment = Self::from_toml(&text)?;
        deployment.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(deployment)
    }

    /// Writes via a temporary file and rename so readers never see a torn file.
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let io = |source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("toml.tmp");
        fs::write(&tmp, self.to_toml()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let mut ids = HashSet::new();
        for (i, cam) in self.cameras.iter().enumerate() {
            cam.validate(&format!("cameras[{i}]"))?;
            if !ids.insert(cam.camera_id.as_str()) {
                return Err(ConfigError::invalid(
                    format!("cameras[{i}].camera_id"),
                    format!("duplicate camera_id `{}`", cam.camera_id),
                ));
            }
        }
        Ok(())
    }

    pub fn camera(&self, camera_id: &str) -> Option<&CameraConfig> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn stream(&self, camera_id: &str, pan_index: u32) -> Result<(&CameraConfig, &PanPreset), ConfigError> {
        let cam = self
            .camera(camera_id)
            .ok_or_else(|| ConfigError::UnknownCamera(camera_id.to_string()))?;
        let pan = cam.pan(pan_index).ok_or_else(|| ConfigError::UnknownPan {
            camera_id: camera_id.to_string(),
            pan_index,
        })?;
        Ok((cam, pan))
    }

    /// Applies `patch` to a copy, validates it, and only then commits.
    /// Returns the updated camera.
    pub fn apply_patch(
        &mut self,
        camera_id: &str,
        pan_index: u32,
        patch: &ConfigPatch,
    ) -> Result<CameraConfig, ConfigError> {
        self.stream(camera_id, pan_index)?;
        let pos = self
            .cameras
            .iter()
            .position(|c| c.camera_id == camera_id)
            .expect("checked above");
        let mut cam = self.cameras[pos].clone();
        if let Some(v) = patch.d_th {
            cam.d_th = v;
        }
        if let Some(v) = patch.l_th {
            cam.l_th = v;
        }
        if let Some(v) = patch.pixel_th {
            cam.pixel_th = v;
        }
        if let Some(geometry) = &patch.geometry {
            let pan = cam
                .pans
                .iter_mut()
                .find(|p| p.pan_index == pan_index)
                .expect("checked above");
            pan.geometry = geometry.clone();
        }
        cam.validate(&format!("cameras[{pos}]"))?;
        self.cameras[pos] = cam.clone();
        Ok(cam)
    }
}
