//! Deterministic synthetic scenes with geometric ground truth.
//!
//! Backgrounds are a low-frequency gradient plus seeded jitter. Frames add
//! flat occluder rectangles, a global illumination offset and Gaussian
//! noise. Noise uses ChaCha8 (`rand_chacha`) as the 64-bit source and the
//! Box-Muller transform on 53-bit uniforms, consuming two draws per pair of
//! pixels in row-major order, so output is reproducible bit for bit.
//!
//! Ground truth never runs the detector: the occluded extent is measured by
//! sampling each ideal scan line `y = y0 + k*gap + (x - x0) * tan(skew)` at
//! every integer `x` and testing the sample against the occluder rectangles.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CameraConfig, Deployment};
use crate::framelist::Timestamp;
use crate::image::{GrayImage, MEAN_WINDOW};
use crate::pnm;
use crate::stopline::{StopLineGeometry, DEFAULT_L_TH};

pub const DEFAULT_DIMS: (u32, u32) = (704, 576);
/// Max absolute per-pixel jitter added to the background gradient.
pub const JITTER: i32 = 5;
/// Camera id used for generated datasets.
pub const SYNTH_CAMERA: &str = "SYN1";
/// Capture cadence of generated frame lists, in seconds.
pub const CAPTURE_INTERVAL_S: i64 = 3;
/// 2024-01-01T00:00:00Z, first timestamp of generated lists.
const EPOCH: i64 = 1_704_067_200;

// Scene layout on the default 704x576 frame. The band sits near the top;
// violating vehicles cover it and most of the frame below, waiting vehicles
// stay below it, pedestrians cross it.
const BAND_ANCHOR: [u32; 2] = [42, 40];
const BAND_LENGTH: u32 = 620;
const BAND_SKEW_DEG: f64 = 3.0;
const VEHICLE_MIN_W: u32 = 460;
const VEHICLE_GRAY: (u8, u8) = (220, 255);
const WAITING_TOP: u32 = 100;
const WAITING_MIN_W: u32 = 560;
const PEDESTRIAN_W: (u32, u32) = (10, 40);
const PEDESTRIAN_GRAY: (u8, u8) = (170, 230);
const PEDESTRIAN_MAX: u32 = 3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("occluder {index} ({x},{y},{w},{h}) is outside the {width}x{height} frame")]
    OccluderOutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccluderKind {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x as i64 && y >= self.y as i64 && x < (self.x + self.w) as i64 && y < (self.y + self.h) as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub kind: OccluderKind,
    pub rect: Rect,
    pub gray: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub dims: (u32, u32),
    pub geometry: StopLineGeometry,
    pub occluders: Vec<OccluderSpec>,
    pub noise_sigma: f64,
    pub illumination_offset: i32,
    /// Seed of the noise stream.
    pub rng_seed: u64,
    /// Seed passed to [`gen_background`].
    pub background_seed: u64,
    /// Threshold the truth label is taken against.
    pub l_th: f64,
}

impl SceneSpec {
    /// Empty scene on the default layout.
    pub fn new(background_seed: u64) -> Self {
        Self {
            dims: DEFAULT_DIMS,
            geometry: default_geometry(),
            occluders: Vec::new(),
            noise_sigma: 0.0,
            illumination_offset: 0,
            rng_seed: 0,
            background_seed,
            l_th: DEFAULT_L_TH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub image: GrayImage,
    pub truth_violation: bool,
    /// Widest contiguous occluded stretch over the band lines, in pixels.
    pub truth_band_occlusion: u32,
}

/// Stop-line geometry used by generated datasets.
pub fn default_geometry() -> StopLineGeometry {
    StopLineGeometry::new(BAND_ANCHOR, BAND_LENGTH, BAND_SKEW_DEG)
}

/// Noise-free gradient underlying [`gen_background`]; spans 35..=75.
pub fn gradient_value(dims: (u32, u32), x: u32, y: u32) -> u8 {
    let fx = x as f64 / (dims.0.max(2) - 1) as f64;
    let fy = y as f64 / (dims.1.max(2) - 1) as f64;
    (35.0 + 25.0 * fx + 15.0 * fy).round() as u8
}

/// Gradient plus uniform integer jitter in `[-JITTER, JITTER]`.
pub fn gen_background(dims: (u32, u32), rng_seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let span = (2 * JITTER + 1) as u64;
    GrayImage::from_fn(dims.0, dims.1, |x, y| {
        let jitter = (rng.next_u64() % span) as i32 - JITTER;
        (gradient_value(dims, x, y) as i32 + jitter).clamp(0, 255) as u8
    })
    .expect("positive dims")
}

/// 53-bit uniform in `[0, 1)`.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal pairs by Box-Muller.
struct Gaussian {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gaussian {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - unit(&mut self.rng); // (0, 1]
        let u2 = unit(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Geometric truth: longest run of ideal-line samples inside any rectangle,
/// maximized over the band lines.
pub fn band_occlusion_truth(geometry: &StopLineGeometry, rects: &[Rect]) -> u32 {
    let slope = geometry.skew_deg.to_radians().tan();
    let (x0, y0) = (geometry.anchor[0] as i64, geometry.anchor[1] as i64);
    let mut widest = 0u32;
    for k in 0..geometry.line_count as i64 {
        let mut run = 0u32;
        for dx in 0..geometry.length as i64 {
            let y = (y0 as f64 + (k * geometry.gap_px as i64) as f64 + dx as f64 * slope).round() as i64;
            if rects.iter().any(|r| r.contains(x0 + dx, y)) {
                run += 1;
                widest = widest.max(run);
            } else {
                run = 0;
            }
        }
    }
    widest
}

pub fn gen_frame(spec: &SceneSpec) -> Result<LabeledFrame, SynthError> {
    let (width, height) = spec.dims;
    if width == 0 || height == 0 {
        return Err(SynthError::Invalid("dims must be positive".into()));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(SynthError::Invalid(format!("noise_sigma {} must be >= 0", spec.noise_sigma)));
    }
    for (index, o) in spec.occluders.iter().enumerate() {
        let r = o.rect;
        if r.w == 0 || r.h == 0 || r.x as u64 + r.w as u64 > width as u64 || r.y as u64 + r.h as u64 > height as u64 {
            return Err(SynthError::OccluderOutOfBounds {
                index,
                x: r.x,
                y: r.y,
                w: r.w,
                h: r.h,
                width,
                height,
            });
        }
    }

    let mut image = gen_background(spec.dims, spec.background_seed);
    for o in &spec.occluders {
        for y in o.rect.y..o.rect.y + o.rect.h {
            let row = y as usize * width as usize;
            image.pixels_mut()[row + o.rect.x as usize..row + (o.rect.x + o.rect.w) as usize].fill(o.gray);
        }
    }
    if spec.noise_sigma > 0.0 || spec.illumination_offset != 0 {
        let mut noise = (spec.noise_sigma > 0.0).then(|| Gaussian::new(spec.rng_seed));
        let offset = spec.illumination_offset as f64;
        for p in image.pixels_mut() {
            let n = noise.as_mut().map_or(0.0, |g| spec.noise_sigma * g.sample());
            *p = (*p as f64 + offset + n).round().clamp(0.0, 255.0) as u8;
        }
    }

    let rects: Vec<Rect> = spec.occluders.iter().map(|o| o.rect).collect();
    let truth_band_occlusion = band_occlusion_truth(&spec.geometry, &rects);
    Ok(LabeledFrame {
        image,
        truth_violation: truth_band_occlusion as f64 > spec.l_th,
        truth_band_occlusion,
    })
}

/// Scene category proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mix {
    pub vehicle: f64,
    pub pedestrian: f64,
    pub empty: f64,
}

impl Mix {
    pub fn validate(&self) -> Result<(), SynthError> {
        let parts = [self.vehicle, self.pedestrian, self.empty];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(SynthError::Invalid("mix fractions must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::Invalid(format!("mix fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` frames; ties go to the
    /// earlier category (vehicle, pedestrian, empty).
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let quotas = [self.vehicle * n as f64, self.pedestrian * n as f64, self.empty * n as f64];
        let mut counts = quotas.map(|q| q.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

impl std::str::FromStr for Mix {
    type Err = String;

    /// Parses `v,p,e`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid fraction `{p}`")))
            .collect::<Result<_, _>>()?;
        let [vehicle, pedestrian, empty] = parts[..] else {
            return Err(format!("expected 3 comma-separated fractions, got {}", parts.len()));
        };
        Ok(Mix {
            vehicle,
            pedestrian,
            empty,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Vehicle,
    Pedestrian,
    Empty,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n: usize,
    pub mix: Mix,
    pub noise_sigma: f64,
    /// Each frame gets a uniform integer offset in `[-j, j]`.
    pub illumination_jitter: u32,
    pub rng_seed: u64,
    pub l_th: f64,
}

impl DatasetSpec {
    pub fn new(n: usize, mix: Mix, noise_sigma: f64, rng_seed: u64) -> Self {
        Self {
            n,
            mix,
            noise_sigma,
            illumination_jitter: 0,
            rng_seed,
            l_th: DEFAULT_L_TH,
        }
    }
}

/// One label-file line: `<path>;<truth_violation>;<truth_band_occlusion>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub path: String,
    pub truth_violation: bool,
    pub truth_band_occlusion: u32,
}

impl Label {
    pub fn to_line(&self) -> String {
        format!("{};{};{}", self.path, self.truth_violation, self.truth_band_occlusion)
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let mut parts = line.rsplitn(3, ';');
        let (Some(occ), Some(viol), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!("expected `<path>;<bool>;<int>`, got `{line}`"));
        };
        Ok(Label {
            path: path.to_string(),
            truth_violation: viol.trim().parse().map_err(|_| format!("invalid truth_violation `{viol}`"))?,
            truth_band_occlusion: occ.trim().parse().map_err(|_| format!("invalid truth_band_occlusion `{occ}`"))?,
        })
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>, SynthError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Label::parse(l).map_err(|m| SynthError::Invalid(format!("{}:{}: {m}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub out_dir: PathBuf,
    pub list_path: PathBuf,
    pub labels_path: PathBuf,
    pub config_path: PathBuf,
    /// Frames per [vehicle, pedestrian, empty].
    pub counts: [usize; 3],
    pub labels: Vec<Label>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Derives an independent seed for stream `tag`, item `index`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_BACKGROUND: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_LAYOUT: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_SEED_FRAME: u64 = 5;

fn uniform(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> u32 {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as u32
}

/// Occluders for one scene of the given kind on the default layout.
pub fn layout_scene(kind: SceneKind, seed: u64) -> Vec<OccluderSpec> {
    let (width, height) = DEFAULT_DIMS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gray = |rng: &mut ChaCha8Rng, (lo, hi): (u8, u8)| uniform(rng, lo as u32, hi as u32) as u8;
    match kind {
        SceneKind::Empty => Vec::new(),
        SceneKind::Vehicle => {
            let w = uniform(&mut rng, VEHICLE_MIN_W, BAND_LENGTH);
            let x = uniform(&mut rng, BAND_ANCHOR[0], BAND_ANCHOR[0] + BAND_LENGTH - w);
            let y = uniform(&mut rng, 0, 30);
            vec![OccluderSpec {
                kind: OccluderKind::Vehicle,
                rect: Rect { x, y, w, h: height - y },
                gray: gray(&mut rng, VEHICLE_GRAY),
            }]
        }
        SceneKind::Pedestrian => {
            let w = uniform(&mut rng, WAITING_MIN_W, width);
            let x = uniform(&mut rng, 0, width - w);
            let mut out = vec![OccluderSpec {
                kind: OccluderKind::Vehicle,
                rect: Rect {
                    x,
                    y: WAITING_TOP,
                    w,
                    h: height - WAITING_TOP,
                },
                gray: gray(&mut rng, VEHICLE_GRAY),
            }];
            // one walker per slot; slots are wide enough to keep >= 10 px gaps
            let count = uniform(&mut rng, 1, PEDESTRIAN_MAX);
            let slot = BAND_LENGTH / PEDESTRIAN_MAX;
            for i in 0..count {
                let pw = uniform(&mut rng, PEDESTRIAN_W.0, PEDESTRIAN_W.1);
                let slot_start = BAND_ANCHOR[0] + i * slot;
                let px = uniform(&mut rng, slot_start, slot_start + slot - pw - 10);
                let top = uniform(&mut rng, 20, 35);
                let bottom = uniform(&mut rng, 90, WAITING_TOP);
                out.push(OccluderSpec {
                    kind: OccluderKind::Pedestrian,
                    rect: Rect {
                        x: px,
                        y: top,
                        w: pw,
                        h: bottom - top,
                    },
                    gray: gray(&mut rng, PEDESTRIAN_GRAY),
                });
            }
            out
        }
    }
}

/// Writes `n` labeled frames plus seed backgrounds, a frame list, a label
/// file and a ready-to-run deployment config into `out_dir`:
///
/// ```text
/// seeds/seed_<k>.pgm      five background seeds
/// frames/frame_<i>.pgm    labeled frames (5-digit index)
/// frames.lst              frame list, camera SYN1 pan 0, 3 s cadence
/// labels.txt              <path>;<truth_violation>;<truth_band_occlusion>
/// config.toml             deployment pointing at the seeds
/// ```
pub fn gen_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetSummary, SynthError> {
    if spec.n == 0 {
        return Err(SynthError::Invalid("n must be at least 1".into()));
    }
    spec.mix.validate()?;
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(SynthError::Invalid(format!("noise_sigma {} must be >= 0", spec.noise_sigma)));
    }
    let frames_dir = out_dir.join("frames");
    let seeds_dir = out_dir.join("seeds");
    for dir in [&frames_dir, &seeds_dir] {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }

    let counts = spec.mix.counts(spec.n);
    let mut kinds: Vec<SceneKind> = [SceneKind::Vehicle, SceneKind::Pedestrian, SceneKind::Empty]
        .iter()
        .zip(counts)
        .flat_map(|(&k, c)| std::iter::repeat_n(k, c))
        .collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, TAG_SHUFFLE, 0));
    for i in (1..kinds.len()).rev() {
        let j = (shuffle.next_u64() % (i as u64 + 1)) as usize;
        kinds.swap(i, j);
    }

    let background_seed = derive_seed(spec.rng_seed, TAG_BACKGROUND, 0);
    let geometry = default_geometry();
    let base_scene = SceneSpec {
        noise_sigma: spec.noise_sigma,
        l_th: spec.l_th,
        geometry: geometry.clone(),
        ..SceneSpec::new(background_seed)
    };

    let seed_paths: Vec<String> = (0..MEAN_WINDOW).map(|k| format!("seeds/seed_{k}.pgm")).collect();
    seed_paths.par_iter().enumerate().try_for_each(|(k, rel)| {
        let scene = SceneSpec {
            rng_seed: derive_seed(spec.rng_seed, TAG_SEED_FRAME, k as u64),
            ..base_scene.clone()
        };
        let frame = gen_frame(&scene)?;
        let path = out_dir.join(rel);
        pnm::save_pgm(&path, &frame.image).map_err(|e| io_err(&path, e))
    })?;

    let labels: Vec<Label> = kinds
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| {
            let idx = i as u64;
            let mut layout = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, TAG_LAYOUT, idx));
            let offset = if spec.illumination_jitter > 0 {
                let j = spec.illumination_jitter;
                uniform(&mut layout, 0, 2 * j) as i32 - j as i32
            } else {
                0
            };
            let scene = SceneSpec {
                occluders: layout_scene(kind, layout.next_u64()),
                illumination_offset: offset,
                rng_seed: derive_seed(spec.rng_seed, TAG_NOISE, idx),
                ..base_scene.clone()
            };
            let frame = gen_frame(&scene)?;
            let rel = format!("frames/frame_{i:05}.pgm");
            let path = out_dir.join(&rel);
            pnm::save_pgm(&path, &frame.image).map_err(|e| io_err(&path, e))?;
            Ok(Label {
                path: rel,
                truth_violation: frame.truth_violation,
                truth_band_occlusion: frame.truth_band_occlusion,
            })
        })
        .collect::<Result<_, SynthError>>()?;

    let list_path = out_dir.join("frames.lst");
    let list: String = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let ts = Timestamp::from_unix(EPOCH + CAPTURE_INTERVAL_S * i as i64);
            format!("{SYNTH_CAMERA};0;{ts};{}\n", l.path)
        })
        .collect();
    fs::write(&list_path, list).map_err(|e| io_err(&list_path, e))?;

    let labels_path = out_dir.join("labels.txt");
    let text: String = labels.iter().map(|l| l.to_line() + "\n").collect();
    fs::write(&labels_path, text).map_err(|e| io_err(&labels_path, e))?;

    let mut camera = CameraConfig::fixed(SYNTH_CAMERA, "synthetic crossing", geometry);
    camera.l_th = spec.l_th;
    camera.pans[0].seed_images = seed_paths.iter().map(PathBuf::from).collect();
    let config_path = out_dir.join("config.toml");
    fs::write(&config_path, Deployment::new(vec![camera]).to_toml()).map_err(|e| io_err(&config_path, e))?;

    Ok(DatasetSummary {
        out_dir: out_dir.to_path_buf(),
        list_path,
        labels_path,
        config_path,
        counts,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_deterministic_and_bounded() {
        let a = gen_background((64, 48), 1);
        assert_eq!(a, gen_background((64, 48), 1));
        for y in 0..48 {
            for x in 0..64 {
                let g = gradient_value((64, 48), x, y) as i32;
                assert!((a.get(x, y) as i32 - g).abs() <= JITTER);
            }
        }
    }

    #[test]
    fn seeds_give_different_backgrounds() {
        let a = gen_background(DEFAULT_DIMS, 1);
        let b = gen_background(DEFAULT_DIMS, 2);
        let differing = a.pixels().iter().zip(b.pixels()).filter(|(p, q)| p != q).count();
        assert!(differing * 100 >= a.pixels().len(), "{differing}");
    }

    #[test]
    fn clean_frame_is_the_background() {
        let spec = SceneSpec::new(9);
        let frame = gen_frame(&spec).unwrap();
        assert_eq!(frame.image, gen_background(DEFAULT_DIMS, 9));
        assert!(!frame.truth_violation);
        assert_eq!(frame.truth_band_occlusion, 0);
    }

    fn flat_band(length: u32) -> StopLineGeometry {
        StopLineGeometry::new([100, 200], length, 0.0)
    }

    #[test]
    fn vehicle_truth() {
        let mut spec = SceneSpec::new(3);
        spec.geometry = flat_band(400);
        spec.occluders.push(OccluderSpec {
            kind: OccluderKind::Vehicle,
            rect: Rect { x: 150, y: 150, w: 300, h: 200 },
            gray: 240,
        });
        let frame = gen_frame(&spec).unwrap();
        assert_eq!(frame.truth_band_occlusion, 300);
        assert!(frame.truth_violation);
        assert_eq!(frame.image.get(150, 150), 240);
    }

    #[test]
    fn pedestrian_truth() {
        let mut spec = SceneSpec::new(3);
        spec.geometry = flat_band(400);
        for x in [150, 300] {
            spec.occluders.push(OccluderSpec {
                kind: OccluderKind::Pedestrian,
                rect: Rect { x, y: 180, w: 20, h: 60 },
                gray: 200,
            });
        }
        let frame = gen_frame(&spec).unwrap();
        assert_eq!(frame.truth_band_occlusion, 20);
        assert!(!frame.truth_violation);
    }

    #[test]
    fn occluder_bounds() {
        let mut spec = SceneSpec::new(3);
        spec.occluders.push(OccluderSpec {
            kind: OccluderKind::Vehicle,
            rect: Rect { x: 600, y: 0, w: 200, h: 10 },
            gray: 1,
        });
        assert!(matches!(gen_frame(&spec), Err(SynthError::OccluderOutOfBounds { index: 0, .. })));
    }

    #[test]
    fn noise_is_seeded_and_roughly_calibrated() {
        let mut spec = SceneSpec::new(4);
        spec.dims = (200, 200);
        spec.geometry = StopLineGeometry::new([0, 0], 10, 0.0);
        spec.noise_sigma = 8.0;
        spec.rng_seed = 77;
        let a = gen_frame(&spec).unwrap().image;
        assert_eq!(a, gen_frame(&spec).unwrap().image);
        let clean = gen_background((200, 200), 4);
        let n = a.pixels().len() as f64;
        let diffs: Vec<f64> = a.pixels().iter().zip(clean.pixels()).map(|(&p, &q)| p as f64 - q as f64).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.2, "{mean}");
        assert!((sd - 8.0).abs() < 0.3, "{sd}");
    }

    #[test]
    fn mix_counts_largest_remainder() {
        let mix: Mix = "0.4,0.3,0.3".parse().unwrap();
        assert_eq!(mix.counts(500), [200, 150, 150]);
        assert_eq!(mix.counts(1), [1, 0, 0]);
        assert_eq!(mix.counts(7), [3, 2, 2]);
        let thirds = Mix { vehicle: 1.0 / 3.0, pedestrian: 1.0 / 3.0, empty: 1.0 / 3.0 };
        assert_eq!(thirds.counts(10), [4, 3, 3]);
        assert!("0.4,0.3,0.2".parse::<Mix>().unwrap().validate().is_err());
        assert!("0.4,0.3".parse::<Mix>().is_err());
    }

    #[test]
    fn layouts_respect_the_thresholds() {
        let geometry = default_geometry();
        for seed in 0..200 {
            let v = layout_scene(SceneKind::Vehicle, seed);
            let rects: Vec<Rect> = v.iter().map(|o| o.rect).collect();
            assert!(band_occlusion_truth(&geometry, &rects) >= VEHICLE_MIN_W);
            let p = layout_scene(SceneKind::Pedestrian, seed);
            let rects: Vec<Rect> = p.iter().map(|o| o.rect).collect();
            let truth = band_occlusion_truth(&geometry, &rects);
            assert!((PEDESTRIAN_W.0..=PEDESTRIAN_W.1).contains(&truth), "{truth}");
            // the waiting vehicle stays clear of the band
            assert_eq!(band_occlusion_truth(&geometry, &rects[..1]), 0);
        }
    }

    #[test]
    fn labels_parse() {
        let l = Label::parse("frames/a;b.pgm;true;512").unwrap();
        assert_eq!(l.path, "frames/a;b.pgm");
        assert!(l.truth_violation);
        assert_eq!(l.truth_band_occlusion, 512);
        assert_eq!(Label::parse(&l.to_line()).unwrap(), l);
        assert!(Label::parse("x;maybe;1").is_err());
    }

    #[test]
    fn single_vehicle_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(1, "1,0,0".parse().unwrap(), 0.0, 5);
        let summary = gen_dataset(&spec, dir.path()).unwrap();
        assert_eq!(summary.counts, [1, 0, 0]);
        let labels = read_labels(&summary.labels_path).unwrap();
        assert_eq!(labels.len(), 1);
        assert!(labels[0].truth_violation);
        assert!(Deployment::load(&summary.config_path).is_ok());
    }
}
