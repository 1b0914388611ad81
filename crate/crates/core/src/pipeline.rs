//! Frame-list driven detection.
//!
//! Each camera/pan stream owns a background model and a rasterized scan
//! band. Frames of one stream are processed strictly in list order; distinct
//! streams run on the rayon pool. Events are merged back into list order
//! before anything touches the record store, so output is independent of
//! scheduling.
//!
//! Checkpoint layout under `checkpoint_dir`:
//!
//! ```text
//! <camera_id>/pan<k>/latest/      full model (ring_0..4.pgm, mean.pgm, meta.json)
//! <camera_id>/pan<k>/means/<seq>.pgm   mean background after frame <seq> (10 digits)
//! ```
//!
//! `latest` is rewritten at the end of every batch; `means/` snapshots are
//! taken every `snapshot_every` accepted backgrounds and back re-detection.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::background::{BackgroundError, BackgroundModel, FrameClass};
use crate::config::{CameraConfig, Deployment, PanPreset};
use crate::framelist::{FrameRecord, StreamKey};
use crate::image::{GrayImage, MEAN_WINDOW};
use crate::pnm;
use crate::stopline::{occlusion_score_bridged, rasterize_band, OcclusionResult, ScanBand};
use crate::store::{BackgroundEvent, RecordStore, ReviewStatus, StoreError, ViolationRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("checkpoint for {stream}: {source}")]
    Checkpoint {
        stream: StreamKey,
        #[source]
        source: BackgroundError,
    },
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Seed each unseeded stream with its first five frames.
    pub seed_from_frames: bool,
    pub checkpoint_dir: Option<PathBuf>,
    /// Accepted backgrounds between mean snapshots; 0 disables snapshots.
    pub snapshot_every: u32,
    /// Restore models from `latest` checkpoints and skip frames they cover.
    pub resume: bool,
    /// Append a store entry for every accepted background frame.
    pub log_backgrounds: bool,
    /// Directory that relative frame paths resolve against.
    pub frames_base: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed_from_frames: false,
            checkpoint_dir: None,
            snapshot_every: 1,
            resume: false,
            log_backgrounds: false,
            frames_base: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FrameEvent {
    /// `mean_diff` is `None` for frames taken verbatim as seeds.
    BackgroundAccepted { mean_diff: Option<f64> },
    NoViolation {
        mean_diff: f64,
        score: OcclusionResult,
    },
    Violation { record: Box<ViolationRecord> },
    Error { message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub frames_seen: u64,
    pub backgrounds_accepted: u64,
    pub foregrounds: u64,
    pub violations: u64,
    pub errors: u64,
}

impl PipelineStats {
    pub fn record(&mut self, event: &FrameEvent) {
        self.frames_seen += 1;
        match event {
            FrameEvent::BackgroundAccepted { .. } => self.backgrounds_accepted += 1,
            FrameEvent::NoViolation { .. } => self.foregrounds += 1,
            FrameEvent::Violation { .. } => {
                self.foregrounds += 1;
                self.violations += 1;
            }
            FrameEvent::Error { .. } => self.errors += 1,
        }
    }

    pub fn merge(&mut self, other: &PipelineStats) {
        self.frames_seen += other.frames_seen;
        self.backgrounds_accepted += other.backgrounds_accepted;
        self.foregrounds += other.foregrounds;
        self.violations += other.violations;
        self.errors += other.errors;
    }

    /// `frames_seen == backgrounds_accepted + foregrounds + errors`
    pub fn is_conserved(&self) -> bool {
        self.frames_seen == self.backgrounds_accepted + self.foregrounds + self.errors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameOutcome {
    pub frame: FrameRecord,
    #[serde(flatten)]
    pub event: FrameEvent,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub stats: PipelineStats,
    pub outcomes: Vec<FrameOutcome>,
}

/// Directory holding one stream's checkpoints.
pub fn stream_dir(checkpoint_dir: &Path, key: &StreamKey) -> PathBuf {
    checkpoint_dir
        .join(&key.camera_id)
        .join(format!("pan{}", key.pan_index))
}

fn snapshot_name(seq: u64) -> String {
    format!("{seq:010}.pgm")
}

/// Mean-background snapshot taken strictly before frame `sequence_no`.
pub fn snapshot_before(checkpoint_dir: &Path, key: &StreamKey, sequence_no: u64) -> Option<(u64, PathBuf)> {
    let dir = stream_dir(checkpoint_dir, key).join("means");
    let entries = fs::read_dir(&dir).ok()?;
    entries
        .filter_map(|e| {
            let path = e.ok()?.path();
            let seq: u64 = path.file_stem()?.to_str()?.parse().ok()?;
            (seq < sequence_no).then_some((seq, path))
        })
        .max_by_key(|(seq, _)| *seq)
}

struct Stream {
    key: StreamKey,
    camera: CameraConfig,
    band: Option<ScanBand>,
    model: Option<BackgroundModel>,
    pending_seeds: Vec<GrayImage>,
    init_error: Option<String>,
    skip_through: u64,
    accepts_since_snapshot: u32,
    last_seq: u64,
    dirty: bool,
}

struct Ctx<'a> {
    options: &'a RunOptions,
}

impl Stream {
    fn open(key: StreamKey, camera: &CameraConfig, pan: &PanPreset, deployment: &Deployment, options: &RunOptions) -> Self {
        let mut stream = Stream {
            key,
            camera: camera.clone(),
            band: None,
            model: None,
            pending_seeds: Vec::new(),
            init_error: None,
            skip_through: 0,
            accepts_since_snapshot: 0,
            last_seq: 0,
            dirty: false,
        };
        match rasterize_band(&pan.geometry, camera.frame_width, camera.frame_height) {
            Ok(band) => stream.band = Some(band),
            Err(e) => {
                stream.init_error = Some(format!("calibration for {}: {e}", stream.key));
                return stream;
            }
        }
        if options.resume {
            if let Some(dir) = &options.checkpoint_dir {
                let latest = stream_dir(dir, &stream.key).join("latest");
                if latest.join("meta.json").exists() {
                    match BackgroundModel::load_checkpoint(&latest) {
                        Ok((mut model, seq)) => {
                            // thresholds come from the current config, not the checkpoint
                            let _ = model.set_d_th(camera.d_th);
                            stream.model = Some(model);
                            stream.skip_through = seq;
                            stream.last_seq = seq;
                        }
                        Err(e) => stream.init_error = Some(format!("resume {}: {e}", stream.key)),
                    }
                    return stream;
                }
            }
        }
        if !pan.seed_images.is_empty() {
            let seeds: Result<Vec<GrayImage>, String> = pan
                .seed_images
                .iter()
                .map(|p| {
                    let path = deployment.resolve(p);
                    let img = pnm::load_gray(&path).map_err(|e| e.to_string())?;
                    stream.check_dims(&img)?;
                    Ok(img)
                })
                .collect();
            match seeds.and_then(|s| BackgroundModel::seed(s, camera.d_th).map_err(|e| e.to_string())) {
                Ok(model) => {
                    stream.model = Some(model);
                    stream.dirty = true;
                    if let Err(e) = stream.snapshot(options, 0) {
                        stream.init_error = Some(e);
                    }
                }
                Err(e) => stream.init_error = Some(format!("seed images for {}: {e}", stream.key)),
            }
        }
        stream
    }

    fn check_dims(&self, img: &GrayImage) -> Result<(), String> {
        let expected = (self.camera.frame_width, self.camera.frame_height);
        if img.dimensions() != expected {
            return Err(format!(
                "frame is {}x{}, {} is configured for {}x{}",
                img.width(),
                img.height(),
                self.key,
                expected.0,
                expected.1
            ));
        }
        Ok(())
    }

    fn snapshot(&mut self, options: &RunOptions, seq: u64) -> Result<(), String> {
        let (Some(dir), Some(model)) = (&options.checkpoint_dir, &self.model) else {
            return Ok(());
        };
        if options.snapshot_every == 0 {
            return Ok(());
        }
        let means = stream_dir(dir, &self.key).join("means");
        fs::create_dir_all(&means).map_err(|e| format!("{}: {e}", means.display()))?;
        pnm::save_pgm(&means.join(snapshot_name(seq)), model.current_background()).map_err(|e| e.to_string())
    }

    /// `None` when the frame is already covered by a resumed checkpoint.
    fn process(&mut self, frame: &FrameRecord, ctx: &Ctx) -> Option<FrameEvent> {
        if frame.sequence_no <= self.skip_through {
            return None;
        }
        if let Some(e) = &self.init_error {
            return Some(FrameEvent::Error { message: e.clone() });
        }
        Some(self.process_loaded(frame, ctx).unwrap_or_else(|message| FrameEvent::Error { message }))
    }

    fn process_loaded(&mut self, frame: &FrameRecord, ctx: &Ctx) -> Result<FrameEvent, String> {
        let path = ctx.options.frames_base.join(&frame.path);
        let img = pnm::load_gray(&path).map_err(|e| e.to_string())?;
        self.check_dims(&img)?;
        self.last_seq = frame.sequence_no;

        let Some(model) = self.model.as_mut() else {
            if !ctx.options.seed_from_frames {
                return Err(format!("{} has no background model (no seed images configured)", self.key));
            }
            self.pending_seeds.push(img);
            if self.pending_seeds.len() == MEAN_WINDOW {
                let seeds = std::mem::take(&mut self.pending_seeds);
                self.model = Some(BackgroundModel::seed(seeds, self.camera.d_th).map_err(|e| e.to_string())?);
                self.dirty = true;
                self.snapshot(ctx.options, frame.sequence_no)?;
            }
            return Ok(FrameEvent::BackgroundAccepted { mean_diff: None });
        };

        match model.classify_and_update(&img).map_err(|e| e.to_string())? {
            FrameClass::Background { mean_diff } => {
                self.dirty = true;
                self.accepts_since_snapshot += 1;
                if ctx.options.snapshot_every > 0 && self.accepts_since_snapshot >= ctx.options.snapshot_every {
                    self.accepts_since_snapshot = 0;
                    self.snapshot(ctx.options, frame.sequence_no)?;
                }
                Ok(FrameEvent::BackgroundAccepted {
                    mean_diff: Some(mean_diff),
                })
            }
            FrameClass::Foreground { diff, mean_diff } => {
                let band = self.band.as_ref().expect("band exists when init succeeded");
                let score = occlusion_score_bridged(&diff, band, self.camera.pixel_th, self.camera.gap_bridge_px)
                    .map_err(|e| format!("calibration for {}: {e}", self.key))?;
                let result = score.judge(self.camera.l_th);
                if !result.violated {
                    return Ok(FrameEvent::NoViolation { mean_diff, score: result });
                }
                Ok(FrameEvent::Violation {
                    record: Box::new(ViolationRecord {
                        violation_id: String::new(),
                        frame: frame.clone(),
                        mean_longest_run: result.mean_longest_run,
                        per_line_longest_run: result.per_line_longest_run,
                        mean_diff,
                        thresholds_used: self.camera.thresholds(),
                        status: ReviewStatus::Pending,
                        slip_no: None,
                        reviewed_by: None,
                        reviewed_at: None,
                    }),
                })
            }
        }
    }

    fn save_latest(&mut self, options: &RunOptions) -> Result<(), PipelineError> {
        let (Some(dir), Some(model)) = (&options.checkpoint_dir, &self.model) else {
            return Ok(());
        };
        if !self.dirty {
            return Ok(());
        }
        model
            .save_checkpoint(&stream_dir(dir, &self.key).join("latest"), self.last_seq)
            .map_err(|source| PipelineError::Checkpoint {
                stream: self.key.clone(),
                source,
            })?;
        self.dirty = false;
        Ok(())
    }
}

/// Long-lived detector over a deployment; keeps per-stream state between
/// batches so a tailing reader can feed frames as they arrive.
pub struct Pipeline {
    deployment: Deployment,
    options: RunOptions,
    streams: BTreeMap<StreamKey, Stream>,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(deployment: Deployment, options: RunOptions) -> Self {
        Self {
            deployment,
            options,
            streams: BTreeMap::new(),
            stats: PipelineStats::default(),
        }
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    /// Current mean background of a stream, if seeded.
    pub fn background(&self, key: &StreamKey) -> Option<&GrayImage> {
        self.streams.get(key)?.model.as_ref().map(|m| m.current_background())
    }

    fn ensure_stream(&mut self, key: &StreamKey) -> Result<(), String> {
        if self.streams.contains_key(key) {
            return Ok(());
        }
        let (camera, pan) = self
            .deployment
            .stream(&key.camera_id, key.pan_index)
            .map_err(|e| e.to_string())?;
        let stream = Stream::open(key.clone(), camera, pan, &self.deployment, &self.options);
        self.streams.insert(key.clone(), stream);
        Ok(())
    }

    /// Processes `frames` (in list order) and appends violations to `store`.
    pub fn process_batch(&mut self, frames: &[FrameRecord], store: &mut RecordStore) -> Result<BatchOutcome, PipelineError> {
        let mut slots: Vec<Option<FrameEvent>> = vec![None; frames.len()];
        let mut by_stream: HashMap<StreamKey, Vec<usize>> = HashMap::new();
        for (i, frame) in frames.iter().enumerate() {
            let key = frame.stream();
            match self.ensure_stream(&key) {
                Ok(()) => by_stream.entry(key).or_default().push(i),
                Err(message) => slots[i] = Some(FrameEvent::Error { message }),
            }
        }

        let mut work: Vec<(Stream, Vec<usize>)> = by_stream
            .into_iter()
            .map(|(key, idx)| (self.streams.remove(&key).expect("ensured"), idx))
            .collect();
        let ctx = Ctx { options: &self.options };
        let results: Vec<Vec<(usize, Option<FrameEvent>)>> = work
            .par_iter_mut()
            .map(|(stream, idx)| idx.iter().map(|&i| (i, stream.process(&frames[i], &ctx))).collect())
            .collect();
        for (mut stream, _) in work {
            let saved = stream.save_latest(&self.options);
            self.streams.insert(stream.key.clone(), stream);
            saved?;
        }
        let mut skipped = vec![false; frames.len()];
        for (i, event) in results.into_iter().flatten() {
            match event {
                Some(e) => slots[i] = Some(e),
                None => skipped[i] = true,
            }
        }

        let mut outcome = BatchOutcome::default();
        for (i, slot) in slots.into_iter().enumerate() {
            if skipped[i] {
                continue;
            }
            let mut event = slot.expect("every frame produced an event");
            let frame = &frames[i];
            match &mut event {
                FrameEvent::Violation { record } => {
                    let id = store.persist_violation((**record).clone())?;
                    record.violation_id = id;
                }
                FrameEvent::BackgroundAccepted { mean_diff: Some(mean_diff) } if self.options.log_backgrounds => {
                    store.log_background(BackgroundEvent {
                        camera_id: frame.camera_id.clone(),
                        pan_index: frame.pan_index,
                        sequence_no: frame.sequence_no,
                        captured_at: frame.captured_at,
                        mean_diff: *mean_diff,
                    })?;
                }
                _ => {}
            }
            outcome.stats.record(&event);
            outcome.outcomes.push(FrameOutcome {
                frame: frame.clone(),
                event,
            });
        }
        self.stats.merge(&outcome.stats);
        Ok(outcome)
    }
}

/// One-shot batch run over a complete frame list.
pub fn run(
    deployment: &Deployment,
    frames: &[FrameRecord],
    store: &mut RecordStore,
    options: &RunOptions,
) -> Result<BatchOutcome, PipelineError> {
    Pipeline::new(deployment.clone(), options.clone()).process_batch(frames, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framelist::Timestamp;
    use crate::stopline::StopLineGeometry;

    const W: u32 = 120;
    const H: u32 = 60;

    fn deployment(dir: &Path) -> Deployment {
        let bg = GrayImage::filled(W, H, 60).unwrap();
        let mut seeds = Vec::new();
        for i in 0..5 {
            let p = dir.join(format!("seed{i}.pgm"));
            pnm::save_pgm(&p, &bg).unwrap();
            seeds.push(p);
        }
        let mut cam = CameraConfig::fixed("CAM1", "test", StopLineGeometry::new([10, 20], 100, 0.0));
        cam.frame_width = W;
        cam.frame_height = H;
        cam.l_th = 60.0;
        cam.pans[0].seed_images = seeds;
        Deployment::new(vec![cam])
    }

    fn frame(dir: &Path, name: &str, seq: u64, img: &GrayImage) -> FrameRecord {
        pnm::save_pgm(&dir.join(name), img).unwrap();
        FrameRecord {
            path: name.to_string(),
            camera_id: "CAM1".into(),
            pan_index: 0,
            captured_at: Timestamp::from_unix(1_000 + 3 * seq as i64),
            sequence_no: seq,
        }
    }

    fn options(dir: &Path) -> RunOptions {
        RunOptions {
            frames_base: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn background_vehicle_and_pedestrian_frames() {
        let dir = tempfile::tempdir().unwrap();
        let d = deployment(dir.path());
        let bg = GrayImage::filled(W, H, 60).unwrap();
        // whole frame bright except a dark band region -> mean diff high
        let vehicle = GrayImage::from_fn(W, H, |x, _| if (20..100).contains(&x) { 250 } else { 200 }).unwrap();
        let walkers = GrayImage::from_fn(W, H, |x, y| {
            if !(15..=40).contains(&y) || (30..40).contains(&x) || (70..80).contains(&x) {
                250
            } else {
                60
            }
        })
        .unwrap();
        let frames = vec![
            frame(dir.path(), "a.pgm", 1, &bg),
            frame(dir.path(), "b.pgm", 2, &vehicle),
            frame(dir.path(), "c.pgm", 3, &walkers),
        ];
        let mut store = RecordStore::in_memory();
        let out = run(&d, &frames, &mut store, &options(dir.path())).unwrap();
        assert_eq!(out.outcomes[0].event, FrameEvent::BackgroundAccepted { mean_diff: Some(0.0) });
        match &out.outcomes[1].event {
            FrameEvent::Violation { record } => {
                assert_eq!(record.per_line_longest_run, vec![100; 5]);
                assert_eq!(record.violation_id, "V00000001");
            }
            other => panic!("{other:?}"),
        }
        match &out.outcomes[2].event {
            FrameEvent::NoViolation { score, .. } => assert_eq!(score.mean_longest_run, 10.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            out.stats,
            PipelineStats {
                frames_seen: 3,
                backgrounds_accepted: 1,
                foregrounds: 2,
                violations: 1,
                errors: 0
            }
        );
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn errors_are_counted_and_processing_continues() {
        let dir = tempfile::tempdir().unwrap();
        let d = deployment(dir.path());
        let bg = GrayImage::filled(W, H, 60).unwrap();
        let mut frames = vec![frame(dir.path(), "a.pgm", 1, &bg)];
        frames.push(FrameRecord {
            path: "missing.pgm".into(),
            ..frames[0].clone()
        });
        frames.push(FrameRecord {
            camera_id: "CAM7".into(),
            ..frames[0].clone()
        });
        let small = GrayImage::filled(10, 10, 60).unwrap();
        frames.push(frame(dir.path(), "small.pgm", 3, &small));
        frames.push(frame(dir.path(), "b.pgm", 4, &bg));
        let mut store = RecordStore::in_memory();
        let out = run(&d, &frames, &mut store, &options(dir.path())).unwrap();
        assert_eq!(out.stats.errors, 3);
        assert_eq!(out.stats.backgrounds_accepted, 2);
        assert!(out.stats.is_conserved());
        match &out.outcomes[2].event {
            FrameEvent::Error { message } => assert!(message.contains("CAM7")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unseeded_stream_without_bootstrap_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = deployment(dir.path());
        d.cameras[0].pans[0].seed_images.clear();
        let bg = GrayImage::filled(W, H, 60).unwrap();
        let frames = vec![frame(dir.path(), "a.pgm", 1, &bg)];
        let out = run(&d, &frames, &mut RecordStore::in_memory(), &options(dir.path())).unwrap();
        assert_eq!(out.stats.errors, 1);
    }

    #[test]
    fn bootstrap_from_first_five_frames() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = deployment(dir.path());
        d.cameras[0].pans[0].seed_images.clear();
        let frames: Vec<FrameRecord> = (1..=6)
            .map(|i| {
                let img = GrayImage::filled(W, H, 50 + i as u8).unwrap();
                frame(dir.path(), &format!("f{i}.pgm"), i, &img)
            })
            .collect();
        let ckpt = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            seed_from_frames: true,
            checkpoint_dir: Some(ckpt.path().to_path_buf()),
            ..options(dir.path())
        };
        let mut pipeline = Pipeline::new(d, opts);
        let out = pipeline.process_batch(&frames, &mut RecordStore::in_memory()).unwrap();
        for o in &out.outcomes[..5] {
            assert_eq!(o.event, FrameEvent::BackgroundAccepted { mean_diff: None });
        }
        // seeds 51..55 average to 53; frame 6 is 56 -> diff 3
        assert_eq!(out.outcomes[5].event, FrameEvent::BackgroundAccepted { mean_diff: Some(3.0) });
        let key = frames[0].stream();
        let (seq, path) = snapshot_before(ckpt.path(), &key, 6).unwrap();
        assert_eq!(seq, 5);
        assert_eq!(pnm::load_gray(&path).unwrap(), GrayImage::filled(W, H, 53).unwrap());
        let (seq, _) = snapshot_before(ckpt.path(), &key, 100).unwrap();
        assert_eq!(seq, 6);
        assert_eq!(
            pipeline.background(&key),
            Some(&GrayImage::filled(W, H, 54).unwrap())
        );
    }

    #[test]
    fn resume_skips_covered_frames() {
        let dir = tempfile::tempdir().unwrap();
        let d = deployment(dir.path());
        let frames: Vec<FrameRecord> = (1..=8)
            .map(|i| {
                let img = GrayImage::filled(W, H, 60 + i as u8).unwrap();
                frame(dir.path(), &format!("f{i}.pgm"), i, &img)
            })
            .collect();
        let ckpt = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            checkpoint_dir: Some(ckpt.path().to_path_buf()),
            resume: true,
            ..options(dir.path())
        };
        // one straight run as the reference
        let mut reference = Pipeline::new(d.clone(), RunOptions { checkpoint_dir: None, ..opts.clone() });
        reference.process_batch(&frames, &mut RecordStore::in_memory()).unwrap();

        let first = run(&d, &frames[..5], &mut RecordStore::in_memory(), &opts).unwrap();
        assert_eq!(first.stats.frames_seen, 5);
        let mut resumed = Pipeline::new(d, opts);
        let second = resumed.process_batch(&frames, &mut RecordStore::in_memory()).unwrap();
        assert_eq!(second.stats.frames_seen, 3);
        let key = frames[0].stream();
        assert_eq!(resumed.background(&key), reference.background(&key));
    }
}
