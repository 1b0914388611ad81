//! Frame list files.
//!
//! One frame per line, UTF-8, LF endings:
//!
//! ```text
//! <camera_id>;<pan_index>;<ISO-8601 timestamp>;<path>
//! CAM1;0;2024-03-01T18:04:09Z;frames/cam1/000123.bmp
//! ```
//!
//! Timestamps carry second precision; a trailing `Z`, an explicit offset, or
//! no zone at all (read as UTC) are accepted. Relative paths resolve against
//! the list file's directory. Blank lines are skipped; any other line that
//! does not parse becomes a warning and ingestion continues.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameListError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// UTC instant with whole-second precision, written as `YYYY-MM-DDTHH:MM:SSZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn parse(text: &str) -> Result<Self, String> {
        let parsed = DateTime::parse_from_rfc3339(text)
            .map(|dt| dt.with_timezone(&Utc))
            .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S").map(|n| n.and_utc()))
            .map_err(|_| format!("invalid ISO-8601 timestamp `{text}`"))?;
        if parsed.nanosecond() != 0 {
            return Err(format!("timestamp `{text}` has sub-second precision"));
        }
        Ok(Self(parsed))
    }

    pub fn from_unix(secs: i64) -> Self {
        Self(DateTime::from_timestamp(secs, 0).expect("timestamp in range"))
    }

    pub fn now() -> Self {
        Self::from_unix(Utc::now().timestamp())
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Timestamp::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// One captured frame as listed on disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Path exactly as written in the list file.
    pub path: String,
    pub camera_id: String,
    pub pan_index: u32,
    pub captured_at: Timestamp,
    /// 1-based position within the frame's camera/pan stream.
    pub sequence_no: u64,
}

impl FrameRecord {
    pub fn stream(&self) -> StreamKey {
        StreamKey {
            camera_id: self.camera_id.clone(),
            pan_index: self.pan_index,
        }
    }

    /// Stable identifier `<camera_id>-<pan_index>-<sequence_no>`.
    pub fn frame_id(&self) -> String {
        format!("{}-{}-{}", self.camera_id, self.pan_index, self.sequence_no)
    }

    pub fn to_line(&self) -> String {
        format!("{};{};{};{}", self.camera_id, self.pan_index, self.captured_at, self.path)
    }
}

/// Splits a frame id back into camera, pan and sequence number.
pub fn parse_frame_id(id: &str) -> Option<(String, u32, u64)> {
    let mut parts = id.rsplitn(3, '-');
    let seq = parts.next()?.parse().ok()?;
    let pan = parts.next()?.parse().ok()?;
    let camera = parts.next()?;
    if camera.is_empty() {
        return None;
    }
    Some((camera.to_string(), pan, seq))
}

/// Identifies one camera/pan stream; each owns an independent background model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamKey {
    pub camera_id: String,
    pub pan_index: u32,
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/pan{}", self.camera_id, self.pan_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineWarning {
    pub line_no: usize,
    pub message: String,
}

impl fmt::Display for LineWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line_no, self.message)
    }
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub frames: Vec<FrameRecord>,
    pub warnings: Vec<LineWarning>,
}

/// Parses list lines, assigning per-stream sequence numbers. Keeps its
/// counters so a tailing reader can feed later lines to the same parser.
#[derive(Debug, Default)]
pub struct ListParser {
    next_seq: HashMap<StreamKey, u64>,
    lines_read: usize,
}

impl ListParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines_read(&self) -> usize {
        self.lines_read
    }

    /// Parses one line (without its terminator). `Ok(None)` for blank lines.
    pub fn parse_line(&mut self, line: &str) -> Result<Option<FrameRecord>, LineWarning> {
        self.lines_read += 1;
        let line_no = self.lines_read;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            return Ok(None);
        }
        let warn = |message: String| LineWarning { line_no, message };
        let fields: Vec<&str> = line.splitn(4, ';').collect();
        let [camera_id, pan, ts, path] = fields[..] else {
            return Err(warn(format!("expected 4 ';'-separated fields, got {}", fields.len())));
        };
        let camera_id = camera_id.trim();
        if camera_id.is_empty() {
            return Err(warn("empty camera_id".into()));
        }
        let pan_index: u32 = pan
            .trim()
            .parse()
            .map_err(|_| warn(format!("invalid pan_index `{pan}`")))?;
        let captured_at = Timestamp::parse(ts.trim()).map_err(warn)?;
        let path = path.trim();
        if path.is_empty() {
            return Err(warn("empty path".into()));
        }
        let key = StreamKey {
            camera_id: camera_id.to_string(),
            pan_index,
        };
        let seq = self.next_seq.entry(key).or_insert(0);
        *seq += 1;
        Ok(Some(FrameRecord {
            path: path.to_string(),
            camera_id: camera_id.to_string(),
            pan_index,
            captured_at,
            sequence_no: *seq,
        }))
    }

    pub fn parse_text(&mut self, text: &str) -> Ingested {
        let mut out = Ingested::default();
        for line in text.lines() {
            match self.parse_line(line) {
                Ok(Some(frame)) => out.frames.push(frame),
                Ok(None) => {}
                Err(w) => out.warnings.push(w),
            }
        }
        out
    }
}

/// Reads a whole list file in order.
pub fn ingest_list(list_path: &Path) -> Result<Ingested, FrameListError> {
    let text = fs::read_to_string(list_path).map_err(|source| FrameListError::Io {
        path: list_path.display().to_string(),
        source,
    })?;
    Ok(ListParser::new().parse_text(&text))
}

/// Directory that relative frame paths in `list_path` resolve against.
pub fn list_base_dir(list_path: &Path) -> PathBuf {
    list_path.parent().map(Path::to_path_buf).unwrap_or_default()
}
