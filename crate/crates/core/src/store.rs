//! Append-only violation record store.
//!
//! The file holds one JSON object per line, each tagged by `event`:
//!
//! * `violation`: a newly detected violation; all [`ViolationRecord`]
//!   fields inline, `status` always `pending`.
//! * `review`: a status transition: `violation_id`, `status`
//!   (`confirmed` | `dismissed`), `operator`, `reviewed_at`, and `slip_no`
//!   for confirmations.
//! * `background_accepted`: optional audit entry for a frame admitted into
//!   a background model.
//!
//! Opening a store replays every line into an in-memory index. A trailing
//! line without its newline is the remnant of an interrupted append and is
//! truncated away. Each append is a single `write` of one complete line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Thresholds;
use crate::framelist::{FrameRecord, Timestamp};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line_no}: corrupt record: {message}")]
    Corrupt {
        path: String,
        line_no: usize,
        message: String,
    },
    #[error("record rejected: {0}")]
    Invalid(String),
    #[error("no violation `{0}`")]
    NotFound(String),
    #[error("violation `{id}` is already {status}")]
    Conflict { id: String, status: ReviewStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Confirmed,
    Dismissed,
}

impl std::fmt::Display for ReviewStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReviewStatus::Pending => "pending",
            ReviewStatus::Confirmed => "confirmed",
            ReviewStatus::Dismissed => "dismissed",
        })
    }
}

impl std::str::FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pending" => Ok(ReviewStatus::Pending),
            "confirmed" => Ok(ReviewStatus::Confirmed),
            "dismissed" => Ok(ReviewStatus::Dismissed),
            _ => Err(format!("unknown status `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirm,
    Dismiss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    /// Assigned by the store when empty.
    pub violation_id: String,
    pub frame: FrameRecord,
    pub mean_longest_run: f64,
    pub per_line_longest_run: Vec<u32>,
    pub mean_diff: f64,
    pub thresholds_used: Thresholds,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slip_no: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_at: Option<Timestamp>,
}

impl ViolationRecord {
    fn check(&self) -> Result<(), StoreError> {
        if self.per_line_longest_run.is_empty() {
            return Err(StoreError::Invalid("per_line_longest_run is empty".into()));
        }
        let sum: u64 = self.per_line_longest_run.iter().map(|&r| r as u64).sum();
        let mean = sum as f64 / self.per_line_longest_run.len() as f64;
        if mean != self.mean_longest_run {
            return Err(StoreError::Invalid(format!(
                "mean_longest_run {} is not the mean of the per-line runs ({mean})",
                self.mean_longest_run
            )));
        }
        if !crate::stopline::is_violation(self.mean_longest_run, self.thresholds_used.l_th) {
            return Err(StoreError::Invalid(format!(
                "mean_longest_run {} does not exceed l_th {}",
                self.mean_longest_run, self.thresholds_used.l_th
            )));
        }
        if self.status != ReviewStatus::Pending || self.slip_no.is_some() {
            return Err(StoreError::Invalid("new records must be pending without a slip".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub violation_id: String,
    pub status: ReviewStatus,
    pub operator: String,
    pub reviewed_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slip_no: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEvent {
    pub camera_id: String,
    pub pan_index: u32,
    pub sequence_no: u64,
    pub captured_at: Timestamp,
    pub mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StoreEvent {
    Violation(ViolationRecord),
    Review(ReviewEvent),
    BackgroundAccepted(BackgroundEvent),
}

/// Filter for [`RecordStore::query`]. Time bounds are inclusive.
#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub status: Option<ReviewStatus>,
    pub camera_id: Option<String>,
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
}

impl RecordFilter {
    fn matches(&self, r: &ViolationRecord) -> bool {
        self.status.is_none_or(|s| r.status == s)
            && self.camera_id.as_deref().is_none_or(|c| r.frame.camera_id == c)
            && self.from.is_none_or(|t| r.frame.captured_at >= t)
            && self.to.is_none_or(|t| r.frame.captured_at <= t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub records: Vec<ViolationRecord>,
}

#[derive(Debug, Default)]
pub struct RecordStore {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<ViolationRecord>,
    index: HashMap<String, usize>,
    slips_issued: u64,
    backgrounds_logged: u64,
    /// Bytes and lines of the backing file already applied.
    consumed: u64,
    lines: usize,
}

pub const SLIP_DIGITS: usize = 6;

impl RecordStore {
    /// Store without a backing file.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if absent) and replays the store at `path`.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            file.set_len(complete as u64).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        let mut store = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        store.apply_text(&text[..complete])?;
        store.consumed = complete as u64;
        store.file = Some(file);
        Ok(store)
    }

    fn apply_text(&mut self, text: &str) -> Result<(), StoreError> {
        let path = self.path.clone().unwrap_or_default();
        for line in text.lines() {
            self.lines += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.lines;
            let corrupt = |message: String| StoreError::Corrupt {
                path: path.display().to_string(),
                line_no,
                message,
            };
            let event: StoreEvent = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            self.apply(event).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies complete lines appended to the file by another writer since
    /// the last open, append or refresh. Returns the number of new events.
    pub fn refresh(&mut self) -> Result<usize, StoreError> {
        let (Some(path), Some(file)) = (self.path.clone(), self.file.as_mut()) else {
            return Ok(0);
        };
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let len = file.metadata().map_err(io)?.len();
        if len < self.consumed {
            return Err(StoreError::Corrupt {
                path: path.display().to_string(),
                line_no: 0,
                message: format!("file shrank from {} to {len} bytes", self.consumed),
            });
        }
        if len == self.consumed {
            return Ok(0);
        }
        let mut reader = File::open(&path).map_err(io)?;
        reader.seek(SeekFrom::Start(self.consumed)).map_err(io)?;
        let mut text = String::new();
        reader.read_to_string(&mut text).map_err(io)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        let new = &text[..complete];
        self.apply_text(new)?;
        self.consumed += complete as u64;
        Ok(new.lines().filter(|l| !l.trim().is_empty()).count())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn apply(&mut self, event: StoreEvent) -> Result<(), StoreError> {
        match event {
            StoreEvent::Violation(record) => {
                if self.index.contains_key(&record.violation_id) {
                    return Err(StoreError::Invalid(format!(
                        "duplicate violation_id `{}`",
                        record.violation_id
                    )));
                }
                self.index.insert(record.violation_id.clone(), self.records.len());
                self.records.push(record);
            }
            StoreEvent::Review(review) => {
                let pos = *self
                    .index
                    .get(&review.violation_id)
                    .ok_or_else(|| StoreError::NotFound(review.violation_id.clone()))?;
                let record = &mut self.records[pos];
                if record.status != ReviewStatus::Pending {
                    return Err(StoreError::Conflict {
                        id: review.violation_id,
                        status: record.status,
                    });
                }
                record.status = review.status;
                record.reviewed_by = Some(review.operator);
                record.reviewed_at = Some(review.reviewed_at);
                if review.slip_no.is_some() {
                    self.slips_issued += 1;
                }
                record.slip_no = review.slip_no;
            }
            StoreEvent::BackgroundAccepted(_) => self.backgrounds_logged += 1,
        }
        Ok(())
    }

    fn write_event(&mut self, event: &StoreEvent) -> Result<(), StoreError> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let path = self.path.as_ref().expect("file-backed store has a path");
        file.write_all(line.as_bytes()).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.consumed += line.len() as u64;
        self.lines += 1;
        Ok(())
    }

    /// Validates and appends a new pending record, returning its id.
    pub fn persist_violation(&mut self, mut record: ViolationRecord) -> Result<String, StoreError> {
        record.check()?;
        if record.violation_id.is_empty() {
            record.violation_id = format!("V{:08}", self.records.len() + 1);
        }
        if self.index.contains_key(&record.violation_id) {
            return Err(StoreError::Invalid(format!(
                "duplicate violation_id `{}`",
                record.violation_id
            )));
        }
        let id = record.violation_id.clone();
        let event = StoreEvent::Violation(record);
        self.write_event(&event)?;
        self.apply(event)?;
        Ok(id)
    }

    pub fn log_background(&mut self, event: BackgroundEvent) -> Result<(), StoreError> {
        let event = StoreEvent::BackgroundAccepted(event);
        self.write_event(&event)?;
        self.apply(event)
    }

    /// Moves a pending record to confirmed or dismissed. A confirmation mints
    /// the next slip number.
    pub fn review(
        &mut self,
        violation_id: &str,
        verdict: Verdict,
        operator: &str,
        at: Timestamp,
    ) -> Result<ViolationRecord, StoreError> {
        let record = self
            .get(violation_id)
            .ok_or_else(|| StoreError::NotFound(violation_id.to_string()))?;
        if record.status != ReviewStatus::Pending {
            return Err(StoreError::Conflict {
                id: violation_id.to_string(),
                status: record.status,
            });
        }
        let (status, slip_no) = match verdict {
            Verdict::Confirm => (
                ReviewStatus::Confirmed,
                Some(format!("{:0width$}", self.slips_issued + 1, width = SLIP_DIGITS)),
            ),
            Verdict::Dismiss => (ReviewStatus::Dismissed, None),
        };
        let event = StoreEvent::Review(ReviewEvent {
            violation_id: violation_id.to_string(),
            status,
            operator: operator.to_string(),
            reviewed_at: at,
            slip_no,
        });
        self.write_event(&event)?;
        self.apply(event)?;
        Ok(self.get(violation_id).expect("present").clone())
    }

    pub fn get(&self, violation_id: &str) -> Option<&ViolationRecord> {
        self.index.get(violation_id).map(|&i| &self.records[i])
    }

    /// All records in append order.
    pub fn records(&self) -> &[ViolationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn slips_issued(&self) -> u64 {
        self.slips_issued
    }

    pub fn backgrounds_logged(&self) -> u64 {
        self.backgrounds_logged
    }

    /// Records captured within `[from, to]`, time-ordered.
    pub fn in_range(&self, from: Timestamp, to: Timestamp) -> Vec<&ViolationRecord> {
        self.query(&RecordFilter {
            from: Some(from),
            to: Some(to),
            ..Default::default()
        })
    }

    /// Matching records ordered by capture time, then id.
    pub fn query(&self, filter: &RecordFilter) -> Vec<&ViolationRecord> {
        let mut out: Vec<&ViolationRecord> = self.records.iter().filter(|r| filter.matches(r)).collect();
        out.sort_by(|a, b| {
            a.frame
                .captured_at
                .cmp(&b.frame.captured_at)
                .then_with(|| a.violation_id.cmp(&b.violation_id))
        });
        out
    }

    /// Zero-based page of [`query`](Self::query) results.
    pub fn page(&self, filter: &RecordFilter, page: usize, page_size: usize) -> Page {
        let all = self.query(filter);
        let page_size = page_size.max(1);
        let records = all
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|r| (*r).clone())
            .collect();
        Page {
            page,
            page_size,
            total: all.len(),
            records,
        }
    }
}
