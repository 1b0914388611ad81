//! Printable violation slip.

use serde::{Deserialize, Serialize};

use stopline_core::framelist::Timestamp;
use stopline_core::store::{ReviewStatus, ViolationRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipDocument {
    pub slip_no: String,
    pub violation_id: String,
    pub camera_id: String,
    pub pan_index: u32,
    pub location_label: String,
    pub captured_at: Timestamp,
    pub frame_id: String,
    /// Service path of the evidence frame.
    pub image_ref: String,
    pub issued_at: Timestamp,
    pub issuing_operator: String,
}

impl SlipDocument {
    /// `None` unless the record is confirmed.
    pub fn from_record(record: &ViolationRecord, location_label: &str) -> Option<Self> {
        if record.status != ReviewStatus::Confirmed {
            return None;
        }
        let frame_id = record.frame.frame_id();
        Some(Self {
            slip_no: record.slip_no.clone()?,
            violation_id: record.violation_id.clone(),
            camera_id: record.frame.camera_id.clone(),
            pan_index: record.frame.pan_index,
            location_label: location_label.to_string(),
            captured_at: record.frame.captured_at,
            image_ref: format!("/frames/{frame_id}/image"),
            frame_id,
            issued_at: record.reviewed_at?,
            issuing_operator: record.reviewed_by.clone()?,
        })
    }

    pub fn to_html(&self) -> String {
        let e = escape;
        let (date, time) = split_timestamp(&self.captured_at);
        format!(
            r#"<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Violation slip {slip}</title>
<style>
body {{ font-family: sans-serif; max-width: 46em; margin: 2em auto; }}
table {{ border-collapse: collapse; width: 100%; }}
th, td {{ border: 1px solid #444; padding: .35em .6em; text-align: left; }}
th {{ width: 14em; background: #eee; }}
img {{ max-width: 100%; border: 1px solid #444; margin-top: 1em; }}
</style>
</head>
<body>
<h1>Stop-line violation slip</h1>
<table>
<tr><th>Slip number</th><td>{slip}</td></tr>
<tr><th>Violation</th><td>{vid}</td></tr>
<tr><th>Date (UTC)</th><td>{date}</td></tr>
<tr><th>Time (UTC)</th><td>{time}</td></tr>
<tr><th>Location</th><td>{loc}</td></tr>
<tr><th>Camera / pan preset</th><td>{cam} / {pan}</td></tr>
<tr><th>Issued</th><td>{issued}</td></tr>
<tr><th>Issuing operator</th><td>{op}</td></tr>
</table>
<img src="{img}" alt="frame {frame}">
</body>
</html>
"#,
            slip = e(&self.slip_no),
            vid = e(&self.violation_id),
            date = e(&date),
            time = e(&time),
            loc = e(&self.location_label),
            cam = e(&self.camera_id),
            pan = self.pan_index,
            issued = e(&self.issued_at.to_string()),
            op = e(&self.issuing_operator),
            img = e(&self.image_ref),
            frame = e(&self.frame_id),
        )
    }
}

fn split_timestamp(ts: &Timestamp) -> (String, String) {
    let text = ts.to_string();
    match text.split_once('T') {
        Some((d, t)) => (d.to_string(), t.trim_end_matches('Z').to_string()),
        None => (text, String::new()),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}
