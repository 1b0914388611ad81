use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stopline_core::config::{CameraConfig, ConfigPatch, Thresholds};
use stopline_core::framelist::{FrameRecord, StreamKey, Timestamp};
use stopline_core::image::{mean_of_images, GrayImage};
use stopline_core::pipeline::{snapshot_before, stream_dir};
use stopline_core::pnm;
use stopline_core::redetect::{rescore_many, Rescore, ThresholdOverride};
use stopline_core::stopline::{rasterize_band, BandError, Point, StopLineGeometry};
use stopline_core::store::{RecordFilter, ReviewStatus, Verdict, ViolationRecord};

use crate::{ApiError, AppState, SlipDocument, PAGE_SIZE};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose rejections use the uniform error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e: JsonRejection| ApiError::validation(e.body_text()))
    }
}

fn authorize(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if !state.options.token.is_empty() && t.as_bytes() == state.options.token.as_bytes() => Ok(()),
        _ => Err(ApiError::unauthorized()),
    }
}

fn pan_index(raw: &str) -> ApiResult<u32> {
    raw.parse()
        .map_err(|_| ApiError::validation(format!("pan index `{raw}` is not a non-negative integer")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn png(img: &GrayImage) -> ApiResult<Response> {
    let bytes = pnm::encode_png(img).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

pub async fn no_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub async fn list_cameras(State(state): Shared) -> Json<Vec<CameraConfig>> {
    Json(state.deployment().cameras)
}

pub async fn get_background(State(state): Shared, Path((id, k)): Path<(String, String)>) -> ApiResult<Response> {
    let pan = pan_index(&k)?;
    let deployment = state.deployment();
    let (_, preset) = deployment.stream(&id, pan)?;
    let seeds: Vec<_> = preset.seed_images.iter().map(|p| deployment.resolve(p)).collect();
    let key = StreamKey {
        camera_id: id,
        pan_index: pan,
    };
    let ckpt = state.options.checkpoint_dir.clone();
    let img = blocking(move || {
        let latest = stream_dir(&ckpt, &key).join("latest").join("mean.pgm");
        let path = if latest.is_file() {
            Some(latest)
        } else {
            snapshot_before(&ckpt, &key, u64::MAX).map(|(_, p)| p)
        };
        if let Some(path) = path {
            return pnm::load_gray(&path).map_err(|e| ApiError::internal(e.to_string()));
        }
        if seeds.is_empty() {
            return Err(ApiError::conflict(format!("{key} has no background yet"))
                .with_details(json!({ "camera_id": key.camera_id, "pan_index": key.pan_index })));
        }
        let imgs = seeds
            .iter()
            .map(|p| pnm::load_gray(p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiError::internal(e.to_string()))?;
        mean_of_images(&imgs).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    png(&img)
}

#[derive(Serialize)]
struct StreamView<'a> {
    thresholds: Thresholds,
    gap_bridge_px: u32,
    geometry: &'a StopLineGeometry,
}

fn stream_view(camera: &CameraConfig, pan: u32) -> serde_json::Value {
    let geometry = &camera.pan(pan).expect("validated stream").geometry;
    serde_json::to_value(StreamView {
        thresholds: camera.thresholds(),
        gap_bridge_px: camera.gap_bridge_px,
        geometry,
    })
    .expect("serializes")
}

pub async fn update_config(
    State(state): Shared,
    headers: HeaderMap,
    Path((id, k)): Path<(String, String)>,
    Body(patch): Body<ConfigPatch>,
) -> ApiResult<Json<CameraConfig>> {
    authorize(&state, &headers)?;
    let pan = pan_index(&k)?;
    if patch == ConfigPatch::default() {
        return Err(ApiError::validation("empty patch"));
    }
    let mut guard = state.deployment.write().unwrap_or_else(|p| p.into_inner());
    let mut next = guard.clone();
    let before = stream_view(next.stream(&id, pan)?.0, pan);
    let updated = next.apply_patch(&id, pan, &patch)?;
    next.save(&state.options.config_path)?;
    *guard = next;
    let entry = json!({
        "event": "config_patch",
        "at": Timestamp::now(),
        "camera_id": id,
        "pan_index": pan,
        "patch": patch,
        "before": before,
        "after": stream_view(&updated, pan),
    });
    drop(guard);
    append_audit(&state, &entry)?;
    tracing::info!(camera = %id, pan, "config patched");
    Ok(Json(updated))
}

fn append_audit(state: &AppState, entry: &serde_json::Value) -> ApiResult<()> {
    let path = &state.options.audit_path;
    let line = format!("{entry}\n");
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandRequest {
    /// Two points on the stop-line's upper edge, `[[x, y], [x, y]]`.
    #[serde(default)]
    points: Option<[[u32; 2]; 2]>,
    #[serde(default)]
    geometry: Option<StopLineGeometry>,
}

#[derive(Debug, Serialize)]
pub struct BandPreview {
    geometry: StopLineGeometry,
    frame_width: u32,
    frame_height: u32,
    lines: Vec<Vec<Point>>,
}

fn band_error(e: BandError) -> ApiError {
    let details = match &e {
        BandError::OutOfBounds { line, x, y, width, height } => {
            json!({ "key": "geometry", "line": line, "x": x, "y": y, "width": width, "height": height })
        }
        _ => json!({ "key": "geometry" }),
    };
    ApiError::validation(e.to_string()).with_details(details)
}

/// Rasterizes a candidate band without changing anything.
pub async fn preview_band(
    State(state): Shared,
    Path((id, k)): Path<(String, String)>,
    Body(req): Body<BandRequest>,
) -> ApiResult<Json<BandPreview>> {
    let pan = pan_index(&k)?;
    let deployment = state.deployment();
    let (camera, _) = deployment.stream(&id, pan)?;
    let geometry = match (req.points, req.geometry) {
        (Some([a, b]), None) => StopLineGeometry::from_clicks(a, b).map_err(band_error)?,
        (None, Some(g)) => g,
        _ => return Err(ApiError::validation("give exactly one of `points` or `geometry`")),
    };
    let band = rasterize_band(&geometry, camera.frame_width, camera.frame_height).map_err(band_error)?;
    Ok(Json(BandPreview {
        geometry,
        frame_width: camera.frame_width,
        frame_height: camera.frame_height,
        lines: band.lines,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedetectRequest {
    #[serde(default)]
    frame_ids: Option<Vec<String>>,
    #[serde(default)]
    from: Option<Timestamp>,
    #[serde(default)]
    to: Option<Timestamp>,
    /// Restricts a time-range selection to one camera.
    #[serde(default)]
    camera_id: Option<String>,
    #[serde(default)]
    overrides: ThresholdOverride,
    #[serde(default)]
    persist: bool,
}

#[derive(Debug, Serialize)]
struct Persisted {
    frame_id: String,
    violation_id: String,
}

#[derive(Debug, Serialize)]
pub struct RedetectResponse {
    results: Vec<Rescore>,
    unknown_frame_ids: Vec<String>,
    persisted: Vec<Persisted>,
}

fn select_frames(state: &AppState, req: &RedetectRequest) -> ApiResult<(Vec<FrameRecord>, Vec<String>)> {
    let index = state.frame_index()?;
    match (&req.frame_ids, req.from, req.to) {
        (Some(ids), None, None) => {
            let mut frames = Vec::new();
            let mut unknown = Vec::new();
            for id in ids {
                match index.get(id) {
                    Some(f) => frames.push(f.clone()),
                    None => unknown.push(id.clone()),
                }
            }
            Ok((frames, unknown))
        }
        (None, from, to) if from.is_some() || to.is_some() => {
            if let (Some(f), Some(t)) = (from, to) {
                if f > t {
                    return Err(ApiError::validation("`from` is after `to`"));
                }
            }
            let mut frames: Vec<FrameRecord> = index
                .into_values()
                .filter(|f| from.is_none_or(|t| f.captured_at >= t) && to.is_none_or(|t| f.captured_at <= t))
                .filter(|f| req.camera_id.as_deref().is_none_or(|c| f.camera_id == c))
                .collect();
            frames.sort_by(|a, b| {
                (a.captured_at, &a.camera_id, a.pan_index, a.sequence_no).cmp(&(b.captured_at, &b.camera_id, b.pan_index, b.sequence_no))
            });
            Ok((frames, Vec::new()))
        }
        _ => Err(ApiError::validation("select frames by `frame_ids` or by a `from`/`to` range, not both")),
    }
}

fn check_overrides(o: &ThresholdOverride) -> ApiResult<()> {
    for (name, v) in [("d_th", o.d_th), ("l_th", o.l_th)] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                return Err(ApiError::validation(format!("override `{name}` must be positive, got {v}"))
                    .with_details(json!({ "key": format!("overrides.{name}") })));
            }
        }
    }
    Ok(())
}

pub async fn redetect(
    State(state): Shared,
    headers: HeaderMap,
    Body(req): Body<RedetectRequest>,
) -> ApiResult<Json<RedetectResponse>> {
    if req.persist {
        authorize(&state, &headers)?;
    }
    check_overrides(&req.overrides)?;
    let (frames, unknown_frame_ids) = select_frames(&state, &req)?;
    let deployment = state.deployment();
    let overrides = req.overrides;
    let ckpt = state.options.checkpoint_dir.clone();
    let base = state.options.frames_base.clone();
    let results = blocking(move || Ok(rescore_many(&deployment, &ckpt, &base, &frames, &overrides))).await?;

    let mut persisted = Vec::new();
    if req.persist {
        let mut store = state.store()?;
        for r in results.iter().filter(|r| r.violated && r.error.is_none()) {
            let (Some(thresholds_used), Some(mean_diff)) = (r.thresholds_used, r.mean_diff) else {
                continue;
            };
            let id = store.persist_violation(ViolationRecord {
                violation_id: String::new(),
                frame: r.frame.clone(),
                mean_longest_run: r.mean_longest_run,
                per_line_longest_run: r.per_line_longest_run.clone(),
                mean_diff,
                thresholds_used,
                status: ReviewStatus::Pending,
                slip_no: None,
                reviewed_by: None,
                reviewed_at: None,
            })?;
            persisted.push(Persisted {
                frame_id: r.frame_id.clone(),
                violation_id: id,
            });
        }
    }
    Ok(Json(RedetectResponse {
        results,
        unknown_frame_ids,
        persisted,
    }))
}

fn parse_filter(params: &HashMap<String, String>) -> ApiResult<(RecordFilter, usize)> {
    let mut filter = RecordFilter::default();
    let mut page = 0;
    for (key, value) in params {
        if value.is_empty() {
            continue;
        }
        let bad = |m: String| ApiError::validation(m).with_details(json!({ "key": key }));
        match key.as_str() {
            "status" => filter.status = Some(value.parse().map_err(bad)?),
            "from" => filter.from = Some(Timestamp::parse(value).map_err(bad)?),
            "to" => filter.to = Some(Timestamp::parse(value).map_err(bad)?),
            "camera" => filter.camera_id = Some(value.clone()),
            "page" => page = value.parse().map_err(|_| bad(format!("page `{value}` is not a non-negative integer")))?,
            _ => return Err(bad(format!("unknown filter `{key}`"))),
        }
    }
    Ok((filter, page))
}

pub async fn list_violations(
    State(state): Shared,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(params) = query.map_err(|e| ApiError::validation(e.body_text()))?;
    let (filter, page) = parse_filter(&params)?;
    let store = state.store()?;
    Ok(Json(store.page(&filter, page, PAGE_SIZE)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    verdict: Verdict,
    operator: String,
}

#[derive(Debug, Serialize)]
pub struct ReviewResponse {
    record: ViolationRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    slip: Option<SlipDocument>,
}

fn location_of(state: &AppState, camera_id: &str) -> String {
    state
        .deployment()
        .camera(camera_id)
        .map(|c| c.location_label.clone())
        .unwrap_or_default()
}

pub async fn review_violation(
    State(state): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<ReviewRequest>,
) -> ApiResult<Json<ReviewResponse>> {
    authorize(&state, &headers)?;
    let operator = req.operator.trim();
    if operator.is_empty() {
        return Err(ApiError::validation("operator must not be empty").with_details(json!({ "key": "operator" })));
    }
    let record = state.store()?.review(&id, req.verdict, operator, Timestamp::now())?;
    let slip = SlipDocument::from_record(&record, &location_of(&state, &record.frame.camera_id));
    tracing::info!(violation = %id, status = %record.status, slip = ?record.slip_no, "reviewed");
    Ok(Json(ReviewResponse { record, slip }))
}

#[derive(Debug, Deserialize)]
pub struct SlipQuery {
    #[serde(default)]
    format: Option<String>,
}

pub async fn get_slip(
    State(state): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    query: Result<Query<SlipQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| ApiError::validation(e.body_text()))?;
    let record = state
        .store()?
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no violation `{id}`")).with_details(json!({ "violation_id": id })))?;
    let slip = SlipDocument::from_record(&record, &location_of(&state, &record.frame.camera_id)).ok_or_else(|| {
        ApiError::conflict(format!("violation `{id}` is {}, only confirmed violations have slips", record.status))
            .with_details(json!({ "violation_id": id, "status": record.status }))
    })?;
    let wants_json = match q.format.as_deref() {
        Some("json") => true,
        Some("html") => false,
        Some(other) => return Err(ApiError::validation(format!("unknown format `{other}`"))),
        None => headers
            .get(header::ACCEPT)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("application/json")),
    };
    Ok(if wants_json {
        Json(slip).into_response()
    } else {
        Html(slip.to_html()).into_response()
    })
}

pub async fn get_frame_image(State(state): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let frame = state
        .frame_index()?
        .remove(&id)
        .ok_or_else(|| ApiError::not_found(format!("no frame `{id}`")).with_details(json!({ "frame_id": id })))?;
    let path = state.options.frames_base.join(&frame.path);
    let img = blocking(move || {
        pnm::load_gray(&path).map_err(|e| {
            ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("frame file unreadable: {e}"))
                .with_details(json!({ "frame_id": id }))
        })
    })
    .await?;
    png(&img)
}
