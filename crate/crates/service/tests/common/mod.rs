#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use stopline_core::config::Deployment;
use stopline_core::framelist::ingest_list;
use stopline_core::pipeline::{run, RunOptions};
use stopline_core::store::RecordStore;
use stopline_core::synthgen::{gen_dataset, DatasetSpec, DatasetSummary};
use stopline_service::{router, AppState, ServiceOptions};

pub const TOKEN: &str = "test-token";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: DatasetSummary,
    pub options: ServiceOptions,
    pub app: Router,
    pub state: Arc<AppState>,
}

impl Fixture {
    pub fn store_path(&self) -> &Path {
        &self.options.store_path
    }
}

/// Synthetic dataset, one pipeline run, and a service over the results.
pub fn fixture(n: usize, mix: &str, noise: f64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::new(n, mix.parse().unwrap(), noise, 11);
    let data = gen_dataset(&spec, &dir.path().join("data")).unwrap();
    let options = ServiceOptions::new(
        data.config_path.clone(),
        dir.path().join("store.jsonl"),
        Some(data.list_path.clone()),
        TOKEN.into(),
    );
    let deployment = Deployment::load(&data.config_path).unwrap();
    let frames = ingest_list(&data.list_path).unwrap().frames;
    let mut store = RecordStore::open(&options.store_path).unwrap();
    run(
        &deployment,
        &frames,
        &mut store,
        &RunOptions {
            checkpoint_dir: Some(options.checkpoint_dir.clone()),
            frames_base: options.frames_base.clone(),
            ..Default::default()
        },
    )
    .unwrap();
    drop(store);
    let state = AppState::open(options.clone()).unwrap();
    Fixture {
        app: router(state.clone()),
        state,
        dir,
        data,
        options,
    }
}

pub fn service_over(config: PathBuf, store: PathBuf) -> Router {
    router(AppState::open(ServiceOptions::new(config, store, None, TOKEN.into())).unwrap())
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

pub async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>, auth: bool) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if auth {
        req = req.header(header::AUTHORIZATION, format!("Bearer {TOKEN}"));
    }
    let req = match body {
        Some(v) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Method::GET, uri, None, false).await
}

pub fn assert_error(reply: &Reply, status: StatusCode, code: &str) -> Value {
    assert_eq!(reply.status, status, "{}", reply.text());
    let body = reply.json();
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(body.get("details").is_some());
    body
}
