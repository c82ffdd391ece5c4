#![allow(dead_code)]

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use ctsne_core::Dataset;
use ctsne_server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct Server {
    pub app: Router,
    pub state: AppState,
}

pub fn start(dir: &std::path::Path, workers: usize) -> Server {
    let state = AppState::start(&ServerConfig {
        data_dir: dir.to_path_buf(),
        workers,
    })
    .unwrap();
    Server {
        app: router(state.clone()),
        state,
    }
}

impl Server {
    pub async fn raw(&self, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        let (s, b) = self.raw(Method::GET, uri, Vec::new()).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        let (s, b) = self.raw(Method::POST, uri, serde_json::to_vec(&body).unwrap()).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn upload(&self, data: &Dataset) -> String {
        let mut tsv = Vec::new();
        data.write_tsv(&mut tsv).unwrap();
        let (s, b) = self.raw(Method::POST, "/datasets", tsv).await;
        assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&b));
        let v: Value = serde_json::from_slice(&b).unwrap();
        v["id"].as_str().unwrap().to_string()
    }

    pub async fn submit(&self, body: Value) -> String {
        let (s, v) = self.post("/jobs", body).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    /// Polls until the job leaves queued/running.
    pub async fn wait(&self, id: &str) -> Value {
        let start = Instant::now();
        loop {
            let (s, v) = self.get(&format!("/jobs/{id}")).await;
            assert_eq!(s, StatusCode::OK);
            match v["state"].as_str().unwrap() {
                "finished" | "failed" => return v,
                _ => {}
            }
            assert!(start.elapsed() < Duration::from_secs(300), "job {id} timed out");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

pub fn quick_params(seed: u64, iterations: usize) -> Value {
    serde_json::json!({
        "perplexity": 10.0,
        "beta_prime": 0.1,
        "optimizer": { "iterations": iterations, "seed": seed },
    })
}
