#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use dpchart_core::fixtures::{adult, adult_charts};
use dpchart_server::{serve, AppState, Settings, Shared, Store};
use reqwest::{Client, Response, StatusCode};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct Server {
    pub base: String,
    pub state: Shared,
    pub client: Client,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(state_dir: Option<&Path>) -> Server {
        Self::start_with(state_dir, None).await
    }

    pub async fn start_with(state_dir: Option<&Path>, static_dir: Option<&Path>) -> Server {
        let store = state_dir.map(|d| Store::open(d).unwrap());
        let (state, errors) = AppState::new(Settings::default(), store);
        assert!(errors.is_empty(), "{errors:?}");
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, state.clone(), static_dir.map(Path::to_path_buf), async move {
            let _ = rx.await;
        }));
        Server { base, state, client: Client::new(), stop: Some(tx), task: Some(task) }
    }

    /// Graceful shutdown, which persists every session.
    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap();
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn get(&self, path: &str) -> Response {
        self.client.get(self.url(path)).send().await.unwrap()
    }

    pub async fn post(&self, path: &str, body: Value) -> Response {
        self.client.post(self.url(path)).json(&body).send().await.unwrap()
    }

    pub async fn post_raw(&self, path: &str, body: &str) -> Response {
        self.client
            .post(self.url(path))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap()
    }

    pub async fn put(&self, path: &str, body: Value) -> Response {
        self.client.put(self.url(path)).json(&body).send().await.unwrap()
    }

    pub async fn patch(&self, path: &str, body: Value) -> Response {
        self.client.patch(self.url(path)).json(&body).send().await.unwrap()
    }

    pub async fn delete(&self, path: &str) -> Response {
        self.client.delete(self.url(path)).send().await.unwrap()
    }

    pub async fn new_session(&self) -> String {
        let r = self.post("/sessions", json!({})).await;
        assert_eq!(r.status(), StatusCode::CREATED);
        r.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
    }

    /// Uploads the adult fixture as raw CSV.
    pub async fn upload_adult(&self, sid: &str) -> Value {
        let r = self
            .client
            .post(self.url(&format!("/sessions/{sid}/dataset")))
            .body(adult().to_csv())
            .send()
            .await
            .unwrap();
        expect(r, StatusCode::OK).await
    }

    /// Adds the three fixture charts and one pattern on each.
    pub async fn add_fixture_patterns(&self, sid: &str, weight: f64) -> Vec<String> {
        let mut ids = Vec::new();
        for (chart, selection) in adult_charts() {
            let r = self.post(&format!("/sessions/{sid}/charts"), serde_json::to_value(&chart).unwrap()).await;
            let cid = expect(r, StatusCode::CREATED).await["id"].as_str().unwrap().to_string();
            let body = json!({ "chart": cid, "selection": selection, "weight": weight });
            let r = self.post(&format!("/sessions/{sid}/patterns"), body).await;
            ids.push(expect(r, StatusCode::CREATED).await["id"].as_str().unwrap().to_string());
        }
        ids
    }

    /// Polls a scheme until it leaves `running`.
    pub async fn wait_scheme(&self, sid: &str, scheme: &str) -> Value {
        for _ in 0..6000 {
            let v = expect(self.get(&format!("/sessions/{sid}/schemes/{scheme}")).await, StatusCode::OK).await;
            if v["status"] != "running" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("scheme {scheme} did not finish");
    }
}

/// Asserts the status, then returns the JSON body, which must carry `"v": 1`.
pub async fn expect(r: Response, status: StatusCode) -> Value {
    let got = r.status();
    let text = r.text().await.unwrap();
    assert_eq!(got, status, "body: {text}");
    let v: Value = serde_json::from_str(&text).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"));
    assert_eq!(v["v"], 1, "payload version missing: {text}");
    v
}
