use std::sync::Arc;

use serde_json::{json, Value};
use tlbo_core::Schedule;
use tlbo_service::{router, Store};

async fn spawn(dir: &std::path::Path) -> String {
    let store = Arc::new(Store::open(dir, Schedule::default()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(store)).await.unwrap();
    });
    format!("http://{addr}")
}

fn task(id: &str, cx: f64, cy: f64) -> Value {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            let (x, y) = (i as f64 * 2.0, 10.0 + j as f64 * 4.0);
            inputs.push(vec![x, y]);
            outputs.push((x - cx).powi(2) + 0.1 * (y - cy).powi(2) + 5.0);
        }
    }
    json!({ "task_id": id, "inputs": inputs, "outputs": outputs })
}

fn config() -> Value {
    json!({
        "box": { "x_min": [0.0, 10.0], "x_max": [10.0, 30.0] },
        "fit": { "starts": 2 },
        "optimizer": { "restarts": 8 },
        "weight_samples": 40,
        "stop": { "max_iterations": 20 },
        "seed": 3
    })
}

struct Api {
    base: String,
    client: reqwest::Client,
}

impl Api {
    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn post_raw(&self, path: &str, body: &'static str) -> u16 {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        r.status().as_u16()
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn create(&self) -> String {
        let (status, body) = self
            .post(
                "/sessions",
                json!({ "sources": [task("a", 4.0, 18.0), task("b", 5.0, 20.0)], "config": config() }),
            )
            .await;
        assert_eq!(status, 201, "{body}");
        assert_eq!(body["phase"], "await_init_1");
        body["session_id"].as_str().unwrap().to_string()
    }
}

async fn api(dir: &std::path::Path) -> Api {
    Api {
        base: spawn(dir).await,
        client: reqwest::Client::new(),
    }
}

fn xs(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[tokio::test]
async fn health_and_create_validation() {
    let dir = tempfile::tempdir().unwrap();
    let api = api(dir.path()).await;
    assert_eq!(api.get("/healthz").await, (200, json!({ "status": "ok" })));

    let id = api.create().await;
    let (_, listing) = api.get("/sessions").await;
    assert_eq!(listing["sessions"][0]["session_id"], id.as_str());

    let (s, _) = api.post("/sessions", json!({ "sources": [], "config": config() })).await;
    assert_eq!(s, 422);

    let mut three_d = task("c", 1.0, 1.0);
    three_d["inputs"] = json!(xs_rows(36, 3));
    let (s, _) = api
        .post("/sessions", json!({ "sources": [task("a", 4.0, 18.0), three_d], "config": config() }))
        .await;
    assert_eq!(s, 422);

    assert_eq!(api.post_raw("/sessions", "{not json").await, 400);
    let (s, _) = api.post("/sessions", json!({ "sources": [task("a", 4.0, 18.0)] })).await;
    assert_eq!(s, 400);

    let (s, body) = api
        .post(
            "/sessions",
            json!({
                "sources": [{ "task_id": "csv", "csv": "x1,x2,y\n0,10,3\n5,20,1\n10,30,4\n" }],
                "config": config()
            }),
        )
        .await;
    assert_eq!(s, 201, "{body}");
}

fn xs_rows(n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..dim).map(|j| (i * (j + 1)) as f64).collect()).collect()
}

#[tokio::test]
async fn ask_tell_loop() {
    let dir = tempfile::tempdir().unwrap();
    let api = api(dir.path()).await;
    let id = api.create().await;
    let ask = format!("/sessions/{id}/ask");
    let tell = format!("/sessions/{id}/tell");

    assert_eq!(api.post("/sessions/nope/ask", json!({})).await.0, 404);
    assert_eq!(api.get("/sessions/nope/history").await.0, 404);
    assert_eq!(api.post("/sessions/nope/tell", json!({ "x": [1, 20], "y": 1 })).await.0, 404);

    let (s, first) = api.post(&ask, json!({})).await;
    assert_eq!(s, 200);
    assert_eq!(first["suggested_start"], true);
    assert_eq!(xs(&first["x_next"]), vec![4.0, 18.0]);

    // Rejected tells leave the session untouched.
    assert_eq!(api.post(&tell, json!({ "x": [11.0, 20.0], "y": 3.0 })).await.0, 409);
    assert_eq!(api.post(&tell, json!({ "x": [4.0, 18.0] })).await.0, 400);
    assert_eq!(api.post(&tell, json!({ "x": [4.0], "y": 1.0 })).await.0, 422);
    assert_eq!(api.get(&format!("/sessions/{id}/history")).await.1["records"], json!([]));

    let (s, r) = api.post(&tell, json!({ "x": [4.0, 18.0], "y": 300.0 })).await;
    assert_eq!(s, 200);
    assert_eq!(r["n_observations"], 1);
    assert_eq!(r["phase"], "await_init_2");
    let (_, second) = api.post(&ask, json!({})).await;
    assert_eq!(second["suggested_start"], true);
    assert_eq!(xs(&second["x_next"]), vec![4.5, 19.0]);
    let (_, r) = api.post(&tell, json!({ "x": [4.5, 19.0], "y": 250.0 })).await;
    assert_eq!(r["phase"], "running");

    let mut last_iteration = None;
    for round in 0..5 {
        let (s, a) = api.post(&ask, json!({})).await;
        assert_eq!(s, 200, "{a}");
        let (_, again) = api.post(&ask, json!({})).await;
        assert_eq!(a, again, "ask must be idempotent between tells");
        assert_eq!(a["suggested_start"], false);
        let x = xs(&a["x_next"]);
        assert!((0.0..=10.0).contains(&x[0]) && (10.0..=30.0).contains(&x[1]), "{x:?}");
        let w = xs(&a["weights"]);
        assert_eq!(w.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_ne!(Some(a["iteration"].clone()), last_iteration);
        last_iteration = Some(a["iteration"].clone());

        let body = if round == 0 {
            json!({ "x": x, "failure": true })
        } else {
            json!({ "x": x, "y": 200.0 - round as f64 })
        };
        let (s, r) = api.post(&tell, body).await;
        assert_eq!(s, 200, "{r}");
        if round == 0 {
            // Worst (300) plus three population std of [300, 250].
            assert!((r["recorded_y"].as_f64().unwrap() - 375.0).abs() < 1e-9);
        }
    }

    let (s, h) = api.get(&format!("/sessions/{id}/history")).await;
    assert_eq!(s, 200);
    assert_eq!(h["records"].as_array().unwrap().len(), 7);
    let trace = h["weights_trace"].as_array().unwrap();
    assert_eq!(trace.len(), 5);
    for row in trace {
        assert!((xs(&row["weights"]).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(h["best_so_far"]["y"], 196.0);
    assert_eq!(h["models"], json!(["a", "b", "target"]));
}

#[tokio::test]
async fn ask_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let api1 = api(dir.path()).await;
    let id = api1.create().await;
    let tell = format!("/sessions/{id}/tell");
    api1.post(&tell, json!({ "x": [4.0, 18.0], "y": 10.0 })).await;
    api1.post(&tell, json!({ "x": [4.5, 19.0], "y": 9.0 })).await;
    let (_, before) = api1.post(&format!("/sessions/{id}/ask"), json!({})).await;

    let api2 = api(dir.path()).await;
    let (s, after) = api2.post(&format!("/sessions/{id}/ask"), json!({})).await;
    assert_eq!(s, 200);
    assert_eq!(before, after);
}

#[tokio::test]
async fn omitted_schedule_uses_server_default() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(
        Store::open(
            dir.path(),
            Schedule {
                alpha0: 0.2,
                alpha1: 0.0,
                beta: 0.5,
            },
        )
        .unwrap(),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, router(store)).await.unwrap() });
    let api = Api {
        base,
        client: reqwest::Client::new(),
    };
    let id = api.create().await;
    let snapshot: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap())
            .unwrap();
    assert_eq!(snapshot["session"]["config"]["schedule"]["beta"], 0.5);

    let mut cfg = config();
    cfg["schedule"] = Value::Null;
    let (s, body) = api
        .post("/sessions", json!({ "sources": [task("a", 4.0, 18.0)], "config": cfg }))
        .await;
    assert_eq!(s, 201);
    let id = body["session_id"].as_str().unwrap();
    let snapshot: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap())
            .unwrap();
    assert!(snapshot["session"]["config"]["schedule"].is_null());
}
