//! Endpoint tests, including differential checks of every endpoint against
//! the equivalent library composition on the same snapshot.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use smoothdate_core::datastore::{generate_synthetic, split_dataset, SyntheticSpec};
use smoothdate_core::model::train;
use smoothdate_core::pipeline::{evaluate, project_year_centers};
use smoothdate_core::{
    Activation, DocumentRecord, LossConfig, ProjectionModel, RelevanceMatrix, RelevanceSpec,
    TrainingConfig,
};
use smoothdate_service::config::Config;
use smoothdate_service::{router, AppState, SharedState};
use tower::ServiceExt;

struct Fixture {
    state: SharedState,
    app: Router,
    _dir: tempfile::TempDir,
}

fn config() -> Config {
    let mut c = Config::default();
    c.model.hidden = vec![12];
    c.model.embedding_dim = 4;
    c.training.batch_size = 16;
    c.training.max_iterations = 40;
    c.training.eta = 0.3;
    c.training.tau = 0.05;
    c.retrieval.k = 5;
    c
}

fn data() -> (Vec<DocumentRecord>, Vec<DocumentRecord>) {
    let records = generate_synthetic(&SyntheticSpec {
        year_lo: 1900,
        year_hi: 1919,
        docs_per_year: 5,
        feature_dim: 8,
        noise_sigma: 0.05,
        mixing_seed: 2,
    })
    .unwrap();
    let split = split_dataset(&records, 0.2, 2).unwrap();
    (split.train, split.test)
}

fn matrix() -> RelevanceMatrix {
    let years: Vec<i32> = (1900..=1919).collect();
    RelevanceMatrix::build(&years, &RelevanceSpec::Thresholded { gamma: 5.0 }).unwrap()
}

fn trained_model(train_set: &[DocumentRecord]) -> ProjectionModel {
    let model = ProjectionModel::init(&[8, 12, 4], Activation::Tanh, 1).unwrap();
    let tcfg = TrainingConfig {
        eta: 0.3,
        batch_size: 16,
        max_iterations: 30,
        seed: 1,
        ..TrainingConfig::default()
    };
    train(
        model,
        train_set,
        &matrix(),
        &tcfg,
        &LossConfig::with_tau(0.05),
    )
    .unwrap()
    .0
}

fn fixture(with_model: bool, with_test: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (train_set, test) = data();
    let model = with_model.then(|| trained_model(&train_set));
    let test = if with_test { test } else { Vec::new() };
    let state = AppState::from_parts(
        config(),
        train_set,
        test,
        model,
        matrix(),
        Vec::new(),
        dir.path().join("feedback.jsonl"),
    )
    .unwrap();
    Fixture {
        app: router(Arc::clone(&state)),
        state,
        _dir: dir,
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn call_raw(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

fn assert_api_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].is_string());
}

async fn wait_for_job(app: &Router, job_id: &str) -> Value {
    for _ in 0..2000 {
        let (status, job) = call(app, Method::GET, &format!("/retrain/{job_id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let s = job["state"]["status"].as_str().unwrap().to_string();
        if s == "done" || s == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {job_id} did not finish");
}

#[tokio::test]
async fn health_reports_versions() {
    let f = fixture(true, true);
    let (status, v) = call(&f.app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_version"], "model-0");
    assert_eq!(v["matrix_version"], "v0");
    assert_eq!(v["index_size"], f.state.train.len());
}

#[tokio::test]
async fn endpoints_need_a_model() {
    let f = fixture(false, true);
    let q = json!({ "features": vec![0.0; 8] });
    for (method, uri, body) in [
        (Method::POST, "/query", Some(q)),
        (Method::GET, "/projection", None),
        (Method::GET, "/metrics?split=test", None),
    ] {
        let (status, v) = call(&f.app, method, uri, body).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_api_error(&v, "no_model");
    }
}

#[tokio::test]
async fn query_validation() {
    let f = fixture(true, true);
    let (status, v) = call(&f.app, Method::POST, "/query", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_api_error(&v, "bad_request");
    let both = json!({ "features": vec![0.1; 8], "doc_id": "1900-0000" });
    assert_eq!(
        call(&f.app, Method::POST, "/query", Some(both)).await.0,
        StatusCode::BAD_REQUEST
    );
    let (status, v) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "features": [1.0, 2.0] })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&v, "dimension_mismatch");
    let (status, v) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "doc_id": "nope" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_api_error(&v, "unknown_doc");
    let (status, v) = call_raw(&f.app, Method::POST, "/query", None).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let v: Value = serde_json::from_slice(&v).unwrap();
    assert_api_error(&v, "bad_request");
    let (status, v) = call(&f.app, Method::GET, "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");
}

#[tokio::test]
async fn query_matches_library() {
    let f = fixture(true, true);
    let snap = f.state.snapshot();
    let model = snap.model.as_deref().unwrap();
    for r in f.state.test.iter().take(10) {
        let body = json!({ "features": r.features, "top_k": 7, "k_estimate": 5 });
        let (status, v) = call(&f.app, Method::POST, "/query", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        let e = model.embed(&r.features).unwrap();
        let hits = snap.index.query(&e, 7).unwrap();
        let est = snap
            .index
            .estimate_year(&e, 5, f.state.config.retrieval.weighting)
            .unwrap();
        assert_eq!(v["hits"], serde_json::to_value(&hits).unwrap());
        assert_eq!(v["estimate"], serde_json::to_value(&est).unwrap());
        assert_eq!(v["meta"]["model_version"], "model-0");
    }
}

#[tokio::test]
async fn query_by_id_and_clamping() {
    let f = fixture(true, true);
    let id = f.state.train[3].doc_id.clone();
    let (_, v) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "doc_id": id, "top_k": 100000 })),
    )
    .await;
    assert_eq!(v["hits"][0]["doc_id"], id);
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), f.state.train.len());
    let sims: Vec<f64> = hits
        .iter()
        .map(|h| h["similarity"].as_f64().unwrap())
        .collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));
    let (status, _) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "doc_id": id, "top_k": 0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn feedback_is_visible_and_journaled() {
    let f = fixture(true, true);
    let n = f.state.train.len();
    let features: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let label = json!({ "doc_id": "user-1", "features": features, "year": 1905 });
    let (status, v) = call(&f.app, Method::POST, "/feedback/label", Some(label)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["index_size"], n + 1);

    let (_, v) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "features": features, "top_k": 1 })),
    )
    .await;
    assert_eq!(v["hits"][0]["doc_id"], "user-1");
    assert_eq!(v["hits"][0]["year"], 1905);

    // Same id again: size unchanged, embedding replaced.
    let other: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();
    let relabel = json!({ "doc_id": "user-1", "features": other, "year": 1910 });
    let (_, v) = call(&f.app, Method::POST, "/feedback/label", Some(relabel)).await;
    assert_eq!(v["index_size"], n + 1);
    let snap = f.state.snapshot();
    let doc = snap.index.get("user-1").unwrap();
    assert_eq!(doc.year, 1910);
    assert_eq!(
        doc.embedding,
        snap.model.as_ref().unwrap().embed(&other).unwrap()
    );

    let store =
        smoothdate_core::datastore::feedback_load(f._dir.path().join("feedback.jsonl")).unwrap();
    assert_eq!(store.records.len(), 1);
    assert_eq!(store.records[0].year, Some(1910));

    let bad = json!({ "doc_id": "user-2", "features": [1.0], "year": 1905 });
    let (status, v) = call(&f.app, Method::POST, "/feedback/label", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&v, "dimension_mismatch");
    let empty_id = json!({ "doc_id": "", "features": vec![0.5; 8], "year": 1905 });
    assert_eq!(
        call(&f.app, Method::POST, "/feedback/label", Some(empty_id))
            .await
            .0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn feedback_without_model_is_only_journaled() {
    let f = fixture(false, true);
    let label = json!({ "doc_id": "u", "features": vec![0.5; 8], "year": 1901 });
    let (status, v) = call(&f.app, Method::POST, "/feedback/label", Some(label)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["index_size"], 0);
}

#[tokio::test]
async fn matrix_edits_match_library() {
    let f = fixture(true, true);
    let (status, v) = call(&f.app, Method::GET, "/relevance-matrix", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["version"], "v0");
    assert_eq!(v["matrix"], serde_json::to_value(matrix()).unwrap());

    let boost = json!({ "op": "boost", "lo": 1903, "hi": 1907, "factor": 2.5 });
    let (status, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(boost)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["version"], "v1");
    assert_eq!(v["rows_affected"], 5);
    let expected = matrix().boost_region(1903, 1907, 2.5).unwrap().matrix;
    let (_, v) = call(&f.app, Method::GET, "/relevance-matrix", None).await;
    assert_eq!(v["version"], "v1");
    assert_eq!(v["matrix"], serde_json::to_value(&expected).unwrap());

    let set = json!({ "op": "set", "query_year": 1900, "item_year": 1919, "value": 3.0 });
    let (_, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(set)).await;
    assert_eq!(v["version"], "v2");
    let expected = expected.set_cell(1900, 1919, 3.0).unwrap();
    let (_, v) = call(&f.app, Method::GET, "/relevance-matrix", None).await;
    assert_eq!(v["matrix"], serde_json::to_value(&expected).unwrap());

    // Old versions stay retrievable.
    let (_, v) = call(&f.app, Method::GET, "/relevance-matrix?version=v0", None).await;
    assert_eq!(v["matrix"], serde_json::to_value(matrix()).unwrap());
    let (_, v) = call(&f.app, Method::GET, "/relevance-matrix/versions", None).await;
    let versions: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["version"].as_str().unwrap())
        .collect();
    assert_eq!(versions, ["v0", "v1", "v2"]);
    assert_eq!(v[2]["parent"], "v1");
    let (status, v) = call(&f.app, Method::GET, "/relevance-matrix?version=v9", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_api_error(&v, "unknown_matrix_version");

    // Edits do not retrain.
    assert_eq!(f.state.snapshot().model_version.as_deref(), Some("model-0"));
}

#[tokio::test]
async fn full_matrix_put_and_diagnostics() {
    let f = fixture(true, true);
    let full = json!({ "years": [1900, 1901], "values": [[2.0, 1.0], [1.0, 2.0]] });
    let (status, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(full)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["version"], "v1");
    let (_, v) = call(&f.app, Method::GET, "/relevance-matrix", None).await;
    assert_eq!(v["matrix"]["years"], json!([1900, 1901]));
    assert_eq!(v["matrix"]["provenance"], "edited");

    let bad = json!({ "years": [1900, 1901], "values": [[2.0, -1.0], [1.0, 2.0]] });
    let (status, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&v, "invalid_matrix");
    assert_eq!(v["details"]["cells"][0]["row"], 0);
    assert_eq!(v["details"]["cells"][0]["col"], 1);

    let unsorted = json!({ "years": [1901, 1900], "values": [[1.0, 1.0], [1.0, 1.0]] });
    let (status, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(unsorted)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["details"]["cells"][0]["row"], 1);

    let missing_year = json!({ "op": "set", "query_year": 1800, "item_year": 1900, "value": 1.0 });
    let (status, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(missing_year)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&v, "year_not_found");
    let bad_op = json!({ "op": "scale", "factor": 2.0 });
    assert_eq!(
        call(&f.app, Method::PUT, "/relevance-matrix", Some(bad_op))
            .await
            .0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    // Failed edits leave no new version.
    let (_, v) = call(&f.app, Method::GET, "/relevance-matrix/versions", None).await;
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn projection_matches_library_and_is_stable() {
    let f = fixture(true, true);
    let (status, first) = call_raw(&f.app, Method::GET, "/projection", None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, second) = call_raw(&f.app, Method::GET, "/projection", None).await;
    assert_eq!(first, second);
    let expected = project_year_centers(&f.state.snapshot().index).unwrap();
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v, serde_json::to_value(&expected).unwrap());
    assert_eq!(v["points"].as_array().unwrap().len(), 20);
}

#[tokio::test]
async fn metrics_match_library() {
    let f = fixture(true, true);
    let (status, v) = call(&f.app, Method::GET, "/metrics?split=test", None).await;
    assert_eq!(status, StatusCode::OK);
    let snap = f.state.snapshot();
    let e = evaluate(
        snap.model.as_deref().unwrap(),
        &snap.index,
        &f.state.test,
        f.state.config.retrieval.k,
        f.state.config.retrieval.weighting,
    )
    .unwrap();
    assert_eq!(v, json!({ "mae": e.mae, "map": e.map, "n_queries": e.n }));
    let (status, _) = call(&f.app, Method::GET, "/metrics?split=train", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let g = fixture(true, false);
    let (status, v) = call(&g.app, Method::GET, "/metrics?split=test", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_api_error(&v, "no_test_split");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn retrain_lifecycle_and_swap() {
    let f = fixture(true, true);
    let boost = json!({ "op": "boost", "lo": 1905, "hi": 1914, "factor": 4.0 });
    let (_, v) = call(&f.app, Method::PUT, "/relevance-matrix", Some(boost)).await;
    let version = v["version"].as_str().unwrap().to_string();

    let (status, v) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "matrix_version": "v7" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_api_error(&v, "unknown_matrix_version");

    let body = json!({ "matrix_version": version, "max_iterations": 400 });
    let (status, v) = call(&f.app, Method::POST, "/retrain", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let job_id = v["job_id"].as_str().unwrap().to_string();
    let (status, v) = call(&f.app, Method::POST, "/retrain", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_api_error(&v, "job_running");

    let job = wait_for_job(&f.app, &job_id).await;
    assert_eq!(job["state"]["status"], "done", "{job}");
    assert_eq!(job["history"], json!(["queued", "running", "done"]));
    assert_eq!(job["state"]["iterations"], 400);
    assert_eq!(job["state"]["losses"].as_array().unwrap().len(), 400);
    assert_eq!(job["matrix_version"], version);
    assert_eq!(job["state"]["model_version"], "model-1");

    let (_, h) = call(&f.app, Method::GET, "/health", None).await;
    assert_eq!(h["model_version"], "model-1");
    assert_eq!(h["previous_model_version"], "model-0");

    // The served model is the one a library run produces from the same inputs.
    let mut cfg = f.state.config.training.training_config();
    cfg.max_iterations = 400;
    let matrix = matrix().boost_region(1905, 1914, 4.0).unwrap().matrix;
    let init = ProjectionModel::init(&[8, 12, 4], Activation::Tanh, 0).unwrap();
    let (expected, _) = train(
        init,
        &f.state.train,
        &matrix,
        &cfg,
        &f.state.config.training.loss_config(),
    )
    .unwrap();
    let snap = f.state.snapshot();
    assert_eq!(snap.model.as_deref().unwrap(), &expected);

    let r = &f.state.test[0];
    let (_, v) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "features": r.features })),
    )
    .await;
    assert_eq!(v["meta"]["model_version"], "model-1");
    assert_eq!(v["meta"]["matrix_version"], version);
    let hits = snap
        .index
        .query(&expected.embed(&r.features).unwrap(), 10)
        .unwrap();
    assert_eq!(v["hits"], serde_json::to_value(&hits).unwrap());

    let (status, v) = call(&f.app, Method::GET, "/metrics?split=test", None).await;
    assert_eq!(status, StatusCode::OK);
    let e = evaluate(
        &expected,
        &snap.index,
        &f.state.test,
        5,
        f.state.config.retrieval.weighting,
    )
    .unwrap();
    assert_eq!(v["mae"], json!(e.mae));

    let (status, v) = call(&f.app, Method::GET, "/retrain/job-99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_api_error(&v, "unknown_job");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_admit_one_job() {
    let f = fixture(true, true);
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = f.app.clone();
        handles.push(tokio::spawn(async move {
            call(
                &app,
                Method::POST,
                "/retrain",
                Some(json!({ "max_iterations": 200 })),
            )
            .await
            .0
        }));
    }
    let mut ok = 0;
    let mut conflict = 0;
    for h in handles {
        match h.await.unwrap() {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => conflict += 1,
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!((ok, conflict), (1, 7));
    wait_for_job(&f.app, "job-0").await;
    // Once terminal, a new job is accepted.
    let (status, _) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "max_iterations": 1 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    wait_for_job(&f.app, "job-1").await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queries_during_swap_see_one_model() {
    let f = fixture(true, true);
    let old_snap = f.state.snapshot();
    let probe: Vec<f64> = f.state.test[1].features.clone();
    let old_hits = old_snap
        .index
        .query(&old_snap.model.as_ref().unwrap().embed(&probe).unwrap(), 10)
        .unwrap();

    let (_, v) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "max_iterations": 300 })),
    )
    .await;
    let job_id = v["job_id"].as_str().unwrap().to_string();
    let mut seen = Vec::new();
    loop {
        let (status, v) = call(
            &f.app,
            Method::POST,
            "/query",
            Some(json!({ "features": probe })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        seen.push((
            v["meta"]["model_version"].as_str().unwrap().to_string(),
            v["hits"].clone(),
        ));
        let (_, job) = call(&f.app, Method::GET, &format!("/retrain/{job_id}"), None).await;
        if job["state"]["status"] == "done" {
            break;
        }
    }
    let new_snap = f.state.snapshot();
    let new_hits = new_snap
        .index
        .query(&new_snap.model.as_ref().unwrap().embed(&probe).unwrap(), 10)
        .unwrap();
    let (_, v) = call(
        &f.app,
        Method::POST,
        "/query",
        Some(json!({ "features": probe })),
    )
    .await;
    seen.push((
        v["meta"]["model_version"].as_str().unwrap().to_string(),
        v["hits"].clone(),
    ));
    for (version, hits) in &seen {
        let expected = match version.as_str() {
            "model-0" => &old_hits,
            "model-1" => &new_hits,
            other => panic!("unexpected version {other}"),
        };
        assert_eq!(hits, &serde_json::to_value(expected).unwrap());
    }
    assert_eq!(seen.last().unwrap().0, "model-1");
}

#[tokio::test]
async fn retrain_from_scratch_without_model() {
    let f = fixture(false, true);
    let (_, v) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "max_iterations": 20 })),
    )
    .await;
    let job = wait_for_job(&f.app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"]["status"], "done");
    assert_eq!(job["state"]["model_version"], "model-0");
    let (status, _) = call(&f.app, Method::GET, "/projection", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn failing_job_is_reported() {
    let f = fixture(true, true);
    let (_, v) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "eta": 1e300, "max_iterations": 50 })),
    )
    .await;
    let job = wait_for_job(&f.app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"]["status"], "failed", "{job}");
    assert_eq!(job["history"], json!(["queued", "running", "failed"]));
    assert!(job["state"]["iteration"].is_u64());
    // The served model is untouched.
    assert_eq!(f.state.snapshot().model_version.as_deref(), Some("model-0"));

    let (status, _) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "eta": -1.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "bogus": 1 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn feedback_joins_retraining_and_reindexing() {
    let f = fixture(true, true);
    let inside = json!({ "doc_id": "fb-in", "features": vec![0.2; 8], "year": 1903 });
    let outside = json!({ "doc_id": "fb-out", "features": vec![0.3; 8], "year": 1850 });
    call(&f.app, Method::POST, "/feedback/label", Some(inside)).await;
    call(&f.app, Method::POST, "/feedback/label", Some(outside)).await;
    let (_, v) = call(
        &f.app,
        Method::POST,
        "/retrain",
        Some(json!({ "max_iterations": 10 })),
    )
    .await;
    let job = wait_for_job(&f.app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"]["skipped_records"], 1);
    let snap = f.state.snapshot();
    let model = snap.model.as_deref().unwrap();
    // Feedback is re-embedded with the new model.
    assert_eq!(
        snap.index.get("fb-in").unwrap().embedding,
        model.embed(&[0.2; 8]).unwrap()
    );
    assert_eq!(
        snap.index.get("fb-out").unwrap().embedding,
        model.embed(&[0.3; 8]).unwrap()
    );
}
