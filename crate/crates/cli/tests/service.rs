use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use omnitraj::encoders::{EncoderConfig, Modality};
use omnitraj::pipeline::{build_corpus, build_stores, train_model, CorpusSpec};
use omnitraj::retrieval::{EmbeddingStore, StoreSet};
use omnitraj::training::TrainConfig;
use omnitraj::Exec;
use omnitraj_cli::service::router;
use omnitraj_cli::Snapshot;

fn spec(count: usize) -> CorpusSpec {
    CorpusSpec {
        rows: 4,
        cols: 4,
        count,
        min_hops: 8,
        max_hops: 12,
        ..CorpusSpec::toy(3)
    }
}

fn tiny(vocab: usize, frame: omnitraj::data::Frame) -> EncoderConfig {
    EncoderConfig {
        d: 8,
        h: 8,
        blocks: 1,
        heads: 2,
        patch: 4,
        resample_len: 16,
        ..EncoderConfig::toy(vocab, frame)
    }
}

/// Small snapshot with a briefly trained model and real stores.
fn small() -> Arc<Snapshot> {
    let corpus = build_corpus(&spec(80)).unwrap();
    let enc = tiny(corpus.road_vocab(), corpus.frame);
    let cfg = TrainConfig {
        epochs: 1,
        batch: 8,
        ..TrainConfig::toy(5)
    };
    let recs = corpus.dataset.records;
    let trained = train_model(&enc, &cfg, &recs, Exec::default(), |_, _| Ok(())).unwrap();
    let stores = build_stores(&trained.encoders, &recs, Exec::default()).unwrap();
    Arc::new(Snapshot::new(trained.encoders, stores, recs, corpus.grid, corpus.network).unwrap())
}

/// `count` candidates with random unit rows and an untrained toy-size model.
fn large(count: usize) -> Arc<Snapshot> {
    let corpus = build_corpus(&CorpusSpec {
        count,
        ..CorpusSpec::toy(21)
    })
    .unwrap();
    let enc = EncoderConfig::toy(corpus.road_vocab(), corpus.frame);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::toy(1)
    };
    let recs = corpus.dataset.records;
    let trained = train_model(&enc, &cfg, &recs[..2], Exec::default(), |_, _| Ok(())).unwrap();
    let ids: Vec<u64> = recs.iter().map(|r| r.id()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut stores = StoreSet::new();
    for m in Modality::CANONICAL {
        let mut data = Vec::with_capacity(ids.len() * enc.h);
        for _ in &ids {
            let row: Vec<f64> = (0..enc.h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(row.iter().map(|v| (v / n) as f32));
        }
        let store = EmbeddingStore::new(m, enc.h, trained.encoders.fingerprint, ids.clone(), data).unwrap();
        stores.insert(store).unwrap();
    }
    Arc::new(Snapshot::new(trained.encoders, stores, recs, corpus.grid, corpus.network).unwrap())
}

async fn call(s: &Arc<Snapshot>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(s: &Arc<Snapshot>, uri: &str) -> (StatusCode, Value) {
    let (status, body) = call(s, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap())
}

fn post_req(body: &str) -> Request<Body> {
    Request::post("/query")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn post(s: &Arc<Snapshot>, body: &Value) -> (StatusCode, Value) {
    let (status, bytes) = call(s, post_req(&body.to_string())).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn roads_of(s: &Snapshot, id: u64) -> Vec<u32> {
    s.records[&id].road.as_ref().unwrap().segment_ids.clone()
}

#[tokio::test]
async fn read_endpoints_describe_the_snapshot() {
    let s = small();
    let (st, v) = get(&s, "/health").await;
    assert_eq!((st, v), (StatusCode::OK, json!({"status": "ok"})));

    let (st, v) = get(&s, "/stats").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["candidates"], s.candidates());
    assert_eq!(v["stores"].as_array().unwrap().len(), 4);
    assert_eq!(v["road_vocab"], 24);
    assert_eq!(v["region_vocab"], 256);
    let fp = v["checkpoint_fingerprint"].as_str().unwrap();
    assert_eq!(fp.len(), 32);
    assert!(v["stores"].as_array().unwrap().iter().all(|st| st["fingerprint"] == fp));

    let id = s.stores.get(Modality::Traj).unwrap().ids()[3];
    let (st, v) = get(&s, &format!("/trajectories/{id}")).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["id"], id);
    assert_eq!(v["points"].as_array().unwrap().len(), s.records[&id].trajectory.len());
    assert_eq!(v["road"], json!(roads_of(&s, id)));

    let (st, v) = get(&s, "/grid").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!((v["rows"].clone(), v["cols"].clone()), (json!(16), json!(16)));

    let (st, v) = get(&s, "/network").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["nodes"].as_array().unwrap().len(), 16);
    let segs = v["segments"].as_array().unwrap();
    assert_eq!(segs.len(), 24);
    assert_eq!(segs[0]["polyline"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn lookups_reject_bad_and_unknown_ids() {
    let s = small();
    let (st, v) = get(&s, "/trajectories/abc").await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_id");
    let (st, v) = get(&s, "/trajectories/999999").await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
}

#[tokio::test]
async fn queries_rank_and_report_provenance() {
    let s = small();
    let id = s.stores.get(Modality::Traj).unwrap().ids()[0];
    let rec = &s.records[&id];
    let top: Vec<[f64; 2]> = rec.topology.as_ref().unwrap().points.iter().map(|p| [p.x, p.y]).collect();
    let body = json!({
        "modalities": {"topology": top, "road": roads_of(&s, id)},
        "k": 7,
    });
    let (st, v) = post(&s, &body).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 7);
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|x| (x * 1e6 - (x * 1e6).round()).abs() < 1e-6));
    assert_eq!(v["provenance"]["modalities"], "top+road");
    assert_eq!(v["provenance"]["target"], "traj");
    assert_eq!(v["provenance"]["stage"], "single");

    let two = json!({
        "modalities": {"topology": top, "road": roads_of(&s, id)},
        "k": 5,
        "two_stage": {"coarse": "road", "subset": 20},
    });
    let (st, v) = post(&s, &two).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["provenance"]["stage"], "two_stage");
    assert_eq!(v["provenance"]["coarse"], "road");
    assert_eq!(v["provenance"]["subset"], 20);
    assert_eq!(v["results"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn identical_requests_give_identical_bytes() {
    let s = small();
    let id = s.stores.get(Modality::Traj).unwrap().ids()[5];
    let body = json!({"modalities": {"road": roads_of(&s, id)}, "k": 10}).to_string();
    let (a, x) = call(&s, post_req(&body)).await;
    let (b, y) = call(&s, post_req(&body)).await;
    assert_eq!(a, StatusCode::OK);
    assert_eq!(a, b);
    assert_eq!(x, y);
}

#[tokio::test]
async fn query_errors_map_to_status_codes() {
    let s = small();
    let n = s.candidates();
    let cases = [
        (json!({"modalities": {}, "k": 3}), StatusCode::BAD_REQUEST, "parameter"),
        (json!({"modalities": {"road": [1]}, "k": 0}), StatusCode::BAD_REQUEST, "parameter"),
        (json!({"modalities": {"road": [1]}, "k": n + 1}), StatusCode::BAD_REQUEST, "parameter"),
        (json!({"modalities": {"road": [100000]}, "k": 3}), StatusCode::BAD_REQUEST, "vocabulary"),
        (json!({"modalities": {"region": [256]}, "k": 3}), StatusCode::BAD_REQUEST, "vocabulary"),
        (
            json!({"modalities": {"road": [1], "region": [2]}, "k": 3}),
            StatusCode::UNPROCESSABLE_ENTITY,
            "unsupported_subset",
        ),
        (
            json!({"modalities": {"road": [1]}, "k": 5, "two_stage": {"coarse": "road", "subset": 2}}),
            StatusCode::BAD_REQUEST,
            "parameter",
        ),
        (
            json!({"modalities": {"topology": [[0.0, 0.0], [1.0, 1.0]]}, "k": 5, "two_stage": {"coarse": "region", "subset": 20}}),
            StatusCode::BAD_REQUEST,
            "parameter",
        ),
        (json!({"modalities": {"roads": [1]}, "k": 3}), StatusCode::BAD_REQUEST, "malformed_body"),
        (json!({"modalities": {"road": [1]}}), StatusCode::BAD_REQUEST, "malformed_body"),
    ];
    for (body, status, code) in cases {
        let (st, v) = post(&s, &body).await;
        assert_eq!(st, status, "{body} -> {v}");
        assert_eq!(v["error"], code, "{body} -> {v}");
    }
    let (st, v) = post(&s, &json!({"modalities": {"road": [1], "region": [2]}, "k": 3})).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let supported: Vec<&str> = v["supported"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(supported.contains(&"top+road+region") && !supported.contains(&"road+region"));

    let (st, bytes) = call(&s, post_req("{not json")).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "malformed_body");
}

#[tokio::test]
async fn every_endpoint_answers_within_a_second_at_20k_candidates() {
    let s = large(20_000);
    assert_eq!(s.candidates(), 20_000);
    let id = s.stores.get(Modality::Traj).unwrap().ids()[123];
    let rec = s.records[&id].clone();
    let top: Vec<[f64; 2]> = rec.topology.as_ref().unwrap().points.iter().map(|p| [p.x, p.y]).collect();
    let limit = Duration::from_secs(1);
    for uri in ["/health", "/stats", "/grid", "/network", &format!("/trajectories/{id}")] {
        let t = Instant::now();
        let (st, _) = get(&s, uri).await;
        assert_eq!(st, StatusCode::OK);
        assert!(t.elapsed() < limit, "{uri} took {:?}", t.elapsed());
    }
    let bodies = [
        json!({"modalities": {"topology": top}, "k": 10}),
        json!({"modalities": {"road": roads_of(&s, id)}, "k": 10}),
        json!({"modalities": {"region": rec.region.as_ref().unwrap().region_ids}, "k": 10}),
        json!({"modalities": {"topology": top, "road": roads_of(&s, id), "region": rec.region.as_ref().unwrap().region_ids}, "k": 100}),
        json!({"modalities": {"topology": top, "road": roads_of(&s, id)}, "k": 10, "two_stage": {"coarse": "road", "subset": 2000}}),
    ];
    for body in bodies {
        let t = Instant::now();
        let (st, v) = post(&s, &body).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        assert!(t.elapsed() < limit, "{body} took {:?}", t.elapsed());
    }
}
