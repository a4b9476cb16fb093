use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use spectrec::spectral::{explain, leading_items};
use spectrec::{
    Checkpoint, Dataset, EvalProtocol, Experiment, Format, LoadOptions, ModelConfig, Recommender, Task,
};
use spectrec_service::{router, AppState, IdPolicy, ServiceOptions, SharedState};
use tower::ServiceExt;

/// Deterministic toy stream: 9 users drifting over 12 items.
fn toy_csv() -> String {
    let mut out = String::from("user_id,item_id,timestamp\n");
    let mut x: u64 = 7;
    for t in 0..150 {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (x >> 33) % 9;
        let i = (u * 2 + (x >> 45) % 5 + t / 40) % 12;
        out.push_str(&format!("u{u},i{i},{t}\n"));
    }
    out
}

fn config() -> ModelConfig {
    ModelConfig {
        k: 4,
        beta_t: 1.0,
        beta_i: 1.0,
        lambda_s: 0.3,
        lambda_t: 0.2,
        trajectory: true,
        ..ModelConfig::default()
    }
}

fn dataset() -> Dataset {
    Dataset::parse(&toy_csv(), Format::Canonical, LoadOptions::default()).unwrap()
}

fn fitted(config: &ModelConfig, n_train: usize) -> Checkpoint {
    let data = dataset();
    let model = Recommender::fit(
        config,
        data.n_users() + config.spare_users,
        data.n_items() + config.spare_items,
        data.t_max(),
        &data.events[..n_train],
    )
    .unwrap();
    Checkpoint {
        model,
        users: data.users,
        items: data.items,
    }
}

fn state(config: &ModelConfig, policy: IdPolicy) -> SharedState {
    AppState::new(
        fitted(config, 120),
        ServiceOptions {
            ids: policy,
            save_path: None,
        },
    )
}

async fn call(state: &SharedState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get_json(state: &SharedState, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = call(state, "GET", uri, None).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post_event(state: &SharedState, user: &str, item: &str, t: f64) -> (StatusCode, Value) {
    let body = serde_json::json!({ "user": user, "item": item, "timestamp": t });
    let (status, bytes) = call(state, "POST", "/events", Some(body)).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn item_ids(payload: &Value) -> Vec<String> {
    payload["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["item"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn health_and_model() {
    let s = state(&config(), IdPolicy::Strict);
    let (status, health) = get_json(&s, "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    let (_, model) = get_json(&s, "/model").await;
    assert_eq!(model["n_users"], 9);
    assert_eq!(model["n_items"], 12);
    assert_eq!(model["version"], 0);
    assert_eq!(model["config"]["k"], 4);
}

#[tokio::test]
async fn neutral_weights_are_byte_identical() {
    let s = state(&config(), IdPolicy::Strict);
    for u in 0..9 {
        let (_, a) = call(&s, "GET", &format!("/users/u{u}/recommendations?n=5"), None).await;
        let (_, b) = call(&s, "GET", &format!("/users/u{u}/recommendations?n=5&weights=1,1,1,1"), None).await;
        assert_eq!(a, b);
    }
}

#[tokio::test]
async fn recommendations_follow_model_and_limits() {
    let s = state(&config(), IdPolicy::Strict);
    let snap = s.snapshot();
    let u = snap.users.get("u3").unwrap();
    let (status, payload) = get_json(&s, "/users/u3/recommendations?n=4&exclude_seen=false").await;
    assert_eq!(status, StatusCode::OK);
    let expected = snap
        .model
        .recommend(u, 4, Some(&spectrec::FrequencyWeights::ones(4)), false)
        .unwrap();
    let ranks: Vec<u64> = payload["items"].as_array().unwrap().iter().map(|r| r["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, vec![1, 2, 3, 4]);
    assert_eq!(
        item_ids(&payload),
        expected.iter().map(|(i, _)| snap.items.label(*i)).collect::<Vec<_>>()
    );
    let (status, empty) = get_json(&s, "/users/u3/recommendations?n=0").await;
    assert_eq!(status, StatusCode::OK);
    assert!(empty["items"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn amplifying_a_frequency_changes_some_list() {
    let s = state(&config(), IdPolicy::Strict);
    let mut changed = false;
    for u in 0..9 {
        let (_, base) = get_json(&s, &format!("/users/u{u}/recommendations?n=10&exclude_seen=false")).await;
        for j in 0..4 {
            let mut w = vec!["1"; 4];
            w[j] = "10";
            let uri = format!("/users/u{u}/recommendations?n=3&exclude_seen=false&weights={}", w.join(","));
            let (_, amplified) = get_json(&s, &uri).await;
            changed |= item_ids(&amplified)[..] != item_ids(&base)[..3];
        }
    }
    assert!(changed);
}

#[tokio::test]
async fn malformed_weights_are_rejected() {
    let s = state(&config(), IdPolicy::Strict);
    for w in ["1,1,1", "1,1,-1,1", "1,x,1,1"] {
        let (status, payload) = get_json(&s, &format!("/users/u0/recommendations?weights={w}")).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{w}");
        assert_eq!(payload["error"], "invalid_weights");
        assert!(payload["message"].is_string());
    }
    let (status, payload) = get_json(&s, "/users/u0/recommendations?n=abc").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(payload["error"], "invalid_query");
}

#[tokio::test]
async fn unknown_users_strict_and_lenient() {
    let strict = state(&config(), IdPolicy::Strict);
    let (status, payload) = get_json(&strict, "/users/nobody/recommendations").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(payload["error"], "unknown_user");
    let lenient = state(&config(), IdPolicy::Lenient);
    let (status, payload) = get_json(&lenient, "/users/nobody/recommendations?n=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(payload["items"].as_array().unwrap().len(), 3);
    let (status, payload) = get_json(&lenient, "/users/nobody/trajectory").await;
    assert_eq!(status, StatusCode::OK);
    assert!(payload["points"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn posts_are_visible_to_later_reads() {
    let s = state(&config(), IdPolicy::Strict);
    let before = {
        let snap = s.snapshot();
        snap.model.store().weight(snap.users.get("u1").unwrap(), snap.items.get("i2").unwrap())
    };
    let (status, first) = post_event(&s, "u1", "i2", 130.0).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["version"], 1);
    let (_, rec) = get_json(&s, "/users/u1/recommendations").await;
    assert_eq!(rec["version"], 1);
    let (_, second) = post_event(&s, "u1", "i2", 130.0).await;
    assert_eq!(second["version"], 2);
    let snap = s.snapshot();
    let after = snap.model.store().weight(snap.users.get("u1").unwrap(), snap.items.get("i2").unwrap());
    let added = first["weight"].as_f64().unwrap() + second["weight"].as_f64().unwrap();
    assert!((after - before - added).abs() < 1e-12);
    assert!(added > 0.0);
}

#[tokio::test]
async fn post_errors() {
    let s = state(&config(), IdPolicy::Strict);
    let (status, payload) = post_event(&s, "u1", "i2", 10.0).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(payload["error"], "out_of_order");
    let (status, payload) = post_event(&s, "ghost", "i2", 130.0).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(payload["error"], "unknown_user");
    let (status, _) = call(&s, "POST", "/events", Some(serde_json::json!({ "user": "u1" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.snapshot().model.version(), 0);
}

#[tokio::test]
async fn lenient_posts_claim_spare_rows() {
    let mut c = config();
    c.spare_users = 1;
    let s = state(&c, IdPolicy::Lenient);
    let (status, payload) = post_event(&s, "newcomer", "i0", 130.0).await;
    assert_eq!(status, StatusCode::OK, "{payload}");
    assert_eq!(s.snapshot().users.get("newcomer"), Some(9));
    let (status, payload) = post_event(&s, "second", "i0", 131.0).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(payload["error"], "capacity_exhausted");
    let (status, _) = post_event(&s, "u0", 42.to_string().as_str(), 131.0).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn numeric_ids_are_accepted() {
    let data = Dataset::parse("1,10,0\n2,20,1\n1,20,2\n2,10,3\n", Format::Canonical, LoadOptions::default()).unwrap();
    let c = ModelConfig { k: 1, ..ModelConfig::default() };
    let model = Recommender::fit(&c, 2, 2, 10.0, &data.events).unwrap();
    let s = AppState::new(
        Checkpoint {
            model,
            users: data.users,
            items: data.items,
        },
        ServiceOptions::default(),
    );
    let body = serde_json::json!({ "user": 1, "item": 20, "timestamp": 5.0 });
    let (status, _) = call(&s, "POST", "/events", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn explanations_match_in_process() {
    let s = state(&config(), IdPolicy::Strict);
    let snap = s.snapshot();
    let (u, i) = (snap.users.get("u2").unwrap(), snap.items.get("i5").unwrap());
    let expected = explain(&snap.model.view(), snap.model.store(), u, i, 3, snap.model.config().explain_similarity).unwrap();
    let (status, payload) = get_json(&s, "/users/u2/explanations?item=i5").await;
    assert_eq!(status, StatusCode::OK);
    let got: Vec<(String, f64)> = payload["explanations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["item"].as_str().unwrap().to_string(), e["similarity"].as_f64().unwrap()))
        .collect();
    let want: Vec<(String, f64)> = expected.iter().map(|(h, sim)| (snap.items.label(*h), *sim)).collect();
    assert_eq!(got, want);
    let (status, payload) = get_json(&s, "/users/u2/explanations?item=nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(payload["error"], "unknown_item");
    let (status, _) = get_json(&s, "/users/u2/explanations").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn single_history_user_explains_with_that_item() {
    let data = Dataset::parse("a,x,0\nb,y,1\nb,z,2\n", Format::Canonical, LoadOptions::default()).unwrap();
    let c = ModelConfig { k: 2, ..ModelConfig::default() };
    let model = Recommender::fit(&c, 2, 3, 2.0, &data.events).unwrap();
    let s = AppState::new(
        Checkpoint {
            model,
            users: data.users,
            items: data.items,
        },
        ServiceOptions::default(),
    );
    let (_, payload) = get_json(&s, "/users/a/explanations?item=z&n=5").await;
    let items: Vec<&str> = payload["explanations"].as_array().unwrap().iter().map(|e| e["item"].as_str().unwrap()).collect();
    assert_eq!(items, vec!["x"]);
}

#[tokio::test]
async fn frequencies_and_trajectories_mirror_the_model() {
    let s = state(&config(), IdPolicy::Strict);
    let (status, payload) = get_json(&s, "/frequencies?n_items=2").await;
    assert_eq!(status, StatusCode::OK);
    let groups = payload["frequencies"].as_array().unwrap();
    assert_eq!(groups.len(), 4);
    let snap = s.snapshot();
    for (j, g) in groups.iter().enumerate() {
        let want: Vec<String> = leading_items(snap.model.factors(), j, 2)
            .unwrap()
            .into_iter()
            .map(|i| snap.items.label(i))
            .collect();
        let got: Vec<String> = g["items"].as_array().unwrap().iter().map(|r| r["item"].as_str().unwrap().to_string()).collect();
        assert_eq!(got, want);
    }

    let (_, before) = get_json(&s, "/users/u4/trajectory").await;
    assert!(before["points"].as_array().unwrap().is_empty());
    post_event(&s, "u4", "i1", 125.0).await;
    post_event(&s, "u4", "i3", 126.0).await;
    let (_, after) = get_json(&s, "/users/u4/trajectory").await;
    let points = after["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    let snap = s.snapshot();
    let u = snap.users.get("u4").unwrap();
    let log = snap.model.trajectory().unwrap().user(u);
    assert_eq!(points[1]["timestamp"], 126.0);
    let long: Vec<f64> = points[1]["long_term"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(long, log[1].long_term);
}

#[tokio::test]
async fn replayed_posts_reproduce_the_evaluated_checkpoint() {
    let c = config();
    let data = dataset();
    let protocol = EvalProtocol::new(Task::NextInteraction);
    let exp = Experiment::from_split(&data.events, data.n_users(), data.n_items(), protocol).unwrap();
    let (model, _, _) = exp.run(&c).unwrap();
    let evaluated = Checkpoint {
        model,
        users: data.users.clone(),
        items: data.items.clone(),
    };

    let s = AppState::new(fitted(&c, exp.train.len()), ServiceOptions::default());
    for e in exp.valid.iter().chain(exp.test) {
        let (status, _) = post_event(&s, &data.users.label(e.user), &data.items.label(e.item), e.timestamp).await;
        assert_eq!(status, StatusCode::OK);
    }
    assert_eq!(s.snapshot().to_bytes(), evaluated.to_bytes());
}

#[tokio::test]
async fn save_writes_the_latest_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.ckpt");
    let s = AppState::new(
        fitted(&config(), 120),
        ServiceOptions {
            ids: IdPolicy::Strict,
            save_path: Some(path.clone()),
        },
    );
    post_event(&s, "u0", "i0", 140.0).await;
    assert_eq!(s.save().unwrap(), Some(path.clone()));
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, *s.snapshot());
    assert_eq!(loaded.model.version(), 1);
}
