use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use metabandit::io::{read_session, to_participant_history, SessionRecord, POINTS_PER_ON_TIME};
use metabandit::{AgentConfig, ChoiceRule, ConditionLabel, PolicyKind};
use metabandit_cli::server::{play_bot, router, session_environment, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path) -> Router {
    router(AppState::load(ServiceConfig::new(dir)).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, value)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

fn choice_for(step: usize) -> usize {
    (step * 7 % 3) + 1
}

/// Plays `n` choices starting at `start`, returning every response body.
async fn play(app: &Router, id: &str, start: usize, n: usize) -> Vec<Value> {
    let mut out = Vec::new();
    for step in start..start + n {
        let (status, v) = call(
            app,
            "POST",
            &format!("/sessions/{id}/choice"),
            Some(json!({ "airline": choice_for(step), "reaction_time_ms": 500 + step })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "step {step}: {v}");
        out.push(v);
    }
    out
}

async fn log_of(app: &Router, id: &str) -> SessionRecord {
    let (status, v) = call(app, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                out.insert(k.clone());
                keys(x, out);
            }
        }
        Value::Array(xs) => xs.iter().for_each(|x| keys(x, out)),
        _ => {}
    }
}

fn floats(v: &Value, out: &mut Vec<f64>) {
    match v {
        Value::Number(n) if !n.is_u64() && !n.is_i64() => out.push(n.as_f64().unwrap()),
        Value::Object(map) => map.values().for_each(|x| floats(x, out)),
        Value::Array(xs) => xs.iter().for_each(|x| floats(x, out)),
        _ => {}
    }
}

#[tokio::test]
async fn hundred_choices_complete_a_session_and_unlock_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"condition": "FarLow", "subject": "human", "seed": 4}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((v["k"].as_u64(), v["m"].as_u64(), v["t"].as_u64()), (Some(3), Some(10), Some(10)));
    assert_eq!(v["airline_names"], json!(["Ascend", "Summit", "DynaAir"]));
    let id = v["session_id"].as_str().unwrap().to_string();

    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let responses = play(&app, &id, 0, 100).await;
    assert_eq!(responses[9]["next"], json!({"route": 2, "flight": 1}));
    assert_eq!(responses[99]["next"], Value::Null);

    let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(state["done"], json!(true));
    let record = log_of(&app, &id).await;
    assert!(record.completed);
    assert_eq!(record.rows.len(), 100);
    assert_eq!(record.header.route_rates.len(), 10);
    record.validate().unwrap();
    assert_eq!(read_session(&dir.path().join(format!("{id}.jsonl"))).unwrap(), record);
}

#[tokio::test]
async fn errors_for_done_unknown_and_out_of_turn() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({"condition": "CloseHigh", "subject": "human", "seed": 1})).await;

    let (status, _) = call(&app, "GET", "/sessions/nope/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/sessions/nope/choice", Some(json!({"airline": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/choice"),
        Some(json!({"airline": 1, "route": 1, "flight": 2})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"airline": 4}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/choice"),
        Some(json!({"airline": 2, "route": 1, "flight": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    play(&app, &id, 1, 99).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"airline": 1}))).await;
    assert_eq!(status, StatusCode::GONE);

    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"condition": "Nowhere", "subject": "human"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn responses_hide_latent_rates_until_completion() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"condition": "FarHigh", "subject": "human", "seed": 8}))).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    let mut payloads = vec![created];
    for step in 0..100 {
        let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
        payloads.push(state);
        payloads.extend(play(&app, &id, step, 1).await);
    }
    let allowed: BTreeSet<String> = [
        "session_id", "k", "m", "t", "airline_names", "route", "flight", "totals", "on_time", "points", "done",
        "outcome", "points_after", "next",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut seen = BTreeSet::new();
    let mut numbers = Vec::new();
    for p in &payloads {
        keys(p, &mut seen);
        floats(p, &mut numbers);
    }
    assert!(seen.is_subset(&allowed), "unexpected keys {:?}", seen.difference(&allowed).collect::<Vec<_>>());
    assert!(numbers.is_empty(), "fractional values leaked: {numbers:?}");

    let record = log_of(&app, &id).await;
    assert!(record.header.route_rates.iter().all(|r| r.rates.len() == 3));
}

#[tokio::test]
async fn points_follow_the_on_time_count() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({"condition": "CloseLow", "subject": "human", "seed": 12})).await;
    let mut on_time = 0u64;
    for (step, v) in play(&app, &id, 0, 100).await.into_iter().enumerate() {
        on_time += v["outcome"].as_u64().unwrap();
        assert_eq!(v["points_after"].as_u64().unwrap(), POINTS_PER_ON_TIME * on_time, "step {step}");
    }
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(state["totals"], json!({"on_time": on_time, "points": 10 * on_time}));
}

#[tokio::test]
async fn bot_session_matches_a_direct_episode() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(
        &app,
        json!({"condition": "FarLow", "subject": "bot", "seed": 17, "policy": "brmdp", "rule": "eps:0.2"}),
    )
    .await;
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(state["done"], json!(true));
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"airline": 1}))).await;
    assert_eq!(status, StatusCode::GONE);
    let record = log_of(&app, &id).await;
    record.validate().unwrap();

    let env = session_environment(ConditionLabel::FarLow, 10, 10, 17).unwrap();
    let config = AgentConfig::new(PolicyKind::Brmdp { draws: 1 }, ChoiceRule::eps_greedy(0.2).unwrap(), 10);
    let traj = play_bot(&env, &config, 17).unwrap();
    assert_eq!(record.header.route_rates, env.routes);
    assert_eq!(record.header.agent.as_ref(), Some(&config));
    let expected: Vec<(usize, u8)> = traj
        .routes
        .iter()
        .flat_map(|r| r.steps.iter().map(|s| (s.airline + 1, s.outcome)))
        .collect();
    let got: Vec<(usize, u8)> = record.rows.iter().map(|r| (r.airline, r.outcome)).collect();
    assert_eq!(got, expected);
}

#[tokio::test]
async fn replaying_choices_reproduces_the_record() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let body = json!({"condition": "FarLow", "subject": "human", "seed": 23});
    let a = app(first.path());
    let id_a = create(&a, body.clone()).await;
    play(&a, &id_a, 0, 100).await;
    let rec_a = log_of(&a, &id_a).await;

    let b = app(second.path());
    let id_b = create(&b, body).await;
    for row in &rec_a.rows {
        let (status, v) = call(
            &b,
            "POST",
            &format!("/sessions/{id_b}/choice"),
            Some(json!({"airline": row.airline, "reaction_time_ms": row.reaction_time_ms, "route": row.route, "flight": row.flight})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v["outcome"].as_u64(), Some(u64::from(row.outcome)));
    }
    let mut rec_b = log_of(&b, &id_b).await;
    assert_eq!(to_participant_history(&rec_a).unwrap().routes, to_participant_history(&rec_b).unwrap().routes);
    rec_b.header.session_id = rec_a.header.session_id.clone();
    for (rb, ra) in rec_b.rows.iter_mut().zip(&rec_a.rows) {
        rb.wall_clock = ra.wall_clock.clone();
    }
    assert_eq!(rec_b, rec_a);
}

#[tokio::test]
async fn restart_resumes_from_the_data_directory() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let a = app(dir.path());
        let id = create(&a, json!({"condition": "CloseHigh", "subject": "human", "seed": 5})).await;
        play(&a, &id, 0, 37).await;
        id
    };
    let state = AppState::load(ServiceConfig::new(dir.path())).unwrap();
    let b = router(Arc::clone(&state));
    let (status, v) = call(&b, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((v["route"].as_u64(), v["flight"].as_u64(), v["done"].as_bool()), (Some(4), Some(8), Some(false)));
    play(&b, &id, 37, 63).await;
    let record = log_of(&b, &id).await;
    assert_eq!(record.rows.len(), 100);
    record.validate().unwrap();
    let expected: Vec<usize> = (0..100).map(choice_for).collect();
    assert_eq!(record.rows.iter().map(|r| r.airline).collect::<Vec<_>>(), expected);
    assert_eq!(read_session(&dir.path().join(format!("{id}.jsonl"))).unwrap(), record);
}
