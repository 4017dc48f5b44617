use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use supervisor_core::decision::backend::HttpChatBackend;
use supervisor_core::decision::{BackendError, DecisionBackend};
use supervisor_core::TokenUsage;

#[derive(Clone, Default)]
struct Seen {
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<String>>>,
}

async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

#[tokio::test]
async fn chat_completion_round_trip() {
    let seen = Seen::default();
    let s = seen.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |headers: HeaderMap, Json(body): Json<Value>| {
            let s = s.clone();
            async move {
                s.bodies.lock().unwrap().push(body);
                if let Some(v) = headers.get("authorization") {
                    s.auth.lock().unwrap().push(v.to_str().unwrap().to_string());
                }
                Json(json!({
                    "choices": [{"message": {"role": "assistant", "content": "{\"action\":\"approve\"}"}}],
                    "usage": {"prompt_tokens": 12, "completion_tokens": 3}
                }))
            }
        }),
    );
    let base = serve(app).await;
    let backend = HttpChatBackend::new(&base, "test-model", Some("k".into()), Duration::from_secs(5)).unwrap();
    let reply = backend.complete("hello").await.unwrap();
    assert_eq!(reply.text, "{\"action\":\"approve\"}");
    assert_eq!(reply.usage, Some(TokenUsage::new(12, 3)));
    let body = &seen.bodies.lock().unwrap()[0];
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["content"], "hello");
    assert_eq!(seen.auth.lock().unwrap()[0], "Bearer k");
}

#[tokio::test]
async fn server_errors_and_bad_bodies_surface() {
    let app = Router::new()
        .route("/a/chat/completions", post(|| async { (StatusCode::SERVICE_UNAVAILABLE, "busy") }))
        .route("/b/chat/completions", post(|| async { Json(json!({"choices": []})) }));
    let base = serve(app).await;
    let root = base.trim_end_matches("/v1");
    let a = HttpChatBackend::new(&format!("{root}/a"), "m", None, Duration::from_secs(5)).unwrap();
    assert!(matches!(a.complete("x").await, Err(BackendError::Http(_))));
    let b = HttpChatBackend::new(&format!("{root}/b"), "m", None, Duration::from_secs(5)).unwrap();
    assert!(matches!(b.complete("x").await, Err(BackendError::Malformed(_))));
}

#[tokio::test]
async fn request_timeout_is_an_error() {
    let app = Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(5)).await;
            "late"
        }),
    );
    let base = serve(app).await;
    let backend = HttpChatBackend::new(&base, "m", None, Duration::from_millis(200)).unwrap();
    assert!(backend.complete("x").await.is_err());
}
