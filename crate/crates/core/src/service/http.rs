//! HTTP JSON API.
//!
//! | method | path                    | body                     |
//! |--------|-------------------------|--------------------------|
//! | POST   | `/v1/sessions`          | [`CreateSessionRequest`] |
//! | DELETE | `/v1/sessions/{id}`     |                          |
//! | POST   | `/v1/supervise`         | [`SuperviseRequest`]     |
//! | GET    | `/v1/metrics`           |                          |
//! | GET    | `/v1/metrics/{id}`      |                          |

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use super::wire::{CreateSessionRequest, ErrorBody, SuperviseRequest};
use super::{ServiceError, Supervisor};
use crate::trace::SessionId;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::SessionExists(_) => StatusCode::CONFLICT,
            ServiceError::Supervision(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

fn rejected(rejection: JsonRejection) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: rejection.body_text() })).into_response()
}

#[derive(Clone)]
struct AppState {
    supervisor: Arc<Supervisor>,
    token: Option<Arc<str>>,
}

/// Routes without authentication.
pub fn router(supervisor: Arc<Supervisor>) -> Router {
    router_with_token(supervisor, None)
}

/// Routes that require `Authorization: Bearer <token>` when a token is given.
pub fn router_with_token(supervisor: Arc<Supervisor>, token: Option<String>) -> Router {
    let state = AppState { supervisor, token: token.map(Arc::from) };
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", delete(close_session))
        .route("/v1/supervise", post(supervise))
        .route("/v1/metrics", get(all_metrics))
        .route("/v1/metrics/{id}", get(session_metrics))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return (StatusCode::UNAUTHORIZED, Json(ErrorBody { error: "missing or invalid token".into() }))
                .into_response();
        }
    }
    next.run(req).await
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return rejected(e),
    };
    match state.supervisor.create_session(req).await {
        Ok(created) => (StatusCode::CREATED, Json(created)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn close_session(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.supervisor.close_session(&SessionId::new(id)).await {
        Ok(metrics) => Json(metrics).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn supervise(State(state): State<AppState>, body: Result<Json<SuperviseRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return rejected(e),
    };
    match state.supervisor.handle_supervise(req).await {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn all_metrics(State(state): State<AppState>) -> Response {
    match state.supervisor.get_metrics(None).await {
        Ok(m) => Json(m).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn session_metrics(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.supervisor.get_metrics(Some(&SessionId::new(id))).await {
        Ok(m) => Json(m).into_response(),
        Err(e) => e.into_response(),
    }
}

/// Serves until `shutdown` resolves, then closes every open session.
pub async fn serve(
    supervisor: Arc<Supervisor>,
    listener: TcpListener,
    token: Option<String>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router_with_token(supervisor.clone(), token);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    supervisor.close_all().await;
    Ok(())
}
