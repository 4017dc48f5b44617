//! Line protocol: one JSON request per input line, one JSON reply per output
//! line, in order.
//!
//! ```text
//! {"op":"create_session","session_id":"s1","global_task":"...","agents":[{"name":"web","local_task":"..."}]}
//! {"op":"supervise","session_id":"s1","step":{"agent_name":"web","observations":"..."}}
//! {"op":"metrics","session_id":"s1"}
//! {"op":"close_session","session_id":"s1"}
//! ```
//!
//! Replies are `{"ok":true,"result":...}` or `{"ok":false,"error":"..."}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt};

use super::wire::{CreateSessionRequest, SuperviseRequest};
use super::{ServiceError, Supervisor};
use crate::trace::SessionId;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LineRequest {
    CreateSession(CreateSessionRequest),
    Supervise(SuperviseRequest),
    CloseSession {
        session_id: SessionId,
    },
    Metrics {
        #[serde(default)]
        session_id: Option<SessionId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LineReply {
    fn success(value: impl Serialize) -> Self {
        match serde_json::to_value(value) {
            Ok(v) => Self { ok: true, result: Some(v), error: None },
            Err(e) => Self::failure(e.to_string()),
        }
    }

    fn failure(error: String) -> Self {
        Self { ok: false, result: None, error: Some(error) }
    }
}

fn reply<T: Serialize>(r: Result<T, ServiceError>) -> LineReply {
    match r {
        Ok(v) => LineReply::success(v),
        Err(e) => LineReply::failure(e.to_string()),
    }
}

pub async fn handle_line(supervisor: &Supervisor, line: &str) -> LineReply {
    let req: LineRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return LineReply::failure(format!("malformed request: {e}")),
    };
    match req {
        LineRequest::CreateSession(r) => reply(supervisor.create_session(r).await),
        LineRequest::Supervise(r) => reply(supervisor.handle_supervise(r).await),
        LineRequest::CloseSession { session_id } => reply(supervisor.close_session(&session_id).await),
        LineRequest::Metrics { session_id } => reply(supervisor.get_metrics(session_id.as_ref()).await),
    }
}

/// Processes lines until end of input, then closes every open session.
pub async fn run<R, W>(supervisor: &Supervisor, input: R, mut output: W) -> std::io::Result<()>
where
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut lines = input.lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let r = handle_line(supervisor, &line).await;
        let mut text = serde_json::to_string(&r).map_err(std::io::Error::other)?;
        text.push('\n');
        output.write_all(text.as_bytes()).await?;
        output.flush().await?;
    }
    supervisor.close_all().await;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::SupervisorConfig;
    use crate::decision::backend::MockBackend;

    #[tokio::test]
    async fn session_round_trip_over_lines() {
        let sup = Supervisor::new(SupervisorConfig::default(), Arc::new(MockBackend::approving()));
        let input = concat!(
            r#"{"op":"create_session","session_id":"s1","global_task":"g","agents":[{"name":"web"}]}"#,
            "\n",
            r#"{"op":"supervise","session_id":"s1","step":{"agent_name":"web","observations":"fine"}}"#,
            "\n\nnot json\n",
            r#"{"op":"metrics","session_id":"s1"}"#,
            "\n",
        );
        let mut out = Vec::new();
        run(&sup, input.as_bytes(), &mut out).await.unwrap();
        let replies: Vec<LineReply> =
            String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(replies.len(), 4);
        assert!(replies[0].ok);
        assert_eq!(replies[1].result.as_ref().unwrap()["trigger"], "no_trigger");
        assert!(!replies[2].ok);
        assert!(replies[2].error.as_ref().unwrap().starts_with("malformed request"));
        assert_eq!(replies[3].result.as_ref().unwrap()["sessions"][0]["steps"], 1);
    }
}
