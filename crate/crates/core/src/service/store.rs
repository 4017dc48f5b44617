//! Append-only JSONL session logs.
//!
//! One file per session, `{data_dir}/{session_id}.jsonl`. Each line is a
//! record tagged by its `event` field:
//!
//! - `session`: id, global task, agent registry and supervision flag; rewritten
//!   whenever the registry changes, the last one wins.
//! - `step`: the step exactly as the agent produced it.
//! - `supervision`: the event describing what the supervisor did to a step.
//!
//! Replaying the records re-applies each decision to its step, so the rebuilt
//! session matches the live one, modified observations included.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{apply, SupervisionEvent};
use crate::trace::{ActionStep, Session, SessionId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: SessionId,
    pub global_task: String,
    pub agents: BTreeMap<String, String>,
    pub supervise: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Session(SessionHeader),
    Step(ActionStep),
    Supervision(SupervisionEvent),
}

pub fn log_path(data_dir: &Path, session: &SessionId) -> PathBuf {
    data_dir.join(format!("{}.jsonl", session.as_str()))
}

#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl SessionLog {
    /// Fails with `AlreadyExists` rather than appending to an older log.
    pub fn create(data_dir: &Path, session: &SessionId) -> io::Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let path = log_path(data_dir, session);
        let file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        Ok(Self { path, writer: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and flushes it to the OS.
    pub fn append(&mut self, record: &LogRecord) -> io::Result<()> {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    pub fn close(mut self) -> io::Result<()> {
        self.writer.flush()?;
        self.writer.get_ref().sync_all()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogWarning {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LogWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogContents {
    /// Parsed records with their 1-based line numbers.
    pub records: Vec<(usize, LogRecord)>,
    pub warnings: Vec<LogWarning>,
}

/// Parses every line it can; bad lines become warnings.
pub fn parse_log(text: &str) -> LogContents {
    let mut out = LogContents::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(line) {
            Ok(r) => out.records.push((i + 1, r)),
            Err(e) => out.warnings.push(LogWarning { line: i + 1, message: format!("unreadable record: {e}") }),
        }
    }
    out
}

pub fn read_log(path: &Path) -> io::Result<LogContents> {
    Ok(parse_log(&std::fs::read_to_string(path)?))
}

/// Session logs in `data_dir`, sorted by file name.
pub fn list_logs(data_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    Ok(paths)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RebuildError {
    #[error("log has no session record")]
    NoHeader,
}

#[derive(Debug, Clone)]
pub struct RebuiltSession {
    pub session: Session,
    pub supervise: bool,
    pub warnings: Vec<LogWarning>,
}

/// Reconstructs a session from its records. Records that do not fit (steps
/// of unknown agents, events for missing steps) are skipped with a warning.
pub fn rebuild_session(contents: &LogContents) -> Result<RebuiltSession, RebuildError> {
    let mut warnings = contents.warnings.clone();
    let mut session: Option<Session> = None;
    let mut supervise = true;
    for (line, record) in &contents.records {
        match record {
            LogRecord::Session(h) => {
                let s = session.get_or_insert_with(|| Session::new(h.session_id.clone(), h.global_task.clone()));
                s.agents.extend(h.agents.iter().map(|(k, v)| (k.clone(), v.clone())));
                supervise = h.supervise;
            }
            LogRecord::Step(step) => {
                let Some(s) = session.as_mut() else {
                    warnings.push(LogWarning { line: *line, message: "step before session record".into() });
                    continue;
                };
                if let Err(e) = s.record_step(step.clone()) {
                    warnings.push(LogWarning { line: *line, message: format!("step skipped: {e}") });
                }
            }
            LogRecord::Supervision(event) => {
                let Some(s) = session.as_mut() else {
                    warnings.push(LogWarning { line: *line, message: "event before session record".into() });
                    continue;
                };
                let Some(step) = s.step(event.step_id) else {
                    warnings
                        .push(LogWarning { line: *line, message: format!("event for unknown step {}", event.step_id) });
                    continue;
                };
                let modified = apply(&event.decision, step, event.verification_findings.as_deref());
                if modified.observations != step.observations {
                    s.replace_observations(event.step_id, modified.observations);
                }
                s.record_event(event.clone());
            }
        }
    }
    let session = session.ok_or(RebuildError::NoHeader)?;
    Ok(RebuiltSession { session, supervise, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::SupervisionDecision;
    use crate::executor::{EventId, EventOutcome};
    use crate::filter::TriggerKind;
    use crate::trace::{StepId, TokenUsage};

    fn header() -> LogRecord {
        LogRecord::Session(SessionHeader {
            session_id: "s".into(),
            global_task: "g".into(),
            agents: [("a".to_string(), "t".to_string())].into(),
            supervise: true,
        })
    }

    #[test]
    fn records_are_tagged() {
        let step = LogRecord::Step(ActionStep::new("s", 1, "a"));
        let v = serde_json::to_value(&step).unwrap();
        assert_eq!(v["event"], "step");
        assert_eq!(v["agent_name"], "a");
        assert_eq!(serde_json::to_value(header()).unwrap()["event"], "session");
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = SessionLog::create(dir.path(), &"s".into()).unwrap();
        let records = vec![
            header(),
            LogRecord::Step(ActionStep::new("s", 1, "a").with_observations("x".repeat(50))),
            LogRecord::Supervision(SupervisionEvent {
                event_id: EventId(1),
                step_id: StepId(1),
                trigger: TriggerKind::ExcessiveLength,
                decision: SupervisionDecision::correct("a", "short"),
                pre_length: 50,
                post_length: 5,
                supervisor_usage: TokenUsage::new(3, 4),
                outcome: EventOutcome::Applied,
                verification_findings: None,
            }),
        ];
        for r in &records {
            log.append(r).unwrap();
        }
        let path = log.path().to_path_buf();
        log.close().unwrap();
        let contents = read_log(&path).unwrap();
        assert!(contents.warnings.is_empty());
        assert_eq!(contents.records.into_iter().map(|(_, r)| r).collect::<Vec<_>>(), records);

        let rebuilt = rebuild_session(&read_log(&path).unwrap()).unwrap();
        let step = rebuilt.session.step(StepId(1)).unwrap();
        assert!(step.observations.ends_with("short"));
        assert_eq!(rebuilt.session.supervisor_tokens().total, 7);
    }

    #[test]
    fn corrupt_lines_warn_with_line_numbers() {
        let good = serde_json::to_string(&header()).unwrap();
        let text = format!("{good}\nnot json\n\n{{\"event\":\"step\",\"step_id\":");
        let contents = parse_log(&text);
        assert_eq!(contents.records.len(), 1);
        let lines: Vec<usize> = contents.warnings.iter().map(|w| w.line).collect();
        assert_eq!(lines, vec![2, 4]);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert_eq!(rebuild_session(&parse_log("")).unwrap_err(), RebuildError::NoHeader);
    }
}
