//! The supervisor sidecar: sessions, the supervise pipeline, persistence and
//! metrics, exposed over [`http`] and [`stdio`].
//!
//! Requests for different sessions run concurrently. Each session sits behind
//! a fair async mutex, so its steps are handled strictly in arrival order.

pub mod http;
pub mod metrics;
pub mod stdio;
pub mod store;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tokio::sync::Mutex;

use crate::config::{ConfigError, SupervisorConfig};
use crate::context::{build_context_with_summary, summarize_step, summarize_step_with, RenderLimits};
use crate::decision::{
    fallback_decision, BackendHandle, DecisionBackend, DecisionEngine, DecisionRequest, FallbackMode,
    SupervisionAction, SupervisionDecision,
};
use crate::executor::{
    apply, post_length, run_verification, BackendVerifier, EventId, EventOutcome, SupervisionEvent, VerifierBackend,
};
use crate::filter::{classify, FilterConfig, FilterConfigError, TriggerDecision};
use crate::trace::{ActionStep, Session, SessionId, TokenUsage, TraceError};

use metrics::{MetricsReport, SessionMetrics};
use store::{LogRecord, SessionHeader, SessionLog};
use wire::{
    AgentSpec, ConfigOverrides, CreateSessionRequest, CreateSessionResponse, SessionBootstrap, SuperviseRequest,
    SuperviseResponse,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(SessionId),
    #[error("session `{0}` already exists")]
    SessionExists(SessionId),
    #[error("invalid session id `{0}`")]
    InvalidSessionId(SessionId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Filter(#[from] FilterConfigError),
    /// Only raised under the strict fallback mode.
    #[error("supervision failed: {0}")]
    Supervision(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl ServiceError {
    /// Whether the caller is at fault, as opposed to the service.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, ServiceError::Supervision(_) | ServiceError::Storage(_))
    }
}

#[derive(Debug)]
struct SessionState {
    session: Session,
    filter: FilterConfig,
    render: RenderLimits,
    supervise: bool,
    log: Option<SessionLog>,
    next_event: u64,
    open: bool,
}

impl SessionState {
    fn header(&self) -> SessionHeader {
        SessionHeader {
            session_id: self.session.session_id.clone(),
            global_task: self.session.global_task.clone(),
            agents: self.session.agents.clone(),
            supervise: self.supervise,
        }
    }

    /// Logging failures are reported but never fail the request.
    fn persist(&mut self, record: &LogRecord) {
        if let Some(log) = self.log.as_mut() {
            if let Err(e) = log.append(record) {
                tracing::error!(path = %log.path().display(), error = %e, "failed to append session record");
            }
        }
    }

    fn metrics(&self) -> SessionMetrics {
        SessionMetrics::from_session(&self.session, self.supervise)
    }
}

struct Intervention {
    decision: SupervisionDecision,
    usage: TokenUsage,
    findings: Option<String>,
    fallback: bool,
}

type SharedState = Arc<Mutex<SessionState>>;

pub struct Supervisor {
    config: SupervisorConfig,
    engine: DecisionEngine,
    backend: BackendHandle,
    verifier: Arc<dyn VerifierBackend>,
    sessions: RwLock<HashMap<SessionId, SharedState>>,
    closed: std::sync::Mutex<BTreeMap<SessionId, SessionMetrics>>,
    generated_ids: AtomicU64,
}

impl Supervisor {
    pub fn new(config: SupervisorConfig, backend: Arc<dyn DecisionBackend>) -> Self {
        let backend = BackendHandle::new(backend);
        let verifier = Arc::new(BackendVerifier::new(backend.clone()));
        Self {
            engine: DecisionEngine::new(config.policy.clone()),
            config,
            backend,
            verifier,
            sessions: RwLock::new(HashMap::new()),
            closed: std::sync::Mutex::new(BTreeMap::new()),
            generated_ids: AtomicU64::new(0),
        }
    }

    /// Builds the backend named by the configuration.
    pub fn from_config(config: SupervisorConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let backend = config.backend.build()?;
        Ok(Self::new(config, backend))
    }

    pub fn with_verifier(mut self, verifier: Arc<dyn VerifierBackend>) -> Self {
        self.verifier = verifier;
        self
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn backend(&self) -> &BackendHandle {
        &self.backend
    }

    fn lookup(&self, id: &SessionId) -> Option<SharedState> {
        self.sessions.read().expect("session map poisoned").get(id).cloned()
    }

    fn generate_id(&self) -> SessionId {
        let millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let n = self.generated_ids.fetch_add(1, Ordering::Relaxed);
        SessionId::new(format!("session-{millis:x}-{n}"))
    }

    fn open_session(
        &self,
        id: SessionId,
        global_task: String,
        agents: &[AgentSpec],
        supervise: Option<bool>,
        overrides: Option<&ConfigOverrides>,
    ) -> Result<SharedState, ServiceError> {
        if !id.is_valid() {
            return Err(ServiceError::InvalidSessionId(id));
        }
        if agents.is_empty() {
            return Err(ServiceError::InvalidRequest("a session needs at least one agent".into()));
        }
        let (filter, render) = self.effective_config(&self.config.filter, &self.config.render, overrides)?;
        let mut map = self.sessions.write().expect("session map poisoned");
        if map.contains_key(&id) || self.closed.lock().expect("closed map poisoned").contains_key(&id) {
            return Err(ServiceError::SessionExists(id));
        }
        let log = match &self.config.service.data_dir {
            Some(dir) => Some(SessionLog::create(dir, &id).map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => ServiceError::SessionExists(id.clone()),
                _ => ServiceError::Storage(e.to_string()),
            })?),
            None => None,
        };
        let mut session = Session::new(id.clone(), global_task);
        for a in agents {
            session.register_agent(a.name.clone(), a.local_task.clone());
        }
        let mut state = SessionState {
            session,
            filter,
            render,
            supervise: supervise.unwrap_or(self.config.service.supervise),
            log,
            next_event: 1,
            open: true,
        };
        let header = state.header();
        state.persist(&LogRecord::Session(header));
        let shared = Arc::new(Mutex::new(state));
        map.insert(id, shared.clone());
        Ok(shared)
    }

    fn effective_config(
        &self,
        filter: &FilterConfig,
        render: &RenderLimits,
        overrides: Option<&ConfigOverrides>,
    ) -> Result<(FilterConfig, RenderLimits), ServiceError> {
        let Some(o) = overrides else {
            return Ok((filter.clone(), *render));
        };
        let filter = o.filter.as_ref().map_or_else(|| filter.clone(), |p| p.apply(filter));
        filter.validate()?;
        let render = o.render.as_ref().map_or(*render, |p| p.apply(render));
        Ok((filter, render))
    }

    pub async fn create_session(&self, req: CreateSessionRequest) -> Result<CreateSessionResponse, ServiceError> {
        let id = req.session_id.unwrap_or_else(|| self.generate_id());
        self.open_session(id.clone(), req.global_task, &req.agents, req.supervise, req.overrides.as_ref())?;
        tracing::info!(session = %id, "session created");
        Ok(CreateSessionResponse { session_id: id })
    }

    /// Flushes and syncs the session log; metrics stay queryable afterwards.
    pub async fn close_session(&self, id: &SessionId) -> Result<SessionMetrics, ServiceError> {
        let state = self
            .sessions
            .write()
            .expect("session map poisoned")
            .remove(id)
            .ok_or_else(|| ServiceError::UnknownSession(id.clone()))?;
        let mut st = state.lock().await;
        st.open = false;
        let metrics = st.metrics();
        self.closed.lock().expect("closed map poisoned").insert(id.clone(), metrics.clone());
        if let Some(log) = st.log.take() {
            log.close().map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
        tracing::info!(session = %id, "session closed");
        Ok(metrics)
    }

    pub async fn close_all(&self) {
        let ids: Vec<SessionId> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        for id in ids {
            if let Err(e) = self.close_session(&id).await {
                tracing::warn!(session = %id, error = %e, "close failed");
            }
        }
    }

    /// One session's metrics, or every session's plus the aggregate.
    pub async fn get_metrics(&self, id: Option<&SessionId>) -> Result<MetricsReport, ServiceError> {
        if let Some(id) = id {
            if let Some(state) = self.lookup(id) {
                return Ok(MetricsReport::new(vec![state.lock().await.metrics()]));
            }
            let closed = self.closed.lock().expect("closed map poisoned").get(id).cloned();
            return closed.map(|m| MetricsReport::new(vec![m])).ok_or_else(|| ServiceError::UnknownSession(id.clone()));
        }
        let open: Vec<SharedState> = self.sessions.read().expect("session map poisoned").values().cloned().collect();
        let mut all: Vec<SessionMetrics> = self.closed.lock().expect("closed map poisoned").values().cloned().collect();
        for state in open {
            all.push(state.lock().await.metrics());
        }
        Ok(MetricsReport::new(all))
    }

    /// A copy of an open session as it currently stands.
    pub async fn session_snapshot(&self, id: &SessionId) -> Result<Session, ServiceError> {
        let state = self.lookup(id).ok_or_else(|| ServiceError::UnknownSession(id.clone()))?;
        let st = state.lock().await;
        Ok(st.session.clone())
    }

    fn resolve(&self, id: &SessionId, bootstrap: Option<&SessionBootstrap>) -> Result<SharedState, ServiceError> {
        if let Some(state) = self.lookup(id) {
            return Ok(state);
        }
        let Some(b) = bootstrap else {
            return Err(ServiceError::UnknownSession(id.clone()));
        };
        match self.open_session(id.clone(), b.global_task.clone(), &b.agents, b.supervise, None) {
            Err(ServiceError::SessionExists(_)) => {
                self.lookup(id).ok_or_else(|| ServiceError::UnknownSession(id.clone()))
            }
            other => other,
        }
    }

    pub async fn handle_supervise(&self, req: SuperviseRequest) -> Result<SuperviseResponse, ServiceError> {
        let state = self.resolve(&req.session_id, req.bootstrap.as_ref())?;
        let mut st = state.lock().await;
        if !st.open {
            return Err(ServiceError::UnknownSession(req.session_id));
        }
        if let Some(b) = &req.bootstrap {
            let missing: Vec<&AgentSpec> =
                b.agents.iter().filter(|a| !st.session.agents.contains_key(&a.name)).collect();
            if !missing.is_empty() {
                for a in missing {
                    st.session.register_agent(a.name.clone(), a.local_task.clone());
                }
                let header = st.header();
                st.persist(&LogRecord::Session(header));
            }
        }
        let (filter, render) = self.effective_config(&st.filter, &st.render, req.config_overrides.as_ref())?;
        let step = req.step.into_step(req.session_id.clone(), st.session.next_step_id());
        st.session.record_step(step.clone())?;
        st.persist(&LogRecord::Step(step.clone()));

        let trace = st.session.local_trace(&step.agent_name, filter.trace_window())?;
        let trigger = classify(&step, &trace, &filter);
        if !trigger.kind.fires() {
            return Ok(SuperviseResponse::pass(step.step_id));
        }

        let event_id = EventId(st.next_event);
        st.next_event += 1;
        if !st.supervise {
            let event = SupervisionEvent {
                event_id,
                step_id: step.step_id,
                trigger: trigger.kind,
                decision: SupervisionDecision::approve("supervision disabled for this session"),
                pre_length: step.observation_chars(),
                post_length: step.observation_chars(),
                supervisor_usage: TokenUsage::ZERO,
                outcome: EventOutcome::Skipped,
                verification_findings: None,
            };
            st.session.record_event(event.clone());
            st.persist(&LogRecord::Supervision(event));
            return Ok(SuperviseResponse {
                trigger: trigger.kind,
                event_id: Some(event_id),
                outcome: Some(EventOutcome::Skipped),
                ..SuperviseResponse::pass(step.step_id)
            });
        }

        let plan = self.intervene(&st.session, &step, &trigger, &filter, &render).await?;
        let modified = apply(&plan.decision, &step, plan.findings.as_deref());
        let changed = modified.observations != step.observations;
        if changed {
            st.session.replace_observations(step.step_id, modified.observations.clone());
        }
        let outcome = if plan.fallback { EventOutcome::FallbackApplied } else { EventOutcome::Applied };
        let event = SupervisionEvent {
            event_id,
            step_id: step.step_id,
            trigger: trigger.kind,
            decision: plan.decision.clone(),
            pre_length: step.observation_chars(),
            post_length: post_length(&plan.decision, &modified),
            supervisor_usage: plan.usage,
            outcome,
            verification_findings: plan.findings.clone(),
        };
        st.session.record_event(event.clone());
        st.persist(&LogRecord::Supervision(event));
        tracing::debug!(session = %req.session_id, step = %step.step_id, trigger = %trigger.kind,
            action = %plan.decision.action, "supervised");

        let guidance = match plan.decision.action {
            SupervisionAction::ProvideGuidance => plan.decision.payload().map(str::to_string),
            SupervisionAction::RunVerification => plan.findings,
            _ => None,
        };
        Ok(SuperviseResponse {
            step_id: step.step_id,
            trigger: trigger.kind,
            action: plan.decision.action,
            modified_observations: changed.then_some(modified.observations),
            guidance,
            event_id: Some(event_id),
            outcome: Some(outcome),
            supervisor_usage: plan.usage,
        })
    }

    /// Runs the pipeline under the configured deadline.
    async fn intervene(
        &self,
        session: &Session,
        step: &ActionStep,
        trigger: &TriggerDecision,
        filter: &FilterConfig,
        render: &RenderLimits,
    ) -> Result<Intervention, ServiceError> {
        let deadline = Duration::from_millis(self.engine.policy.deadline_ms);
        let failure = match tokio::time::timeout(deadline, self.pipeline(session, step, trigger, filter, render)).await
        {
            Ok(Ok(plan)) => return Ok(plan),
            Ok(Err(reason)) => reason,
            Err(_) => format!("deadline of {} ms exceeded", deadline.as_millis()),
        };
        match self.engine.policy.fallback {
            FallbackMode::Strict => Err(ServiceError::Supervision(failure)),
            FallbackMode::FailOpen => {
                tracing::warn!(step = %step.step_id, trigger = %trigger.kind, reason = %failure, "supervision fell back");
                Ok(Intervention {
                    decision: fallback_decision(trigger.kind, step, filter),
                    usage: TokenUsage::ZERO,
                    findings: None,
                    fallback: true,
                })
            }
        }
    }

    async fn pipeline(
        &self,
        session: &Session,
        step: &ActionStep,
        trigger: &TriggerDecision,
        filter: &FilterConfig,
        render: &RenderLimits,
    ) -> Result<Intervention, String> {
        let (summary, mut usage) = if self.engine.policy.llm_summaries {
            summarize_step_with(step, Some(&self.backend), render).await
        } else {
            (summarize_step(step, render), TokenUsage::ZERO)
        };
        let context =
            build_context_with_summary(step, session, trigger.kind, render, summary).map_err(|e| e.to_string())?;
        let request =
            DecisionRequest { trigger: trigger.kind, context: &context, step, signal: trigger.signal.as_ref(), filter };
        let outcome = self.engine.decide(request, &self.backend).await.map_err(|e| e.to_string())?;
        usage += outcome.usage;
        let mut fallback = outcome.fallback.is_some();
        let findings = if outcome.decision.action == SupervisionAction::RunVerification {
            let task = outcome.decision.payload().unwrap_or_default();
            let v = run_verification(task, self.verifier.as_ref()).await.map_err(|e| e.to_string())?;
            usage += v.usage;
            fallback |= v.failed;
            Some(v.findings)
        } else {
            None
        };
        Ok(Intervention { decision: outcome.decision, usage, findings, fallback })
    }
}
