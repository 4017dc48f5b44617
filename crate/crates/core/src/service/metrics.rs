//! Token and intervention accounting per session and across sessions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decision::SupervisionAction;
use crate::executor::EventOutcome;
use crate::filter::TriggerKind;
use crate::trace::{Session, SessionId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: SessionId,
    pub supervised: bool,
    pub steps: usize,
    /// Tokens spent by the supervised agents.
    pub step_tokens: u64,
    pub supervisor_tokens: u64,
    pub total_tokens: u64,
    /// Every trigger that fired, whether or not supervision acted on it.
    pub triggers: BTreeMap<TriggerKind, usize>,
    /// Triggers that produced an applied or fallback decision.
    pub interventions: BTreeMap<TriggerKind, usize>,
    pub actions: BTreeMap<SupervisionAction, usize>,
    pub fallbacks: usize,
    pub observation_chars_saved: u64,
}

impl SessionMetrics {
    pub fn from_session(session: &Session, supervised: bool) -> Self {
        let mut triggers = BTreeMap::new();
        let mut interventions = BTreeMap::new();
        let mut actions = BTreeMap::new();
        let mut fallbacks = 0;
        let mut saved = 0u64;
        for event in session.events() {
            *triggers.entry(event.trigger).or_insert(0) += 1;
            saved += event.chars_saved() as u64;
            match event.outcome {
                EventOutcome::Skipped => continue,
                EventOutcome::FallbackApplied => fallbacks += 1,
                EventOutcome::Applied => {}
            }
            *interventions.entry(event.trigger).or_insert(0) += 1;
            *actions.entry(event.decision.action).or_insert(0) += 1;
        }
        Self {
            session_id: session.session_id.clone(),
            supervised,
            steps: session.step_count(),
            step_tokens: session.step_tokens().total,
            supervisor_tokens: session.supervisor_tokens().total,
            total_tokens: session.total_tokens(),
            triggers,
            interventions,
            actions,
            fallbacks,
            observation_chars_saved: saved,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub sessions: usize,
    pub steps: usize,
    pub step_tokens: u64,
    pub supervisor_tokens: u64,
    pub total_tokens: u64,
    pub interventions: BTreeMap<TriggerKind, usize>,
    pub observation_chars_saved: u64,
    pub mean_total_tokens: f64,
    /// Population variance of per-session total tokens.
    pub total_token_variance: f64,
}

impl AggregateMetrics {
    pub fn over<'a>(sessions: impl IntoIterator<Item = &'a SessionMetrics>) -> Self {
        let mut agg = AggregateMetrics::default();
        let mut totals = Vec::new();
        for m in sessions {
            agg.sessions += 1;
            agg.steps += m.steps;
            agg.step_tokens += m.step_tokens;
            agg.supervisor_tokens += m.supervisor_tokens;
            agg.total_tokens += m.total_tokens;
            agg.observation_chars_saved += m.observation_chars_saved;
            for (k, n) in &m.interventions {
                *agg.interventions.entry(*k).or_insert(0) += n;
            }
            totals.push(m.total_tokens as f64);
        }
        agg.mean_total_tokens = mean(&totals);
        agg.total_token_variance = population_variance(&totals);
        agg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: Vec<SessionMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricsReport {
    /// Sessions are ordered by id so reports compare structurally.
    pub fn new(mut sessions: Vec<SessionMetrics>) -> Self {
        sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let aggregate = AggregateMetrics::over(&sessions);
        Self { sessions, aggregate }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Zero for fewer than two values.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ActionStep, TokenUsage};

    fn session_with_total(id: &str, total: u64) -> SessionMetrics {
        let mut s = Session::new(id, "g").with_agent("a", "t");
        s.record_step(ActionStep::new(id, 1, "a").with_usage(TokenUsage::new(total, 0))).unwrap();
        SessionMetrics::from_session(&s, true)
    }

    #[test]
    fn variance_of_two_sessions() {
        let report = MetricsReport::new(vec![session_with_total("a", 100), session_with_total("b", 300)]);
        assert_eq!(report.aggregate.total_token_variance, 10_000.0);
        assert_eq!(report.aggregate.mean_total_tokens, 200.0);
        assert_eq!(report.aggregate.total_tokens, 400);
    }

    #[test]
    fn single_session_has_zero_variance() {
        assert_eq!(MetricsReport::new(vec![session_with_total("a", 100)]).aggregate.total_token_variance, 0.0);
        assert_eq!(population_variance(&[]), 0.0);
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let xs = [3.0, 7.0, 7.0, 19.0];
        let n = xs.len() as f64;
        let sum_sq: f64 = xs.iter().map(|x| x * x).sum();
        let sum: f64 = xs.iter().sum();
        let oracle = sum_sq / n - (sum / n).powi(2);
        assert!((population_variance(&xs) - oracle).abs() < 1e-9);
    }
}
