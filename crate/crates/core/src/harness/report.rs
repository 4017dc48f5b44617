//! Savings tables across recorded sessions.
//!
//! Sessions named `<stem>-baseline` and `<stem>-supervised` are paired and
//! compared; all sessions are also grouped by whether supervision was on, with
//! mean and population variance of their total tokens.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::simulate::percent_delta;
use crate::filter::TriggerKind;
use crate::service::metrics::{mean, population_variance, SessionMetrics};
use crate::service::store::{list_logs, read_log, rebuild_session};

pub const NO_DATA: &str = "no data";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub mode: &'static str,
    pub sessions: usize,
    pub mean_total_tokens: f64,
    pub total_token_variance: f64,
    pub interventions: BTreeMap<TriggerKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub name: String,
    pub baseline_steps: usize,
    pub supervised_steps: usize,
    pub baseline_tokens: u64,
    pub supervised_tokens: u64,
    pub delta_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SavingsTable {
    pub sessions: Vec<SessionMetrics>,
    pub groups: Vec<GroupRow>,
    pub pairs: Vec<PairRow>,
    /// Problems met while loading logs.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

fn mode(supervised: bool) -> &'static str {
    if supervised {
        "supervised"
    } else {
        "baseline"
    }
}

fn mix(m: &BTreeMap<TriggerKind, usize>) -> String {
    if m.is_empty() {
        return "-".to_string();
    }
    m.iter().map(|(k, n)| format!("{k}={n}")).collect::<Vec<_>>().join(";")
}

impl SavingsTable {
    pub fn new(mut sessions: Vec<SessionMetrics>) -> Self {
        sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let mut groups = Vec::new();
        for supervised in [false, true] {
            let members: Vec<&SessionMetrics> = sessions.iter().filter(|s| s.supervised == supervised).collect();
            if members.is_empty() {
                continue;
            }
            let totals: Vec<f64> = members.iter().map(|s| s.total_tokens as f64).collect();
            let mut interventions = BTreeMap::new();
            for s in &members {
                for (k, n) in &s.interventions {
                    *interventions.entry(*k).or_insert(0) += n;
                }
            }
            groups.push(GroupRow {
                mode: mode(supervised),
                sessions: members.len(),
                mean_total_tokens: mean(&totals),
                total_token_variance: population_variance(&totals),
                interventions,
            });
        }

        let by_id: BTreeMap<&str, &SessionMetrics> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
        let pairs = by_id
            .iter()
            .filter_map(|(id, base)| {
                let stem = id.strip_suffix("-baseline")?;
                let sup = by_id.get(format!("{stem}-supervised").as_str())?;
                Some(PairRow {
                    name: stem.to_string(),
                    baseline_steps: base.steps,
                    supervised_steps: sup.steps,
                    baseline_tokens: base.total_tokens,
                    supervised_tokens: sup.total_tokens,
                    delta_pct: percent_delta(base.total_tokens as f64, sup.total_tokens as f64),
                })
            })
            .collect();
        Self { sessions, groups, pairs, warnings: Vec::new() }
    }

    /// Rebuilds every `*.jsonl` session log under `data_dir`.
    pub fn load(data_dir: &Path) -> std::io::Result<Self> {
        let mut metrics = Vec::new();
        let mut warnings = Vec::new();
        let paths = if data_dir.exists() { list_logs(data_dir)? } else { Vec::new() };
        for path in paths {
            let name = path.display().to_string();
            let contents = match read_log(&path) {
                Ok(c) => c,
                Err(e) => {
                    warnings.push(format!("{name}: {e}"));
                    continue;
                }
            };
            match rebuild_session(&contents) {
                Ok(r) => {
                    warnings.extend(r.warnings.iter().map(|w| format!("{name}: {w}")));
                    metrics.push(SessionMetrics::from_session(&r.session, r.supervise));
                }
                Err(e) => warnings.push(format!("{name}: {e}")),
            }
        }
        let mut table = Self::new(metrics);
        table.warnings = warnings;
        Ok(table)
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        if self.is_empty() {
            out.push_str(NO_DATA);
            out.push('\n');
            return out;
        }
        let _ = writeln!(
            out,
            "{:<32} {:<10} {:>6} {:>12} {:>12} {:>12}  interventions",
            "session", "mode", "steps", "total_tok", "superv_tok", "chars_saved"
        );
        for s in &self.sessions {
            let _ = writeln!(
                out,
                "{:<32} {:<10} {:>6} {:>12} {:>12} {:>12}  {}",
                s.session_id.as_str(),
                mode(s.supervised),
                s.steps,
                s.total_tokens,
                s.supervisor_tokens,
                s.observation_chars_saved,
                mix(&s.interventions)
            );
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>14} {:>16}  interventions",
            "mode", "sessions", "mean_total_tok", "variance"
        );
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>14.1} {:>16.1}  {}",
                g.mode,
                g.sessions,
                g.mean_total_tokens,
                g.total_token_variance,
                mix(&g.interventions)
            );
        }
        if !self.pairs.is_empty() {
            out.push('\n');
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>12} {:>12} {:>9}",
                "pair", "base_steps", "sup_steps", "base_tok", "sup_tok", "delta"
            );
            for p in &self.pairs {
                let _ = writeln!(
                    out,
                    "{:<24} {:>10} {:>10} {:>12} {:>12} {:>+8.2}%",
                    p.name, p.baseline_steps, p.supervised_steps, p.baseline_tokens, p.supervised_tokens, p.delta_pct
                );
            }
        }
        out
    }

    /// Three CSV blocks (sessions, groups, pairs) separated by blank lines.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        if self.is_empty() {
            return Ok(String::new());
        }
        let mut blocks = Vec::new();

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "session",
            "mode",
            "steps",
            "step_tokens",
            "supervisor_tokens",
            "total_tokens",
            "observation_chars_saved",
            "interventions",
        ])?;
        for s in &self.sessions {
            w.write_record([
                s.session_id.to_string(),
                mode(s.supervised).to_string(),
                s.steps.to_string(),
                s.step_tokens.to_string(),
                s.supervisor_tokens.to_string(),
                s.total_tokens.to_string(),
                s.observation_chars_saved.to_string(),
                mix(&s.interventions),
            ])?;
        }
        blocks.push(w);

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "sessions", "mean_total_tokens", "total_token_variance", "interventions"])?;
        for g in &self.groups {
            w.write_record([
                g.mode.to_string(),
                g.sessions.to_string(),
                g.mean_total_tokens.to_string(),
                g.total_token_variance.to_string(),
                mix(&g.interventions),
            ])?;
        }
        blocks.push(w);

        if !self.pairs.is_empty() {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "pair",
                "baseline_steps",
                "supervised_steps",
                "baseline_tokens",
                "supervised_tokens",
                "delta_pct",
            ])?;
            for p in &self.pairs {
                w.write_record([
                    p.name.clone(),
                    p.baseline_steps.to_string(),
                    p.supervised_steps.to_string(),
                    p.baseline_tokens.to_string(),
                    p.supervised_tokens.to_string(),
                    format!("{:.4}", p.delta_pct),
                ])?;
            }
            blocks.push(w);
        }

        let mut out = Vec::new();
        for (i, w) in blocks.into_iter().enumerate() {
            if i > 0 {
                out.push(String::new());
            }
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            out.push(String::from_utf8_lossy(&bytes).trim_end().to_string());
        }
        Ok(out.join("\n") + "\n")
    }
}
