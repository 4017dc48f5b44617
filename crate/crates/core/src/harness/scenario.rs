//! Scripted failure-mode scenarios.
//!
//! A scenario is the step stream an agent system would produce without
//! supervision. Steps marked `skip_when_guided` are the wasted work that
//! follows an uncorrected mistake; the supervised run drops them once the
//! agent has received guidance.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::decision::DecisionPolicyPatch;
use crate::filter::{FilterConfigPatch, TriggerKind};
use crate::service::wire::AgentSpec;
use crate::trace::{InteractionKind, ToolCall};

pub const HARD_LOOP_FIXTURE: &str = include_str!("../../fixtures/hard_loop.jsonl");
pub const ERROR_CASCADE_FIXTURE: &str = include_str!("../../fixtures/error_cascade.jsonl");
pub const SUB_AGENT_REPORT_FIXTURE: &str = include_str!("../../fixtures/sub_agent_report.jsonl");
pub const VERBOSE_HTML_FIXTURE: &str = include_str!("../../fixtures/verbose_html.jsonl");

/// Length of the delegated agent's report in the sub-agent-report scenario.
pub const CASE_STUDY_REPORT_CHARS: usize = 47_902;
/// Length of the oversized page in the verbose-html scenario.
pub const VERBOSE_PAGE_CHARS: usize = 12_000;

pub const BUILTIN_NAMES: [&str; 4] = ["hard-loop", "verbose-html", "error-cascade", "sub-agent-report"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTemplate {
    pub agent: String,
    #[serde(default)]
    pub kind: InteractionKind,
    #[serde(default)]
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolCall>,
    #[serde(default)]
    pub observations: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub skip_when_guided: bool,
}

impl StepTemplate {
    pub fn new(agent: &str, thought: &str, tool: &str, arguments: &str, observations: impl Into<String>) -> Self {
        Self {
            agent: agent.to_string(),
            kind: InteractionKind::AgentTool,
            thought: thought.to_string(),
            tool: Some(ToolCall::new(tool, arguments)),
            observations: observations.into(),
            error: None,
            skip_when_guided: false,
        }
    }

    pub fn failing(mut self, error: &str) -> Self {
        self.error = Some(error.to_string());
        self
    }

    pub fn wasted(mut self) -> Self {
        self.skip_when_guided = true;
        self
    }

    pub fn delegation(mut self) -> Self {
        self.kind = InteractionKind::AgentAgent;
        self
    }
}

/// Where a scenario's scripted backend replies come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureSource {
    Inline(String),
    File(PathBuf),
}

impl FixtureSource {
    pub fn load(&self) -> std::io::Result<String> {
        match self {
            FixtureSource::Inline(text) => Ok(text.clone()),
            FixtureSource::File(path) => std::fs::read_to_string(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub global_task: String,
    pub agents: Vec<AgentSpec>,
    pub script: Vec<StepTemplate>,
    /// Triggers the supervised run must produce, in order, from its first step.
    pub expected_triggers: Vec<TriggerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_fixture: Option<FixtureSource>,
    #[serde(default)]
    pub filter: FilterConfigPatch,
    #[serde(default)]
    pub policy: DecisionPolicyPatch,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), String> {
        if self.script.is_empty() {
            return Err(format!("scenario `{}` has an empty script", self.name));
        }
        if self.expected_triggers.len() > self.script.len() {
            return Err(format!(
                "scenario `{}` expects {} triggers for {} steps",
                self.name,
                self.expected_triggers.len(),
                self.script.len()
            ));
        }
        if let Some(step) = self.script.iter().find(|s| !self.agents.iter().any(|a| a.name == s.agent)) {
            return Err(format!("scenario `{}` uses unregistered agent `{}`", self.name, step.agent));
        }
        Ok(())
    }

    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "hard-loop" => Some(hard_loop()),
            "verbose-html" => Some(verbose_html()),
            "error-cascade" => Some(error_cascade()),
            "sub-agent-report" => Some(sub_agent_report()),
            _ => None,
        }
    }

    pub fn builtins() -> Vec<Scenario> {
        BUILTIN_NAMES.iter().filter_map(|n| Scenario::builtin(n)).collect()
    }
}

const BLOG_TASK: &str =
    "Which meat is mentioned in the ambassador story that the dog-harness brand published on 8 December 2022?";

fn blog_listing(page: usize) -> String {
    let mut out = format!("Address: https://example-outdoor.test/blogs/journal/tagged/ambassadors?page={page}\n");
    let _ = writeln!(out, "Viewport position: Showing page {page} of 82.");
    let _ = writeln!(out, "=======================");
    for i in 0..14 {
        let n = page * 14 + i;
        let _ = writeln!(
            out,
            "* [Trail notes #{n}: {} with the pack](https://example-outdoor.test/blogs/journal/trail-notes-{n}) \
             posted {} {}, 2019 by ambassador team",
            [
                "Ridge walking",
                "Desert miles",
                "River crossings",
                "Alpine starts",
                "Coastal fog",
                "Forest loops",
                "Night hikes"
            ][n % 7],
            ["March", "April", "May", "June", "July", "August"][n % 6],
            1 + n % 27,
        );
    }
    out
}

pub fn hard_loop() -> Scenario {
    let agent = "web_surfer";
    let stuck = blog_listing(10);
    let page_down = |obs: String| {
        StepTemplate::new(
            agent,
            "The December 2022 posts must be further down the list; keep scrolling.",
            "page_down",
            "{}",
            obs,
        )
    };
    let mut script = vec![page_down(stuck.clone()), page_down(stuck.clone()), page_down(stuck).wasted()];
    for page in 11..15 {
        script.push(page_down(blog_listing(page)).wasted());
    }
    script.push(StepTemplate::new(
        agent,
        "Search the site directly for the story by its date.",
        "web_search",
        r#"{"query": "ambassador story 8 December 2022 snow camping dog harness"}"#,
        "1. Snow Camping With Two Dogs (journal, 2022-12-08)\n   A winter overnight with an ambassador and her husky.\n\
         2. Gift guide for trail dogs (journal, 2022-11-30)\n",
    ));
    script.push(StepTemplate::new(
        agent,
        "The story from 8 December 2022 mentions bacon cooked in camp.",
        "final_answer",
        r#"{"answer": "bacon"}"#,
        "bacon",
    ));
    Scenario {
        name: "hard-loop".into(),
        global_task: BLOG_TASK.into(),
        agents: vec![AgentSpec::new(
            agent,
            "Find the ambassador story dated 8 December 2022 and name the meat it mentions.",
        )],
        script,
        expected_triggers: vec![
            TriggerKind::NoTrigger,
            TriggerKind::InefficientBehavior,
            TriggerKind::NoTrigger,
            TriggerKind::NoTrigger,
        ],
        backend_fixture: Some(FixtureSource::Inline(HARD_LOOP_FIXTURE.to_string())),
        filter: FilterConfigPatch::default(),
        policy: DecisionPolicyPatch::default(),
    }
}

/// An attribute-heavy product listing page of exactly `chars` characters.
pub fn verbose_page(chars: usize) -> String {
    let head = "<!DOCTYPE html>\n<html lang=\"en\" class=\"no-js theme-light\" data-build=\"20221208\">\n<head>\n\
<meta charset=\"utf-8\">\n<title>Harnesses | Outfitters</title>\n\
<style>.grid{display:flex;flex-wrap:wrap}.card{padding:4px;border:1px solid #ddd}.price{font-weight:700}</style>\n\
<script>window.dataLayer=window.dataLayer||[];function gtag(){dataLayer.push(arguments)}gtag('js',new Date());</script>\n\
</head>\n<body class=\"template-collection\" data-page-type=\"collection\">\n\
<!-- header navigation rendered by theme -->\n\
<nav class=\"site-nav\" role=\"navigation\" aria-label=\"Main\"><a class=\"site-nav__link\" href=\"/\" data-track=\"nav-home\">Home</a> \
<a class=\"site-nav__link\" href=\"/collections/harnesses\" data-track=\"nav-harnesses\">Harnesses</a></nav>\n\
<table class=\"grid product-table\" id=\"catalog\" style=\"width:100%;border-collapse:collapse\">\n";
    let tail_open = "</table>\n<p class=\"footnote\" style=\"font-size:11px;color:#999\">";
    let tail_close = "</p>\n</body>\n</html>\n";
    let mut body = String::new();
    let mut i = 0;
    loop {
        let row = format!(
            "<tr class=\"product-row\" data-product-id=\"{id}\" data-variant=\"{v}\" style=\"background:#{bg}\">\
<td class=\"product-name cell\" style=\"padding:5px;\"><a class=\"product-link\" href=\"/products/harness-{id}\" \
title=\"Harness {id}\" data-track=\"card-{id}\">Trail harness {id}</a></td>\
<td class=\"price cell\" style=\"padding:5px;text-align:right\" data-currency=\"USD\">${p}.95</td></tr>\n",
            id = 100 + i,
            v = i % 5,
            bg = ["fff", "fafafa"][i % 2],
            p = 39 + (i * 7) % 60,
        );
        if head.len() + body.len() + row.len() + tail_open.len() + tail_close.len() > chars {
            break;
        }
        body.push_str(&row);
        i += 1;
    }
    let mut page = format!("{head}{body}{tail_open}");
    let filler = "Prices shown include seasonal discounts and may change without notice. ";
    let room = chars - page.len() - tail_close.len();
    page.extend(filler.chars().cycle().take(room));
    page.push_str(tail_close);
    page
}

pub fn verbose_html() -> Scenario {
    let agent = "web_surfer";
    Scenario {
        name: "verbose-html".into(),
        global_task: "What is the cheapest trail harness in the outfitter's catalog?".into(),
        agents: vec![AgentSpec::new(agent, "Open the harness catalog and report the lowest listed price.")],
        script: vec![
            StepTemplate::new(
                agent,
                "Open the catalog page.",
                "visit_page",
                r#"{"url": "https://outfitters.test/collections/harnesses"}"#,
                verbose_page(VERBOSE_PAGE_CHARS),
            ),
            StepTemplate::new(
                agent,
                "Scan the price column for the minimum.",
                "python_interpreter",
                r#"{"code": "min(prices)"}"#,
                "39.95",
            ),
            StepTemplate::new(
                agent,
                "Report the cheapest harness and its price.",
                "final_answer",
                r#"{"answer": "Trail harness 100 at $39.95"}"#,
                "Trail harness 100 at $39.95",
            ),
        ],
        expected_triggers: vec![TriggerKind::ExcessiveLength, TriggerKind::NoTrigger, TriggerKind::NoTrigger],
        backend_fixture: Some(FixtureSource::Inline(VERBOSE_HTML_FIXTURE.to_string())),
        filter: FilterConfigPatch::default(),
        policy: DecisionPolicyPatch { deterministic_purification: Some(true), ..Default::default() },
    }
}

fn data_listing() -> String {
    let mut out = String::from("data/\n");
    for year in 2019..2024 {
        for q in 1..5 {
            let _ = writeln!(
                out,
                "  archive/orders_{year}_q{q}.parquet      {:>7} KB  modified {year}-{:02}-28",
                812 + year * q % 97,
                q * 3
            );
        }
    }
    for name in ["customers.csv", "regions.json", "returns_2023.csv", "sales_2023_q1-q4.csv", "schema.md", "README.txt"]
    {
        let _ = writeln!(out, "  {name:<36} {:>7} KB  modified 2024-01-05", 40 + name.len() * 13);
    }
    out
}

pub fn error_cascade() -> Scenario {
    let agent = "analyst";
    let missing = "FileNotFoundError: [Errno 2] No such file or directory: 'data/sales-2023.csv'";
    Scenario {
        name: "error-cascade".into(),
        global_task: "Report the total 2023 revenue from the quarterly sales export.".into(),
        agents: vec![AgentSpec::new(agent, "Load the 2023 sales export and sum its revenue column.")],
        script: vec![
            StepTemplate::new(agent, "See which data files exist.", "list_files", r#"{"path": "data"}"#, data_listing()),
            StepTemplate::new(agent, "Load the 2023 sales file.", "read_csv", r#"{"path": "data/sales-2023.csv"}"#, "")
                .failing(missing),
            StepTemplate::new(agent, "Maybe a transient failure; retry.", "read_csv", r#"{"path": "data/sales-2023.csv"}"#, "")
                .failing(missing)
                .wasted(),
            StepTemplate::new(
                agent,
                "Try opening it directly with Python.",
                "python_interpreter",
                r#"{"code": "open('data/sales-2023.csv').read()"}"#,
                "",
            )
            .failing(missing)
            .wasted(),
            StepTemplate::new(
                agent,
                "Perhaps it lives under exports/.",
                "read_csv",
                r#"{"path": "data/exports/sales-2023.csv"}"#,
                "",
            )
            .failing("FileNotFoundError: [Errno 2] No such file or directory: 'data/exports/sales-2023.csv'")
            .wasted(),
            StepTemplate::new(
                agent,
                "Load the export listed in the directory.",
                "read_csv",
                r#"{"path": "data/sales_2023_q1-q4.csv"}"#,
                "quarter,region,revenue\nQ1,north,1210000\nQ2,north,1185000\nQ3,north,1302000\nQ4,north,1123000\n(4 rows)",
            ),
            StepTemplate::new(
                agent,
                "Sum the revenue column.",
                "final_answer",
                r#"{"answer": "4,820,000"}"#,
                "4,820,000",
            ),
        ],
        expected_triggers: vec![
            TriggerKind::NoTrigger,
            TriggerKind::ErrorOccurrence,
            TriggerKind::NoTrigger,
            TriggerKind::NoTrigger,
        ],
        backend_fixture: Some(FixtureSource::Inline(ERROR_CASCADE_FIXTURE.to_string())),
        filter: FilterConfigPatch::default(),
        policy: DecisionPolicyPatch::default(),
    }
}

/// A delegated search agent's final report of exactly
/// [`CASE_STUDY_REPORT_CHARS`] characters, wrapped in the report marker.
pub fn case_study_report() -> String {
    let prefix = "Here is the final answer from your managed agent 'search_agent':\n<summary_of_work>\n\
### 1. Task outcome (short version):\n\
The ambassador story dated 8 December 2022 is a winter camping account, and the one meat it names is bacon.\n\n\
### 2. Task outcome (extremely detailed version):\n";
    let suffix = "\n\n### 3. Additional context (if relevant):\n\
Other treats appear in the story, but bacon is the only meat named.\n</summary_of_work>";
    let mut log = String::new();
    let mut n = 0;
    while log.len() < CASE_STUDY_REPORT_CHARS {
        let _ = write!(
            log,
            "Step {n}: visited journal page {page} (https://example-outdoor.test/blogs/journal?page={page}); \
             scanned {k} entries for posts dated December 2022; {found}.\n\
             Extracted text: \"{title}\" posted {month} {day}, {year}. Search for meat terms (bacon, beef, chicken, \
             jerky, salmon) returned {hits}.\n",
            page = 1 + n % 82,
            k = 12 + n % 5,
            found = if n % 9 == 0 { "one candidate found, rejected on date" } else { "no match" },
            title = ["Snowy ridge overnight", "Spring thaw miles", "River day", "Desert dawn"][n % 4],
            month = ["January", "March", "June", "October"][n % 4],
            day = 1 + n % 28,
            year = 2018 + n % 5,
            hits = if n % 11 == 0 { "a mention of jerky in a comment thread" } else { "nothing" },
        );
        n += 1;
    }
    let body_len = CASE_STUDY_REPORT_CHARS - prefix.len() - suffix.len();
    format!("{prefix}{}{suffix}", &log[..body_len])
}

pub fn sub_agent_report() -> Scenario {
    let manager = "manager";
    let searcher = "search_agent";
    Scenario {
        name: "sub-agent-report".into(),
        global_task: BLOG_TASK.into(),
        agents: vec![
            AgentSpec::new(manager, "Coordinate the search and give the final answer."),
            AgentSpec::new(searcher, "Find the 8 December 2022 ambassador story and report every meat it mentions."),
        ],
        script: vec![
            StepTemplate::new(
                searcher,
                "Search for the brand's ambassador stories.",
                "web_search",
                r#"{"query": "dog harness brand ambassador stories"}"#,
                "1. Journal: ambassador stories (https://example-outdoor.test/blogs/journal/tagged/ambassadors)\n",
            ),
            StepTemplate::new(
                searcher,
                "Open the story dated 8 December 2022.",
                "visit_page",
                r#"{"url": "https://example-outdoor.test/blogs/journal/snow-camping"}"#,
                "Snow Camping With Two Dogs. Published 2022-12-08. ...ready to devour the New Year's Day bacon cooking in camp...",
            ),
            StepTemplate::new(
                manager,
                "Delegate the story lookup to the search agent.",
                "search_agent",
                r#"{"task": "Find the 8 December 2022 ambassador story and report any meat it mentions."}"#,
                case_study_report(),
            )
            .delegation(),
            StepTemplate::new(
                manager,
                "The report names bacon; double-check it is the only meat.",
                "python_interpreter",
                r#"{"code": "print('bacon')"}"#,
                "bacon",
            ),
            StepTemplate::new(manager, "Answer.", "final_answer", r#"{"answer": "bacon"}"#, "bacon"),
        ],
        expected_triggers: vec![
            TriggerKind::NoTrigger,
            TriggerKind::NoTrigger,
            TriggerKind::SubAgentReport,
            TriggerKind::NoTrigger,
            TriggerKind::NoTrigger,
        ],
        backend_fixture: Some(FixtureSource::Inline(SUB_AGENT_REPORT_FIXTURE.to_string())),
        filter: FilterConfigPatch::default(),
        policy: DecisionPolicyPatch::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::DEFAULT_REPORT_MARKER;

    #[test]
    fn builtins_are_valid() {
        for s in Scenario::builtins() {
            s.validate().unwrap();
        }
        assert_eq!(Scenario::builtins().len(), 4);
        assert!(Scenario::builtin("nope").is_none());
    }

    #[test]
    fn report_has_exact_length_and_marker() {
        let r = case_study_report();
        assert_eq!(r.chars().count(), CASE_STUDY_REPORT_CHARS);
        assert!(r.contains(DEFAULT_REPORT_MARKER));
    }

    #[test]
    fn verbose_page_is_exact_and_html() {
        let p = verbose_page(VERBOSE_PAGE_CHARS);
        assert_eq!(p.chars().count(), VERBOSE_PAGE_CHARS);
        assert_eq!(crate::purify::detect_kind(&p, DEFAULT_REPORT_MARKER), crate::purify::ContentKind::Html);
    }

    #[test]
    fn listings_stay_below_threshold() {
        assert!(blog_listing(14).chars().count() < 3000);
        assert!(data_listing().chars().count() < 3000);
    }

    #[test]
    fn validation_rejects_bad_scenarios() {
        let mut s = hard_loop();
        s.expected_triggers = vec![TriggerKind::NoTrigger; 20];
        assert!(s.validate().is_err());
        s.script.clear();
        assert!(s.validate().is_err());
    }
}
